#pragma once

// Per-head activation sets, concept-restricted dictionaries, head scoring and
// ranking, and matched random controls.

#include "headpursuit/matrix.hpp"
#include "headpursuit/sparse_recovery.hpp"

#include <compare>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace headpursuit {

struct HeadId {
  std::size_t layer = 0;
  std::size_t head = 0;

  friend auto operator<=>(const HeadId&, const HeadId&) = default;
};

std::string to_string(const HeadId& id);  // "L3H7"
// Accepts "3:7" and "L3H7".
HeadId parse_head_id(std::string_view text);
std::vector<HeadId> parse_head_list(std::string_view comma_separated);

enum class Aggregation { MeanAllTokens, MeanImageTokens, LastToken };

std::string_view to_string(Aggregation mode) noexcept;
Aggregation parse_aggregation(std::string_view text);

/// Mean of the masked rows (mean modes) or the last masked row (LastToken).
Vector aggregate_tokens(const Matrix& per_token, const std::vector<bool>& mask, Aggregation mode);

/// One n x d matrix per head over a complete (layer x head) grid.
class HeadActivationSet {
 public:
  HeadActivationSet(std::map<HeadId, SignalMatrix> entries, Aggregation aggregation);

  const std::map<HeadId, SignalMatrix>& entries() const noexcept { return entries_; }
  const SignalMatrix& at(const HeadId& id) const;
  std::size_t n_layers() const noexcept { return n_layers_; }
  std::size_t n_heads() const noexcept { return n_heads_; }
  Eigen::Index n_samples() const noexcept { return n_samples_; }
  Eigen::Index d_model() const noexcept { return d_model_; }
  Aggregation aggregation() const noexcept { return aggregation_; }

 private:
  std::map<HeadId, SignalMatrix> entries_;
  std::size_t n_layers_ = 0;
  std::size_t n_heads_ = 0;
  Eigen::Index n_samples_ = 0;
  Eigen::Index d_model_ = 0;
  Aggregation aggregation_;
};

using Vocab = std::map<std::string, std::size_t>;

/// token string -> first index carrying it.
Vocab vocab_from_labels(const std::vector<std::string>& labels);

/// Parses a keyword list: one keyword per line, '#' starts a comment, blank lines skipped.
std::vector<std::string> parse_keywords(std::string_view text);
std::vector<std::string> load_keywords(const std::string& path);

struct ConceptDictionary {
  Dictionary base;
  std::vector<std::size_t> kept_rows;           // ascending, distinct
  std::vector<std::string> keywords;            // sorted, distinct
  std::vector<std::string> unmatched_keywords;  // sorted

  Dictionary restricted() const { return base.subset(kept_rows); }
};

/// Keeps the rows whose token is a single-token form of some keyword. Forms tried per
/// keyword, first as written and then lowercased: the bare word and its leading-space
/// variants (" w", "Ġw", "▁w"). Multi-word keywords never match.
ConceptDictionary restrict_dictionary(const Dictionary& dict, const std::vector<std::string>& keywords,
                                      const Vocab& vocab);

inline constexpr std::size_t kDefaultSompIterations = 50;

struct SompScore {
  double score = 0.0;
  std::size_t n_iters = 0;  // after clamping to the concept size
  bool clamped = false;
  SupportSet support;       // indices into the restricted dictionary
};

/// Final explained variance of SOMP over the concept dictionary. Throws ZeroSignal.
SompScore score_head_somp(const SignalMatrix& head, const ConceptDictionary& concept_dict,
                          std::size_t n_iters = kDefaultSompIterations);

/// Mean over samples and concept atoms of <D[j], h_i>.
double score_head_logit_lens(const SignalMatrix& head, const ConceptDictionary& concept_dict);

enum class ScoringMethod { SompVariance, LogitLensMean };

std::string_view to_string(ScoringMethod method) noexcept;
ScoringMethod parse_scoring_method(std::string_view text);

struct HeadRanking {
  std::map<HeadId, double> scores;       // scoreable heads only
  std::vector<HeadId> ordered;           // descending score, ties by (layer, head)
  std::vector<HeadId> unscoreable;       // zero-signal heads, ranked after `ordered`
  std::map<HeadId, SupportSet> supports; // SompVariance only, restricted-dictionary indices
  ScoringMethod method = ScoringMethod::SompVariance;
  std::size_t n_iters = 0;
  bool clamped = false;
};

/// Scores heads concurrently; ordering is identical to serial::rank_heads.
HeadRanking rank_heads(const HeadActivationSet& acts, const ConceptDictionary& concept_dict,
                       ScoringMethod method, std::size_t n_iters = kDefaultSompIterations);

namespace serial {
HeadRanking rank_heads(const HeadActivationSet& acts, const ConceptDictionary& concept_dict,
                       ScoringMethod method, std::size_t n_iters = kDefaultSompIterations);
}  // namespace serial

/// First k scoreable heads. Throws KTooLarge when k exceeds them.
std::vector<HeadId> top_k(const HeadRanking& ranking, std::size_t k);

struct ModelShape {
  std::size_t layers = 0;
  std::size_t heads_per_layer = 0;
};

/// Heads with the same per-layer counts as `selected`, disjoint from it, drawn uniformly
/// per layer. Output sorted by (layer, head).
std::vector<HeadId> sample_random_control(const std::vector<HeadId>& selected, ModelShape shape,
                                          std::uint64_t seed);

double jaccard(const std::vector<HeadId>& a, const std::vector<HeadId>& b);

}  // namespace headpursuit
