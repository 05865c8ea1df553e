#pragma once

// Desk-scale decoder-only transformer with exact per-head residual-stream
// capture and per-head rescaling.
//
// Block layout (pre-norm, parallel attention and MLP, no biases):
//
//     x' = x + sum_h alpha_h * W_h(RMSNorm_a(x)) + MLP(RMSNorm_m(x))
//
// where W_h is head h's write to the residual stream: its attention output
// times its row slice of the output projection. Both sub-blocks read the same
// input, so a head's rescaled write reaches the final residual of its own
// layer unchanged.

#include "headpursuit/head_analysis.hpp"
#include "headpursuit/matrix.hpp"

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace headpursuit {

using Token = std::size_t;
using TokenSequence = std::vector<Token>;

inline constexpr Token kBosToken = 0;
inline constexpr double kInitScale = 0.02;
inline constexpr double kNormEpsilon = 1e-5;
inline constexpr double kEnhanceAlpha = 5.0;
inline constexpr double kInhibitAlpha = -1.0;

struct ModelConfig {
  std::size_t n_layers = 4;
  std::size_t n_heads = 8;
  std::size_t d_model = 64;
  std::size_t vocab_size = 64;
  std::size_t max_seq_len = 32;
  std::uint64_t seed = 0;

  std::size_t d_head() const noexcept { return n_heads ? d_model / n_heads : 0; }
  std::size_t d_mlp() const noexcept { return 4 * d_model; }
  void validate() const;  // throws InvalidConfig
};

struct LayerWeights {
  Vector attn_norm;  // d
  Matrix wq, wk, wv; // d x d; columns [h*dh, (h+1)*dh) belong to head h
  Matrix wo;         // d x d; rows [h*dh, (h+1)*dh) belong to head h
  Vector mlp_norm;   // d
  Matrix w_in;       // d x d_mlp
  Matrix w_out;      // d_mlp x d
};

struct ModelBundle {
  ModelConfig config;
  Matrix tok_embed;  // vocab x d
  Matrix pos_embed;  // max_seq_len x d
  std::vector<LayerWeights> layers;
  Vector final_norm;                // d
  Matrix unembed;                   // vocab x d
  std::vector<std::string> vocab;   // index -> token string

  Dictionary dictionary() const { return Dictionary(unembed, vocab); }
  std::size_t token_id(const std::string& token) const;  // throws UnknownToken
  TokenSequence tokenize(const std::string& text) const; // whitespace-delimited
  std::string detokenize(const TokenSequence& tokens) const;
  void validate() const;
};

/// Seeded N(0, 0.02^2) weights, unit norm gains. Default vocab is "<bos>", "tok1", ...
ModelBundle init_model(const ModelConfig& config, std::vector<std::string> vocab = {});

/// Per-head scale factors; heads not listed keep alpha = 1.
class InterventionSpec {
 public:
  InterventionSpec() = default;
  static InterventionSpec uniform(const std::vector<HeadId>& heads, double alpha);

  void set(const HeadId& id, double alpha);
  double scale(const HeadId& id) const;
  const std::map<HeadId, double>& scales() const noexcept { return scales_; }
  bool empty() const noexcept { return scales_.empty(); }

 private:
  std::map<HeadId, double> scales_;  // alpha == 1 never stored
};

struct CaptureRequest {
  Aggregation mode = Aggregation::MeanAllTokens;
  // MeanImageTokens averages over positions holding one of these tokens.
  std::set<Token> image_tokens;
};

struct ForwardResult {
  Matrix logits;          // T x vocab
  Matrix final_residual;  // T x d, before the final norm
  // Per-token unscaled head writes (T x d), filled when capture was requested.
  std::map<HeadId, Matrix> head_writes;
  std::optional<HeadActivationSet> capture;  // one aggregated row per head
};

ForwardResult forward(const ModelBundle& model, const TokenSequence& tokens,
                      const InterventionSpec& intervention = {},
                      const std::optional<CaptureRequest>& capture = std::nullopt);

/// Residual stream entering each layer (index n_layers is the pre-final-norm residual).
std::vector<Matrix> residual_trace(const ModelBundle& model, const TokenSequence& tokens,
                                   const InterventionSpec& intervention = {});

/// Greedy continuation; argmax with lowest-index tie-break.
TokenSequence generate_greedy(const ModelBundle& model, const TokenSequence& prompt, std::size_t max_new,
                              const InterventionSpec& intervention = {});

/// Continuations only (prompt stripped), one per prompt, evaluated concurrently.
std::vector<TokenSequence> generate_batch(const ModelBundle& model, const std::vector<TokenSequence>& prompts,
                                          std::size_t max_new, const InterventionSpec& intervention = {});

/// n = prompts.size() rows per head, row i aggregated over prompt i's tokens.
HeadActivationSet capture_head_outputs(const ModelBundle& model, const std::vector<TokenSequence>& prompts,
                                       const CaptureRequest& request = {});

namespace serial {
std::vector<TokenSequence> generate_batch(const ModelBundle& model, const std::vector<TokenSequence>& prompts,
                                          std::size_t max_new, const InterventionSpec& intervention = {});
HeadActivationSet capture_head_outputs(const ModelBundle& model, const std::vector<TokenSequence>& prompts,
                                       const CaptureRequest& request = {});
}  // namespace serial

Vector rms_norm(const Vector& x, const Vector& gain);

}  // namespace headpursuit
