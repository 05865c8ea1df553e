#include "headpursuit/head_analysis.hpp"

#include "headpursuit/error.hpp"
#include "headpursuit/kernels.hpp"

#include <algorithm>
#include <cctype>
#include <exception>
#include <fstream>
#include <limits>
#include <random>
#include <set>
#include <sstream>

namespace headpursuit {

std::string to_string(const HeadId& id) {
  return "L" + std::to_string(id.layer) + "H" + std::to_string(id.head);
}

namespace {

std::size_t parse_index(std::string_view text, std::string_view whole) {
  if (text.empty() || !std::all_of(text.begin(), text.end(), [](unsigned char c) { return std::isdigit(c); })) {
    throw Error(ErrorKind::InvalidArgument, "bad head id '" + std::string(whole) + "'");
  }
  return static_cast<std::size_t>(std::stoull(std::string(text)));
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

std::string lowercase(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

}  // namespace

HeadId parse_head_id(std::string_view text) {
  const std::string_view t = trim(text);
  if (const auto colon = t.find(':'); colon != std::string_view::npos) {
    return {parse_index(t.substr(0, colon), t), parse_index(t.substr(colon + 1), t)};
  }
  if (t.size() >= 4 && (t[0] == 'L' || t[0] == 'l')) {
    const auto h = t.find_first_of("Hh");
    if (h != std::string_view::npos) return {parse_index(t.substr(1, h - 1), t), parse_index(t.substr(h + 1), t)};
  }
  throw Error(ErrorKind::InvalidArgument, "bad head id '" + std::string(t) + "'");
}

std::vector<HeadId> parse_head_list(std::string_view comma_separated) {
  std::vector<HeadId> out;
  std::size_t start = 0;
  while (start <= comma_separated.size()) {
    const auto end = std::min(comma_separated.find(',', start), comma_separated.size());
    const auto item = trim(comma_separated.substr(start, end - start));
    if (!item.empty()) out.push_back(parse_head_id(item));
    start = end + 1;
  }
  return out;
}

std::string_view to_string(Aggregation mode) noexcept {
  switch (mode) {
    case Aggregation::MeanAllTokens: return "mean_all_tokens";
    case Aggregation::MeanImageTokens: return "mean_image_tokens";
    case Aggregation::LastToken: return "last_token";
  }
  return "mean_all_tokens";
}

Aggregation parse_aggregation(std::string_view text) {
  if (text == "mean_all_tokens" || text == "mean") return Aggregation::MeanAllTokens;
  if (text == "mean_image_tokens" || text == "image") return Aggregation::MeanImageTokens;
  if (text == "last_token" || text == "last") return Aggregation::LastToken;
  throw Error(ErrorKind::InvalidArgument, "unknown aggregation '" + std::string(text) + "'");
}

Vector aggregate_tokens(const Matrix& per_token, const std::vector<bool>& mask, Aggregation mode) {
  if (mask.size() != static_cast<std::size_t>(per_token.rows())) {
    throw Error(ErrorKind::DimensionMismatch, "mask length differs from token count");
  }
  Vector acc = Vector::Zero(per_token.cols());
  std::size_t count = 0;
  Eigen::Index last = -1;
  for (Eigen::Index t = 0; t < per_token.rows(); ++t) {
    if (!mask[static_cast<std::size_t>(t)]) continue;
    acc += per_token.row(t).transpose();
    ++count;
    last = t;
  }
  if (count == 0) throw Error(ErrorKind::EmptyMask, "no token selected by the aggregation mask");
  if (mode == Aggregation::LastToken) return per_token.row(last).transpose();
  return acc / static_cast<double>(count);
}

HeadActivationSet::HeadActivationSet(std::map<HeadId, SignalMatrix> entries, Aggregation aggregation)
    : entries_(std::move(entries)), aggregation_(aggregation) {
  if (entries_.empty()) throw Error(ErrorKind::EmptyInput, "activation set has no heads");
  const auto& first = entries_.begin()->second;
  n_samples_ = first.rows();
  d_model_ = first.cols();
  for (const auto& [id, m] : entries_) {
    n_layers_ = std::max(n_layers_, id.layer + 1);
    n_heads_ = std::max(n_heads_, id.head + 1);
    if (m.rows() != n_samples_ || m.cols() != d_model_) {
      throw Error(ErrorKind::DimensionMismatch, "head " + to_string(id) + " has shape " +
                                                    std::to_string(m.rows()) + "x" + std::to_string(m.cols()));
    }
  }
  if (entries_.size() != n_layers_ * n_heads_) {
    throw Error(ErrorKind::MalformedFile, "activation grid is incomplete: " + std::to_string(entries_.size()) +
                                              " heads for a " + std::to_string(n_layers_) + "x" +
                                              std::to_string(n_heads_) + " grid");
  }
}

const SignalMatrix& HeadActivationSet::at(const HeadId& id) const {
  const auto it = entries_.find(id);
  if (it == entries_.end()) throw Error(ErrorKind::InvalidArgument, "no activations for " + to_string(id));
  return it->second;
}

Vocab vocab_from_labels(const std::vector<std::string>& labels) {
  Vocab vocab;
  for (std::size_t i = 0; i < labels.size(); ++i) vocab.emplace(labels[i], i);
  return vocab;
}

std::vector<std::string> parse_keywords(std::string_view text) {
  std::vector<std::string> out;
  std::istringstream in{std::string(text)};
  std::string line;
  while (std::getline(in, line)) {
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const auto kw = trim(line);
    if (!kw.empty()) out.emplace_back(kw);
  }
  return out;
}

std::vector<std::string> load_keywords(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::IoError, "cannot open keyword file " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_keywords(ss.str());
}

ConceptDictionary restrict_dictionary(const Dictionary& dict, const std::vector<std::string>& keywords,
                                      const Vocab& vocab) {
  if (vocab.empty()) throw Error(ErrorKind::InvalidArgument, "vocabulary is empty");

  const std::set<std::string> unique(keywords.begin(), keywords.end());
  std::set<std::size_t> kept;
  std::vector<std::string> unmatched;

  for (const std::string& kw : unique) {
    const auto core = trim(kw);
    const bool multi_word = std::any_of(core.begin(), core.end(), [](unsigned char c) { return std::isspace(c); });
    bool matched = false;
    if (!core.empty() && !multi_word) {
      std::vector<std::string> bases{kw};
      if (const auto lower = lowercase(kw); lower != kw) bases.push_back(lower);
      for (const auto& base : bases) {
        for (const std::string& form : {base, " " + base, "\xC4\xA0" + base, "\xE2\x96\x81" + base}) {
          if (const auto it = vocab.find(form); it != vocab.end()) {
            if (it->second >= static_cast<std::size_t>(dict.size())) {
              throw Error(ErrorKind::DimensionMismatch, "vocab index exceeds dictionary size");
            }
            kept.insert(it->second);
            matched = true;
          }
        }
      }
    }
    if (!matched) unmatched.push_back(kw);
  }
  if (kept.empty()) throw Error(ErrorKind::NoKeywordMatched, "none of " + std::to_string(unique.size()) +
                                                                 " keywords is a single vocabulary token");

  return ConceptDictionary{dict, {kept.begin(), kept.end()}, {unique.begin(), unique.end()}, std::move(unmatched)};
}

SompScore score_head_somp(const SignalMatrix& head, const ConceptDictionary& concept_dict, std::size_t n_iters) {
  const Dictionary restricted = concept_dict.restricted();
  SompScore out;
  out.n_iters = std::min<std::size_t>(n_iters, static_cast<std::size_t>(restricted.size()));
  out.clamped = out.n_iters < n_iters;
  if (out.n_iters == 0) throw Error(ErrorKind::InvalidArgument, "n_iters must be positive");

  SompResult r = somp(head, restricted, out.n_iters);
  out.score = explained_variance(head.data(), r.reconstruction);
  out.support = std::move(r.support);
  return out;
}

double score_head_logit_lens(const SignalMatrix& head, const ConceptDictionary& concept_dict) {
  if (concept_dict.kept_rows.empty()) throw Error(ErrorKind::InvalidArgument, "empty concept dictionary");
  if (head.cols() != concept_dict.base.dim()) throw Error(ErrorKind::DimensionMismatch, "head width != dictionary width");
  const auto d = static_cast<std::size_t>(head.cols());
  double total = 0.0;
  for (std::size_t j : concept_dict.kept_rows) {
    const double* atom = concept_dict.base.atoms().row(static_cast<Eigen::Index>(j)).data();
    for (Eigen::Index i = 0; i < head.rows(); ++i) total += kernels::dot(atom, head.data().row(i).data(), d);
  }
  return total / static_cast<double>(head.rows() * static_cast<Eigen::Index>(concept_dict.kept_rows.size()));
}

std::string_view to_string(ScoringMethod method) noexcept {
  return method == ScoringMethod::SompVariance ? "somp_variance" : "logit_lens_mean";
}

ScoringMethod parse_scoring_method(std::string_view text) {
  if (text == "somp_variance" || text == "somp") return ScoringMethod::SompVariance;
  if (text == "logit_lens_mean" || text == "logit_lens" || text == "ll") return ScoringMethod::LogitLensMean;
  throw Error(ErrorKind::InvalidArgument, "unknown scoring method '" + std::string(text) + "'");
}

namespace {

struct HeadOutcome {
  std::optional<double> score;
  SupportSet support;
  bool clamped = false;
  std::exception_ptr error;
};

HeadOutcome score_one(const SignalMatrix& m, const ConceptDictionary& concept_dict, ScoringMethod method,
                      std::size_t n_iters) {
  HeadOutcome out;
  try {
    if (method == ScoringMethod::SompVariance) {
      SompScore s = score_head_somp(m, concept_dict, n_iters);
      out.score = s.score;
      out.support = std::move(s.support);
      out.clamped = s.clamped;
    } else {
      out.score = score_head_logit_lens(m, concept_dict);
    }
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::ZeroSignal) out.error = std::current_exception();
  } catch (...) {
    out.error = std::current_exception();
  }
  return out;
}

HeadRanking assemble(const std::vector<HeadId>& ids, std::vector<HeadOutcome>& outcomes, ScoringMethod method,
                     std::size_t n_iters, const ConceptDictionary& concept_dict) {
  HeadRanking r;
  r.method = method;
  r.n_iters = method == ScoringMethod::SompVariance ? std::min(n_iters, concept_dict.kept_rows.size()) : 0;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    auto& o = outcomes[i];
    if (o.error) std::rethrow_exception(o.error);
    if (!o.score) {
      r.unscoreable.push_back(ids[i]);
      continue;
    }
    r.scores.emplace(ids[i], *o.score);
    r.ordered.push_back(ids[i]);
    r.clamped = r.clamped || o.clamped;
    if (method == ScoringMethod::SompVariance) r.supports.emplace(ids[i], std::move(o.support));
  }
  // ids arrive in (layer, head) order, so a stable sort settles ties by id.
  std::stable_sort(r.ordered.begin(), r.ordered.end(),
                   [&](const HeadId& a, const HeadId& b) { return r.scores.at(a) > r.scores.at(b); });
  return r;
}

std::vector<HeadId> head_ids(const HeadActivationSet& acts) {
  std::vector<HeadId> ids;
  ids.reserve(acts.entries().size());
  for (const auto& [id, m] : acts.entries()) ids.push_back(id);
  return ids;
}

}  // namespace

HeadRanking rank_heads(const HeadActivationSet& acts, const ConceptDictionary& concept_dict, ScoringMethod method,
                       std::size_t n_iters) {
  const std::vector<HeadId> ids = head_ids(acts);
  std::vector<HeadOutcome> outcomes(ids.size());
  const auto count = static_cast<std::ptrdiff_t>(ids.size());
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t i = 0; i < count; ++i) {
    const auto k = static_cast<std::size_t>(i);
    outcomes[k] = score_one(acts.at(ids[k]), concept_dict, method, n_iters);
  }
  return assemble(ids, outcomes, method, n_iters, concept_dict);
}

namespace serial {

HeadRanking rank_heads(const HeadActivationSet& acts, const ConceptDictionary& concept_dict, ScoringMethod method,
                       std::size_t n_iters) {
  const std::vector<HeadId> ids = head_ids(acts);
  std::vector<HeadOutcome> outcomes;
  outcomes.reserve(ids.size());
  for (const auto& id : ids) outcomes.push_back(score_one(acts.at(id), concept_dict, method, n_iters));
  return assemble(ids, outcomes, method, n_iters, concept_dict);
}

}  // namespace serial

std::vector<HeadId> top_k(const HeadRanking& ranking, std::size_t k) {
  if (k == 0) throw Error(ErrorKind::InvalidArgument, "k must be positive");
  if (k > ranking.ordered.size()) {
    throw Error(ErrorKind::KTooLarge, "k = " + std::to_string(k) + " exceeds the " +
                                          std::to_string(ranking.ordered.size()) + " scoreable heads");
  }
  return {ranking.ordered.begin(), ranking.ordered.begin() + static_cast<std::ptrdiff_t>(k)};
}

namespace {

// Unbiased draw in [0, n) from raw 64-bit outputs; std::uniform_int_distribution is
// not reproducible across standard libraries.
std::size_t bounded(std::mt19937_64& rng, std::size_t n) {
  const std::uint64_t range = n;
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % range;
  std::uint64_t x = rng();
  while (x >= limit) x = rng();
  return static_cast<std::size_t>(x % range);
}

}  // namespace

std::vector<HeadId> sample_random_control(const std::vector<HeadId>& selected, ModelShape shape,
                                          std::uint64_t seed) {
  std::vector<std::set<std::size_t>> chosen(shape.layers);
  for (const HeadId& id : selected) {
    if (id.layer >= shape.layers || id.head >= shape.heads_per_layer) {
      throw Error(ErrorKind::InvalidArgument, "selected head " + to_string(id) + " outside the model grid");
    }
    chosen[id.layer].insert(id.head);
  }

  std::mt19937_64 rng(seed);
  std::vector<HeadId> out;
  for (std::size_t layer = 0; layer < shape.layers; ++layer) {
    const std::size_t need = chosen[layer].size();
    if (need == 0) continue;
    std::vector<std::size_t> pool;
    for (std::size_t h = 0; h < shape.heads_per_layer; ++h) {
      if (!chosen[layer].count(h)) pool.push_back(h);
    }
    if (need > pool.size()) {
      throw Error(ErrorKind::InsufficientPool, "layer " + std::to_string(layer) + " has " +
                                                   std::to_string(need) + " selected heads but only " +
                                                   std::to_string(pool.size()) + " others");
    }
    // partial Fisher-Yates
    for (std::size_t i = 0; i < need; ++i) {
      std::swap(pool[i], pool[i + bounded(rng, pool.size() - i)]);
      out.push_back({layer, pool[i]});
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

double jaccard(const std::vector<HeadId>& a, const std::vector<HeadId>& b) {
  const std::set<HeadId> sa(a.begin(), a.end()), sb(b.begin(), b.end());
  if (sa.empty() && sb.empty()) return 1.0;
  std::size_t common = 0;
  for (const auto& id : sa) common += sb.count(id);
  return static_cast<double>(common) / static_cast<double>(sa.size() + sb.size() - common);
}

}  // namespace headpursuit
