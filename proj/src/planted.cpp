#include "headpursuit/planted.hpp"

#include "headpursuit/error.hpp"

#include <algorithm>
#include <limits>
#include <random>
#include <set>

namespace headpursuit {

namespace {

std::size_t bounded(std::mt19937_64& rng, std::size_t n) {
  const std::uint64_t limit =
      std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % n;
  std::uint64_t x = rng();
  while (x >= limit) x = rng();
  return static_cast<std::size_t>(x % n);
}

double median(std::vector<double> values) {
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

constexpr std::uint64_t kProbeSalt = 0x9e3779b97f4a7c15ULL;

}  // namespace

std::vector<TokenSequence> probe_prompts(const ModelConfig& config, std::size_t count) {
  std::mt19937_64 rng(config.seed ^ kProbeSalt);
  const std::size_t max_len = std::min<std::size_t>(16, config.max_seq_len);
  std::vector<TokenSequence> out;
  for (std::size_t i = 0; i < count; ++i) {
    TokenSequence p{kBosToken};
    const std::size_t extra = max_len > 5 ? 4 + bounded(rng, max_len - 4) : max_len - 1;
    for (std::size_t t = 0; t < extra; ++t) p.push_back(1 + bounded(rng, config.vocab_size - 1));
    out.push_back(std::move(p));
  }
  return out;
}

std::map<HeadId, double> head_energies(const ModelBundle& model, const std::vector<TokenSequence>& prompts) {
  const HeadActivationSet acts = capture_head_outputs(model, prompts);
  std::map<HeadId, double> out;
  for (const auto& [id, m] : acts.entries()) out.emplace(id, m.data().norm());
  return out;
}

ModelBundle plant_head(ModelBundle model, const std::vector<Token>& concept_tokens, const HeadId& planted,
                       double strength) {
  const auto& cfg = model.config;
  if (!(strength >= 0.0) || !std::isfinite(strength)) {
    throw Error(ErrorKind::InvalidConfig, "planting strength must be finite and non-negative");
  }
  if (planted.layer >= cfg.n_layers || planted.head >= cfg.n_heads) {
    throw Error(ErrorKind::InvalidConfig, "planted head " + to_string(planted) + " outside the model grid");
  }
  if (concept_tokens.empty()) throw Error(ErrorKind::InvalidConfig, "no concept tokens");
  if (std::set<Token>(concept_tokens.begin(), concept_tokens.end()).size() != concept_tokens.size()) {
    throw Error(ErrorKind::InvalidConfig, "concept tokens must be distinct");
  }
  for (Token t : concept_tokens) {
    if (t >= cfg.vocab_size) throw Error(ErrorKind::InvalidConfig, "concept token " + std::to_string(t) + " out of range");
  }
  if (strength == 0.0) return model;

  const auto probes = probe_prompts(cfg);
  std::vector<double> energies;
  for (const auto& [id, e] : head_energies(model, probes)) energies.push_back(e);
  const double target = strength * median(energies);

  const auto d = static_cast<Eigen::Index>(cfg.d_model);
  Eigen::MatrixXd concept_rows(d, static_cast<Eigen::Index>(concept_tokens.size()));
  Vector direction = Vector::Zero(d);
  for (std::size_t c = 0; c < concept_tokens.size(); ++c) {
    concept_rows.col(static_cast<Eigen::Index>(c)) = model.unembed.row(static_cast<Eigen::Index>(concept_tokens[c])).transpose();
    direction += concept_rows.col(static_cast<Eigen::Index>(c));
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(concept_rows, Eigen::ComputeThinU);
  svd.setThreshold(1e-10);
  const Eigen::MatrixXd basis = svd.matrixU().leftCols(svd.rank());
  if (direction.norm() < 1e-12) direction = basis.col(0);
  direction.normalize();

  // The value column is a Fisher direction for the normalized residuals entering the
  // layer: mean projection positive, spread small, so the head's output keeps one sign
  // at every position. Everything is taken outside the concept span so planted writes
  // never feed back into the value.
  LayerWeights& lw = model.layers[planted.layer];
  auto outside_concept = [&](Vector x) {
    x -= basis * (basis.transpose() * x);
    return x;
  };
  Vector mean = Vector::Zero(d);
  Eigen::MatrixXd moment = Eigen::MatrixXd::Zero(d, d);
  std::size_t rows = 0;
  for (const auto& p : probes) {
    const Matrix x = residual_trace(model, p)[planted.layer];
    for (Eigen::Index t = 0; t < x.rows(); ++t) {
      const Vector r = outside_concept(rms_norm(x.row(t).transpose(), lw.attn_norm));
      mean += r;
      moment += r * r.transpose();
      ++rows;
    }
  }
  mean /= static_cast<double>(rows);
  const Eigen::MatrixXd covariance = moment / static_cast<double>(rows) - mean * mean.transpose();
  const double ridge = 1e-3 * std::max(covariance.trace() / static_cast<double>(d), 1e-12);
  Vector anchor = outside_concept((covariance + ridge * Eigen::MatrixXd::Identity(d, d)).ldlt().solve(mean));
  if (anchor.norm() < 1e-12) throw Error(ErrorKind::InvalidConfig, "no value direction outside the concept span");
  anchor.normalize();

  const auto dh = static_cast<Eigen::Index>(cfg.d_head());
  const auto c0 = static_cast<Eigen::Index>(planted.head) * dh;
  lw.wv.middleCols(c0, dh).setZero();
  lw.wv.col(c0) = anchor;
  lw.wo.middleRows(c0, dh).setZero();
  lw.wo.row(c0) = direction.transpose();

  const double planted_energy = head_energies(model, probes).at(planted);
  if (!(planted_energy > 0.0)) throw Error(ErrorKind::InvalidConfig, "planted head produced no output");
  lw.wo.row(c0) *= target / planted_energy;
  return model;
}

ModelBundle build_planted_model(const ModelConfig& config, const std::vector<Token>& concept_tokens,
                                const HeadId& planted, double strength, std::vector<std::string> vocab) {
  return plant_head(init_model(config, std::move(vocab)), concept_tokens, planted, strength);
}

ModelBundle build_planted_model(const ModelConfig& config, const std::vector<Token>& concept_tokens,
                                const std::vector<HeadId>& planted, double strength,
                                std::vector<std::string> vocab) {
  ModelBundle model = init_model(config, std::move(vocab));
  for (const auto& id : planted) model = plant_head(std::move(model), concept_tokens, id, strength);
  return model;
}

std::vector<std::string> fixture_concept_words() {
  return {"red", "blue", "green", "yellow", "purple", "orange", "pink", "brown"};
}

std::vector<std::string> fixture_vocab() {
  std::vector<std::string> vocab{"<bos>"};
  for (auto& w : fixture_concept_words()) vocab.push_back(w);
  for (const char* w : {"the",   "a",     "dog",   "cat",   "house", "tree",  "car",   "bird",
                        "runs",  "sees",  "eats",  "big",   "small", "old",   "new",   "on",
                        "in",    "with",  "and",   "man",   "woman", "child", "river", "road",
                        "sky",   "ball",  "hat",   "door",  "window", "table", "chair", "book",
                        "sun",   "moon",  "walks", "jumps", "sleeps", "happy", "quiet"}) {
    vocab.emplace_back(w);
  }
  return vocab;
}

Fixture build_fixture(const FixtureOptions& options) {
  std::vector<std::string> vocab = fixture_vocab();
  ModelConfig cfg;
  cfg.n_layers = options.n_layers;
  cfg.n_heads = options.n_heads;
  cfg.d_model = options.d_model;
  cfg.vocab_size = vocab.size();
  cfg.max_seq_len = options.max_seq_len;
  cfg.seed = options.seed;

  Fixture f{init_model(cfg, vocab), fixture_concept_words(), {}, options.planted};
  for (const auto& w : f.concept_words) f.concept_tokens.push_back(f.model.token_id(w));
  f.model = build_planted_model(cfg, f.concept_tokens, options.planted, options.strength, std::move(vocab));
  return f;
}

std::vector<TokenSequence> fixture_prompts(const ModelBundle& model, std::size_t count, std::uint64_t seed) {
  const std::size_t first_filler = 1 + fixture_concept_words().size();
  if (model.config.vocab_size <= first_filler) throw Error(ErrorKind::InvalidConfig, "model has no filler vocabulary");
  const std::size_t n_filler = model.config.vocab_size - first_filler;
  std::mt19937_64 rng(seed);
  std::vector<TokenSequence> out;
  for (std::size_t i = 0; i < count; ++i) {
    TokenSequence p{kBosToken};
    const std::size_t words = 3 + bounded(rng, 4);
    for (std::size_t w = 0; w < words; ++w) p.push_back(first_filler + bounded(rng, n_filler));
    out.push_back(std::move(p));
  }
  return out;
}

}  // namespace headpursuit
