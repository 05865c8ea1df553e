#include "headpursuit/toy_transformer.hpp"

#include "headpursuit/error.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <numbers>
#include <random>
#include <sstream>

namespace headpursuit {

void ModelConfig::validate() const {
  if (n_layers == 0 || n_heads == 0 || d_model == 0 || max_seq_len == 0) {
    throw Error(ErrorKind::InvalidConfig, "layer, head, width and sequence sizes must be positive");
  }
  if (d_model % n_heads != 0) {
    throw Error(ErrorKind::InvalidConfig, "d_model " + std::to_string(d_model) + " is not divisible by " +
                                              std::to_string(n_heads) + " heads");
  }
  if (vocab_size < 2) throw Error(ErrorKind::InvalidConfig, "vocab_size must be at least 2");
}

std::size_t ModelBundle::token_id(const std::string& token) const {
  const auto it = std::find(vocab.begin(), vocab.end(), token);
  if (it == vocab.end()) throw Error(ErrorKind::UnknownToken, "'" + token + "' is not in the vocabulary");
  return static_cast<std::size_t>(it - vocab.begin());
}

TokenSequence ModelBundle::tokenize(const std::string& text) const {
  std::istringstream in(text);
  TokenSequence out;
  std::string word;
  while (in >> word) out.push_back(token_id(word));
  return out;
}

std::string ModelBundle::detokenize(const TokenSequence& tokens) const {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (tokens[i] >= vocab.size()) throw Error(ErrorKind::TokenOutOfRange, "token " + std::to_string(tokens[i]));
    if (i) out += ' ';
    out += vocab[tokens[i]];
  }
  return out;
}

void ModelBundle::validate() const {
  config.validate();
  const auto d = static_cast<Eigen::Index>(config.d_model);
  const auto v = static_cast<Eigen::Index>(config.vocab_size);
  const auto f = static_cast<Eigen::Index>(config.d_mlp());
  auto expect = [](const Matrix& m, Eigen::Index r, Eigen::Index c, const char* name) {
    if (m.rows() != r || m.cols() != c) {
      throw Error(ErrorKind::InvalidConfig, std::string(name) + " has shape " + std::to_string(m.rows()) + "x" +
                                                std::to_string(m.cols()) + ", expected " + std::to_string(r) +
                                                "x" + std::to_string(c));
    }
    if (!m.allFinite()) throw Error(ErrorKind::InvalidConfig, std::string(name) + " has non-finite entries");
  };
  auto expect_vec = [d](const Vector& g, const char* name) {
    if (g.size() != d || !g.allFinite()) throw Error(ErrorKind::InvalidConfig, std::string(name) + " is malformed");
  };
  expect(tok_embed, v, d, "tok_embed");
  expect(pos_embed, static_cast<Eigen::Index>(config.max_seq_len), d, "pos_embed");
  expect(unembed, v, d, "unembed");
  expect_vec(final_norm, "final_norm");
  if (layers.size() != config.n_layers) throw Error(ErrorKind::InvalidConfig, "layer count mismatch");
  for (const auto& l : layers) {
    expect(l.wq, d, d, "wq");
    expect(l.wk, d, d, "wk");
    expect(l.wv, d, d, "wv");
    expect(l.wo, d, d, "wo");
    expect(l.w_in, d, f, "w_in");
    expect(l.w_out, f, d, "w_out");
    expect_vec(l.attn_norm, "attn_norm");
    expect_vec(l.mlp_norm, "mlp_norm");
  }
  if (vocab.size() != config.vocab_size) throw Error(ErrorKind::InvalidConfig, "vocab length != vocab_size");
}

namespace {

// Box-Muller over raw mt19937_64 output: std::normal_distribution is not
// reproducible across standard library implementations.
class GaussianSource {
 public:
  explicit GaussianSource(std::uint64_t seed) : rng_(seed) {}

  double next() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = (static_cast<double>(rng_() >> 11) + 1.0) * 0x1.0p-53;  // (0, 1]
    const double u2 = static_cast<double>(rng_() >> 11) * 0x1.0p-53;          // [0, 1)
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  Matrix matrix(std::size_t rows, std::size_t cols, double scale) {
    Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    for (Eigen::Index i = 0; i < m.rows(); ++i)
      for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = scale * next();
    return m;
  }

 private:
  std::mt19937_64 rng_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

double gelu(double x) {
  constexpr double k = 0.7978845608028654;  // sqrt(2 / pi)
  return 0.5 * x * (1.0 + std::tanh(k * (x + 0.044715 * x * x * x)));
}

Matrix rms_norm_rows(const Matrix& x, const Vector& gain) {
  Matrix out(x.rows(), x.cols());
  for (Eigen::Index t = 0; t < x.rows(); ++t) {
    const double rms = std::sqrt(x.row(t).squaredNorm() / static_cast<double>(x.cols()) + kNormEpsilon);
    out.row(t) = (x.row(t) / rms).cwiseProduct(gain.transpose());
  }
  return out;
}

// Causal softmax attention for one head; returns the T x d write.
Matrix head_write(const Matrix& q, const Matrix& k, const Matrix& v, const Matrix& wo, std::size_t head,
                  std::size_t dh) {
  const auto T = q.rows();
  const auto c0 = static_cast<Eigen::Index>(head * dh);
  const auto w = static_cast<Eigen::Index>(dh);
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  Matrix z = Matrix::Zero(T, w);
  std::vector<double> probs(static_cast<std::size_t>(T));
  for (Eigen::Index t = 0; t < T; ++t) {
    double peak = -std::numeric_limits<double>::infinity();
    for (Eigen::Index s = 0; s <= t; ++s) {
      probs[s] = scale * q.row(t).segment(c0, w).dot(k.row(s).segment(c0, w));
      peak = std::max(peak, probs[s]);
    }
    double total = 0.0;
    for (Eigen::Index s = 0; s <= t; ++s) total += (probs[s] = std::exp(probs[s] - peak));
    for (Eigen::Index s = 0; s <= t; ++s) z.row(t) += (probs[s] / total) * v.row(s).segment(c0, w);
  }
  return z * wo.middleRows(c0, w);
}

void check_tokens(const ModelBundle& model, const TokenSequence& tokens) {
  if (tokens.empty()) throw Error(ErrorKind::InvalidArgument, "token sequence is empty");
  if (tokens.size() > model.config.max_seq_len) {
    throw Error(ErrorKind::SequenceTooLong, std::to_string(tokens.size()) + " tokens exceed max_seq_len " +
                                                std::to_string(model.config.max_seq_len));
  }
  for (Token t : tokens) {
    if (t >= model.config.vocab_size) {
      throw Error(ErrorKind::TokenOutOfRange, "token " + std::to_string(t) + " >= vocab_size " +
                                                  std::to_string(model.config.vocab_size));
    }
  }
}

struct RunOutput {
  Matrix final_residual;
  std::vector<Matrix> trace;
  std::map<HeadId, Matrix> writes;
};

RunOutput run(const ModelBundle& model, const TokenSequence& tokens, const InterventionSpec& intervention,
              bool keep_writes, bool keep_trace) {
  check_tokens(model, tokens);
  const auto& cfg = model.config;
  const auto T = static_cast<Eigen::Index>(tokens.size());

  Matrix x(T, static_cast<Eigen::Index>(cfg.d_model));
  for (Eigen::Index t = 0; t < T; ++t) {
    x.row(t) = model.tok_embed.row(static_cast<Eigen::Index>(tokens[static_cast<std::size_t>(t)])) +
               model.pos_embed.row(t);
  }

  RunOutput out;
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    const LayerWeights& lw = model.layers[l];
    if (keep_trace) out.trace.push_back(x);

    const Matrix xa = rms_norm_rows(x, lw.attn_norm);
    const Matrix q = xa * lw.wq;
    const Matrix k = xa * lw.wk;
    const Matrix v = xa * lw.wv;

    Matrix attn = Matrix::Zero(x.rows(), x.cols());
    for (std::size_t h = 0; h < cfg.n_heads; ++h) {
      const HeadId id{l, h};
      Matrix write = head_write(q, k, v, lw.wo, h, cfg.d_head());
      if (const double alpha = intervention.scale(id); alpha != 1.0) {
        attn += alpha * write;
      } else {
        attn += write;
      }
      if (keep_writes) out.writes.emplace(id, std::move(write));
    }

    const Matrix xm = rms_norm_rows(x, lw.mlp_norm);
    const Matrix hidden = (xm * lw.w_in).unaryExpr([](double a) { return gelu(a); });
    x = (x + attn) + hidden * lw.w_out;
  }
  if (keep_trace) out.trace.push_back(x);
  out.final_residual = std::move(x);
  return out;
}

std::vector<bool> capture_mask(const TokenSequence& tokens, const CaptureRequest& request) {
  std::vector<bool> mask(tokens.size(), true);
  if (request.mode == Aggregation::MeanImageTokens) {
    for (std::size_t t = 0; t < tokens.size(); ++t) mask[t] = request.image_tokens.count(tokens[t]) > 0;
  }
  return mask;
}

Token argmax_last(const Matrix& logits) {
  const auto last = logits.rows() - 1;
  Eigen::Index best = 0;
  for (Eigen::Index j = 1; j < logits.cols(); ++j) {
    if (logits(last, j) > logits(last, best)) best = j;
  }
  return static_cast<Token>(best);
}

HeadActivationSet assemble_capture(const ModelBundle& model, const std::vector<std::map<HeadId, Vector>>& rows,
                                   Aggregation mode) {
  std::map<HeadId, SignalMatrix> entries;
  const auto n = static_cast<Eigen::Index>(rows.size());
  for (std::size_t l = 0; l < model.config.n_layers; ++l) {
    for (std::size_t h = 0; h < model.config.n_heads; ++h) {
      const HeadId id{l, h};
      Matrix m(n, static_cast<Eigen::Index>(model.config.d_model));
      for (Eigen::Index i = 0; i < n; ++i) m.row(i) = rows[static_cast<std::size_t>(i)].at(id).transpose();
      entries.emplace(id, SignalMatrix(std::move(m)));
    }
  }
  return HeadActivationSet(std::move(entries), mode);
}

std::map<HeadId, Vector> capture_one(const ModelBundle& model, const TokenSequence& prompt,
                                     const CaptureRequest& request) {
  const RunOutput r = run(model, prompt, {}, true, false);
  const auto mask = capture_mask(prompt, request);
  std::map<HeadId, Vector> out;
  for (const auto& [id, w] : r.writes) out.emplace(id, aggregate_tokens(w, mask, request.mode));
  return out;
}

void check_batch(const std::vector<TokenSequence>& prompts) {
  if (prompts.empty()) throw Error(ErrorKind::EmptyInput, "no prompts");
}

}  // namespace

Vector rms_norm(const Vector& x, const Vector& gain) {
  return rms_norm_rows(Matrix(x.transpose()), gain).row(0).transpose();
}

ModelBundle init_model(const ModelConfig& config, std::vector<std::string> vocab) {
  config.validate();
  if (vocab.empty()) {
    vocab.reserve(config.vocab_size);
    vocab.push_back("<bos>");
    for (std::size_t i = 1; i < config.vocab_size; ++i) vocab.push_back("tok" + std::to_string(i));
  }
  if (vocab.size() != config.vocab_size) {
    throw Error(ErrorKind::InvalidConfig, "vocab has " + std::to_string(vocab.size()) + " entries, config says " +
                                              std::to_string(config.vocab_size));
  }

  GaussianSource g(config.seed);
  const std::size_t d = config.d_model;
  ModelBundle m;
  m.config = config;
  m.vocab = std::move(vocab);
  m.tok_embed = g.matrix(config.vocab_size, d, kInitScale);
  m.pos_embed = g.matrix(config.max_seq_len, d, kInitScale);
  for (std::size_t l = 0; l < config.n_layers; ++l) {
    LayerWeights lw;
    lw.attn_norm = Vector::Ones(static_cast<Eigen::Index>(d));
    lw.wq = g.matrix(d, d, kInitScale);
    lw.wk = g.matrix(d, d, kInitScale);
    lw.wv = g.matrix(d, d, kInitScale);
    lw.wo = g.matrix(d, d, kInitScale);
    lw.mlp_norm = Vector::Ones(static_cast<Eigen::Index>(d));
    lw.w_in = g.matrix(d, config.d_mlp(), kInitScale);
    lw.w_out = g.matrix(config.d_mlp(), d, kInitScale);
    m.layers.push_back(std::move(lw));
  }
  m.final_norm = Vector::Ones(static_cast<Eigen::Index>(d));
  m.unembed = g.matrix(config.vocab_size, d, kInitScale);
  return m;
}

InterventionSpec InterventionSpec::uniform(const std::vector<HeadId>& heads, double alpha) {
  InterventionSpec spec;
  for (const auto& id : heads) spec.set(id, alpha);
  return spec;
}

void InterventionSpec::set(const HeadId& id, double alpha) {
  if (!std::isfinite(alpha)) throw Error(ErrorKind::InvalidArgument, "alpha for " + to_string(id) + " is not finite");
  if (alpha == 1.0) {
    scales_.erase(id);
  } else {
    scales_[id] = alpha;
  }
}

double InterventionSpec::scale(const HeadId& id) const {
  const auto it = scales_.find(id);
  return it == scales_.end() ? 1.0 : it->second;
}

ForwardResult forward(const ModelBundle& model, const TokenSequence& tokens, const InterventionSpec& intervention,
                      const std::optional<CaptureRequest>& capture) {
  RunOutput r = run(model, tokens, intervention, capture.has_value(), false);
  ForwardResult out;
  out.logits = rms_norm_rows(r.final_residual, model.final_norm) * model.unembed.transpose();
  out.final_residual = std::move(r.final_residual);
  if (capture) {
    const auto mask = capture_mask(tokens, *capture);
    std::map<HeadId, SignalMatrix> entries;
    for (const auto& [id, w] : r.writes) {
      entries.emplace(id, SignalMatrix(Matrix(aggregate_tokens(w, mask, capture->mode).transpose())));
    }
    out.capture.emplace(std::move(entries), capture->mode);
    out.head_writes = std::move(r.writes);
  }
  return out;
}

std::vector<Matrix> residual_trace(const ModelBundle& model, const TokenSequence& tokens,
                                   const InterventionSpec& intervention) {
  return run(model, tokens, intervention, false, true).trace;
}

TokenSequence generate_greedy(const ModelBundle& model, const TokenSequence& prompt, std::size_t max_new,
                              const InterventionSpec& intervention) {
  if (prompt.empty()) throw Error(ErrorKind::InvalidArgument, "prompt is empty");
  TokenSequence seq = prompt;
  for (std::size_t step = 0; step < max_new; ++step) {
    const RunOutput r = run(model, seq, intervention, false, false);
    const Matrix last = rms_norm_rows(r.final_residual.bottomRows(1), model.final_norm) * model.unembed.transpose();
    seq.push_back(argmax_last(last));
  }
  return seq;
}

std::vector<TokenSequence> generate_batch(const ModelBundle& model, const std::vector<TokenSequence>& prompts,
                                          std::size_t max_new, const InterventionSpec& intervention) {
  check_batch(prompts);
  std::vector<TokenSequence> out(prompts.size());
  std::vector<std::exception_ptr> errors(prompts.size());
  const auto n = static_cast<std::ptrdiff_t>(prompts.size());
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    const auto k = static_cast<std::size_t>(i);
    try {
      TokenSequence full = generate_greedy(model, prompts[k], max_new, intervention);
      out[k].assign(full.begin() + static_cast<std::ptrdiff_t>(prompts[k].size()), full.end());
    } catch (...) {
      errors[k] = std::current_exception();
    }
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

HeadActivationSet capture_head_outputs(const ModelBundle& model, const std::vector<TokenSequence>& prompts,
                                       const CaptureRequest& request) {
  check_batch(prompts);
  std::vector<std::map<HeadId, Vector>> rows(prompts.size());
  std::vector<std::exception_ptr> errors(prompts.size());
  const auto n = static_cast<std::ptrdiff_t>(prompts.size());
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    const auto k = static_cast<std::size_t>(i);
    try {
      rows[k] = capture_one(model, prompts[k], request);
    } catch (...) {
      errors[k] = std::current_exception();
    }
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
  return assemble_capture(model, rows, request.mode);
}

namespace serial {

std::vector<TokenSequence> generate_batch(const ModelBundle& model, const std::vector<TokenSequence>& prompts,
                                          std::size_t max_new, const InterventionSpec& intervention) {
  check_batch(prompts);
  std::vector<TokenSequence> out;
  for (const auto& p : prompts) {
    TokenSequence full = generate_greedy(model, p, max_new, intervention);
    out.emplace_back(full.begin() + static_cast<std::ptrdiff_t>(p.size()), full.end());
  }
  return out;
}

HeadActivationSet capture_head_outputs(const ModelBundle& model, const std::vector<TokenSequence>& prompts,
                                       const CaptureRequest& request) {
  check_batch(prompts);
  std::vector<std::map<HeadId, Vector>> rows;
  for (const auto& p : prompts) rows.push_back(capture_one(model, p, request));
  return assemble_capture(model, rows, request.mode);
}

}  // namespace serial

}  // namespace headpursuit
