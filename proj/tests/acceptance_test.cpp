// Acceptance checks. Prints one PASS/FAIL line per criterion; exit status is the
// number of failures.

#include "headpursuit/error.hpp"
#include "headpursuit/evaluation.hpp"
#include "headpursuit/head_analysis.hpp"
#include "headpursuit/planted.hpp"
#include "headpursuit/sparse_recovery.hpp"
#include "headpursuit/tensor_file.hpp"
#include "headpursuit/toy_transformer.hpp"

#include "oracles.hpp"

#include <chrono>
#include <cstdio>
#include <cstring>
#include <functional>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <string>

namespace hp = headpursuit;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

double relative(const hp::Matrix& a, const hp::Matrix& b) {
  const double scale = std::max(b.norm(), 1e-300);
  return (a - b).norm() / scale;
}

struct Outcome {
  bool pass = true;
  std::ostringstream detail;

  void require(bool ok, const std::string& what) {
    if (!ok && pass) detail << "first failure: " << what << "; ";
    pass = pass && ok;
  }
};

Outcome somp_correctness() {
  Outcome o;
  std::mt19937_64 rng(20240501);
  const auto t0 = Clock::now();
  double worst_increase = 0.0, worst_orth = 0.0, worst_recovery = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    const auto d = static_cast<Eigen::Index>(2 + rng() % 31);
    const auto v = static_cast<Eigen::Index>(1 + rng() % 64);
    const auto n = static_cast<Eigen::Index>(1 + rng() % 16);
    const hp::Dictionary dict(oracle::gaussian(rng, v, d));
    const hp::Matrix h = oracle::gaussian(rng, n, d);
    const std::size_t iters = 1 + rng() % static_cast<std::size_t>(std::min<Eigen::Index>(v, 16));
    const hp::SompResult r = hp::somp(hp::SignalMatrix(h), dict, iters);
    for (std::size_t t = 1; t < r.residual_norms.size(); ++t)
      worst_increase = std::max(worst_increase, r.residual_norms[t] - r.residual_norms[t - 1]);
    const hp::Matrix residual = h - r.reconstruction;
    hp::Matrix selected(static_cast<Eigen::Index>(r.support.size()), d);
    for (std::size_t s = 0; s < r.support.size(); ++s) selected.row(static_cast<Eigen::Index>(s)) = dict.atoms().row(static_cast<Eigen::Index>(r.support[s]));
    worst_orth = std::max(worst_orth, (selected * residual.transpose()).cwiseAbs().maxCoeff() / h.norm());

    // k-sparse signal over an orthonormal dictionary
    const auto dk = static_cast<std::size_t>(8 + rng() % 25);
    const std::size_t vk = 1 + rng() % dk;
    const std::size_t k = 1 + rng() % std::min<std::size_t>(8, vk);
    const hp::Dictionary ortho(oracle::orthonormal_rows(rng, vk, dk));
    std::vector<std::size_t> idx(vk);
    std::iota(idx.begin(), idx.end(), 0);
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(k);
    const hp::Matrix w = oracle::gaussian(rng, n, static_cast<Eigen::Index>(k));
    const hp::Matrix signal = oracle::reconstruct(w, ortho.atoms(), idx);
    const hp::SompResult rk = hp::somp(hp::SignalMatrix(signal), ortho, k);
    worst_recovery = std::max(worst_recovery, (signal - rk.reconstruction).norm());
    o.require(std::set<std::size_t>(rk.support.begin(), rk.support.end()) == std::set<std::size_t>(idx.begin(), idx.end()),
              "support recovery, trial " + std::to_string(trial));
  }
  const double elapsed = seconds_since(t0);
  o.require(worst_increase <= 1e-9, "residual increased");
  o.require(worst_orth <= 1e-6, "residual not orthogonal");
  o.require(worst_recovery <= 1e-8, "sparse recovery residual");
  o.require(elapsed < 10.0, "runtime");
  o.detail << "200 instances, max increase " << worst_increase << ", max orth " << worst_orth << ", max sparse residual "
           << worst_recovery << ", " << elapsed << " s";
  return o;
}

Outcome logit_lens_correspondence() {
  Outcome o;
  std::mt19937_64 rng(77);
  int agree = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const auto d = static_cast<Eigen::Index>(2 + rng() % 31);
    const hp::Dictionary dict(oracle::gaussian(rng, static_cast<Eigen::Index>(1 + rng() % 64), d));
    const hp::Matrix h = oracle::gaussian(rng, 1, d);
    agree += hp::somp(hp::SignalMatrix(h), dict, 1).support.at(0) == hp::mp_step(h.row(0).transpose(), dict).index;
  }
  o.require(agree == 100, "selection differs");
  o.detail << agree << "/100 identical selections";
  return o;
}

Outcome refit_oracle() {
  Outcome o;
  std::mt19937_64 rng(5150);
  double worst = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    const auto d = static_cast<Eigen::Index>(8 + rng() % 25);
    const auto v = static_cast<Eigen::Index>(4 + rng() % 60);
    const hp::Dictionary dict(oracle::gaussian(rng, v, d));
    const hp::Matrix h = oracle::gaussian(rng, static_cast<Eigen::Index>(1 + rng() % 16), d);
    std::vector<std::size_t> support(static_cast<std::size_t>(v));
    std::iota(support.begin(), support.end(), 0);
    std::shuffle(support.begin(), support.end(), rng);
    support.resize(1 + rng() % static_cast<std::size_t>(std::min<Eigen::Index>(v, d / 2)));
    const hp::Matrix expected = oracle::normal_equations(h, dict.atoms(), support);
    worst = std::max(worst, relative(hp::refit(hp::SignalMatrix(h), dict, support).coefficients, expected));
  }
  o.require(worst <= 1e-8, "refit differs from normal equations");
  o.detail << "50 instances, max relative error " << worst;
  return o;
}

Outcome intervention_algebra() {
  Outcome o;
  hp::ModelConfig c;
  c.n_layers = 1;
  c.seed = 31;
  const hp::ModelBundle m = hp::init_model(c);
  const hp::TokenSequence prompt{hp::kBosToken, 5, 17, 9, 40, 2};
  double worst = 0.0;
  bool identical = true;
  for (std::size_t head = 0; head < c.n_heads; ++head) {
    const hp::HeadId id{0, head};
    const hp::ForwardResult base = hp::forward(m, prompt, {}, hp::CaptureRequest{});
    const hp::ForwardResult inv = hp::forward(m, prompt, hp::InterventionSpec::uniform({id}, -1.0));
    const hp::ForwardResult one = hp::forward(m, prompt, hp::InterventionSpec::uniform({id}, 1.0));
    const hp::Matrix expected = -2.0 * base.head_writes.at(id);
    o.require(expected.norm() > 0.0, "zero head write");
    worst = std::max(worst, relative(inv.final_residual - base.final_residual, expected));
    identical = identical && one.final_residual.size() == base.final_residual.size() &&
                std::memcmp(one.final_residual.data(), base.final_residual.data(), sizeof(double) * static_cast<std::size_t>(base.final_residual.size())) == 0 &&
                std::memcmp(one.logits.data(), base.logits.data(), sizeof(double) * static_cast<std::size_t>(base.logits.size())) == 0;
  }
  o.require(worst <= 1e-9, "alpha = -1 change is not -2x the write");
  o.require(identical, "alpha = 1 is not bit-identical");
  o.detail << "8 heads, max relative error " << worst << ", alpha = 1 " << (identical ? "bit-identical" : "differs");
  return o;
}

Outcome planted_study() {
  Outcome o;
  const auto t0 = Clock::now();
  const hp::Fixture f = hp::build_fixture();
  const hp::Dictionary dict = f.model.dictionary();
  const hp::ConceptDictionary concept_dict =
      hp::restrict_dictionary(dict, f.concept_words, hp::vocab_from_labels(dict.labels()));

  // rank on one prompt set, generate on another
  const auto acts = hp::capture_head_outputs(f.model, hp::fixture_prompts(f.model, 64, 1));
  const hp::HeadRanking ranking = hp::rank_heads(acts, concept_dict, hp::ScoringMethod::SompVariance);
  const std::vector<hp::HeadId> top = hp::top_k(ranking, 2);
  const bool top_ok = std::set<hp::HeadId>(top.begin(), top.end()) == std::set<hp::HeadId>(f.planted.begin(), f.planted.end());
  o.require(top_ok, "(a) planted heads not in top 2");

  const auto prompts = hp::fixture_prompts(f.model, 64, 99);
  const std::set<std::string> keywords(f.concept_words.begin(), f.concept_words.end());
  auto keyword_total = [&](const hp::InterventionSpec& spec) {
    double total = 0.0;
    for (const auto& out : hp::generate_batch(f.model, prompts, 8, spec))
      total += static_cast<double>(hp::keyword_count(f.model.detokenize(out), keywords));
    return total;
  };
  const double baseline = keyword_total({});
  const double inverted = keyword_total(hp::InterventionSpec::uniform(top, -1.0));
  const double enhanced = keyword_total(hp::InterventionSpec::uniform(top, 5.0));
  std::vector<double> control_change;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto control = hp::sample_random_control(top, {f.model.config.n_layers, f.model.config.n_heads}, seed);
    control_change.push_back(std::fabs(keyword_total(hp::InterventionSpec::uniform(control, -1.0)) / baseline - 1.0));
  }
  const double reduction = 1.0 - inverted / baseline;
  const double median_control = hp::quantile(control_change, 0.5);
  const double increase = enhanced / baseline - 1.0;
  const double elapsed = seconds_since(t0);
  o.require(baseline > 0.0, "baseline emits no keywords");
  o.require(reduction >= 0.8, "(b) inversion reduction");
  o.require(median_control <= 0.2, "(c) control median change");
  o.require(increase >= 0.5, "(d) enhancement increase");
  o.require(elapsed < 60.0, "runtime");
  o.detail << "top-2 " << hp::to_string(top[0]) << "," << hp::to_string(top[1]) << " (" << (top_ok ? "planted" : "NOT planted")
           << "), keywords baseline " << baseline << ", inverted " << inverted << " (-" << 100.0 * reduction
           << "%), control median |change| " << 100.0 * median_control << "%, alpha=5 " << enhanced << " (+"
           << 100.0 * increase << "%), " << elapsed << " s";
  return o;
}

Outcome random_control_protocol() {
  Outcome o;
  std::mt19937_64 rng(404);
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const hp::ModelShape shape{2 + rng() % 4, 3 + rng() % 6};
    std::set<hp::HeadId> chosen;
    const std::size_t want = 1 + rng() % (shape.layers * (shape.heads_per_layer / 2));
    while (chosen.size() < want) {
      const hp::HeadId id{rng() % shape.layers, rng() % shape.heads_per_layer};
      std::size_t in_layer = 0;
      for (const auto& c : chosen) in_layer += c.layer == id.layer;
      if (2 * (in_layer + 1) <= shape.heads_per_layer) chosen.insert(id);
    }
    const std::vector<hp::HeadId> selected(chosen.begin(), chosen.end());
    const auto control = hp::sample_random_control(selected, shape, seed);
    std::map<std::size_t, int> hist;
    for (const auto& id : selected) ++hist[id.layer];
    for (const auto& id : control) {
      --hist[id.layer];
      o.require(chosen.count(id) == 0, "control overlaps selection, seed " + std::to_string(seed));
      o.require(id.layer < shape.layers && id.head < shape.heads_per_layer, "control out of range");
    }
    for (const auto& [layer, count] : hist) o.require(count == 0, "histogram mismatch, seed " + std::to_string(seed));
  }
  o.detail << "100 seeds";
  return o;
}

Outcome metrics() {
  Outcome o;
  const double f1 = hp::token_f1("United States", "United States of America");
  o.require(std::fabs(f1 - 2.0 / 3.0) <= 1e-12, "token_f1 example");
  o.require(hp::keyword_count("red red blue", {"red", "blue"}) == 3, "keyword_count repeated");
  o.require(hp::keyword_count("infrared", {"red"}) == 0, "keyword_count word boundary");
  o.require(hp::keyword_count("", {"red"}) == 0, "keyword_count empty");
  o.require(hp::exact_match(" Dog ", "dog"), "exact_match normalization");
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(0.0, 3.0);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> base(4), inter(4);
    std::vector<std::vector<double>> controls(1 + rng() % 12, std::vector<double>(4));
    for (double& x : base) x = 1.0 + u(rng);
    for (double& x : inter) x = u(rng);
    std::vector<double> normalized;
    const double base_mean = std::accumulate(base.begin(), base.end(), 0.0) / 4.0;
    for (auto& c : controls) {
      for (double& x : c) x = u(rng);
      normalized.push_back(std::accumulate(c.begin(), c.end(), 0.0) / 4.0 / base_mean);
    }
    const hp::MetricReport r = hp::aggregate_report("m", base, inter, controls);
    worst = std::max({worst, std::fabs(*r.control_median - oracle::sorted_quantile(normalized, 0.5)),
                      std::fabs(r.control_iqr->first - oracle::sorted_quantile(normalized, 0.25)),
                      std::fabs(r.control_iqr->second - oracle::sorted_quantile(normalized, 0.75))});
  }
  o.require(worst <= 1e-12, "report quantiles differ from sort oracle");
  o.detail << "token_f1 = " << f1 << ", keyword_count cases ok, max quantile error " << worst;
  return o;
}

Outcome file_format() {
  Outcome o;
  std::mt19937_64 rng(99);
  std::vector<hp::TensorSection> sections;
  sections.push_back({"act/L0/H0", {3, 4}, hp::DType::F64, {}, {}});
  for (int i = 0; i < 12; ++i) sections[0].values.push_back(std::normal_distribution<double>()(rng));
  sections.push_back({"half", {2}, hp::DType::F32, {0.25, -8.0}, {}});
  sections.push_back({"dict/labels", {3}, hp::DType::U8, {}, {'a', 0, 'b'}});
  const auto good = hp::encode_tensor_file(sections);
  const auto back = hp::decode_tensor_file(good);
  bool exact = back.size() == sections.size();
  for (std::size_t i = 0; exact && i < back.size(); ++i)
    exact = back[i].values.size() == sections[i].values.size() && back[i].bytes == sections[i].bytes &&
            std::memcmp(back[i].values.data(), sections[i].values.data(), back[i].values.size() * sizeof(double)) == 0;
  o.require(exact, "round trip");

  auto rejects = [](std::span<const std::uint8_t> bytes) {
    try {
      hp::decode_tensor_file(bytes);
      return false;
    } catch (const hp::Error&) {
      return true;
    }
  };
  std::size_t flips = 0, truncations = 0;
  for (std::size_t i = 0; i < good.size(); ++i) {
    auto bad = good;
    bad[i] ^= static_cast<std::uint8_t>(1 + rng() % 255);
    flips += rejects(bad);
    truncations += rejects(std::span<const std::uint8_t>(good).first(i));
  }
  o.require(flips == good.size(), "undetected corruption");
  o.require(truncations == good.size(), "undetected truncation");

  std::size_t fuzz = 0, crashes = 0;
  for (; fuzz < 10000; ++fuzz) {
    auto buf = good;
    const std::size_t header = std::min<std::size_t>(buf.size(), 48);
    for (int e = 0; e < 1 + static_cast<int>(rng() % 3); ++e) buf[rng() % header] = static_cast<std::uint8_t>(rng());
    if (fuzz % 2) {
      const std::uint32_t crc = hp::crc32(std::span<const std::uint8_t>(buf).first(buf.size() - 4));
      for (int i = 0; i < 4; ++i) buf[buf.size() - 4 + static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(crc >> (8 * i));
    }
    try {
      hp::decode_tensor_file(buf);
    } catch (const hp::Error&) {
    } catch (...) {
      ++crashes;
    }
  }
  o.require(crashes == 0, "non-graceful fuzz failure");
  o.detail << "round trip " << (exact ? "bit-exact" : "differs") << ", " << flips << "/" << good.size() << " flips and "
           << truncations << "/" << good.size() << " truncations rejected, " << fuzz << " fuzzed headers, " << crashes
           << " ungraceful";
  return o;
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"somp-correctness", somp_correctness},
      {"logit-lens-correspondence", logit_lens_correspondence},
      {"refit-oracle", refit_oracle},
      {"intervention-algebra", intervention_algebra},
      {"planted-head-study", planted_study},
      {"random-control-protocol", random_control_protocol},
      {"metrics", metrics},
      {"file-format", file_format},
  };
  int failures = 0;
  for (const auto& [name, check] : criteria) {
    Outcome o;
    try {
      o = check();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail << "exception: " << e.what();
    }
    failures += !o.pass;
    std::printf("%s %s: %s\n", o.pass ? "PASS" : "FAIL", name.c_str(), o.detail.str().c_str());
    std::fflush(stdout);
  }
  return failures;
}
