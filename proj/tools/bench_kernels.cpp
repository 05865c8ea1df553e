// Parallel kernels against their serial references.
//
//   bench_kernels --benchmark_filter=AtomScores

#include "headpursuit/head_analysis.hpp"
#include "headpursuit/kernels.hpp"
#include "headpursuit/planted.hpp"
#include "headpursuit/toy_transformer.hpp"

#include <benchmark/benchmark.h>

#include <random>

namespace hp = headpursuit;

namespace {

hp::Matrix random_matrix(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  hp::Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

const hp::Fixture& fixture() {
  static const hp::Fixture f = hp::build_fixture();
  return f;
}

const std::vector<hp::TokenSequence>& prompts() {
  static const auto p = hp::fixture_prompts(fixture().model, 64, 99);
  return p;
}

template <bool Parallel>
void AtomScores(benchmark::State& state) {
  const hp::Matrix atoms = random_matrix(state.range(0), 64, 1);
  const hp::Matrix residual = random_matrix(32, 64, 2);
  for (auto _ : state) {
    auto s = Parallel ? hp::kernels::atom_scores(atoms, residual, false)
                      : hp::kernels::serial::atom_scores(atoms, residual, false);
    benchmark::DoNotOptimize(s.data());
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

template <bool Parallel>
void RankHeads(benchmark::State& state) {
  const auto& f = fixture();
  const auto acts = hp::capture_head_outputs(f.model, prompts());
  const hp::Dictionary dict = f.model.dictionary();
  const auto concept_dict = hp::restrict_dictionary(dict, f.concept_words, hp::vocab_from_labels(dict.labels()));
  for (auto _ : state) {
    auto r = Parallel ? hp::rank_heads(acts, concept_dict, hp::ScoringMethod::SompVariance)
                      : hp::serial::rank_heads(acts, concept_dict, hp::ScoringMethod::SompVariance);
    benchmark::DoNotOptimize(r.ordered.data());
  }
}

template <bool Parallel>
void GenerateBatch(benchmark::State& state) {
  const auto& m = fixture().model;
  for (auto _ : state) {
    auto out = Parallel ? hp::generate_batch(m, prompts(), 8) : hp::serial::generate_batch(m, prompts(), 8);
    benchmark::DoNotOptimize(out.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(prompts().size()));
}

template <bool Parallel>
void Capture(benchmark::State& state) {
  const auto& m = fixture().model;
  for (auto _ : state) {
    auto acts = Parallel ? hp::capture_head_outputs(m, prompts()) : hp::serial::capture_head_outputs(m, prompts());
    benchmark::DoNotOptimize(&acts);
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(prompts().size()));
}

}  // namespace

BENCHMARK(AtomScores<false>)->Name("AtomScores/serial")->Arg(1024)->Arg(32000);
BENCHMARK(AtomScores<true>)->Name("AtomScores/parallel")->Arg(1024)->Arg(32000);
BENCHMARK(RankHeads<false>)->Name("RankHeads/serial")->Unit(benchmark::kMillisecond);
BENCHMARK(RankHeads<true>)->Name("RankHeads/parallel")->Unit(benchmark::kMillisecond);
BENCHMARK(GenerateBatch<false>)->Name("GenerateBatch/serial")->Unit(benchmark::kMillisecond);
BENCHMARK(GenerateBatch<true>)->Name("GenerateBatch/parallel")->Unit(benchmark::kMillisecond);
BENCHMARK(Capture<false>)->Name("Capture/serial")->Unit(benchmark::kMillisecond);
BENCHMARK(Capture<true>)->Name("Capture/parallel")->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
