#include "headpursuit/kernels.hpp"

#include "oracles.hpp"

#include <gtest/gtest.h>
#include <omp.h>

namespace hp = headpursuit;

TEST(Kernels, DotMatchesPlainSumForShortVectors) {
  const double a[3] = {1.5, -2.0, 4.0};
  const double b[3] = {2.0, 0.25, -1.0};
  EXPECT_DOUBLE_EQ(hp::kernels::dot(a, b, 3), 3.0 - 0.5 - 4.0);
  EXPECT_DOUBLE_EQ(hp::kernels::dot(a, b, 0), 0.0);
}

TEST(Kernels, AtomScoresAgreeWithOracle) {
  std::mt19937_64 rng(21);
  const hp::Matrix atoms = oracle::gaussian(rng, 50, 13);
  const hp::Matrix residual = oracle::gaussian(rng, 7, 13);
  const std::vector<double> expected = oracle::atom_scores(atoms, residual);
  const std::vector<double> got = hp::kernels::atom_scores(atoms, residual, false);
  ASSERT_EQ(got.size(), expected.size());
  for (std::size_t j = 0; j < got.size(); ++j) EXPECT_NEAR(got[j], expected[j], 1e-12 * (1 + expected[j]));
}

TEST(Kernels, ParallelIsBitIdenticalToSerial) {
  std::mt19937_64 rng(22);
  const hp::Matrix atoms = oracle::gaussian(rng, 257, 31);
  const hp::Matrix residual = oracle::gaussian(rng, 9, 31);
  const int saved = omp_get_max_threads();
  for (bool normalize : {false, true}) {
    const std::vector<double> reference = hp::kernels::serial::atom_scores(atoms, residual, normalize);
    for (int threads : {1, 2, 4, 7}) {
      omp_set_num_threads(threads);
      EXPECT_EQ(hp::kernels::atom_scores(atoms, residual, normalize), reference) << threads << " threads";
    }
  }
  omp_set_num_threads(saved);
}
