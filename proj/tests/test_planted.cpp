#include "headpursuit/planted.hpp"

#include "headpursuit/bundle_io.hpp"

#include "test_util.hpp"

#include <algorithm>
#include <set>

namespace hp = headpursuit;

namespace {

hp::ConceptDictionary concept_of(const hp::Fixture& f) {
  const hp::Dictionary dict = f.model.dictionary();
  return hp::restrict_dictionary(dict, f.concept_words, hp::vocab_from_labels(dict.labels()));
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

const hp::Fixture& fixture() {
  static const hp::Fixture f = hp::build_fixture();
  return f;
}

}  // namespace

TEST(FixtureVocab, Layout) {
  const auto vocab = hp::fixture_vocab();
  EXPECT_EQ(vocab.front(), "<bos>");
  EXPECT_EQ(std::set<std::string>(vocab.begin(), vocab.end()).size(), vocab.size());
  const auto colours = hp::fixture_concept_words();
  EXPECT_TRUE(std::equal(colours.begin(), colours.end(), vocab.begin() + 1));
}

TEST(FixturePrompts, GrammarAndDeterminism) {
  const auto& f = fixture();
  const auto prompts = hp::fixture_prompts(f.model, 50, 4);
  EXPECT_EQ(prompts, hp::fixture_prompts(f.model, 50, 4));
  EXPECT_NE(prompts, hp::fixture_prompts(f.model, 50, 5));
  const std::set<hp::Token> concept_tokens(f.concept_tokens.begin(), f.concept_tokens.end());
  for (const auto& p : prompts) {
    EXPECT_EQ(p.front(), hp::kBosToken);
    EXPECT_GE(p.size(), 4u);
    EXPECT_LE(p.size(), 7u);
    for (std::size_t t = 1; t < p.size(); ++t) {
      EXPECT_NE(p[t], hp::kBosToken);
      EXPECT_EQ(concept_tokens.count(p[t]), 0u);
    }
  }
}

TEST(PlantHead, ZeroStrengthIsNoOp) {
  hp::ModelConfig c;
  c.seed = 8;
  const hp::ModelBundle planted = hp::build_planted_model(c, {1, 2, 3}, hp::HeadId{1, 1}, 0.0);
  EXPECT_EQ(hp::weights_checksum(planted), hp::weights_checksum(hp::init_model(c)));
}

TEST(PlantHead, OnlyThePlantedSlicesChange) {
  hp::ModelConfig c;
  c.seed = 9;
  const hp::ModelBundle base = hp::init_model(c);
  const hp::HeadId id{2, 6};
  const hp::ModelBundle m = hp::plant_head(base, {4, 5}, id, 2.0);
  const auto dh = static_cast<Eigen::Index>(c.d_head());
  const Eigen::Index c0 = static_cast<Eigen::Index>(id.head) * dh;
  for (std::size_t l = 0; l < c.n_layers; ++l) {
    const auto& a = base.layers[l];
    const auto& b = m.layers[l];
    EXPECT_TRUE(a.wq == b.wq && a.wk == b.wk && a.w_in == b.w_in && a.w_out == b.w_out);
    if (l != id.layer) {
      EXPECT_TRUE(a.wv == b.wv && a.wo == b.wo);
      continue;
    }
    EXPECT_TRUE(a.wv.leftCols(c0) == b.wv.leftCols(c0));
    EXPECT_TRUE(a.wv.rightCols(a.wv.cols() - c0 - dh) == b.wv.rightCols(b.wv.cols() - c0 - dh));
    EXPECT_TRUE(a.wo.topRows(c0) == b.wo.topRows(c0));
    EXPECT_TRUE(a.wo.bottomRows(a.wo.rows() - c0 - dh) == b.wo.bottomRows(b.wo.rows() - c0 - dh));
  }
  EXPECT_TRUE(base.unembed == m.unembed && base.tok_embed == m.tok_embed);
}

TEST(PlantHead, EnergyTargetAndConceptSpan) {
  hp::ModelConfig c;
  c.seed = 10;
  const hp::ModelBundle base = hp::init_model(c);
  const std::vector<hp::Token> concept_tokens{3, 7, 11};
  const hp::HeadId id{1, 4};
  const double strength = 2.5;
  const hp::ModelBundle m = hp::plant_head(base, concept_tokens, id, strength);

  const auto probes = hp::probe_prompts(c);
  std::vector<double> before;
  for (const auto& [h, e] : hp::head_energies(base, probes)) before.push_back(e);
  EXPECT_NEAR(hp::head_energies(m, probes).at(id), strength * median(before), 1e-9 * median(before));

  // every per-token write is a combination of the concept unembedding rows
  Eigen::MatrixXd span(c.d_model, concept_tokens.size());
  for (std::size_t k = 0; k < concept_tokens.size(); ++k) span.col(static_cast<Eigen::Index>(k)) = m.unembed.row(static_cast<Eigen::Index>(concept_tokens[k])).transpose();
  const Eigen::MatrixXd q = span.householderQr().householderQ() * Eigen::MatrixXd::Identity(c.d_model, concept_tokens.size());
  for (const auto& p : probes) {
    const hp::Matrix w = hp::forward(m, p, {}, hp::CaptureRequest{}).head_writes.at(id);
    const hp::Matrix outside = w - (w * q) * q.transpose();
    EXPECT_LE(outside.norm(), 1e-10 * w.norm());
  }
}

TEST(PlantHead, InvalidConfig) {
  const hp::ModelBundle m = hp::init_model(hp::ModelConfig{});
  EXPECT_HP_ERROR(hp::plant_head(m, {1, 1}, {0, 0}, 1.0), hp::ErrorKind::InvalidConfig);
  EXPECT_HP_ERROR(hp::plant_head(m, {}, {0, 0}, 1.0), hp::ErrorKind::InvalidConfig);
  EXPECT_HP_ERROR(hp::plant_head(m, {64}, {0, 0}, 1.0), hp::ErrorKind::InvalidConfig);
  EXPECT_HP_ERROR(hp::plant_head(m, {1}, {4, 0}, 1.0), hp::ErrorKind::InvalidConfig);
  EXPECT_HP_ERROR(hp::plant_head(m, {1}, {0, 0}, -1.0), hp::ErrorKind::InvalidConfig);
}

TEST(PlantedFixture, SinglePlantedHeadStandsOut) {
  hp::FixtureOptions o;
  o.planted = {{2, 1}};
  const hp::Fixture f = hp::build_fixture(o);
  const auto acts = hp::capture_head_outputs(f.model, hp::fixture_prompts(f.model, 48, 1));
  const hp::HeadRanking r = hp::rank_heads(acts, concept_of(f), hp::ScoringMethod::SompVariance);
  const double planted = r.scores.at(o.planted[0]);
  EXPECT_EQ(r.ordered.front(), o.planted[0]);
  EXPECT_GE(planted, 0.9);
  std::vector<double> others;
  for (const auto& [id, s] : r.scores) {
    if (id == o.planted[0]) continue;
    EXPECT_GE(planted - s, 0.1) << hp::to_string(id);
    others.push_back(s);
  }
  EXPECT_LT(median(others), 0.5 * planted);
}

TEST(PlantedFixture, BothPlantedHeadsRankFirst) {
  const auto& f = fixture();
  const auto acts = hp::capture_head_outputs(f.model, hp::fixture_prompts(f.model, 64, 2));
  for (auto method : {hp::ScoringMethod::SompVariance, hp::ScoringMethod::LogitLensMean}) {
    const hp::HeadRanking r = hp::rank_heads(acts, concept_of(f), method);
    const auto top = hp::top_k(r, 2);
    EXPECT_EQ(std::set<hp::HeadId>(top.begin(), top.end()), std::set<hp::HeadId>(f.planted.begin(), f.planted.end()))
        << hp::to_string(method);
  }
}

TEST(PlantedFixture, GreedyGenerationReachesTheConcept) {
  const auto& f = fixture();
  const std::set<hp::Token> concept_tokens(f.concept_tokens.begin(), f.concept_tokens.end());
  const auto prompts = hp::fixture_prompts(f.model, 64, 3);
  const auto outputs = hp::generate_batch(f.model, prompts, 4);
  std::size_t hits = 0;
  for (const auto& o : outputs) hits += std::any_of(o.begin(), o.end(), [&](hp::Token t) { return concept_tokens.count(t) > 0; });
  EXPECT_GE(hits, prompts.size() * 9 / 10);
}
