#pragma once

// Planted-head fixtures: toy models in which chosen heads are built to write
// only inside the span of a concept's unembedding rows, plus the small
// whitespace vocabulary and prompt grammar used to exercise them.

#include "headpursuit/toy_transformer.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace headpursuit {

/// Probe prompts used to measure head energies while planting.
std::vector<TokenSequence> probe_prompts(const ModelConfig& config, std::size_t count = 32);

/// Frobenius norm of each head's mean-aggregated write over `prompts`.
std::map<HeadId, double> head_energies(const ModelBundle& model, const std::vector<TokenSequence>& prompts);

/// Rewires head `planted` of `model` in place of its value/output path:
///   - the value column is a ridge Fisher direction of the normalized residuals entering
///     the layer, taken outside the concept span, so the head's output keeps one sign;
///   - the output row writes along the sum of the concept unembedding rows;
///   - the write is scaled so its energy on the probe prompts is
///     `strength` x the median head energy of `model` before planting.
/// strength == 0 returns the model unchanged.
ModelBundle plant_head(ModelBundle model, const std::vector<Token>& concept_tokens, const HeadId& planted,
                       double strength);

ModelBundle build_planted_model(const ModelConfig& config, const std::vector<Token>& concept_tokens,
                                const HeadId& planted, double strength,
                                std::vector<std::string> vocab = {});

/// Plants each head in order, measuring energies on the partially planted model.
ModelBundle build_planted_model(const ModelConfig& config, const std::vector<Token>& concept_tokens,
                                const std::vector<HeadId>& planted, double strength,
                                std::vector<std::string> vocab = {});

// ---------------------------------------------------------------------------
// Fixture grammar

struct Fixture {
  ModelBundle model;
  std::vector<std::string> concept_words;
  std::vector<Token> concept_tokens;
  std::vector<HeadId> planted;
};

struct FixtureOptions {
  std::size_t n_layers = 4;
  std::size_t n_heads = 8;
  std::size_t d_model = 64;
  std::size_t max_seq_len = 32;
  std::uint64_t seed = 2024;
  double strength = 3.0;
  std::vector<HeadId> planted{{1, 3}, {2, 5}};
};

/// "<bos>", then the colour words, then filler words.
std::vector<std::string> fixture_vocab();
std::vector<std::string> fixture_concept_words();

Fixture build_fixture(const FixtureOptions& options = {});

/// "<bos>" followed by 3-6 filler words drawn with `seed`; no concept words.
std::vector<TokenSequence> fixture_prompts(const ModelBundle& model, std::size_t count, std::uint64_t seed);

}  // namespace headpursuit
