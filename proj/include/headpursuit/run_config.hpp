#pragma once

// Run configuration as a plain "key = value" text file.
//
//   # comment
//   keywords = colors.txt
//   n_iters = 50
//   k = 2
//   alpha = -1
//   seed = 0
//   aggregation = mean_all_tokens
//   controls = 10
//   max_new_tokens = 8

#include "headpursuit/head_analysis.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

namespace headpursuit {

struct RunConfig {
  std::string keywords;
  std::size_t n_iters = kDefaultSompIterations;
  std::size_t k = 2;
  double alpha = -1.0;
  std::uint64_t seed = 0;
  Aggregation aggregation = Aggregation::MeanAllTokens;
  std::size_t controls = 10;
  std::size_t max_new_tokens = 8;

  void set(const std::string& key, const std::string& value);
  void validate() const;
};

std::map<std::string, std::string> parse_key_values(const std::string& text);
RunConfig parse_run_config(const std::string& text);
RunConfig load_run_config(const std::filesystem::path& path);

}  // namespace headpursuit
