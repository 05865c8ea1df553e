#pragma once

// Metrics for judging interventions.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace headpursuit {

/// Lowercase, strip ASCII punctuation, split on whitespace.
std::vector<std::string> normalize_answer_tokens(std::string_view text);

/// Multiset-overlap F1 over normalized tokens. Both empty -> 1, one empty -> 0.
double token_f1(std::string_view prediction, std::string_view gold);

/// Case-insensitive equality after trimming and collapsing whitespace runs.
bool exact_match(std::string_view prediction, std::string_view gold_label);

/// Case-insensitive whole-word occurrences of any keyword, with multiplicity.
/// A word is a maximal run of letters, digits, '_' or non-ASCII bytes.
std::size_t keyword_count(std::string_view text, const std::set<std::string>& keywords);

/// Linear-interpolation quantile (numpy's default): h = (n - 1) p.
double quantile(std::vector<double> values, double p);

struct MetricReport {
  std::string name;
  double baseline = 0.0;
  double intervened = 0.0;
  double normalized = 0.0;       // intervened / baseline
  bool normalized_is_absolute = false;  // baseline mean was not positive
  std::optional<double> control_median;
  std::optional<std::pair<double, double>> control_iqr;  // 25th, 75th percentile
  std::size_t control_runs = 0;
};

/// Means per condition; controls are summarized by the median and IQR of their
/// per-run means, normalized by the baseline mean like `normalized`.
MetricReport aggregate_report(std::string name, const std::vector<double>& baseline_values,
                              const std::vector<double>& intervened_values,
                              const std::vector<std::vector<double>>& control_runs = {});

/// One JSON object per line.
std::string to_json_line(const MetricReport& report);
std::string format_table(const std::vector<MetricReport>& reports);

struct KeywordSplit {
  std::set<std::string> selection;  // used to pick heads
  std::set<std::string> held_out;   // used only to measure the effect
};

/// Seeded shuffle of the distinct keywords; round(fraction * n) of them are held out.
KeywordSplit split_keywords(const std::vector<std::string>& keywords, double held_out_fraction, std::uint64_t seed);

}  // namespace headpursuit
