#include "headpursuit/evaluation.hpp"

#include "headpursuit/error.hpp"

#include <json.hpp>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>
#include <iomanip>
#include <map>
#include <numeric>
#include <random>
#include <sstream>

namespace headpursuit {

namespace {

char lower(char c) { return static_cast<char>(std::tolower(static_cast<unsigned char>(c))); }

bool is_word_byte(char c) {
  const auto u = static_cast<unsigned char>(c);
  return u >= 0x80 || std::isalnum(u) || c == '_';
}

std::vector<std::string> split_whitespace(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : text) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      if (!cur.empty()) out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

double mean(const std::vector<double>& v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

}  // namespace

std::vector<std::string> normalize_answer_tokens(std::string_view text) {
  std::string cleaned;
  cleaned.reserve(text.size());
  for (char c : text) {
    if (std::ispunct(static_cast<unsigned char>(c))) continue;
    cleaned += lower(c);
  }
  return split_whitespace(cleaned);
}

double token_f1(std::string_view prediction, std::string_view gold) {
  const auto pred = normalize_answer_tokens(prediction);
  const auto ref = normalize_answer_tokens(gold);
  if (pred.empty() && ref.empty()) return 1.0;
  if (pred.empty() || ref.empty()) return 0.0;

  std::map<std::string, std::size_t> counts;
  for (const auto& t : ref) ++counts[t];
  std::size_t overlap = 0;
  for (const auto& t : pred) {
    if (auto it = counts.find(t); it != counts.end() && it->second > 0) {
      --it->second;
      ++overlap;
    }
  }
  if (overlap == 0) return 0.0;
  const double precision = static_cast<double>(overlap) / static_cast<double>(pred.size());
  const double recall = static_cast<double>(overlap) / static_cast<double>(ref.size());
  return 2.0 * precision * recall / (precision + recall);
}

bool exact_match(std::string_view prediction, std::string_view gold_label) {
  auto canon = [](std::string_view s) {
    std::string out;
    for (const auto& w : split_whitespace(s)) {
      if (!out.empty()) out += ' ';
      for (char c : w) out += lower(c);
    }
    return out;
  };
  return canon(prediction) == canon(gold_label);
}

std::size_t keyword_count(std::string_view text, const std::set<std::string>& keywords) {
  std::set<std::string> keys;
  for (const auto& k : keywords) {
    std::string lk;
    for (char c : k) lk += lower(c);
    keys.insert(std::move(lk));
  }
  std::size_t count = 0;
  std::string word;
  auto flush = [&] {
    if (!word.empty() && keys.count(word)) ++count;
    word.clear();
  };
  for (char c : text) {
    if (is_word_byte(c)) {
      word += lower(c);
    } else {
      flush();
    }
  }
  flush();
  return count;
}

double quantile(std::vector<double> values, double p) {
  if (values.empty()) throw Error(ErrorKind::EmptyInput, "quantile of an empty sample");
  if (!(p >= 0.0 && p <= 1.0)) throw Error(ErrorKind::InvalidArgument, "quantile level outside [0, 1]");
  std::sort(values.begin(), values.end());
  const double h = static_cast<double>(values.size() - 1) * p;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (h - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

MetricReport aggregate_report(std::string name, const std::vector<double>& baseline_values,
                              const std::vector<double>& intervened_values,
                              const std::vector<std::vector<double>>& control_runs) {
  if (baseline_values.empty() || intervened_values.empty()) {
    throw Error(ErrorKind::EmptyInput, "metric '" + name + "' needs baseline and intervened values");
  }
  MetricReport r;
  r.name = std::move(name);
  r.baseline = mean(baseline_values);
  r.intervened = mean(intervened_values);
  r.normalized_is_absolute = !(r.baseline > 0.0);
  auto normalize = [&](double x) { return r.normalized_is_absolute ? x : x / r.baseline; };
  r.normalized = normalize(r.intervened);

  if (!control_runs.empty()) {
    std::vector<double> normalized_runs;
    for (const auto& run : control_runs) {
      if (run.empty()) throw Error(ErrorKind::EmptyInput, "empty control run in metric '" + r.name + "'");
      normalized_runs.push_back(normalize(mean(run)));
    }
    r.control_runs = control_runs.size();
    r.control_median = quantile(normalized_runs, 0.5);
    r.control_iqr = std::make_pair(quantile(normalized_runs, 0.25), quantile(normalized_runs, 0.75));
  }
  return r;
}

std::string to_json_line(const MetricReport& report) {
  nlohmann::ordered_json j;
  j["name"] = report.name;
  j["baseline"] = report.baseline;
  j["intervened"] = report.intervened;
  j["normalized"] = report.normalized;
  j["normalized_is_absolute"] = report.normalized_is_absolute;
  if (report.control_median) {
    j["control_runs"] = report.control_runs;
    j["control_median"] = *report.control_median;
    j["control_q25"] = report.control_iqr->first;
    j["control_q75"] = report.control_iqr->second;
  }
  return j.dump();
}

std::string format_table(const std::vector<MetricReport>& reports) {
  std::ostringstream out;
  out << std::left << std::setw(24) << "metric" << std::right << std::setw(12) << "baseline" << std::setw(12)
      << "intervened" << std::setw(12) << "normalized" << std::setw(12) << "ctl.median" << std::setw(22)
      << "ctl.IQR" << '\n';
  out << std::fixed << std::setprecision(4);
  for (const auto& r : reports) {
    out << std::left << std::setw(24) << r.name << std::right << std::setw(12) << r.baseline << std::setw(12)
        << r.intervened << std::setw(12) << r.normalized;
    if (r.control_median) {
      std::ostringstream iqr;
      iqr << std::fixed << std::setprecision(4) << '[' << r.control_iqr->first << ", " << r.control_iqr->second << ']';
      out << std::setw(12) << *r.control_median << std::setw(22) << iqr.str();
    } else {
      out << std::setw(12) << "-" << std::setw(22) << "-";
    }
    if (r.normalized_is_absolute) out << "  (absolute)";
    out << '\n';
  }
  return out.str();
}

KeywordSplit split_keywords(const std::vector<std::string>& keywords, double held_out_fraction, std::uint64_t seed) {
  if (!(held_out_fraction >= 0.0 && held_out_fraction <= 1.0)) {
    throw Error(ErrorKind::InvalidArgument, "held-out fraction outside [0, 1]");
  }
  std::vector<std::string> pool(keywords.begin(), keywords.end());
  std::sort(pool.begin(), pool.end());
  pool.erase(std::unique(pool.begin(), pool.end()), pool.end());
  std::mt19937_64 rng(seed);
  for (std::size_t i = pool.size(); i > 1; --i) {
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % i;
    std::uint64_t x = rng();
    while (x >= limit) x = rng();
    std::swap(pool[i - 1], pool[static_cast<std::size_t>(x % i)]);
  }
  const auto n_held = static_cast<std::size_t>(std::llround(held_out_fraction * static_cast<double>(pool.size())));
  KeywordSplit out;
  out.held_out.insert(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(n_held));
  out.selection.insert(pool.begin() + static_cast<std::ptrdiff_t>(n_held), pool.end());
  return out;
}

}  // namespace headpursuit
