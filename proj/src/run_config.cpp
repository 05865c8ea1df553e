#include "headpursuit/run_config.hpp"

#include "headpursuit/error.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

namespace headpursuit {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <class T>
T parse_number(const std::string& key, const std::string& value) {
  T out{};
  const char* end = value.data() + value.size();
  auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc() || ptr != end || value.empty()) {
    throw Error(ErrorKind::InvalidConfig, "bad value '" + value + "' for " + key);
  }
  return out;
}

}  // namespace

void RunConfig::set(const std::string& key, const std::string& value) {
  if (key == "keywords") {
    keywords = value;
  } else if (key == "n_iters") {
    n_iters = parse_number<std::size_t>(key, value);
  } else if (key == "k") {
    k = parse_number<std::size_t>(key, value);
  } else if (key == "alpha") {
    alpha = parse_number<double>(key, value);
  } else if (key == "seed") {
    seed = parse_number<std::uint64_t>(key, value);
  } else if (key == "aggregation") {
    try {
      aggregation = parse_aggregation(value);
    } catch (const Error&) {
      throw Error(ErrorKind::InvalidConfig, "unknown aggregation '" + value + "'");
    }
  } else if (key == "controls") {
    controls = parse_number<std::size_t>(key, value);
  } else if (key == "max_new_tokens") {
    max_new_tokens = parse_number<std::size_t>(key, value);
  } else {
    throw Error(ErrorKind::InvalidConfig, "unknown config key '" + key + "'");
  }
}

void RunConfig::validate() const {
  if (n_iters == 0) throw Error(ErrorKind::InvalidConfig, "n_iters must be positive");
  if (k == 0) throw Error(ErrorKind::InvalidConfig, "k must be positive");
  if (!std::isfinite(alpha)) throw Error(ErrorKind::InvalidConfig, "alpha must be finite");
}

std::map<std::string, std::string> parse_key_values(const std::string& text) {
  std::map<std::string, std::string> out;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw Error(ErrorKind::InvalidConfig, "line " + std::to_string(line_no) + ": expected key = value");
    }
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw Error(ErrorKind::InvalidConfig, "line " + std::to_string(line_no) + ": empty key");
    if (!out.emplace(key, trim(line.substr(eq + 1))).second) {
      throw Error(ErrorKind::InvalidConfig, "line " + std::to_string(line_no) + ": duplicate key '" + key + "'");
    }
  }
  return out;
}

RunConfig parse_run_config(const std::string& text) {
  RunConfig cfg;
  for (const auto& [key, value] : parse_key_values(text)) cfg.set(key, value);
  cfg.validate();
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::IoError, "cannot open " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  return parse_run_config(text.str());
}

}  // namespace headpursuit
