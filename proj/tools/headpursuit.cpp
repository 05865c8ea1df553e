// headpursuit command-line tool.
//
// Exit codes: 0 ok, 2 usage, 3 data format, 4 numerical.

#include "headpursuit/bundle_io.hpp"
#include "headpursuit/error.hpp"
#include "headpursuit/evaluation.hpp"
#include "headpursuit/head_analysis.hpp"
#include "headpursuit/planted.hpp"
#include "headpursuit/run_config.hpp"
#include "headpursuit/sparse_recovery.hpp"
#include "headpursuit/tensor_file.hpp"
#include "headpursuit/toy_transformer.hpp"

#include <CLI11.hpp>
#include <omp.h>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

namespace hp = headpursuit;

namespace {

constexpr int kUsageExit = 2;

// Options that mirror RunConfig keys. Values stay as text until merged so that the
// config file and the flags share one parser.
class RunOptions {
 public:
  void add(CLI::App* app, const std::string& key, const std::string& help) {
    options_[key] = app->add_option("--" + flag_name(key), values_[key], help);
  }
  void add_config(CLI::App* app) {
    app->add_option("--config", config_path_, "key = value run configuration; flags override it")
        ->check(CLI::ExistingFile);
  }
  hp::RunConfig resolve() const {
    hp::RunConfig cfg = config_path_.empty() ? hp::RunConfig{} : hp::load_run_config(config_path_);
    for (const auto& [key, opt] : options_) {
      if (opt->count() > 0) cfg.set(key, values_.at(key));
    }
    cfg.validate();
    return cfg;
  }

 private:
  static std::string flag_name(std::string key) {
    for (char& c : key)
      if (c == '_') c = '-';
    return key;
  }

  std::string config_path_;
  std::map<std::string, std::string> values_;
  std::map<std::string, CLI::Option*> options_;
};

std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw hp::Error(hp::ErrorKind::IoError, "cannot open " + path);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  return lines;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw hp::Error(hp::ErrorKind::IoError, "cannot open " + path + " for writing");
  out << text;
  if (!out) throw hp::Error(hp::ErrorKind::IoError, "short write to " + path);
}

void print_warnings(const std::vector<std::string>& warnings) {
  for (const auto& w : warnings) std::cerr << "warning: " << w << '\n';
}

// Blank lines are skipped; a leading "<bos>" is added when missing.
std::vector<hp::TokenSequence> load_prompts(const hp::ModelBundle& model, const std::string& path) {
  std::vector<hp::TokenSequence> prompts;
  for (const auto& line : read_lines(path)) {
    hp::TokenSequence p = model.tokenize(line);
    if (p.empty()) continue;
    if (p.front() != hp::kBosToken) p.insert(p.begin(), hp::kBosToken);
    prompts.push_back(std::move(p));
  }
  if (prompts.empty()) throw hp::Error(hp::ErrorKind::EmptyInput, "no prompts in " + path);
  return prompts;
}

std::string head_list(const std::vector<hp::HeadId>& heads) {
  std::string out;
  for (std::size_t i = 0; i < heads.size(); ++i) out += (i ? "," : "") + hp::to_string(heads[i]);
  return out;
}

std::string format_dims(const std::vector<std::uint64_t>& dims) {
  if (dims.empty()) return "scalar";
  std::string out;
  for (std::size_t i = 0; i < dims.size(); ++i) out += (i ? "x" : "") + std::to_string(dims[i]);
  return out;
}

hp::ModelShape parse_shape(const std::string& text) {
  const auto x = text.find('x');
  try {
    if (x == std::string::npos) throw std::invalid_argument(text);
    return {std::stoul(text.substr(0, x)), std::stoul(text.substr(x + 1))};
  } catch (const std::exception&) {
    throw hp::Error(hp::ErrorKind::InvalidArgument, "shape must look like 4x8, got '" + text + "'");
  }
}

hp::ConceptDictionary load_concept(const hp::Dictionary& dict, const std::string& keywords_path) {
  if (keywords_path.empty()) throw hp::Error(hp::ErrorKind::InvalidArgument, "a keyword file is required");
  hp::ConceptDictionary concept_dict =
      hp::restrict_dictionary(dict, hp::load_keywords(keywords_path), hp::vocab_from_labels(dict.labels()));
  for (const auto& kw : concept_dict.unmatched_keywords) std::cerr << "warning: keyword '" << kw << "' matched no token\n";
  return concept_dict;
}

// ---------------------------------------------------------------------------
// rank

struct RankArgs {
  RunOptions run;
  std::string acts, dict, method = "somp_variance";
  std::size_t top = 0;
  std::size_t support_size = 10;
  bool show_support = false;
};

int run_rank(const RankArgs& a) {
  const hp::RunConfig cfg = a.run.resolve();
  const auto acts = hp::load_activations(a.acts);
  print_warnings(acts.warnings);
  const hp::ConceptDictionary concept_dict = load_concept(hp::load_dictionary(a.dict), cfg.keywords);
  const hp::ScoringMethod method = hp::parse_scoring_method(a.method);
  const hp::HeadRanking ranking = hp::rank_heads(acts.value, concept_dict, method, cfg.n_iters);
  const hp::Dictionary restricted = concept_dict.restricted();

  std::cout << "method " << hp::to_string(ranking.method) << "  concept atoms " << concept_dict.kept_rows.size()
            << "/" << concept_dict.base.size();
  if (ranking.method == hp::ScoringMethod::SompVariance) {
    std::cout << "  n_iters " << ranking.n_iters << (ranking.clamped ? " (clamped)" : "");
  }
  std::cout << '\n' << std::left << std::setw(6) << "rank" << std::setw(8) << "head" << "score\n";

  const std::size_t shown = a.top == 0 ? ranking.ordered.size() : std::min(a.top, ranking.ordered.size());
  for (std::size_t i = 0; i < shown; ++i) {
    const hp::HeadId& id = ranking.ordered[i];
    std::ostringstream score;
    score << std::fixed << std::setprecision(6) << ranking.scores.at(id);
    std::cout << std::left << std::setw(6) << i + 1 << std::setw(8) << hp::to_string(id) << score.str();
    if (a.show_support) {
      const auto it = ranking.supports.find(id);
      if (it != ranking.supports.end()) {
        std::cout << "  ";
        const std::size_t n = std::min(a.support_size, it->second.size());
        for (std::size_t j = 0; j < n; ++j) std::cout << (j ? " " : "") << restricted.label(it->second[j]);
      }
    }
    std::cout << '\n';
  }
  for (const auto& id : ranking.unscoreable) std::cout << std::left << std::setw(6) << "-" << std::setw(8) << hp::to_string(id) << "zero signal\n";
  return 0;
}

// ---------------------------------------------------------------------------
// control

struct ControlArgs {
  RunOptions run;
  std::string heads, shape, model, acts;
};

int run_control(const ControlArgs& a) {
  const hp::RunConfig cfg = a.run.resolve();
  const std::vector<hp::HeadId> selected = hp::parse_head_list(a.heads);
  hp::ModelShape shape;
  if (!a.shape.empty()) {
    shape = parse_shape(a.shape);
  } else if (!a.model.empty()) {
    const auto m = hp::load_model(a.model);
    shape = {m.value.config.n_layers, m.value.config.n_heads};
  } else if (!a.acts.empty()) {
    const auto acts = hp::load_activations(a.acts);
    shape = {acts.value.n_layers(), acts.value.n_heads()};
  } else {
    throw hp::Error(hp::ErrorKind::InvalidArgument, "one of --shape, --model or --acts is required");
  }
  for (std::size_t i = 0; i < cfg.controls; ++i) {
    std::cout << head_list(hp::sample_random_control(selected, shape, cfg.seed + i)) << '\n';
  }
  return 0;
}

// ---------------------------------------------------------------------------
// intervene

struct InterveneArgs {
  RunOptions run;
  std::string model, prompts, heads, out;
  std::optional<std::uint64_t> control_seed;
};

int run_intervene(const InterveneArgs& a) {
  const hp::RunConfig cfg = a.run.resolve();
  const auto model = hp::load_model(a.model);
  print_warnings(model.warnings);
  const auto prompts = load_prompts(model.value, a.prompts);

  std::vector<hp::HeadId> heads = a.heads.empty() ? std::vector<hp::HeadId>{} : hp::parse_head_list(a.heads);
  if (a.control_seed) {
    heads = hp::sample_random_control(heads, {model.value.config.n_layers, model.value.config.n_heads},
                                      *a.control_seed);
    std::cerr << "control heads: " << head_list(heads) << '\n';
  }
  const auto spec = hp::InterventionSpec::uniform(heads, cfg.alpha);
  const auto outputs = hp::generate_batch(model.value, prompts, cfg.max_new_tokens, spec);

  std::string text;
  for (const auto& o : outputs) text += model.value.detokenize(o) + '\n';
  if (a.out.empty()) {
    std::cout << text;
  } else {
    write_text(a.out, text);
  }
  return 0;
}

// ---------------------------------------------------------------------------
// eval

struct EvalArgs {
  RunOptions run;
  std::string metric = "keyword_count", name, baseline, intervened, gold, jsonl;
  std::vector<std::string> controls;
};

std::vector<double> score_lines(const EvalArgs& a, const hp::RunConfig& cfg, const std::string& path) {
  const auto lines = read_lines(path);
  std::vector<double> out;
  if (a.metric == "keyword_count") {
    if (cfg.keywords.empty()) throw hp::Error(hp::ErrorKind::InvalidArgument, "keyword_count needs --keywords");
    const auto kw = hp::load_keywords(cfg.keywords);
    std::set<std::string> lowered;
    for (std::string k : kw) {
      for (char& c : k) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
      lowered.insert(k);
    }
    for (const auto& l : lines) out.push_back(static_cast<double>(hp::keyword_count(l, lowered)));
    return out;
  }
  if (a.gold.empty()) throw hp::Error(hp::ErrorKind::InvalidArgument, a.metric + " needs --gold");
  const auto gold = read_lines(a.gold);
  if (gold.size() != lines.size()) {
    throw hp::Error(hp::ErrorKind::MalformedFile, path + " has " + std::to_string(lines.size()) + " lines but " +
                                                      a.gold + " has " + std::to_string(gold.size()));
  }
  for (std::size_t i = 0; i < lines.size(); ++i) {
    out.push_back(a.metric == "token_f1" ? hp::token_f1(lines[i], gold[i]) : hp::exact_match(lines[i], gold[i]) ? 1.0 : 0.0);
  }
  return out;
}

int run_eval(const EvalArgs& a) {
  const hp::RunConfig cfg = a.run.resolve();
  std::vector<std::vector<double>> controls;
  for (const auto& c : a.controls) controls.push_back(score_lines(a, cfg, c));
  const hp::MetricReport report = hp::aggregate_report(a.name.empty() ? a.metric : a.name, score_lines(a, cfg, a.baseline),
                                                       score_lines(a, cfg, a.intervened), controls);
  const std::string line = hp::to_json_line(report);
  if (a.jsonl.empty()) {
    std::cout << line << '\n';
  } else {
    std::ofstream out(a.jsonl, std::ios::app);
    if (!out) throw hp::Error(hp::ErrorKind::IoError, "cannot open " + a.jsonl);
    out << line << '\n';
  }
  std::cout << hp::format_table({report});
  return 0;
}

// ---------------------------------------------------------------------------
// decompose

struct DecomposeArgs {
  RunOptions run;
  std::string acts, dict, head;
  bool normalize = false;
};

int run_decompose(const DecomposeArgs& a) {
  const hp::RunConfig cfg = a.run.resolve();
  const auto acts = hp::load_activations(a.acts);
  print_warnings(acts.warnings);
  const hp::Dictionary full = hp::load_dictionary(a.dict);
  const hp::Dictionary dict = cfg.keywords.empty() ? full : load_concept(full, cfg.keywords).restricted();
  const hp::HeadId id = hp::parse_head_id(a.head);

  if (acts.value.at(id).data().norm() <= hp::kZeroSignalNorm) {
    throw hp::Error(hp::ErrorKind::ZeroSignal, hp::to_string(id) + " has an all-zero signal");
  }
  const std::size_t n_iters = std::min(cfg.n_iters, static_cast<std::size_t>(dict.size()));
  const hp::SompResult r = hp::somp(acts.value.at(id), dict, n_iters, {a.normalize});
  std::cout << "head " << hp::to_string(id) << "  atoms " << dict.size() << "  n_iters " << n_iters
            << (n_iters < cfg.n_iters ? " (clamped)" : "")
            << (r.early_stopped ? "  (early stop)" : "") << (r.rank_deficient ? "  (rank deficient)" : "") << '\n';
  std::cout << std::left << std::setw(6) << "step" << std::setw(8) << "atom" << std::setw(16) << "label" << std::setw(14)
            << "coef_norm" << std::setw(14) << "residual" << "explained\n";
  std::cout << std::fixed << std::setprecision(6);
  for (std::size_t s = 0; s < r.support.size(); ++s) {
    const double coef = r.coefficients.col(static_cast<Eigen::Index>(s)).norm();
    std::cout << std::left << std::setw(6) << s + 1 << std::setw(8) << r.support[s] << std::setw(16)
              << dict.label(r.support[s]) << std::setw(14) << coef << std::setw(14) << r.residual_norms[s];
    if (s < r.explained_variance.size()) std::cout << r.explained_variance[s];
    std::cout << '\n';
  }
  return 0;
}

// ---------------------------------------------------------------------------
// inspect

int run_inspect(const std::string& path) {
  const auto sections = hp::read_tensor_file(path);
  std::cout << path << ": HPT1 v" << hp::kTensorVersion << ", " << sections.size() << " sections, crc ok\n";
  for (const auto& s : sections) {
    std::cout << "  " << std::left << std::setw(24) << s.name << std::setw(5) << hp::to_string(s.dtype)
              << format_dims(s.dims);
    if (s.name == "dict/labels") std::cout << "  (" << hp::section_strings(s).size() << " labels)";
    std::cout << '\n';
  }
  return 0;
}

// ---------------------------------------------------------------------------
// capture

struct CaptureArgs {
  std::string model, prompts, out, aggregation = "mean_all_tokens", image_tokens;
  bool f32 = false;
};

int run_capture(const CaptureArgs& a) {
  const auto model = hp::load_model(a.model);
  print_warnings(model.warnings);
  hp::CaptureRequest request;
  request.mode = hp::parse_aggregation(a.aggregation);
  if (!a.image_tokens.empty()) {
    std::istringstream in(a.image_tokens);
    std::string tok;
    while (std::getline(in, tok, ',')) request.image_tokens.insert(model.value.token_id(tok));
  }
  const auto acts = hp::capture_head_outputs(model.value, load_prompts(model.value, a.prompts), request);
  hp::write_tensor_file(a.out, hp::activation_sections(acts, a.f32 ? hp::DType::F32 : hp::DType::F64));
  std::cout << "wrote " << acts.n_layers() * acts.n_heads() << " heads x " << acts.n_samples() << " samples to "
            << a.out << '\n';
  return 0;
}

// ---------------------------------------------------------------------------
// fixture

struct FixtureArgs {
  std::string out_dir;
  hp::FixtureOptions options;
  std::size_t n_prompts = 64;
  std::uint64_t prompt_seed = 99;
};

int run_fixture(const FixtureArgs& a) {
  namespace fs = std::filesystem;
  fs::create_directories(a.out_dir);
  const fs::path dir(a.out_dir);
  const hp::Fixture f = hp::build_fixture(a.options);
  const auto prompts = hp::fixture_prompts(f.model, a.n_prompts, a.prompt_seed);

  hp::save_model(dir / "model.hpt", f.model);
  hp::save_activations(dir / "acts.hpt", hp::capture_head_outputs(f.model, prompts));
  std::string lines;
  for (const auto& p : prompts) lines += f.model.detokenize(p) + '\n';
  write_text(dir / "prompts.txt", lines);
  std::string keywords;
  for (const auto& w : f.concept_words) keywords += w + '\n';
  write_text(dir / "keywords.txt", keywords);
  write_text(dir / "planted.txt", head_list(f.planted) + '\n');
  std::cout << "fixture written to " << dir.string() << " (planted " << head_list(f.planted) << ")\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Rank attention heads by concept specialization and test them by intervention"};
  app.require_subcommand(1);
  int threads = 0;
  app.add_option("--threads", threads, "OpenMP thread count (0 = runtime default)")->check(CLI::NonNegativeNumber);

  RankArgs rank;
  auto* rank_cmd = app.add_subcommand("rank", "Rank heads by how well a concept dictionary explains them");
  rank_cmd->add_option("--acts", rank.acts, "Activation file")->required()->check(CLI::ExistingFile);
  rank_cmd->add_option("--dict", rank.dict, "Dictionary or model file")->required()->check(CLI::ExistingFile);
  rank_cmd->add_option("--method", rank.method, "somp_variance or logit_lens_mean")->capture_default_str();
  rank_cmd->add_option("--top", rank.top, "Print only the first N heads");
  rank_cmd->add_flag("--show-support", rank.show_support, "Print the selected atom labels per head");
  rank_cmd->add_option("--support-size", rank.support_size, "Labels printed per head")->capture_default_str();
  rank.run.add_config(rank_cmd);
  rank.run.add(rank_cmd, "keywords", "Concept keyword file");
  rank.run.add(rank_cmd, "n_iters", "SOMP iterations (default 50)");

  ControlArgs control;
  auto* control_cmd = app.add_subcommand("control", "Sample random head sets matching a selection's layer histogram");
  control_cmd->add_option("--heads", control.heads, "Selected heads, e.g. L1H3,L2H5")->required();
  control_cmd->add_option("--shape", control.shape, "Grid as LAYERSxHEADS");
  control_cmd->add_option("--model", control.model, "Take the grid from a model file")->check(CLI::ExistingFile);
  control_cmd->add_option("--acts", control.acts, "Take the grid from an activation file")->check(CLI::ExistingFile);
  control.run.add_config(control_cmd);
  control.run.add(control_cmd, "controls", "Number of control sets (default 10)");
  control.run.add(control_cmd, "seed", "Seed of the first set; set i uses seed + i");

  InterveneArgs intervene;
  std::uint64_t control_seed = 0;
  auto* intervene_cmd = app.add_subcommand("intervene", "Greedy generation with selected heads rescaled");
  intervene_cmd->add_option("--model", intervene.model, "Model file")->required()->check(CLI::ExistingFile);
  intervene_cmd->add_option("--prompts", intervene.prompts, "Prompt file, one per line")->required()->check(CLI::ExistingFile);
  intervene_cmd->add_option("--heads", intervene.heads, "Heads to rescale, e.g. L1H3,L2H5");
  auto* control_seed_opt =
      intervene_cmd->add_option("--control-seed", control_seed, "Replace --heads by a matched random control");
  intervene_cmd->add_option("--out", intervene.out, "Write continuations here instead of stdout");
  intervene.run.add_config(intervene_cmd);
  intervene.run.add(intervene_cmd, "alpha", "Scale factor (default -1)");
  intervene.run.add(intervene_cmd, "max_new_tokens", "Tokens generated per prompt (default 8)");

  EvalArgs eval;
  auto* eval_cmd = app.add_subcommand("eval", "Compare generations against a baseline and random controls");
  eval_cmd->add_option("--metric", eval.metric, "keyword_count, token_f1 or exact_match")->capture_default_str()
      ->check(CLI::IsMember({"keyword_count", "token_f1", "exact_match"}));
  eval_cmd->add_option("--name", eval.name, "Report name (default: the metric)");
  eval_cmd->add_option("--baseline", eval.baseline, "Baseline generations")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--intervened", eval.intervened, "Intervened generations")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--control", eval.controls, "Control-run generations (repeatable)")->check(CLI::ExistingFile);
  eval_cmd->add_option("--gold", eval.gold, "Reference answers for token_f1 and exact_match")->check(CLI::ExistingFile);
  eval_cmd->add_option("--jsonl", eval.jsonl, "Append the JSON record to this file instead of stdout");
  eval.run.add_config(eval_cmd);
  eval.run.add(eval_cmd, "keywords", "Concept keyword file");

  DecomposeArgs decompose;
  auto* decompose_cmd = app.add_subcommand("decompose", "Run SOMP on one head and print the support");
  decompose_cmd->add_option("--acts", decompose.acts, "Activation file")->required()->check(CLI::ExistingFile);
  decompose_cmd->add_option("--dict", decompose.dict, "Dictionary or model file")->required()->check(CLI::ExistingFile);
  decompose_cmd->add_option("--head", decompose.head, "Head, e.g. L1H3 or 1:3")->required();
  decompose_cmd->add_flag("--normalize-atoms", decompose.normalize, "Score atoms after unit-normalizing them");
  decompose.run.add_config(decompose_cmd);
  decompose.run.add(decompose_cmd, "keywords", "Restrict the dictionary to these keywords");
  decompose.run.add(decompose_cmd, "n_iters", "SOMP iterations (default 50)");

  std::string inspect_path;
  auto* inspect_cmd = app.add_subcommand("inspect", "Print the sections of an HPT1 file");
  inspect_cmd->add_option("file", inspect_path, "File to inspect")->required()->check(CLI::ExistingFile);

  CaptureArgs capture;
  auto* capture_cmd = app.add_subcommand("capture", "Record per-head writes of a model over a prompt file");
  capture_cmd->add_option("--model", capture.model, "Model file")->required()->check(CLI::ExistingFile);
  capture_cmd->add_option("--prompts", capture.prompts, "Prompt file, one per line")->required()->check(CLI::ExistingFile);
  capture_cmd->add_option("--out", capture.out, "Activation file to write")->required();
  capture_cmd->add_option("--aggregation", capture.aggregation, "mean_all_tokens, mean_image_tokens or last_token")->capture_default_str();
  capture_cmd->add_option("--image-tokens", capture.image_tokens, "Comma-separated tokens for mean_image_tokens");
  capture_cmd->add_flag("--f32", capture.f32, "Store activations as f32");

  FixtureArgs fixture;
  auto* fixture_cmd = app.add_subcommand("fixture", "Write a planted-head model with prompts, keywords and activations");
  fixture_cmd->add_option("--out-dir", fixture.out_dir, "Output directory")->required();
  fixture_cmd->add_option("--seed", fixture.options.seed, "Model seed")->capture_default_str();
  fixture_cmd->add_option("--strength", fixture.options.strength, "Planted write strength")->capture_default_str();
  fixture_cmd->add_option("--prompts", fixture.n_prompts, "Number of prompts")->capture_default_str();
  fixture_cmd->add_option("--prompt-seed", fixture.prompt_seed, "Prompt seed")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsageExit;
  }

  if (threads > 0) omp_set_num_threads(threads);
  if (control_seed_opt->count() > 0) intervene.control_seed = control_seed;

  try {
    if (*rank_cmd) return run_rank(rank);
    if (*control_cmd) return run_control(control);
    if (*intervene_cmd) return run_intervene(intervene);
    if (*eval_cmd) return run_eval(eval);
    if (*decompose_cmd) return run_decompose(decompose);
    if (*inspect_cmd) return run_inspect(inspect_path);
    if (*capture_cmd) return run_capture(capture);
    if (*fixture_cmd) return run_fixture(fixture);
  } catch (const hp::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return hp::exit_code_for(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return kUsageExit;
}
