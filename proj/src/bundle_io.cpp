#include "headpursuit/bundle_io.hpp"

#include "headpursuit/error.hpp"

#include <charconv>
#include <map>
#include <sstream>

namespace headpursuit {

namespace {

std::vector<double> flatten(const Matrix& m) {
  std::vector<double> out(static_cast<std::size_t>(m.size()));
  Eigen::Map<Matrix>(out.data(), m.rows(), m.cols()) = m;
  return out;
}

bool starts_with(const std::string& s, std::string_view prefix) { return s.rfind(prefix, 0) == 0; }

const TensorSection& require(const std::vector<TensorSection>& sections, const std::string& name) {
  if (const auto* s = find_section(sections, name)) return *s;
  throw Error(ErrorKind::MalformedFile, "missing section '" + name + "'");
}

bool parse_uint(std::string_view text, std::size_t& out) {
  const auto* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, out);
  return ec == std::errc() && ptr == end && !text.empty();
}

// "act/L{l}/H{h}"
bool parse_activation_name(const std::string& name, HeadId& id) {
  if (!starts_with(name, "act/L")) return false;
  const std::string_view rest = std::string_view(name).substr(5);
  const auto slash = rest.find("/H");
  if (slash == std::string_view::npos) return false;
  return parse_uint(rest.substr(0, slash), id.layer) && parse_uint(rest.substr(slash + 2), id.head);
}

bool is_known_prefix(const std::string& name) {
  return starts_with(name, "act/") || starts_with(name, "meta/") || starts_with(name, "dict/") ||
         starts_with(name, "model/");
}

std::string layer_name(std::size_t l, const char* tensor) { return "model/L" + std::to_string(l) + "/" + tensor; }

}  // namespace

TensorSection matrix_section(std::string name, const Matrix& m, DType dtype) {
  TensorSection s;
  s.name = std::move(name);
  s.dims = {static_cast<std::uint64_t>(m.rows()), static_cast<std::uint64_t>(m.cols())};
  s.dtype = dtype;
  s.values = flatten(m);
  return s;
}

TensorSection vector_section(std::string name, const Vector& v, DType dtype) {
  TensorSection s;
  s.name = std::move(name);
  s.dims = {static_cast<std::uint64_t>(v.size())};
  s.dtype = dtype;
  s.values.assign(v.data(), v.data() + v.size());
  return s;
}

TensorSection strings_section(std::string name, const std::vector<std::string>& strings) {
  std::string joined;
  for (std::size_t i = 0; i < strings.size(); ++i) {
    if (strings[i].find('\0') != std::string::npos) {
      throw Error(ErrorKind::InvalidArgument, "label " + std::to_string(i) + " contains a NUL byte");
    }
    if (i) joined += '\0';
    joined += strings[i];
  }
  return text_section(std::move(name), joined);
}

TensorSection text_section(std::string name, const std::string& text) {
  TensorSection s;
  s.name = std::move(name);
  s.dims = {static_cast<std::uint64_t>(text.size())};
  s.dtype = DType::U8;
  s.bytes.assign(text.begin(), text.end());
  return s;
}

Matrix section_matrix(const TensorSection& s) {
  if (s.dtype == DType::U8) throw Error(ErrorKind::MalformedFile, "section '" + s.name + "' is not numeric");
  if (s.dims.size() == 1) return Eigen::Map<const Matrix>(s.values.data(), 1, static_cast<Eigen::Index>(s.dims[0]));
  if (s.dims.size() != 2) {
    throw Error(ErrorKind::MalformedFile, "section '" + s.name + "' has rank " + std::to_string(s.dims.size()) +
                                              ", expected 2");
  }
  return Eigen::Map<const Matrix>(s.values.data(), static_cast<Eigen::Index>(s.dims[0]),
                                  static_cast<Eigen::Index>(s.dims[1]));
}

Vector section_vector(const TensorSection& s) {
  if (s.dtype == DType::U8 || s.dims.size() != 1) {
    throw Error(ErrorKind::MalformedFile, "section '" + s.name + "' is not a numeric vector");
  }
  return Eigen::Map<const Vector>(s.values.data(), static_cast<Eigen::Index>(s.values.size()));
}

std::vector<std::string> section_strings(const TensorSection& s) {
  const std::string text = section_text(s);
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto end = text.find('\0', start);
    out.push_back(text.substr(start, end == std::string::npos ? std::string::npos : end - start));
    if (end == std::string::npos) break;
    start = end + 1;
  }
  return out;
}

std::string section_text(const TensorSection& s) {
  if (s.dtype != DType::U8) throw Error(ErrorKind::MalformedFile, "section '" + s.name + "' is not a byte section");
  return {s.bytes.begin(), s.bytes.end()};
}

const TensorSection* find_section(const std::vector<TensorSection>& sections, const std::string& name) {
  for (const auto& s : sections)
    if (s.name == name) return &s;
  return nullptr;
}

std::vector<TensorSection> activation_sections(const HeadActivationSet& acts, DType dtype) {
  std::vector<TensorSection> out;
  out.push_back(text_section("meta/aggregation", std::string(to_string(acts.aggregation()))));
  for (const auto& [id, m] : acts.entries()) {
    out.push_back(matrix_section("act/L" + std::to_string(id.layer) + "/H" + std::to_string(id.head), m.data(), dtype));
  }
  return out;
}

Loaded<HeadActivationSet> activations_from_sections(const std::vector<TensorSection>& sections) {
  std::map<HeadId, SignalMatrix> entries;
  std::vector<std::string> warnings;
  Aggregation mode = Aggregation::MeanAllTokens;
  for (const auto& s : sections) {
    HeadId id;
    if (parse_activation_name(s.name, id)) {
      if (s.dims.size() != 2) throw Error(ErrorKind::MalformedFile, "activation '" + s.name + "' is not a matrix");
      entries.emplace(id, SignalMatrix(section_matrix(s)));
    } else if (s.name == "meta/aggregation") {
      try {
        mode = parse_aggregation(section_text(s));
      } catch (const Error&) {
        throw Error(ErrorKind::MalformedFile, "unknown aggregation '" + section_text(s) + "'");
      }
    } else if (!is_known_prefix(s.name)) {
      warnings.push_back("ignoring unknown section '" + s.name + "'");
    }
  }
  if (entries.empty()) throw Error(ErrorKind::MalformedFile, "no act/L*/H* sections");
  return {HeadActivationSet(std::move(entries), mode), std::move(warnings)};
}

std::vector<TensorSection> dictionary_sections(const Dictionary& dict, DType dtype) {
  std::vector<TensorSection> out{matrix_section("dict/unembedding", dict.atoms(), dtype)};
  if (!dict.labels().empty()) out.push_back(strings_section("dict/labels", dict.labels()));
  return out;
}

Dictionary dictionary_from_sections(const std::vector<TensorSection>& sections) {
  const TensorSection& atoms = require(sections, "dict/unembedding");
  if (atoms.dims.size() != 2) throw Error(ErrorKind::MalformedFile, "dict/unembedding is not a matrix");
  std::vector<std::string> labels;
  if (const auto* l = find_section(sections, "dict/labels")) {
    labels = section_strings(*l);
    if (labels.size() != atoms.dims[0]) {
      throw Error(ErrorKind::MalformedFile, "dict/labels has " + std::to_string(labels.size()) + " entries for " +
                                                std::to_string(atoms.dims[0]) + " atoms");
    }
  }
  return Dictionary(section_matrix(atoms), std::move(labels));
}

std::vector<TensorSection> model_to_sections(const ModelBundle& model) {
  model.validate();
  const auto& c = model.config;
  std::ostringstream cfg;
  cfg << "n_layers=" << c.n_layers << "\nn_heads=" << c.n_heads << "\nd_model=" << c.d_model
      << "\nvocab_size=" << c.vocab_size << "\nmax_seq_len=" << c.max_seq_len << "\nseed=" << c.seed << '\n';

  std::vector<TensorSection> out;
  out.push_back(text_section("model/config", cfg.str()));
  out.push_back(matrix_section("model/tok_embed", model.tok_embed));
  out.push_back(matrix_section("model/pos_embed", model.pos_embed));
  for (std::size_t l = 0; l < c.n_layers; ++l) {
    const auto& lw = model.layers[l];
    out.push_back(vector_section(layer_name(l, "attn_norm"), lw.attn_norm));
    out.push_back(matrix_section(layer_name(l, "wq"), lw.wq));
    out.push_back(matrix_section(layer_name(l, "wk"), lw.wk));
    out.push_back(matrix_section(layer_name(l, "wv"), lw.wv));
    out.push_back(matrix_section(layer_name(l, "wo"), lw.wo));
    out.push_back(vector_section(layer_name(l, "mlp_norm"), lw.mlp_norm));
    out.push_back(matrix_section(layer_name(l, "w_in"), lw.w_in));
    out.push_back(matrix_section(layer_name(l, "w_out"), lw.w_out));
  }
  out.push_back(vector_section("model/final_norm", model.final_norm));
  out.push_back(matrix_section("dict/unembedding", model.unembed));
  out.push_back(strings_section("dict/labels", model.vocab));
  return out;
}

Loaded<ModelBundle> model_from_sections(const std::vector<TensorSection>& sections) {
  ModelBundle m;
  std::map<std::string, std::string> kv;
  {
    std::istringstream in(section_text(require(sections, "model/config")));
    std::string line;
    while (std::getline(in, line)) {
      const auto eq = line.find('=');
      if (eq != std::string::npos) kv[line.substr(0, eq)] = line.substr(eq + 1);
    }
  }
  auto field = [&](const char* key) -> std::uint64_t {
    std::uint64_t v = 0;
    const auto it = kv.find(key);
    if (it == kv.end()) throw Error(ErrorKind::MalformedFile, std::string("model/config lacks ") + key);
    auto [ptr, ec] = std::from_chars(it->second.data(), it->second.data() + it->second.size(), v);
    if (ec != std::errc() || ptr != it->second.data() + it->second.size()) {
      throw Error(ErrorKind::MalformedFile, std::string("model/config has a bad ") + key);
    }
    return v;
  };
  m.config.n_layers = field("n_layers");
  m.config.n_heads = field("n_heads");
  m.config.d_model = field("d_model");
  m.config.vocab_size = field("vocab_size");
  m.config.max_seq_len = field("max_seq_len");
  m.config.seed = field("seed");
  try {
    m.config.validate();
  } catch (const Error& e) {
    throw Error(ErrorKind::MalformedFile, e.what());
  }

  m.tok_embed = section_matrix(require(sections, "model/tok_embed"));
  m.pos_embed = section_matrix(require(sections, "model/pos_embed"));
  for (std::size_t l = 0; l < m.config.n_layers; ++l) {
    LayerWeights lw;
    lw.attn_norm = section_vector(require(sections, layer_name(l, "attn_norm")));
    lw.wq = section_matrix(require(sections, layer_name(l, "wq")));
    lw.wk = section_matrix(require(sections, layer_name(l, "wk")));
    lw.wv = section_matrix(require(sections, layer_name(l, "wv")));
    lw.wo = section_matrix(require(sections, layer_name(l, "wo")));
    lw.mlp_norm = section_vector(require(sections, layer_name(l, "mlp_norm")));
    lw.w_in = section_matrix(require(sections, layer_name(l, "w_in")));
    lw.w_out = section_matrix(require(sections, layer_name(l, "w_out")));
    m.layers.push_back(std::move(lw));
  }
  m.final_norm = section_vector(require(sections, "model/final_norm"));
  m.unembed = section_matrix(require(sections, "dict/unembedding"));
  m.vocab = section_strings(require(sections, "dict/labels"));
  try {
    m.validate();
  } catch (const Error& e) {
    throw Error(ErrorKind::MalformedFile, e.what());
  }

  std::vector<std::string> warnings;
  for (const auto& s : sections) {
    if (!is_known_prefix(s.name)) warnings.push_back("ignoring unknown section '" + s.name + "'");
  }
  return {std::move(m), std::move(warnings)};
}

std::uint32_t weights_checksum(const ModelBundle& model) {
  const auto bytes = encode_tensor_file(model_to_sections(model));
  return crc32(std::span<const std::uint8_t>(bytes).first(bytes.size() - 4));
}

void save_activations(const std::filesystem::path& path, const HeadActivationSet& acts) {
  write_tensor_file(path, activation_sections(acts));
}

Loaded<HeadActivationSet> load_activations(const std::filesystem::path& path) {
  return activations_from_sections(read_tensor_file(path));
}

void save_dictionary(const std::filesystem::path& path, const Dictionary& dict) {
  write_tensor_file(path, dictionary_sections(dict));
}

Dictionary load_dictionary(const std::filesystem::path& path) { return dictionary_from_sections(read_tensor_file(path)); }

void save_model(const std::filesystem::path& path, const ModelBundle& model) {
  write_tensor_file(path, model_to_sections(model));
}

Loaded<ModelBundle> load_model(const std::filesystem::path& path) { return model_from_sections(read_tensor_file(path)); }

}  // namespace headpursuit
