#pragma once

// Mapping between domain objects and HPT1 sections.
//
// Section names:
//   act/L{l}/H{h}       n x d head activations
//   meta/aggregation    u8 text, e.g. "mean_all_tokens"
//   dict/unembedding    v x d dictionary
//   dict/labels         u8, v token strings joined by '\0'
//   model/...           toy transformer weights (see model_to_sections)

#include "headpursuit/head_analysis.hpp"
#include "headpursuit/tensor_file.hpp"
#include "headpursuit/toy_transformer.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace headpursuit {

TensorSection matrix_section(std::string name, const Matrix& m, DType dtype = DType::F64);
TensorSection vector_section(std::string name, const Vector& v, DType dtype = DType::F64);
TensorSection strings_section(std::string name, const std::vector<std::string>& strings);
TensorSection text_section(std::string name, const std::string& text);

Matrix section_matrix(const TensorSection& s);  // rank 2, or rank 1 as a single row
Vector section_vector(const TensorSection& s);  // rank 1
std::vector<std::string> section_strings(const TensorSection& s);
std::string section_text(const TensorSection& s);

const TensorSection* find_section(const std::vector<TensorSection>& sections, const std::string& name);

template <class T>
struct Loaded {
  T value;
  std::vector<std::string> warnings;  // ignored sections
};

std::vector<TensorSection> activation_sections(const HeadActivationSet& acts, DType dtype = DType::F64);
Loaded<HeadActivationSet> activations_from_sections(const std::vector<TensorSection>& sections);

std::vector<TensorSection> dictionary_sections(const Dictionary& dict, DType dtype = DType::F64);
Dictionary dictionary_from_sections(const std::vector<TensorSection>& sections);

/// Includes dict/unembedding and dict/labels, so a bundle also serves as a dictionary file.
std::vector<TensorSection> model_to_sections(const ModelBundle& model);
Loaded<ModelBundle> model_from_sections(const std::vector<TensorSection>& sections);

/// CRC32 of the encoded weight sections.
std::uint32_t weights_checksum(const ModelBundle& model);

void save_activations(const std::filesystem::path& path, const HeadActivationSet& acts);
Loaded<HeadActivationSet> load_activations(const std::filesystem::path& path);
void save_dictionary(const std::filesystem::path& path, const Dictionary& dict);
Dictionary load_dictionary(const std::filesystem::path& path);
void save_model(const std::filesystem::path& path, const ModelBundle& model);
Loaded<ModelBundle> load_model(const std::filesystem::path& path);

}  // namespace headpursuit
