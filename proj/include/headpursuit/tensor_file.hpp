#pragma once

// HPT1 tensor container. All integers little-endian.
//
//   "HPT1"                     4 bytes
//   version                    u32 (= 1)
//   section count              u32
//   per section:
//     name length              u16, then that many UTF-8 bytes
//     rank                     u8
//     dims                     rank x u64
//     dtype                    u8: 0 = f32, 1 = f64, 2 = u8 (raw bytes)
//     payload                  prod(dims) elements, row-major
//   CRC32 (IEEE)               u32 over every preceding byte
//
// String lists (token labels) are stored as a rank-1 u8 section holding the
// strings joined by '\0'.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace headpursuit {

inline constexpr char kTensorMagic[4] = {'H', 'P', 'T', '1'};
inline constexpr std::uint32_t kTensorVersion = 1;

enum class DType : std::uint8_t { F32 = 0, F64 = 1, U8 = 2 };

struct TensorSection {
  std::string name;
  std::vector<std::uint64_t> dims;
  DType dtype = DType::F64;
  std::vector<double> values;      // F32 / F64 payloads (F32 upcast on read)
  std::vector<std::uint8_t> bytes; // U8 payload

  std::uint64_t element_count() const;
};

std::uint32_t crc32(std::span<const std::uint8_t> data) noexcept;

std::vector<std::uint8_t> encode_tensor_file(const std::vector<TensorSection>& sections);
std::vector<TensorSection> decode_tensor_file(std::span<const std::uint8_t> data);

/// Writes to a temporary sibling and renames it over `path`.
void write_tensor_file(const std::filesystem::path& path, const std::vector<TensorSection>& sections);
std::vector<TensorSection> read_tensor_file(const std::filesystem::path& path);

const char* to_string(DType dtype) noexcept;

}  // namespace headpursuit
