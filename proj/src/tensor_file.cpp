#include "headpursuit/tensor_file.hpp"

#include "headpursuit/error.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <limits>
#include <set>

#include <unistd.h>

namespace headpursuit {

static_assert(std::endian::native == std::endian::little, "HPT1 I/O assumes a little-endian host");

std::uint64_t TensorSection::element_count() const {
  std::uint64_t n = 1;
  for (std::uint64_t d : dims) {
    if (d != 0 && n > std::numeric_limits<std::uint64_t>::max() / d) {
      throw Error(ErrorKind::MalformedFile, "section '" + name + "' dims overflow");
    }
    n *= d;
  }
  return n;
}

std::uint32_t crc32(std::span<const std::uint8_t> data) noexcept {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths
  std::size_t offset = 0;
  while (offset < data.size()) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(data.size() - offset, 1u << 30));
    crc = ::crc32(crc, data.data() + offset, chunk);
    offset += chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

const char* to_string(DType dtype) noexcept {
  switch (dtype) {
    case DType::F32: return "f32";
    case DType::F64: return "f64";
    case DType::U8: return "u8";
  }
  return "?";
}

namespace {

std::size_t element_size(DType dtype) {
  switch (dtype) {
    case DType::F32: return 4;
    case DType::F64: return 8;
    case DType::U8: return 1;
  }
  return 0;
}

template <class T>
void put(std::vector<std::uint8_t>& out, T value) {
  std::uint8_t raw[sizeof(T)];
  std::memcpy(raw, &value, sizeof(T));
  out.insert(out.end(), raw, raw + sizeof(T));
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> data) : data_(data) {}

  template <class T>
  T get(const char* what) {
    need(sizeof(T), what);
    T value;
    std::memcpy(&value, data_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return value;
  }

  std::span<const std::uint8_t> take(std::uint64_t n, const char* what) {
    need(n, what);
    auto s = data_.subspan(pos_, static_cast<std::size_t>(n));
    pos_ += static_cast<std::size_t>(n);
    return s;
  }

  void need(std::uint64_t n, const char* what) const {
    if (n > data_.size() - pos_) {
      throw Error(ErrorKind::TruncatedFile, std::string("file ends inside ") + what);
    }
  }

  std::size_t position() const noexcept { return pos_; }
  std::size_t remaining() const noexcept { return data_.size() - pos_; }

 private:
  std::span<const std::uint8_t> data_;
  std::size_t pos_ = 0;
};

void validate_for_write(const TensorSection& s) {
  if (s.name.size() > std::numeric_limits<std::uint16_t>::max()) {
    throw Error(ErrorKind::InvalidArgument, "section name longer than 65535 bytes");
  }
  if (s.dims.size() > std::numeric_limits<std::uint8_t>::max()) {
    throw Error(ErrorKind::InvalidArgument, "section '" + s.name + "' rank exceeds 255");
  }
  const std::uint64_t n = s.element_count();
  const std::size_t have = s.dtype == DType::U8 ? s.bytes.size() : s.values.size();
  if (n != have) {
    throw Error(ErrorKind::InvalidArgument, "section '" + s.name + "' dims describe " + std::to_string(n) +
                                                " elements but holds " + std::to_string(have));
  }
}

}  // namespace

std::vector<std::uint8_t> encode_tensor_file(const std::vector<TensorSection>& sections) {
  std::set<std::string> names;
  for (const auto& s : sections) {
    validate_for_write(s);
    if (!names.insert(s.name).second) throw Error(ErrorKind::InvalidArgument, "duplicate section '" + s.name + "'");
  }
  if (sections.size() > std::numeric_limits<std::uint32_t>::max()) {
    throw Error(ErrorKind::InvalidArgument, "too many sections");
  }

  std::vector<std::uint8_t> out(std::begin(kTensorMagic), std::end(kTensorMagic));
  put<std::uint32_t>(out, kTensorVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(sections.size()));
  for (const auto& s : sections) {
    put<std::uint16_t>(out, static_cast<std::uint16_t>(s.name.size()));
    out.insert(out.end(), s.name.begin(), s.name.end());
    put<std::uint8_t>(out, static_cast<std::uint8_t>(s.dims.size()));
    for (std::uint64_t d : s.dims) put<std::uint64_t>(out, d);
    put<std::uint8_t>(out, static_cast<std::uint8_t>(s.dtype));
    switch (s.dtype) {
      case DType::F32:
        for (double v : s.values) put<float>(out, static_cast<float>(v));
        break;
      case DType::F64:
        for (double v : s.values) put<double>(out, v);
        break;
      case DType::U8:
        out.insert(out.end(), s.bytes.begin(), s.bytes.end());
        break;
    }
  }
  put<std::uint32_t>(out, crc32(out));
  return out;
}

std::vector<TensorSection> decode_tensor_file(std::span<const std::uint8_t> data) {
  Reader in(data);
  const auto magic = in.take(4, "magic");
  if (std::memcmp(magic.data(), kTensorMagic, 4) != 0) throw Error(ErrorKind::BadMagic, "not an HPT1 file");
  const auto version = in.get<std::uint32_t>("version");
  if (version != kTensorVersion) {
    throw Error(ErrorKind::UnsupportedVersion, "version " + std::to_string(version) + " (reader supports 1)");
  }
  const auto count = in.get<std::uint32_t>("section count");

  std::vector<TensorSection> sections;
  std::set<std::string> names;
  for (std::uint32_t i = 0; i < count; ++i) {
    TensorSection s;
    const auto name_len = in.get<std::uint16_t>("section name length");
    const auto name = in.take(name_len, "section name");
    s.name.assign(name.begin(), name.end());
    const auto rank = in.get<std::uint8_t>("rank");
    for (std::uint8_t r = 0; r < rank; ++r) s.dims.push_back(in.get<std::uint64_t>("dims"));
    const auto tag = in.get<std::uint8_t>("dtype");
    if (tag > static_cast<std::uint8_t>(DType::U8)) {
      throw Error(ErrorKind::MalformedFile, "section '" + s.name + "' has unknown dtype " + std::to_string(tag));
    }
    s.dtype = static_cast<DType>(tag);
    if (!names.insert(s.name).second) throw Error(ErrorKind::MalformedFile, "duplicate section '" + s.name + "'");

    const std::uint64_t n = s.element_count();
    const std::size_t width = element_size(s.dtype);
    if (n > in.remaining() / width) {
      throw Error(ErrorKind::TruncatedFile, "section '" + s.name + "' payload runs past the end of the file");
    }
    const auto payload = in.take(n * width, "payload");
    if (s.dtype == DType::U8) {
      s.bytes.assign(payload.begin(), payload.end());
    } else {
      s.values.resize(static_cast<std::size_t>(n));
      for (std::size_t k = 0; k < s.values.size(); ++k) {
        if (s.dtype == DType::F32) {
          float f;
          std::memcpy(&f, payload.data() + 4 * k, 4);
          s.values[k] = f;
        } else {
          std::memcpy(&s.values[k], payload.data() + 8 * k, 8);
        }
      }
    }
    sections.push_back(std::move(s));
  }

  const std::size_t body = in.position();
  const auto stored = in.get<std::uint32_t>("checksum");
  if (in.remaining() != 0) {
    throw Error(ErrorKind::MalformedFile, std::to_string(in.remaining()) + " unexpected bytes after the checksum");
  }
  if (crc32(data.first(body)) != stored) throw Error(ErrorKind::CrcMismatch, "checksum does not match contents");
  return sections;
}

void write_tensor_file(const std::filesystem::path& path, const std::vector<TensorSection>& sections) {
  const std::vector<std::uint8_t> bytes = encode_tensor_file(sections);
  std::filesystem::path tmp = path;
  tmp += ".tmp" + std::to_string(::getpid());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::IoError, "cannot open " + tmp.string() + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) {
      std::error_code ignored;
      std::filesystem::remove(tmp, ignored);
      throw Error(ErrorKind::IoError, "short write to " + tmp.string());
    }
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    throw Error(ErrorKind::IoError, "cannot move file into place at " + path.string());
  }
}

std::vector<TensorSection> read_tensor_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::IoError, "cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw Error(ErrorKind::IoError, "read error on " + path.string());
  return decode_tensor_file(bytes);
}

}  // namespace headpursuit
