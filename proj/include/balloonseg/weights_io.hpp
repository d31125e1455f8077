#pragma once

// Weight file layout (little-endian):
//   "BSEG" | u32 version=1 | u32 tensor_count
//   per tensor: u16 name_len | name (UTF-8) | u8 dtype (0=f32) | u8 rank |
//               u32 dims[rank] | row-major f32 payload

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <stdexcept>
#include <string>
#include <vector>

namespace bseg {

class WeightFileError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct NamedTensor {
  std::string name;
  std::vector<std::uint32_t> dims;
  std::vector<float> values;

  std::size_t element_count() const {
    std::size_t n = 1;
    for (auto d : dims) n *= d;
    return n;
  }
};

inline constexpr std::uint32_t kWeightFileVersion = 1;

namespace detail {

class ByteWriter {
 public:
  void u8(std::uint8_t v) { bytes_.push_back(static_cast<char>(v)); }
  void u16(std::uint16_t v) {
    for (int i = 0; i < 2; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void raw(const std::string& s) { bytes_.insert(bytes_.end(), s.begin(), s.end()); }
  const std::vector<char>& bytes() const { return bytes_; }

 private:
  std::vector<char> bytes_;
};

class ByteReader {
 public:
  explicit ByteReader(const std::vector<char>& bytes) : bytes_(bytes) {}

  std::uint8_t u8() {
    need(1);
    return static_cast<std::uint8_t>(bytes_[pos_++]);
  }
  std::uint16_t u16() {
    need(2);
    std::uint16_t v = 0;
    for (int i = 0; i < 2; ++i) v |= static_cast<std::uint16_t>(static_cast<std::uint8_t>(bytes_[pos_++]) << (8 * i));
    return v;
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<std::uint8_t>(bytes_[pos_++])) << (8 * i);
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  std::string str(std::size_t n) {
    need(n);
    std::string s(bytes_.data() + pos_, n);
    pos_ += n;
    return s;
  }
  bool at_end() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) {
      throw WeightFileError("weight file truncated at byte " + std::to_string(pos_));
    }
  }
  const std::vector<char>& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::vector<char> encode_weight_file(const std::vector<NamedTensor>& tensors) {
  detail::ByteWriter w;
  w.raw("BSEG");
  w.u32(kWeightFileVersion);
  w.u32(static_cast<std::uint32_t>(tensors.size()));
  for (const auto& t : tensors) {
    if (t.name.size() > 0xFFFF) throw WeightFileError("tensor name too long: " + t.name.substr(0, 64));
    if (t.dims.size() > 0xFF) throw WeightFileError("tensor rank too large: " + t.name);
    if (t.values.size() != t.element_count()) {
      throw WeightFileError("tensor '" + t.name + "' payload does not match its dims");
    }
    w.u16(static_cast<std::uint16_t>(t.name.size()));
    w.raw(t.name);
    w.u8(0);
    w.u8(static_cast<std::uint8_t>(t.dims.size()));
    for (auto d : t.dims) w.u32(d);
    for (float v : t.values) w.f32(v);
  }
  return w.bytes();
}

inline std::vector<NamedTensor> decode_weight_file(const std::vector<char>& bytes) {
  detail::ByteReader r(bytes);
  if (r.str(4) != "BSEG") throw WeightFileError("not a weight file (bad magic)");
  const auto version = r.u32();
  if (version != kWeightFileVersion) {
    throw WeightFileError("unsupported weight file version " + std::to_string(version));
  }
  const auto count = r.u32();
  std::vector<NamedTensor> out;
  out.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedTensor t;
    t.name = r.str(r.u16());
    const auto dtype = r.u8();
    if (dtype != 0) throw WeightFileError("tensor '" + t.name + "' has unsupported dtype " + std::to_string(dtype));
    const auto rank = r.u8();
    for (std::uint8_t d = 0; d < rank; ++d) t.dims.push_back(r.u32());
    const std::size_t n = t.element_count();
    t.values.resize(n);
    for (std::size_t k = 0; k < n; ++k) t.values[k] = r.f32();
    out.push_back(std::move(t));
  }
  if (!r.at_end()) throw WeightFileError("trailing bytes after last tensor");
  return out;
}

inline void write_weight_file(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors) {
  const auto bytes = encode_weight_file(tensors);
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw WeightFileError("cannot open " + path.string() + " for writing");
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw WeightFileError("failed writing " + path.string());
}

inline std::vector<NamedTensor> read_weight_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw WeightFileError("cannot open " + path.string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  return decode_weight_file(bytes);
}

}  // namespace bseg
