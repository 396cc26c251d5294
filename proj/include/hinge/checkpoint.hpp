// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

// HNGW container:
//   "HNGW" | u32 version | u32 count | count × tensor
//   tensor = u16 name_len | name | u8 ndim | ndim × u64 dim | payload
// All integers little-endian. Payload is f32 LE, except for tensors whose
// names end in ".mask", ".mode" or ".scheme", which hold one byte per entry.

namespace hinge {

struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline constexpr std::uint32_t kHngwVersion = 1;
inline constexpr std::size_t kMaxRank = 4;

inline bool is_byte_tensor(std::string_view name) {
  for (std::string_view s : {".mask", ".mode", ".scheme"})
    if (name.size() >= s.size() && name.substr(name.size() - s.size()) == s) return true;
  return false;
}

struct Tensor {
  std::string name;
  std::vector<std::uint64_t> dims;
  std::vector<float> values;        // f32 tensors
  std::vector<std::uint8_t> bytes;  // byte tensors

  std::uint64_t numel() const {
    std::uint64_t n = 1;
    for (auto d : dims) n *= d;
    return n;
  }
  bool operator==(const Tensor&) const = default;
};

inline Tensor f32_tensor(std::string name, std::vector<std::uint64_t> dims,
                         std::vector<float> values) {
  Tensor t{std::move(name), std::move(dims), std::move(values), {}};
  if (is_byte_tensor(t.name) || t.values.size() != t.numel())
    throw FormatError("tensor " + t.name + ": bad f32 payload");
  return t;
}

inline Tensor byte_tensor(std::string name, std::vector<std::uint8_t> bytes) {
  const auto n = static_cast<std::uint64_t>(bytes.size());
  Tensor t{std::move(name), {n}, {}, std::move(bytes)};
  if (!is_byte_tensor(t.name)) throw FormatError("tensor " + t.name + ": not a byte tensor name");
  return t;
}

namespace detail {

template <class T>
void put_le(std::string& out, T v) {
  for (std::size_t i = 0; i < sizeof(T); ++i)
    out.push_back(static_cast<char>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xFF));
}

class Reader {
 public:
  explicit Reader(std::string_view buf) : buf_(buf) {}

  template <class T>
  T get() {
    need(sizeof(T));
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i)
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf_[pos_ + i])) << (8 * i);
    pos_ += sizeof(T);
    return static_cast<T>(v);
  }

  std::string_view take(std::size_t n) {
    need(n);
    auto s = buf_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == buf_.size(); }

 private:
  void need(std::size_t n) const {
    if (buf_.size() - pos_ < n) throw FormatError("HNGW: truncated at byte " + std::to_string(pos_));
  }
  std::string_view buf_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::string encode_hngw(const std::vector<Tensor>& tensors) {
  std::string out = "HNGW";
  detail::put_le<std::uint32_t>(out, kHngwVersion);
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& t : tensors) {
    if (t.name.empty() || t.name.size() > 0xFFFF) throw FormatError("HNGW: bad tensor name");
    if (t.dims.empty() || t.dims.size() > kMaxRank)
      throw FormatError("HNGW: tensor " + t.name + " has unsupported rank");
    detail::put_le<std::uint16_t>(out, static_cast<std::uint16_t>(t.name.size()));
    out += t.name;
    detail::put_le<std::uint8_t>(out, static_cast<std::uint8_t>(t.dims.size()));
    for (auto d : t.dims) detail::put_le<std::uint64_t>(out, d);
    if (is_byte_tensor(t.name)) {
      if (t.bytes.size() != t.numel()) throw FormatError("HNGW: payload size of " + t.name);
      out.append(reinterpret_cast<const char*>(t.bytes.data()), t.bytes.size());
    } else {
      if (t.values.size() != t.numel()) throw FormatError("HNGW: payload size of " + t.name);
      for (float f : t.values) detail::put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(f));
    }
  }
  return out;
}

inline std::vector<Tensor> decode_hngw(std::string_view buf) {
  detail::Reader r(buf);
  if (r.take(4) != "HNGW") throw FormatError("HNGW: bad magic");
  const auto version = r.get<std::uint32_t>();
  if (version != kHngwVersion) throw FormatError("HNGW: unsupported version " + std::to_string(version));
  const auto count = r.get<std::uint32_t>();
  std::vector<Tensor> out;
  for (std::uint32_t i = 0; i < count; ++i) {
    Tensor t;
    t.name = std::string(r.take(r.get<std::uint16_t>()));
    const auto ndim = r.get<std::uint8_t>();
    if (ndim == 0 || ndim > kMaxRank) throw FormatError("HNGW: tensor " + t.name + " rank");
    for (std::uint8_t d = 0; d < ndim; ++d) t.dims.push_back(r.get<std::uint64_t>());
    const std::uint64_t n = t.numel();
    if (n > buf.size()) throw FormatError("HNGW: tensor " + t.name + " larger than file");
    if (is_byte_tensor(t.name)) {
      const auto s = r.take(n);
      t.bytes.assign(s.begin(), s.end());
    } else {
      t.values.resize(n);
      for (auto& f : t.values) f = std::bit_cast<float>(r.get<std::uint32_t>());
    }
    out.push_back(std::move(t));
  }
  if (!r.done()) throw FormatError("HNGW: trailing bytes");
  return out;
}

inline void write_hngw(const std::string& path, const std::vector<Tensor>& tensors) {
  const std::string bytes = encode_hngw(tensors);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open " + path + " for writing");
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw std::runtime_error("write failed: " + path);
}

inline std::vector<Tensor> read_hngw(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path);
  const std::string bytes{std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
  return decode_hngw(bytes);
}

}  // namespace hinge
