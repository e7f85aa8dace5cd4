#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "bridgepolicy/errors.hpp"

namespace bridgepolicy::io {

static_assert(std::endian::native == std::endian::little, "container I/O assumes a little-endian host");

// Layout: 8-byte magic | u32 version | u64 manifest length | manifest bytes |
// u64 array count | per array: u32 name length, name, u8 dtype (0 = f64, 1 = i64),
// u32 rank, u64 dims[rank], raw little-endian data.
struct NamedArray {
  std::string name;
  std::vector<std::uint64_t> shape;
  std::variant<std::vector<double>, std::vector<std::int64_t>> data;

  std::uint64_t numel() const {
    std::uint64_t n = 1;
    for (auto d : shape) n *= d;
    return n;
  }
  const std::vector<double>& f64() const {
    if (!std::holds_alternative<std::vector<double>>(data)) throw FormatError("array '" + name + "' is not f64");
    return std::get<std::vector<double>>(data);
  }
  const std::vector<std::int64_t>& i64() const {
    if (!std::holds_alternative<std::vector<std::int64_t>>(data)) throw FormatError("array '" + name + "' is not i64");
    return std::get<std::vector<std::int64_t>>(data);
  }
};

struct Container {
  std::string manifest;
  std::vector<NamedArray> arrays;

  const NamedArray& at(const std::string& name) const {
    for (const auto& a : arrays)
      if (a.name == name) return a;
    throw FormatError("missing array '" + name + "'");
  }
  bool contains(const std::string& name) const {
    for (const auto& a : arrays)
      if (a.name == name) return true;
    return false;
  }
  void add(std::string name, std::vector<std::uint64_t> shape, std::vector<double> values) {
    arrays.push_back({std::move(name), std::move(shape), std::move(values)});
  }
  void add(std::string name, std::vector<std::uint64_t> shape, std::vector<std::int64_t> values) {
    arrays.push_back({std::move(name), std::move(shape), std::move(values)});
  }
};

namespace detail {

template <typename T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : b_(bytes) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, b_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string bytes(std::uint64_t n) {
    need(n);
    std::string s = b_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  template <typename T>
  std::vector<T> values(std::uint64_t n) {
    if (n > (b_.size() - pos_) / sizeof(T)) throw FormatError("truncated file");
    std::vector<T> v(n);
    if (n) std::memcpy(v.data(), b_.data() + pos_, n * sizeof(T));
    pos_ += n * sizeof(T);
    return v;
  }
  bool done() const { return pos_ == b_.size(); }

 private:
  void need(std::uint64_t n) const {
    if (n > b_.size() - pos_) throw FormatError("truncated file");
  }
  const std::string& b_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::string serialize(const std::string& magic, std::uint32_t version, const Container& c) {
  if (magic.size() != 8) throw FormatError("magic must be 8 bytes");
  std::string out = magic;
  detail::put<std::uint32_t>(out, version);
  detail::put<std::uint64_t>(out, c.manifest.size());
  out += c.manifest;
  detail::put<std::uint64_t>(out, c.arrays.size());
  for (const auto& a : c.arrays) {
    const bool is_f64 = std::holds_alternative<std::vector<double>>(a.data);
    const std::size_t n = is_f64 ? a.f64().size() : a.i64().size();
    if (n != a.numel()) throw FormatError("array '" + a.name + "' data does not match its shape");
    detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(a.name.size()));
    out += a.name;
    detail::put<std::uint8_t>(out, is_f64 ? 0 : 1);
    detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(a.shape.size()));
    for (auto d : a.shape) detail::put<std::uint64_t>(out, d);
    const char* p = is_f64 ? reinterpret_cast<const char*>(a.f64().data()) : reinterpret_cast<const char*>(a.i64().data());
    out.append(p, n * 8);
  }
  return out;
}

inline Container deserialize(const std::string& bytes, const std::string& magic, std::uint32_t version) {
  detail::Reader r(bytes);
  if (r.bytes(8) != magic) throw FormatError("bad magic (not a " + magic.substr(0, magic.find('\0')) + " file)");
  const auto v = r.get<std::uint32_t>();
  if (v != version)
    throw FormatError("format version mismatch: file has " + std::to_string(v) + ", expected " + std::to_string(version));
  Container c;
  c.manifest = r.bytes(r.get<std::uint64_t>());
  const auto count = r.get<std::uint64_t>();
  for (std::uint64_t i = 0; i < count; ++i) {
    NamedArray a;
    a.name = r.bytes(r.get<std::uint32_t>());
    const auto dtype = r.get<std::uint8_t>();
    const auto rank = r.get<std::uint32_t>();
    if (rank > 8) throw FormatError("array '" + a.name + "' has implausible rank");
    for (std::uint32_t k = 0; k < rank; ++k) a.shape.push_back(r.get<std::uint64_t>());
    if (dtype == 0)
      a.data = r.values<double>(a.numel());
    else if (dtype == 1)
      a.data = r.values<std::int64_t>(a.numel());
    else
      throw FormatError("array '" + a.name + "' has unknown dtype");
    c.arrays.push_back(std::move(a));
  }
  if (!r.done()) throw FormatError("trailing bytes after last array");
  return c;
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path);
}

}  // namespace bridgepolicy::io
