#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "dgm/bitset.hpp"
#include "dgm/tensor.hpp"

namespace dgm {

/// Length-prefixed binary container for model state. Layout (little-endian):
///
///   8 bytes  magic "DGMCKPT1"
///   u32      container version (1)
///   records: u32 name length | name bytes | u8 kind | u64 payload length | payload
///
/// Kinds: 1 = f64 tensor (u64 rows, u64 cols, raw doubles)
///        2 = f32 tensor (u64 rows, u64 cols, raw floats)
///        3 = bitset     (u64 bit count, u64 words)
///        4 = i64 list   (raw int64s)
///        5 = utf-8 string
/// Tensor payloads are raw IEEE bytes, so a save/load round trip is exact.
class Checkpoint {
 public:
  static constexpr char kMagic[9] = "DGMCKPT1";
  static constexpr std::uint32_t kVersion = 1;

  enum Kind : std::uint8_t { F64 = 1, F32 = 2, Bits = 3, I64s = 4, Str = 5 };

  struct Record {
    Kind kind;
    std::vector<std::uint8_t> payload;
  };

  // ---- writers ----

  void put_tensor(const std::string& name, const Tensor<double>& t) { put_tensor_impl(name, t, F64); }
  void put_tensor(const std::string& name, const Tensor<float>& t) { put_tensor_impl(name, t, F32); }

  void put_bits(const std::string& name, const Bitset& b) {
    Record r;
    r.kind = Bits;
    append_u64(r.payload, static_cast<std::uint64_t>(b.size()));
    for (std::uint64_t w : b.words()) append_u64(r.payload, w);
    records_[name] = std::move(r);
  }

  void put_i64s(const std::string& name, const std::vector<std::int64_t>& v) {
    Record r;
    r.kind = I64s;
    for (std::int64_t x : v) append_u64(r.payload, static_cast<std::uint64_t>(x));
    records_[name] = std::move(r);
  }

  void put_str(const std::string& name, const std::string& s) {
    Record r;
    r.kind = Str;
    r.payload.assign(s.begin(), s.end());
    records_[name] = std::move(r);
  }

  // ---- readers ----

  bool has(const std::string& name) const { return records_.count(name) != 0; }

  template <typename R>
  Tensor<R> get_tensor(const std::string& name) const {
    const Record& r = find(name, sizeof(R) == 8 ? F64 : F32);
    const std::uint64_t rows = read_u64(r.payload, 0), cols = read_u64(r.payload, 8);
    Tensor<R> t(static_cast<std::int64_t>(rows), static_cast<std::int64_t>(cols));
    if (r.payload.size() != 16 + rows * cols * sizeof(R))
      fail("checkpoint: tensor record " + name + " has inconsistent length");
    std::memcpy(t.data().data(), r.payload.data() + 16, rows * cols * sizeof(R));
    return t;
  }

  Bitset get_bits(const std::string& name) const {
    const Record& r = find(name, Bits);
    const std::uint64_t n = read_u64(r.payload, 0);
    Bitset b(static_cast<std::int64_t>(n));
    for (std::size_t i = 0; i < b.words().size(); ++i)
      b.words()[i] = read_u64(r.payload, 8 + 8 * i);
    return b;
  }

  std::vector<std::int64_t> get_i64s(const std::string& name) const {
    const Record& r = find(name, I64s);
    std::vector<std::int64_t> v(r.payload.size() / 8);
    for (std::size_t i = 0; i < v.size(); ++i)
      v[i] = static_cast<std::int64_t>(read_u64(r.payload, 8 * i));
    return v;
  }

  std::string get_str(const std::string& name) const {
    const Record& r = find(name, Str);
    return std::string(r.payload.begin(), r.payload.end());
  }

  // ---- file I/O ----

  void write(const std::string& path) const {
    std::ofstream os(path, std::ios::binary);
    if (!os) fail("checkpoint: cannot open " + path + " for writing");
    os.write(kMagic, 8);
    write_u32(os, kVersion);
    for (const auto& [name, rec] : records_) {
      write_u32(os, static_cast<std::uint32_t>(name.size()));
      os.write(name.data(), static_cast<std::streamsize>(name.size()));
      os.put(static_cast<char>(rec.kind));
      write_u64(os, rec.payload.size());
      os.write(reinterpret_cast<const char*>(rec.payload.data()),
               static_cast<std::streamsize>(rec.payload.size()));
    }
    if (!os) fail("checkpoint: write failed for " + path);
  }

  static Checkpoint read(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) fail("checkpoint: cannot open " + path);
    char magic[8];
    is.read(magic, 8);
    if (!is || std::memcmp(magic, kMagic, 8) != 0)
      fail("checkpoint: bad magic in " + path);
    const std::uint32_t version = read_u32(is);
    if (version != kVersion)
      fail("checkpoint: unsupported container version " + std::to_string(version));
    Checkpoint ck;
    while (true) {
      std::uint32_t name_len;
      if (!is.read(reinterpret_cast<char*>(&name_len), 4)) break;
      std::string name(name_len, '\0');
      is.read(name.data(), name_len);
      Record r;
      r.kind = static_cast<Kind>(is.get());
      std::uint64_t len = 0;
      is.read(reinterpret_cast<char*>(&len), 8);
      r.payload.resize(len);
      is.read(reinterpret_cast<char*>(r.payload.data()), static_cast<std::streamsize>(len));
      if (!is) fail("checkpoint: truncated record " + name + " in " + path);
      ck.records_[name] = std::move(r);
    }
    return ck;
  }

  const std::map<std::string, Record>& records() const { return records_; }

 private:
  template <typename R>
  void put_tensor_impl(const std::string& name, const Tensor<R>& t, Kind kind) {
    Record r;
    r.kind = kind;
    append_u64(r.payload, static_cast<std::uint64_t>(t.rows()));
    append_u64(r.payload, static_cast<std::uint64_t>(t.cols()));
    const std::size_t bytes = static_cast<std::size_t>(t.size()) * sizeof(R);
    const std::size_t off = r.payload.size();
    r.payload.resize(off + bytes);
    std::memcpy(r.payload.data() + off, t.data().data(), bytes);
    records_[name] = std::move(r);
  }

  const Record& find(const std::string& name, Kind kind) const {
    auto it = records_.find(name);
    if (it == records_.end()) fail("checkpoint: missing record " + name);
    if (it->second.kind != kind) fail("checkpoint: record " + name + " has unexpected kind");
    return it->second;
  }

  static void append_u64(std::vector<std::uint8_t>& v, std::uint64_t x) {
    for (int i = 0; i < 8; ++i) v.push_back(static_cast<std::uint8_t>(x >> (8 * i)));
  }
  static std::uint64_t read_u64(const std::vector<std::uint8_t>& v, std::size_t off) {
    if (off + 8 > v.size()) fail("checkpoint: record too short");
    std::uint64_t x = 0;
    for (int i = 0; i < 8; ++i) x |= std::uint64_t(v[off + static_cast<std::size_t>(i)]) << (8 * i);
    return x;
  }
  static void write_u32(std::ostream& os, std::uint32_t x) {
    os.write(reinterpret_cast<const char*>(&x), 4);
  }
  static void write_u64(std::ostream& os, std::uint64_t x) {
    os.write(reinterpret_cast<const char*>(&x), 8);
  }
  static std::uint32_t read_u32(std::istream& is) {
    std::uint32_t x = 0;
    is.read(reinterpret_cast<char*>(&x), 4);
    return x;
  }

  std::map<std::string, Record> records_;
};

}  // namespace dgm
