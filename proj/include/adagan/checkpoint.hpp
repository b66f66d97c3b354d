#pragma once

// Single-file checkpoint container: versioned header, architecture name,
// ordered key/value metadata, and named tensors as little-endian float32.
// Serialization is byte-exact: save(load(f)) reproduces f.

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "adagan/tensor.hpp"

namespace adagan {

struct Checkpoint {
  uint32_t version = 1;
  std::string arch;
  std::vector<std::pair<std::string, std::string>> meta;
  std::vector<std::pair<std::string, Tensor>> tensors;

  void set_meta(const std::string& key, const std::string& value) {
    for (auto& kv : meta) {
      if (kv.first == key) {
        kv.second = value;
        return;
      }
    }
    meta.emplace_back(key, value);
  }

  std::optional<std::string> get_meta(const std::string& key) const {
    for (const auto& kv : meta) {
      if (kv.first == key) return kv.second;
    }
    return std::nullopt;
  }

  const Tensor* find(const std::string& name) const {
    for (const auto& nt : tensors) {
      if (nt.first == name) return &nt.second;
    }
    return nullptr;
  }
};

namespace detail {

constexpr char kCheckpointMagic[8] = {'A', 'D', 'A', 'G', 'A', 'N', 'C', 'K'};

inline void put_u32(std::string& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline void put_u64(std::string& out, uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline void put_str(std::string& out, const std::string& s) {
  put_u32(out, static_cast<uint32_t>(s.size()));
  out.append(s);
}

inline void put_f32(std::string& out, float f) {
  uint32_t bits;
  std::memcpy(&bits, &f, 4);
  put_u32(out, bits);
}

class Reader {
 public:
  Reader(const char* data, size_t n) : p_(data), end_(data + n) {}

  uint32_t u32() {
    need(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(static_cast<unsigned char>(p_[i])) << (8 * i);
    p_ += 4;
    return v;
  }

  uint64_t u64() {
    need(8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(static_cast<unsigned char>(p_[i])) << (8 * i);
    p_ += 8;
    return v;
  }

  std::string str() {
    const uint32_t n = u32();
    need(n);
    std::string s(p_, n);
    p_ += n;
    return s;
  }

  float f32() {
    const uint32_t bits = u32();
    float f;
    std::memcpy(&f, &bits, 4);
    return f;
  }

  void raw(char* dst, size_t n) {
    need(n);
    std::memcpy(dst, p_, n);
    p_ += n;
  }

  bool done() const { return p_ == end_; }

 private:
  void need(size_t n) {
    if (static_cast<size_t>(end_ - p_) < n) throw FormatError("checkpoint: truncated file");
  }
  const char* p_;
  const char* end_;
};

}  // namespace detail

inline std::string serialize_checkpoint(const Checkpoint& ck) {
  std::string out;
  out.append(detail::kCheckpointMagic, 8);
  detail::put_u32(out, ck.version);
  detail::put_str(out, ck.arch);
  detail::put_u32(out, static_cast<uint32_t>(ck.meta.size()));
  for (const auto& kv : ck.meta) {
    detail::put_str(out, kv.first);
    detail::put_str(out, kv.second);
  }
  detail::put_u32(out, static_cast<uint32_t>(ck.tensors.size()));
  for (const auto& nt : ck.tensors) {
    detail::put_str(out, nt.first);
    const Tensor& t = nt.second;
    detail::put_u32(out, static_cast<uint32_t>(t.rank()));
    for (int a = 0; a < t.rank(); ++a) detail::put_u64(out, static_cast<uint64_t>(t.extent(a)));
    // Bulk little-endian copy on LE hosts; byte-by-byte otherwise.
    if constexpr (std::endian::native == std::endian::little) {
      const size_t begin = out.size();
      out.resize(begin + sizeof(float) * static_cast<size_t>(t.size()));
      std::memcpy(out.data() + begin, t.data(), sizeof(float) * static_cast<size_t>(t.size()));
    } else {
      for (int64_t i = 0; i < t.size(); ++i) detail::put_f32(out, t[i]);
    }
  }
  return out;
}

inline Checkpoint deserialize_checkpoint(const std::string& bytes) {
  detail::Reader r(bytes.data(), bytes.size());
  char magic[8];
  r.raw(magic, 8);
  if (std::memcmp(magic, detail::kCheckpointMagic, 8) != 0) {
    throw FormatError("checkpoint: bad magic");
  }
  Checkpoint ck;
  ck.version = r.u32();
  if (ck.version != 1) {
    throw FormatError("checkpoint: unsupported version " + std::to_string(ck.version));
  }
  ck.arch = r.str();
  const uint32_t n_meta = r.u32();
  for (uint32_t i = 0; i < n_meta; ++i) {
    std::string k = r.str();
    std::string v = r.str();
    ck.meta.emplace_back(std::move(k), std::move(v));
  }
  const uint32_t n_tensors = r.u32();
  for (uint32_t i = 0; i < n_tensors; ++i) {
    std::string name = r.str();
    const uint32_t rank = r.u32();
    Shape shape(rank);
    for (uint32_t a = 0; a < rank; ++a) shape[a] = static_cast<int64_t>(r.u64());
    Tensor t = Tensor::uninit(shape);
    if constexpr (std::endian::native == std::endian::little) {
      r.raw(reinterpret_cast<char*>(t.data()), sizeof(float) * static_cast<size_t>(t.size()));
    } else {
      for (int64_t e = 0; e < t.size(); ++e) t[e] = r.f32();
    }
    ck.tensors.emplace_back(std::move(name), std::move(t));
  }
  if (!r.done()) throw FormatError("checkpoint: trailing bytes");
  return ck;
}

inline void save_checkpoint(const std::string& path, const Checkpoint& ck) {
  const std::string bytes = serialize_checkpoint(ck);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open '" + path + "' for writing");
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("write failed for '" + path + "'");
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open '" + path + "'");
  std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return deserialize_checkpoint(bytes);
}

}  // namespace adagan
