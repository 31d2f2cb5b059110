#pragma once

// Parameter checkpoint container. All integers and reals are little-endian.
//
//   offset  size  field
//   0       4     magic "CFCK"
//   4       1     version (currently 1)
//   5       4     u32 record count
//   then per record:
//           4     u32 name length L
//           L     name bytes (UTF-8, no terminator)
//           4     u32 rank R
//           8·R   u64 extents
//           8·N   f64 values, N = product of extents (row-major)

#include <array>
#include <bit>
#include <cstdint>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "contfuse/tensor.hpp"

namespace contfuse {

struct CheckpointError : std::runtime_error {
  using std::runtime_error::runtime_error;
};


inline constexpr std::array<char, 4> kCheckpointMagic{'C', 'F', 'C', 'K'};
inline constexpr std::uint8_t kCheckpointVersion = 1;

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}
inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

class ByteReader {
 public:
  explicit ByteReader(const std::string& buf) : buf_(buf) {}
  std::uint64_t take(int bytes) {
    if (pos_ + static_cast<std::size_t>(bytes) > buf_.size())
      throw CheckpointError("checkpoint truncated at offset " + std::to_string(pos_));
    std::uint64_t v = 0;
    for (int i = 0; i < bytes; ++i)
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf_[pos_ + i])) << (8 * i);
    pos_ += static_cast<std::size_t>(bytes);
    return v;
  }
  std::string take_string(std::size_t n) {
    if (pos_ + n > buf_.size()) throw CheckpointError("checkpoint truncated in name");
    std::string s = buf_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == buf_.size(); }
  std::size_t pos() const { return pos_; }

 private:
  const std::string& buf_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::string encode_checkpoint(const NamedTensors& records) {
  std::string out(kCheckpointMagic.begin(), kCheckpointMagic.end());
  out.push_back(static_cast<char>(kCheckpointVersion));
  detail::put_u32(out, static_cast<std::uint32_t>(records.size()));
  for (const auto& [name, t] : records) {
    detail::put_u32(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    detail::put_u32(out, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) detail::put_u64(out, d);
    for (Real v : t.data()) detail::put_u64(out, std::bit_cast<std::uint64_t>(v));
  }
  return out;
}

inline NamedTensors decode_checkpoint(const std::string& bytes) {
  detail::ByteReader r(bytes);
  for (char c : kCheckpointMagic)
    if (static_cast<char>(r.take(1)) != c) throw CheckpointError("bad checkpoint magic");
  const auto version = r.take(1);
  if (version != kCheckpointVersion)
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  const auto count = r.take(4);
  NamedTensors out;
  out.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    std::string name = r.take_string(r.take(4));
    const auto rank = r.take(4);
    Shape shape(rank);
    for (auto& d : shape) d = r.take(8);
    std::vector<Real> data(numel(shape));
    for (auto& v : data) v = std::bit_cast<Real>(r.take(8));
    out.emplace_back(std::move(name), Tensor(std::move(shape), std::move(data)));
  }
  if (!r.done()) throw CheckpointError("trailing bytes after checkpoint records");
  return out;
}

inline void save_checkpoint(const std::string& path, const NamedTensors& records) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw CheckpointError("cannot open " + path + " for writing");
  const std::string bytes = encode_checkpoint(records);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw CheckpointError("write failed: " + path);
}

inline NamedTensors load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CheckpointError("cannot open " + path);
  std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

/// Copies checkpoint values into `params` by name; names and shapes must match exactly.
inline void restore_parameters(const NamedTensors& params, const NamedTensors& saved) {
  std::map<std::string, const Tensor*> by_name;
  for (const auto& [name, t] : saved) by_name[name] = &t;
  if (by_name.size() != params.size())
    throw CheckpointError("checkpoint has " + std::to_string(by_name.size()) +
                          " tensors, model expects " + std::to_string(params.size()));
  for (const auto& [name, t] : params) {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw CheckpointError("checkpoint is missing " + name);
    if (it->second->shape() != t.shape())
      throw CheckpointError("shape mismatch for " + name + ": " + to_string(it->second->shape()) +
                            " vs " + to_string(t.shape()));
    Tensor dst = t;
    std::copy(it->second->data().begin(), it->second->data().end(), dst.data().begin());
  }
}

}  // namespace contfuse
