#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "ibro/error.hpp"
#include "ibro/model/transformer.hpp"

namespace ibro::model {

// Checkpoint layout (all integers little-endian):
//   "IBRO" | u32 version | u32 vocab | u32 d_model | u32 n_layers | u32 n_heads
//   | u32 max_seq_len | u8 has_value_head | u64 seed | f32 parameters...
// Parameters follow PolicyParams::all() declaration order.
inline constexpr std::array<char, 4> kCheckpointMagic{'I', 'B', 'R', 'O'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

inline void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>(v >> (8 * i)));
}

inline void put_u64(std::vector<unsigned char>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<unsigned char>(v >> (8 * i)));
}

class Reader {
 public:
  explicit Reader(const std::vector<unsigned char>& data) : data_(data) {}
  std::uint64_t uint(int bytes) {
    need(static_cast<std::size_t>(bytes));
    std::uint64_t v = 0;
    for (int i = 0; i < bytes; ++i) v |= static_cast<std::uint64_t>(data_[pos_++]) << (8 * i);
    return v;
  }
  float f32() { return std::bit_cast<float>(static_cast<std::uint32_t>(uint(4))); }
  std::size_t remaining() const { return data_.size() - pos_; }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > data_.size()) throw FormatError("checkpoint: truncated file");
  }
  const std::vector<unsigned char>& data_;
  std::size_t pos_ = 0;
};

}  // namespace detail

template <class T>
std::vector<unsigned char> serialize_checkpoint(const PolicyParams<T>& params) {
  const auto& c = params.config;
  std::vector<unsigned char> out(kCheckpointMagic.begin(), kCheckpointMagic.end());
  detail::put_u32(out, kCheckpointVersion);
  for (int v : {c.vocab_size, c.d_model, c.n_layers, c.n_heads, c.max_seq_len}) {
    detail::put_u32(out, static_cast<std::uint32_t>(v));
  }
  out.push_back(c.has_value_head ? 1 : 0);
  detail::put_u64(out, c.seed);
  for (T v : params.flatten()) detail::put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  return out;
}

// Rejects a bad magic, a different format version, a size that does not
// match the stored config, or (when given) a config other than `expected`.
template <class T>
PolicyParams<T> deserialize_checkpoint(const std::vector<unsigned char>& data,
                                       const std::optional<ModelConfig>& expected = std::nullopt) {
  if (data.size() < 4 || std::memcmp(data.data(), kCheckpointMagic.data(), 4) != 0) {
    throw FormatError("checkpoint: bad magic");
  }
  detail::Reader in(data);
  in.uint(4);
  const auto version = static_cast<std::uint32_t>(in.uint(4));
  if (version != kCheckpointVersion) {
    throw FormatError("checkpoint: unsupported version " + std::to_string(version));
  }
  ModelConfig c;
  c.vocab_size = static_cast<int>(in.uint(4));
  c.d_model = static_cast<int>(in.uint(4));
  c.n_layers = static_cast<int>(in.uint(4));
  c.n_heads = static_cast<int>(in.uint(4));
  c.max_seq_len = static_cast<int>(in.uint(4));
  c.has_value_head = in.uint(1) != 0;
  c.seed = in.uint(8);
  try {
    c.validate();
  } catch (const ConfigError& e) {
    throw FormatError(std::string("checkpoint: invalid stored config: ") + e.what());
  }
  if (expected && !(*expected == c)) throw FormatError("checkpoint: config mismatch");
  auto params = PolicyParams<T>::allocate(c);
  const std::size_t n = params.parameter_count();
  if (in.remaining() != 4 * n) {
    throw FormatError("checkpoint: expected " + std::to_string(n) + " parameters, found " +
                      std::to_string(in.remaining() / 4));
  }
  std::vector<T> flat(n);
  for (auto& v : flat) v = static_cast<T>(in.f32());
  params.assign_flat(flat);
  params.reset_reference();
  return params;
}

template <class T>
void save_checkpoint(const std::string& path, const PolicyParams<T>& params) {
  const auto bytes = serialize_checkpoint(params);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw FormatError("checkpoint: cannot open " + path + " for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw FormatError("checkpoint: write failed for " + path);
}

template <class T>
PolicyParams<T> load_checkpoint(const std::string& path,
                                const std::optional<ModelConfig>& expected = std::nullopt) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError("checkpoint: cannot open " + path);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(f)),
                                   std::istreambuf_iterator<char>());
  return deserialize_checkpoint<T>(bytes, expected);
}

}  // namespace ibro::model
