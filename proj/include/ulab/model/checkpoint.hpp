#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "ulab/error.hpp"
#include "ulab/model/transformer.hpp"

// Checkpoint layout, all integers little-endian:
//   "ULCK"  u32 version
//   u32 vocab_size, u32 d_model, u32 n_layers, u32 n_heads, u32 max_seq_len, u64 seed
//   repeated until end of file, in name order:
//     u32 name_len, name bytes, u32 rank, u32 dims[rank], f32 values[prod(dims)]

namespace ulab::model {

inline constexpr char kCheckpointMagic[4] = {'U', 'L', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

enum class CheckpointErrc { io, bad_magic, bad_version, truncated, shape_mismatch };

class CheckpointError : public DataError {
 public:
  CheckpointError(CheckpointErrc code, const std::string& what) : DataError(what), code_(code) {}
  CheckpointErrc code() const noexcept { return code_; }

 private:
  CheckpointErrc code_;
};

namespace detail {

inline void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
inline void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& b) : buf_(b) {}
  bool at_end() const { return pos_ == buf_.size(); }
  std::uint32_t u32() { return static_cast<std::uint32_t>(le(4)); }
  std::uint64_t u64() { return le(8); }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(buf_.data() + pos_), n);
    pos_ += n;
    return s;
  }

 private:
  void need(std::size_t n) const {
    if (buf_.size() - pos_ < n) throw CheckpointError(CheckpointErrc::truncated, "checkpoint truncated");
  }
  std::uint64_t le(int n) {
    need(static_cast<std::size_t>(n));
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(buf_[pos_ + i]) << (8 * i);
    pos_ += static_cast<std::size_t>(n);
    return v;
  }
  const std::vector<std::uint8_t>& buf_;
  std::size_t pos_ = 0;
};

}  // namespace detail

template <std::floating_point T>
std::vector<std::uint8_t> serialize_checkpoint(const LMParams<T>& p) {
  std::vector<std::uint8_t> out(std::begin(kCheckpointMagic), std::end(kCheckpointMagic));
  detail::put_u32(out, kCheckpointVersion);
  const auto& c = p.config;
  for (std::uint32_t v : {c.vocab_size, c.d_model, c.n_layers, c.n_heads, c.max_seq_len}) detail::put_u32(out, v);
  detail::put_u64(out, c.seed);
  for (const auto& [name, t] : p.tensors) {
    detail::put_u32(out, static_cast<std::uint32_t>(name.size()));
    out.insert(out.end(), name.begin(), name.end());
    detail::put_u32(out, static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape) detail::put_u32(out, static_cast<std::uint32_t>(d));
    for (T x : t.data) detail::put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(x)));
  }
  return out;
}

template <std::floating_point T = float>
LMParams<T> deserialize_checkpoint(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kCheckpointMagic, 4) != 0)
    throw CheckpointError(CheckpointErrc::bad_magic, "not a ULCK checkpoint (bad magic)");
  std::vector<std::uint8_t> rest(bytes.begin() + 4, bytes.end());
  detail::Reader r(rest);
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion)
    throw CheckpointError(CheckpointErrc::bad_version, "unsupported checkpoint version " + std::to_string(version));
  LMParams<T> p;
  p.config.vocab_size = r.u32();
  p.config.d_model = r.u32();
  p.config.n_layers = r.u32();
  p.config.n_heads = r.u32();
  p.config.max_seq_len = r.u32();
  p.config.seed = r.u64();
  try {
    p.config.validate();
  } catch (const ContractViolation& e) {
    throw CheckpointError(CheckpointErrc::shape_mismatch, std::string("invalid model config: ") + e.what());
  }
  const auto expected = param_shapes(p.config);
  while (!r.at_end()) {
    const std::string name = r.bytes(r.u32());
    num::Shape shape(r.u32());
    for (auto& d : shape) d = r.u32();
    auto it = expected.find(name);
    if (it == expected.end() || it->second != shape)
      throw CheckpointError(CheckpointErrc::shape_mismatch, "unexpected tensor '" + name + "' " + num::shape_str(shape));
    Tensor<T> t(shape);
    for (auto& x : t.data) x = static_cast<T>(std::bit_cast<float>(r.u32()));
    if (!p.tensors.emplace(name, std::move(t)).second)
      throw CheckpointError(CheckpointErrc::shape_mismatch, "duplicate tensor '" + name + "'");
  }
  if (p.tensors.size() != expected.size())
    throw CheckpointError(CheckpointErrc::shape_mismatch, "checkpoint is missing tensors");
  return p;
}

/// Writes through a temporary file and renames it into place.
inline void write_file_atomic(const std::filesystem::path& path, const std::string& contents) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw CheckpointError(CheckpointErrc::io, "cannot open " + tmp.string() + " for writing");
    f.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!f) throw CheckpointError(CheckpointErrc::io, "write failed: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CheckpointError(CheckpointErrc::io, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

template <std::floating_point T>
void save_checkpoint(const LMParams<T>& p, const std::filesystem::path& path) {
  const auto bytes = serialize_checkpoint(p);
  write_file_atomic(path, std::string(bytes.begin(), bytes.end()));
}

template <std::floating_point T = float>
LMParams<T> load_checkpoint(const std::filesystem::path& path) {
  return deserialize_checkpoint<T>(read_file_bytes(path));
}

}  // namespace ulab::model
