// SPDX-License-Identifier: Apache-2.0
#pragma once

// Binary agent checkpoint.
//
//   magic        8 bytes  "CAORACKP"
//   version      u32      kCheckpointVersion
//   a_max        f64
//   temperature  f64
//   net count    u32      (5: actor, critic 1, critic 2, target 1, target 2)
//   per net      u32 layer count L, u32 widths[L + 1], u8 activations[L]
//   parameters   f64 for every net in the order above, each net's flat vector
//   checksum     u64      FNV-1a over all preceding bytes
//
// All integers and floats are little-endian.

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "caora/error.hpp"
#include "caora/mlp.hpp"
#include "caora/sac_agent.hpp"

namespace caora {

inline constexpr std::array<char, 8> kCheckpointMagic{'C', 'A', 'O', 'R', 'A', 'C', 'K', 'P'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public Error {
 public:
  using Error::Error;
};

namespace detail {

inline std::uint64_t fnv1a(std::span<const std::uint8_t> bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (auto b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

class ByteWriter {
 public:
  void u8(std::uint8_t v) { out_.push_back(v); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.push_back(std::uint8_t(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out_.push_back(std::uint8_t(v >> (8 * i)));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void raw(std::span<const char> s) { out_.insert(out_.end(), s.begin(), s.end()); }
  std::vector<std::uint8_t>& bytes() { return out_; }

 private:
  std::vector<std::uint8_t> out_;
};

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> in) : in_(in) {}

  std::uint8_t u8() { need(1); return in_[pos_++]; }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t(in_[pos_++]) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t(in_[pos_++]) << (8 * i);
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return in_.size() - pos_; }

 private:
  void need(std::size_t n) const {
    if (in_.size() - pos_ < n) throw CheckpointError(fmt::format("checkpoint truncated at byte {}", pos_));
  }
  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::vector<std::uint8_t> save_checkpoint(const SacAgent& agent) {
  const std::array<const Mlp*, 5> nets{&agent.actor(), &agent.critic(0), &agent.critic(1), &agent.target(0),
                                       &agent.target(1)};
  detail::ByteWriter w;
  w.raw(kCheckpointMagic);
  w.u32(kCheckpointVersion);
  w.f64(agent.a_max());
  w.f64(agent.temperature());
  w.u32(nets.size());
  for (const Mlp* net : nets) {
    w.u32(std::uint32_t(net->layers()));
    for (int d : net->dims()) w.u32(std::uint32_t(d));
    for (Activation a : net->activations()) w.u8(std::uint8_t(a));
  }
  for (const Mlp* net : nets)
    for (Eigen::Index i = 0; i < net->num_params(); ++i) w.f64(net->params()(i));
  w.u64(detail::fnv1a(w.bytes()));
  return std::move(w.bytes());
}

/// Restores an agent. Optimiser state is not stored, so a loaded agent restarts
/// its moment estimates if trained further. `config` supplies the training
/// hyperparameters; network widths always come from the file.
inline SacAgent load_checkpoint(std::span<const std::uint8_t> bytes, SacConfig config = {}) {
  if (bytes.size() < kCheckpointMagic.size() + 8)
    throw CheckpointError("checkpoint truncated: missing header");
  if (std::memcmp(bytes.data(), kCheckpointMagic.data(), kCheckpointMagic.size()) != 0)
    throw CheckpointError("not a checkpoint: bad magic");
  const std::uint64_t stored = [&] {
    detail::ByteReader tail(bytes.subspan(bytes.size() - 8));
    return tail.u64();
  }();
  detail::ByteReader r(bytes.first(bytes.size() - 8));
  for (std::size_t i = 0; i < kCheckpointMagic.size(); ++i) r.u8();
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion)
    throw CheckpointError(fmt::format("unsupported checkpoint version {} (expected {})", version,
                                      kCheckpointVersion));
  if (detail::fnv1a(bytes.first(bytes.size() - 8)) != stored)
    throw CheckpointError("checkpoint checksum mismatch (corrupted or truncated)");

  const double a_max = r.f64();
  const double temperature = r.f64();
  const std::uint32_t count = r.u32();
  if (count != 5) throw CheckpointError(fmt::format("checkpoint holds {} networks, expected 5", count));

  std::vector<Mlp> nets;
  for (std::uint32_t n = 0; n < count; ++n) {
    const std::uint32_t layers = r.u32();
    if (layers == 0 || layers > 64) throw CheckpointError("implausible layer count in checkpoint");
    std::vector<int> dims;
    for (std::uint32_t i = 0; i <= layers; ++i) {
      const std::uint32_t d = r.u32();
      if (d == 0 || d > (1u << 16)) throw CheckpointError("implausible layer width in checkpoint");
      dims.push_back(int(d));
    }
    std::vector<Activation> acts;
    for (std::uint32_t i = 0; i < layers; ++i) {
      const std::uint8_t a = r.u8();
      if (a > std::uint8_t(Activation::Relu)) throw CheckpointError("unknown activation code in checkpoint");
      acts.push_back(Activation(a));
    }
    nets.emplace_back(std::move(dims), std::move(acts));
  }
  for (Mlp& net : nets) {
    if (r.remaining() < std::size_t(net.num_params()) * 8) throw CheckpointError("checkpoint truncated in parameters");
    for (Eigen::Index i = 0; i < net.num_params(); ++i) net.params()(i) = r.f64();
  }
  if (r.remaining() != 0) throw CheckpointError("trailing bytes after checkpoint parameters");

  config.hidden = nets[0].dims()[1];
  config.hidden_layers = int(nets[0].layers()) - 1;
  try {
    return SacAgent(config, a_max, std::move(nets[0]), {std::move(nets[1]), std::move(nets[2])},
                    {std::move(nets[3]), std::move(nets[4])}, temperature);
  } catch (const InvalidArgument& e) {
    throw CheckpointError(std::string("checkpoint does not describe a valid agent: ") + e.what());
  }
}

inline void write_checkpoint_file(const std::string& path, const SacAgent& agent) {
  const auto bytes = save_checkpoint(agent);
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot open '" + path + "' for writing");
  os.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
  if (!os) throw Error("failed writing checkpoint '" + path + "'");
}

inline SacAgent read_checkpoint_file(const std::string& path, SacConfig config = {}) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open checkpoint '" + path + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  return load_checkpoint(bytes, config);
}

}  // namespace caora
