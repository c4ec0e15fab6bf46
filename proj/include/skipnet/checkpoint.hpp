#pragma once

#include <zlib.h>

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "skipnet/error.hpp"
#include "skipnet/image.hpp"  // read_file_bytes / write_file_bytes
#include "skipnet/model.hpp"
#include "skipnet/optimizer.hpp"

namespace skipnet {

// Checkpoint format, frozen at version 1. All integers and float payloads are
// little-endian.
//
//   "SKPN"            4 bytes magic
//   u32               version = 1
//   architecture      u64 input_size, u64 in_channels, u64 block count,
//                     one u64 per block channel width, u64 sal_ratio,
//                     u64 sal_dilation, f64 dropout_rate,
//                     u64 classifier_hidden, u64 num_classes
//   optimizer         u8 kind (0 adam, 1 sgd), f64 learning_rate, f64 beta1,
//                     f64 beta2, f64 eps, f64 momentum, u64 step count
//   model tensors     u64 count, then entries
//   optimizer tensors u64 count, then entries
//   u32               CRC32 (IEEE, zlib) of every preceding byte
//
// Tensor entry: u16 name length, name bytes, u8 dtype (0 f32, 1 f64),
// u8 rank, one u64 per dimension, then the raw little-endian payload.
//
// Failure taxonomy: bad magic / version / CRC / malformed structure throw
// CheckpointError with distinct messages; a body whose tensor names or shapes
// do not fit the embedded architecture surfaces restore_state's DataError.
// Loading builds a fresh model and optimizer, so no failure can leave a
// half-mutated object behind.

inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

inline constexpr char kMagic[4] = {'S', 'K', 'P', 'N'};

template <typename S>
constexpr std::uint8_t dtype_tag() {
  static_assert(std::is_same_v<S, float> || std::is_same_v<S, double>,
                "checkpoints hold f32 or f64 tensors");
  return std::is_same_v<S, float> ? 0 : 1;
}

inline const char* dtype_name(std::uint8_t tag) {
  return tag == 0 ? "f32" : tag == 1 ? "f64" : "unknown";
}

class ByteWriter {
 public:
  void u8(std::uint8_t v) { out_.push_back(v); }
  void u16(std::uint16_t v) {
    for (int i = 0; i < 2; ++i) out_.push_back(std::uint8_t(v >> (8 * i)));
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.push_back(std::uint8_t(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out_.push_back(std::uint8_t(v >> (8 * i)));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void text(const std::string& s) {
    u16(static_cast<std::uint16_t>(s.size()));
    out_.insert(out_.end(), s.begin(), s.end());
  }
  template <typename S>
  void tensor(const std::string& name, const Tensor<S>& t) {
    text(name);
    u8(dtype_tag<S>());
    u8(static_cast<std::uint8_t>(t.shape().size()));
    for (std::size_t d : t.shape()) u64(d);
    for (std::size_t i = 0; i < t.size(); ++i) {
      if constexpr (std::is_same_v<S, float>) {
        u32(std::bit_cast<std::uint32_t>(t[i]));
      } else {
        u64(std::bit_cast<std::uint64_t>(t[i]));
      }
    }
  }

  std::vector<std::uint8_t>& bytes() { return out_; }

 private:
  std::vector<std::uint8_t> out_;
};

class ByteReader {
 public:
  ByteReader(const std::uint8_t* data, std::size_t size)
      : data_(data), size_(size) {}

  std::uint8_t u8() { return take(1)[0]; }
  std::uint16_t u16() {
    const std::uint8_t* p = take(2);
    return std::uint16_t(p[0]) | std::uint16_t(p[1]) << 8;
  }
  std::uint32_t u32() {
    const std::uint8_t* p = take(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t(p[i]) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    const std::uint8_t* p = take(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t(p[i]) << (8 * i);
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string text() {
    const std::uint16_t n = u16();
    const std::uint8_t* p = take(n);
    return std::string(reinterpret_cast<const char*>(p), n);
  }

  template <typename S>
  std::pair<std::string, Tensor<S>> tensor() {
    std::string name = text();
    const std::uint8_t tag = u8();
    if (tag != dtype_tag<S>()) {
      throw CheckpointError("checkpoint tensor '" + name + "' is " +
                            dtype_name(tag) + " but the model scalar is " +
                            dtype_name(dtype_tag<S>()));
    }
    const std::uint8_t rank = u8();
    Shape shape(rank);
    std::size_t count = 1;
    for (auto& d : shape) {
      d = static_cast<std::size_t>(u64());
      if (d == 0 || count > (std::size_t(1) << 32) / std::max<std::size_t>(d, 1)) {
        throw CheckpointError("checkpoint tensor '" + name +
                              "' has an implausible shape");
      }
      count *= d;
    }
    Tensor<S> t = Tensor<S>::zeros(shape);
    for (std::size_t i = 0; i < t.size(); ++i) {
      if constexpr (std::is_same_v<S, float>) {
        t[i] = std::bit_cast<float>(u32());
      } else {
        t[i] = std::bit_cast<double>(u64());
      }
    }
    return {std::move(name), std::move(t)};
  }

 private:
  const std::uint8_t* take(std::size_t n) {
    if (size_ - pos_ < n) {
      throw CheckpointError("checkpoint body is truncated or inconsistent");
    }
    const std::uint8_t* p = data_ + pos_;
    pos_ += n;
    return p;
  }

  const std::uint8_t* data_;
  std::size_t size_;
  std::size_t pos_ = 0;
};

inline std::uint32_t checksum(const std::uint8_t* data, std::size_t size) {
  return static_cast<std::uint32_t>(
      crc32(0, data, static_cast<uInt>(size)));
}

}  // namespace detail

// Serializes model parameters, running statistics, and optimizer state with
// the architecture needed to rebuild them. Deterministic: identical inputs
// produce identical bytes. The file appears atomically (temp + rename).
template <typename S>
void save_checkpoint(const std::string& path, SkipNet<S>& model,
                     Optimizer<S>& optimizer) {
  detail::ByteWriter w;
  w.bytes().insert(w.bytes().end(), detail::kMagic, detail::kMagic + 4);
  w.u32(kCheckpointVersion);

  const ModelConfig& cfg = model.config();
  w.u64(cfg.input_size);
  w.u64(cfg.in_channels);
  w.u64(cfg.channels.size());
  for (std::size_t c : cfg.channels) w.u64(c);
  w.u64(cfg.sal_ratio);
  w.u64(cfg.sal_dilation);
  w.f64(cfg.dropout_rate);
  w.u64(cfg.classifier_hidden);
  w.u64(cfg.num_classes);

  const OptimizerConfig& ocfg = optimizer.config();
  w.u8(ocfg.kind == OptimizerKind::Adam ? 0 : 1);
  w.f64(ocfg.learning_rate);
  w.f64(ocfg.beta1);
  w.f64(ocfg.beta2);
  w.f64(ocfg.eps);
  w.f64(ocfg.momentum);
  w.u64(optimizer.step_count());

  const NamedTensors<S> state = snapshot_state(model);
  w.u64(state.size());
  for (const auto& [name, tensor] : state) w.tensor(name, tensor);

  NamedTensors<S> opt_state;
  optimizer.visit_state([&](const std::string& name, Tensor<S>& t) {
    opt_state.emplace_back(name, t);
  });
  w.u64(opt_state.size());
  for (const auto& [name, tensor] : opt_state) w.tensor(name, tensor);

  w.u32(detail::checksum(w.bytes().data(), w.bytes().size()));

  const std::string tmp = path + ".tmp";
  write_file_bytes(tmp, w.bytes());
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    throw IoError("cannot move checkpoint into place at '" + path + "'");
  }
}

template <typename S>
struct LoadedCheckpoint {
  ModelConfig config;
  SkipNet<S> model;
  Optimizer<S> optimizer;
};

// Rebuilds the model and optimizer recorded at `path`. The model comes back
// eval-ready: parameters and running statistics are bitwise those that were
// saved.
template <typename S>
LoadedCheckpoint<S> load_checkpoint(const std::string& path) {
  const std::vector<std::uint8_t> bytes = read_file_bytes(path);
  if (bytes.size() < 12 ||
      std::memcmp(bytes.data(), detail::kMagic, 4) != 0) {
    throw CheckpointError("'" + path + "' is not a checkpoint");
  }
  const std::uint32_t stored_crc =
      std::uint32_t(bytes[bytes.size() - 4]) |
      std::uint32_t(bytes[bytes.size() - 3]) << 8 |
      std::uint32_t(bytes[bytes.size() - 2]) << 16 |
      std::uint32_t(bytes[bytes.size() - 1]) << 24;

  detail::ByteReader r(bytes.data(), bytes.size() - 4);
  r.u32();  // past the magic
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw CheckpointError("unsupported checkpoint version " +
                          std::to_string(version) + " (this build reads " +
                          std::to_string(kCheckpointVersion) + ")");
  }
  if (detail::checksum(bytes.data(), bytes.size() - 4) != stored_crc) {
    throw CheckpointError("CRC mismatch in '" + path +
                          "': file is corrupted");
  }

  ModelConfig cfg;
  cfg.input_size = r.u64();
  cfg.in_channels = r.u64();
  cfg.channels.resize(r.u64());
  for (auto& c : cfg.channels) c = r.u64();
  cfg.sal_ratio = r.u64();
  cfg.sal_dilation = r.u64();
  cfg.dropout_rate = r.f64();
  cfg.classifier_hidden = r.u64();
  cfg.num_classes = r.u64();
  cfg.validate();

  OptimizerConfig ocfg;
  const std::uint8_t kind = r.u8();
  if (kind > 1) throw CheckpointError("unknown optimizer kind tag");
  ocfg.kind = kind == 0 ? OptimizerKind::Adam : OptimizerKind::Sgd;
  ocfg.learning_rate = r.f64();
  ocfg.beta1 = r.f64();
  ocfg.beta2 = r.f64();
  ocfg.eps = r.f64();
  ocfg.momentum = r.f64();
  const std::uint64_t step_count = r.u64();

  NamedTensors<S> model_state;
  const std::uint64_t n_model = r.u64();
  for (std::uint64_t i = 0; i < n_model; ++i) {
    model_state.push_back(r.template tensor<S>());
  }
  NamedTensors<S> opt_state;
  const std::uint64_t n_opt = r.u64();
  for (std::uint64_t i = 0; i < n_opt; ++i) {
    opt_state.push_back(r.template tensor<S>());
  }

  SkipNet<S> model(cfg);
  restore_state(model, model_state);

  Optimizer<S> optimizer(ocfg);
  optimizer.set_step_count(step_count);
  for (auto& [key, tensor] : opt_state) {
    optimizer.restore_state(key, std::move(tensor));
  }

  return LoadedCheckpoint<S>{std::move(cfg), std::move(model),
                             std::move(optimizer)};
}

}  // namespace skipnet
