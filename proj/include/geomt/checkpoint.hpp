#pragma once

// Checkpoint file (little-endian):
//   "GMTCKPT1"  u32 version  u32 scalar bytes (4 or 8)
//   u64 length + config echo text
//   i32 evaluable classes C
//   u64 tensor count, then per tensor:
//     u32 name length + name, u32 rank, u64 dims[rank], raw scalars
//   i64 optimizer step
//   u64 DCS length, f64 weights, i64 DCS step
// Tensor names are prefixed param/, buffer/, adam_m/ or adam_v/.

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "geomt/class_balance.hpp"
#include "geomt/config.hpp"
#include "geomt/error.hpp"
#include "geomt/network.hpp"
#include "geomt/optimizer.hpp"

namespace geomt {

inline constexpr std::uint32_t kCheckpointVersion = 1;

template <typename T>
struct Checkpoint {
  RunConfig config;
  int num_classes = 0;
  std::map<std::string, Tensor<T>> tensors;
  long optimizer_step = 0;
  DcsState dcs;

  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

template <typename T>
Checkpoint<T> capture(SegModel<T>& model, const Adam<T>& optimizer, const DcsState& dcs, const RunConfig& cfg) {
  Checkpoint<T> ck;
  ck.config = cfg;
  ck.num_classes = model.config().net.num_classes - 1;
  auto reg = model.registry();
  for (const auto& p : reg.params) ck.tensors["param/" + p.name] = p.param->value;
  for (const auto& b : reg.buffers) ck.tensors["buffer/" + b.name] = *b.buffer;
  for (const auto& [name, mo] : optimizer.moments()) {
    ck.tensors["adam_m/" + name] = mo.m;
    ck.tensors["adam_v/" + name] = mo.v;
  }
  ck.optimizer_step = optimizer.steps();
  ck.dcs = dcs;
  return ck;
}

/// Copies parameters and buffers from the checkpoint into a model of the
/// same architecture.
template <typename T>
void restore(const Checkpoint<T>& ck, SegModel<T>& model) {
  auto reg = model.registry();
  auto take = [&](const std::string& key, Tensor<T>& dst) {
    auto it = ck.tensors.find(key);
    if (it == ck.tensors.end()) throw DataError("checkpoint lacks tensor " + key);
    if (it->second.shape() != dst.shape()) {
      throw ShapeError("checkpoint tensor " + key + " has shape " + shape_string(it->second.shape()) +
                       ", model expects " + shape_string(dst.shape()));
    }
    dst = it->second;
  };
  for (const auto& p : reg.params) take("param/" + p.name, p.param->value);
  for (const auto& b : reg.buffers) take("buffer/" + b.name, *b.buffer);
}

template <typename T>
void restore(const Checkpoint<T>& ck, Adam<T>& optimizer) {
  optimizer.moments().clear();
  for (const auto& [key, tensor] : ck.tensors) {
    if (key.rfind("adam_m/", 0) == 0) optimizer.moments()[key.substr(7)].m = tensor;
    if (key.rfind("adam_v/", 0) == 0) optimizer.moments()[key.substr(7)].v = tensor;
  }
  optimizer.set_steps(ck.optimizer_step);
}

template <typename T>
TrainConfig checkpoint_train_config(const Checkpoint<T>& ck) {
  TrainConfig t = ck.config.train;
  t.set_num_classes(ck.num_classes);
  return t;
}

template <typename T>
SegModel<T> model_from_checkpoint(const Checkpoint<T>& ck) {
  SegModel<T> model(checkpoint_train_config(ck).model_config(), ck.config.seed());
  restore(ck, model);
  return model;
}

namespace detail {

template <typename V>
void put(std::ostream& out, V v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename V>
V get(std::istream& in) {
  V v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof v)) throw DataError("truncated checkpoint");
  return v;
}

inline void put_string(std::ostream& out, const std::string& s, bool wide) {
  if (wide) {
    put<std::uint64_t>(out, s.size());
  } else {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  }
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string get_string(std::istream& in, bool wide) {
  const std::uint64_t n = wide ? get<std::uint64_t>(in) : get<std::uint32_t>(in);
  if (n > (1ULL << 32)) throw DataError("corrupt checkpoint string length");
  std::string s(n, '\0');
  if (!in.read(s.data(), static_cast<std::streamsize>(n))) throw DataError("truncated checkpoint");
  return s;
}

}  // namespace detail

template <typename T>
void write_checkpoint(std::ostream& out, const Checkpoint<T>& ck) {
  out.write("GMTCKPT1", 8);
  detail::put<std::uint32_t>(out, kCheckpointVersion);
  detail::put<std::uint32_t>(out, sizeof(T));
  detail::put_string(out, echo_config(ck.config), true);
  detail::put<std::int32_t>(out, ck.num_classes);
  detail::put<std::uint64_t>(out, ck.tensors.size());
  for (const auto& [name, t] : ck.tensors) {
    detail::put_string(out, name, false);
    detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) detail::put<std::uint64_t>(out, d);
    out.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(T)));
  }
  detail::put<std::int64_t>(out, ck.optimizer_step);
  detail::put<std::uint64_t>(out, ck.dcs.weights.size());
  for (double w : ck.dcs.weights) detail::put<double>(out, w);
  detail::put<std::int64_t>(out, ck.dcs.step);
}

template <typename T>
Checkpoint<T> read_checkpoint(std::istream& in) {
  char magic[8];
  if (!in.read(magic, 8) || std::memcmp(magic, "GMTCKPT1", 8) != 0) throw DataError("not a checkpoint file");
  const auto version = detail::get<std::uint32_t>(in);
  if (version != kCheckpointVersion) throw DataError("unsupported checkpoint version " + std::to_string(version));
  const auto scalar = detail::get<std::uint32_t>(in);
  if (scalar != sizeof(T)) {
    throw DataError("checkpoint stores " + std::to_string(scalar) + "-byte scalars, expected " + std::to_string(sizeof(T)));
  }
  Checkpoint<T> ck;
  ck.config = parse_config_text(detail::get_string(in, true), "<checkpoint config>");
  ck.num_classes = detail::get<std::int32_t>(in);
  const auto count = detail::get<std::uint64_t>(in);
  for (std::uint64_t i = 0; i < count; ++i) {
    std::string name = detail::get_string(in, false);
    const auto rank = detail::get<std::uint32_t>(in);
    if (rank > 8) throw DataError("corrupt checkpoint tensor rank");
    Shape shape(rank);
    for (auto& d : shape) d = detail::get<std::uint64_t>(in);
    Tensor<T> t(shape);
    if (!in.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(T)))) {
      throw DataError("truncated checkpoint tensor " + name);
    }
    ck.tensors.emplace(std::move(name), std::move(t));
  }
  ck.optimizer_step = detail::get<std::int64_t>(in);
  ck.dcs.weights.resize(detail::get<std::uint64_t>(in));
  for (double& w : ck.dcs.weights) w = detail::get<double>(in);
  ck.dcs.step = detail::get<std::int64_t>(in);
  return ck;
}

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const Checkpoint<T>& ck) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write checkpoint " + path.string());
  write_checkpoint(out, ck);
}

template <typename T>
Checkpoint<T> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read checkpoint " + path.string());
  return read_checkpoint<T>(in);
}

}  // namespace geomt
