#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "vlt/autodiff.hpp"
#include "vlt/errors.hpp"
#include "vlt/random.hpp"
#include "vlt/tensor.hpp"

namespace vlt {

struct Param {
  Tensor value;
  Tensor velocity;  // SGD momentum buffer
};

/// Keyed parameter archive. Keys are slot paths such as
/// "T/stage2/b0/c1/pw1.w"; ordering is lexicographic and stable.
class ParamStore {
 public:
  bool contains(const std::string& key) const { return params_.count(key) != 0; }

  void add(const std::string& key, Tensor value) {
    if (params_.count(key)) throw ContractError("duplicate parameter key '" + key + "'");
    Tensor vel = Tensor::zeros_like(value);
    params_.emplace(key, Param{std::move(value), std::move(vel)});
  }

  const Tensor& value(const std::string& key) const { return at(key).value; }
  Tensor& value(const std::string& key) { return at(key).value; }
  Param& at(const std::string& key) {
    auto it = params_.find(key);
    if (it == params_.end()) throw ContractError("unknown parameter '" + key + "'");
    return it->second;
  }
  const Param& at(const std::string& key) const {
    auto it = params_.find(key);
    if (it == params_.end()) throw ContractError("unknown parameter '" + key + "'");
    return it->second;
  }

  const std::map<std::string, Param>& entries() const { return params_; }
  std::size_t size() const { return params_.size(); }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& [k, p] : params_) n += p.value.numel();
    return n;
  }

  /// Copies every entry whose key satisfies `keep`, momentum included.
  template <typename Pred>
  ParamStore filtered(Pred keep) const {
    ParamStore out;
    for (const auto& [k, p] : params_)
      if (keep(k)) out.params_.emplace(k, p);
    return out;
  }

  void write(std::ostream& os) const {
    for (const auto& [k, p] : params_) {
      os << "param " << k << '\n';
      write_tensor(os, p.value);
    }
  }

  static ParamStore read(std::istream& is) {
    ParamStore out;
    std::string line;
    while (std::getline(is, line)) {
      if (line.empty()) continue;
      if (line.rfind("param ", 0) != 0) throw ParseError("checkpoint: expected 'param <key>', got '" + line + "'");
      out.add(line.substr(6), read_tensor(is));
    }
    return out;
  }

  void save_file(const std::string& path) const {
    std::ofstream os(path);
    if (!os) throw IoError("cannot open '" + path + "' for writing");
    write(os);
  }
  static ParamStore load_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open '" + path + "' for reading");
    return read(is);
  }

 private:
  std::map<std::string, Param> params_;
};

/// FNV-1a over the raw bytes of one parameter's values.
inline std::uint64_t checksum(const Tensor& t) {
  std::uint64_t h = 1469598103934665603ULL;
  for (double v : t.vec()) {
    unsigned char bytes[sizeof(double)];
    std::memcpy(bytes, &v, sizeof v);
    for (unsigned char b : bytes) {
      h ^= b;
      h *= 1099511628211ULL;
    }
  }
  return h;
}

inline std::map<std::string, std::uint64_t> checksums(const ParamStore& store) {
  std::map<std::string, std::uint64_t> out;
  for (const auto& [k, p] : store.entries()) out[k] = checksum(p.value);
  return out;
}

/// Places parameters on a tape on first use and remembers which were touched.
class ParamBinder {
 public:
  ParamBinder(Tape& tape, const ParamStore& store, bool trainable) : tape_(tape), store_(store), trainable_(trainable) {}

  Tape& tape() { return tape_; }

  Var operator()(const std::string& key) {
    auto it = bound_.find(key);
    if (it != bound_.end()) return it->second;
    Var v = tape_.leaf(store_.value(key), trainable_, key);
    bound_.emplace(key, v);
    return v;
  }

  /// Pre-binds `key` to an existing node (used to differentiate w.r.t. it).
  void provide(const std::string& key, Var v) { bound_.insert_or_assign(key, v); }

  const std::map<std::string, Var>& bound() const { return bound_; }

 private:
  Tape& tape_;
  const ParamStore& store_;
  bool trainable_;
  std::map<std::string, Var> bound_;
};

struct SgdConfig {
  double lr = 0.01;
  double momentum = 0.9;
  double grad_clip = 5.0;  // global L2 norm; <= 0 disables
};

/// Momentum SGD step on the parameters bound during this tape's forward pass.
/// Parameters that were not bound keep both value and momentum unchanged.
inline void sgd_step(ParamStore& store, const ParamBinder& binder, const SgdConfig& cfg) {
  double sq = 0.0;
  for (const auto& [key, var] : binder.bound())
    for (double g : var.grad().vec()) sq += g * g;
  const double norm = std::sqrt(sq);
  const double factor = (cfg.grad_clip > 0.0 && norm > cfg.grad_clip) ? cfg.grad_clip / norm : 1.0;
  for (const auto& [key, var] : binder.bound()) {
    Param& p = store.at(key);
    const Tensor& g = var.grad();
    for (std::size_t i = 0; i < g.numel(); ++i) {
      p.velocity[i] = cfg.momentum * p.velocity[i] + factor * g[i];
      p.value[i] -= cfg.lr * p.velocity[i];
    }
  }
}

/// Fan-in scaled uniform init, bound sqrt(6 / fan_in).
inline Tensor init_uniform(Shape shape, std::size_t fan_in, Rng& rng, double gain = 1.0) {
  Tensor t(std::move(shape));
  const double bound = gain * std::sqrt(6.0 / static_cast<double>(fan_in));
  for (double& v : t.vec()) v = rng.uniform(-bound, bound);
  return t;
}

}  // namespace vlt
