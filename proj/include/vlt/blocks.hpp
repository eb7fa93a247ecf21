#pragma once

#include <string>

#include "vlt/arch.hpp"
#include "vlt/ops.hpp"
#include "vlt/params.hpp"

// Two-branch Shuffle units. A block either keeps shape (stride 1, in == out:
// split channels, transform the second half) or is an entry block (stride 2 or
// channel change: both branches see the full input). Both end with
// concat + channel_shuffle(groups = 2).
namespace vlt::blocks {

inline bool is_entry(const BlockChoice& b) { return b.stride != 1 || b.in_channels != b.out_channels; }

namespace detail {

inline void add_pw(ParamStore& s, const std::string& key, std::size_t in, std::size_t out, Rng& rng) {
  s.add(key + ".w", init_uniform(Shape{in, out}, in, rng));
  s.add(key + ".g", Tensor(Shape{1, out}, 1.0));
  s.add(key + ".b", Tensor(Shape{1, out}, 0.0));
}

inline void add_dw(ParamStore& s, const std::string& key, std::size_t k, std::size_t ch, Rng& rng) {
  s.add(key + ".w", init_uniform(Shape{k, k, ch}, k * k, rng, 0.7));
  s.add(key + ".g", Tensor(Shape{1, ch}, 1.0));
  s.add(key + ".b", Tensor(Shape{1, ch}, 0.0));
}

inline Var pw(ParamBinder& p, const std::string& key, Var x, bool relu) {
  Var y = ops::affine_norm(ops::pointwise_conv(x, p(key + ".w")), p(key + ".g"), p(key + ".b"));
  return relu ? ops::relu(y) : y;
}

inline Var dw(ParamBinder& p, const std::string& key, Var x, std::size_t stride) {
  return ops::affine_norm(ops::depthwise_conv(x, p(key + ".w"), stride), p(key + ".g"), p(key + ".b"));
}

}  // namespace detail

/// Creates the parameters of one candidate block under `prefix`.
inline void init_block(ParamStore& store, const std::string& prefix, const BlockChoice& b, Rng& rng) {
  const std::size_t half_out = b.out_channels / 2;
  const bool entry = is_entry(b);
  const std::size_t main_in = entry ? b.in_channels : b.in_channels / 2;
  const std::size_t main_out = entry ? b.out_channels - half_out : b.out_channels / 2;
  if (entry) {
    detail::add_dw(store, prefix + "/proj.dw", 3, b.in_channels, rng);
    detail::add_pw(store, prefix + "/proj.pw", b.in_channels, half_out, rng);
  }
  if (b.kind == BlockKind::Xception3) {
    detail::add_dw(store, prefix + "/dw1", 3, main_in, rng);
    detail::add_pw(store, prefix + "/pw1", main_in, main_out, rng);
    detail::add_dw(store, prefix + "/dw2", 3, main_out, rng);
    detail::add_pw(store, prefix + "/pw2", main_out, main_out, rng);
    detail::add_dw(store, prefix + "/dw3", 3, main_out, rng);
    detail::add_pw(store, prefix + "/pw3", main_out, main_out, rng);
  } else {
    const std::size_t k = kernel_size(b.kind);
    detail::add_pw(store, prefix + "/pw1", main_in, main_out, rng);
    detail::add_dw(store, prefix + "/dw", k, main_out, rng);
    detail::add_pw(store, prefix + "/pw2", main_out, main_out, rng);
  }
}

inline Var block_forward(ParamBinder& p, const std::string& prefix, const BlockChoice& b, Var x) {
  if (x.value().rank() != 3 || x.value().dim(2) != b.in_channels) {
    throw DimensionError("block " + prefix + ": expected " + std::to_string(b.in_channels) + " input channels, got " +
                         shape_str(x.shape()));
  }
  const bool entry = is_entry(b);
  Var passthrough;
  Var main_in;
  if (entry) {
    passthrough = detail::pw(p, prefix + "/proj.pw", detail::dw(p, prefix + "/proj.dw", x, b.stride), true);
    main_in = x;
  } else {
    const std::size_t half = b.in_channels / 2;
    passthrough = ops::slice_channels(x, 0, half);
    main_in = ops::slice_channels(x, half, b.in_channels);
  }
  Var y;
  if (b.kind == BlockKind::Xception3) {
    y = detail::dw(p, prefix + "/dw1", main_in, b.stride);
    y = detail::pw(p, prefix + "/pw1", y, true);
    y = detail::dw(p, prefix + "/dw2", y, 1);
    y = detail::pw(p, prefix + "/pw2", y, true);
    y = detail::dw(p, prefix + "/dw3", y, 1);
    y = detail::pw(p, prefix + "/pw3", y, true);
  } else {
    y = detail::pw(p, prefix + "/pw1", main_in, true);
    y = detail::dw(p, prefix + "/dw", y, b.stride);
    y = detail::pw(p, prefix + "/pw2", y, true);
  }
  return ops::channel_shuffle(ops::concat_channels(passthrough, y), 2);
}

}  // namespace vlt::blocks
