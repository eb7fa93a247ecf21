#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <vector>

#include "vlt/autodiff.hpp"
#include "vlt/errors.hpp"
#include "vlt/tensor.hpp"

// Differentiable op catalogue. Feature maps are H x W x C, vectors 1 x C.
namespace vlt::ops {

namespace detail {

inline void require_rank(const Var& v, std::size_t rank, const char* op) {
  if (v.value().rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                         shape_str(v.shape()));
  }
}

inline void require_same(const Var& a, const Var& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

// Number of channels of a 1 x C or C vector.
inline std::size_t vector_len(const Tensor& t) {
  if (t.rank() == 1) return t.dim(0);
  if (t.rank() == 2 && t.dim(0) == 1) return t.dim(1);
  throw DimensionError("expected a 1xC vector, got " + shape_str(t.shape()));
}

inline std::size_t same_out(std::size_t in, std::size_t k, std::size_t stride) {
  const std::size_t pad = (k - 1) / 2;
  return (in + 2 * pad - k) / stride + 1;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise and reductions

inline Var add(Var a, Var b) {
  detail::require_same(a, b, "add");
  Tensor out = a.value();
  const auto& bv = b.value().vec();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] += bv[i];
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record("add", {a, b}, std::move(out), [ia, ib](Tape& t, const Tensor& g) {
    t.accumulate(ia, g);
    t.accumulate(ib, g);
  });
}

inline Var scale(Var a, double s) {
  Tensor out = a.value();
  for (double& v : out.vec()) v *= s;
  const std::size_t ia = a.id();
  return a.tape().record("scale", {a}, std::move(out), [ia, s](Tape& t, const Tensor& g) {
    if (Tensor* ga = t.grad_buffer(ia))
      for (std::size_t i = 0; i < g.numel(); ++i) (*ga)[i] += s * g[i];
  });
}

inline Var sum(Var a) {
  double s = 0.0;
  for (double v : a.value().vec()) s += v;
  const std::size_t ia = a.id();
  return a.tape().record("sum", {a}, Tensor::scalar(s), [ia](Tape& t, const Tensor& g) {
    if (Tensor* ga = t.grad_buffer(ia))
      for (double& v : ga->vec()) v += g[0];
  });
}

inline Var mean(Var a) { return scale(sum(a), 1.0 / static_cast<double>(a.value().numel())); }

/// sum_i w[i] * x[i] with fixed weights.
inline Var weighted_sum(Var x, const std::vector<double>& w) {
  if (w.size() != x.value().numel()) {
    throw DimensionError("weighted_sum: " + std::to_string(w.size()) + " weights for " + shape_str(x.shape()));
  }
  double s = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) s += w[i] * x.value()[i];
  const std::size_t ix = x.id();
  return x.tape().record("weighted_sum", {x}, Tensor::scalar(s), [ix, w](Tape& t, const Tensor& g) {
    if (Tensor* gx = t.grad_buffer(ix))
      for (std::size_t i = 0; i < w.size(); ++i) (*gx)[i] += g[0] * w[i];
  });
}

// Sum of scalar terms.
inline Var add_n(const std::vector<Var>& terms) {
  if (terms.empty()) throw ContractError("add_n: no terms");
  double s = 0.0;
  std::vector<std::size_t> ids;
  for (const Var& v : terms) {
    if (v.value().numel() != 1) throw DimensionError("add_n: non-scalar term " + shape_str(v.shape()));
    s += v.value()[0];
    ids.push_back(v.id());
  }
  return terms.front().tape().record("add_n", terms, Tensor::scalar(s), [ids](Tape& t, const Tensor& g) {
    for (std::size_t id : ids)
      if (Tensor* gi = t.grad_buffer(id)) (*gi)[0] += g[0];
  });
}

inline Var relu(Var x) {
  Tensor out = x.value();
  for (double& v : out.vec()) {
    x.tape().note_branch(v > 0.0);
    v = v > 0.0 ? v : 0.0;
  }
  const std::size_t ix = x.id();
  return x.tape().record("relu", {x}, std::move(out), [ix](Tape& t, const Tensor& g) {
    Tensor* gx = t.grad_buffer(ix);
    if (!gx) return;
    const Tensor& xv = t.value(ix);
    for (std::size_t i = 0; i < g.numel(); ++i)
      if (xv[i] > 0.0) (*gx)[i] += g[i];
  });
}

// ---------------------------------------------------------------------------
// Channel selection and permutation

/// out[h,w,c] = selector[c] * fmap[h,w,c]
inline Var hadamard_select(Var selector, Var fmap) {
  detail::require_rank(fmap, 3, "hadamard_select");
  const Tensor& s = selector.value();
  const Tensor& f = fmap.value();
  const std::size_t C = f.dim(2);
  std::size_t sc = 0;
  try {
    sc = detail::vector_len(s);
  } catch (const DimensionError&) {
    sc = 0;
  }
  if (sc != C) {
    throw DimensionError("hadamard_select: selector " + shape_str(s.shape()) + " does not match feature map " +
                         shape_str(f.shape()));
  }
  Tensor out(f.shape());
  const std::size_t sites = f.dim(0) * f.dim(1);
  for (std::size_t p = 0; p < sites; ++p)
    for (std::size_t c = 0; c < C; ++c) out[p * C + c] = s[c] * f[p * C + c];
  const std::size_t is = selector.id(), iff = fmap.id();
  return fmap.tape().record("hadamard_select", {selector, fmap}, std::move(out),
                            [is, iff, C, sites](Tape& t, const Tensor& g) {
                              const Tensor& sv = t.value(is);
                              const Tensor& fv = t.value(iff);
                              if (Tensor* gs = t.grad_buffer(is))
                                for (std::size_t p = 0; p < sites; ++p)
                                  for (std::size_t c = 0; c < C; ++c) (*gs)[c] += g[p * C + c] * fv[p * C + c];
                              if (Tensor* gf = t.grad_buffer(iff))
                                for (std::size_t p = 0; p < sites; ++p)
                                  for (std::size_t c = 0; c < C; ++c) (*gf)[p * C + c] += g[p * C + c] * sv[c];
                            });
}

/// Source channel for each output channel of the group-transpose permutation.
inline std::vector<std::size_t> shuffle_permutation(std::size_t channels, std::size_t groups) {
  if (groups == 0 || channels % groups != 0) {
    throw ArgumentError("channel_shuffle: " + std::to_string(channels) + " channels not divisible by " +
                        std::to_string(groups) + " groups");
  }
  const std::size_t per = channels / groups;
  std::vector<std::size_t> src(channels);
  for (std::size_t g = 0; g < groups; ++g)
    for (std::size_t j = 0; j < per; ++j) src[j * groups + g] = g * per + j;
  return src;
}

inline Var channel_shuffle(Var fmap, std::size_t groups) {
  detail::require_rank(fmap, 3, "channel_shuffle");
  const Tensor& f = fmap.value();
  const std::size_t C = f.dim(2);
  const std::vector<std::size_t> src = shuffle_permutation(C, groups);
  Tensor out(f.shape());
  const std::size_t sites = f.dim(0) * f.dim(1);
  for (std::size_t p = 0; p < sites; ++p)
    for (std::size_t c = 0; c < C; ++c) out[p * C + c] = f[p * C + src[c]];
  const std::size_t iff = fmap.id();
  return fmap.tape().record("channel_shuffle", {fmap}, std::move(out), [iff, src, C, sites](Tape& t, const Tensor& g) {
    if (Tensor* gf = t.grad_buffer(iff))
      for (std::size_t p = 0; p < sites; ++p)
        for (std::size_t c = 0; c < C; ++c) (*gf)[p * C + src[c]] += g[p * C + c];
  });
}

inline Var concat_channels(Var a, Var b) {
  detail::require_rank(a, 3, "concat_channels");
  detail::require_rank(b, 3, "concat_channels");
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.dim(0) != bv.dim(0) || av.dim(1) != bv.dim(1)) {
    throw DimensionError("concat_channels: spatial mismatch " + shape_str(av.shape()) + " vs " + shape_str(bv.shape()));
  }
  const std::size_t ca = av.dim(2), cb = bv.dim(2), C = ca + cb, sites = av.dim(0) * av.dim(1);
  Tensor out(Shape{av.dim(0), av.dim(1), C});
  for (std::size_t p = 0; p < sites; ++p) {
    std::copy_n(&av.vec()[p * ca], ca, &out.vec()[p * C]);
    std::copy_n(&bv.vec()[p * cb], cb, &out.vec()[p * C + ca]);
  }
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record("concat_channels", {a, b}, std::move(out), [=](Tape& t, const Tensor& g) {
    if (Tensor* ga = t.grad_buffer(ia))
      for (std::size_t p = 0; p < sites; ++p)
        for (std::size_t c = 0; c < ca; ++c) (*ga)[p * ca + c] += g[p * C + c];
    if (Tensor* gb = t.grad_buffer(ib))
      for (std::size_t p = 0; p < sites; ++p)
        for (std::size_t c = 0; c < cb; ++c) (*gb)[p * cb + c] += g[p * C + ca + c];
  });
}

/// Channels [begin, end) of a feature map.
inline Var slice_channels(Var x, std::size_t begin, std::size_t end) {
  detail::require_rank(x, 3, "slice_channels");
  const Tensor& xv = x.value();
  const std::size_t C = xv.dim(2);
  if (begin >= end || end > C) {
    throw ArgumentError("slice_channels: range [" + std::to_string(begin) + "," + std::to_string(end) +
                        ") invalid for " + std::to_string(C) + " channels");
  }
  const std::size_t n = end - begin, sites = xv.dim(0) * xv.dim(1);
  Tensor out(Shape{xv.dim(0), xv.dim(1), n});
  for (std::size_t p = 0; p < sites; ++p) std::copy_n(&xv.vec()[p * C + begin], n, &out.vec()[p * n]);
  const std::size_t ix = x.id();
  return x.tape().record("slice_channels", {x}, std::move(out), [=](Tape& t, const Tensor& g) {
    if (Tensor* gx = t.grad_buffer(ix))
      for (std::size_t p = 0; p < sites; ++p)
        for (std::size_t c = 0; c < n; ++c) (*gx)[p * C + begin + c] += g[p * n + c];
  });
}

// ---------------------------------------------------------------------------
// Convolutions (zero "same" padding: pad = (k-1)/2, out = (in + 2*pad - k)/stride + 1)

/// Dense convolution. weight: k x k x Cin x Cout.
inline Var conv2d(Var x, Var weight, std::size_t stride) {
  detail::require_rank(x, 3, "conv2d");
  const Tensor& xv = x.value();
  const Tensor& wv = weight.value();
  if (wv.rank() != 4 || wv.dim(0) != wv.dim(1) || wv.dim(0) % 2 == 0 || wv.dim(2) != xv.dim(2)) {
    throw DimensionError("conv2d: weight " + shape_str(wv.shape()) + " incompatible with input " + shape_str(xv.shape()));
  }
  if (stride == 0) throw ArgumentError("conv2d: stride must be positive");
  const std::size_t H = xv.dim(0), W = xv.dim(1), Ci = xv.dim(2), k = wv.dim(0), Co = wv.dim(3);
  const std::size_t Ho = detail::same_out(H, k, stride), Wo = detail::same_out(W, k, stride);
  const long pad = static_cast<long>((k - 1) / 2);
  Tensor out(Shape{Ho, Wo, Co});
  for (std::size_t oh = 0; oh < Ho; ++oh)
    for (std::size_t ow = 0; ow < Wo; ++ow) {
      double* o = &out.vec()[(oh * Wo + ow) * Co];
      for (std::size_t kh = 0; kh < k; ++kh) {
        const long ih = static_cast<long>(oh * stride + kh) - pad;
        if (ih < 0 || ih >= static_cast<long>(H)) continue;
        for (std::size_t kw = 0; kw < k; ++kw) {
          const long iw = static_cast<long>(ow * stride + kw) - pad;
          if (iw < 0 || iw >= static_cast<long>(W)) continue;
          const double* in = &xv.vec()[(static_cast<std::size_t>(ih) * W + static_cast<std::size_t>(iw)) * Ci];
          const double* wk = &wv.vec()[(kh * k + kw) * Ci * Co];
          for (std::size_t ci = 0; ci < Ci; ++ci) {
            const double a = in[ci];
            const double* wr = wk + ci * Co;
            for (std::size_t co = 0; co < Co; ++co) o[co] += a * wr[co];
          }
        }
      }
    }
  const std::size_t ix = x.id(), iw_ = weight.id();
  return x.tape().record("conv2d", {x, weight}, std::move(out), [=](Tape& t, const Tensor& g) {
    const Tensor& xv2 = t.value(ix);
    const Tensor& wv2 = t.value(iw_);
    Tensor* gx = t.grad_buffer(ix);
    Tensor* gw = t.grad_buffer(iw_);
    for (std::size_t oh = 0; oh < Ho; ++oh)
      for (std::size_t ow = 0; ow < Wo; ++ow) {
        const double* go = &g.vec()[(oh * Wo + ow) * Co];
        for (std::size_t kh = 0; kh < k; ++kh) {
          const long ih = static_cast<long>(oh * stride + kh) - pad;
          if (ih < 0 || ih >= static_cast<long>(H)) continue;
          for (std::size_t kw = 0; kw < k; ++kw) {
            const long iw = static_cast<long>(ow * stride + kw) - pad;
            if (iw < 0 || iw >= static_cast<long>(W)) continue;
            const std::size_t base = (static_cast<std::size_t>(ih) * W + static_cast<std::size_t>(iw)) * Ci;
            const std::size_t wbase = (kh * k + kw) * Ci * Co;
            for (std::size_t ci = 0; ci < Ci; ++ci) {
              const double* wr = &wv2.vec()[wbase + ci * Co];
              if (gx) {
                double acc = 0.0;
                for (std::size_t co = 0; co < Co; ++co) acc += wr[co] * go[co];
                (*gx)[base + ci] += acc;
              }
              if (gw) {
                const double a = xv2[base + ci];
                double* gwr = &gw->vec()[wbase + ci * Co];
                for (std::size_t co = 0; co < Co; ++co) gwr[co] += a * go[co];
              }
            }
          }
        }
      }
  });
}

/// 1x1 convolution. weight: Cin x Cout.
inline Var pointwise_conv(Var x, Var weight) {
  detail::require_rank(x, 3, "pointwise_conv");
  const Tensor& xv = x.value();
  const Tensor& wv = weight.value();
  if (wv.rank() != 2 || wv.dim(0) != xv.dim(2)) {
    throw DimensionError("pointwise_conv: weight " + shape_str(wv.shape()) + " incompatible with input " +
                         shape_str(xv.shape()));
  }
  const std::size_t sites = xv.dim(0) * xv.dim(1), Ci = wv.dim(0), Co = wv.dim(1);
  Tensor out(Shape{xv.dim(0), xv.dim(1), Co});
  for (std::size_t p = 0; p < sites; ++p) {
    double* o = &out.vec()[p * Co];
    const double* in = &xv.vec()[p * Ci];
    for (std::size_t ci = 0; ci < Ci; ++ci) {
      const double a = in[ci];
      const double* wr = &wv.vec()[ci * Co];
      for (std::size_t co = 0; co < Co; ++co) o[co] += a * wr[co];
    }
  }
  const std::size_t ix = x.id(), iw = weight.id();
  return x.tape().record("pointwise_conv", {x, weight}, std::move(out), [=](Tape& t, const Tensor& g) {
    const Tensor& xv2 = t.value(ix);
    const Tensor& wv2 = t.value(iw);
    Tensor* gx = t.grad_buffer(ix);
    Tensor* gw = t.grad_buffer(iw);
    for (std::size_t p = 0; p < sites; ++p) {
      const double* go = &g.vec()[p * Co];
      for (std::size_t ci = 0; ci < Ci; ++ci) {
        const double* wr = &wv2.vec()[ci * Co];
        if (gx) {
          double acc = 0.0;
          for (std::size_t co = 0; co < Co; ++co) acc += wr[co] * go[co];
          (*gx)[p * Ci + ci] += acc;
        }
        if (gw) {
          const double a = xv2[p * Ci + ci];
          double* gwr = &gw->vec()[ci * Co];
          for (std::size_t co = 0; co < Co; ++co) gwr[co] += a * go[co];
        }
      }
    }
  });
}

/// Per-channel convolution. weight: k x k x C, k odd.
inline Var depthwise_conv(Var x, Var weight, std::size_t stride) {
  detail::require_rank(x, 3, "depthwise_conv");
  const Tensor& xv = x.value();
  const Tensor& wv = weight.value();
  if (wv.rank() != 3 || wv.dim(0) != wv.dim(1) || wv.dim(0) % 2 == 0 || wv.dim(2) != xv.dim(2)) {
    throw DimensionError("depthwise_conv: weight " + shape_str(wv.shape()) + " incompatible with input " +
                         shape_str(xv.shape()));
  }
  if (stride == 0) throw ArgumentError("depthwise_conv: stride must be positive");
  const std::size_t H = xv.dim(0), W = xv.dim(1), C = xv.dim(2), k = wv.dim(0);
  const std::size_t Ho = detail::same_out(H, k, stride), Wo = detail::same_out(W, k, stride);
  const long pad = static_cast<long>((k - 1) / 2);
  Tensor out(Shape{Ho, Wo, C});
  for (std::size_t oh = 0; oh < Ho; ++oh)
    for (std::size_t ow = 0; ow < Wo; ++ow) {
      double* o = &out.vec()[(oh * Wo + ow) * C];
      for (std::size_t kh = 0; kh < k; ++kh) {
        const long ih = static_cast<long>(oh * stride + kh) - pad;
        if (ih < 0 || ih >= static_cast<long>(H)) continue;
        for (std::size_t kw = 0; kw < k; ++kw) {
          const long iw = static_cast<long>(ow * stride + kw) - pad;
          if (iw < 0 || iw >= static_cast<long>(W)) continue;
          const double* in = &xv.vec()[(static_cast<std::size_t>(ih) * W + static_cast<std::size_t>(iw)) * C];
          const double* wk = &wv.vec()[(kh * k + kw) * C];
          for (std::size_t c = 0; c < C; ++c) o[c] += in[c] * wk[c];
        }
      }
    }
  const std::size_t ix = x.id(), iw_ = weight.id();
  return x.tape().record("depthwise_conv", {x, weight}, std::move(out), [=](Tape& t, const Tensor& g) {
    const Tensor& xv2 = t.value(ix);
    const Tensor& wv2 = t.value(iw_);
    Tensor* gx = t.grad_buffer(ix);
    Tensor* gw = t.grad_buffer(iw_);
    for (std::size_t oh = 0; oh < Ho; ++oh)
      for (std::size_t ow = 0; ow < Wo; ++ow) {
        const double* go = &g.vec()[(oh * Wo + ow) * C];
        for (std::size_t kh = 0; kh < k; ++kh) {
          const long ih = static_cast<long>(oh * stride + kh) - pad;
          if (ih < 0 || ih >= static_cast<long>(H)) continue;
          for (std::size_t kw = 0; kw < k; ++kw) {
            const long iw = static_cast<long>(ow * stride + kw) - pad;
            if (iw < 0 || iw >= static_cast<long>(W)) continue;
            const std::size_t base = (static_cast<std::size_t>(ih) * W + static_cast<std::size_t>(iw)) * C;
            const std::size_t wbase = (kh * k + kw) * C;
            if (gx)
              for (std::size_t c = 0; c < C; ++c) (*gx)[base + c] += wv2[wbase + c] * go[c];
            if (gw)
              for (std::size_t c = 0; c < C; ++c) (*gw)[wbase + c] += xv2[base + c] * go[c];
          }
        }
      }
  });
}

/// Per-channel affine normalization with frozen identity statistics:
/// out = gamma[c] * x + beta[c].
inline Var affine_norm(Var x, Var gamma, Var beta) {
  detail::require_rank(x, 3, "affine_norm");
  const Tensor& xv = x.value();
  const std::size_t C = xv.dim(2), sites = xv.dim(0) * xv.dim(1);
  if (detail::vector_len(gamma.value()) != C || detail::vector_len(beta.value()) != C) {
    throw DimensionError("affine_norm: scale/shift " + shape_str(gamma.shape()) + " do not match input " +
                         shape_str(xv.shape()));
  }
  const Tensor& gv = gamma.value();
  const Tensor& bv = beta.value();
  Tensor out(xv.shape());
  for (std::size_t p = 0; p < sites; ++p)
    for (std::size_t c = 0; c < C; ++c) out[p * C + c] = gv[c] * xv[p * C + c] + bv[c];
  const std::size_t ix = x.id(), ig = gamma.id(), ib = beta.id();
  return x.tape().record("affine_norm", {x, gamma, beta}, std::move(out), [=](Tape& t, const Tensor& g) {
    const Tensor& xv2 = t.value(ix);
    const Tensor& gv2 = t.value(ig);
    Tensor* gx = t.grad_buffer(ix);
    Tensor* gg = t.grad_buffer(ig);
    Tensor* gb = t.grad_buffer(ib);
    for (std::size_t p = 0; p < sites; ++p)
      for (std::size_t c = 0; c < C; ++c) {
        const double up = g[p * C + c];
        if (gx) (*gx)[p * C + c] += gv2[c] * up;
        if (gg) (*gg)[c] += xv2[p * C + c] * up;
        if (gb) (*gb)[c] += up;
      }
  });
}

/// Per-channel standardization over spatial positions: (x - mean) / sqrt(var + eps).
inline Var spatial_standardize(Var x, double eps = 1e-5) {
  detail::require_rank(x, 3, "spatial_standardize");
  const Tensor& xv = x.value();
  const std::size_t C = xv.dim(2), sites = xv.dim(0) * xv.dim(1);
  const double n = static_cast<double>(sites);
  std::vector<double> inv_std(C);
  Tensor out(xv.shape());
  for (std::size_t c = 0; c < C; ++c) {
    double mean = 0.0, var = 0.0;
    for (std::size_t p = 0; p < sites; ++p) mean += xv[p * C + c];
    mean /= n;
    for (std::size_t p = 0; p < sites; ++p) var += (xv[p * C + c] - mean) * (xv[p * C + c] - mean);
    inv_std[c] = 1.0 / std::sqrt(var / n + eps);
    for (std::size_t p = 0; p < sites; ++p) out[p * C + c] = (xv[p * C + c] - mean) * inv_std[c];
  }
  const std::size_t ix = x.id();
  Tensor y = out;
  return x.tape().record("spatial_standardize", {x}, std::move(out), [=](Tape& t, const Tensor& g) {
    Tensor* gx = t.grad_buffer(ix);
    if (!gx) return;
    for (std::size_t c = 0; c < C; ++c) {
      double mg = 0.0, mgy = 0.0;
      for (std::size_t p = 0; p < sites; ++p) {
        mg += g[p * C + c];
        mgy += g[p * C + c] * y[p * C + c];
      }
      mg /= n;
      mgy /= n;
      for (std::size_t p = 0; p < sites; ++p)
        (*gx)[p * C + c] += inv_std[c] * (g[p * C + c] - mg - y[p * C + c] * mgy);
    }
  });
}

// ---------------------------------------------------------------------------
// Pooling

/// H x W x C -> 1 x C spatial mean.
inline Var global_mean_pool(Var x) {
  detail::require_rank(x, 3, "global_mean_pool");
  const Tensor& xv = x.value();
  const std::size_t C = xv.dim(2), sites = xv.dim(0) * xv.dim(1);
  Tensor out(Shape{1, C});
  for (std::size_t p = 0; p < sites; ++p)
    for (std::size_t c = 0; c < C; ++c) out[c] += xv[p * C + c];
  for (double& v : out.vec()) v /= static_cast<double>(sites);
  const std::size_t ix = x.id();
  return x.tape().record("global_mean_pool", {x}, std::move(out), [=](Tape& t, const Tensor& g) {
    if (Tensor* gx = t.grad_buffer(ix))
      for (std::size_t p = 0; p < sites; ++p)
        for (std::size_t c = 0; c < C; ++c) (*gx)[p * C + c] += g[c] / static_cast<double>(sites);
  });
}

/// Normalized box [cx, cy, w, h] in image coordinates, [0,1]^4.
using Box = std::array<double, 4>;

namespace detail {

struct BilinearTap {
  std::size_t index[4];
  double weight[4];
};

// Sample point (x, y) in normalized image coordinates; pixel centres sit at
// (u + 0.5) / W. Coordinates are clamped to the valid centre range.
inline BilinearTap bilinear_tap(double x, double y, std::size_t H, std::size_t W) {
  double fx = std::clamp(x * static_cast<double>(W) - 0.5, 0.0, static_cast<double>(W - 1));
  double fy = std::clamp(y * static_cast<double>(H) - 0.5, 0.0, static_cast<double>(H - 1));
  const std::size_t x0 = static_cast<std::size_t>(std::floor(fx)), y0 = static_cast<std::size_t>(std::floor(fy));
  const std::size_t x1 = std::min(x0 + 1, W - 1), y1 = std::min(y0 + 1, H - 1);
  const double ax = fx - static_cast<double>(x0), ay = fy - static_cast<double>(y0);
  return BilinearTap{{y0 * W + x0, y0 * W + x1, y1 * W + x0, y1 * W + x1},
                     {(1 - ax) * (1 - ay), ax * (1 - ay), (1 - ax) * ay, ax * ay}};
}

}  // namespace detail

/// Samples a grid x grid lattice of cell centres inside `box` bilinearly and
/// mean-pools to 1 x C.
inline Var roi_pool(Var x, const Box& box, std::size_t grid) {
  detail::require_rank(x, 3, "roi_pool");
  if (!(box[2] > 0.0) || !(box[3] > 0.0)) {
    throw ArgumentError("roi_pool: degenerate box with w=" + std::to_string(box[2]) + " h=" + std::to_string(box[3]));
  }
  if (grid == 0) throw ArgumentError("roi_pool: grid must be positive");
  const Tensor& xv = x.value();
  const std::size_t H = xv.dim(0), W = xv.dim(1), C = xv.dim(2);
  std::vector<detail::BilinearTap> taps;
  taps.reserve(grid * grid);
  const double x0 = box[0] - box[2] / 2, y0 = box[1] - box[3] / 2;
  for (std::size_t i = 0; i < grid; ++i)
    for (std::size_t j = 0; j < grid; ++j) {
      const double sy = y0 + (static_cast<double>(i) + 0.5) * box[3] / static_cast<double>(grid);
      const double sx = x0 + (static_cast<double>(j) + 0.5) * box[2] / static_cast<double>(grid);
      taps.push_back(detail::bilinear_tap(sx, sy, H, W));
    }
  const double inv = 1.0 / static_cast<double>(taps.size());
  Tensor out(Shape{1, C});
  for (const auto& tap : taps)
    for (int q = 0; q < 4; ++q) {
      const double wq = tap.weight[q] * inv;
      if (wq == 0.0) continue;
      const double* in = &xv.vec()[tap.index[q] * C];
      for (std::size_t c = 0; c < C; ++c) out[c] += wq * in[c];
    }
  const std::size_t ix = x.id();
  return x.tape().record("roi_pool", {x}, std::move(out), [ix, taps, inv, C](Tape& t, const Tensor& g) {
    Tensor* gx = t.grad_buffer(ix);
    if (!gx) return;
    for (const auto& tap : taps)
      for (int q = 0; q < 4; ++q) {
        const double wq = tap.weight[q] * inv;
        if (wq == 0.0) continue;
        double* dst = &gx->vec()[tap.index[q] * C];
        for (std::size_t c = 0; c < C; ++c) dst[c] += wq * g[c];
      }
  });
}

// ---------------------------------------------------------------------------
// Vectors and matrices

/// x (1 x D) * W (D x C) + b (1 x C) -> 1 x C
inline Var linear(Var x, Var weight, Var bias) {
  const Tensor& xv = x.value();
  const Tensor& wv = weight.value();
  const std::size_t D = detail::vector_len(xv);
  if (wv.rank() != 2 || wv.dim(0) != D || detail::vector_len(bias.value()) != wv.dim(1)) {
    throw DimensionError("linear: input " + shape_str(xv.shape()) + ", weight " + shape_str(wv.shape()) +
                         ", bias " + shape_str(bias.shape()) + " are incompatible");
  }
  const std::size_t C = wv.dim(1);
  Tensor out(Shape{1, C});
  const Tensor& bv = bias.value();
  for (std::size_t c = 0; c < C; ++c) out[c] = bv[c];
  for (std::size_t d = 0; d < D; ++d) {
    const double a = xv[d];
    if (a == 0.0) continue;
    for (std::size_t c = 0; c < C; ++c) out[c] += a * wv[d * C + c];
  }
  const std::size_t ix = x.id(), iw = weight.id(), ib = bias.id();
  return x.tape().record("linear", {x, weight, bias}, std::move(out), [=](Tape& t, const Tensor& g) {
    const Tensor& xv2 = t.value(ix);
    const Tensor& wv2 = t.value(iw);
    if (Tensor* gx = t.grad_buffer(ix))
      for (std::size_t d = 0; d < D; ++d) {
        double acc = 0.0;
        for (std::size_t c = 0; c < C; ++c) acc += wv2[d * C + c] * g[c];
        (*gx)[d] += acc;
      }
    if (Tensor* gw = t.grad_buffer(iw))
      for (std::size_t d = 0; d < D; ++d)
        for (std::size_t c = 0; c < C; ++c) (*gw)[d * C + c] += xv2[d] * g[c];
    if (Tensor* gb = t.grad_buffer(ib))
      for (std::size_t c = 0; c < C; ++c) (*gb)[c] += g[c];
  });
}

/// Stacks b vectors of length C into a b x C matrix.
inline Var stack_rows(const std::vector<Var>& rows) {
  if (rows.empty()) throw ContractError("stack_rows: no rows");
  const std::size_t C = detail::vector_len(rows.front().value());
  Tensor out(Shape{rows.size(), C});
  std::vector<std::size_t> ids;
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (detail::vector_len(rows[r].value()) != C) {
      throw DimensionError("stack_rows: row " + std::to_string(r) + " has shape " + shape_str(rows[r].shape()) +
                           ", expected length " + std::to_string(C));
    }
    std::copy_n(rows[r].value().vec().begin(), C, out.vec().begin() + static_cast<long>(r * C));
    ids.push_back(rows[r].id());
  }
  return rows.front().tape().record("stack_rows", rows, std::move(out), [ids, C](Tape& t, const Tensor& g) {
    for (std::size_t r = 0; r < ids.size(); ++r)
      if (Tensor* gr = t.grad_buffer(ids[r]))
        for (std::size_t c = 0; c < C; ++c) (*gr)[c] += g[r * C + c];
  });
}

inline Var transpose(Var m) {
  detail::require_rank(m, 2, "transpose");
  const Tensor& mv = m.value();
  const std::size_t R = mv.dim(0), C = mv.dim(1);
  Tensor out(Shape{C, R});
  for (std::size_t r = 0; r < R; ++r)
    for (std::size_t c = 0; c < C; ++c) out[c * R + r] = mv[r * C + c];
  const std::size_t im = m.id();
  return m.tape().record("transpose", {m}, std::move(out), [=](Tape& t, const Tensor& g) {
    if (Tensor* gm = t.grad_buffer(im))
      for (std::size_t r = 0; r < R; ++r)
        for (std::size_t c = 0; c < C; ++c) (*gm)[r * C + c] += g[c * R + r];
  });
}

/// out[i,j] = <A_i, B_j> / (|A_i| |B_j|). A zero-norm row is an error.
inline Var cosine_similarity_matrix(Var A, Var B) {
  detail::require_rank(A, 2, "cosine_similarity_matrix");
  detail::require_same(A, B, "cosine_similarity_matrix");
  const Tensor& av = A.value();
  const Tensor& bv = B.value();
  const std::size_t b = av.dim(0), C = av.dim(1);
  std::vector<double> na(b), nb(b);
  for (std::size_t i = 0; i < b; ++i) {
    double sa = 0, sb = 0;
    for (std::size_t c = 0; c < C; ++c) {
      sa += av[i * C + c] * av[i * C + c];
      sb += bv[i * C + c] * bv[i * C + c];
    }
    na[i] = std::sqrt(sa);
    nb[i] = std::sqrt(sb);
    if (na[i] == 0.0 || nb[i] == 0.0) {
      throw DegenerateInputError("cosine_similarity_matrix: row " + std::to_string(i) + " of " +
                                 (na[i] == 0.0 ? "first" : "second") + " input has zero norm");
    }
  }
  Tensor out(Shape{b, b});
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t j = 0; j < b; ++j) {
      double dot = 0;
      for (std::size_t c = 0; c < C; ++c) dot += av[i * C + c] * bv[j * C + c];
      out[i * b + j] = dot / (na[i] * nb[j]);
    }
  const std::size_t ia = A.id(), ib = B.id();
  return A.tape().record("cosine_similarity_matrix", {A, B}, out, [=](Tape& t, const Tensor& g) {
    const Tensor& av2 = t.value(ia);
    const Tensor& bv2 = t.value(ib);
    Tensor* ga = t.grad_buffer(ia);
    Tensor* gb = t.grad_buffer(ib);
    for (std::size_t i = 0; i < b; ++i)
      for (std::size_t j = 0; j < b; ++j) {
        const double gij = g[i * b + j];
        if (gij == 0.0) continue;
        const double s = out[i * b + j];
        for (std::size_t c = 0; c < C; ++c) {
          const double ahat = av2[i * C + c] / na[i];
          const double bhat = bv2[j * C + c] / nb[j];
          if (ga) (*ga)[i * C + c] += gij * (bhat - s * ahat) / na[i];
          if (gb) (*gb)[j * C + c] += gij * (ahat - s * bhat) / nb[j];
        }
      }
  });
}

/// Mean over rows of -log softmax(row)[label].
inline Var softmax_cross_entropy_rows(Var logits, const std::vector<std::size_t>& labels) {
  detail::require_rank(logits, 2, "softmax_cross_entropy_rows");
  const Tensor& lv = logits.value();
  const std::size_t R = lv.dim(0), C = lv.dim(1);
  if (labels.size() != R) {
    throw ArgumentError("softmax_cross_entropy_rows: " + std::to_string(labels.size()) + " labels for " +
                        std::to_string(R) + " rows");
  }
  for (std::size_t l : labels)
    if (l >= C) throw ArgumentError("softmax_cross_entropy_rows: label " + std::to_string(l) + " outside [0," +
                                    std::to_string(C) + ")");
  Tensor probs(Shape{R, C});
  double loss = 0.0;
  for (std::size_t r = 0; r < R; ++r) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < C; ++c) mx = std::max(mx, lv[r * C + c]);
    double se = 0.0;
    for (std::size_t c = 0; c < C; ++c) se += std::exp(lv[r * C + c] - mx);
    const double lse = mx + std::log(se);
    loss += lse - lv[r * C + labels[r]];
    for (std::size_t c = 0; c < C; ++c) probs[r * C + c] = std::exp(lv[r * C + c] - lse);
  }
  loss /= static_cast<double>(R);
  const std::size_t il = logits.id();
  return logits.tape().record("softmax_cross_entropy_rows", {logits}, Tensor::scalar(loss),
                              [=](Tape& t, const Tensor& g) {
                                Tensor* gl = t.grad_buffer(il);
                                if (!gl) return;
                                const double s = g[0] / static_cast<double>(R);
                                for (std::size_t r = 0; r < R; ++r)
                                  for (std::size_t c = 0; c < C; ++c)
                                    (*gl)[r * C + c] += s * (probs[r * C + c] - (c == labels[r] ? 1.0 : 0.0));
                              });
}

// ---------------------------------------------------------------------------
// Matching

/// Per-channel sliding-window correlation of `tmpl` over `search` (valid
/// positions only): out[i,j,c] = sum_{u,v} tmpl[u,v,c] * search[i+u, j+v, c].
inline Var depthwise_xcorr(Var tmpl, Var search) {
  detail::require_rank(tmpl, 3, "depthwise_xcorr");
  detail::require_rank(search, 3, "depthwise_xcorr");
  const Tensor& tv = tmpl.value();
  const Tensor& sv = search.value();
  if (tv.dim(2) != sv.dim(2)) {
    throw DimensionError("depthwise_xcorr: channel mismatch " + shape_str(tv.shape()) + " vs " + shape_str(sv.shape()));
  }
  if (tv.dim(0) > sv.dim(0) || tv.dim(1) > sv.dim(1)) {
    throw ArgumentError("depthwise_xcorr: template " + shape_str(tv.shape()) + " larger than search " +
                        shape_str(sv.shape()));
  }
  const std::size_t Ht = tv.dim(0), Wt = tv.dim(1), Ws = sv.dim(1), C = tv.dim(2);
  const std::size_t Ho = sv.dim(0) - Ht + 1, Wo = Ws - Wt + 1;
  Tensor out(Shape{Ho, Wo, C});
  for (std::size_t i = 0; i < Ho; ++i)
    for (std::size_t j = 0; j < Wo; ++j) {
      double* o = &out.vec()[(i * Wo + j) * C];
      for (std::size_t u = 0; u < Ht; ++u)
        for (std::size_t v = 0; v < Wt; ++v) {
          const double* tp = &tv.vec()[(u * Wt + v) * C];
          const double* sp = &sv.vec()[((i + u) * Ws + (j + v)) * C];
          for (std::size_t c = 0; c < C; ++c) o[c] += tp[c] * sp[c];
        }
    }
  const std::size_t it = tmpl.id(), is = search.id();
  return tmpl.tape().record("depthwise_xcorr", {tmpl, search}, std::move(out), [=](Tape& t, const Tensor& g) {
    const Tensor& tv2 = t.value(it);
    const Tensor& sv2 = t.value(is);
    Tensor* gt = t.grad_buffer(it);
    Tensor* gs = t.grad_buffer(is);
    for (std::size_t i = 0; i < Ho; ++i)
      for (std::size_t j = 0; j < Wo; ++j) {
        const double* go = &g.vec()[(i * Wo + j) * C];
        for (std::size_t u = 0; u < Ht; ++u)
          for (std::size_t v = 0; v < Wt; ++v) {
            const std::size_t tb = (u * Wt + v) * C, sb = ((i + u) * Ws + (j + v)) * C;
            if (gt)
              for (std::size_t c = 0; c < C; ++c) (*gt)[tb + c] += go[c] * sv2[sb + c];
            if (gs)
              for (std::size_t c = 0; c < C; ++c) (*gs)[sb + c] += go[c] * tv2[tb + c];
          }
      }
  });
}

// ---------------------------------------------------------------------------
// Losses

/// Class-balanced binary cross-entropy with logits over an h x w x 1 map:
/// 0.5 * mean over positive cells + 0.5 * mean over negative cells.
inline Var balanced_bce_with_logits(Var logits, const std::vector<double>& labels) {
  const Tensor& lv = logits.value();
  if (labels.size() != lv.numel()) {
    throw DimensionError("balanced_bce_with_logits: " + std::to_string(labels.size()) + " labels for logits " +
                         shape_str(lv.shape()));
  }
  std::size_t npos = 0;
  for (double y : labels) {
    if (y != 0.0 && y != 1.0) throw ArgumentError("balanced_bce_with_logits: labels must be 0 or 1");
    npos += y == 1.0;
  }
  const std::size_t nneg = labels.size() - npos;
  std::vector<double> w(labels.size());
  const double parts = (npos > 0) + (nneg > 0);
  for (std::size_t i = 0; i < labels.size(); ++i)
    w[i] = labels[i] == 1.0 ? 1.0 / (parts * static_cast<double>(npos)) : 1.0 / (parts * static_cast<double>(nneg));
  double loss = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const double z = lv[i];
    // log(1 + e^{-|z|}) + max(z,0) - z*y, stable form
    loss += w[i] * (std::max(z, 0.0) - z * labels[i] + std::log1p(std::exp(-std::abs(z))));
  }
  const std::size_t il = logits.id();
  return logits.tape().record("balanced_bce_with_logits", {logits}, Tensor::scalar(loss),
                              [il, labels, w](Tape& t, const Tensor& g) {
                                Tensor* gl = t.grad_buffer(il);
                                if (!gl) return;
                                const Tensor& lv2 = t.value(il);
                                for (std::size_t i = 0; i < labels.size(); ++i) {
                                  const double p = 1.0 / (1.0 + std::exp(-lv2[i]));
                                  (*gl)[i] += g[0] * w[i] * (p - labels[i]);
                                }
                              });
}

/// Mean absolute error over the rows of an h x w x K map selected by `mask`,
/// against per-cell targets (K values each). Zero when the mask is empty.
inline Var masked_l1(Var pred, const std::vector<double>& targets, const std::vector<bool>& mask) {
  detail::require_rank(pred, 3, "masked_l1");
  const Tensor& pv = pred.value();
  const std::size_t K = pv.dim(2), cells = pv.dim(0) * pv.dim(1);
  if (mask.size() != cells || targets.size() != pv.numel()) {
    throw DimensionError("masked_l1: mask/targets do not match prediction " + shape_str(pv.shape()));
  }
  std::size_t active = 0;
  for (bool m : mask) active += m;
  double loss = 0.0;
  const double inv = active ? 1.0 / static_cast<double>(active * K) : 0.0;
  for (std::size_t p = 0; p < cells; ++p)
    if (mask[p])
      for (std::size_t k = 0; k < K; ++k) {
        const double d = pv[p * K + k] - targets[p * K + k];
        pred.tape().note_branch(d > 0.0);
        loss += inv * std::abs(d);
      }
  const std::size_t ip = pred.id();
  return pred.tape().record("masked_l1", {pred}, Tensor::scalar(loss), [=](Tape& t, const Tensor& g) {
    Tensor* gp = t.grad_buffer(ip);
    if (!gp) return;
    const Tensor& pv2 = t.value(ip);
    for (std::size_t p = 0; p < cells; ++p)
      if (mask[p])
        for (std::size_t k = 0; k < K; ++k) {
          const double d = pv2[p * K + k] - targets[p * K + k];
          (*gp)[p * K + k] += g[0] * inv * (d > 0 ? 1.0 : (d < 0 ? -1.0 : 0.0));
        }
  });
}

}  // namespace vlt::ops
