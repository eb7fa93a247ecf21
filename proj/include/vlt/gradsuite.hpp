#pragma once

#include <cmath>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "vlt/blocks.hpp"
#include "vlt/gradcheck.hpp"
#include "vlt/modamixer.hpp"
#include "vlt/ops.hpp"
#include "vlt/params.hpp"
#include "vlt/random.hpp"

namespace vlt::gradsuite {

inline constexpr double kStep = 1e-4;
inline constexpr double kTolerance = 1e-5;
inline constexpr std::size_t kDefaultSeeds = 20;

/// One registered check: a graph plus an input generator per seed.
struct Case {
  std::string name;
  std::function<std::vector<Tensor>(Rng&)> inputs;
  GraphFn graph;
};

/// Entries in [-1, -0.05] U [0.05, 1], away from the ReLU and L1 kinks.
inline Tensor random_tensor(const Shape& s, Rng& rng) {
  Tensor t(s);
  for (double& v : t.vec()) {
    const double m = rng.uniform(0.05, 1.0);
    v = rng.bernoulli(0.5) ? m : -m;
  }
  return t;
}

/// Rows rescaled to norms in [1, 2]; cosine-type ops are scale invariant and
/// ill-conditioned near zero norm.
inline Tensor random_rows(const Shape& s, Rng& rng) {
  Tensor t = random_tensor(s, rng);
  const std::size_t cols = s.back(), rows = t.numel() / cols;
  for (std::size_t r = 0; r < rows; ++r) {
    double n = 0.0;
    for (std::size_t c = 0; c < cols; ++c) n += t[r * cols + c] * t[r * cols + c];
    const double target = rng.uniform(1.0, 2.0) / std::sqrt(n);
    for (std::size_t c = 0; c < cols; ++c) t[r * cols + c] *= target;
  }
  return t;
}

/// Scalarization of an arbitrary tensor: fixed mixed-sign weighted sum.
inline Var scalarize(Var x) {
  std::vector<double> w(x.value().numel());
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = std::sin(1.0 + 2.3 * static_cast<double>(i));
  return ops::weighted_sum(x, w);
}

namespace detail {

inline Case unary(std::string name, Shape shape, std::function<Var(Var)> f) {
  return {std::move(name), [shape](Rng& r) { return std::vector<Tensor>{random_tensor(shape, r)}; },
          [f](Tape&, const std::vector<Var>& v) { return scalarize(f(v[0])); }};
}

inline Case binary(std::string name, Shape a, Shape b, std::function<Var(Var, Var)> f) {
  return {std::move(name), [a, b](Rng& r) { return std::vector<Tensor>{random_tensor(a, r), random_tensor(b, r)}; },
          [f](Tape&, const std::vector<Var>& v) { return scalarize(f(v[0], v[1])); }};
}

/// ModaMixer with store-free blocks: every block parameter is a graph input.
struct MixerFixture {
  std::size_t channels = 4;
  std::size_t lang = 6;
  BlockChoice sel{};
  BlockChoice vis{};
  std::vector<std::string> keys;  // block parameter keys, input order after the fixed ones
  std::vector<Shape> shapes;
  ParamStore empty;

  MixerFixture(int sel_digit, int vis_digit) {
    sel = {static_cast<BlockKind>(sel_digit), 1, channels, channels};
    vis = {static_cast<BlockKind>(vis_digit), 1, channels, channels};
    ParamStore store;
    Rng dummy(0);
    blocks::init_block(store, "sel", sel, dummy);
    blocks::init_block(store, "vis", vis, dummy);
    for (const auto& [k, p] : store.entries()) {
      keys.push_back(k);
      shapes.push_back(p.value.shape());
    }
  }

  // inputs: f_l, f_v, W, b, then block params in `keys` order
  std::vector<Tensor> make_inputs(Rng& r, std::size_t height) const {
    std::vector<Tensor> in{random_tensor(Shape{1, lang}, r), random_tensor(Shape{height, 3, channels}, r),
                           random_tensor(Shape{lang, channels}, r), random_tensor(Shape{1, channels}, r)};
    for (const Shape& s : shapes) in.push_back(random_tensor(s, r));
    return in;
  }

  modamixer::MixResult forward(Tape& tape, const std::vector<Var>& v, bool residual = true) const {
    ParamBinder binder(tape, empty, false);
    for (std::size_t i = 0; i < keys.size(); ++i) binder.provide(keys[i], v[4 + i]);
    return modamixer::mix_traced(
        v[0], v[1], v[2], v[3], [&](Var x) { return blocks::block_forward(binder, "sel", sel, x); },
        [&](Var x) { return blocks::block_forward(binder, "vis", vis, x); }, residual);
  }
};

}  // namespace detail

/// Every differentiable op plus the composed ModaMixer / contrastive graphs.
inline std::vector<Case> registered_cases() {
  using detail::binary;
  using detail::unary;
  std::vector<Case> cases;
  cases.push_back(binary("add", {2, 3, 2}, {2, 3, 2}, ops::add));
  cases.push_back(unary("scale", {2, 2, 3}, [](Var x) { return ops::scale(x, -1.7); }));
  cases.push_back(unary("sum", {2, 3}, [](Var x) { return ops::sum(x); }));
  cases.push_back({"weighted_sum", [](Rng& r) { return std::vector<Tensor>{random_tensor({2, 3, 2}, r)}; },
                   [](Tape&, const std::vector<Var>& v) {
                     return ops::weighted_sum(v[0], {0.3, -1.0, 2.0, 0.5, -0.25, 1.5, 0.1, 0.7, -0.9, 1.1, -2.0, 0.4});
                   }});
  cases.push_back(unary("mean", {2, 3}, [](Var x) { return ops::mean(x); }));
  cases.push_back({"add_n",
                   [](Rng& r) { return std::vector<Tensor>{random_tensor({2, 2}, r), random_tensor({2, 3}, r)}; },
                   [](Tape&, const std::vector<Var>& v) {
                     return ops::add_n({scalarize(v[0]), scalarize(v[1]), scalarize(ops::scale(v[0], 2.0))});
                   }});
  cases.push_back(unary("relu", {3, 3, 2}, ops::relu));
  cases.push_back(binary("hadamard_select", {1, 3}, {3, 2, 3}, ops::hadamard_select));
  cases.push_back(unary("channel_shuffle", {2, 2, 6}, [](Var x) { return ops::channel_shuffle(x, 2); }));
  cases.push_back(binary("concat_channels", {2, 2, 2}, {2, 2, 3}, ops::concat_channels));
  cases.push_back(unary("slice_channels", {2, 2, 5}, [](Var x) { return ops::slice_channels(x, 1, 4); }));
  cases.push_back(binary("conv2d", {5, 5, 3}, {3, 3, 3, 2}, [](Var x, Var w) { return ops::conv2d(x, w, 2); }));
  cases.push_back(binary("pointwise_conv", {3, 3, 3}, {3, 4}, ops::pointwise_conv));
  cases.push_back(binary("depthwise_conv", {6, 6, 2}, {5, 5, 2}, [](Var x, Var w) { return ops::depthwise_conv(x, w, 2); }));
  cases.push_back({"affine_norm",
                   [](Rng& r) {
                     return std::vector<Tensor>{random_tensor({3, 2, 3}, r), random_tensor({1, 3}, r), random_tensor({1, 3}, r)};
                   },
                   [](Tape&, const std::vector<Var>& v) { return scalarize(ops::affine_norm(v[0], v[1], v[2])); }});
  cases.push_back(unary("spatial_standardize", {3, 3, 2}, [](Var x) { return ops::spatial_standardize(x); }));
  cases.push_back(unary("global_mean_pool", {3, 2, 3}, ops::global_mean_pool));
  cases.push_back(unary("roi_pool", {5, 4, 2}, [](Var x) { return ops::roi_pool(x, {0.45, 0.55, 0.5, 0.35}, 4); }));
  cases.push_back({"linear",
                   [](Rng& r) {
                     return std::vector<Tensor>{random_tensor({1, 5}, r), random_tensor({5, 3}, r), random_tensor({1, 3}, r)};
                   },
                   [](Tape&, const std::vector<Var>& v) { return scalarize(ops::linear(v[0], v[1], v[2])); }});
  cases.push_back(binary("stack_rows", {1, 3}, {1, 3}, [](Var a, Var b) { return ops::stack_rows({a, b}); }));
  cases.push_back(unary("transpose", {2, 3}, ops::transpose));
  cases.push_back({"cosine_similarity_matrix",
                   [](Rng& r) { return std::vector<Tensor>{random_rows({3, 4}, r), random_rows({3, 4}, r)}; },
                   [](Tape&, const std::vector<Var>& v) { return scalarize(ops::cosine_similarity_matrix(v[0], v[1])); }});
  cases.push_back({"softmax_cross_entropy_rows", [](Rng& r) { return std::vector<Tensor>{random_tensor({3, 4}, r)}; },
                   [](Tape&, const std::vector<Var>& v) { return ops::softmax_cross_entropy_rows(v[0], {2, 0, 3}); }});
  cases.push_back(binary("depthwise_xcorr", {2, 2, 3}, {4, 3, 3}, ops::depthwise_xcorr));
  cases.push_back({"balanced_bce_with_logits", [](Rng& r) { return std::vector<Tensor>{random_tensor({3, 3, 1}, r)}; },
                   [](Tape&, const std::vector<Var>& v) {
                     return ops::balanced_bce_with_logits(v[0], {1, 0, 0, 0, 1, 0, 0, 1, 0});
                   }});
  cases.push_back({"masked_l1", [](Rng& r) { return std::vector<Tensor>{random_tensor({2, 2, 3}, r)}; },
                   [](Tape&, const std::vector<Var>& v) {
                     // targets well away from the inputs' range
                     return ops::masked_l1(v[0], std::vector<double>(12, 1.5), {true, false, true, true});
                   }});

  // Composed graphs.
  {
    const auto fx = std::make_shared<detail::MixerFixture>(0, 1);
    cases.push_back({"modamixer", [fx](Rng& r) { return fx->make_inputs(r, 3); },
                     [fx](Tape& t, const std::vector<Var>& v) { return scalarize(fx->forward(t, v).out); }});
  }
  {
    const auto fx = std::make_shared<detail::MixerFixture>(1, 3);
    cases.push_back({"modamixer_no_residual", [fx](Rng& r) { return fx->make_inputs(r, 3); },
                     [fx](Tape& t, const std::vector<Var>& v) { return scalarize(fx->forward(t, v, false).out); }});
  }
  cases.push_back({"contrastive_loss",
                   [](Rng& r) { return std::vector<Tensor>{random_rows({3, 4}, r), random_rows({3, 4}, r)}; },
                   [](Tape&, const std::vector<Var>& v) { return modamixer::contrastive_loss({v[0], v[1]}, 0.7); }});
  {
    // Task-like term on the mixer output plus lambda * contrastive over a batch
    // of two samples built from the same parameters.
    const auto fx = std::make_shared<detail::MixerFixture>(2, 0);
    cases.push_back({"modamixer+contrastive",
                     [fx](Rng& r) {
                       std::vector<Tensor> in = fx->make_inputs(r, 3);
                       in.push_back(random_tensor(Shape{1, fx->lang}, r));
                       in.push_back(random_tensor(Shape{3, 3, fx->channels}, r));
                       return in;
                     },
                     [fx](Tape& t, const std::vector<Var>& v) {
                       const std::size_t n = v.size();
                       std::vector<Var> second(v.begin(), v.end() - 2);
                       second[0] = v[n - 2];
                       second[1] = v[n - 1];
                       const modamixer::MixResult a = fx->forward(t, v);
                       const modamixer::MixResult b = fx->forward(t, second);
                       const ops::Box box{0.5, 0.5, 0.6, 0.6};
                       const Var ev = ops::stack_rows({modamixer::roi_embed(a.vision_path, box), modamixer::roi_embed(b.vision_path, box)});
                       const Var el = ops::stack_rows({a.selector, b.selector});
                       const Var task = ops::add(scalarize(a.out), scalarize(b.out));
                       return ops::add(task, ops::scale(modamixer::contrastive_loss({ev, el}, 1.0), modamixer::kDefaultLambda));
                     }});
  }
  return cases;
}

struct SuiteResult {
  std::vector<GradReport> reports;  // worst over seeds, one per case
  std::vector<std::string> failing;

  bool pass() const { return failing.empty(); }
};

inline SuiteResult run_suite(std::size_t seeds = kDefaultSeeds, std::uint64_t base_seed = 0) {
  SuiteResult out;
  for (const Case& c : registered_cases()) {
    GradReport agg;
    agg.name = c.name;
    agg.tolerance = kTolerance;
    agg.pass = true;
    for (std::size_t s = 0; s < seeds; ++s) {
      Rng rng = Rng(base_seed).child(c.name).child(s);
      const GradReport r = grad_check(c.graph, c.inputs(rng), kStep, kTolerance, c.name);
      if (agg.max_rel_error.empty()) agg.max_rel_error.assign(r.max_rel_error.size(), 0.0);
      agg.checked += r.checked;
      agg.skipped += r.skipped;
      for (std::size_t i = 0; i < r.max_rel_error.size(); ++i)
        agg.max_rel_error[i] = std::max(agg.max_rel_error[i], r.max_rel_error[i]);
      agg.pass = agg.pass && r.pass;
    }
    if (!agg.pass) out.failing.push_back(c.name);
    out.reports.push_back(std::move(agg));
  }
  return out;
}

}  // namespace vlt::gradsuite
