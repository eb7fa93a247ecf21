#pragma once

#include <array>
#include <cmath>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "vlt/arch.hpp"
#include "vlt/blocks.hpp"
#include "vlt/errors.hpp"
#include "vlt/ops.hpp"
#include "vlt/params.hpp"

namespace vlt::modamixer {

using BlockFn = std::function<Var(Var)>;

inline constexpr double kDefaultTemperature = 1.0;
inline constexpr double kDefaultLambda = 0.1;
inline constexpr std::size_t kRoiGrid = 4;

struct MixResult {
  Var out;
  Var selector;     // Linear(f_l), 1 x C; doubles as the language embedding e_l
  Var vision_path;  // Block_vis(f_v), the source of the visual embedding e_v
};

/// f_m = Block_sel(Linear(f_l) (.) f_v) + Block_vis(f_v); the second term is
/// dropped when `residual` is false.
inline MixResult mix_traced(Var f_l, Var f_v, Var weight, Var bias, const BlockFn& block_sel, const BlockFn& block_vis,
                            bool residual = true, const std::string& stage = "mixer") {
  const Tensor& w = weight.value();
  const std::size_t lang = f_l.value().numel();
  if (w.rank() != 2 || w.dim(0) != lang) {
    throw DimensionError(stage + ": language vector has " + std::to_string(lang) + " entries, projection expects " +
                         (w.rank() == 2 ? std::to_string(w.dim(0)) : shape_str(w.shape())));
  }
  if (f_v.value().rank() != 3 || f_v.value().dim(2) != w.dim(1)) {
    throw DimensionError(stage + ": feature map " + shape_str(f_v.shape()) + " does not have the expected " +
                         std::to_string(w.dim(1)) + " channels");
  }
  const Var selector = ops::linear(f_l, weight, bias);
  const Var selected = block_sel(ops::hadamard_select(selector, f_v));
  if (!residual) return {selected, selector, Var{}};
  const Var vision = block_vis(f_v);
  return {ops::add(selected, vision), selector, vision};
}

inline Var mix(Var f_l, Var f_v, Var weight, Var bias, const BlockFn& block_sel, const BlockFn& block_vis) {
  return mix_traced(f_l, f_v, weight, bias, block_sel, block_vis, true).out;
}

inline Var mix_no_residual(Var f_l, Var f_v, Var weight, Var bias, const BlockFn& block_sel) {
  return mix_traced(f_l, f_v, weight, bias, block_sel, [](Var x) { return x; }, false).out;
}

/// Store-backed ModaMixer: projection `<prefix>/lin.{w,b}` and four candidates
/// for each of the two slots, `<prefix>/sel/c<k>` and `<prefix>/vis/c<k>`.
struct ModaMixerParams {
  std::string prefix;
  std::size_t channels = 0;
  std::size_t lang_dim = 0;

  BlockChoice slot_block(int digit) const {
    return BlockChoice{static_cast<BlockKind>(digit), 1, channels, channels};
  }
  std::string candidate_prefix(int slot, int digit) const {
    return prefix + (slot == 0 ? "/sel/c" : "/vis/c") + std::to_string(digit);
  }
};

/// Projection weights scaled-uniform by fan-in, zero bias; every candidate block
/// initialized independently.
inline void init_modamixer(ParamStore& store, const ModaMixerParams& p, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(p.lang_dim));
  Tensor w(Shape{p.lang_dim, p.channels});
  for (double& v : w.vec()) v = rng.uniform(-bound, bound);
  store.add(p.prefix + "/lin.w", std::move(w));
  store.add(p.prefix + "/lin.b", Tensor(Shape{1, p.channels}, 0.0));
  for (int slot = 0; slot < 2; ++slot)
    for (int k = 0; k < kChoices; ++k) blocks::init_block(store, p.candidate_prefix(slot, k), p.slot_block(k), rng);
}

inline MixResult mix_from_store(ParamBinder& binder, const ModaMixerParams& p, const std::array<int, 2>& code, Var f_l,
                                Var f_v, bool residual) {
  const BlockChoice sel = p.slot_block(code[0]);
  const BlockChoice vis = p.slot_block(code[1]);
  const std::string sel_prefix = p.candidate_prefix(0, code[0]);
  const std::string vis_prefix = p.candidate_prefix(1, code[1]);
  return mix_traced(
      f_l, f_v, binder(p.prefix + "/lin.w"), binder(p.prefix + "/lin.b"),
      [&](Var x) { return blocks::block_forward(binder, sel_prefix, sel, x); },
      [&](Var x) { return blocks::block_forward(binder, vis_prefix, vis, x); }, residual, p.prefix);
}

/// Bilinear grid sampling inside a normalized [cx, cy, w, h] box, mean-pooled
/// to 1 x C.
inline Var roi_embed(Var fmap, const ops::Box& box, std::size_t grid = kRoiGrid) {
  for (double v : box)
    if (v < 0.0 || v > 1.0) throw ArgumentError("roi_embed: box coordinates must lie in [0,1]");
  return ops::roi_pool(fmap, box, grid);
}

/// Paired embedding groups; row i of both describes the same sample.
struct ContrastiveBatch {
  Var e_v;  // b x C
  Var e_l;  // b x C
};

/// [CE(m, diag) + CE(m^T, diag)] / 2 with m = cos(e_v, e_l) / temperature.
inline Var contrastive_loss(const ContrastiveBatch& batch, double temperature = kDefaultTemperature) {
  if (!(temperature > 0.0)) throw ArgumentError("contrastive_loss: temperature must be positive");
  const Tensor& ev = batch.e_v.value();
  if (ev.rank() != 2) throw DimensionError("contrastive_loss: embeddings must be b x C, got " + shape_str(ev.shape()));
  const std::size_t b = ev.dim(0);
  std::vector<std::size_t> labels(b);
  std::iota(labels.begin(), labels.end(), std::size_t{0});
  const Var logits = ops::scale(ops::cosine_similarity_matrix(batch.e_v, batch.e_l), 1.0 / temperature);
  const Var ce_rows = ops::softmax_cross_entropy_rows(logits, labels);
  const Var ce_cols = ops::softmax_cross_entropy_rows(ops::transpose(logits), labels);
  return ops::scale(ops::add(ce_rows, ce_cols), 0.5);
}

inline double contrastive_loss_value(const Tensor& e_v, const Tensor& e_l, double temperature = kDefaultTemperature) {
  Tape tape;
  return contrastive_loss({tape.constant(e_v), tape.constant(e_l)}, temperature).value()[0];
}

/// Which (branch, stage) ModaMixers contribute a contrastive term.
struct ContrastiveWiring {
  std::vector<bool> stages;  // indexed by stage, 0-based
  bool tmpl = true;
  bool search = true;
  double lambda = kDefaultLambda;
  double temperature = kDefaultTemperature;
  // Off = contrastive gradients reach only the language projection, not the
  // visual features.
  bool backprop_visual = true;

  static ContrastiveWiring first_stage_both(std::size_t n_stages) {
    ContrastiveWiring w;
    w.stages.assign(n_stages, false);
    if (n_stages) w.stages[0] = true;
    return w;
  }
  static ContrastiveWiring none(std::size_t n_stages) {
    ContrastiveWiring w;
    w.stages.assign(n_stages, false);
    w.tmpl = w.search = false;
    return w;
  }

  std::size_t terms_per_step() const {
    std::size_t n = 0;
    for (bool s : stages) n += s;
    return n * (static_cast<std::size_t>(tmpl) + static_cast<std::size_t>(search));
  }

  bool active(bool template_branch, std::size_t stage) const {
    return stage < stages.size() && stages[stage] && (template_branch ? tmpl : search);
  }

  /// Build-time wiring check. `projection_channels[s]` is the output width of
  /// stage s's language projection; it must match the stage's visual channels.
  void validate(const StageLayout& layout, const std::vector<std::size_t>& projection_channels = {}) const {
    if (stages.size() > layout.stages()) {
      throw ContractError("contrastive wiring flags " + std::to_string(stages.size()) + " stages, layout has " +
                          std::to_string(layout.stages()));
    }
    for (std::size_t s = 0; s < stages.size() && s < projection_channels.size(); ++s)
      if (stages[s] && layout.channels[s] != projection_channels[s]) {
        throw ContractError("contrastive wiring: stage " + std::to_string(s + 1) + " has " +
                            std::to_string(layout.channels[s]) + " visual channels, language embedding has " +
                            std::to_string(projection_channels[s]));
      }
    if (!(temperature > 0.0)) throw ContractError("contrastive wiring: temperature must be positive");
    if (lambda < 0.0) throw ContractError("contrastive wiring: lambda must be non-negative");
  }
};

}  // namespace vlt::modamixer
