#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "vlt/arch.hpp"
#include "vlt/errors.hpp"
#include "vlt/lang.hpp"
#include "vlt/modamixer.hpp"
#include "vlt/ops.hpp"
#include "vlt/params.hpp"
#include "vlt/random.hpp"
#include "vlt/scene.hpp"
#include "vlt/supernet.hpp"

namespace vlt::track {

using ops::Box;

// ---------------------------------------------------------------------------
// Geometry of the response map

inline std::size_t ceil_div(std::size_t a, std::size_t b) { return (a + b - 1) / b; }

/// Maps response-map cells to normalized search-image coordinates.
struct Geometry {
  std::size_t search_size = scene::kSearchSize;
  std::size_t template_size = scene::kTemplateSize;
  std::size_t stride = 8;

  static Geometry for_layout(const StageLayout& layout) {
    return {scene::kSearchSize, scene::kTemplateSize, layout.total_stride()};
  }

  std::size_t template_cells() const { return ceil_div(template_size, stride); }
  std::size_t search_cells() const { return ceil_div(search_size, stride); }
  std::size_t response_cells() const { return search_cells() - template_cells() + 1; }

  /// Normalized coordinate of the centre of response cell `i` (either axis).
  double cell_center(std::size_t i) const {
    const double feat = static_cast<double>(i) + (static_cast<double>(template_cells()) - 1.0) / 2.0;
    return (feat + 0.5) * static_cast<double>(stride) / static_cast<double>(search_size);
  }
  /// Continuous response coordinate of a normalized image coordinate.
  double to_cell(double x) const {
    return x * static_cast<double>(search_size) / static_cast<double>(stride) - 0.5 -
           (static_cast<double>(template_cells()) - 1.0) / 2.0;
  }
  double cell_pitch() const { return static_cast<double>(stride) / static_cast<double>(search_size); }
};

// ---------------------------------------------------------------------------
// Matching head

inline constexpr std::size_t kHeadHidden = 32;

enum class HeadInit { Random, Unit };

/// head/cls: linear channel weighting of the correlation map; head/h + head/reg:
/// one hidden pointwise layer regressing [l, t, r, b].
inline void init_head(ParamStore& store, std::size_t channels, Rng& rng, HeadInit init = HeadInit::Random) {
  if (init == HeadInit::Unit) {
    store.add("head/cls.w", Tensor(Shape{channels, 1}, 1.0));
  } else {
    store.add("head/cls.w", init_uniform(Shape{channels, 1}, channels, rng, 0.5));
  }
  store.add("head/cls.g", Tensor(Shape{1, 1}, 1.0));
  store.add("head/cls.b", Tensor(Shape{1, 1}, 0.0));
  store.add("head/h.w", init_uniform(Shape{channels, kHeadHidden}, channels, rng));
  store.add("head/h.g", Tensor(Shape{1, kHeadHidden}, 1.0));
  store.add("head/h.b", Tensor(Shape{1, kHeadHidden}, 0.0));
  store.add("head/reg.w", init_uniform(Shape{kHeadHidden, 4}, kHeadHidden, rng, 0.1));
  store.add("head/reg.g", Tensor(Shape{1, 4}, 1.0));
  store.add("head/reg.b", Tensor(Shape{1, 4}, 0.15));
}

struct ResponseOutput {
  Var score;  // h x w x 1 logits
  Var box;    // h x w x 4 offsets [l, t, r, b], normalized image units
};

/// Depthwise cross-correlation, standardized per channel over the response
/// map, then the score and regression heads.
inline ResponseOutput match_head(ParamBinder& p, Var template_f, Var search_f) {
  if (template_f.value().rank() != 3 || search_f.value().rank() != 3 ||
      template_f.value().dim(2) != search_f.value().dim(2)) {
    throw DimensionError("match_head: channel counts differ: " + shape_str(template_f.shape()) + " vs " +
                         shape_str(search_f.shape()));
  }
  const Var corr = ops::spatial_standardize(ops::depthwise_xcorr(template_f, search_f));
  Var score = ops::affine_norm(ops::pointwise_conv(corr, p("head/cls.w")), p("head/cls.g"), p("head/cls.b"));
  Var hidden = ops::relu(ops::affine_norm(ops::pointwise_conv(corr, p("head/h.w")), p("head/h.g"), p("head/h.b")));
  Var box = ops::affine_norm(ops::pointwise_conv(hidden, p("head/reg.w")), p("head/reg.g"), p("head/reg.b"));
  return {score, box};
}

// ---------------------------------------------------------------------------
// Loss, decoding, metric

inline double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

struct LossTargets {
  std::vector<double> labels;   // h*w, 0/1
  std::vector<bool> positive;   // h*w
  std::vector<double> offsets;  // h*w*4
};

inline constexpr double kLabelSigma = 0.85;  // in response cells

/// Gaussian blob around the ground-truth centre, thresholded at 0.5; the nearest
/// cell is always positive. Offsets are distances from each cell centre to the
/// box edges.
inline LossTargets make_targets(const Geometry& g, const Box& gt) {
  const std::size_t n = g.response_cells();
  LossTargets t;
  t.labels.assign(n * n, 0.0);
  t.positive.assign(n * n, false);
  t.offsets.assign(n * n * 4, 0.0);
  const double ci = g.to_cell(gt[1]), cj = g.to_cell(gt[0]);
  const auto nearest = [&](double c) {
    return static_cast<std::size_t>(std::clamp(std::lround(c), 0L, static_cast<long>(n) - 1));
  };
  const std::size_t ni = nearest(ci), nj = nearest(cj);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      const double di = static_cast<double>(i) - ci, dj = static_cast<double>(j) - cj;
      const double blob = std::exp(-(di * di + dj * dj) / (2 * kLabelSigma * kLabelSigma));
      const bool pos = blob >= 0.5 || (i == ni && j == nj);
      const std::size_t c = i * n + j;
      t.labels[c] = pos ? 1.0 : 0.0;
      t.positive[c] = pos;
      const double x = g.cell_center(j), y = g.cell_center(i);
      t.offsets[c * 4 + 0] = x - (gt[0] - gt[2] / 2);
      t.offsets[c * 4 + 1] = y - (gt[1] - gt[3] / 2);
      t.offsets[c * 4 + 2] = (gt[0] + gt[2] / 2) - x;
      t.offsets[c * 4 + 3] = (gt[1] + gt[3] / 2) - y;
    }
  return t;
}

inline constexpr double kRegWeight = 2.0;

/// Balanced BCE on the score map + weighted L1 on offsets at positive cells.
inline Var task_loss(const ResponseOutput& out, const Box& gt, const Geometry& g, double reg_weight = kRegWeight) {
  const std::size_t n = g.response_cells();
  if (out.score.value().numel() != n * n) {
    throw DimensionError("task_loss: score map " + shape_str(out.score.shape()) + " does not match the " +
                         std::to_string(n) + "x" + std::to_string(n) + " response grid");
  }
  const LossTargets t = make_targets(g, gt);
  const Var cls = ops::balanced_bce_with_logits(out.score, t.labels);
  const Var reg = ops::masked_l1(out.box, t.offsets, t.positive);
  return ops::add(cls, ops::scale(reg, reg_weight));
}

/// Argmax cell + its regressed offsets, clamped to the image.
inline Box decode_box(const Tensor& score, const Tensor& box, const Geometry& g) {
  const std::size_t n = g.response_cells();
  std::size_t best = 0;
  for (std::size_t c = 1; c < n * n; ++c)
    if (score[c] > score[best]) best = c;
  const double x = g.cell_center(best % n), y = g.cell_center(best / n);
  double x0 = clamp01(x - box[best * 4 + 0]), y0 = clamp01(y - box[best * 4 + 1]);
  double x1 = clamp01(x + box[best * 4 + 2]), y1 = clamp01(y + box[best * 4 + 3]);
  if (x1 < x0) std::swap(x0, x1);
  if (y1 < y0) std::swap(y0, y1);
  return {(x0 + x1) / 2, (y0 + y1) / 2, x1 - x0, y1 - y0};
}

inline double iou(const Box& a, const Box& b) {
  const double ix = std::max(0.0, std::min(a[0] + a[2] / 2, b[0] + b[2] / 2) - std::max(a[0] - a[2] / 2, b[0] - b[2] / 2));
  const double iy = std::max(0.0, std::min(a[1] + a[3] / 2, b[1] + b[3] / 2) - std::max(a[1] - a[3] / 2, b[1] - b[3] / 2));
  const double inter = ix * iy;
  const double uni = a[2] * a[3] + b[2] * b[3] - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

inline constexpr std::size_t kSucThresholds = 21;

struct SuccessCurve {
  std::vector<double> ious;
  std::vector<double> thresholds;
  std::vector<double> success;
  double suc = 0.0;
};

/// Success rate at thresholds 0, 0.05, ..., 1 with strict IoU > threshold;
/// SUC is the mean over the grid.
inline SuccessCurve suc(const std::vector<double>& ious) {
  if (ious.empty()) throw ArgumentError("suc: empty IoU list");
  for (double v : ious)
    if (!(v >= 0.0 && v <= 1.0)) throw ArgumentError("suc: IoU " + std::to_string(v) + " outside [0,1]");
  SuccessCurve c;
  c.ious = ious;
  double total = 0.0;
  for (std::size_t i = 0; i < kSucThresholds; ++i) {
    const double t = static_cast<double>(i) / 20.0;
    const auto hits = std::count_if(ious.begin(), ious.end(), [t](double v) { return v > t; });
    const double rate = static_cast<double>(hits) / static_cast<double>(ious.size());
    c.thresholds.push_back(t);
    c.success.push_back(rate);
    total += rate;
  }
  c.suc = total / static_cast<double>(kSucThresholds);
  return c;
}

// ---------------------------------------------------------------------------
// Language per sample

enum class LangMode { Annotated, Zero, Template, AttributeDefault, Pseudo };

inline LangMode parse_lang_mode(std::string_view s) {
  if (s == "annotated") return LangMode::Annotated;
  if (s == "zero") return LangMode::Zero;
  if (s == "template") return LangMode::Template;
  if (s == "attribute-default") return LangMode::AttributeDefault;
  if (s == "pseudo") return LangMode::Pseudo;
  throw ArgumentError("unknown language mode '" + std::string(s) + "'");
}
inline const char* to_string(LangMode m) {
  switch (m) {
    case LangMode::Annotated: return "annotated";
    case LangMode::Zero: return "zero";
    case LangMode::Template: return "template";
    case LangMode::AttributeDefault: return "attribute-default";
    case LangMode::Pseudo: return "pseudo";
  }
  return "?";
}

struct LanguageConfig {
  bool attributes = true;    // attribute words (4d) vs sentence (d)
  std::size_t d = lang::kDefaultDim;
  std::uint64_t seed = 0;
  lang::MissingStrategy missing = lang::MissingStrategy::AttributeDefault;
  bool vision_only = false;  // language permanently zeroed

  std::size_t lang_dim() const { return attributes ? 4 * d : d; }
};

inline lang::MissingContext missing_context(const scene::Sequence& seq, const LanguageConfig& cfg,
                                            lang::AttributeDictionary& dict) {
  lang::MissingContext ctx;
  ctx.d = cfg.d;
  ctx.attribute_space = cfg.attributes;
  ctx.seed = cfg.seed;
  ctx.category = seq.category;
  ctx.dict = &dict;
  ctx.template_fmap = &seq.template_image;
  ctx.box = seq.template_box;
  return ctx;
}

/// f_l for one sequence under `mode`. Annotated mode falls back to the
/// configured missing-language strategy for sequences without annotation.
inline lang::LanguageRepresentation resolve_language(const scene::Sequence& seq, LangMode mode, const LanguageConfig& cfg,
                                                     lang::AttributeDictionary& dict) {
  const lang::MissingContext ctx = missing_context(seq, cfg, dict);
  if (cfg.vision_only) return lang::missing_language(lang::MissingStrategy::Zero, ctx);
  switch (mode) {
    case LangMode::Annotated:
      if (seq.annotated) {
        if (cfg.attributes && seq.attributes) return lang::encode_attributes(*seq.attributes, dict);
        if (!cfg.attributes && seq.sentence) return lang::encode_sentence(*seq.sentence, cfg.d, cfg.seed);
      }
      return lang::missing_language(cfg.missing, ctx);
    case LangMode::Zero: return lang::missing_language(lang::MissingStrategy::Zero, ctx);
    case LangMode::Template: return lang::missing_language(lang::MissingStrategy::Template, ctx);
    case LangMode::AttributeDefault: {
      if (!cfg.attributes) throw ArgumentError("attribute-default mode needs an attribute-language model");
      return lang::missing_language(lang::MissingStrategy::AttributeDefault, ctx);
    }
    case LangMode::Pseudo:
      throw NotImplementedError("pseudo language mode is not implemented (needs a caption model)");
  }
  throw ArgumentError("unknown language mode");
}

// ---------------------------------------------------------------------------
// Training (pretrain over random paths; retrain with a fixed path)

struct TrainConfig {
  std::size_t iterations = 300;
  std::size_t batch = 8;
  SgdConfig sgd;
  modamixer::ContrastiveWiring wiring = modamixer::ContrastiveWiring::first_stage_both(4);
  bool residual = true;
  LanguageConfig language;
  double reg_weight = kRegWeight;
  double smoothing = 0.9;  // EMA factor of the smoothed trace
  std::uint64_t seed = 0;
  // Replays the first batch every iteration (overfitting sanity check).
  bool fixed_batch = false;
};

struct TrainTrace {
  std::vector<double> loss;
  std::vector<double> smoothed;
  std::vector<double> task;
  std::vector<double> contrastive;
  std::vector<std::size_t> contrastive_terms;
};

struct Sample {
  std::size_t seq = 0;
  std::size_t frame = 1;
};

/// Loss of one batch on a fresh tape; returns (total, task, contrastive, terms).
struct BatchLoss {
  Var total;
  double task = 0.0;
  double contrastive = 0.0;
  std::size_t terms = 0;
};

inline BatchLoss batch_loss(ParamBinder& p, const StageLayout& layout, std::size_t lang_dim, const ArchCode& code,
                            const scene::Dataset& ds, const std::vector<Sample>& batch, const TrainConfig& cfg,
                            lang::AttributeDictionary& dict) {
  Tape& tape = p.tape();
  const Geometry geom = Geometry::for_layout(layout);
  const ForwardOptions fopt{cfg.residual};
  std::vector<Var> task_terms;
  struct Rows {
    std::vector<Var> ev, el;
  };
  std::map<std::pair<int, std::size_t>, Rows> contrast;  // (branch, stage) -> rows

  for (const Sample& s : batch) {
    const scene::Sequence& seq = ds.sequences[s.seq];
    const lang::LanguageRepresentation rep = resolve_language(seq, LangMode::Annotated, cfg.language, dict);
    const Var f_l = tape.constant(rep.vector);
    const TwoStreamTrace tr = two_stream_forward(p, layout, lang_dim, code, tape.constant(seq.template_image),
                                                 tape.constant(seq.frames[s.frame]), f_l, fopt);
    const ResponseOutput out = match_head(p, tr.tmpl.out, tr.search.out);
    task_terms.push_back(task_loss(out, seq.boxes[s.frame], geom, cfg.reg_weight));

    // Zero language has no direction to align with.
    if (rep.kind == lang::LangKind::Zero || rep.is_zero()) continue;
    for (int branch = 0; branch < 2; ++branch) {
      const BranchTrace& bt = branch == 0 ? tr.tmpl : tr.search;
      const Box& box = branch == 0 ? seq.template_box : seq.boxes[s.frame];
      for (std::size_t st = 0; st < layout.stages(); ++st) {
        if (!cfg.wiring.active(branch == 0, st)) continue;
        const modamixer::MixResult& m = bt.mixers[st];
        // Without the residual path there is no Block_vis output; pool the
        // mixer input instead.
        Var visual = m.vision_path.valid() ? m.vision_path : bt.stage_outputs[st];
        if (!cfg.wiring.backprop_visual) visual = tape.constant(visual.value());
        Box clipped = box;
        for (double& v : clipped) v = clamp01(v);
        Rows& rows = contrast[{branch, st}];
        rows.ev.push_back(modamixer::roi_embed(visual, clipped));
        rows.el.push_back(m.selector);
      }
    }
  }

  BatchLoss result;
  Var task = ops::scale(ops::add_n(task_terms), 1.0 / static_cast<double>(batch.size()));
  result.task = task.value()[0];
  std::vector<Var> terms{task};
  for (auto& [key, rows] : contrast) {
    // Drop rows whose norm vanishes (e.g. all-zero ReLU region); the loss is
    // undefined for them.
    std::vector<Var> ev, el;
    for (std::size_t i = 0; i < rows.ev.size(); ++i) {
      double a = 0, b = 0;
      for (double v : rows.ev[i].value().vec()) a += v * v;
      for (double v : rows.el[i].value().vec()) b += v * v;
      if (a > 1e-18 && b > 1e-18) {
        ev.push_back(rows.ev[i]);
        el.push_back(rows.el[i]);
      }
    }
    if (ev.size() < 2) continue;
    const Var c = modamixer::contrastive_loss({ops::stack_rows(ev), ops::stack_rows(el)}, cfg.wiring.temperature);
    result.contrastive += c.value()[0];
    ++result.terms;
    terms.push_back(ops::scale(c, cfg.wiring.lambda));
  }
  result.total = ops::add_n(terms);
  return result;
}

using CodeProvider = std::function<ArchCode(Rng&)>;

inline TrainTrace train_loop(ParamStore& params, const StageLayout& layout, std::size_t lang_dim, const scene::Dataset& ds,
                             const TrainConfig& cfg, const CodeProvider& next_code, lang::AttributeDictionary& dict) {
  if (ds.sequences.empty()) throw ArgumentError("training needs a non-empty dataset");
  cfg.wiring.validate(layout);
  TrainTrace trace;
  const Rng root(cfg.seed);
  Rng batch_rng = root.child("batches");
  Rng path_rng = root.child("paths");
  std::vector<Sample> fixed;
  auto draw_batch = [&] {
    std::vector<Sample> b;
    for (std::size_t i = 0; i < cfg.batch; ++i) {
      const std::size_t s = batch_rng.below(ds.sequences.size());
      const std::size_t nf = ds.sequences[s].frames.size();
      b.push_back({s, nf > 1 ? 1 + batch_rng.below(nf - 1) : 0});
    }
    return b;
  };
  for (std::size_t it = 0; it < cfg.iterations; ++it) {
    std::vector<Sample> batch;
    if (cfg.fixed_batch) {
      if (fixed.empty()) fixed = draw_batch();
      batch = fixed;
    } else {
      batch = draw_batch();
    }
    const ArchCode code = next_code(path_rng);
    Tape tape;
    ParamBinder binder(tape, params, true);
    const BatchLoss loss = batch_loss(binder, layout, lang_dim, code, ds, batch, cfg, dict);
    tape.backward(loss.total);
    sgd_step(params, binder, cfg.sgd);
    const double v = loss.total.value()[0];
    trace.loss.push_back(v);
    trace.task.push_back(loss.task);
    trace.contrastive.push_back(loss.contrastive);
    trace.contrastive_terms.push_back(loss.terms);
    trace.smoothed.push_back(trace.smoothed.empty() ? v : cfg.smoothing * trace.smoothed.back() + (1 - cfg.smoothing) * v);
  }
  return trace;
}

/// Pretraining: one uniformly sampled path per iteration; only that path's
/// parameters (plus always-active ones) are updated.
inline TrainTrace train_supernet(Supernet& net, const scene::Dataset& ds, const TrainConfig& cfg,
                                 lang::AttributeDictionary& dict) {
  const StageLayout layout = net.layout;
  return train_loop(net.params, net.layout, net.lang_dim, ds, cfg,
                    [layout](Rng& rng) { return sample_path(layout, rng); }, dict);
}

/// Retraining of an extracted subnet with its fixed code.
inline TrainTrace retrain(Subnet& sub, const scene::Dataset& ds, const TrainConfig& cfg, lang::AttributeDictionary& dict) {
  const ArchCode code = sub.code;
  return train_loop(sub.params, sub.layout, sub.lang_dim, ds, cfg, [code](Rng&) { return code; }, dict);
}

// ---------------------------------------------------------------------------
// Evaluation

struct EvalResult {
  SuccessCurve curve;
  double precision_proxy = 0.0;  // fraction of frames with centre error < 0.1 (normalized)
  std::size_t n_frames = 0;
};

/// Per-frame box prediction; frames 1..n-1 of each sequence are scored.
using Predictor = std::function<Box(const scene::Sequence&, std::size_t frame)>;

inline constexpr double kCenterTolerance = 0.1;

inline EvalResult evaluate_predictor(const scene::Dataset& ds, const Predictor& predict) {
  std::vector<double> ious;
  std::size_t close = 0;
  for (const scene::Sequence& seq : ds.sequences)
    for (std::size_t f = 1; f < seq.frames.size(); ++f) {
      const Box pred = predict(seq, f);
      const Box& gt = seq.boxes[f];
      ious.push_back(std::clamp(iou(pred, gt), 0.0, 1.0));
      close += std::hypot(pred[0] - gt[0], pred[1] - gt[1]) < kCenterTolerance;
    }
  EvalResult r;
  r.curve = suc(ious);
  r.n_frames = ious.size();
  r.precision_proxy = static_cast<double>(close) / static_cast<double>(ious.size());
  return r;
}

struct EvalOptions {
  LangMode mode = LangMode::Annotated;
  LanguageConfig language;
  bool residual = true;
};

/// Template features are computed once per sequence, search features per frame.
inline EvalResult evaluate(const StageLayout& layout, std::size_t lang_dim, const ParamStore& params, const ArchCode& code,
                           const scene::Dataset& ds, const EvalOptions& opt, lang::AttributeDictionary& dict) {
  code.check(layout);
  if (opt.mode == LangMode::Pseudo) throw NotImplementedError("pseudo language mode is not implemented (needs a caption model)");
  const Geometry geom = Geometry::for_layout(layout);
  const ForwardOptions fopt{opt.residual};
  std::size_t cached_seq = static_cast<std::size_t>(-1);
  Tensor f_l, tmpl_feat;
  return evaluate_predictor(ds, [&](const scene::Sequence& seq, std::size_t f) {
    if (cached_seq != seq.id) {
      f_l = resolve_language(seq, opt.mode, opt.language, dict).vector;
      Tape tape;
      ParamBinder p(tape, params, false);
      tmpl_feat = branch_forward(p, layout, lang_dim, true, code.tmpl, tape.constant(seq.template_image), tape.constant(f_l), fopt)
                      .out.value();
      cached_seq = seq.id;
    }
    Tape tape;
    ParamBinder p(tape, params, false);
    const Var sf = branch_forward(p, layout, lang_dim, false, code.search, tape.constant(seq.frames[f]), tape.constant(f_l), fopt).out;
    const ResponseOutput out = match_head(p, tape.constant(tmpl_feat), sf);
    return decode_box(out.score.value(), out.box.value(), geom);
  });
}

inline EvalResult evaluate(const Supernet& net, const ArchCode& code, const scene::Dataset& ds, const EvalOptions& opt,
                           lang::AttributeDictionary& dict) {
  return evaluate(net.layout, net.lang_dim, net.params, code, ds, opt, dict);
}

inline EvalResult evaluate(const Subnet& sub, const scene::Dataset& ds, const EvalOptions& opt, lang::AttributeDictionary& dict) {
  return evaluate(sub.layout, sub.lang_dim, sub.params, sub.code, ds, opt, dict);
}

}  // namespace vlt::track
