#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "vlt/errors.hpp"
#include "vlt/lang.hpp"
#include "vlt/ops.hpp"
#include "vlt/random.hpp"
#include "vlt/tensor.hpp"

namespace vlt::scene {

using ops::Box;

inline constexpr std::size_t kSearchSize = 64;
inline constexpr std::size_t kTemplateSize = 32;
inline constexpr std::size_t kFrames = 8;

enum class Mode { Easy, Hard };

inline Mode parse_mode(std::string_view s) {
  if (s == "easy") return Mode::Easy;
  if (s == "hard") return Mode::Hard;
  throw ArgumentError("unknown dataset mode '" + std::string(s) + "' (expected easy|hard)");
}
inline const char* to_string(Mode m) { return m == Mode::Easy ? "easy" : "hard"; }

inline const std::array<std::string, 4> kShapes{"square", "circle", "triangle", "diamond"};

struct NamedColor {
  const char* name;
  std::array<double, 3> rgb;
};
inline const std::array<NamedColor, 6> kColors{{{"red", {0.9, 0.15, 0.15}},
                                                {"green", {0.15, 0.8, 0.2}},
                                                {"blue", {0.2, 0.3, 0.95}},
                                                {"yellow", {0.9, 0.85, 0.1}},
                                                {"magenta", {0.85, 0.2, 0.8}},
                                                {"cyan", {0.1, 0.8, 0.85}}}};

struct SceneObject {
  int shape = 0;  // index into kShapes
  int color = 0;  // index into kColors
  Box box{};      // normalized [cx, cy, w, h]
};

/// One rendered frame with its object list.
struct SyntheticScene {
  Tensor image;  // H x W x 3, values in [0, 1]
  std::vector<SceneObject> objects;
  std::size_t target = 0;
  std::uint64_t seed = 0;
};

struct Sequence {
  std::size_t id = 0;
  std::vector<Tensor> frames;  // frame 0 provides the template
  std::vector<Box> boxes;      // target box per frame
  std::vector<std::vector<SceneObject>> objects;  // per frame, target at index 0
  Tensor template_image;       // kTemplateSize crop around the target in frame 0
  Box template_box{};          // target box inside the template crop
  bool annotated = false;
  std::optional<lang::AttributeAnnotation> attributes;
  std::optional<lang::SentenceAnnotation> sentence;
  std::string category;        // shape name; known for every sequence
};

struct Dataset {
  Mode mode = Mode::Easy;
  double coverage = 1.0;
  std::uint64_t seed = 0;
  std::vector<Sequence> sequences;

  std::size_t annotated_count() const {
    return static_cast<std::size_t>(std::count_if(sequences.begin(), sequences.end(), [](const Sequence& s) { return s.annotated; }));
  }
};

inline std::string position_token(double cx, double cy) {
  if (std::abs(cx - 0.5) < 0.1 && std::abs(cy - 0.5) < 0.1) return "center";
  return std::string(cy < 0.5 ? "upper" : "lower") + (cx < 0.5 ? "-left" : "-right");
}

namespace detail {

inline double quantize(double v) { return std::round(std::clamp(v, 0.0, 1.0) * 256.0) / 256.0; }

inline bool inside_shape(int shape, double dx, double dy, double half) {
  // dx, dy relative to the centre, in pixels
  switch (shape) {
    case 0: return std::abs(dx) <= half && std::abs(dy) <= half;
    case 1: return dx * dx + dy * dy <= half * half;
    case 2: {  // upward triangle
      const double t = (dy + half) / (2 * half);  // 0 at top, 1 at bottom
      return t >= 0.0 && t <= 1.0 && std::abs(dx) <= t * half;
    }
    case 3: return std::abs(dx) + std::abs(dy) <= half;
  }
  return false;
}

inline std::array<double, 3> desaturate(const std::array<double, 3>& rgb, double keep) {
  const double gray = 0.55;
  return {gray + keep * (rgb[0] - gray), gray + keep * (rgb[1] - gray), gray + keep * (rgb[2] - gray)};
}

inline Tensor render(const std::vector<SceneObject>& objects, std::size_t size, Rng& noise, double chroma) {
  Tensor img(Shape{size, size, 3});
  for (std::size_t y = 0; y < size; ++y)
    for (std::size_t x = 0; x < size; ++x)
      for (std::size_t c = 0; c < 3; ++c) img.at(y, x, c) = quantize(0.3 + 0.06 * noise.normal());
  for (const SceneObject& o : objects) {
    const double cx = o.box[0] * static_cast<double>(size), cy = o.box[1] * static_cast<double>(size);
    const double half = o.box[2] * static_cast<double>(size) / 2.0;
    const auto rgb = desaturate(kColors[static_cast<std::size_t>(o.color)].rgb, chroma);
    const long x0 = std::max(0L, static_cast<long>(std::floor(cx - half - 1)));
    const long x1 = std::min(static_cast<long>(size) - 1, static_cast<long>(std::ceil(cx + half + 1)));
    const long y0 = std::max(0L, static_cast<long>(std::floor(cy - half - 1)));
    const long y1 = std::min(static_cast<long>(size) - 1, static_cast<long>(std::ceil(cy + half + 1)));
    for (long y = y0; y <= y1; ++y)
      for (long x = x0; x <= x1; ++x) {
        if (!inside_shape(o.shape, static_cast<double>(x) + 0.5 - cx, static_cast<double>(y) + 0.5 - cy, half)) continue;
        for (std::size_t c = 0; c < 3; ++c)
          img.at(static_cast<std::size_t>(y), static_cast<std::size_t>(x), c) = quantize(rgb[c] + 0.03 * noise.normal());
      }
  }
  return img;
}

inline bool overlaps(const Box& a, const Box& b, double gap) {
  return std::abs(a[0] - b[0]) < (a[2] + b[2]) / 2 + gap && std::abs(a[1] - b[1]) < (a[3] + b[3]) / 2 + gap;
}

}  // namespace detail

/// Crop of `size` pixels centred on normalized (cx, cy); outside pixels take the
/// background level.
inline Tensor crop(const Tensor& image, double cx, double cy, std::size_t size, std::array<long, 2>* origin = nullptr) {
  const long H = static_cast<long>(image.dim(0)), W = static_cast<long>(image.dim(1));
  const long ox = static_cast<long>(std::lround(cx * static_cast<double>(W) - static_cast<double>(size) / 2.0));
  const long oy = static_cast<long>(std::lround(cy * static_cast<double>(H) - static_cast<double>(size) / 2.0));
  if (origin) *origin = {ox, oy};
  Tensor out(Shape{size, size, 3}, 0.3);
  for (long y = 0; y < static_cast<long>(size); ++y)
    for (long x = 0; x < static_cast<long>(size); ++x) {
      const long sy = oy + y, sx = ox + x;
      if (sy < 0 || sy >= H || sx < 0 || sx >= W) continue;
      for (std::size_t c = 0; c < 3; ++c)
        out.at(static_cast<std::size_t>(y), static_cast<std::size_t>(x), c) =
            image.at(static_cast<std::size_t>(sy), static_cast<std::size_t>(sx), c);
    }
  return out;
}

/// One 8-frame sequence: the target translates with mild scale change among
/// distractors. In hard mode there is always a same-shape/different-colour and a
/// same-colour/different-shape distractor, and frame 0 is captured with almost
/// no chroma, so the template alone does not reveal the target's colour.
inline Sequence make_sequence(std::size_t id, Mode mode, Rng rng) {
  Sequence seq;
  seq.id = id;
  const int tshape = static_cast<int>(rng.below(kShapes.size()));
  const int tcolor = static_cast<int>(rng.below(kColors.size()));

  std::vector<SceneObject> objs;
  auto size_draw = [&] { return rng.uniform(0.16, 0.22); };
  objs.push_back({tshape, tcolor, {rng.uniform(0.3, 0.7), rng.uniform(0.3, 0.7), 0, 0}});
  objs[0].box[2] = objs[0].box[3] = size_draw();

  std::vector<std::pair<int, int>> distractors;
  auto other = [&](int v, std::size_t n) {
    int o;
    do {
      o = static_cast<int>(rng.below(n));
    } while (o == v);
    return o;
  };
  if (mode == Mode::Hard) {
    distractors.push_back({tshape, other(tcolor, kColors.size())});
    distractors.push_back({other(tshape, kShapes.size()), tcolor});
    if (rng.bernoulli(0.5)) distractors.push_back({tshape, other(tcolor, kColors.size())});
  } else {
    distractors.push_back({other(tshape, kShapes.size()), other(tcolor, kColors.size())});
  }
  for (auto [sh, co] : distractors) {
    SceneObject o{sh, co, {0, 0, 0, 0}};
    o.box[2] = o.box[3] = size_draw();
    for (int attempt = 0; attempt < 200; ++attempt) {
      o.box[0] = rng.uniform(0.15, 0.85);
      o.box[1] = rng.uniform(0.15, 0.85);
      bool clash = false;
      for (const auto& e : objs) clash = clash || detail::overlaps(o.box, e.box, 0.06);
      if (!clash) break;
    }
    objs.push_back(o);
  }

  std::vector<std::array<double, 3>> motion;  // vx, vy, per-frame scale
  for (std::size_t i = 0; i < objs.size(); ++i)
    motion.push_back({rng.uniform(-0.025, 0.025), rng.uniform(-0.025, 0.025), rng.uniform(0.97, 1.03)});

  Rng noise = rng.child("noise");
  for (std::size_t f = 0; f < kFrames; ++f) {
    if (f > 0) {
      for (std::size_t i = 0; i < objs.size(); ++i) {
        Box& b = objs[i].box;
        const double lo = i == 0 ? 0.22 : 0.12, hi = 1.0 - lo;
        for (int axis = 0; axis < 2; ++axis) {
          b[static_cast<std::size_t>(axis)] += motion[i][static_cast<std::size_t>(axis)];
          if (b[static_cast<std::size_t>(axis)] < lo || b[static_cast<std::size_t>(axis)] > hi) {
            motion[i][static_cast<std::size_t>(axis)] = -motion[i][static_cast<std::size_t>(axis)];
            b[static_cast<std::size_t>(axis)] = std::clamp(b[static_cast<std::size_t>(axis)], lo, hi);
          }
        }
        const double s = std::clamp(b[2] * motion[i][2], 0.12, 0.26);
        b[2] = b[3] = s;
      }
    }
    const double chroma = (mode == Mode::Hard && f == 0) ? 0.0 : 1.0;
    // Target drawn last so it is never hidden.
    std::vector<SceneObject> draw(objs.begin() + 1, objs.end());
    draw.push_back(objs[0]);
    seq.frames.push_back(detail::render(draw, kSearchSize, noise, chroma));
    seq.boxes.push_back(objs[0].box);
    seq.objects.push_back(objs);
  }

  const Box& b0 = seq.boxes[0];
  std::array<long, 2> origin{};
  seq.template_image = crop(seq.frames[0], b0[0], b0[1], kTemplateSize, &origin);
  const double S = static_cast<double>(kSearchSize), T = static_cast<double>(kTemplateSize);
  seq.template_box = {(b0[0] * S - static_cast<double>(origin[0])) / T, (b0[1] * S - static_cast<double>(origin[1])) / T,
                      b0[2] * S / T, b0[3] * S / T};
  seq.category = kShapes[static_cast<std::size_t>(tshape)];
  return seq;
}

inline void annotate(Sequence& seq) {
  const SceneObject& t = seq.objects[0][0];
  const std::string shape = kShapes[static_cast<std::size_t>(t.shape)];
  const std::string color = kColors[static_cast<std::size_t>(t.color)].name;
  const std::string pos = position_token(t.box[0], t.box[1]);
  seq.annotated = true;
  seq.attributes = lang::AttributeAnnotation(shape, "shape", color, pos);
  std::string where = pos == "center" ? "center" : pos;
  std::replace(where.begin(), where.end(), '-', ' ');
  seq.sentence = lang::SentenceAnnotation::from_text("the " + color + " " + shape + " in the " + where);
}

/// Deterministic per seed; exactly floor(coverage * n) sequences are annotated.
inline Dataset gen_dataset(std::size_t n, Mode mode, double coverage, std::uint64_t seed) {
  if (n == 0) throw ArgumentError("gen_dataset: need at least one sequence");
  if (coverage < 0.0 || coverage > 1.0) throw ArgumentError("gen_dataset: coverage must be in [0,1]");
  Dataset ds{mode, coverage, seed, {}};
  const Rng root(seed);
  for (std::size_t i = 0; i < n; ++i) ds.sequences.push_back(make_sequence(i, mode, root.child(i)));
  const auto k = static_cast<std::size_t>(std::floor(coverage * static_cast<double>(n) + 1e-9));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng pick = root.child("annotation");
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[pick.below(i)]);
  for (std::size_t i = 0; i < k; ++i) annotate(ds.sequences[order[i]]);
  return ds;
}

// ---------------------------------------------------------------------------
// On-disk form: <dir>/dataset.json header, <dir>/records.jsonl (one record per
// frame) and <dir>/images/*.txt in the tensor golden format.

inline nlohmann::json box_json(const Box& b) { return nlohmann::json::array({b[0], b[1], b[2], b[3]}); }
inline Box json_box(const nlohmann::json& j) {
  if (!j.is_array() || j.size() != 4) throw ParseError("box must be a 4-element array");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>(), j[3].get<double>()};
}

inline void save_dataset(const Dataset& ds, const std::string& dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(fs::path(dir) / "images", ec);
  if (ec) throw IoError("cannot create dataset directory '" + dir + "': " + ec.message());
  {
    std::ofstream hdr(fs::path(dir) / "dataset.json");
    if (!hdr) throw IoError("cannot write '" + (fs::path(dir) / "dataset.json").string() + "'");
    nlohmann::json h = {{"n_sequences", ds.sequences.size()}, {"mode", to_string(ds.mode)}, {"coverage", ds.coverage},
                        {"seed", ds.seed}, {"frames", kFrames}, {"image_size", kSearchSize}, {"template_size", kTemplateSize}};
    hdr << h.dump(2) << '\n';
  }
  std::ofstream rec(fs::path(dir) / "records.jsonl");
  if (!rec) throw IoError("cannot write '" + (fs::path(dir) / "records.jsonl").string() + "'");
  char name[64];
  for (const Sequence& s : ds.sequences) {
    for (std::size_t f = 0; f < s.frames.size(); ++f) {
      std::snprintf(name, sizeof name, "images/seq%05zu_f%02zu.txt", s.id, f);
      save_tensor((fs::path(dir) / name).string(), s.frames[f]);
      nlohmann::json r = {{"seq_id", s.id}, {"frame_index", f}, {"image_file", name}, {"box", box_json(s.boxes[f])},
                          {"category", s.category}};
      if (s.sentence) r["sentence"] = s.sentence->text();
      if (s.attributes) {
        const auto& a = *s.attributes;
        r["attributes"] = {a.major_class, a.root_class, a.color, a.init_position};
      }
      nlohmann::json objs = nlohmann::json::array();
      for (const SceneObject& o : s.objects[f])
        objs.push_back({{"shape", kShapes[static_cast<std::size_t>(o.shape)]},
                        {"color", kColors[static_cast<std::size_t>(o.color)].name},
                        {"box", box_json(o.box)}});
      r["objects"] = objs;
      r["target_index"] = 0;
      rec << r.dump() << '\n';
    }
  }
  if (!rec) throw IoError("write failed for dataset records in '" + dir + "'");
}

inline int index_of_shape(const std::string& s) {
  for (std::size_t i = 0; i < kShapes.size(); ++i)
    if (kShapes[i] == s) return static_cast<int>(i);
  throw ParseError("unknown shape '" + s + "'");
}
inline int index_of_color(const std::string& s) {
  for (std::size_t i = 0; i < kColors.size(); ++i)
    if (s == kColors[i].name) return static_cast<int>(i);
  throw ParseError("unknown colour '" + s + "'");
}

inline Dataset load_dataset(const std::string& dir) {
  namespace fs = std::filesystem;
  const fs::path hdr_path = fs::path(dir) / "dataset.json";
  std::ifstream hdr(hdr_path);
  if (!hdr) throw IoError("dataset header '" + hdr_path.string() + "' not found");
  nlohmann::json h;
  try {
    hdr >> h;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("bad dataset header: " + std::string(e.what()));
  }
  Dataset ds;
  ds.mode = parse_mode(h.at("mode").get<std::string>());
  ds.coverage = h.at("coverage").get<double>();
  ds.seed = h.at("seed").get<std::uint64_t>();
  ds.sequences.resize(h.at("n_sequences").get<std::size_t>());

  std::ifstream rec(fs::path(dir) / "records.jsonl");
  if (!rec) throw IoError("dataset records in '" + dir + "' not found");
  std::string line;
  while (std::getline(rec, line)) {
    if (line.empty()) continue;
    nlohmann::json r;
    try {
      r = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError("bad dataset record: " + std::string(e.what()));
    }
    const auto sid = r.at("seq_id").get<std::size_t>();
    const auto f = r.at("frame_index").get<std::size_t>();
    if (sid >= ds.sequences.size()) throw ParseError("record seq_id " + std::to_string(sid) + " out of range");
    Sequence& s = ds.sequences[sid];
    s.id = sid;
    if (s.frames.size() <= f) {
      s.frames.resize(f + 1);
      s.boxes.resize(f + 1);
      s.objects.resize(f + 1);
    }
    s.frames[f] = load_tensor((fs::path(dir) / r.at("image_file").get<std::string>()).string());
    s.boxes[f] = json_box(r.at("box"));
    s.category = r.value("category", std::string());
    if (r.contains("objects"))
      for (const auto& o : r["objects"])
        s.objects[f].push_back({index_of_shape(o.at("shape").get<std::string>()),
                                index_of_color(o.at("color").get<std::string>()), json_box(o.at("box"))});
    if (r.contains("attributes")) {
      const auto& a = r["attributes"];
      s.attributes = lang::AttributeAnnotation(a.at(0).get<std::string>(), a.at(1).get<std::string>(),
                                               a.at(2).get<std::string>(), a.at(3).get<std::string>());
      s.annotated = true;
    }
    if (r.contains("sentence")) {
      s.sentence = lang::SentenceAnnotation::from_text(r["sentence"].get<std::string>());
      s.annotated = true;
    }
  }
  for (Sequence& s : ds.sequences) {
    if (s.frames.empty()) throw ParseError("sequence " + std::to_string(s.id) + " has no frames");
    const Box& b0 = s.boxes[0];
    std::array<long, 2> origin{};
    s.template_image = crop(s.frames[0], b0[0], b0[1], kTemplateSize, &origin);
    const double S = static_cast<double>(kSearchSize), T = static_cast<double>(kTemplateSize);
    s.template_box = {(b0[0] * S - static_cast<double>(origin[0])) / T, (b0[1] * S - static_cast<double>(origin[1])) / T,
                      b0[2] * S / T, b0[3] * S / T};
  }
  return ds;
}

}  // namespace vlt::scene
