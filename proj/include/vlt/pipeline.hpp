#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "vlt/arch.hpp"
#include "vlt/errors.hpp"
#include "vlt/evo.hpp"
#include "vlt/lang.hpp"
#include "vlt/params.hpp"
#include "vlt/scene.hpp"
#include "vlt/supernet.hpp"
#include "vlt/track.hpp"

// Two-stage search pipeline: configuration, supernet search, retrain + evaluate.
namespace vlt::pipeline {

struct RunConfig {
  std::uint64_t seed = 0;
  std::string layout = "compact";
  std::size_t d = lang::kDefaultDim;
  bool attributes = true;  // attribute words; false = sentence
  double lambda = modamixer::kDefaultLambda;
  double temperature = modamixer::kDefaultTemperature;
  std::vector<std::size_t> contrastive_stages{1};  // 1-based
  bool contrastive_template = true;
  bool contrastive_search = true;
  evo::EvoConfig evo;
  std::size_t pretrain_iterations = 1500;
  std::size_t retrain_iterations = 1500;
  std::size_t batch = 8;
  double lr = 0.01;
  double momentum = 0.9;
  double grad_clip = 5.0;
  std::string train_data;
  std::string val_data;
  std::string eval_data;
  std::size_t val_sequences = 32;
  std::string missing = "attribute-default";
  std::vector<std::string> modes{"annotated", "zero"};
  bool residual = true;
  bool vision_only = false;
  bool symmetric = false;
  std::vector<std::size_t> free_slots;  // flat indices; empty = every slot
  std::string code;                     // arch code text (retrain-eval)
  std::string supernet_checkpoint;      // retrain-eval: inherit weights
  std::string dictionary;               // optional attribute dictionary file
  std::string output = "out";

  StageLayout stage_layout() const { return StageLayout::preset(layout); }
  std::size_t lang_dim() const { return attributes ? 4 * d : d; }

  track::LanguageConfig language() const {
    track::LanguageConfig l;
    l.attributes = attributes;
    l.d = d;
    l.seed = seed;
    l.missing = lang::parse_missing_strategy(missing);
    l.vision_only = vision_only;
    return l;
  }

  modamixer::ContrastiveWiring wiring() const {
    modamixer::ContrastiveWiring w = modamixer::ContrastiveWiring::none(stage_layout().stages());
    for (std::size_t s : contrastive_stages) w.stages.at(s - 1) = true;
    w.tmpl = contrastive_template;
    w.search = contrastive_search;
    w.lambda = lambda;
    w.temperature = temperature;
    return w;
  }

  track::TrainConfig train_config(std::size_t iterations, std::string_view stream) const {
    track::TrainConfig t;
    t.iterations = iterations;
    t.batch = batch;
    t.sgd = {lr, momentum, grad_clip};
    t.wiring = wiring();
    t.residual = residual;
    t.language = language();
    t.seed = Rng(seed).child(stream).seed();
    return t;
  }

  /// Throws ConfigError naming the first invalid field.
  void validate() const {
    StageLayout l;
    try {
      l = stage_layout();
    } catch (const ConfigError&) {
      throw ConfigError("layout: unknown preset '" + layout + "' (paper, desk, compact, single)");
    }
    if (d == 0) throw ConfigError("d: must be positive");
    if (!(temperature > 0.0)) throw ConfigError("temperature: must be positive");
    if (lambda < 0.0) throw ConfigError("lambda: must be non-negative");
    for (std::size_t s : contrastive_stages)
      if (s == 0 || s > l.stages()) throw ConfigError("contrastive_stages: stage " + std::to_string(s) + " outside 1.." + std::to_string(l.stages()));
    if (batch == 0) throw ConfigError("batch: must be positive");
    if (!(lr > 0.0)) throw ConfigError("lr: must be positive");
    if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("momentum: must lie in [0,1)");
    try {
      lang::parse_missing_strategy(missing);
    } catch (const ArgumentError&) {
      throw ConfigError("missing: unknown strategy '" + missing + "'");
    }
    for (const std::string& m : modes) {
      try {
        track::parse_lang_mode(m);
      } catch (const ArgumentError&) {
        throw ConfigError("modes: unknown language mode '" + m + "'");
      }
      if (m == "attribute-default" && !attributes) throw ConfigError("modes: attribute-default needs attributes=true");
    }
    if (missing == "attribute-default" && !attributes && !vision_only) {
      throw ConfigError("missing: attribute-default needs attributes=true");
    }
    evo.validate();
    const std::size_t total = 2 * slots_per_branch(l);
    for (std::size_t f : free_slots)
      if (f >= total) throw ConfigError("free_slots: slot " + std::to_string(f) + " outside 0.." + std::to_string(total - 1));
    if (symmetric && !free_slots.empty()) throw ConfigError("symmetric: cannot be combined with free_slots");
    if (val_sequences == 0) throw ConfigError("val_sequences: must be positive");
  }
};

/// Every key, in declaration order.
inline nlohmann::ordered_json to_json(const RunConfig& c) {
  nlohmann::ordered_json j;
  j["seed"] = c.seed;
  j["layout"] = c.layout;
  j["d"] = c.d;
  j["attributes"] = c.attributes;
  j["lambda"] = c.lambda;
  j["temperature"] = c.temperature;
  j["contrastive_stages"] = c.contrastive_stages;
  j["contrastive_template"] = c.contrastive_template;
  j["contrastive_search"] = c.contrastive_search;
  j["evo"] = {{"population", c.evo.population}, {"generations", c.evo.generations}, {"mutation_prob", c.evo.mutation_prob},
              {"crossover_rate", c.evo.crossover_rate}, {"elites", c.evo.elites}, {"tournament", c.evo.tournament},
              {"budget", c.evo.budget}};
  j["pretrain_iterations"] = c.pretrain_iterations;
  j["retrain_iterations"] = c.retrain_iterations;
  j["batch"] = c.batch;
  j["lr"] = c.lr;
  j["momentum"] = c.momentum;
  j["grad_clip"] = c.grad_clip;
  j["train_data"] = c.train_data;
  j["val_data"] = c.val_data;
  j["eval_data"] = c.eval_data;
  j["val_sequences"] = c.val_sequences;
  j["missing"] = c.missing;
  j["modes"] = c.modes;
  j["residual"] = c.residual;
  j["vision_only"] = c.vision_only;
  j["symmetric"] = c.symmetric;
  j["free_slots"] = c.free_slots;
  j["code"] = c.code;
  j["supernet_checkpoint"] = c.supernet_checkpoint;
  j["dictionary"] = c.dictionary;
  j["output"] = c.output;
  return j;
}

inline std::string dump_config(const RunConfig& c) { return to_json(c).dump(2) + "\n"; }

/// Overlays the keys present in `j` onto `c`. Unknown keys are rejected.
inline void apply_json(RunConfig& c, const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  try {
    for (const auto& [key, v] : j.items()) {
      if (key == "seed") c.seed = v.get<std::uint64_t>();
      else if (key == "layout") c.layout = v.get<std::string>();
      else if (key == "d") c.d = v.get<std::size_t>();
      else if (key == "attributes") c.attributes = v.get<bool>();
      else if (key == "lambda") c.lambda = v.get<double>();
      else if (key == "temperature") c.temperature = v.get<double>();
      else if (key == "contrastive_stages") c.contrastive_stages = v.get<std::vector<std::size_t>>();
      else if (key == "contrastive_template") c.contrastive_template = v.get<bool>();
      else if (key == "contrastive_search") c.contrastive_search = v.get<bool>();
      else if (key == "evo") {
        for (const auto& [ek, ev] : v.items()) {
          if (ek == "population") c.evo.population = ev.get<std::size_t>();
          else if (ek == "generations") c.evo.generations = ev.get<std::size_t>();
          else if (ek == "mutation_prob") c.evo.mutation_prob = ev.get<double>();
          else if (ek == "crossover_rate") c.evo.crossover_rate = ev.get<double>();
          else if (ek == "elites") c.evo.elites = ev.get<std::size_t>();
          else if (ek == "tournament") c.evo.tournament = ev.get<std::size_t>();
          else if (ek == "budget") c.evo.budget = ev.get<std::size_t>();
          else throw ConfigError("unknown config key 'evo." + ek + "'");
        }
      }
      else if (key == "pretrain_iterations") c.pretrain_iterations = v.get<std::size_t>();
      else if (key == "retrain_iterations") c.retrain_iterations = v.get<std::size_t>();
      else if (key == "batch") c.batch = v.get<std::size_t>();
      else if (key == "lr") c.lr = v.get<double>();
      else if (key == "momentum") c.momentum = v.get<double>();
      else if (key == "grad_clip") c.grad_clip = v.get<double>();
      else if (key == "train_data") c.train_data = v.get<std::string>();
      else if (key == "val_data") c.val_data = v.get<std::string>();
      else if (key == "eval_data") c.eval_data = v.get<std::string>();
      else if (key == "val_sequences") c.val_sequences = v.get<std::size_t>();
      else if (key == "missing") c.missing = v.get<std::string>();
      else if (key == "modes") c.modes = v.get<std::vector<std::string>>();
      else if (key == "residual") c.residual = v.get<bool>();
      else if (key == "vision_only") c.vision_only = v.get<bool>();
      else if (key == "symmetric") c.symmetric = v.get<bool>();
      else if (key == "free_slots") c.free_slots = v.get<std::vector<std::size_t>>();
      else if (key == "code") c.code = v.get<std::string>();
      else if (key == "supernet_checkpoint") c.supernet_checkpoint = v.get<std::string>();
      else if (key == "dictionary") c.dictionary = v.get<std::string>();
      else if (key == "output") c.output = v.get<std::string>();
      else throw ConfigError("unknown config key '" + key + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config value has the wrong type: ") + e.what());
  }
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open config '" + path + "'");
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config '" + path + "' is not valid JSON: " + e.what());
  }
  RunConfig c;
  apply_json(c, j);
  return c;
}

// ---------------------------------------------------------------------------
// Shared helpers

inline void ensure_dir(const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory '" + dir + "': " + ec.message());
}

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write '" + path + "'");
  os << text;
  if (!os) throw IoError("write failed for '" + path + "'");
}

inline std::string path_in(const std::string& dir, const std::string& name) {
  return (std::filesystem::path(dir) / name).string();
}

inline std::string loss_csv(const track::TrainTrace& t) {
  std::string out = "iteration,loss,smoothed,task,contrastive,terms\n";
  char buf[200];
  for (std::size_t i = 0; i < t.loss.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g,%.17g,%zu\n", i, t.loss[i], t.smoothed[i], t.task[i],
                  t.contrastive[i], t.contrastive_terms[i]);
    out += buf;
  }
  return out;
}

inline lang::AttributeDictionary make_dictionary(const RunConfig& c) {
  if (c.dictionary.empty()) return lang::AttributeDictionary(c.d, c.seed);
  lang::AttributeDictionary dict = lang::AttributeDictionary::load_file(c.dictionary);
  if (dict.dim() != c.d) {
    throw ConfigError("dictionary '" + c.dictionary + "' has d=" + std::to_string(dict.dim()) + ", config has d=" +
                      std::to_string(c.d));
  }
  return dict;
}

/// Fresh supernet plus matching head, both seeded from the run seed.
inline Supernet build_supernet(const RunConfig& c) {
  const Rng root(c.seed);
  Supernet net = Supernet::build(c.stage_layout(), c.lang_dim(), root.child("supernet").seed());
  Rng head = root.child("head");
  track::init_head(net.params, net.layout.out_channels, head);
  return net;
}

inline scene::Dataset take(const scene::Dataset& ds, std::size_t n) {
  scene::Dataset out = ds;
  if (out.sequences.size() > n) out.sequences.resize(n);
  return out;
}

// ---------------------------------------------------------------------------
// Commands

struct GenDataSummary {
  std::size_t sequences = 0;
  std::size_t annotated = 0;
  std::size_t frames = 0;
};

inline GenDataSummary gen_data(std::size_t n, scene::Mode mode, double coverage, std::uint64_t seed, const std::string& out) {
  const scene::Dataset ds = scene::gen_dataset(n, mode, coverage, seed);
  scene::save_dataset(ds, out);
  GenDataSummary s{ds.sequences.size(), ds.annotated_count(), 0};
  for (const auto& q : ds.sequences) s.frames += q.frames.size();
  return s;
}

/// Dictionary over every attribute word in the dataset plus the default-description
/// words ("none", "object") and every category.
inline lang::AttributeDictionary build_dictionary(const scene::Dataset& ds, std::size_t d, std::uint64_t seed) {
  lang::AttributeDictionary dict(d, seed);
  dict.lookup("none");
  dict.lookup("object");
  for (const auto& s : ds.sequences) {
    if (!s.category.empty()) dict.lookup(s.category);
    if (s.attributes)
      for (const std::string& t : s.attributes->tokens()) dict.lookup(t);
  }
  return dict;
}

/// Maps search genomes to full codes: free slots take the genome's digits, the
/// rest keep the base code's digits.
struct CodeMapping {
  StageLayout layout;
  std::vector<int> base;
  std::vector<std::size_t> free;

  CodeMapping(const StageLayout& l, const std::vector<std::size_t>& free_slots)
      : layout(l), base(ArchCode::uniform(l, 0).flat()), free(free_slots) {
    if (free.empty())
      for (std::size_t i = 0; i < base.size(); ++i) free.push_back(i);
  }

  evo::SearchSpace space() const { return {free.size(), kChoices}; }

  ArchCode code(const evo::Genome& g) const {
    std::vector<int> flat = base;
    for (std::size_t i = 0; i < free.size(); ++i) flat[free[i]] = g[i];
    return ArchCode::from_flat(layout, flat);
  }
};

struct SearchOutcome {
  ArchCode best;
  double best_fitness = 0.0;
  evo::EvoResult evo;
  track::TrainTrace pretrain;
};

/// Pretrain the supernet with random paths, then evolve codes scored by
/// annotated-mode SUC on the validation split.
inline SearchOutcome search(const RunConfig& c, const scene::Dataset& train, const scene::Dataset& val, Supernet* trained = nullptr) {
  c.validate();
  const StageLayout layout = c.stage_layout();
  Supernet net = build_supernet(c);
  lang::AttributeDictionary dict = make_dictionary(c);
  SearchOutcome out;
  out.pretrain = track::train_supernet(net, train, c.train_config(c.pretrain_iterations, "pretrain"), dict);

  const scene::Dataset val_part = take(val, c.val_sequences);
  track::EvalOptions eo;
  eo.mode = track::LangMode::Annotated;
  eo.language = c.language();
  eo.residual = c.residual;
  const CodeMapping mapping(layout, c.free_slots);
  const evo::Evaluator fitness = [&](const evo::Genome& g) {
    return track::evaluate(net, mapping.code(g), val_part, eo, dict).curve.suc;
  };
  evo::EvoConfig ec = c.evo;
  ec.seed = Rng(c.seed).child("evolve").seed();
  out.evo = c.symmetric ? evo::symmetric_constrained_evolve(mapping.space(), fitness, ec) : evo::evolve(mapping.space(), fitness, ec);
  out.best = mapping.code(out.evo.best.code);
  out.best_fitness = out.evo.best.fitness.value_or(0.0);
  if (trained) *trained = std::move(net);
  return out;
}

struct MetricRecord {
  std::string dataset;
  std::string mode;
  double suc = 0.0;
  double precision_proxy = 0.0;
  std::size_t n_frames = 0;
};

inline std::string metric_line(const MetricRecord& m) {
  nlohmann::ordered_json j;
  j["dataset"] = m.dataset;
  j["mode"] = m.mode;
  j["suc"] = m.suc;
  j["precision_proxy"] = m.precision_proxy;
  j["n_frames"] = m.n_frames;
  return j.dump();
}

inline std::string summary_table(const std::vector<MetricRecord>& ms) {
  std::string out = "mode               suc      precision  frames\n";
  char buf[160];
  for (const MetricRecord& m : ms) {
    std::snprintf(buf, sizeof buf, "%-18s %.4f   %.4f     %zu\n", m.mode.c_str(), m.suc, m.precision_proxy, m.n_frames);
    out += buf;
  }
  return out;
}

struct RetrainOutcome {
  Subnet subnet;
  track::TrainTrace trace;
  std::vector<MetricRecord> metrics;
};

/// Extract the subnet for `code`, retrain it with the fixed code, evaluate it
/// under every configured language mode.
inline RetrainOutcome retrain_eval(const RunConfig& c, const ArchCode& code, const scene::Dataset& train,
                                   const scene::Dataset& eval, const std::string& dataset_name = "eval") {
  c.validate();
  code.check(c.stage_layout());
  Supernet net = build_supernet(c);
  if (!c.supernet_checkpoint.empty()) {
    ParamStore loaded = ParamStore::load_file(c.supernet_checkpoint);
    for (const auto& [k, p] : net.params.entries()) {
      if (!loaded.contains(k)) throw ConfigError("supernet checkpoint lacks parameter '" + k + "'");
      if (loaded.value(k).shape() != p.value.shape()) throw ConfigError("supernet checkpoint parameter '" + k + "' has the wrong shape");
    }
    net.params = std::move(loaded);
  }
  lang::AttributeDictionary dict = make_dictionary(c);
  RetrainOutcome out{net.extract(code), {}, {}};
  out.trace = track::retrain(out.subnet, train, c.train_config(c.retrain_iterations, "retrain"), dict);
  track::EvalOptions eo;
  eo.language = c.language();
  eo.residual = c.residual;
  for (const std::string& m : c.modes) {
    eo.mode = track::parse_lang_mode(m);
    const track::EvalResult r = track::evaluate(out.subnet, eval, eo, dict);
    out.metrics.push_back({dataset_name, m, r.curve.suc, r.precision_proxy, r.n_frames});
  }
  return out;
}

// ---------------------------------------------------------------------------
// File-level wrappers used by the CLI

inline scene::Dataset load_required(const std::string& path, const char* what) {
  if (path.empty()) throw ConfigError(std::string(what) + ": no dataset path configured");
  if (!std::filesystem::exists(path)) throw IoError(std::string(what) + ": dataset '" + path + "' does not exist");
  return scene::load_dataset(path);
}

/// Writes config.json (first), supernet_loss.csv, history.csv, arch_code.txt,
/// supernet.ckpt into the output directory.
inline SearchOutcome cmd_search(const RunConfig& c) {
  c.validate();
  ensure_dir(c.output);
  write_text(path_in(c.output, "config.json"), dump_config(c));
  const scene::Dataset train = load_required(c.train_data, "train_data");
  const scene::Dataset val = load_required(c.val_data.empty() ? c.train_data : c.val_data, "val_data");
  Supernet net;
  SearchOutcome out = search(c, train, val, &net);
  write_text(path_in(c.output, "supernet_loss.csv"), loss_csv(out.pretrain));
  std::ostringstream hist;
  hist << "gen,best,mean,evals\n";
  evo::write_history(hist, out.evo.history);
  write_text(path_in(c.output, "history.csv"), hist.str());
  write_text(path_in(c.output, "arch_code.txt"), to_text(out.best) + "\n");
  net.params.save_file(path_in(c.output, "supernet.ckpt"));
  return out;
}

/// Writes config.json (first), retrain_loss.csv, metrics.jsonl, summary.txt.
inline RetrainOutcome cmd_retrain_eval(const RunConfig& c) {
  c.validate();
  if (c.code.empty()) throw ConfigError("code: no architecture code given");
  const ArchCode code = parse_arch_code(c.code);
  ensure_dir(c.output);
  write_text(path_in(c.output, "config.json"), dump_config(c));
  const scene::Dataset train = load_required(c.train_data, "train_data");
  const std::string eval_path = c.eval_data.empty() ? c.val_data : c.eval_data;
  const scene::Dataset eval = load_required(eval_path, "eval_data");
  RetrainOutcome out = retrain_eval(c, code, train, eval, std::filesystem::path(eval_path).filename().string());
  write_text(path_in(c.output, "retrain_loss.csv"), loss_csv(out.trace));
  std::string lines;
  for (const MetricRecord& m : out.metrics) lines += metric_line(m) + "\n";
  write_text(path_in(c.output, "metrics.jsonl"), lines);
  write_text(path_in(c.output, "summary.txt"), summary_table(out.metrics));
  return out;
}

}  // namespace vlt::pipeline
