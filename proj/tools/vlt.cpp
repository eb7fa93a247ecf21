// vlt: dataset generation, supernet search, retrain/evaluate and gradient checks.
//
// Exit codes: 0 success, 1 usage, 2 validation failure, 3 I/O.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "vlt/arch.hpp"
#include "vlt/autodiff.hpp"
#include "vlt/errors.hpp"
#include "vlt/gradsuite.hpp"
#include "vlt/pipeline.hpp"
#include "vlt/scene.hpp"

namespace {

constexpr int kOk = 0;
constexpr int kUsage = 1;
constexpr int kInvalid = 2;
constexpr int kIo = 3;

using vlt::pipeline::RunConfig;

// Flags that mirror config keys; set flags win over the config file.
struct Overrides {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> layout, train, val, eval, output, code, code_file, checkpoint, dictionary, missing, modes;
  std::optional<std::size_t> pretrain_iterations, retrain_iterations, population, generations, budget, batch, val_sequences, d;
  std::optional<double> lambda, temperature, lr;
  std::vector<std::size_t> free_slots;
  bool symmetric = false, no_residual = false, vision_only = false, sentence = false;

  void add_common(CLI::App* app) {
    app->add_option("-c,--config", config_path, "JSON config file");
    app->add_option("--seed", seed, "root seed");
    app->add_option("--layout", layout, "stage layout preset (paper, desk, compact, single)");
    app->add_option("--train", train, "training dataset directory");
    app->add_option("--output", output, "output directory");
    app->add_option("--d", d, "word embedding size");
    app->add_option("--lambda", lambda, "contrastive weight");
    app->add_option("--temperature", temperature, "contrastive temperature");
    app->add_option("--lr", lr, "learning rate");
    app->add_option("--batch", batch, "batch size");
    app->add_option("--missing", missing, "missing-language strategy (zero, template, attribute-default)");
    app->add_option("--dictionary", dictionary, "attribute dictionary file");
    app->add_flag("--no-residual", no_residual, "drop the vision path of every ModaMixer");
    app->add_flag("--vision-only", vision_only, "language permanently zeroed");
    app->add_flag("--sentence", sentence, "sentence language instead of attribute words");
  }

  RunConfig resolve() const {
    RunConfig c = config_path.empty() ? RunConfig{} : vlt::pipeline::load_config(config_path);
    if (seed) c.seed = *seed;
    if (layout) c.layout = *layout;
    if (train) c.train_data = *train;
    if (val) c.val_data = *val;
    if (eval) c.eval_data = *eval;
    if (output) c.output = *output;
    if (d) c.d = *d;
    if (lambda) c.lambda = *lambda;
    if (temperature) c.temperature = *temperature;
    if (lr) c.lr = *lr;
    if (batch) c.batch = *batch;
    if (missing) c.missing = *missing;
    if (dictionary) c.dictionary = *dictionary;
    if (checkpoint) c.supernet_checkpoint = *checkpoint;
    if (pretrain_iterations) c.pretrain_iterations = *pretrain_iterations;
    if (retrain_iterations) c.retrain_iterations = *retrain_iterations;
    if (population) c.evo.population = *population;
    if (generations) c.evo.generations = *generations;
    if (budget) c.evo.budget = *budget;
    if (val_sequences) c.val_sequences = *val_sequences;
    if (!free_slots.empty()) c.free_slots = free_slots;
    if (symmetric) c.symmetric = true;
    if (no_residual) c.residual = false;
    if (vision_only) c.vision_only = true;
    if (sentence) c.attributes = false;
    if (modes) {
      c.modes.clear();
      std::stringstream ss(*modes);
      std::string m;
      while (std::getline(ss, m, ','))
        if (!m.empty()) c.modes.push_back(m);
    }
    if (code_file) {
      std::ifstream is(*code_file);
      if (!is) throw vlt::IoError("cannot open code file '" + *code_file + "'");
      std::getline(is, c.code);
    }
    if (code) c.code = *code;
    return c;
  }
};

int run_gen_data(std::size_t n, const std::string& mode, double coverage, std::uint64_t seed, const std::string& out) {
  const auto s = vlt::pipeline::gen_data(n, vlt::scene::parse_mode(mode), coverage, seed, out);
  std::printf("sequences %zu\nannotated %zu\nframes %zu\nwritten %s\n", s.sequences, s.annotated, s.frames, out.c_str());
  return kOk;
}

int run_build_dict(const std::string& data, std::size_t d, std::uint64_t seed, const std::string& out) {
  const vlt::scene::Dataset ds = vlt::scene::load_dataset(data);
  const vlt::lang::AttributeDictionary dict = vlt::pipeline::build_dictionary(ds, d, seed);
  dict.save_file(out);
  std::printf("tokens %zu\nwritten %s\n", dict.size(), out.c_str());
  return kOk;
}

int run_search(const Overrides& o) {
  const RunConfig c = o.resolve();
  c.validate();
  std::printf("config %s\n", vlt::pipeline::path_in(c.output, "config.json").c_str());
  const auto r = vlt::pipeline::cmd_search(c);
  std::printf("best %s\nfitness %.6f\nevaluations %zu\n", vlt::to_text(r.best).c_str(), r.best_fitness, r.evo.evaluations);
  return kOk;
}

int run_retrain_eval(const Overrides& o) {
  const RunConfig c = o.resolve();
  c.validate();
  std::printf("config %s\n", vlt::pipeline::path_in(c.output, "config.json").c_str());
  const auto r = vlt::pipeline::cmd_retrain_eval(c);
  std::fputs(vlt::pipeline::summary_table(r.metrics).c_str(), stdout);
  return kOk;
}

int run_gradcheck(std::size_t seeds, const std::string& corrupt) {
  vlt::testing_hooks::corrupt_backward_op() = corrupt;
  const auto r = vlt::gradsuite::run_suite(seeds);
  for (const auto& g : r.reports)
    std::printf("%-28s %-4s max_rel_error %.3e checked %zu skipped %zu\n", g.name.c_str(), g.pass ? "ok" : "FAIL",
                g.worst(), g.checked, g.skipped);
  if (!r.pass()) {
    std::string names;
    for (const auto& n : r.failing) names += (names.empty() ? "" : ", ") + n;
    std::fprintf(stderr, "gradcheck failed: %s\n", names.c_str());
    return kInvalid;
  }
  std::printf("all %zu checks passed (%zu seeds, tol %.0e)\n", r.reports.size(), seeds, vlt::gradsuite::kTolerance);
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"vision-language tracking search toolkit"};
  app.require_subcommand(1);

  std::size_t n = 100;
  std::string mode = "easy", out;
  double coverage = 1.0;
  std::uint64_t seed = 0;
  auto* gen = app.add_subcommand("gen-data", "generate a synthetic tracking dataset");
  gen->add_option("--n", n, "number of sequences");
  gen->add_option("--mode", mode, "easy or hard")->check(CLI::IsMember({"easy", "hard"}));
  gen->add_option("--coverage", coverage, "fraction of annotated sequences")->check(CLI::Range(0.0, 1.0));
  gen->add_option("--seed", seed, "generator seed");
  gen->add_option("--out", out, "output directory")->required();

  std::string dict_data, dict_out;
  std::size_t dict_d = vlt::lang::kDefaultDim;
  std::uint64_t dict_seed = 0;
  auto* bd = app.add_subcommand("build-dict", "build the attribute dictionary of a dataset");
  bd->add_option("--data", dict_data, "dataset directory")->required();
  bd->add_option("--d", dict_d, "word embedding size");
  bd->add_option("--seed", dict_seed, "embedding seed");
  bd->add_option("--out", dict_out, "dictionary file")->required();

  Overrides so;
  auto* search = app.add_subcommand("search", "pretrain the supernet and evolve an architecture");
  so.add_common(search);
  search->add_option("--val", so.val, "validation dataset directory");
  search->add_option("--val-sequences", so.val_sequences, "validation sequences used for fitness");
  search->add_option("--pretrain-iterations", so.pretrain_iterations, "supernet iterations");
  search->add_option("--population", so.population, "population size");
  search->add_option("--generations", so.generations, "generations");
  search->add_option("--budget", so.budget, "distinct fitness evaluations");
  search->add_option("--free-slots", so.free_slots, "flat slot indices to search (others stay 0)");
  search->add_flag("--symmetric", so.symmetric, "same code for both branches");

  Overrides ro;
  auto* retrain = app.add_subcommand("retrain-eval", "retrain a fixed architecture and evaluate it");
  ro.add_common(retrain);
  retrain->add_option("--eval", ro.eval, "evaluation dataset directory");
  retrain->add_option("--code", ro.code, "architecture code text");
  retrain->add_option("--code-file", ro.code_file, "file holding the architecture code");
  retrain->add_option("--supernet-checkpoint", ro.checkpoint, "initialize from a searched supernet");
  retrain->add_option("--retrain-iterations", ro.retrain_iterations, "training iterations");
  retrain->add_option("--modes", ro.modes, "comma-separated language modes");

  std::size_t gc_seeds = vlt::gradsuite::kDefaultSeeds;
  std::string corrupt;
  auto* gc = app.add_subcommand("gradcheck", "finite-difference check of every differentiable op");
  gc->add_option("--seeds", gc_seeds, "random seeds per op")->check(CLI::PositiveNumber);
  gc->add_option("--corrupt", corrupt, "perturb this op's backward (checker self-test)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*gen) return run_gen_data(n, mode, coverage, seed, out);
    if (*bd) return run_build_dict(dict_data, dict_d, dict_seed, dict_out);
    if (*search) return run_search(so);
    if (*retrain) return run_retrain_eval(ro);
    if (*gc) return run_gradcheck(gc_seeds, corrupt);
  } catch (const vlt::IoError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kIo;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kInvalid;
  }
  return kUsage;
}
