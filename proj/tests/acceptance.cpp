// Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fails.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "vlt/gradsuite.hpp"
#include "vlt/pipeline.hpp"

using namespace vlt;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

int failures = 0;

void report(int id, const char* name, bool ok, const std::string& detail) {
  std::printf("[%s] %2d %-28s %s\n", ok ? "PASS" : "FAIL", id, name, detail.c_str());
  std::fflush(stdout);
  failures += !ok;
}

std::string fmt(const char* f, double a, double b = 0, double c = 0, double d = 0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c, d);
  return buf;
}

std::string read_file(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

Tensor random_tensor(const Shape& s, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(s);
  for (double& v : t.vec()) v = rng.uniform(lo, hi);
  return t;
}

evo::Evaluator planted(evo::Genome hidden) {
  return [hidden](const evo::Genome& g) {
    std::size_t m = 0;
    for (std::size_t i = 0; i < g.size(); ++i) m += g[i] == hidden[i];
    return static_cast<double>(m) / static_cast<double>(g.size());
  };
}

evo::EvoConfig long_run(std::uint64_t seed) {
  evo::EvoConfig c;
  c.generations = 1000;
  c.budget = 2000;
  c.seed = seed;
  return c;
}

double chi2_sf3(double x) {
  return std::erfc(std::sqrt(x / 2.0)) + std::sqrt(2.0 * x / M_PI) * std::exp(-x / 2.0);
}

void gradient_suite() {
  const auto t0 = Clock::now();
  const gradsuite::SuiteResult r = gradsuite::run_suite(20);
  double worst = 0;
  for (const auto& g : r.reports) worst = std::max(worst, g.worst());
  const double t = seconds_since(t0);
  std::string detail = fmt("%.0f cases x 20 seeds, worst rel error %.2e, %.1f s", static_cast<double>(r.reports.size()), worst, t);
  for (const auto& n : r.failing) detail += " failing:" + n;
  report(1, "gradient suite", r.pass() && worst < 1e-5 && t < 120, detail);
}

void contrastive_oracle() {
  Rng rng(1);
  const double one = modamixer::contrastive_loss_value(random_tensor({1, 6}, rng), random_tensor({1, 6}, rng));
  const Tensor e(Shape{2, 2}, std::vector<double>{1, 0, 0, 1});
  const double two = modamixer::contrastive_loss_value(e, e, 1.0);
  const double two_err = std::abs(two - std::log(1.0 + std::exp(-1.0)));
  const Tensor a = random_tensor({6, 5}, rng), b = random_tensor({6, 5}, rng);
  const std::vector<std::size_t> perm{4, 2, 0, 5, 1, 3};
  Tensor pa(a.shape()), pb(b.shape());
  for (std::size_t r = 0; r < 6; ++r)
    for (std::size_t c = 0; c < 5; ++c) {
      pa.at(r, c) = a.at(perm[r], c);
      pb.at(r, c) = b.at(perm[r], c);
    }
  const double perm_err = std::abs(modamixer::contrastive_loss_value(a, b) - modamixer::contrastive_loss_value(pa, pb));
  Tensor id(Shape{4, 4}, 0.0);
  for (std::size_t i = 0; i < 4; ++i) id.at(i, i) = 1.0;
  const double diag = modamixer::contrastive_loss_value(id, id, 0.05);
  report(2, "contrastive loss oracle", one == 0.0 && two_err <= 1e-9 && perm_err <= 1e-12 && diag < 1e-8,
         fmt("b=1 %.1g, b=2 err %.1e, perm err %.1e, diag %.1e", one, two_err, perm_err, diag));
}

void sampling_uniformity() {
  const StageLayout layout = StageLayout::paper();
  Rng rng(2024);
  const std::size_t slots = 2 * slots_per_branch(layout);
  std::vector<std::array<int, 4>> counts(slots, {0, 0, 0, 0});
  for (int n = 0; n < 40000; ++n) {
    const std::vector<int> f = sample_path(layout, rng).flat();
    for (std::size_t s = 0; s < f.size(); ++s) ++counts[s][static_cast<std::size_t>(f[s])];
  }
  double min_p = 1.0;
  for (const auto& c : counts) {
    double chi2 = 0;
    for (int k : c) chi2 += (k - 10000.0) * (k - 10000.0) / 10000.0;
    min_p = std::min(min_p, chi2_sf3(chi2));
  }
  report(3, "path sampling uniformity", slots == 48 && min_p > 0.001,
         fmt("%.0f slots, smallest p %.4f", static_cast<double>(slots), min_p));
}

void evolution_correctness() {
  const auto t0 = Clock::now();
  int solved = 0;
  std::size_t max_evals = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng = Rng(seed).child("hidden");
    evo::Genome hidden(8);
    for (int& d : hidden) d = static_cast<int>(rng.below(4));
    std::size_t optima = 0;
    const evo::Evaluator f = planted(hidden);
    const evo::Candidate bf = evo::brute_force({8, 4}, [&](const evo::Genome& g) {
      const double v = f(g);
      optima += v == 1.0;
      return v;
    });
    const evo::EvoResult r = evo::evolve({8, 4}, f, long_run(seed));
    max_evals = std::max(max_evals, r.evaluations);
    solved += optima == 1 && r.evaluations <= 2000 && *r.best.fitness == 1.0 && r.best.code == bf.code;
  }
  const double t = seconds_since(t0);
  report(4, "evolution correctness", solved >= 19 && t < 60,
         fmt("%.0f/20 solved, at most %.0f evaluations, %.1f s", solved, static_cast<double>(max_evals), t));
}

void asymmetry_ablation() {
  const evo::Evaluator f = planted({0, 1, 2, 3, 3, 2, 1, 0});
  int wins = 0;
  double mean_u = 0, mean_s = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const double u = *evo::evolve({8, 4}, f, long_run(seed)).best.fitness;
    const double s = *evo::symmetric_constrained_evolve({8, 4}, f, long_run(seed)).best.fitness;
    wins += u > s;
    mean_u += u / 20;
    mean_s += s / 20;
  }
  report(5, "asymmetry ablation", wins >= 19, fmt("%.0f/20 wins, mean %.3f vs %.3f", wins, mean_u, mean_s));
}

struct AblationRun {
  double vl = 0, zero = 0, attr_default = 0, vision_only = 0, no_residual = 0;
  double seconds = 0;
};

double suc_of(const pipeline::RetrainOutcome& r, const std::string& mode) {
  for (const auto& m : r.metrics)
    if (m.mode == mode) return m.suc;
  throw ContractError("no metric for mode " + mode);
}

AblationRun end_to_end_ablations() {
  const auto t0 = Clock::now();
  AblationRun avg;
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    const scene::Dataset train = scene::gen_dataset(128, scene::Mode::Hard, 0.5, 100 + seed);
    const scene::Dataset eval = scene::gen_dataset(200, scene::Mode::Hard, 1.0, 200 + seed);
    pipeline::RunConfig c;
    c.seed = seed;
    c.layout = "compact";
    c.retrain_iterations = 2500;
    const ArchCode code = ArchCode::uniform(c.stage_layout(), 0);

    c.modes = {"annotated", "zero", "attribute-default"};
    const auto vl = pipeline::retrain_eval(c, code, train, eval);
    pipeline::RunConfig v = c;
    v.vision_only = true;
    v.modes = {"annotated"};
    const auto vo = pipeline::retrain_eval(v, code, train, eval);
    pipeline::RunConfig n = c;
    n.residual = false;
    n.modes = {"annotated"};
    const auto nr = pipeline::retrain_eval(n, code, train, eval);

    const double r[5] = {suc_of(vl, "annotated"), suc_of(vl, "zero"), suc_of(vl, "attribute-default"),
                         suc_of(vo, "annotated"), suc_of(nr, "annotated")};
    std::printf("       seed %llu: annotated %.4f zero %.4f attribute-default %.4f vision-only %.4f no-residual %.4f (%.0f s)\n",
                static_cast<unsigned long long>(seed), r[0], r[1], r[2], r[3], r[4], seconds_since(t0));
    std::fflush(stdout);
    avg.vl += r[0] / 3;
    avg.zero += r[1] / 3;
    avg.attr_default += r[2] / 3;
    avg.vision_only += r[3] / 3;
    avg.no_residual += r[4] / 3;
  }
  avg.seconds = seconds_since(t0);
  return avg;
}

void determinism() {
  const fs::path root = fs::temp_directory_path() / "vlt_acceptance_determinism";
  fs::remove_all(root);
  pipeline::gen_data(8, scene::Mode::Hard, 0.5, 5, (root / "train").string());
  pipeline::gen_data(4, scene::Mode::Hard, 1.0, 6, (root / "eval").string());
  pipeline::RunConfig c;
  c.seed = 9;
  c.layout = "single";
  c.pretrain_iterations = 20;
  c.retrain_iterations = 20;
  c.batch = 4;
  c.val_sequences = 4;
  c.evo.population = 6;
  c.evo.generations = 4;
  c.evo.budget = 24;
  c.train_data = (root / "train").string();
  c.eval_data = (root / "eval").string();
  std::string codes[2], metrics[2];
  for (int k = 0; k < 2; ++k) {
    pipeline::RunConfig s = c;
    s.output = (root / ("search" + std::to_string(k))).string();
    pipeline::cmd_search(s);
    codes[k] = read_file(fs::path(s.output) / "arch_code.txt");
    pipeline::RunConfig r = c;
    r.code = codes[k].substr(0, codes[k].find('\n'));
    r.output = (root / ("retrain" + std::to_string(k))).string();
    pipeline::cmd_retrain_eval(r);
    metrics[k] = read_file(fs::path(r.output) / "metrics.jsonl");
  }
  const bool ok = !codes[0].empty() && codes[0] == codes[1] && !metrics[0].empty() && metrics[0] == metrics[1];
  report(9, "rerun determinism", ok, "arch_code.txt and metrics.jsonl " + std::string(ok ? "identical" : "differ"));
}

void subnet_equivalence() {
  const StageLayout layout = StageLayout::compact();
  const std::size_t lang = 4 * lang::kDefaultDim;
  const Supernet net = Supernet::build(layout, lang, 77);
  Rng rng(78);
  int equal = 0;
  for (int k = 0; k < 10; ++k) {
    const ArchCode code = sample_path(layout, rng);
    const Subnet sub = extract_subnet(net, code);
    for (int i = 0; i < 10; ++i) {
      const Tensor t = random_tensor({scene::kTemplateSize, scene::kTemplateSize, 3}, rng, 0, 1);
      const Tensor s = random_tensor({scene::kSearchSize, scene::kSearchSize, 3}, rng, 0, 1);
      const Tensor fl = random_tensor({1, lang}, rng, -0.3, 0.3);
      const auto a = forward_values(net, t, s, fl, {}, code);
      const auto b = forward_values(sub, t, s, fl, {});
      equal += a.first == b.first && a.second == b.second;
    }
  }
  report(10, "subnet equivalence", equal == 100, fmt("%.0f/100 bit-exact", equal));
}

double raster_iou(const track::Box& a, const track::Box& b, int n) {
  auto count = [n](double lo1, double hi1, double lo2, double hi2) {
    int k = 0;
    for (int i = 0; i < n; ++i) {
      const double c = (i + 0.5) / n;
      k += c >= lo1 && c < hi1 && c >= lo2 && c < hi2;
    }
    return static_cast<double>(k);
  };
  const double ax = count(a[0] - a[2] / 2, a[0] + a[2] / 2, -1, 2), ay = count(a[1] - a[3] / 2, a[1] + a[3] / 2, -1, 2);
  const double bx = count(b[0] - b[2] / 2, b[0] + b[2] / 2, -1, 2), by = count(b[1] - b[3] / 2, b[1] + b[3] / 2, -1, 2);
  const double inter = count(a[0] - a[2] / 2, a[0] + a[2] / 2, b[0] - b[2] / 2, b[0] + b[2] / 2) *
                       count(a[1] - a[3] / 2, a[1] + a[3] / 2, b[1] - b[3] / 2, b[1] + b[3] / 2);
  return inter / (ax * ay + bx * by - inter);
}

void suc_oracle() {
  const bool examples = track::suc(std::vector<double>(5, 1.0)).suc == 20.0 / 21.0 &&
                        track::suc(std::vector<double>(5, 0.0)).suc == 0.0 &&
                        track::suc(std::vector<double>(5, 0.5)).suc == 10.0 / 21.0;
  Rng rng(11);
  double worst = 0;
  for (int k = 0; k < 1000; ++k) {
    const track::Box a{rng.uniform(0.25, 0.75), rng.uniform(0.25, 0.75), rng.uniform(0.05, 0.5), rng.uniform(0.05, 0.5)};
    const track::Box b{rng.uniform(0.25, 0.75), rng.uniform(0.25, 0.75), rng.uniform(0.05, 0.5), rng.uniform(0.05, 0.5)};
    worst = std::max(worst, std::abs(track::iou(a, b) - raster_iou(a, b, 4000)));
  }
  report(11, "SUC metric oracle", examples && worst < 0.01,
         std::string(examples ? "examples exact" : "examples wrong") + fmt(", IoU vs raster max diff %.1e", worst));
}

}  // namespace

int main() {
  try {
    gradient_suite();
    contrastive_oracle();
    sampling_uniformity();
    evolution_correctness();
    asymmetry_ablation();
    const AblationRun a = end_to_end_ablations();
    report(6, "ModaMixer ablation", a.vl >= a.vision_only + 0.05 && a.seconds < 1800,
           fmt("annotated %.4f vs vision-only %.4f (need +0.05), %.0f s", a.vl, a.vision_only, a.seconds));
    report(7, "missing-language degradation", a.zero <= a.vl - 0.02 && a.attr_default >= a.zero,
           fmt("annotated %.4f zero %.4f attribute-default %.4f", a.vl, a.zero, a.attr_default));
    report(8, "residual ablation", a.no_residual <= a.vl + 0.01, fmt("no-residual %.4f vs default %.4f", a.no_residual, a.vl));
    determinism();
    subnet_equivalence();
    suc_oracle();
  } catch (const std::exception& e) {
    std::printf("[FAIL] acceptance aborted: %s\n", e.what());
    return 1;
  }
  std::printf("%d criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
