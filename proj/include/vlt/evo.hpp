#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "vlt/errors.hpp"
#include "vlt/random.hpp"

namespace vlt::evo {

using Genome = std::vector<int>;
using Evaluator = std::function<double(const Genome&)>;

struct SearchSpace {
  std::size_t slots = 0;
  int choices = 4;

  double size() const { return std::pow(static_cast<double>(choices), static_cast<double>(slots)); }
};

struct Candidate {
  Genome code;
  std::optional<double> fitness;
};

struct EvoConfig {
  std::size_t population = 16;
  std::size_t generations = 20;
  double mutation_prob = -1.0;  // per slot; negative = 1 / slots
  double crossover_rate = 0.5;
  std::size_t elites = 2;
  std::size_t tournament = 3;
  std::size_t budget = 320;  // distinct evaluations
  std::uint64_t seed = 0;

  void validate() const {
    if (population == 0) throw ConfigError("evolve: population must be positive");
    if (elites > population) throw ConfigError("evolve: elite count exceeds population");
    if (budget < population) throw ConfigError("evolve: budget must be at least the population size");
    if (tournament == 0) throw ConfigError("evolve: tournament size must be positive");
  }
};

struct GenerationRecord {
  std::size_t generation = 0;
  double best_fitness = 0.0;  // best ever up to and including this generation
  double mean_fitness = 0.0;  // over this generation's evaluated members
  std::size_t evals_used = 0;
};

struct EvoResult {
  Candidate best;
  std::vector<GenerationRecord> history;
  std::size_t evaluations = 0;
};

/// Higher fitness wins; ties go to the lexicographically smaller code.
inline bool better(double fa, const Genome& a, double fb, const Genome& b) {
  if (fa != fb) return fa > fb;
  return a < b;
}

namespace detail {

/// Memoizing, budget-accounting evaluator. Cache hits are free.
class CachedEvaluator {
 public:
  CachedEvaluator(const Evaluator& f, std::size_t budget) : f_(f), budget_(budget) {}

  std::optional<double> operator()(const Genome& g) {
    auto it = cache_.find(g);
    if (it != cache_.end()) return it->second;
    if (used_ >= budget_) return std::nullopt;
    ++used_;
    const double v = f_(g);
    cache_.emplace(g, v);
    if (!best_ || better(v, g, *best_fit_, *best_)) {
      best_ = g;
      best_fit_ = v;
    }
    return v;
  }

  std::size_t used() const { return used_; }
  bool exhausted() const { return used_ >= budget_; }
  const std::optional<Genome>& best() const { return best_; }
  std::optional<double> best_fitness() const { return best_fit_; }

 private:
  const Evaluator& f_;
  std::size_t budget_;
  std::size_t used_ = 0;
  std::map<Genome, double> cache_;
  std::optional<Genome> best_;
  std::optional<double> best_fit_;
};

inline Genome random_genome(const SearchSpace& space, Rng& rng) {
  Genome g(space.slots);
  for (int& d : g) d = static_cast<int>(rng.below(static_cast<std::uint64_t>(space.choices)));
  return g;
}

}  // namespace detail

/// Generational loop: evaluate, keep elites, fill the rest with children of
/// tournament-selected parents (uniform crossover, per-slot reroll mutation).
/// Stops after `generations` generations or when the budget is spent.
inline EvoResult evolve(const SearchSpace& space, const Evaluator& evaluator, const EvoConfig& cfg) {
  cfg.validate();
  if (space.slots == 0 || space.choices <= 0) throw ConfigError("evolve: empty search space");
  Rng rng(cfg.seed);
  const double p_mut = cfg.mutation_prob < 0.0 ? 1.0 / static_cast<double>(space.slots) : cfg.mutation_prob;
  detail::CachedEvaluator eval(evaluator, cfg.budget);
  EvoResult result;

  struct Member {
    Genome code;
    double fitness;
  };
  std::vector<Member> pop;
  for (std::size_t i = 0; i < cfg.population; ++i) {
    Genome g = detail::random_genome(space, rng);
    if (auto f = eval(g)) pop.push_back({std::move(g), *f});
  }

  auto sort_pop = [](std::vector<Member>& v) {
    std::sort(v.begin(), v.end(), [](const Member& a, const Member& b) { return better(a.fitness, a.code, b.fitness, b.code); });
  };
  auto record = [&](std::size_t gen) {
    double mean = 0.0;
    for (const Member& m : pop) mean += m.fitness;
    mean = pop.empty() ? 0.0 : mean / static_cast<double>(pop.size());
    result.history.push_back({gen, eval.best_fitness().value_or(0.0), mean, eval.used()});
  };

  sort_pop(pop);
  record(0);
  for (std::size_t gen = 1; gen < cfg.generations && !pop.empty(); ++gen) {
    if (eval.exhausted()) break;
    auto tournament = [&]() -> const Member& {
      const Member* best = nullptr;
      for (std::size_t t = 0; t < cfg.tournament; ++t) {
        const Member& m = pop[rng.below(pop.size())];
        if (!best || better(m.fitness, m.code, best->fitness, best->code)) best = &m;
      }
      return *best;
    };
    std::vector<Member> next(pop.begin(), pop.begin() + static_cast<long>(std::min(cfg.elites, pop.size())));
    while (next.size() < cfg.population && !eval.exhausted()) {
      Genome child = tournament().code;
      if (rng.bernoulli(cfg.crossover_rate)) {
        const Genome& other = tournament().code;
        for (std::size_t i = 0; i < child.size(); ++i)
          if (rng.bernoulli(0.5)) child[i] = other[i];
      }
      for (int& d : child)
        if (rng.bernoulli(p_mut)) d = static_cast<int>(rng.below(static_cast<std::uint64_t>(space.choices)));
      if (auto f = eval(child)) next.push_back({std::move(child), *f});
    }
    pop = std::move(next);
    sort_pop(pop);
    record(gen);
  }

  result.evaluations = eval.used();
  if (eval.best()) result.best = {*eval.best(), eval.best_fitness()};
  return result;
}

/// Exhaustive argmax, lexicographically smallest code on ties.
inline Candidate brute_force(const SearchSpace& space, const Evaluator& evaluator, double max_size = 1e6) {
  if (space.size() > max_size) {
    throw ConfigError("brute_force: search space has " + std::to_string(static_cast<long long>(space.size())) +
                      " codes, limit is " + std::to_string(static_cast<long long>(max_size)));
  }
  Genome g(space.slots, 0);
  Candidate best;
  while (true) {
    const double f = evaluator(g);
    if (!best.fitness || better(f, g, *best.fitness, best.code)) best = {g, f};
    // odometer increment, last slot fastest: visits codes in lexicographic order
    std::size_t i = space.slots;
    while (i > 0) {
      --i;
      if (++g[i] < space.choices) break;
      g[i] = 0;
      if (i == 0) return best;
    }
    if (space.slots == 0) return best;
  }
}

/// evolve() over a single half-code that is used for both branches, so the
/// template half always equals the search half.
inline EvoResult symmetric_constrained_evolve(const SearchSpace& space, const Evaluator& evaluator, const EvoConfig& cfg) {
  if (space.slots % 2 != 0) throw ConfigError("symmetric search needs an even slot count");
  const SearchSpace half{space.slots / 2, space.choices};
  auto doubled = [](const Genome& h) {
    Genome full = h;
    full.insert(full.end(), h.begin(), h.end());
    return full;
  };
  EvoResult r = evolve(half, [&](const Genome& h) { return evaluator(doubled(h)); }, cfg);
  r.best.code = doubled(r.best.code);
  return r;
}

/// Uniform random sampling baseline with the same budget accounting.
inline Candidate random_search(const SearchSpace& space, const Evaluator& evaluator, std::size_t budget, std::uint64_t seed) {
  Rng rng(seed);
  detail::CachedEvaluator eval(evaluator, budget);
  // Bounded number of draws so a tiny space cannot loop forever on cache hits.
  for (std::size_t draws = 0; !eval.exhausted() && draws < 50 * budget; ++draws) eval(detail::random_genome(space, rng));
  Candidate c;
  if (eval.best()) c = {*eval.best(), eval.best_fitness()};
  return c;
}

/// `gen,best_fitness,mean_fitness,evals_used` lines.
inline void write_history(std::ostream& os, const std::vector<GenerationRecord>& history) {
  char buf[160];
  for (const auto& r : history) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%zu\n", r.generation, r.best_fitness, r.mean_fitness, r.evals_used);
    os << buf;
  }
}

}  // namespace vlt::evo
