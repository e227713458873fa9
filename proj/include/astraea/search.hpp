#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "astraea/diffusion.hpp"
#include "astraea/metrics.hpp"
#include "astraea/numerics.hpp"
#include "astraea/parallel.hpp"
#include "astraea/schedule.hpp"

namespace astraea {

struct SearchConfig {
  std::size_t population_size = 50;           // W
  std::size_t elite_count = 10;               // k
  std::size_t offspring_per_generation = 50;  // P
  std::size_t max_generations = 10;
  double p_initial = 0.1;
  double p_final = 0.01;
  /// Target sum of theta over the searchable steps; repair keeps every
  /// candidate within [0.9, 1.1] of it.
  double budget = 9.5;
  std::vector<std::uint64_t> prompt_seeds = {11, 12, 13, 14};
  std::uint64_t seed = 0;
  std::size_t jobs = 1;

  void validate(std::size_t genome_length) const;
};

/// Inclusive bounds on the schedule sum, in tenths.
struct BudgetBand {
  int lo = 0;
  int hi = 0;

  bool contains(int sum_tenths) const noexcept { return sum_tenths >= lo && sum_tenths <= hi; }
};

/// [0.9 budget, 1.1 budget] intersected with the tenths grid.
inline BudgetBand budget_band(double budget, std::size_t genome_length) {
  const double max_sum = static_cast<double>(genome_length);
  if (!(budget > 0.0) || budget > max_sum) {
    throw ConfigError("budget", "must lie in (0, " + std::to_string(genome_length) + "]");
  }
  BudgetBand band{static_cast<int>(std::ceil(9.0 * budget - 1e-9)), static_cast<int>(std::floor(11.0 * budget + 1e-9))};
  band.hi = std::min(band.hi, static_cast<int>(genome_length) * Schedule::kGridSteps);
  if (band.lo > band.hi) throw ConfigError("budget", "band [0.9B, 1.1B] contains no point of the 0.1 grid");
  return band;
}

inline void SearchConfig::validate(std::size_t genome_length) const {
  if (population_size < 1) throw ConfigError("population", "must be >= 1");
  if (elite_count < 1 || elite_count > population_size) throw ConfigError("elite", "must lie in [1, population]");
  if (offspring_per_generation < 1) throw ConfigError("offspring", "must be >= 1");
  if (!(p_final >= 0.0 && p_final <= p_initial && p_initial <= 1.0)) {
    throw ConfigError("p_initial", "need 0 <= p_final <= p_initial <= 1");
  }
  if (prompt_seeds.empty()) throw ConfigError("prompt_seeds", "at least one prompt seed required");
  if (genome_length < 1) throw ConfigError("timesteps", "need at least one searchable step");
  budget_band(budget, genome_length);
}

struct Candidate {
  Schedule schedule;
  std::optional<double> fitness;
};

/// Linear decay from p_initial at generation 0 to p_final at max_generations.
inline double mutation_probability(std::size_t generation, const SearchConfig& cfg) {
  if (cfg.max_generations == 0) return cfg.p_initial;
  const double frac = static_cast<double>(generation) / static_cast<double>(cfg.max_generations);
  return cfg.p_initial - frac * (cfg.p_initial - cfg.p_final);
}

/// Child takes each entry from either parent with equal probability.
template <BitSource G>
Schedule crossover_uniform(const Schedule& a, const Schedule& b, G& rng) {
  if (a.size() != b.size()) throw ShapeError("crossover: parent lengths differ");
  std::vector<int> child(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) child[i] = rng_choice(rng, 2) == 0 ? a.tenths(i) : b.tenths(i);
  return Schedule(std::move(child));
}

/// Child takes [begin, end) from `a` and the rest from `b`.
inline Schedule crossover_block(const Schedule& a, const Schedule& b, std::size_t begin, std::size_t end) {
  if (a.size() != b.size()) throw ShapeError("crossover: parent lengths differ");
  if (begin > end || end > a.size()) throw DomainError("crossover_block: window out of range");
  std::vector<int> child(b.values());
  for (std::size_t i = begin; i < end; ++i) child[i] = a.tenths(i);
  return Schedule(std::move(child));
}

/// Picks uniform or block crossover with equal probability. The block window
/// is a non-empty [s, e) drawn uniformly.
template <BitSource G>
Schedule crossover(const Schedule& a, const Schedule& b, G& rng) {
  if (a.size() != b.size()) throw ShapeError("crossover: parent lengths differ");
  if (a.empty()) return a;
  if (rng_choice(rng, 2) == 0) return crossover_uniform(a, b, rng);
  const std::size_t begin = rng_choice(rng, a.size());
  const std::size_t end = begin + 1 + rng_choice(rng, a.size() - begin);
  return crossover_block(a, b, begin, end);
}

/// Each entry independently, with probability p, moves to a different grid
/// value drawn uniformly from the other ten.
template <BitSource G>
Schedule mutate(const Schedule& s, double p, G& rng) {
  if (!(p >= 0.0 && p <= 1.0)) throw DomainError("mutate: probability outside [0, 1]");
  std::vector<int> out(s.values());
  for (int& v : out) {
    if (rng_unit(rng) < p) {
      int draw = static_cast<int>(rng_choice(rng, Schedule::kGridSteps));
      if (draw >= v) ++draw;
      v = draw;
    }
  }
  return Schedule(std::move(out));
}

/// Moves the sum into the band one grid step at a time: decrement a random
/// non-zero entry while above, increment a random non-full entry while below.
template <BitSource G>
Schedule repair(const Schedule& s, const BudgetBand& band, G& rng) {
  std::vector<int> v(s.values());
  int sum = s.sum_tenths();
  std::vector<std::size_t> movable;
  auto collect = [&](auto pred) {
    movable.clear();
    for (std::size_t i = 0; i < v.size(); ++i)
      if (pred(v[i])) movable.push_back(i);
  };
  while (sum > band.hi) {
    collect([](int x) { return x > 0; });
    if (movable.empty()) break;
    --v[movable[rng_choice(rng, movable.size())]];
    --sum;
  }
  while (sum < band.lo) {
    collect([](int x) { return x < Schedule::kGridSteps; });
    if (movable.empty()) break;
    ++v[movable[rng_choice(rng, movable.size())]];
    ++sum;
  }
  return Schedule(std::move(v));
}

template <BitSource G>
Schedule repair(const Schedule& s, const SearchConfig& cfg, G& rng) {
  return repair(s, budget_band(cfg.budget, s.size()), rng);
}

/// W distinct, band-valid schedules of `genome_length` entries.
template <BitSource G>
std::vector<Candidate> init_population(const SearchConfig& cfg, std::size_t genome_length, G& rng) {
  cfg.validate(genome_length);
  const BudgetBand band = budget_band(cfg.budget, genome_length);
  std::vector<Candidate> population;
  std::set<Schedule> seen;
  const std::size_t max_attempts = 1000 * cfg.population_size;
  for (std::size_t attempt = 0; population.size() < cfg.population_size; ++attempt) {
    if (attempt >= max_attempts) throw ConfigError("population", "could not draw enough distinct schedules");
    std::vector<int> raw(genome_length);
    for (int& x : raw) x = static_cast<int>(rng_choice(rng, Schedule::kGridSteps + 1));
    Schedule s = repair(Schedule(std::move(raw)), band, rng);
    if (seen.insert(s).second) population.push_back({std::move(s), std::nullopt});
  }
  return population;
}

/// Schedule actually run: step 0 is always full, the genome covers the rest.
inline Schedule run_schedule_from_genome(const Schedule& genome) {
  std::vector<int> v;
  v.reserve(genome.size() + 1);
  v.push_back(Schedule::kGridSteps);
  v.insert(v.end(), genome.values().begin(), genome.values().end());
  return Schedule(std::move(v));
}

inline Schedule genome_from_run_schedule(const Schedule& schedule) {
  if (schedule.empty()) throw DomainError("genome_from_run_schedule: empty schedule");
  return Schedule(std::vector<int>(schedule.values().begin() + 1, schedule.values().end()));
}

/// MSE of astraea-mode output against full-mode output, averaged over a set
/// of prompt seeds. Full-mode references are computed once at construction.
class FitnessEvaluator {
 public:
  FitnessEvaluator(const ToyModel& model, NoiseSchedule noise, std::vector<std::uint64_t> prompt_seeds,
                   SelectionConfig selection = {}, RunMode mode = RunMode::astraea, std::size_t jobs = 1)
      : model_(model), noise_(std::move(noise)), prompts_(std::move(prompt_seeds)), mode_(mode) {
    options_.selection = selection;
    references_.resize(prompts_.size());
    const Schedule full = Schedule::uniform(model_.config.timesteps, Schedule::kGridSteps);
    parallel_for(prompts_.size(), jobs, [&](std::size_t i) {
      references_[i] = run_inference(model_, full, RunMode::full, noise_, prompts_[i], options_).output;
    });
  }

  std::size_t genome_length() const noexcept { return model_.config.timesteps - 1; }
  const std::vector<std::uint64_t>& prompt_seeds() const noexcept { return prompts_; }

  /// Fitness of one prompt (by index into prompt_seeds).
  double prompt_fitness(const Schedule& genome, std::size_t prompt) const {
    const RunResult r =
        run_inference(model_, run_schedule_from_genome(genome), mode_, noise_, prompts_.at(prompt), options_);
    return compute_mse(references_[prompt], r.output);
  }

  double operator()(const Schedule& genome) const {
    double acc = 0.0;
    for (std::size_t p = 0; p < prompts_.size(); ++p) acc += prompt_fitness(genome, p);
    return acc / static_cast<double>(prompts_.size());
  }

 private:
  const ToyModel& model_;
  NoiseSchedule noise_;
  std::vector<std::uint64_t> prompts_;
  RunMode mode_;
  RunOptions options_;
  std::vector<TokenGrid> references_;
};

inline double evaluate_fitness(const Candidate& c, const FitnessEvaluator& evaluator) {
  return evaluator(c.schedule);
}

struct GenerationRecord {
  std::size_t generation = 0;
  double best_mse = 0.0;
  double mean_mse = 0.0;
  /// Distinct schedules evaluated so far.
  std::size_t evaluations = 0;
  Schedule best_schedule;
};

struct SearchResult {
  Candidate best;
  std::vector<GenerationRecord> history;
};

namespace detail {

class FitnessCache {
 public:
  FitnessCache(const FitnessEvaluator& eval, std::size_t jobs) : eval_(eval), jobs_(jobs) {}

  // Fills in fitness for every candidate, evaluating unseen schedules in parallel.
  void evaluate(std::vector<Candidate>& candidates) {
    std::vector<Schedule> pending;
    std::set<Schedule> queued;
    for (const auto& c : candidates) {
      if (!known_.contains(c.schedule) && queued.insert(c.schedule).second) pending.push_back(c.schedule);
    }
    std::vector<double> values(pending.size());
    parallel_for(pending.size(), jobs_, [&](std::size_t i) { values[i] = eval_(pending[i]); });
    for (std::size_t i = 0; i < pending.size(); ++i) known_.emplace(pending[i], values[i]);
    for (auto& c : candidates) c.fitness = known_.at(c.schedule);
  }

  std::size_t size() const noexcept { return known_.size(); }

 private:
  const FitnessEvaluator& eval_;
  std::size_t jobs_;
  std::map<Schedule, double> known_;
};

inline void sort_by_fitness(std::vector<Candidate>& pop) {
  std::stable_sort(pop.begin(), pop.end(), [](const Candidate& a, const Candidate& b) { return *a.fitness < *b.fitness; });
}

inline GenerationRecord summarize(std::size_t generation, const std::vector<Candidate>& sorted, std::size_t evals) {
  double mean = 0.0;
  for (const auto& c : sorted) mean += *c.fitness;
  mean /= static_cast<double>(sorted.size());
  return {generation, *sorted.front().fitness, mean, evals, sorted.front().schedule};
}

}  // namespace detail

/// Elitist evolutionary search over per-step budgets.
///
/// Each generation keeps the k fittest candidates, breeds P offspring from
/// random elite pairs (crossover, decaying-probability mutation, repair,
/// de-duplication), and forms the next population from the elites plus the
/// best W - k offspring. history[0] describes the initial population.
inline SearchResult run_search(const SearchConfig& cfg, const FitnessEvaluator& evaluator) {
  const std::size_t length = evaluator.genome_length();
  cfg.validate(length);
  const BudgetBand band = budget_band(cfg.budget, length);
  Rng rng(derive_seed(cfg.seed, 5));
  detail::FitnessCache cache(evaluator, cfg.jobs);

  std::vector<Candidate> population = init_population(cfg, length, rng);
  cache.evaluate(population);
  detail::sort_by_fitness(population);

  SearchResult result;
  result.history.push_back(detail::summarize(0, population, cache.size()));

  for (std::size_t gen = 0; gen < cfg.max_generations; ++gen) {
    const std::size_t k = std::min(cfg.elite_count, population.size());
    std::vector<Candidate> elites(population.begin(), population.begin() + static_cast<std::ptrdiff_t>(k));
    const double p_mut = mutation_probability(gen, cfg);

    std::set<Schedule> seen;
    for (const auto& e : elites) seen.insert(e.schedule);
    std::vector<Candidate> offspring;
    const std::size_t max_attempts = 1000 * cfg.offspring_per_generation;
    for (std::size_t attempt = 0; offspring.size() < cfg.offspring_per_generation && attempt < max_attempts;
         ++attempt) {
      const std::size_t ia = rng_choice(rng, k);
      std::size_t ib = ia;
      if (k > 1) {
        ib = rng_choice(rng, k - 1);
        if (ib >= ia) ++ib;
      }
      Schedule child = crossover(elites[ia].schedule, elites[ib].schedule, rng);
      child = repair(mutate(child, p_mut, rng), band, rng);
      if (seen.insert(child).second) offspring.push_back({std::move(child), std::nullopt});
    }
    cache.evaluate(offspring);
    detail::sort_by_fitness(offspring);

    std::vector<Candidate> next = elites;
    for (std::size_t i = 0; i < offspring.size() && next.size() < cfg.population_size; ++i) next.push_back(offspring[i]);
    for (std::size_t i = k; i < population.size() && next.size() < cfg.population_size; ++i) {
      if (!seen.contains(population[i].schedule)) {
        seen.insert(population[i].schedule);
        next.push_back(population[i]);
      }
    }
    detail::sort_by_fitness(next);
    population = std::move(next);
    result.history.push_back(detail::summarize(gen + 1, population, cache.size()));
  }

  result.best = population.front();
  return result;
}

}  // namespace astraea
