#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <exception>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "astraea/attention.hpp"
#include "astraea/config.hpp"
#include "astraea/diffusion.hpp"
#include "astraea/flops.hpp"
#include "astraea/io.hpp"
#include "astraea/metrics.hpp"
#include "astraea/search.hpp"
#include "astraea/selection.hpp"

namespace astraea {

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

namespace detail {

inline SelectionMask random_mask(std::size_t n, Rng& rng, bool nonempty) {
  std::vector<std::size_t> idx;
  for (std::size_t t = 0; t < n; ++t)
    if (rng_choice(rng, 2) == 1) idx.push_back(t);
  if (nonempty && idx.empty()) idx.push_back(rng_choice(rng, n));
  return SelectionMask(std::move(idx), n);
}

inline CheckResult run_check(const std::string& name, const std::function<std::string()>& body) {
  try {
    std::string failure = body();
    return {name, failure.empty(), failure.empty() ? "ok" : failure};
  } catch (const std::exception& e) {
    return {name, false, std::string("exception: ") + e.what()};
  }
}

inline std::string check_sparse_attention() {
  Rng rng(0x5eed);
  for (int trial = 0; trial < 40; ++trial) {
    const std::size_t n = 1 + rng_choice(rng, 32);
    const std::size_t d = 1 + rng_choice(rng, 16);
    const TokenGrid x = random_gaussian(n, d, rng);
    const AttentionWeights w = AttentionWeights::random(d, rng, 1.0 / std::sqrt(static_cast<double>(d)));
    const SelectionMask mask = random_mask(n, rng, true);
    const AttentionOutput dense = self_attention_dense(x, w);
    const AttentionOutput sparse = self_attention_sparse(x, w, mask);
    for (std::size_t i = 0; i < mask.size(); ++i) {
      for (std::size_t c = 0; c < d; ++c) {
        if (std::abs(sparse.rows(i, c) - dense.rows(mask[i], c)) > 1e-12) {
          return "trial " + std::to_string(trial) + ": row " + std::to_string(mask[i]) + " differs";
        }
      }
    }
  }
  return {};
}

inline std::string check_full_mask_run(const ModelConfig& cfg, const NoiseSchedule& noise) {
  const ToyModel model = build_toy_model(cfg);
  const Schedule ones = Schedule::uniform(cfg.timesteps, Schedule::kGridSteps);
  const TokenGrid ref = run_inference(model, ones, RunMode::full, noise, 11).output;
  for (RunMode m : {RunMode::astraea, RunMode::fixed_token, RunMode::timestep_level}) {
    const TokenGrid out = run_inference(model, ones, m, noise, 11).output;
    for (std::size_t i = 0; i < out.size(); ++i) {
      if (std::abs(out.data()[i] - ref.data()[i]) > 1e-12) {
        return std::string(to_string(m)) + " at theta=1 differs from full mode";
      }
    }
  }
  return {};
}

inline std::string check_flops_counter() {
  Rng rng(0xf10b5);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t n = 1 + rng_choice(rng, 24);
    const std::size_t m = 1 + rng_choice(rng, 8);
    const std::size_t h = 1 + rng_choice(rng, 12);
    const TokenGrid x = random_gaussian(n, h, rng);
    const TokenGrid ctx = random_gaussian(m, h, rng);
    const AttentionWeights w = AttentionWeights::random(h, rng, 0.3);
    const MlpWeights mw = MlpWeights::random(h, rng, 0.3);
    const SelectionMask all = SelectionMask::all(n);
    const FlopsConfig fc{1, n, n, m, h, 1};
    {
      FlopCounter counter;
      (void)self_attention_dense(x, w);
      if (counter.flops() != flops_self_attention(fc).total()) return "self-attention counter mismatch";
    }
    {
      FlopCounter counter;
      (void)cross_attention(x, ctx, w, all);
      if (counter.flops() != flops_cross_attention(fc)) return "cross-attention counter mismatch";
    }
    {
      FlopCounter counter;
      (void)mlp(x, mw, all);
      if (counter.flops() != flops_mlp(fc)) return "mlp counter mismatch";
    }
    {
      const SelectionMask mask = random_mask(n, rng, true);
      FlopCounter counter;
      (void)self_attention_sparse(x, w, mask);
      if (counter.flops() != flops_sparse_self_attention(1, n, mask.size(), h).total()) {
        return "sparse self-attention counter mismatch";
      }
    }
  }
  return {};
}

inline std::string check_repair() {
  Rng rng(0x4e9a14);
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t len = 1 + rng_choice(rng, 30);
    const double budget = rng_uniform(rng, 0.1, static_cast<double>(len));
    BudgetBand band;
    try {
      band = budget_band(budget, len);
    } catch (const ConfigError&) {
      continue;
    }
    std::vector<int> raw(len);
    for (int& v : raw) v = static_cast<int>(rng_choice(rng, Schedule::kGridSteps + 1));
    const Schedule s = repair(Schedule(std::move(raw)), band, rng);
    if (!band.contains(s.sum_tenths())) return "repaired sum outside band on trial " + std::to_string(trial);
    for (int v : s.values())
      if (v < 0 || v > Schedule::kGridSteps) return "repair produced an off-grid entry";
  }
  SearchConfig cfg;
  cfg.max_generations = 10;
  if (std::abs(mutation_probability(0, cfg) - 0.1) > 1e-15) return "mutation probability at g=0 is not 0.1";
  if (std::abs(mutation_probability(10, cfg) - 0.01) > 1e-15) return "mutation probability at g=max is not 0.01";
  return {};
}

inline std::string check_schedule_round_trip() {
  Rng rng(0x5c4ed);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<int> raw(1 + rng_choice(rng, 40));
    for (int& v : raw) v = static_cast<int>(rng_choice(rng, Schedule::kGridSteps + 1));
    const Schedule s(std::move(raw));
    if (!(parse_schedule(render_schedule(s)) == s)) return "parse(render(s)) != s on trial " + std::to_string(trial);
  }
  return {};
}

inline std::string check_staleness(const ModelConfig& cfg, const NoiseSchedule& noise) {
  const ToyModel model = build_toy_model(cfg);
  Schedule s = Schedule::uniform(cfg.timesteps, 3);
  s.set(0, Schedule::kGridSteps);
  std::string failure;
  RunOptions opts;
  opts.observer = [&](std::size_t, std::size_t, const BlockCache& cache, const SelectionMask& mask) {
    for (std::size_t t : mask.indices())
      if (cache.staleness(t) != 0 && failure.empty()) failure = "selected token kept a non-zero skip count";
  };
  const RunResult r = run_inference(model, s, RunMode::astraea, noise, 11, opts);
  if (!failure.empty()) return failure;
  if (r.stats.max_staleness > 10) return "max skip count " + std::to_string(r.stats.max_staleness) + " > 10";
  return {};
}

inline std::string check_run_flops(const ModelConfig& cfg, const NoiseSchedule& noise) {
  const ToyModel model = build_toy_model(cfg);
  Schedule s = Schedule::uniform(cfg.timesteps, 5);
  s.set(0, Schedule::kGridSteps);
  for (RunMode m : {RunMode::full, RunMode::astraea, RunMode::fixed_token, RunMode::timestep_level}) {
    const RunResult r = run_inference(model, s, m, noise, 11);
    if (!(r.stats.flops == flops_sparse_run(cfg, s, m))) {
      return std::string(to_string(m)) + ": run statistics disagree with the analytic model";
    }
  }
  return {};
}

}  // namespace detail

/// Checks a schedule file: syntax, grid, length, full first step, and that
/// the searchable steps sit inside the budget band.
inline CheckResult check_schedule_file(const std::string& path, const RunConfig& cfg) {
  return detail::run_check("schedule file " + path, [&]() -> std::string {
    Schedule s;
    try {
      s = load_schedule(path);
    } catch (const ScheduleFormatError& e) {
      return e.what();
    }
    if (s.size() != cfg.model.timesteps) {
      return "has " + std::to_string(s.size()) + " steps, expected " + std::to_string(cfg.model.timesteps);
    }
    if (s.tenths(0) != Schedule::kGridSteps) return "first step must be 10/10";
    const BudgetBand band = budget_band(cfg.search_budget(), s.size() - 1);
    const int sum = genome_from_run_schedule(s).sum_tenths();
    if (!band.contains(sum)) {
      return "budget " + std::to_string(sum) + "/10 outside [" + std::to_string(band.lo) + "/10, " +
             std::to_string(band.hi) + "/10]";
    }
    return {};
  });
}

/// Built-in self-check suite. Model-level checks use a reduced copy of the
/// configured model so the suite stays fast.
inline std::vector<CheckResult> run_verify(const RunConfig& cfg, const std::optional<std::string>& schedule_path = {}) {
  ModelConfig small = cfg.model;
  small.n_tokens = std::min<std::size_t>(small.n_tokens, 32);
  small.channels = std::min<std::size_t>(small.channels, 16);
  small.timesteps = std::min<std::size_t>(small.timesteps, 12);
  const NoiseSchedule noise = cfg.noise.build(small.timesteps);
  ModelConfig stale = cfg.model;
  stale.timesteps = 20;
  const NoiseSchedule stale_noise = cfg.noise.build(stale.timesteps);

  std::vector<CheckResult> out;
  out.push_back(detail::run_check("sparse attention rows equal dense rows", detail::check_sparse_attention));
  out.push_back(detail::run_check("full-budget runs equal full mode",
                                  [&] { return detail::check_full_mask_run(small, noise); }));
  out.push_back(detail::run_check("flop counter equals closed forms", detail::check_flops_counter));
  out.push_back(detail::run_check("run flops equal analytic model", [&] { return detail::check_run_flops(small, noise); }));
  out.push_back(detail::run_check("repair lands in budget band", detail::check_repair));
  out.push_back(detail::run_check("schedule file round trip", detail::check_schedule_round_trip));
  out.push_back(detail::run_check("skip counts bounded and reset", [&] { return detail::check_staleness(stale, stale_noise); }));
  if (schedule_path) out.push_back(check_schedule_file(*schedule_path, cfg));
  return out;
}

}  // namespace astraea
