#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "astraea/attention.hpp"
#include "astraea/flops.hpp"
#include "astraea/metrics.hpp"
#include "astraea/numerics.hpp"
#include "astraea/parallel.hpp"
#include "astraea/schedule.hpp"
#include "astraea/selection.hpp"

namespace astraea {

/// Coefficients of x_{t-1} = alpha_t (x_t - beta_t z_t) + sigma_t n_t, one
/// entry per step in execution order (index 0 is the noisiest step t = T).
struct NoiseSchedule {
  std::vector<double> alpha;
  std::vector<double> beta;
  std::vector<double> sigma;

  std::size_t size() const noexcept { return alpha.size(); }

  void validate(std::size_t timesteps) const {
    if (alpha.size() != timesteps || beta.size() != timesteps || sigma.size() != timesteps) {
      throw ConfigError("noise", "schedule length must equal timesteps");
    }
    for (std::size_t i = 0; i < timesteps; ++i) {
      if (!std::isfinite(alpha[i]) || !std::isfinite(beta[i]) || !std::isfinite(sigma[i]) || sigma[i] < 0.0) {
        throw ConfigError("noise", "coefficients must be finite with sigma >= 0");
      }
    }
  }

  static NoiseSchedule constant(std::size_t timesteps, double alpha, double beta, double sigma) {
    return {std::vector<double>(timesteps, alpha), std::vector<double>(timesteps, beta),
            std::vector<double>(timesteps, sigma)};
  }

  /// DDIM-style update for an epsilon-predicting denoiser under the cosine
  /// signal curve
  ///   abar(s) = abar_min + (1 - abar_min) cos^2(((s/T) + 0.008) / 1.008 * pi/2)
  /// `eta` scales the stochastic term (0 = deterministic).
  ///
  ///   r     = sqrt(abar_{t-1} / abar_t)
  ///   sigma = eta * sqrt((1 - abar_{t-1}) / (1 - abar_t)) * sqrt(1 - abar_t / abar_{t-1})
  ///   alpha = r
  ///   beta  = sqrt(1 - abar_t) - sqrt(1 - abar_{t-1} - sigma^2) / r
  static NoiseSchedule cosine(std::size_t timesteps, double eta = 0.0, double abar_min = 0.05) {
    auto abar = [&](std::size_t s) {
      const double f = (static_cast<double>(s) / static_cast<double>(timesteps) + 0.008) / 1.008;
      const double c = std::cos(f * std::numbers::pi / 2.0);
      return abar_min + (1.0 - abar_min) * c * c;
    };
    NoiseSchedule ns;
    for (std::size_t step = 0; step < timesteps; ++step) {
      const std::size_t t = timesteps - step;
      const double a_t = abar(t);
      const double a_prev = abar(t - 1);
      const double r = std::sqrt(a_prev / a_t);
      double sigma = 0.0;
      if (eta > 0.0 && a_t < 1.0) {
        sigma = eta * std::sqrt((1.0 - a_prev) / (1.0 - a_t)) * std::sqrt(std::max(0.0, 1.0 - a_t / a_prev));
      }
      const double beta = std::sqrt(1.0 - a_t) - std::sqrt(std::max(0.0, 1.0 - a_prev - sigma * sigma)) / r;
      ns.alpha.push_back(r);
      ns.beta.push_back(beta);
      ns.sigma.push_back(sigma);
    }
    return ns;
  }
};

struct BlockWeights {
  AttentionWeights self_attn;
  AttentionWeights cross_attn;
  MlpWeights mlp;
};

/// Deterministic stand-in for a pretrained video DiT: a stack of
/// self-attention / cross-attention / MLP blocks with residual connections.
struct ToyModel {
  ModelConfig config;
  std::vector<BlockWeights> blocks;
  /// Scale applied to every sublayer output before it joins the residual stream.
  double residual_gain = 1.0;
};

/// Gain keeping the residual stream O(1) across 3 * n_blocks sublayers.
inline double default_residual_gain(const ModelConfig& cfg) {
  return 1.0 / std::sqrt(3.0 * static_cast<double>(cfg.n_blocks));
}

/// Draws every weight from N(0, 1/d) using a stream derived from weight_seed.
inline ToyModel build_toy_model(const ModelConfig& cfg) {
  cfg.validate();
  Rng rng(derive_seed(cfg.weight_seed, 1));
  const double scale = 1.0 / std::sqrt(static_cast<double>(cfg.channels));
  ToyModel model{cfg, {}, default_residual_gain(cfg)};
  model.blocks.reserve(cfg.n_blocks);
  for (std::size_t b = 0; b < cfg.n_blocks; ++b) {
    BlockWeights w;
    w.self_attn = AttentionWeights::random(cfg.channels, rng, scale);
    w.cross_attn = AttentionWeights::random(cfg.channels, rng, scale);
    w.mlp = MlpWeights::random(cfg.channels, rng, scale);
    model.blocks.push_back(std::move(w));
  }
  return model;
}

/// Synthetic conditioning tokens (M x d); one prompt seed per prompt.
inline TokenGrid prompt_context(const ModelConfig& cfg, std::uint64_t prompt_seed) {
  Rng rng(derive_seed(prompt_seed, 2));
  return random_gaussian(cfg.context_tokens, cfg.channels, rng);
}

/// Initial latent x_T drawn from noise_seed.
inline TokenGrid initial_latent(const ModelConfig& cfg) {
  Rng rng(derive_seed(cfg.noise_seed, 3));
  return random_gaussian(cfg.n_tokens, cfg.channels, rng);
}

/// Sinusoidal embedding of the execution step, broadcast to every token.
inline std::vector<double> timestep_embedding(std::size_t step, std::size_t timesteps, std::size_t channels,
                                              double amplitude = 0.25) {
  std::vector<double> e(channels);
  const double t = static_cast<double>(timesteps - step);
  for (std::size_t c = 0; c < channels; ++c) {
    const double freq = std::pow(10000.0, -static_cast<double>(c / 2 * 2) / static_cast<double>(channels));
    e[c] = amplitude * ((c % 2 == 0) ? std::sin(t * freq) : std::cos(t * freq));
  }
  return e;
}

/// x_{t-1} = alpha (x_t - beta z_t) + sigma n_t. Gaussian draws are consumed
/// from `rng` in row-major order only when sigma > 0.
inline TokenGrid denoise_step(const TokenGrid& x_t, double alpha, double beta, double sigma, const TokenGrid& z_t,
                              Rng& rng) {
  if (x_t.rows() != z_t.rows() || x_t.cols() != z_t.cols()) throw ShapeError("denoise_step: x and z shapes differ");
  TokenGrid out(x_t.rows(), x_t.cols());
  auto x = x_t.data();
  auto z = z_t.data();
  auto o = out.data();
  for (std::size_t i = 0; i < o.size(); ++i) {
    o[i] = alpha * (x[i] - beta * z[i]);
    if (sigma > 0.0) o[i] += sigma * rng_gauss(rng);
  }
  return out;
}

inline TokenGrid denoise_step(const TokenGrid& x_t, std::size_t step, const NoiseSchedule& noise, const TokenGrid& z_t,
                              Rng& rng) {
  return denoise_step(x_t, noise.alpha.at(step), noise.beta.at(step), noise.sigma.at(step), z_t, rng);
}

/// Per-run bookkeeping.
struct RunStats {
  RunMode mode = RunMode::full;
  /// mask_sizes[step][block]: tokens computed by that block at that step.
  std::vector<std::vector<std::size_t>> mask_sizes;
  /// Sum over blocks of mask_sizes[step].
  std::vector<std::size_t> selected_tokens;
  std::vector<FlopsReport> step_flops;
  FlopsReport flops;
  /// Largest consecutive-skip count of any token in any block during the run.
  std::uint64_t max_staleness = 0;
};

struct RunResult {
  TokenGrid output;
  RunStats stats;
};

/// Called after every block update with (step, block, cache, mask).
using BlockObserver = std::function<void(std::size_t, std::size_t, const BlockCache&, const SelectionMask&)>;

struct RunOptions {
  SelectionConfig selection;
  /// Steps whose whole block stack is skipped; the previous step's stack
  /// output is reused (or zero at step 0). Used by the skip-one sweep.
  std::vector<bool> skip_steps;
  BlockObserver observer;
};

namespace detail {

// Per-token x / sqrt(mean(x^2) + 1e-6); parameter-free, row independent.
inline TokenGrid rms_normalize(const TokenGrid& x) {
  TokenGrid out = x;
  for (std::size_t r = 0; r < out.rows(); ++r) {
    auto row = out.row(r);
    double ss = 0.0;
    for (double v : row) ss += v * v;
    const double inv = 1.0 / std::sqrt(ss / static_cast<double>(row.size()) + 1e-6);
    for (double& v : row) v *= inv;
  }
  return out;
}

// Runs one block for the masked rows and merges in cached rows for the rest.
inline TokenGrid run_block(const BlockWeights& w, double gain, const TokenGrid& h, const TokenGrid& ctx,
                           const SelectionMask& mask, bool dense, BlockCache& cache) {
  const std::size_t n = h.rows();
  if (mask.empty()) {
    const auto all = SelectionMask::all(n);
    TokenGrid out = read_cached(cache, all.indices());
    update_cache(cache, mask, Matrix(0, h.cols()), {}, Matrix(0, h.cols()));
    return out;
  }
  const TokenGrid normed = rms_normalize(h);
  AttentionOutput sa =
      dense ? self_attention_dense(normed, w.self_attn) : self_attention_sparse(normed, w.self_attn, mask);
  const TokenGrid inputs = gather_rows(h, mask.indices());
  const SelectionMask local = SelectionMask::all(mask.size());
  TokenGrid x = add_scaled(inputs, sa.rows, gain);
  x = add_scaled(x, cross_attention(rms_normalize(x), ctx, w.cross_attn, local), gain);
  x = add_scaled(x, mlp(rms_normalize(x), w.mlp, local), gain);

  TokenGrid out(n, h.cols());
  if (mask.size() < n) {
    const auto others = mask.complement();
    const TokenGrid cached = read_cached(cache, others);
    for (std::size_t r = 0; r < others.size(); ++r) {
      std::copy_n(cached.row(r).begin(), h.cols(), out.row(others[r]).begin());
    }
  }
  for (std::size_t r = 0; r < mask.size(); ++r) std::copy_n(x.row(r).begin(), h.cols(), out.row(mask[r]).begin());
  update_cache(cache, mask, x, sa.sum_exp, inputs);
  return out;
}

inline TokenGrid add_row_vector(const TokenGrid& x, const std::vector<double>& v) {
  TokenGrid out = x;
  for (std::size_t r = 0; r < out.rows(); ++r) {
    auto row = out.row(r);
    for (std::size_t c = 0; c < row.size(); ++c) row[c] += v[c];
  }
  return out;
}

}  // namespace detail

/// Full denoising loop under `schedule` and `mode`.
///
/// Step 0 always computes every token (the caches start empty). After that:
///  - full: every token, every block;
///  - astraea: each block scores its own cache and computes its top-k tokens;
///  - fixed_token: block 0's scores pick one mask shared by all blocks;
///  - timestep_level: steps with theta < 0.5 reuse the previous stack output.
/// The update rule runs at every step regardless of mode.
inline RunResult run_inference(const ToyModel& model, const Schedule& schedule, RunMode mode,
                               const NoiseSchedule& noise, std::uint64_t prompt_seed,
                               const RunOptions& options = {}) {
  const ModelConfig& cfg = model.config;
  cfg.validate();
  noise.validate(cfg.timesteps);
  if (schedule.size() != cfg.timesteps) {
    throw ConfigError("schedule", "length " + std::to_string(schedule.size()) + " != timesteps " +
                                      std::to_string(cfg.timesteps));
  }
  options.selection.validate();
  if (!options.skip_steps.empty() && options.skip_steps.size() != cfg.timesteps) {
    throw ConfigError("skip_steps", "length must equal timesteps");
  }

  const std::size_t n = cfg.n_tokens;
  const TokenGrid ctx = prompt_context(cfg, prompt_seed);
  Rng renoise(derive_seed(cfg.noise_seed, 4));
  TokenGrid x = initial_latent(cfg);
  std::vector<BlockCache> caches(cfg.n_blocks, BlockCache(n, cfg.channels));
  std::optional<TokenGrid> previous_z;

  RunResult result;
  RunStats& stats = result.stats;
  stats.mode = mode;

  for (std::size_t step = 0; step < cfg.timesteps; ++step) {
    std::vector<std::size_t> sizes(cfg.n_blocks, 0);
    bool skip = !options.skip_steps.empty() && options.skip_steps[step];
    if (mode == RunMode::timestep_level && step > 0 && !timestep_level_computes(schedule.tenths(step))) skip = true;

    TokenGrid z;
    if (skip) {
      z = previous_z ? *previous_z : TokenGrid(n, cfg.channels);
    } else {
      TokenGrid h = detail::add_row_vector(x, timestep_embedding(step, cfg.timesteps, cfg.channels));
      const bool everything = mode == RunMode::full || mode == RunMode::timestep_level || step == 0;
      const double theta = schedule.theta(step);
      SelectionMask shared;
      for (std::size_t b = 0; b < cfg.n_blocks; ++b) {
        SelectionMask mask;
        if (everything) {
          mask = SelectionMask::all(n);
        } else if (mode == RunMode::astraea) {
          mask = select_top(score_tokens(caches[b], options.selection, h), theta, n);
        } else {
          if (b == 0) shared = select_top(score_tokens(caches[0], options.selection, h), theta, n);
          mask = shared;
        }
        h = detail::run_block(model.blocks[b], model.residual_gain, h, ctx, mask,
                              mode == RunMode::full || mode == RunMode::timestep_level, caches[b]);
        sizes[b] = mask.size();
        stats.max_staleness = std::max(stats.max_staleness, caches[b].max_staleness());
        if (options.observer) options.observer(step, b, caches[b], mask);
      }
      z = std::move(h);
    }

    FlopsReport step_cost;
    for (std::size_t s : sizes) step_cost += flops_block(n, cfg.context_tokens, cfg.channels, s);
    stats.mask_sizes.push_back(sizes);
    stats.selected_tokens.push_back(std::accumulate(sizes.begin(), sizes.end(), std::size_t{0}));
    stats.step_flops.push_back(step_cost);
    stats.flops += step_cost;

    x = denoise_step(x, step, noise, z, renoise);
    previous_z = std::move(z);
  }
  result.output = std::move(x);
  return result;
}

/// MSE against the full run when exactly one step's block stack is skipped,
/// for every step. Entry i reuses step i-1's stack output (zero for i = 0).
inline std::vector<double> skip_one_sweep(const ToyModel& model, const NoiseSchedule& noise, std::uint64_t prompt_seed,
                                          std::size_t jobs = 1, const SelectionConfig& selection = {}) {
  const std::size_t steps = model.config.timesteps;
  if (steps < 2) throw ConfigError("timesteps", "skip-one sweep needs at least 2 timesteps");
  const Schedule full = Schedule::uniform(steps, Schedule::kGridSteps);
  RunOptions base;
  base.selection = selection;
  const TokenGrid reference = run_inference(model, full, RunMode::full, noise, prompt_seed, base).output;
  std::vector<double> mse(steps, 0.0);
  parallel_for(steps, jobs, [&](std::size_t i) {
    RunOptions opts = base;
    opts.skip_steps.assign(steps, false);
    opts.skip_steps[i] = true;
    mse[i] = compute_mse(reference, run_inference(model, full, RunMode::full, noise, prompt_seed, opts).output);
  });
  return mse;
}

}  // namespace astraea
