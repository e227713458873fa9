#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <string>
#include <string_view>
#include <vector>

#include "astraea/errors.hpp"

namespace astraea {

/// Shape and seeds of the toy denoiser.
struct ModelConfig {
  std::size_t n_tokens = 64;
  std::size_t channels = 32;
  std::size_t context_tokens = 8;
  std::size_t n_blocks = 4;
  std::size_t timesteps = 20;
  std::uint64_t weight_seed = 1;
  std::uint64_t noise_seed = 2;

  void validate() const {
    if (n_tokens < 1) throw ConfigError("n_tokens", "must be >= 1");
    if (channels < 1) throw ConfigError("channels", "must be >= 1");
    if (context_tokens < 1) throw ConfigError("context_tokens", "must be >= 1");
    if (n_blocks < 1) throw ConfigError("n_blocks", "must be >= 1");
    if (timesteps < 1) throw ConfigError("timesteps", "must be >= 1");
  }
};

/// Per-timestep token budget, one entry per denoising step in execution
/// order. Entries are integers in tenths (0..10) so the grid {0, 0.1, ..., 1}
/// is represented exactly.
class Schedule {
 public:
  static constexpr int kGridSteps = 10;

  Schedule() = default;

  explicit Schedule(std::vector<int> tenths) : tenths_(std::move(tenths)) {
    for (int v : tenths_) {
      if (v < 0 || v > kGridSteps) throw DomainError("Schedule: entry outside 0..10 tenths");
    }
  }

  static Schedule uniform(std::size_t length, int tenths) {
    return Schedule(std::vector<int>(length, tenths));
  }

  /// From fractions; each must sit on the tenths grid (within 1e-9).
  static Schedule from_fractions(const std::vector<double>& thetas) {
    std::vector<int> t;
    t.reserve(thetas.size());
    for (double th : thetas) {
      const double scaled = th * kGridSteps;
      const double nearest = std::round(scaled);
      if (!std::isfinite(th) || std::abs(scaled - nearest) > 1e-9) {
        throw DomainError("Schedule: fraction is not on the 0.1 grid");
      }
      t.push_back(static_cast<int>(nearest));
    }
    return Schedule(std::move(t));
  }

  std::size_t size() const noexcept { return tenths_.size(); }
  bool empty() const noexcept { return tenths_.empty(); }
  int tenths(std::size_t i) const { return tenths_.at(i); }
  double theta(std::size_t i) const { return tenths_.at(i) / static_cast<double>(kGridSteps); }
  const std::vector<int>& values() const noexcept { return tenths_; }

  void set(std::size_t i, int tenths) {
    if (tenths < 0 || tenths > kGridSteps) throw DomainError("Schedule: entry outside 0..10 tenths");
    tenths_.at(i) = tenths;
  }

  int sum_tenths() const noexcept { return std::accumulate(tenths_.begin(), tenths_.end(), 0); }
  double sum() const noexcept { return sum_tenths() / static_cast<double>(kGridSteps); }

  friend bool operator==(const Schedule&, const Schedule&) = default;
  friend auto operator<=>(const Schedule&, const Schedule&) = default;

 private:
  std::vector<int> tenths_;
};

/// Execution granularity for a run.
enum class RunMode {
  full,            // every token in every block at every step
  astraea,         // per-block token selection
  timestep_level,  // whole steps either computed or reused
  fixed_token,     // one mask per step, chosen from block-0 scores
};

inline std::string_view to_string(RunMode mode) {
  switch (mode) {
    case RunMode::full: return "full";
    case RunMode::astraea: return "astraea";
    case RunMode::timestep_level: return "timestep";
    case RunMode::fixed_token: return "fixed";
  }
  return "unknown";
}

inline RunMode parse_run_mode(std::string_view s) {
  if (s == "full") return RunMode::full;
  if (s == "astraea") return RunMode::astraea;
  if (s == "timestep" || s == "timestep_level") return RunMode::timestep_level;
  if (s == "fixed" || s == "fixed_token") return RunMode::fixed_token;
  throw ConfigError("mode", "unknown run mode '" + std::string(s) + "' (full|astraea|timestep|fixed)");
}

/// Whether a timestep-level run computes step i (theta >= 0.5 rounds up).
inline bool timestep_level_computes(int tenths) { return tenths >= 5; }

}  // namespace astraea
