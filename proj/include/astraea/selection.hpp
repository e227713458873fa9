#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "astraea/attention.hpp"
#include "astraea/numerics.hpp"

namespace astraea {

/// How the per-token value change between two computed timesteps is measured.
enum class DeltaMetric { mean_abs, mean_squared };

inline const char* to_string(DeltaMetric m) {
  return m == DeltaMetric::mean_abs ? "abs" : "squared";
}

/// Which pair of token values the change is measured between.
enum class DeltaSource {
  live,  // the block's current input vs the input at the token's last computation
  pair,  // the inputs at the token's last two computed timesteps
};

inline const char* to_string(DeltaSource s) { return s == DeltaSource::live ? "live" : "pair"; }

struct SelectionConfig {
  double w_alpha = 1.0;  // weight of significance
  double w_beta = 1.0;   // weight of staleness penalty
  DeltaMetric delta_metric = DeltaMetric::mean_abs;
  DeltaSource delta_source = DeltaSource::live;

  void validate() const {
    if (!(w_alpha >= 0.0) || !std::isfinite(w_alpha)) throw ConfigError("w_alpha", "must be finite and >= 0");
    if (!(w_beta >= 0.0) || !std::isfinite(w_beta)) throw ConfigError("w_beta", "must be finite and >= 0");
    if (w_alpha == 0.0 && w_beta == 0.0) throw ConfigError("w_alpha", "w_alpha and w_beta cannot both be 0");
  }
};

struct TokenScore {
  double significance = 0.0;
  double penalty = 1.0;
  double total = 0.0;
};

/// Per-block store of the last computed output of every token, plus the
/// bookkeeping the selection score needs: the softmax normaliser from the
/// token's last self-attention, its input values at the last two computed
/// timesteps, and how many consecutive rounds it has been skipped.
class BlockCache {
 public:
  BlockCache() = default;

  BlockCache(std::size_t n_tokens, std::size_t channels)
      : last_output_(n_tokens, channels),
        prev_value_(n_tokens, channels),
        curr_value_(n_tokens, channels),
        last_lse_(n_tokens, 0.0),
        staleness_(n_tokens, 0),
        computed_(n_tokens, 0),
        initialized_(true) {}

  bool initialized() const noexcept { return initialized_; }
  std::size_t n_tokens() const noexcept { return staleness_.size(); }
  std::size_t channels() const noexcept { return last_output_.cols(); }

  const Matrix& last_output() const noexcept { return last_output_; }
  const Matrix& previous_values() const noexcept { return prev_value_; }
  const Matrix& current_values() const noexcept { return curr_value_; }

  /// Sum-exp (non-log) score from the token's last self-attention row.
  double lse(std::size_t token) const { return last_lse_.at(token); }
  std::uint64_t staleness(std::size_t token) const { return staleness_.at(token); }
  /// Number of computed timesteps seen so far, saturating at 2.
  int computed_count(std::size_t token) const { return computed_.at(token); }
  bool valid(std::size_t token) const { return computed_.at(token) > 0; }

  std::uint64_t max_staleness() const noexcept {
    return staleness_.empty() ? 0 : *std::max_element(staleness_.begin(), staleness_.end());
  }

 private:
  friend void update_cache(BlockCache&, const SelectionMask&, const Matrix&, std::span<const double>,
                           const Matrix&);
  friend nlohmann::json cache_to_json(const BlockCache&);
  friend BlockCache cache_from_json(const nlohmann::json&);

  Matrix last_output_;
  Matrix prev_value_;
  Matrix curr_value_;
  std::vector<double> last_lse_;
  std::vector<std::uint64_t> staleness_;
  std::vector<int> computed_;
  bool initialized_ = false;
};

namespace detail {

inline double mean_difference(std::span<const double> a, std::span<const double> b, DeltaMetric metric) {
  double acc = 0.0;
  for (std::size_t c = 0; c < a.size(); ++c) {
    const double diff = b[c] - a[c];
    acc += metric == DeltaMetric::mean_abs ? std::abs(diff) : diff * diff;
  }
  return a.empty() ? 0.0 : acc / static_cast<double>(a.size());
}

}  // namespace detail

/// Value change of `token` between its last two computed timesteps, averaged
/// over channels. Returns +inf until the token has two computed timesteps.
inline double compute_delta(const BlockCache& cache, std::size_t token,
                            DeltaMetric metric = DeltaMetric::mean_abs) {
  if (token >= cache.n_tokens()) throw DomainError("compute_delta: token out of range");
  if (cache.computed_count(token) < 2) return std::numeric_limits<double>::infinity();
  return detail::mean_difference(cache.previous_values().row(token), cache.current_values().row(token), metric);
}

/// Change between `current` (the token's input right now) and its input at
/// the last computed timestep. +inf if the token has never been computed.
inline double compute_live_delta(const BlockCache& cache, std::size_t token, std::span<const double> current,
                                 DeltaMetric metric = DeltaMetric::mean_abs) {
  if (token >= cache.n_tokens()) throw DomainError("compute_live_delta: token out of range");
  if (current.size() != cache.channels()) throw ShapeError("compute_live_delta: channel mismatch");
  if (cache.computed_count(token) < 1) return std::numeric_limits<double>::infinity();
  return detail::mean_difference(cache.current_values().row(token), current, metric);
}

/// total = w_alpha * S_LSE * delta + w_beta * exp(n). An infinite significance
/// (cold token) forces an infinite total regardless of the weights.
inline TokenScore make_score(double sum_exp, double delta, std::uint64_t skipped, const SelectionConfig& cfg) {
  TokenScore s;
  s.significance = std::isinf(delta) ? delta : sum_exp * delta;
  s.penalty = std::exp(static_cast<double>(skipped));
  if (std::isinf(s.significance)) {
    s.total = std::numeric_limits<double>::infinity();
  } else {
    s.total = cfg.w_alpha * s.significance + cfg.w_beta * s.penalty;
  }
  return s;
}

/// Scores from the cache alone: delta over the last two computed timesteps.
inline std::vector<TokenScore> score_tokens(const BlockCache& cache, const SelectionConfig& cfg) {
  if (!cache.initialized()) throw StateError("score_tokens: cache not initialized");
  std::vector<TokenScore> out(cache.n_tokens());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = make_score(cache.lse(i), compute_delta(cache, i, cfg.delta_metric), cache.staleness(i), cfg);
  }
  return out;
}

/// Scores for the block about to run on `inputs`; `cfg.delta_source` picks
/// the delta definition.
inline std::vector<TokenScore> score_tokens(const BlockCache& cache, const SelectionConfig& cfg,
                                            const TokenGrid& inputs) {
  if (cfg.delta_source == DeltaSource::pair) return score_tokens(cache, cfg);
  if (!cache.initialized()) throw StateError("score_tokens: cache not initialized");
  if (inputs.rows() != cache.n_tokens()) throw ShapeError("score_tokens: input rows != cache tokens");
  std::vector<TokenScore> out(cache.n_tokens());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double delta = compute_live_delta(cache, i, inputs.row(i), cfg.delta_metric);
    out[i] = make_score(cache.lse(i), delta, cache.staleness(i), cfg);
  }
  return out;
}

/// Tokens computed under budget fraction theta: 0 when theta is 0, otherwise
/// max(1, round(theta * N)) with halves rounded up.
inline std::size_t budget_token_count(double theta, std::size_t n_tokens) {
  if (!(theta >= 0.0 && theta <= 1.0)) throw DomainError("budget fraction must lie in [0, 1]");
  if (theta == 0.0 || n_tokens == 0) return 0;
  const auto k = static_cast<std::size_t>(std::llround(theta * static_cast<double>(n_tokens)));
  return std::clamp<std::size_t>(k, 1, n_tokens);
}

/// The k highest totals (ties to the lower index), returned ascending.
inline SelectionMask select_top(std::span<const double> totals, double theta, std::size_t n_tokens) {
  if (totals.size() != n_tokens) throw ShapeError("select_top: score count != n_tokens");
  const std::size_t k = budget_token_count(theta, n_tokens);
  std::vector<std::size_t> order(n_tokens);
  std::iota(order.begin(), order.end(), std::size_t{0});
  auto better = [&](std::size_t a, std::size_t b) {
    if (totals[a] != totals[b]) return totals[a] > totals[b];
    return a < b;
  };
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(), better);
  order.resize(k);
  std::sort(order.begin(), order.end());
  return SelectionMask(std::move(order), n_tokens);
}

inline SelectionMask select_top(std::span<const TokenScore> scores, double theta, std::size_t n_tokens) {
  std::vector<double> totals(scores.size());
  std::transform(scores.begin(), scores.end(), totals.begin(), [](const TokenScore& s) { return s.total; });
  return select_top(std::span<const double>(totals), theta, n_tokens);
}

/// Writes computed rows back and advances every skip counter.
///
/// `outputs`, `sum_exp` and `token_values` are aligned with `mask` order.
/// Masked tokens reset n to 0 and shift their (previous, current) value pair;
/// all other tokens keep their cached data and increment n.
inline void update_cache(BlockCache& cache, const SelectionMask& mask, const Matrix& outputs,
                         std::span<const double> sum_exp, const Matrix& token_values) {
  if (!cache.initialized()) throw StateError("update_cache: cache not initialized");
  if (mask.n_tokens() != cache.n_tokens()) throw ShapeError("update_cache: mask universe != cache size");
  if (outputs.rows() != mask.size() || sum_exp.size() != mask.size() || token_values.rows() != mask.size()) {
    throw ShapeError("update_cache: rows not aligned with mask");
  }
  if (mask.size() > 0 && (outputs.cols() != cache.channels() || token_values.cols() != cache.channels())) {
    throw ShapeError("update_cache: channel mismatch");
  }
  for (auto& n : cache.staleness_) ++n;
  for (std::size_t r = 0; r < mask.size(); ++r) {
    const std::size_t i = mask[r];
    std::copy_n(outputs.row(r).begin(), cache.channels(), cache.last_output_.row(i).begin());
    std::copy_n(cache.curr_value_.row(i).begin(), cache.channels(), cache.prev_value_.row(i).begin());
    std::copy_n(token_values.row(r).begin(), cache.channels(), cache.curr_value_.row(i).begin());
    cache.last_lse_[i] = sum_exp[r];
    cache.staleness_[i] = 0;
    cache.computed_[i] = std::min(cache.computed_[i] + 1, 2);
  }
}

/// Cached output rows for `tokens`, verbatim.
inline Matrix read_cached(const BlockCache& cache, std::span<const std::size_t> tokens) {
  if (!cache.initialized()) throw StateError("read_cached: cache not initialized");
  for (std::size_t t : tokens) {
    if (t >= cache.n_tokens()) throw DomainError("read_cached: token out of range");
    if (!cache.valid(t)) throw StateError("read_cached: token " + std::to_string(t) + " has never been computed");
  }
  return gather_rows(cache.last_output(), tokens);
}

namespace detail {

inline nlohmann::json matrix_to_json(const Matrix& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (std::size_t r = 0; r < m.rows(); ++r) rows.push_back(std::vector<double>(m.row(r).begin(), m.row(r).end()));
  return rows;
}

inline Matrix matrix_from_json(const nlohmann::json& j, std::size_t rows, std::size_t cols) {
  if (!j.is_array() || j.size() != rows) throw ShapeError("cache json: row count mismatch");
  std::vector<double> data;
  data.reserve(rows * cols);
  for (const auto& row : j) {
    if (!row.is_array() || row.size() != cols) throw ShapeError("cache json: column count mismatch");
    for (const auto& v : row) data.push_back(v.get<double>());
  }
  return Matrix(rows, cols, std::move(data));
}

}  // namespace detail

/// Textual (JSON) dump of a cache, used for test fixtures.
inline nlohmann::json cache_to_json(const BlockCache& cache) {
  nlohmann::json j;
  j["n_tokens"] = cache.n_tokens();
  j["channels"] = cache.channels();
  if (!cache.initialized()) {
    j["initialized"] = false;
    return j;
  }
  j["initialized"] = true;
  j["sum_exp"] = cache.last_lse_;
  j["staleness"] = cache.staleness_;
  j["computed"] = cache.computed_;
  j["last_output"] = detail::matrix_to_json(cache.last_output_);
  j["previous_values"] = detail::matrix_to_json(cache.prev_value_);
  j["current_values"] = detail::matrix_to_json(cache.curr_value_);
  return j;
}

inline BlockCache cache_from_json(const nlohmann::json& j) {
  if (!j.value("initialized", false)) return BlockCache{};
  const auto n = j.at("n_tokens").get<std::size_t>();
  const auto d = j.at("channels").get<std::size_t>();
  BlockCache cache(n, d);
  cache.last_lse_ = j.at("sum_exp").get<std::vector<double>>();
  cache.staleness_ = j.at("staleness").get<std::vector<std::uint64_t>>();
  cache.computed_ = j.at("computed").get<std::vector<int>>();
  if (cache.last_lse_.size() != n || cache.staleness_.size() != n || cache.computed_.size() != n) {
    throw ShapeError("cache json: per-token arrays have wrong length");
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (cache.computed_[i] < 0 || cache.computed_[i] > 2) throw DomainError("cache json: computed count out of range");
    if (!std::isfinite(cache.last_lse_[i])) throw DomainError("cache json: non-finite sum_exp");
  }
  cache.last_output_ = detail::matrix_from_json(j.at("last_output"), n, d);
  cache.prev_value_ = detail::matrix_from_json(j.at("previous_values"), n, d);
  cache.curr_value_ = detail::matrix_from_json(j.at("current_values"), n, d);
  return cache;
}

}  // namespace astraea
