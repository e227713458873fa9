#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <limits>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "astraea/errors.hpp"

namespace astraea {

/// Dense row-major matrix of doubles.
///
/// Every constructor that accepts caller data rejects non-finite entries.
/// A TokenGrid (N tokens x d channels) is a Matrix with one token per row.
class Matrix {
 public:
  Matrix() = default;

  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {
    if (!std::isfinite(fill)) throw DomainError("Matrix: non-finite fill value");
  }

  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
      throw ShapeError("Matrix: data length " + std::to_string(data_.size()) + " != " +
                       std::to_string(rows_) + "x" + std::to_string(cols_));
    }
    for (double v : data_) {
      if (!std::isfinite(v)) throw DomainError("Matrix: non-finite entry");
    }
  }

  static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r == 0 ? 0 : rows.begin()->size();
    std::vector<double> data;
    data.reserve(r * c);
    for (const auto& row : rows) {
      if (row.size() != c) throw ShapeError("Matrix::from_rows: ragged rows");
      data.insert(data.end(), row.begin(), row.end());
    }
    return Matrix(r, c, std::move(data));
  }

  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const noexcept {
    return {data_.data() + r * cols_, cols_};
  }

  std::span<const double> data() const noexcept { return data_; }
  std::span<double> data() noexcept { return data_; }

  bool all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
  }

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

using TokenGrid = Matrix;

/// Instrumented multiply-add counter.
///
/// While an instance is alive on a thread, every `matmul` on that thread adds
/// 2*m*n*k to it. Scopes nest; every enclosing counter receives the counts.
class FlopCounter {
 public:
  FlopCounter() : previous_(active()) { active() = this; }
  ~FlopCounter() { active() = previous_; }
  FlopCounter(const FlopCounter&) = delete;
  FlopCounter& operator=(const FlopCounter&) = delete;

  std::uint64_t flops() const noexcept { return flops_; }
  std::uint64_t matmuls() const noexcept { return matmuls_; }
  void reset() noexcept { flops_ = matmuls_ = 0; }

  static void record(std::size_t m, std::size_t n, std::size_t k) noexcept {
    for (FlopCounter* c = active(); c != nullptr; c = c->previous_) {
      c->flops_ += 2ULL * m * n * k;
      ++c->matmuls_;
    }
  }

 private:
  static FlopCounter*& active() noexcept {
    thread_local FlopCounter* current = nullptr;
    return current;
  }

  FlopCounter* previous_;
  std::uint64_t flops_ = 0;
  std::uint64_t matmuls_ = 0;
};

/// C = A * B. For each output entry the products are accumulated in
/// increasing inner index, starting from 0.0.
inline Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: " + std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                     " * " + std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
  }
  const std::size_t m = a.rows();
  const std::size_t k = a.cols();
  const std::size_t n = b.cols();
  Matrix c(m, n);
  for (std::size_t i = 0; i < m; ++i) {
    auto out = c.row(i);
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = a(i, p);
      auto brow = b.row(p);
      for (std::size_t j = 0; j < n; ++j) out[j] += aip * brow[j];
    }
  }
  FlopCounter::record(m, n, k);
  return c;
}

inline Matrix transpose(const Matrix& a) {
  Matrix t(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
  return t;
}

/// Rows of `a` at `indices`, in the given order.
inline Matrix gather_rows(const Matrix& a, std::span<const std::size_t> indices) {
  Matrix out(indices.size(), a.cols());
  for (std::size_t r = 0; r < indices.size(); ++r) {
    if (indices[r] >= a.rows()) throw ShapeError("gather_rows: index out of range");
    std::copy_n(a.row(indices[r]).begin(), a.cols(), out.row(r).begin());
  }
  return out;
}

/// Elementwise a + scale * b.
inline Matrix add_scaled(const Matrix& a, const Matrix& b, double scale = 1.0) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw ShapeError("add_scaled: shape mismatch");
  Matrix out = a;
  auto o = out.data();
  auto bd = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] += scale * bd[i];
  return out;
}

/// Row softmax together with the per-row normaliser.
struct RowSoftmax {
  Matrix probs;
  std::vector<double> log_sum_exp;

  /// Sum_k exp(a_ik) for every row: the raw (non-log) LSE score.
  std::vector<double> sum_exp() const {
    std::vector<double> out(log_sum_exp.size());
    std::transform(log_sum_exp.begin(), log_sum_exp.end(), out.begin(),
                   [](double v) { return std::exp(v); });
    return out;
  }
};

/// Numerically stable row softmax (max-shift) that also returns each row's
/// log-sum-exp, which is a free byproduct of the normalisation.
inline RowSoftmax softmax_rows_with_lse(const Matrix& a) {
  RowSoftmax out{Matrix(a.rows(), a.cols()), std::vector<double>(a.rows(), 0.0)};
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto in = a.row(i);
    auto p = out.probs.row(i);
    if (in.empty()) {
      out.log_sum_exp[i] = -std::numeric_limits<double>::infinity();
      continue;
    }
    const double shift = *std::max_element(in.begin(), in.end());
    double sum = 0.0;
    for (std::size_t j = 0; j < in.size(); ++j) {
      p[j] = std::exp(in[j] - shift);
      sum += p[j];
    }
    for (double& v : p) v /= sum;
    out.log_sum_exp[i] = shift + std::log(sum);
  }
  return out;
}

/// SplitMix64 generator.
///
///   state += 0x9E3779B97F4A7C15
///   z = state
///   z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
///   z = (z ^ (z >> 27)) * 0x94D049BB133111EB
///   return z ^ (z >> 31)
///
/// All derived draws below are defined in terms of `next_u64` only, so the
/// streams are identical on every platform with IEEE doubles.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) noexcept : state_(seed) {}

  std::uint64_t next_u64() noexcept {
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  std::uint64_t state() const noexcept { return state_; }

 private:
  std::uint64_t state_;
};

/// Any generator exposing `std::uint64_t next_u64()`.
template <typename G>
concept BitSource = requires(G g) {
  { g.next_u64() } -> std::convertible_to<std::uint64_t>;
};

/// Uniform double in [0, 1) from the top 53 bits.
template <BitSource G>
double rng_unit(G& rng) {
  return static_cast<double>(rng.next_u64() >> 11) * 0x1.0p-53;
}

template <BitSource G>
double rng_uniform(G& rng, double lo, double hi) {
  if (!(lo <= hi)) throw DomainError("rng_uniform: lo > hi");
  const double u = rng_unit(rng);
  const double v = lo + (hi - lo) * u;
  return v < hi ? v : lo;
}

/// Uniform index in [0, n) by rejection on the top of the 64-bit range.
template <BitSource G>
std::size_t rng_choice(G& rng, std::size_t n) {
  if (n == 0) throw DomainError("rng_choice: n must be >= 1");
  const std::uint64_t bound = static_cast<std::uint64_t>(n);
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % bound;
  std::uint64_t x;
  do {
    x = rng.next_u64();
  } while (x >= limit);
  return static_cast<std::size_t>(x % bound);
}

/// Standard normal draw via Box-Muller (two uniforms per draw, no caching).
template <BitSource G>
double rng_gauss(G& rng) {
  const double u1 = 1.0 - rng_unit(rng);  // (0, 1]
  const double u2 = rng_unit(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

inline Matrix random_gaussian(std::size_t rows, std::size_t cols, Rng& rng, double scale = 1.0) {
  Matrix m(rows, cols);
  for (double& v : m.data()) v = scale * rng_gauss(rng);
  return m;
}

/// Derives an independent seed from a base seed and a stream tag.
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t tag) noexcept {
  Rng r(base ^ (tag * 0xD1B54A32D192ED03ULL));
  r.next_u64();
  return r.next_u64();
}

}  // namespace astraea
