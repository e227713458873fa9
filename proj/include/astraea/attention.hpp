#pragma once

#include <cmath>
#include <cstddef>
#include <numeric>
#include <string>
#include <vector>

#include "astraea/numerics.hpp"

namespace astraea {

/// Single-head projection weights, each d x d.
struct AttentionWeights {
  Matrix w_q, w_k, w_v, w_o;

  std::size_t dim() const noexcept { return w_q.rows(); }

  void validate() const {
    const std::size_t d = dim();
    for (const Matrix* m : {&w_q, &w_k, &w_v, &w_o}) {
      if (m->rows() != d || m->cols() != d) throw ShapeError("AttentionWeights: projections must be d x d");
    }
  }

  static AttentionWeights random(std::size_t d, Rng& rng, double scale) {
    AttentionWeights w;
    w.w_q = random_gaussian(d, d, rng, scale);
    w.w_k = random_gaussian(d, d, rng, scale);
    w.w_v = random_gaussian(d, d, rng, scale);
    w.w_o = random_gaussian(d, d, rng, scale);
    return w;
  }
};

/// Two-layer MLP weights: w1 is d x 4d, w2 is 4d x d.
struct MlpWeights {
  Matrix w1, w2;

  std::size_t dim() const noexcept { return w1.rows(); }

  void validate() const {
    const std::size_t d = dim();
    if (w1.cols() != 4 * d || w2.rows() != 4 * d || w2.cols() != d) {
      throw ShapeError("MlpWeights: expected d x 4d and 4d x d");
    }
  }

  static MlpWeights random(std::size_t d, Rng& rng, double scale) {
    MlpWeights w;
    w.w1 = random_gaussian(d, 4 * d, rng, scale);
    w.w2 = random_gaussian(4 * d, d, rng, scale);
    return w;
  }
};

/// Strictly increasing set of token indices in [0, n_tokens).
class SelectionMask {
 public:
  SelectionMask() = default;

  SelectionMask(std::vector<std::size_t> indices, std::size_t n_tokens)
      : indices_(std::move(indices)), n_tokens_(n_tokens) {
    for (std::size_t i = 0; i < indices_.size(); ++i) {
      if (indices_[i] >= n_tokens_) throw DomainError("SelectionMask: index out of range");
      if (i > 0 && indices_[i] <= indices_[i - 1]) {
        throw DomainError("SelectionMask: indices must be strictly increasing");
      }
    }
  }

  static SelectionMask all(std::size_t n_tokens) {
    std::vector<std::size_t> idx(n_tokens);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    return SelectionMask(std::move(idx), n_tokens);
  }

  static SelectionMask none(std::size_t n_tokens) { return SelectionMask({}, n_tokens); }

  std::size_t size() const noexcept { return indices_.size(); }
  bool empty() const noexcept { return indices_.empty(); }
  std::size_t n_tokens() const noexcept { return n_tokens_; }
  const std::vector<std::size_t>& indices() const noexcept { return indices_; }
  std::size_t operator[](std::size_t i) const noexcept { return indices_[i]; }

  bool contains(std::size_t token) const {
    return std::binary_search(indices_.begin(), indices_.end(), token);
  }

  /// Tokens in [0, n_tokens) that are not in the mask, ascending.
  std::vector<std::size_t> complement() const {
    std::vector<std::size_t> out;
    out.reserve(n_tokens_ - indices_.size());
    std::size_t j = 0;
    for (std::size_t t = 0; t < n_tokens_; ++t) {
      if (j < indices_.size() && indices_[j] == t) {
        ++j;
      } else {
        out.push_back(t);
      }
    }
    return out;
  }

  friend bool operator==(const SelectionMask&, const SelectionMask&) = default;

 private:
  std::vector<std::size_t> indices_;
  std::size_t n_tokens_ = 0;
};

/// Records the largest attention map materialised on this thread while alive.
class AttentionMapProbe {
 public:
  AttentionMapProbe() : previous_(active()) { active() = this; }
  ~AttentionMapProbe() { active() = previous_; }
  AttentionMapProbe(const AttentionMapProbe&) = delete;
  AttentionMapProbe& operator=(const AttentionMapProbe&) = delete;

  std::size_t peak_elements() const noexcept { return peak_; }
  std::size_t allocations() const noexcept { return count_; }

  static void record(std::size_t rows, std::size_t cols) noexcept {
    for (AttentionMapProbe* p = active(); p != nullptr; p = p->previous_) {
      p->peak_ = std::max(p->peak_, rows * cols);
      ++p->count_;
    }
  }

 private:
  static AttentionMapProbe*& active() noexcept {
    thread_local AttentionMapProbe* current = nullptr;
    return current;
  }

  AttentionMapProbe* previous_;
  std::size_t peak_ = 0;
  std::size_t count_ = 0;
};

/// Attention rows for a token subset plus the softmax normaliser of each row.
/// `rows(r)` and `sum_exp[r]` belong to token `mask[r]`.
struct AttentionOutput {
  Matrix rows;
  std::vector<double> sum_exp;
  std::vector<double> log_sum_exp;
};

namespace detail {

inline void check_grid(const Matrix& x, std::size_t d, const char* who) {
  if (x.rows() == 0) throw ShapeError(std::string(who) + ": grid has no tokens");
  if (x.cols() != d) {
    throw ShapeError(std::string(who) + ": grid has " + std::to_string(x.cols()) +
                     " channels, weights expect " + std::to_string(d));
  }
}

inline void check_mask(const SelectionMask& mask, std::size_t n, const char* who) {
  if (mask.n_tokens() != n) throw ShapeError(std::string(who) + ": mask universe != token count");
}

// softmax(q k^T / sqrt(d)) v w_o for the given query rows against full keys/values.
inline AttentionOutput attend(const Matrix& q, const Matrix& k, const Matrix& v, const Matrix& w_o) {
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(q.cols()));
  Matrix scores = matmul(q, transpose(k));
  AttentionMapProbe::record(scores.rows(), scores.cols());
  for (double& s : scores.data()) s *= inv_sqrt_d;
  RowSoftmax sm = softmax_rows_with_lse(scores);
  Matrix out = matmul(matmul(sm.probs, v), w_o);
  auto sum_exp = sm.sum_exp();
  return {std::move(out), std::move(sum_exp), std::move(sm.log_sum_exp)};
}

}  // namespace detail

/// Query-row sparse self-attention.
///
/// Queries are projected only for the masked rows; keys and values are
/// projected for all N tokens, so every produced row equals the dense row.
inline AttentionOutput self_attention_sparse(const TokenGrid& x, const AttentionWeights& w,
                                             const SelectionMask& mask) {
  w.validate();
  detail::check_grid(x, w.dim(), "self_attention_sparse");
  detail::check_mask(mask, x.rows(), "self_attention_sparse");
  if (mask.empty()) throw DomainError("self_attention_sparse: empty mask (serve all rows from cache)");
  const Matrix q = matmul(gather_rows(x, mask.indices()), w.w_q);
  const Matrix k = matmul(x, w.w_k);
  const Matrix v = matmul(x, w.w_v);
  return detail::attend(q, k, v, w.w_o);
}

inline AttentionOutput self_attention_dense(const TokenGrid& x, const AttentionWeights& w) {
  w.validate();
  detail::check_grid(x, w.dim(), "self_attention_dense");
  const Matrix q = matmul(x, w.w_q);
  const Matrix k = matmul(x, w.w_k);
  const Matrix v = matmul(x, w.w_v);
  return detail::attend(q, k, v, w.w_o);
}

/// Cross-attention from the masked rows of `x` onto every context token.
/// Returns |mask| rows; an empty mask yields an empty result.
inline Matrix cross_attention(const TokenGrid& x, const TokenGrid& ctx, const AttentionWeights& w,
                              const SelectionMask& mask) {
  w.validate();
  detail::check_grid(x, w.dim(), "cross_attention");
  detail::check_grid(ctx, w.dim(), "cross_attention(context)");
  detail::check_mask(mask, x.rows(), "cross_attention");
  if (mask.empty()) return Matrix(0, w.dim());
  const Matrix q = matmul(gather_rows(x, mask.indices()), w.w_q);
  const Matrix k = matmul(ctx, w.w_k);
  const Matrix v = matmul(ctx, w.w_v);
  return detail::attend(q, k, v, w.w_o).rows;
}

/// GELU, tanh approximation:
///   0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))
inline double gelu(double x) {
  constexpr double kSqrt2OverPi = 0.7978845608028654;
  constexpr double kCubic = 0.044715;
  return 0.5 * x * (1.0 + std::tanh(kSqrt2OverPi * (x + kCubic * x * x * x)));
}

/// Per-token w2 * gelu(w1 * x_i) for the masked rows (no biases).
inline Matrix mlp(const TokenGrid& x, const MlpWeights& w, const SelectionMask& mask) {
  w.validate();
  detail::check_grid(x, w.dim(), "mlp");
  detail::check_mask(mask, x.rows(), "mlp");
  if (mask.empty()) return Matrix(0, w.dim());
  Matrix hidden = matmul(gather_rows(x, mask.indices()), w.w1);
  for (double& h : hidden.data()) h = gelu(h);
  return matmul(hidden, w.w2);
}

}  // namespace astraea
