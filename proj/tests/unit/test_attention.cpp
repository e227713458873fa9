#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "astraea/attention.hpp"
#include "oracles.hpp"

using namespace astraea;

namespace {

SelectionMask random_mask(std::size_t n, Rng& rng) {
  std::vector<std::size_t> idx;
  for (std::size_t t = 0; t < n; ++t)
    if (rng.next_u64() & 1) idx.push_back(t);
  if (idx.empty()) idx.push_back(oracle::draw(rng, 0, n - 1));
  return SelectionMask(idx, n);
}

}  // namespace

TEST(SelectionMaskType, ValidatesIndices) {
  EXPECT_THROW(SelectionMask({2, 1}, 4), DomainError);
  EXPECT_THROW(SelectionMask({1, 1}, 4), DomainError);
  EXPECT_THROW(SelectionMask({4}, 4), DomainError);
  const SelectionMask m({0, 2}, 4);
  EXPECT_TRUE(m.contains(2));
  EXPECT_FALSE(m.contains(1));
  EXPECT_EQ(m.complement(), (std::vector<std::size_t>{1, 3}));
  EXPECT_EQ(SelectionMask::all(3).size(), 3u);
  EXPECT_TRUE(SelectionMask::none(3).empty());
}

TEST(SelfAttention, SingleTokenReturnsValueProjection) {
  Rng rng(1);
  const std::size_t d = 5;
  const Matrix x = oracle::gaussian(1, d, rng);
  const AttentionWeights w = AttentionWeights::random(d, rng, 0.5);
  const AttentionOutput out = self_attention_dense(x, w);
  const Matrix expected = oracle::naive_matmul(oracle::naive_matmul(x, w.w_v), w.w_o);
  for (std::size_t c = 0; c < d; ++c) EXPECT_NEAR(out.rows(0, c), expected(0, c), 1e-12);
}

TEST(SelfAttention, TwoTokenHandExample) {
  // Q = K = [[1],[0]], V = [[2],[4]], d_k = 1, realised in two channels with
  // x = I so that each projection picks out the wanted column.
  const double e = std::exp(1.0);
  const double expected = 2.0 * e / (e + 1.0) + 4.0 / (e + 1.0);
  EXPECT_NEAR(expected, 2.5379, 1e-4);
  const Matrix k1 = Matrix::from_rows({{1}, {0}});
  const Matrix v1 = Matrix::from_rows({{2}, {4}});
  EXPECT_NEAR(oracle::attention_row({1.0}, k1, v1, Matrix::identity(1))[0], expected, 1e-12);

  const Matrix x = Matrix::identity(2);
  AttentionWeights w;
  w.w_q = Matrix::from_rows({{std::sqrt(2.0), 0}, {0, 0}});  // undoes the 1/sqrt(2) score scale
  w.w_k = Matrix::from_rows({{1, 0}, {0, 0}});
  w.w_v = Matrix::from_rows({{2, 0}, {4, 0}});
  w.w_o = Matrix::identity(2);
  const AttentionOutput dense = self_attention_dense(x, w);
  EXPECT_NEAR(dense.rows(0, 0), expected, 1e-12);
  const AttentionOutput sparse = self_attention_sparse(x, w, SelectionMask({0}, 2));
  ASSERT_EQ(sparse.rows.rows(), 1u);
  EXPECT_NEAR(sparse.rows(0, 0), expected, 1e-12);
  EXPECT_EQ(sparse.rows(0, 0), dense.rows(0, 0));
}

TEST(SelfAttention, SumExpMatchesDirectExponentialSum) {
  Rng rng(3);
  const std::size_t n = 6, d = 4;
  const Matrix x = oracle::gaussian(n, d, rng);
  const AttentionWeights w = AttentionWeights::random(d, rng, 0.5);
  const AttentionOutput out = self_attention_dense(x, w);
  const Matrix k = oracle::project_all(x, w.w_k), v = oracle::project_all(x, w.w_v);
  for (std::size_t i = 0; i < n; ++i) {
    double sum_exp = 0.0;
    const auto row = oracle::attention_row(oracle::project_row(x, i, w.w_q), k, v, w.w_o, &sum_exp);
    EXPECT_NEAR(out.sum_exp[i], sum_exp, 1e-10 * sum_exp);
    EXPECT_NEAR(out.log_sum_exp[i], std::log(sum_exp), 1e-12);
    for (std::size_t c = 0; c < d; ++c) EXPECT_NEAR(out.rows(i, c), row[c], 1e-12);
  }
}

TEST(SelfAttention, PermutingTokensPermutesOutputs) {
  Rng rng(4);
  const std::size_t n = 7, d = 3;
  const Matrix x = oracle::gaussian(n, d, rng);
  const AttentionWeights w = AttentionWeights::random(d, rng, 0.6);
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  std::reverse(perm.begin(), perm.end());
  std::swap(perm[1], perm[4]);
  const Matrix px = gather_rows(x, perm);
  const AttentionOutput a = self_attention_dense(x, w), b = self_attention_dense(px, w);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < d; ++c) EXPECT_NEAR(b.rows(i, c), a.rows(perm[i], c), 1e-12);
}

TEST(SparseSelfAttention, FullMaskEqualsDenseExactly) {
  Rng rng(5);
  const Matrix x = oracle::gaussian(9, 6, rng);
  const AttentionWeights w = AttentionWeights::random(6, rng, 0.4);
  const AttentionOutput dense = self_attention_dense(x, w);
  const AttentionOutput sparse = self_attention_sparse(x, w, SelectionMask::all(9));
  EXPECT_EQ(dense.rows, sparse.rows);
  EXPECT_EQ(dense.sum_exp, sparse.sum_exp);
}

TEST(SparseSelfAttention, PropertyRowsMatchDense) {
  Rng rng(6);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = oracle::draw(rng, 1, 64), d = oracle::draw(rng, 1, 32);
    const Matrix x = oracle::gaussian(n, d, rng);
    const AttentionWeights w = AttentionWeights::random(d, rng, 1.0 / std::sqrt(static_cast<double>(d)));
    const SelectionMask mask = random_mask(n, rng);
    const AttentionOutput dense = self_attention_dense(x, w);
    const AttentionOutput sparse = self_attention_sparse(x, w, mask);
    ASSERT_EQ(sparse.rows.rows(), mask.size());
    for (std::size_t i = 0; i < mask.size(); ++i) {
      for (std::size_t c = 0; c < d; ++c) ASSERT_NEAR(sparse.rows(i, c), dense.rows(mask[i], c), 1e-12);
      ASSERT_EQ(sparse.sum_exp[i], dense.sum_exp[mask[i]]);
    }
  }
}

TEST(SparseSelfAttention, EmptyMaskIsAnError) {
  Rng rng(7);
  const Matrix x = oracle::gaussian(3, 2, rng);
  EXPECT_THROW(self_attention_sparse(x, AttentionWeights::random(2, rng, 1.0), SelectionMask::none(3)), DomainError);
}

TEST(SparseSelfAttention, MaskUniverseMustMatch) {
  Rng rng(8);
  const Matrix x = oracle::gaussian(3, 2, rng);
  EXPECT_THROW(self_attention_sparse(x, AttentionWeights::random(2, rng, 1.0), SelectionMask::all(4)), ShapeError);
}

TEST(SparseSelfAttention, ScoreMatrixIsMaskByN) {
  Rng rng(9);
  const std::size_t n = 20, d = 4;
  const Matrix x = oracle::gaussian(n, d, rng);
  const AttentionWeights w = AttentionWeights::random(d, rng, 0.5);
  const SelectionMask mask({1, 5, 6}, n);
  AttentionMapProbe probe;
  (void)self_attention_sparse(x, w, mask);
  EXPECT_EQ(probe.peak_elements(), mask.size() * n);
  EXPECT_EQ(probe.allocations(), 1u);
}

TEST(SparseSelfAttention, ScoreWorkScalesWithMaskSize) {
  Rng rng(10);
  const std::size_t n = 16, d = 4;
  const Matrix x = oracle::gaussian(n, d, rng);
  const AttentionWeights w = AttentionWeights::random(d, rng, 0.5);
  auto cost = [&](std::size_t m) {
    std::vector<std::size_t> idx(m);
    std::iota(idx.begin(), idx.end(), 0);
    FlopCounter counter;
    (void)self_attention_sparse(x, w, SelectionMask(idx, n));
    return counter.flops();
  };
  // Cost is affine in |m| with slope 2dd (Q) + 2nd (QK^T) + 2nd (PV) + 2dd (out).
  const std::uint64_t slope = 4 * d * d + 4 * n * d;
  EXPECT_EQ(cost(2) - cost(1), slope);
  EXPECT_EQ(cost(9) - cost(4), 5 * slope);
}

TEST(CrossAttention, SingleContextTokenGivesValueProjection) {
  Rng rng(11);
  const std::size_t n = 5, d = 3;
  const Matrix x = oracle::gaussian(n, d, rng), ctx = oracle::gaussian(1, d, rng);
  const AttentionWeights w = AttentionWeights::random(d, rng, 0.7);
  const Matrix out = cross_attention(x, ctx, w, SelectionMask({0, 3}, n));
  const Matrix expected = oracle::naive_matmul(oracle::naive_matmul(ctx, w.w_v), w.w_o);
  ASSERT_EQ(out.rows(), 2u);
  for (std::size_t r = 0; r < 2; ++r)
    for (std::size_t c = 0; c < d; ++c) EXPECT_NEAR(out(r, c), expected(0, c), 1e-12);
}

TEST(CrossAttention, RandomInstancesMatchOracle) {
  Rng rng(12);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t n = oracle::draw(rng, 1, 20), m = oracle::draw(rng, 1, 10), d = oracle::draw(rng, 1, 8);
    const Matrix x = oracle::gaussian(n, d, rng), ctx = oracle::gaussian(m, d, rng);
    const AttentionWeights w = AttentionWeights::random(d, rng, 0.5);
    const SelectionMask mask = random_mask(n, rng);
    const Matrix out = cross_attention(x, ctx, w, mask);
    const Matrix full = cross_attention(x, ctx, w, SelectionMask::all(n));
    const Matrix k = oracle::project_all(ctx, w.w_k), v = oracle::project_all(ctx, w.w_v);
    for (std::size_t i = 0; i < mask.size(); ++i) {
      const auto row = oracle::attention_row(oracle::project_row(x, mask[i], w.w_q), k, v, w.w_o);
      for (std::size_t c = 0; c < d; ++c) {
        ASSERT_NEAR(out(i, c), row[c], 1e-12);
        ASSERT_EQ(out(i, c), full(mask[i], c));
      }
    }
  }
}

TEST(CrossAttention, EmptyMaskGivesNoRows) {
  Rng rng(13);
  const Matrix out = cross_attention(oracle::gaussian(3, 2, rng), oracle::gaussian(2, 2, rng),
                                     AttentionWeights::random(2, rng, 1.0), SelectionMask::none(3));
  EXPECT_EQ(out.rows(), 0u);
}

TEST(Mlp, ZeroInputGivesZeroOutput) {
  Rng rng(14);
  const Matrix out = mlp(Matrix(4, 3), MlpWeights::random(3, rng, 1.0), SelectionMask::all(4));
  for (double v : out.data()) EXPECT_EQ(v, 0.0);
}

TEST(Mlp, MatchesPerTokenLoopOracle) {
  Rng rng(15);
  const std::size_t n = 6, d = 5;
  const Matrix x = oracle::gaussian(n, d, rng);
  const MlpWeights w = MlpWeights::random(d, rng, 0.5);
  const Matrix out = mlp(x, w, SelectionMask::all(n));
  for (std::size_t r = 0; r < n; ++r) {
    auto hidden = oracle::project_row(x, r, w.w1);
    for (double& h : hidden) h = oracle::gelu_tanh(h);
    for (std::size_t c = 0; c < d; ++c) {
      double acc = 0.0;
      for (std::size_t p = 0; p < hidden.size(); ++p) acc += hidden[p] * w.w2(p, c);
      EXPECT_NEAR(out(r, c), acc, 1e-12);
    }
  }
}

TEST(Mlp, DisjointMasksAgreeWithUnion) {
  Rng rng(16);
  const std::size_t n = 8, d = 3;
  const Matrix x = oracle::gaussian(n, d, rng);
  const MlpWeights w = MlpWeights::random(d, rng, 0.5);
  const SelectionMask a({0, 3, 5}, n), b({1, 6}, n), both({0, 1, 3, 5, 6}, n);
  const Matrix ra = mlp(x, w, a), rb = mlp(x, w, b), ru = mlp(x, w, both);
  const std::vector<std::pair<std::size_t, std::size_t>> where = {{0, 0}, {1, 2}, {2, 3}};
  for (auto [i, u] : where)
    for (std::size_t c = 0; c < d; ++c) EXPECT_EQ(ra(i, c), ru(u, c));
  for (auto [i, u] : std::vector<std::pair<std::size_t, std::size_t>>{{0, 1}, {1, 4}})
    for (std::size_t c = 0; c < d; ++c) EXPECT_EQ(rb(i, c), ru(u, c));
}

TEST(Gelu, KnownValues) {
  EXPECT_EQ(gelu(0.0), 0.0);
  EXPECT_NEAR(gelu(1.0), 0.8411919906, 1e-9);
  EXPECT_NEAR(gelu(-1.0), -0.1588080094, 1e-9);
}
