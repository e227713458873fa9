#include <gtest/gtest.h>

#include "astraea/attention.hpp"
#include "astraea/diffusion.hpp"
#include "astraea/flops.hpp"
#include "oracles.hpp"

using namespace astraea;

namespace {

FlopCount dense_self_attention_formula(FlopCount b, FlopCount n, FlopCount h) { return 8 * b * n * h * h + 4 * b * n * n * h; }

}  // namespace

TEST(SelfAttentionFlops, HandExamples) {
  EXPECT_EQ(flops_self_attention({1, 2, 2, 2, 4, 1}).total(), 320u);
  EXPECT_EQ(flops_self_attention({1, 1, 1, 1, 1, 1}).total(), 12u);
}

TEST(SelfAttentionFlops, ComponentsSumToClosedForm) {
  Rng rng(31);
  for (int trial = 0; trial < 50; ++trial) {
    const FlopCount b = oracle::draw(rng, 1, 4), n = oracle::draw(rng, 1, 100), heads = oracle::draw(rng, 1, 4);
    const FlopCount h = heads * oracle::draw(rng, 1, 16);
    const FlopsReport r = flops_self_attention({b, n, n, n, h, heads});
    EXPECT_EQ(r.total(), dense_self_attention_formula(b, n, h));
    EXPECT_EQ(r.self_attn(), r.total());
    EXPECT_EQ(r.softmax, b * heads * n * n);
  }
}

TEST(SelfAttentionFlops, MatchesCounterOnLiveCalls) {
  Rng rng(32);
  for (int trial = 0; trial < 5; ++trial) {
    const std::size_t n = oracle::draw(rng, 1, 20), h = oracle::draw(rng, 1, 12);
    const Matrix x = oracle::gaussian(n, h, rng);
    const AttentionWeights w = AttentionWeights::random(h, rng, 0.3);
    FlopCounter counter;
    (void)self_attention_dense(x, w);
    EXPECT_EQ(counter.flops(), flops_self_attention({1, n, n, n, h, 1}).total());
  }
}

TEST(CrossAttentionFlops, HandExample) { EXPECT_EQ(flops_cross_attention({1, 2, 2, 3, 4, 1}), 416u); }

TEST(CrossAttentionFlops, SquareCaseEqualsSelfAttention) {
  for (FlopCount n : {1u, 3u, 17u})
    for (FlopCount h : {1u, 8u}) EXPECT_EQ(flops_cross_attention({2, n, n, n, h, 1}), dense_self_attention_formula(2, n, h));
}

TEST(CrossAttentionFlops, MatchesCounterOnLiveCalls) {
  Rng rng(33);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t n = oracle::draw(rng, 1, 20), m = oracle::draw(rng, 1, 9), h = oracle::draw(rng, 1, 10);
    const Matrix x = oracle::gaussian(n, h, rng), ctx = oracle::gaussian(m, h, rng);
    const AttentionWeights w = AttentionWeights::random(h, rng, 0.3);
    FlopCounter counter;
    (void)cross_attention(x, ctx, w, SelectionMask::all(n));
    EXPECT_EQ(counter.flops(), flops_cross_attention({1, n, n, m, h, 1}));
  }
}

TEST(MlpFlops, HandExampleAndLinearity) {
  EXPECT_EQ(flops_mlp({1, 2, 2, 2, 4, 1}), 512u);
  EXPECT_EQ(flops_mlp({1, 4, 4, 4, 4, 1}), 2 * flops_mlp({1, 2, 2, 2, 4, 1}));
}

TEST(MlpFlops, HalfBudgetIsExactlyHalf) {
  // 0.4254 / 0.8508 in the reference breakdown is exactly one half.
  EXPECT_DOUBLE_EQ(0.4254 / 0.8508, 0.5);
  for (FlopCount n : {2u, 64u, 1000u}) {
    const FlopCount full = flops_block(n, 8, 32, n).mlp;
    const FlopCount half = flops_block(n, 8, 32, budget_token_count(0.5, n)).mlp;
    EXPECT_EQ(2 * half, full);
  }
}

TEST(MlpFlops, MatchesCounterOnLiveCalls) {
  Rng rng(34);
  for (int trial = 0; trial < 5; ++trial) {
    const std::size_t n = oracle::draw(rng, 1, 20), h = oracle::draw(rng, 1, 10);
    const Matrix x = oracle::gaussian(n, h, rng);
    const MlpWeights w = MlpWeights::random(h, rng, 0.3);
    FlopCounter counter;
    (void)mlp(x, w, SelectionMask::all(n));
    EXPECT_EQ(counter.flops(), flops_mlp({1, n, n, n, h, 1}));
  }
}

TEST(SparseFlops, AffineInSelectedCount) {
  Rng rng(35);
  for (int trial = 0; trial < 20; ++trial) {
    const FlopCount b = oracle::draw(rng, 1, 3), n = oracle::draw(rng, 2, 80), h = oracle::draw(rng, 1, 32);
    const FlopCount slope = 4 * b * n * h + 4 * b * h * h, intercept = 4 * b * n * h * h;
    for (FlopCount m = 1; m <= n; m += 1 + n / 7) {
      EXPECT_EQ(flops_sparse_self_attention(b, n, m, h).total(), intercept + slope * m);
    }
    EXPECT_EQ(flops_sparse_self_attention(b, n, n, h).total(), dense_self_attention_formula(b, n, h));
  }
}

TEST(SparseFlops, MatchesCounterOnLiveCalls) {
  Rng rng(36);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t n = oracle::draw(rng, 1, 24), h = oracle::draw(rng, 1, 8);
    const Matrix x = oracle::gaussian(n, h, rng);
    const AttentionWeights w = AttentionWeights::random(h, rng, 0.3);
    std::vector<std::size_t> idx;
    for (std::size_t t = 0; t < n; t += 1 + rng_choice(rng, 3)) idx.push_back(t);
    FlopCounter counter;
    (void)self_attention_sparse(x, w, SelectionMask(idx, n));
    EXPECT_EQ(counter.flops(), flops_sparse_self_attention(1, n, idx.size(), h).total());
  }
}

TEST(RunFlops, FullBudgetEqualsDenseTotals) {
  const ModelConfig cfg;
  const FlopsReport run = flops_sparse_run(cfg, Schedule::uniform(cfg.timesteps, 10), RunMode::astraea);
  const FlopsConfig fc{1, cfg.n_tokens, cfg.n_tokens, cfg.context_tokens, cfg.channels, 1};
  const FlopCount per_block = flops_self_attention(fc).total() + flops_cross_attention(fc) + flops_mlp(fc);
  EXPECT_EQ(run.total(), per_block * cfg.n_blocks * cfg.timesteps);
  EXPECT_EQ(run, flops_sparse_run(cfg, Schedule::uniform(cfg.timesteps, 10), RunMode::full));
}

TEST(RunFlops, ZeroBudgetCostsOnlyTheWarmUpStep) {
  const ModelConfig cfg;
  const FlopsReport run = flops_sparse_run(cfg, Schedule::uniform(cfg.timesteps, 0), RunMode::astraea);
  const FlopsReport one = flops_block(cfg.n_tokens, cfg.context_tokens, cfg.channels, cfg.n_tokens);
  FlopsReport expected;
  for (std::size_t b = 0; b < cfg.n_blocks; ++b) expected += one;
  EXPECT_EQ(run, expected);
}

TEST(RunFlops, MonotoneInEveryStepBudget) {
  Rng rng(37);
  const ModelConfig cfg;
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<int> v(cfg.timesteps);
    for (int& t : v) t = static_cast<int>(rng_choice(rng, 11));
    const Schedule s(v);
    const std::size_t i = rng_choice(rng, cfg.timesteps);
    if (v[i] == 10) continue;
    Schedule up = s;
    up.set(i, v[i] + 1);
    for (RunMode m : {RunMode::astraea, RunMode::fixed_token, RunMode::timestep_level}) {
      EXPECT_LE(flops_sparse_run(cfg, s, m).total(), flops_sparse_run(cfg, up, m).total());
    }
  }
}

TEST(RunFlops, RunStatisticsAgreeWithAnalyticModel) {
  ModelConfig cfg;
  cfg.n_tokens = 16;
  cfg.channels = 8;
  cfg.timesteps = 6;
  const ToyModel model = build_toy_model(cfg);
  const NoiseSchedule noise = NoiseSchedule::cosine(cfg.timesteps);
  const Schedule s({10, 3, 7, 0, 5, 4});
  for (RunMode m : {RunMode::full, RunMode::astraea, RunMode::fixed_token, RunMode::timestep_level}) {
    FlopCounter counter;
    const RunResult r = run_inference(model, s, m, noise, 11);
    EXPECT_EQ(r.stats.flops, flops_sparse_run(cfg, s, m)) << to_string(m);
    EXPECT_EQ(counter.flops(), r.stats.flops.total()) << to_string(m);
  }
}

TEST(FlopsConfigType, RejectsBadShapes) {
  EXPECT_THROW(flops_self_attention({0, 2, 2, 2, 4, 1}), ConfigError);
  EXPECT_THROW(flops_self_attention({1, 2, 2, 2, 5, 2}), ConfigError);
}
