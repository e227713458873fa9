#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "astraea/errors.hpp"
#include "astraea/schedule.hpp"
#include "astraea/selection.hpp"

namespace astraea {

using FlopCount = std::uint64_t;

/// Symbols of the analytic cost model. `n_tokens` is the self-attention / MLP
/// sequence length; `n_query` and `n_kv` are the cross-attention query and
/// context lengths.
struct FlopsConfig {
  FlopCount batch = 1;
  FlopCount n_tokens = 1;
  FlopCount n_query = 1;
  FlopCount n_kv = 1;
  FlopCount hidden = 1;
  FlopCount n_heads = 1;

  FlopCount head_dim() const noexcept { return hidden / n_heads; }

  void validate() const {
    if (batch < 1 || n_tokens < 1 || n_query < 1 || n_kv < 1 || hidden < 1 || n_heads < 1) {
      throw ConfigError("flops", "all dimensions must be >= 1");
    }
    if (hidden % n_heads != 0) throw ConfigError("n_heads", "hidden dimension must be divisible by head count");
  }
};

/// Per-operator FLOP counts. Softmax is reported but never part of total().
struct FlopsReport {
  FlopCount qkv_proj = 0;
  FlopCount attn_scores = 0;
  FlopCount softmax = 0;
  FlopCount attn_output = 0;
  FlopCount out_proj = 0;
  FlopCount cross_attn = 0;
  FlopCount mlp = 0;

  FlopCount self_attn() const noexcept { return qkv_proj + attn_scores + attn_output + out_proj; }
  FlopCount total() const noexcept { return self_attn() + cross_attn + mlp; }

  FlopsReport& operator+=(const FlopsReport& o) noexcept {
    qkv_proj += o.qkv_proj;
    attn_scores += o.attn_scores;
    softmax += o.softmax;
    attn_output += o.attn_output;
    out_proj += o.out_proj;
    cross_attn += o.cross_attn;
    mlp += o.mlp;
    return *this;
  }

  friend FlopsReport operator+(FlopsReport a, const FlopsReport& b) noexcept { return a += b; }
  friend bool operator==(const FlopsReport&, const FlopsReport&) = default;
};

/// Dense self-attention: 8BNH^2 + 4BN^2H in total.
inline FlopsReport flops_self_attention(const FlopsConfig& c) {
  c.validate();
  const FlopCount b = c.batch, n = c.n_tokens, h = c.hidden, heads = c.n_heads, d = c.head_dim();
  FlopsReport r;
  r.qkv_proj = 6 * b * n * h * h;
  r.attn_scores = 2 * b * heads * n * n * d;
  r.softmax = b * heads * n * n;
  r.attn_output = 2 * b * heads * n * n * d;
  r.out_proj = 2 * b * n * h * h;
  return r;
}

/// 4 B Nq H^2 + 4 B Nkv H^2 + 4 B Nq Nkv H.
inline FlopCount flops_cross_attention(const FlopsConfig& c) {
  c.validate();
  const FlopCount b = c.batch, h = c.hidden;
  return 4 * b * c.n_query * h * h + 4 * b * c.n_kv * h * h + 4 * b * c.n_query * c.n_kv * h;
}

/// Two linear layers with a 4H hidden width; activation not counted.
inline FlopCount flops_mlp(const FlopsConfig& c) {
  c.validate();
  return 16 * c.batch * c.n_tokens * c.hidden * c.hidden;
}

/// Self-attention where only `selected` query rows are computed against all
/// `n_tokens` keys/values. Affine in `selected`.
inline FlopsReport flops_sparse_self_attention(FlopCount batch, FlopCount n_tokens, FlopCount selected,
                                               FlopCount hidden, FlopCount n_heads = 1) {
  if (selected == 0) return {};
  const FlopCount d = hidden / n_heads;
  FlopsReport r;
  r.qkv_proj = 2 * batch * selected * hidden * hidden + 4 * batch * n_tokens * hidden * hidden;
  r.attn_scores = 2 * batch * n_heads * selected * n_tokens * d;
  r.softmax = batch * n_heads * selected * n_tokens;
  r.attn_output = 2 * batch * n_heads * selected * n_tokens * d;
  r.out_proj = 2 * batch * selected * hidden * hidden;
  return r;
}

/// One compute block (self-attn, cross-attn, MLP) with `selected` tokens
/// computed. Zero selected tokens means the block is skipped entirely.
inline FlopsReport flops_block(FlopCount n_tokens, FlopCount context_tokens, FlopCount hidden,
                               FlopCount selected, FlopCount batch = 1, FlopCount n_heads = 1) {
  FlopsReport r = flops_sparse_self_attention(batch, n_tokens, selected, hidden, n_heads);
  if (selected == 0) return r;
  FlopsConfig c{batch, selected, selected, context_tokens, hidden, n_heads};
  r.cross_attn = flops_cross_attention(c);
  r.mlp = flops_mlp(c);
  return r;
}

/// Tokens each block computes at execution step `step` of a run. The first
/// step is always computed in full.
inline std::size_t planned_tokens(RunMode mode, const Schedule& schedule, std::size_t step, std::size_t n_tokens) {
  if (mode == RunMode::full || step == 0) return n_tokens;
  const int tenths = schedule.tenths(step);
  switch (mode) {
    case RunMode::timestep_level:
      return timestep_level_computes(tenths) ? n_tokens : 0;
    case RunMode::astraea:
    case RunMode::fixed_token:
      return budget_token_count(tenths / 10.0, n_tokens);
    case RunMode::full:
      break;
  }
  return n_tokens;
}

/// Analytic cost of a whole run under `schedule` and `mode` (batch 1).
inline FlopsReport flops_sparse_run(const ModelConfig& model, const Schedule& schedule, RunMode mode,
                                    FlopCount n_heads = 1) {
  model.validate();
  if (schedule.size() != model.timesteps) throw ShapeError("flops_sparse_run: schedule length != timesteps");
  FlopsReport total;
  for (std::size_t step = 0; step < model.timesteps; ++step) {
    const std::size_t k = planned_tokens(mode, schedule, step, model.n_tokens);
    const FlopsReport block = flops_block(model.n_tokens, model.context_tokens, model.channels, k, 1, n_heads);
    for (std::size_t b = 0; b < model.n_blocks; ++b) total += block;
  }
  return total;
}

}  // namespace astraea
