#pragma once

// Sliding-window + global-token attention. Token i attends to the window
// {j : |i - j| <= w} plus every global token; global tokens attend to (and
// are attended by) everything. Padding is a suffix: positions >= lengths[b]
// are PAD and receive zero weight everywhere. Cost is O(L * (w + g)) per
// head for non-global rows instead of O(L^2).

#include <cstdint>
#include <limits>
#include <vector>

#include "icdc/ops.hpp"
#include "icdc/tensor.hpp"

namespace icdc {

namespace detail {

// CSR of allowed key columns per query row, shared across heads of one item.
struct AllowedPlan {
  std::vector<std::size_t> offsets;  // L + 1
  std::vector<std::int32_t> cols;    // sorted, unique, all < length
};

inline AllowedPlan build_allowed_plan(std::size_t seq_len, std::size_t window,
                                      const std::vector<std::int32_t>& globals, std::size_t length) {
  std::vector<bool> is_global(seq_len, false);
  std::vector<std::int32_t> in_range_globals;
  for (std::int32_t g : globals) {
    if (g < 0 || static_cast<std::size_t>(g) >= seq_len) {
      throw ShapeError("attention: global index " + std::to_string(g) + " outside sequence");
    }
    if (static_cast<std::size_t>(g) < length && !is_global[static_cast<std::size_t>(g)]) {
      is_global[static_cast<std::size_t>(g)] = true;
      in_range_globals.push_back(g);
    }
  }
  std::sort(in_range_globals.begin(), in_range_globals.end());

  AllowedPlan plan;
  plan.offsets.assign(seq_len + 1, 0);
  for (std::size_t i = 0; i < seq_len; ++i) {
    plan.offsets[i] = plan.cols.size();
    if (i < length && is_global[i]) {
      for (std::size_t j = 0; j < length; ++j) plan.cols.push_back(static_cast<std::int32_t>(j));
      continue;
    }
    const std::size_t lo = i > window ? i - window : 0;
    const std::size_t hi = std::min(i + window, length == 0 ? 0 : length - 1);
    std::size_t gi = 0;
    while (gi < in_range_globals.size() && static_cast<std::size_t>(in_range_globals[gi]) < lo) {
      plan.cols.push_back(in_range_globals[gi++]);
    }
    for (std::size_t j = lo; j <= hi && j < length; ++j) plan.cols.push_back(static_cast<std::int32_t>(j));
    while (gi < in_range_globals.size() && static_cast<std::size_t>(in_range_globals[gi]) <= hi) ++gi;
    while (gi < in_range_globals.size()) plan.cols.push_back(in_range_globals[gi++]);
  }
  plan.offsets[seq_len] = plan.cols.size();
  return plan;
}

}  // namespace detail

// q, k, v: [B, H, L, dh]. global_tokens[b] must contain index 0 (CLS);
// lengths[b] in (0, L] marks the non-PAD prefix.
template <class S>
Tensor<S> windowed_global_attention(const Tensor<S>& q, const Tensor<S>& k, const Tensor<S>& v,
                                    std::size_t window,
                                    const std::vector<std::vector<std::int32_t>>& global_tokens,
                                    const std::vector<std::size_t>& lengths) {
  if (q.rank() != 4 || q.shape() != k.shape() || q.shape() != v.shape()) {
    throw ShapeError("attention: q, k, v must share shape [B, H, L, dh], got " + shape_str(q.shape()));
  }
  if (window == 0) throw ShapeError("attention: window must be >= 1");
  const std::size_t b_n = q.shape()[0], h_n = q.shape()[1], l_n = q.shape()[2], d_h = q.shape()[3];
  if (global_tokens.size() != b_n || lengths.size() != b_n) {
    throw ShapeError("attention: global_tokens and lengths must have one entry per batch item");
  }

  std::vector<detail::AllowedPlan> plans;
  plans.reserve(b_n);
  std::vector<std::size_t> nnz_base(b_n + 1, 0);
  for (std::size_t b = 0; b < b_n; ++b) {
    if (lengths[b] == 0 || lengths[b] > l_n) {
      throw ShapeError("attention: length " + std::to_string(lengths[b]) + " invalid for L=" + std::to_string(l_n));
    }
    bool has_cls = false;
    for (std::int32_t g : global_tokens[b]) has_cls = has_cls || g == 0;
    if (!has_cls) throw ShapeError("attention: global set must include position 0");
    plans.push_back(detail::build_allowed_plan(l_n, window, global_tokens[b], lengths[b]));
    nnz_base[b + 1] = nnz_base[b] + plans[b].cols.size();
  }

  const S alpha = static_cast<S>(1.0 / std::sqrt(static_cast<double>(d_h)));
  const S* pq = q.values().data();
  const S* pk = k.values().data();
  const S* pv = v.values().data();
  std::vector<S> out(q.size(), S(0));
  std::vector<S> probs(nnz_base[b_n] * h_n);

  for (std::size_t b = 0; b < b_n; ++b) {
    const auto& plan = plans[b];
    for (std::size_t h = 0; h < h_n; ++h) {
      const std::size_t plane = (b * h_n + h) * l_n * d_h;
      S* pp = probs.data() + nnz_base[b] * h_n + h * plan.cols.size();
      for (std::size_t i = 0; i < l_n; ++i) {
        const std::size_t beg = plan.offsets[i], end = plan.offsets[i + 1];
        const S* qi = pq + plane + i * d_h;
        S mx = -std::numeric_limits<S>::infinity();
        for (std::size_t t = beg; t < end; ++t) {
          const S* kj = pk + plane + static_cast<std::size_t>(plan.cols[t]) * d_h;
          S s = S(0);
          for (std::size_t d = 0; d < d_h; ++d) s += qi[d] * kj[d];
          pp[t] = s * alpha;
          mx = std::max(mx, pp[t]);
        }
        S denom = S(0);
        for (std::size_t t = beg; t < end; ++t) {
          pp[t] = std::exp(pp[t] - mx);
          denom += pp[t];
        }
        S* oi = out.data() + plane + i * d_h;
        for (std::size_t t = beg; t < end; ++t) {
          pp[t] /= denom;
          const S* vj = pv + plane + static_cast<std::size_t>(plan.cols[t]) * d_h;
          for (std::size_t d = 0; d < d_h; ++d) oi[d] += pp[t] * vj[d];
        }
      }
    }
  }

  auto backward = [plans = std::move(plans), nnz_base, probs = std::move(probs), b_n, h_n, l_n, d_h,
                   alpha](detail::Node<S>& self) {
    auto& nq = *self.parents[0];
    auto& nk = *self.parents[1];
    auto& nv = *self.parents[2];
    if (nq.requires_grad) nq.ensure_grad();
    if (nk.requires_grad) nk.ensure_grad();
    if (nv.requires_grad) nv.ensure_grad();
    const S* pq = nq.value.data();
    const S* pk = nk.value.data();
    const S* pv = nv.value.data();
    const S* g = self.grad.data();
    std::vector<S> dp;
    for (std::size_t b = 0; b < b_n; ++b) {
      const auto& plan = plans[b];
      for (std::size_t h = 0; h < h_n; ++h) {
        const std::size_t plane = (b * h_n + h) * l_n * d_h;
        const S* pp = probs.data() + nnz_base[b] * h_n + h * plan.cols.size();
        for (std::size_t i = 0; i < l_n; ++i) {
          const std::size_t beg = plan.offsets[i], end = plan.offsets[i + 1];
          const S* gi = g + plane + i * d_h;
          dp.assign(end - beg, S(0));
          S dot = S(0);
          for (std::size_t t = beg; t < end; ++t) {
            const std::size_t j = static_cast<std::size_t>(plan.cols[t]);
            const S* vj = pv + plane + j * d_h;
            S acc = S(0);
            for (std::size_t d = 0; d < d_h; ++d) acc += gi[d] * vj[d];
            dp[t - beg] = acc;
            dot += pp[t] * acc;
            if (nv.requires_grad) {
              S* dvj = nv.grad.data() + plane + j * d_h;
              for (std::size_t d = 0; d < d_h; ++d) dvj[d] += pp[t] * gi[d];
            }
          }
          const S* qi = pq + plane + i * d_h;
          for (std::size_t t = beg; t < end; ++t) {
            const std::size_t j = static_cast<std::size_t>(plan.cols[t]);
            const S ds = pp[t] * (dp[t - beg] - dot) * alpha;
            if (nq.requires_grad) {
              const S* kj = pk + plane + j * d_h;
              S* dqi = nq.grad.data() + plane + i * d_h;
              for (std::size_t d = 0; d < d_h; ++d) dqi[d] += ds * kj[d];
            }
            if (nk.requires_grad) {
              S* dkj = nk.grad.data() + plane + j * d_h;
              for (std::size_t d = 0; d < d_h; ++d) dkj[d] += ds * qi[d];
            }
          }
        }
      }
    }
  };
  return detail::make_op<S>("windowed_global_attention", q.shape(), std::move(out), {q, k, v}, backward);
}

// Forward-only attention weights for diagnostics and tests: returns, per
// batch item, the CSR plan plus one probability block per head.
template <class S>
struct AttentionProbs {
  std::vector<std::size_t> offsets;
  std::vector<std::int32_t> cols;
  std::vector<std::vector<S>> head_probs;  // [H][nnz]
};

template <class S>
std::vector<AttentionProbs<S>> attention_probabilities(
    const Tensor<S>& q, const Tensor<S>& k, std::size_t window,
    const std::vector<std::vector<std::int32_t>>& global_tokens, const std::vector<std::size_t>& lengths) {
  const std::size_t b_n = q.shape()[0], h_n = q.shape()[1], l_n = q.shape()[2], d_h = q.shape()[3];
  const S alpha = static_cast<S>(1.0 / std::sqrt(static_cast<double>(d_h)));
  const S* pq = q.values().data();
  const S* pk = k.values().data();
  std::vector<AttentionProbs<S>> result(b_n);
  for (std::size_t b = 0; b < b_n; ++b) {
    auto plan = detail::build_allowed_plan(l_n, window, global_tokens[b], lengths[b]);
    result[b].offsets = plan.offsets;
    result[b].cols = plan.cols;
    result[b].head_probs.assign(h_n, std::vector<S>(plan.cols.size()));
    for (std::size_t h = 0; h < h_n; ++h) {
      const std::size_t plane = (b * h_n + h) * l_n * d_h;
      auto& pp = result[b].head_probs[h];
      for (std::size_t i = 0; i < l_n; ++i) {
        const std::size_t beg = plan.offsets[i], end = plan.offsets[i + 1];
        const S* qi = pq + plane + i * d_h;
        S mx = -std::numeric_limits<S>::infinity();
        for (std::size_t t = beg; t < end; ++t) {
          const S* kj = pk + plane + static_cast<std::size_t>(plan.cols[t]) * d_h;
          S s = S(0);
          for (std::size_t d = 0; d < d_h; ++d) s += qi[d] * kj[d];
          pp[t] = s * alpha;
          mx = std::max(mx, pp[t]);
        }
        S denom = S(0);
        for (std::size_t t = beg; t < end; ++t) {
          pp[t] = std::exp(pp[t] - mx);
          denom += pp[t];
        }
        for (std::size_t t = beg; t < end; ++t) pp[t] /= denom;
      }
    }
  }
  return result;
}

}  // namespace icdc
