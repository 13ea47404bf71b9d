#pragma once

// Gradient-check sweep over every differentiable primitive, shared by the
// unit tests and the acceptance suite. Each primitive is exercised on five
// seeded shapes in 64-bit precision against central finite differences.

#include <string>
#include <vector>

#include "icdc/attention.hpp"
#include "icdc/grad_check.hpp"
#include "icdc/ops.hpp"
#include "icdc/rng.hpp"
#include "icdc/tensor.hpp"

namespace icdc::testing {

struct GradCase {
  std::string name;
  GradCheckReport report;
};

inline Tensor64 seeded(const Shape& shape, RngStream& rng, double scale = 1.0) {
  return Tensor64::randn(shape, rng, scale);
}

// Reduce any tensor to a scalar with data-dependent weights so that every
// output coordinate influences the loss.
inline Tensor64 weighted_sum(const Tensor64& t, std::uint64_t seed) {
  RngStream rng(seed, "gradsuite-weights");
  std::vector<double> w(t.size());
  for (auto& x : w) x = rng.normal();
  return sum(mul(t, Tensor64::from(t.shape(), std::move(w))));
}

inline std::vector<GradCase> run_primitive_grad_suite(double tol = 1e-4) {
  std::vector<GradCase> cases;
  auto check = [&](const std::string& name, const TensorProgram& fn, const Tensor64& point) {
    cases.push_back({name, grad_check(fn, point, tol)});
  };

  for (std::uint64_t trial = 0; trial < 5; ++trial) {
    RngStream rng(1000 + trial, "gradsuite");
    const std::size_t m = 2 + trial % 3, k = 2 + (trial + 1) % 3, n = 2 + (trial + 2) % 3;

    {
      Tensor64 b = seeded({k, n}, rng);
      check("matmul_lhs", [&, b](const Tensor64& x) { return weighted_sum(matmul(x, b), trial); },
            seeded({m, k}, rng));
      Tensor64 a = seeded({m, k}, rng);
      check("matmul_rhs", [&, a](const Tensor64& x) { return weighted_sum(matmul(a, x), trial); },
            seeded({k, n}, rng));
      Tensor64 a3 = seeded({2, m, k}, rng);
      check("matmul_batched_broadcast",
            [&, a3](const Tensor64& x) { return weighted_sum(matmul(a3, x), trial); }, seeded({k, n}, rng));
    }
    {
      Tensor64 b = seeded({m, n}, rng);
      check("add", [&, b](const Tensor64& x) { return weighted_sum(add(x, b), trial); }, seeded({m, n}, rng));
      Tensor64 a = seeded({m, n}, rng);
      check("add_bias", [&, a](const Tensor64& x) { return weighted_sum(add(a, x), trial); }, seeded({n}, rng));
      check("mul", [&, b](const Tensor64& x) { return weighted_sum(mul(x, b), trial); }, seeded({m, n}, rng));
      check("mul_scalar_rhs", [&, a](const Tensor64& x) { return weighted_sum(mul(a, x), trial); },
            seeded({1}, rng));
      check("scale", [&](const Tensor64& x) { return weighted_sum(scale(x, 1.7), trial); }, seeded({m, n}, rng));
      check("exp", [&](const Tensor64& x) { return weighted_sum(icdc::exp(x), trial); },
            seeded({m, n}, rng, 0.5));
    }
    check("softmax", [&](const Tensor64& x) { return weighted_sum(softmax(x, -1), trial); }, seeded({m, n}, rng));
    check("softmax_axis0", [&](const Tensor64& x) { return weighted_sum(softmax(x, 0), trial); },
          seeded({m, n}, rng));
    check("layer_norm", [&](const Tensor64& x) { return weighted_sum(layer_norm(x, 1e-5), trial); },
          seeded({m, 5}, rng));
    check("gelu", [&](const Tensor64& x) { return weighted_sum(gelu(x), trial); }, seeded({m, n}, rng));
    {
      std::vector<std::int32_t> ids = {0, 2, 1, 2};
      check("embedding_lookup",
            [&, ids](const Tensor64& x) { return weighted_sum(embedding_lookup(x, ids), trial); },
            seeded({3, n}, rng));
    }
    {
      Tensor64 other = seeded({m, 2}, rng);
      check("concat",
            [&, other](const Tensor64& x) { return weighted_sum(concat<double>({x, other}, 1), trial); },
            seeded({m, n}, rng));
    }
    check("slice", [&](const Tensor64& x) { return weighted_sum(slice(x, 1, 1, n - 1), trial); },
          seeded({m, n}, rng));
    check("sum", [&](const Tensor64& x) { return sum(x); }, seeded({m, n}, rng));
    check("mean", [&](const Tensor64& x) { return mean(x); }, seeded({m, n}, rng));
    {
      std::vector<std::int32_t> labels(m);
      for (std::size_t i = 0; i < m; ++i) labels[i] = i % 2 == 0 ? static_cast<std::int32_t>(i % n) : -100;
      labels[0] = 0;  // keep at least one counted row
      check("cross_entropy",
            [&, labels](const Tensor64& x) { return cross_entropy(x, labels); }, seeded({m, n}, rng));
    }
    check("l2_normalize", [&](const Tensor64& x) { return weighted_sum(l2_normalize(x), trial); },
          seeded({m, n}, rng));
    {
      Tensor64 b = seeded({m + 1, n}, rng);
      check("cosine_similarity_matrix",
            [&, b](const Tensor64& x) { return weighted_sum(cosine_similarity_matrix(x, b), trial); },
            seeded({m, n}, rng));
    }
    check("reshape", [&](const Tensor64& x) { return weighted_sum(reshape(x, {n, m}), trial); },
          seeded({m, n}, rng));
    check("permute", [&](const Tensor64& x) { return weighted_sum(permute(x, {2, 0, 1}), trial); },
          seeded({2, m, n}, rng));
    {
      std::vector<std::int32_t> rows = {1, 0, 1};
      check("index_rows", [&, rows](const Tensor64& x) { return weighted_sum(index_rows(x, rows), trial); },
            seeded({m, n}, rng));
      std::vector<std::int32_t> colsel = {static_cast<std::int32_t>(n - 1), 0};
      check("index_cols", [&, colsel](const Tensor64& x) { return weighted_sum(index_cols(x, colsel), trial); },
            seeded({m, n}, rng));
    }
    {
      // Fixed mask: re-seeding the stream per evaluation keeps dropout a
      // deterministic function of its input.
      check("dropout",
            [&](const Tensor64& x) {
              RngStream drop_rng(77 + trial, "gradsuite-dropout");
              return weighted_sum(dropout(x, 0.3, drop_rng), trial);
            },
            seeded({m, n}, rng));
    }
    {
      const std::size_t B = 1, H = 2, L = 6, dh = 3;
      Tensor64 k_in = seeded({B, H, L, dh}, rng);
      Tensor64 v_in = seeded({B, H, L, dh}, rng);
      std::vector<std::vector<std::int32_t>> globals = {{0, 3}};
      std::vector<std::size_t> lengths = {5};
      auto attn_q = [=](const Tensor64& x) {
        return weighted_sum(windowed_global_attention(x, k_in, v_in, 1, globals, lengths), trial);
      };
      check("attention_q", attn_q, seeded({B, H, L, dh}, rng));
      Tensor64 q_in = seeded({B, H, L, dh}, rng);
      auto attn_k = [=](const Tensor64& x) {
        return weighted_sum(windowed_global_attention(q_in, x, v_in, 1, globals, lengths), trial);
      };
      check("attention_k", attn_k, seeded({B, H, L, dh}, rng));
      auto attn_v = [=](const Tensor64& x) {
        return weighted_sum(windowed_global_attention(q_in, k_in, x, 1, globals, lengths), trial);
      };
      check("attention_v", attn_v, seeded({B, H, L, dh}, rng));
    }
  }
  return cases;
}

}  // namespace icdc::testing
