#pragma once

// Shared transformer building blocks: named parameter store, pre-norm
// encoder blocks over the windowed/global attention primitive, and the
// masked-language-modeling head.

#include <cstdint>
#include <string>
#include <vector>

#include "icdc/attention.hpp"
#include "icdc/ops.hpp"
#include "icdc/tensor.hpp"

namespace icdc {

constexpr double kLayerNormEps = 1e-5;
constexpr double kInitStd = 0.02;

template <class S>
class ParamStore {
 public:
  Tensor<S> add(const std::string& name, Tensor<S> t) {
    items_.emplace_back(name, t);
    return t;
  }

  Tensor<S> randn(const std::string& name, Shape shape, RngStream& rng, double stddev = kInitStd) {
    return add(name, Tensor<S>::randn(std::move(shape), rng, stddev, /*requires_grad=*/true));
  }

  Tensor<S> filled(const std::string& name, Shape shape, S value) {
    return add(name, Tensor<S>::filled(std::move(shape), value, /*requires_grad=*/true));
  }

  Tensor<S>* find(const std::string& name) {
    for (auto& [n, t] : items_) {
      if (n == name) return &t;
    }
    return nullptr;
  }

  const std::vector<std::pair<std::string, Tensor<S>>>& items() const { return items_; }
  std::vector<std::pair<std::string, Tensor<S>>>& items() { return items_; }

  void zero_grads() {
    for (auto& [n, t] : items_) t.zero_grad();
  }

 private:
  std::vector<std::pair<std::string, Tensor<S>>> items_;
};

// x [.., din] @ w [din, dout] + b
template <class S>
Tensor<S> linear(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& b) {
  return add(matmul(x, w), b);
}

template <class S>
Tensor<S> layer_norm_affine(const Tensor<S>& x, const Tensor<S>& gain, const Tensor<S>& bias) {
  return add(mul(layer_norm(x, static_cast<S>(kLayerNormEps)), gain), bias);
}

// [B, L, d] -> [B, H, L, d/H]
template <class S>
Tensor<S> split_heads(const Tensor<S>& x, std::size_t heads) {
  const std::size_t b = x.shape()[0], l = x.shape()[1], d = x.shape()[2];
  return permute(reshape(x, {b, l, heads, d / heads}), {0, 2, 1, 3});
}

template <class S>
Tensor<S> merge_heads(const Tensor<S>& x) {
  const std::size_t b = x.shape()[0], h = x.shape()[1], l = x.shape()[2], dh = x.shape()[3];
  return reshape(permute(x, {0, 2, 1, 3}), {b, l, h * dh});
}

struct AttentionSpec {
  std::size_t window = 0;  // >= L means dense
  const std::vector<std::vector<std::int32_t>>* globals = nullptr;
  const std::vector<std::size_t>* lengths = nullptr;
};

template <class S>
struct TransformerBlock {
  std::size_t heads = 1;
  Tensor<S> ln1_g, ln1_b, wq, bq, wk, bk, wv, bv, wo, bo;
  Tensor<S> ln2_g, ln2_b, ffn_w1, ffn_b1, ffn_w2, ffn_b2;

  static TransformerBlock init(ParamStore<S>& store, const std::string& prefix, std::size_t hidden,
                               std::size_t heads, std::size_t ffn, RngStream& rng) {
    TransformerBlock blk;
    blk.heads = heads;
    blk.ln1_g = store.filled(prefix + ".ln1.g", {hidden}, S(1));
    blk.ln1_b = store.filled(prefix + ".ln1.b", {hidden}, S(0));
    blk.wq = store.randn(prefix + ".attn.wq", {hidden, hidden}, rng);
    blk.bq = store.filled(prefix + ".attn.bq", {hidden}, S(0));
    blk.wk = store.randn(prefix + ".attn.wk", {hidden, hidden}, rng);
    blk.bk = store.filled(prefix + ".attn.bk", {hidden}, S(0));
    blk.wv = store.randn(prefix + ".attn.wv", {hidden, hidden}, rng);
    blk.bv = store.filled(prefix + ".attn.bv", {hidden}, S(0));
    blk.wo = store.randn(prefix + ".attn.wo", {hidden, hidden}, rng);
    blk.bo = store.filled(prefix + ".attn.bo", {hidden}, S(0));
    blk.ln2_g = store.filled(prefix + ".ln2.g", {hidden}, S(1));
    blk.ln2_b = store.filled(prefix + ".ln2.b", {hidden}, S(0));
    blk.ffn_w1 = store.randn(prefix + ".ffn.w1", {hidden, ffn}, rng);
    blk.ffn_b1 = store.filled(prefix + ".ffn.b1", {ffn}, S(0));
    blk.ffn_w2 = store.randn(prefix + ".ffn.w2", {ffn, hidden}, rng);
    blk.ffn_b2 = store.filled(prefix + ".ffn.b2", {hidden}, S(0));
    return blk;
  }

  static TransformerBlock bind(ParamStore<S>& store, const std::string& prefix, std::size_t heads) {
    auto get = [&](const std::string& suffix) {
      Tensor<S>* t = store.find(prefix + suffix);
      if (!t) throw std::logic_error("TransformerBlock::bind: missing parameter " + prefix + suffix);
      return *t;
    };
    TransformerBlock blk;
    blk.heads = heads;
    blk.ln1_g = get(".ln1.g");
    blk.ln1_b = get(".ln1.b");
    blk.wq = get(".attn.wq");
    blk.bq = get(".attn.bq");
    blk.wk = get(".attn.wk");
    blk.bk = get(".attn.bk");
    blk.wv = get(".attn.wv");
    blk.bv = get(".attn.bv");
    blk.wo = get(".attn.wo");
    blk.bo = get(".attn.bo");
    blk.ln2_g = get(".ln2.g");
    blk.ln2_b = get(".ln2.b");
    blk.ffn_w1 = get(".ffn.w1");
    blk.ffn_b1 = get(".ffn.b1");
    blk.ffn_w2 = get(".ffn.w2");
    blk.ffn_b2 = get(".ffn.b2");
    return blk;
  }

  Tensor<S> forward(const Tensor<S>& x, const AttentionSpec& attn, double dropout_p,
                    RngStream* dropout_rng) const {
    auto maybe_drop = [&](Tensor<S> t) {
      return dropout_p > 0.0 && dropout_rng ? dropout(t, dropout_p, *dropout_rng) : t;
    };
    Tensor<S> h = layer_norm_affine(x, ln1_g, ln1_b);
    Tensor<S> q = split_heads(linear(h, wq, bq), heads);
    Tensor<S> k = split_heads(linear(h, wk, bk), heads);
    Tensor<S> v = split_heads(linear(h, wv, bv), heads);
    Tensor<S> ctx = merge_heads(windowed_global_attention(q, k, v, attn.window, *attn.globals, *attn.lengths));
    Tensor<S> x1 = add(x, maybe_drop(linear(ctx, wo, bo)));
    Tensor<S> h2 = layer_norm_affine(x1, ln2_g, ln2_b);
    Tensor<S> ff = linear(gelu(linear(h2, ffn_w1, ffn_b1)), ffn_w2, ffn_b2);
    return add(x1, maybe_drop(ff));
  }
};

template <class S>
struct MlmHead {
  Tensor<S> dense_w, dense_b, ln_g, ln_b, out_w, out_b;

  static MlmHead init(ParamStore<S>& store, const std::string& prefix, std::size_t hidden,
                      std::size_t vocab, RngStream& rng) {
    MlmHead head;
    head.dense_w = store.randn(prefix + ".dense.w", {hidden, hidden}, rng);
    head.dense_b = store.filled(prefix + ".dense.b", {hidden}, S(0));
    head.ln_g = store.filled(prefix + ".ln.g", {hidden}, S(1));
    head.ln_b = store.filled(prefix + ".ln.b", {hidden}, S(0));
    head.out_w = store.randn(prefix + ".out.w", {hidden, vocab}, rng);
    head.out_b = store.filled(prefix + ".out.b", {vocab}, S(0));
    return head;
  }

  static MlmHead bind(ParamStore<S>& store, const std::string& prefix) {
    auto get = [&](const std::string& suffix) {
      Tensor<S>* t = store.find(prefix + suffix);
      if (!t) throw std::logic_error("MlmHead::bind: missing parameter " + prefix + suffix);
      return *t;
    };
    return MlmHead{get(".dense.w"), get(".dense.b"), get(".ln.g"), get(".ln.b"), get(".out.w"), get(".out.b")};
  }

  // hidden [N, d] -> logits [N, vocab]
  Tensor<S> logits(const Tensor<S>& hidden) const {
    Tensor<S> h = layer_norm_affine(gelu(linear(hidden, dense_w, dense_b)), ln_g, ln_b);
    return linear(h, out_w, out_b);
  }
};

}  // namespace icdc
