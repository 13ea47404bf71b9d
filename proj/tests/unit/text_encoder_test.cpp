#include <doctest.h>

#include <cmath>

#include "common/grad_suite.hpp"
#include "icdc/text_encoder.hpp"

using namespace icdc;

namespace {

TextVocab demo_vocab() {
  return TextVocab::train_bpe({"patient presents with fever and chills", "exam reveals stable vitals",
                               "plan continue monitor daily"},
                              96);
}

TextEncoderConfig tiny_config(std::size_t vocab, std::size_t window = 64) {
  TextEncoderConfig cfg;
  cfg.layers = 2;
  cfg.hidden = 16;
  cfg.heads = 2;
  cfg.ffn = 24;
  cfg.base_positions = 32;
  cfg.max_positions = 32;
  cfg.window = window;
  cfg.vocab = vocab;
  cfg.dropout = 0.0;
  return cfg;
}

// Dense reference: same parameters, but attention materialized from
// primitives with an explicit pad mask instead of the windowed kernel.
Tensor64 dense_reference_encode_cls(TextEncoder<double>& enc, const TextBatch& batch) {
  auto& store = enc.params();
  const auto& cfg = enc.config();
  const std::size_t b = batch.batch, l = batch.max_len, d = cfg.hidden, h = cfg.heads;

  std::vector<std::int32_t> positions(b * l);
  for (std::size_t r = 0; r < b; ++r) {
    for (std::size_t c = 0; c < l; ++c) positions[r * l + c] = static_cast<std::int32_t>(c);
  }
  Tensor64 x = add(embedding_lookup(*store.find("text.tok_emb"), batch.ids, {b, l}),
                   embedding_lookup(*store.find("text.pos_emb"), positions, {b, l}));

  // Additive mask: 0 on real keys, a large negative on PAD columns.
  std::vector<double> maskv(b * h * l * l, 0.0);
  for (std::size_t r = 0; r < b; ++r) {
    for (std::size_t head = 0; head < h; ++head) {
      for (std::size_t i = 0; i < l; ++i) {
        for (std::size_t j = batch.lengths[r]; j < l; ++j) {
          maskv[((r * h + head) * l + i) * l + j] = -1e30;
        }
      }
    }
  }
  Tensor64 mask = Tensor64::from({b, h, l, l}, std::move(maskv));

  for (std::size_t layer = 0; layer < cfg.layers; ++layer) {
    const std::string p = "text.block" + std::to_string(layer);
    auto get = [&](const std::string& s) { return *store.find(p + s); };
    Tensor64 hn = layer_norm_affine(x, get(".ln1.g"), get(".ln1.b"));
    Tensor64 q = split_heads(linear(hn, get(".attn.wq"), get(".attn.bq")), h);
    Tensor64 k = split_heads(linear(hn, get(".attn.wk"), get(".attn.bk")), h);
    Tensor64 v = split_heads(linear(hn, get(".attn.wv"), get(".attn.bv")), h);
    Tensor64 scores = scale(matmul(q, permute(k, {0, 1, 3, 2})), 1.0 / std::sqrt(static_cast<double>(d / h)));
    Tensor64 probs = softmax(add(scores, mask), -1);
    Tensor64 ctx = merge_heads(matmul(probs, v));
    Tensor64 x1 = add(x, linear(ctx, get(".attn.wo"), get(".attn.bo")));
    Tensor64 h2 = layer_norm_affine(x1, get(".ln2.g"), get(".ln2.b"));
    Tensor64 ff = linear(gelu(linear(h2, get(".ffn.w1"), get(".ffn.b1"))), get(".ffn.w2"), get(".ffn.b2"));
    x = add(x1, ff);
  }
  Tensor64 hidden = layer_norm_affine(x, *store.find("text.ln_f.g"), *store.find("text.ln_f.b"));
  return reshape(slice(hidden, 1, 0, 1), {b, d});
}

}  // namespace

TEST_SUITE_BEGIN("text_encoder");

TEST_CASE("extend_positions tiles the base table") {
  RngStream rng(1, "pos");
  auto base = Tensor64::randn({4, 3}, rng, 1.0);
  auto ext = extend_positions(base, 7);
  CHECK(ext.shape() == Shape{7, 3});
  for (std::size_t i = 0; i < 7; ++i) {
    for (std::size_t j = 0; j < 3; ++j) {
      CHECK(ext.values()[i * 3 + j] == base.values()[(i % 4) * 3 + j]);
    }
  }
  auto same = extend_positions(base, 4);
  for (std::size_t i = 0; i < same.size(); ++i) CHECK(same.values()[i] == base.values()[i]);
  CHECK_THROWS_AS(extend_positions(base, 3), ShapeError);
}

TEST_CASE("doubled table satisfies the tiling invariant") {
  RngStream rng(2, "pos");
  auto base = Tensor64::randn({8, 4}, rng, 1.0);
  auto ext = extend_positions(base, 16);
  for (std::size_t i = 0; i < 8 * 4; ++i) CHECK(ext.values()[8 * 4 + i] == ext.values()[i]);
}

TEST_CASE("encode shape contract, batch equivariance, over-length error") {
  TextVocab vocab = demo_vocab();
  RngStream init(3, "init");
  TextEncoder<float> enc(tiny_config(vocab.size(), 4), init);

  auto r1 = vocab.encode("patient presents with fever", 32);
  auto r2 = vocab.encode("plan continue monitor", 32);
  auto out12 = enc.encode(make_text_batch({r1, r2}));
  auto out21 = enc.encode(make_text_batch({r2, r1}));
  CHECK(out12.hidden.shape()[0] == 2);
  CHECK(out12.hidden.shape()[2] == 16);
  CHECK(out12.cls.shape() == Shape{2, 16});
  for (std::size_t j = 0; j < 16; ++j) {
    CHECK(out12.cls.values()[j] == doctest::Approx(out21.cls.values()[16 + j]).epsilon(1e-6));
  }

  std::vector<std::int32_t> too_long(33, TextVocab::kUnk);
  too_long[0] = TextVocab::kCls;
  CHECK_THROWS_AS(enc.encode(make_text_batch({too_long})), ShapeError);
}

TEST_CASE("with a full window the encoder equals the dense reference") {
  TextVocab vocab = demo_vocab();
  RngStream init(4, "init");
  TextEncoder<double> enc(tiny_config(vocab.size(), /*window=*/64), init);

  auto r1 = vocab.encode("patient presents with fever and chills", 32);
  auto r2 = vocab.encode("exam reveals stable", 32);
  TextBatch batch = make_text_batch({r1, r2});
  auto got = enc.encode(batch).cls;
  auto want = dense_reference_encode_cls(enc, batch);
  REQUIRE(got.shape() == want.shape());
  for (std::size_t i = 0; i < got.size(); ++i) {
    CHECK(got.values()[i] == doctest::Approx(want.values()[i]).epsilon(1e-5));
  }
}

TEST_CASE("text mlm loss closed forms") {
  TextVocab vocab = demo_vocab();
  RngStream init(5, "init");
  TextEncoder<double> enc(tiny_config(vocab.size()), init);
  auto* w = enc.params().find("text.mlm.out.w");
  auto* b = enc.params().find("text.mlm.out.b");
  std::fill(w->values_mut().begin(), w->values_mut().end(), 0.0);
  std::fill(b->values_mut().begin(), b->values_mut().end(), 0.0);

  TextBatch batch = make_text_batch({vocab.encode("patient presents with fever and chills", 32)});
  RngStream mrng(6, "masking");
  MaskedBatch masked = mask_text_batch(batch, MaskingPolicy{}, static_cast<std::int32_t>(vocab.size()), mrng);
  REQUIRE(masked.n_masked > 0);
  TextBatch corrupted = batch;
  corrupted.ids = masked.ids;
  CHECK(enc.mlm_loss(corrupted, masked.labels).item() ==
        doctest::Approx(std::log(static_cast<double>(vocab.size()))).epsilon(1e-9));
}

TEST_CASE("text encoder gradients pass finite-difference checking on a tiny config") {
  TextVocab vocab = demo_vocab();
  RngStream init(7, "init");
  TextEncoder<double> enc(tiny_config(vocab.size(), /*window=*/2), init);

  TextBatch batch = make_text_batch({vocab.encode("patient presents with fever", 24)});
  RngStream wrng(8, "loss-weights");
  std::vector<double> lossw(16);
  for (auto& v : lossw) v = wrng.normal();
  auto loss_fn = [&]() {
    auto out = enc.encode(batch);
    return sum(mul(out.cls, Tensor64::from({1, 16}, std::vector<double>(lossw))));
  };

  for (const char* name : {"text.pos_emb", "text.block0.attn.wk", "text.block1.attn.wo"}) {
    Tensor64* param = enc.params().find(name);
    REQUIRE(param != nullptr);
    enc.params().zero_grads();
    loss_fn().backward();
    std::vector<double> analytic(param->grad().begin(), param->grad().end());

    std::vector<double> numeric(param->size());
    const double h = 1e-5;
    for (std::size_t i = 0; i < param->size(); ++i) {
      const double saved = param->values_mut()[i];
      param->values_mut()[i] = saved + h;
      const double up = loss_fn().item();
      param->values_mut()[i] = saved - h;
      const double down = loss_fn().item();
      param->values_mut()[i] = saved;
      numeric[i] = (up - down) / (2.0 * h);
    }
    auto rep = compare_grads(analytic, numeric, 1e-4);
    INFO(name, " max_rel_err=", rep.max_rel_err);
    CHECK(rep.pass);
  }
}

TEST_SUITE_END();
