#pragma once

// Long-document text encoder: learned position table extensible by tiling,
// sliding-window attention with global tokens, and a text MLM head.

#include <cstdint>
#include <string>
#include <vector>

#include "icdc/masking.hpp"
#include "icdc/transformer.hpp"
#include "icdc/vocab.hpp"

namespace icdc {

struct TextEncoderConfig {
  std::size_t layers = 2;
  std::size_t heads = 4;
  std::size_t hidden = 64;
  std::size_t ffn = 256;
  std::size_t base_positions = 128;
  std::size_t max_positions = 128;  // grows via stage lengthening
  std::size_t window = 8;
  std::size_t vocab = 0;
  double dropout = 0.1;

  void validate() const {
    if (hidden % heads != 0) throw ConfigError("TextEncoderConfig: hidden must be divisible by heads");
    if (window == 0) throw ConfigError("TextEncoderConfig: window must be >= 1");
    if (max_positions < base_positions) {
      throw ConfigError("TextEncoderConfig: max_positions below base_positions");
    }
    if (vocab == 0) throw ConfigError("TextEncoderConfig: vocab not set");
  }
};

struct TextBatch {
  std::vector<std::int32_t> ids;                   // [batch * max_len], PAD-suffixed
  std::vector<std::size_t> lengths;                // real length per row
  std::vector<std::vector<std::int32_t>> globals;  // per row, always contains 0
  std::size_t batch = 0;
  std::size_t max_len = 0;
};

inline TextBatch make_text_batch(const std::vector<std::vector<std::int32_t>>& rows,
                                 std::vector<std::vector<std::int32_t>> globals = {}) {
  if (rows.empty()) throw DataError("make_text_batch: empty batch");
  TextBatch batch;
  batch.batch = rows.size();
  for (const auto& r : rows) batch.max_len = std::max(batch.max_len, r.size());
  batch.ids.assign(batch.batch * batch.max_len, TextVocab::kPad);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r].empty()) throw DataError("make_text_batch: empty row");
    std::copy(rows[r].begin(), rows[r].end(), batch.ids.begin() + static_cast<std::ptrdiff_t>(r * batch.max_len));
    batch.lengths.push_back(rows[r].size());
  }
  batch.globals = globals.empty() ? std::vector<std::vector<std::int32_t>>(batch.batch, {0}) : std::move(globals);
  return batch;
}

// Row i of the result equals base row (i mod P).
template <class S>
std::vector<S> extend_position_rows(const std::vector<S>& base, std::size_t base_len, std::size_t hidden,
                                    std::size_t target_len) {
  if (target_len < base_len) throw ShapeError("extend_positions: target shorter than base table");
  std::vector<S> out(target_len * hidden);
  for (std::size_t i = 0; i < target_len; ++i) {
    const std::size_t src = i % base_len;
    std::copy(base.begin() + static_cast<std::ptrdiff_t>(src * hidden),
              base.begin() + static_cast<std::ptrdiff_t>((src + 1) * hidden),
              out.begin() + static_cast<std::ptrdiff_t>(i * hidden));
  }
  return out;
}

template <class S>
Tensor<S> extend_positions(const Tensor<S>& base_table, std::size_t target_len) {
  if (base_table.rank() != 2) throw ShapeError("extend_positions: table must be [P, d]");
  const std::size_t p = base_table.shape()[0], d = base_table.shape()[1];
  std::vector<S> values(base_table.values().begin(), base_table.values().end());
  return Tensor<S>::from({target_len, d}, extend_position_rows(values, p, d, target_len),
                         /*requires_grad=*/true);
}

template <class S>
class TextEncoder {
 public:
  TextEncoder(TextEncoderConfig config, RngStream& init_rng) : config_(config) {
    config_.validate();
    tok_emb_ = store_.randn("text.tok_emb", {config_.vocab, config_.hidden}, init_rng);
    pos_emb_ = store_.add("text.pos_emb", make_position_table(init_rng));
    for (std::size_t l = 0; l < config_.layers; ++l) {
      blocks_.push_back(TransformerBlock<S>::init(store_, "text.block" + std::to_string(l), config_.hidden,
                                                  config_.heads, config_.ffn, init_rng));
    }
    ln_f_g_ = store_.filled("text.ln_f.g", {config_.hidden}, S(1));
    ln_f_b_ = store_.filled("text.ln_f.b", {config_.hidden}, S(0));
    head_ = MlmHead<S>::init(store_, "text.mlm", config_.hidden, config_.vocab, init_rng);
  }

  const TextEncoderConfig& config() const { return config_; }
  ParamStore<S>& params() { return store_; }
  const ParamStore<S>& params() const { return store_; }

  // Replaces the position table with a tiled copy of the current one.
  void lengthen(std::size_t new_max_positions) {
    if (new_max_positions < config_.max_positions) {
      throw ConfigError("TextEncoder::lengthen: cannot shrink the position table");
    }
    if (new_max_positions == config_.max_positions) return;
    Tensor<S> extended = extend_positions(pos_emb_, new_max_positions);
    Tensor<S>* slot = store_.find("text.pos_emb");
    *slot = extended;
    pos_emb_ = extended;
    config_.max_positions = new_max_positions;
  }

  struct Output {
    Tensor<S> hidden;  // [B, L, d]
    Tensor<S> cls;     // [B, d]
  };

  Output encode(const TextBatch& batch, bool train_mode = false, RngStream* dropout_rng = nullptr) const {
    if (batch.max_len > config_.max_positions) {
      throw ShapeError("TextEncoder::encode: sequence length " + std::to_string(batch.max_len) +
                       " exceeds position table of " + std::to_string(config_.max_positions));
    }
    const std::size_t b = batch.batch, l = batch.max_len, d = config_.hidden;
    std::vector<std::int32_t> positions(b * l);
    for (std::size_t r = 0; r < b; ++r) {
      for (std::size_t c = 0; c < l; ++c) positions[r * l + c] = static_cast<std::int32_t>(c);
    }
    Tensor<S> x = add(embedding_lookup(tok_emb_, batch.ids, {b, l}),
                      embedding_lookup(pos_emb_, positions, {b, l}));
    if (train_mode && config_.dropout > 0.0 && dropout_rng) x = dropout(x, config_.dropout, *dropout_rng);

    AttentionSpec attn{config_.window, &batch.globals, &batch.lengths};
    const double p = train_mode ? config_.dropout : 0.0;
    for (const auto& blk : blocks_) x = blk.forward(x, attn, p, dropout_rng);
    Tensor<S> hidden = layer_norm_affine(x, ln_f_g_, ln_f_b_);
    Tensor<S> cls = reshape(slice(hidden, 1, 0, 1), {b, d});
    return {hidden, cls};
  }

  Tensor<S> mlm_logits(const Tensor<S>& hidden) const {
    const std::size_t b = hidden.shape()[0], l = hidden.shape()[1], d = hidden.shape()[2];
    return head_.logits(reshape(hidden, {b * l, d}));
  }

  Tensor<S> mlm_loss(const TextBatch& corrupted, const std::vector<std::int32_t>& labels,
                     bool train_mode = false, RngStream* dropout_rng = nullptr) const {
    Output out = encode(corrupted, train_mode, dropout_rng);
    return cross_entropy(mlm_logits(out.hidden), labels, MaskingPolicy{}.ignore_index);
  }

  const MlmHead<S>& mlm_head() const { return head_; }

 private:
  Tensor<S> make_position_table(RngStream& rng) const {
    // Learned rows for the base length, tiled out to max_positions so a
    // freshly built long model matches one lengthened from the base model.
    Tensor<S> base = Tensor<S>::randn({config_.base_positions, config_.hidden}, rng, kInitStd);
    if (config_.max_positions == config_.base_positions) {
      return Tensor<S>::from(base.shape(), std::vector<S>(base.values().begin(), base.values().end()),
                             /*requires_grad=*/true);
    }
    return extend_positions(base, config_.max_positions);
  }

  TextEncoderConfig config_;
  ParamStore<S> store_;
  Tensor<S> tok_emb_, pos_emb_, ln_f_g_, ln_f_b_;
  std::vector<TransformerBlock<S>> blocks_;
  MlmHead<S> head_;
};

inline MaskedBatch mask_text_batch(const TextBatch& batch, const MaskingPolicy& policy,
                                   std::int32_t vocab_size, RngStream& rng) {
  return apply_mlm_masking(batch.ids, batch.batch, batch.max_len, batch.lengths, policy, TextVocab::kMask,
                           TextVocab::kNumSpecials, vocab_size, rng);
}

}  // namespace icdc
