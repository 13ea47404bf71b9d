#pragma once

// Diagnostic-code sequence encoder: one token per ICD code, day offsets
// relative to the current encounter feeding sinusoidal position embeddings,
// token types separating the current encounter from the rest, and a dense
// (full-window) pre-norm transformer stack with an MLM head.

#include <cstdint>
#include <string>
#include <vector>

#include "icdc/masking.hpp"
#include "icdc/synth.hpp"
#include "icdc/transformer.hpp"
#include "icdc/vocab.hpp"

namespace icdc {

struct CodeEncoderConfig {
  std::size_t layers = 2;
  std::size_t heads = 4;
  std::size_t hidden = 64;
  std::size_t ffn = 256;
  std::size_t max_seq_len = 512;
  std::size_t vocab = 0;
  double dropout = 0.1;

  void validate() const {
    if (hidden % heads != 0) throw ConfigError("CodeEncoderConfig: hidden must be divisible by heads");
    if (hidden % 2 != 0) throw ConfigError("CodeEncoderConfig: hidden must be even for sinusoidal offsets");
    if (vocab == 0) throw ConfigError("CodeEncoderConfig: vocab not set");
  }
};

// One patient view: every code of the patient with offsets/types relative to
// a designated current encounter. CLS is added at batch assembly.
struct EncounterSequence {
  std::vector<std::int32_t> token_ids;    // one id per code
  std::vector<std::int64_t> day_offsets;  // 0 on the current encounter, negative past, positive future
  std::vector<std::int8_t> token_types;   // 1 current, 0 other
  std::string patient_id;
  std::size_t current_encounter = 0;
};

// Padded model input, CLS at position 0 of each row.
struct CodeBatch {
  std::vector<std::int32_t> ids;       // [batch * max_len]
  std::vector<std::int64_t> offsets;   // [batch * max_len]
  std::vector<std::int32_t> types;     // [batch * max_len]
  std::vector<std::size_t> lengths;    // real length per row (incl. CLS)
  std::size_t batch = 0;
  std::size_t max_len = 0;
};

// Vaswani-style embedding of a signed day offset:
//   pe[2i] = sin(offset / 10000^(2i/d)),  pe[2i+1] = cos(offset / 10000^(2i/d)).
inline std::vector<double> sinusoidal_embedding(std::int64_t offset, std::size_t d) {
  if (d % 2 != 0) throw ShapeError("sinusoidal_embedding: d must be even");
  std::vector<double> pe(d);
  for (std::size_t i = 0; i < d / 2; ++i) {
    const double freq = std::pow(10000.0, -2.0 * static_cast<double>(i) / static_cast<double>(d));
    pe[2 * i] = std::sin(static_cast<double>(offset) * freq);
    pe[2 * i + 1] = std::cos(static_cast<double>(offset) * freq);
  }
  return pe;
}

// k variants per patient, current encounters sampled without replacement.
// Token ids cover the patient's full history in day order; when the sequence
// exceeds max_len - 1 a window centered on the current encounter is kept.
std::vector<EncounterSequence> build_sequence_variants(const Patient& patient, const CodeVocab& vocab,
                                                       std::size_t k, std::size_t max_len, RngStream& rng);

// Single-encounter view used for contrastive pairing: offsets all 0, types all 1.
EncounterSequence single_encounter_sequence(const std::vector<std::string>& codes, const CodeVocab& vocab,
                                            const std::string& patient_id = {});

CodeBatch make_code_batch(const std::vector<const EncounterSequence*>& sequences);
CodeBatch make_code_batch(const std::vector<EncounterSequence>& sequences);

// Per-row exact-count MLM corruption; CLS and PAD are never selected.
MaskedBatch mask_code_batch(const CodeBatch& batch, const MaskingPolicy& policy, std::int32_t vocab_size,
                            RngStream& rng);

template <class S>
class CodeEncoder {
 public:
  CodeEncoder(CodeEncoderConfig config, RngStream& init_rng) : config_(config) {
    config_.validate();
    tok_emb_ = store_.randn("code.tok_emb", {config_.vocab, config_.hidden}, init_rng);
    type_emb_ = store_.randn("code.type_emb", {2, config_.hidden}, init_rng);
    for (std::size_t l = 0; l < config_.layers; ++l) {
      blocks_.push_back(TransformerBlock<S>::init(store_, "code.block" + std::to_string(l), config_.hidden,
                                                  config_.heads, config_.ffn, init_rng));
    }
    ln_f_g_ = store_.filled("code.ln_f.g", {config_.hidden}, S(1));
    ln_f_b_ = store_.filled("code.ln_f.b", {config_.hidden}, S(0));
    head_ = MlmHead<S>::init(store_, "code.mlm", config_.hidden, config_.vocab, init_rng);
  }

  const CodeEncoderConfig& config() const { return config_; }
  ParamStore<S>& params() { return store_; }
  const ParamStore<S>& params() const { return store_; }

  struct Output {
    Tensor<S> hidden;  // [B, L, d]
    Tensor<S> cls;     // [B, d]
  };

  Output encode(const CodeBatch& batch, bool train_mode = false, RngStream* dropout_rng = nullptr) const {
    const std::size_t b = batch.batch, l = batch.max_len, d = config_.hidden;
    Tensor<S> x = embedding_lookup(tok_emb_, batch.ids, {b, l});
    x = add(x, position_constant(batch));
    x = add(x, embedding_lookup(type_emb_, batch.types, {b, l}));
    if (train_mode && config_.dropout > 0.0 && dropout_rng) x = dropout(x, config_.dropout, *dropout_rng);

    std::vector<std::vector<std::int32_t>> globals(b, {0});
    AttentionSpec attn{l, &globals, &batch.lengths};
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

  // Mean cross-entropy over masked positions; throws when nothing is masked.
  Tensor<S> mlm_loss(const CodeBatch& corrupted, const std::vector<std::int32_t>& labels,
                     bool train_mode = false, RngStream* dropout_rng = nullptr) const {
    Output out = encode(corrupted, train_mode, dropout_rng);
    return cross_entropy(mlm_logits(out.hidden), labels, MaskingPolicy{}.ignore_index);
  }

 private:
  Tensor<S> position_constant(const CodeBatch& batch) const {
    const std::size_t d = config_.hidden;
    std::vector<S> values(batch.batch * batch.max_len * d);
    for (std::size_t pos = 0; pos < batch.batch * batch.max_len; ++pos) {
      const auto pe = sinusoidal_embedding(batch.offsets[pos], d);
      for (std::size_t j = 0; j < d; ++j) values[pos * d + j] = static_cast<S>(pe[j]);
    }
    return Tensor<S>::from({batch.batch, batch.max_len, d}, std::move(values));
  }

  CodeEncoderConfig config_;
  ParamStore<S> store_;
  Tensor<S> tok_emb_, type_emb_, ln_f_g_, ln_f_b_;
  std::vector<TransformerBlock<S>> blocks_;
  MlmHead<S> head_;
};

inline double perplexity(double mlm_loss) { return std::exp(mlm_loss); }

}  // namespace icdc
