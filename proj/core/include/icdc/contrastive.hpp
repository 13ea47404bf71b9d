#pragma once

// Joint pre-training of the two encoders: projection into the shared
// embedding space, symmetric InfoNCE over in-batch pairs, uncertainty
// weighting of the contrastive and text-MLM losses, and the staged trainer.

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "icdc/code_encoder.hpp"
#include "icdc/optim.hpp"
#include "icdc/text_encoder.hpp"

namespace icdc {

template <class S>
struct ProjectionHead {
  Tensor<S> w, b;

  static ProjectionHead init(ParamStore<S>& store, const std::string& prefix, std::size_t in_dim,
                             std::size_t out_dim, RngStream& rng) {
    return {store.randn(prefix + ".w", {in_dim, out_dim}, rng), store.filled(prefix + ".b", {out_dim}, S(0))};
  }

  // Unit-norm rows of the shared space.
  Tensor<S> project(const Tensor<S>& cls) const { return l2_normalize(linear(cls, w, b)); }
};

template <class S>
struct TemperatureParam {
  static constexpr double kTauMin = 0.01;
  static constexpr double kTauMax = 1.0;
  static constexpr double kTauInit = 0.07;

  Tensor<S> log_tau;

  static TemperatureParam init(ParamStore<S>& store) {
    return {store.add("joint.log_tau",
                      Tensor<S>::filled({1}, static_cast<S>(std::log(kTauInit)), /*requires_grad=*/true))};
  }

  double tau() const { return std::exp(static_cast<double>(log_tau.values()[0])); }

  // exp(-log_tau) as a graph node, so tau receives gradients.
  Tensor<S> inverse_tau() const { return icdc::exp(scale(log_tau, S(-1))); }

  void clamp() {
    auto v = log_tau.values_mut();
    const S lo = static_cast<S>(std::log(kTauMin)), hi = static_cast<S>(std::log(kTauMax));
    if (v[0] < lo) v[0] = lo;
    if (v[0] > hi) v[0] = hi;
  }
};

template <class S>
struct LossWeights {
  Tensor<S> s_contrastive, s_text_mlm;

  static LossWeights init(ParamStore<S>& store) {
    return {store.filled("joint.s_contrastive", {1}, S(0)), store.filled("joint.s_text_mlm", {1}, S(0))};
  }
};

// Symmetric InfoNCE: rows of t_proj and d_proj are matched pairs. With
// S = T D^T / tau, the loss is the mean of row-wise and column-wise
// cross-entropy against the diagonal.
template <class S>
Tensor<S> info_nce(const Tensor<S>& t_proj, const Tensor<S>& d_proj, const Tensor<S>& inverse_tau) {
  if (t_proj.rank() != 2 || t_proj.shape() != d_proj.shape()) {
    throw ShapeError("info_nce: projections must share shape [N, p]");
  }
  const std::size_t n = t_proj.shape()[0], p = t_proj.shape()[1];
  if (n < 2) throw ShapeError("info_nce: need at least 2 pairs for in-batch negatives");
  for (const Tensor<S>& m : {t_proj, d_proj}) {
    for (std::size_t r = 0; r < n; ++r) {
      double ss = 0.0;
      for (std::size_t j = 0; j < p; ++j) {
        ss += static_cast<double>(m.values()[r * p + j]) * static_cast<double>(m.values()[r * p + j]);
      }
      if (std::abs(std::sqrt(ss) - 1.0) > 1e-3) {
        throw ShapeError("info_nce: projection rows must be unit-norm");
      }
    }
  }
  Tensor<S> logits = mul(matmul(t_proj, transpose(d_proj)), inverse_tau);
  std::vector<std::int32_t> diagonal(n);
  for (std::size_t i = 0; i < n; ++i) diagonal[i] = static_cast<std::int32_t>(i);
  Tensor<S> row_ce = cross_entropy(logits, diagonal);
  Tensor<S> col_ce = cross_entropy(transpose(logits), diagonal);
  return scale(add(row_ce, col_ce), S(0.5));
}

template <class S>
Tensor<S> info_nce(const Tensor<S>& t_proj, const Tensor<S>& d_proj, double tau) {
  return info_nce(t_proj, d_proj, Tensor<S>::scalar(static_cast<S>(1.0 / tau)));
}

// Uncertainty weighting: total = sum_i exp(-s_i) * L_i + s_i. The stationary
// point in s_i sits at ln L_i.
template <class S>
Tensor<S> combine_losses(const std::vector<std::pair<Tensor<S>, Tensor<S>>>& loss_and_s) {
  if (loss_and_s.empty()) throw std::invalid_argument("combine_losses: no loss terms");
  Tensor<S> total;
  for (const auto& [loss, s] : loss_and_s) {
    if (loss.size() != 1 || s.size() != 1) throw ShapeError("combine_losses: losses and weights are scalars");
    if (loss.values()[0] < S(0)) {
      throw std::invalid_argument("combine_losses: loss terms must be nonnegative");
    }
    Tensor<S> term = add(mul(loss, icdc::exp(scale(s, S(-1)))), s);
    total = total.defined() ? add(total, term) : term;
  }
  return total;
}

// ---------------------------------------------------------------------------
// Dual model: both encoders plus the joint parameters.
// ---------------------------------------------------------------------------
template <class S>
class DualModel {
 public:
  DualModel(CodeEncoderConfig code_cfg, TextEncoderConfig text_cfg, std::uint64_t init_seed)
      : init_rng_(init_seed, "init"),
        code_(code_cfg, init_rng_),
        text_(text_cfg, init_rng_),
        code_proj_(ProjectionHead<S>::init(joint_, "joint.code_proj", code_cfg.hidden, code_cfg.hidden,
                                           init_rng_)),
        text_proj_(ProjectionHead<S>::init(joint_, "joint.text_proj", text_cfg.hidden, code_cfg.hidden,
                                           init_rng_)),
        temperature_(TemperatureParam<S>::init(joint_)),
        loss_weights_(LossWeights<S>::init(joint_)) {}

  CodeEncoder<S>& code() { return code_; }
  const CodeEncoder<S>& code() const { return code_; }
  TextEncoder<S>& text() { return text_; }
  const TextEncoder<S>& text() const { return text_; }
  ProjectionHead<S>& code_proj() { return code_proj_; }
  ProjectionHead<S>& text_proj() { return text_proj_; }
  TemperatureParam<S>& temperature() { return temperature_; }
  LossWeights<S>& loss_weights() { return loss_weights_; }
  ParamStore<S>& joint_params() { return joint_; }

  NamedParams<S> all_params() {
    NamedParams<S> all;
    for (auto& kv : code_.params().items()) all.push_back(kv);
    for (auto& kv : text_.params().items()) all.push_back(kv);
    for (auto& kv : joint_.items()) all.push_back(kv);
    return all;
  }

  // Unit-norm projections of a batch.
  Tensor<S> project_codes(const CodeBatch& batch) { return code_proj_.project(code_.encode(batch).cls); }
  Tensor<S> project_notes(const TextBatch& batch) { return text_proj_.project(text_.encode(batch).cls); }

  void zero_grads() {
    code_.params().zero_grads();
    text_.params().zero_grads();
    joint_.zero_grads();
  }

 private:
  RngStream init_rng_;
  CodeEncoder<S> code_;
  TextEncoder<S> text_;
  ParamStore<S> joint_;
  ProjectionHead<S> code_proj_, text_proj_;
  TemperatureParam<S> temperature_;
  LossWeights<S> loss_weights_;
};

// One contrastive example: a note and the diagnostic codes of the same
// encounter (offsets all 0, token types all 1).
struct TrainingPair {
  std::string id;
  std::vector<std::int32_t> note_ids;  // CLS-prefixed
  EncounterSequence codes;
};

inline std::vector<TrainingPair> build_pairs(const std::vector<NoteRecord>& notes, const TextVocab& text_vocab,
                                             const CodeVocab& code_vocab, std::size_t max_note_len) {
  std::vector<TrainingPair> pairs;
  pairs.reserve(notes.size());
  for (const auto& n : notes) {
    pairs.push_back({n.note_id, text_vocab.encode(n.text, max_note_len),
                     single_encounter_sequence(n.codes, code_vocab, n.note_id)});
  }
  return pairs;
}

struct TrainConfig {
  std::size_t steps = 300;
  std::size_t batch_size = 16;
  std::size_t grad_accum = 1;
  std::size_t warmup_steps = 30;
  double peak_lr = 1e-4;
  double weight_decay = 0.1;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-6;
  double clip_norm = 1.0;
  std::size_t eval_interval = 50;
  std::uint64_t seed = 0;

  void validate() const {
    if (steps == 0 || batch_size == 0 || grad_accum == 0) {
      throw ConfigError("TrainConfig: steps, batch_size and grad_accum must be positive");
    }
    if (warmup_steps > steps) throw ConfigError("TrainConfig: warmup_steps exceeds steps");
  }

  OptimConfig optim() const {
    return {peak_lr, warmup_steps, steps, weight_decay, beta1, beta2, adam_eps, clip_norm};
  }
};

struct CurvePoint {
  std::size_t step = 0;
  double loss_total = 0, loss_contrastive = 0, loss_mlm = 0;
  double tau = 0, s_mlm = 0, s_contrastive = 0, lr = 0;
};

inline std::string curve_csv(const std::vector<CurvePoint>& curve) {
  std::ostringstream os;
  os << "step,loss_total,loss_contrastive,loss_mlm,tau,s_mlm,s_contrastive,lr\n";
  char buf[256];
  for (const auto& p : curve) {
    std::snprintf(buf, sizeof(buf), "%zu,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g\n", p.step, p.loss_total,
                  p.loss_contrastive, p.loss_mlm, p.tau, p.s_mlm, p.s_contrastive, p.lr);
    os << buf;
  }
  return os.str();
}

struct ContrastiveResult {
  std::vector<CurvePoint> curve;
  std::vector<std::pair<std::size_t, double>> dev_curve;  // (step, dev contrastive loss)
  double best_dev_loss = 0.0;
  std::size_t best_step = 0;
};

// Deterministic batch dealer: per-epoch Fisher-Yates over the pair indices.
class BatchSampler {
 public:
  BatchSampler(std::size_t n, std::size_t batch, RngStream rng)
      : n_(n), batch_(batch), rng_(std::move(rng)) {
    order_.resize(n_);
    for (std::size_t i = 0; i < n_; ++i) order_[i] = i;
    rng_.shuffle(order_.begin(), order_.end());
  }

  std::vector<std::size_t> next() {
    std::vector<std::size_t> idx;
    idx.reserve(batch_);
    for (std::size_t i = 0; i < batch_; ++i) {
      if (cursor_ == n_) {
        rng_.shuffle(order_.begin(), order_.end());
        cursor_ = 0;
      }
      idx.push_back(order_[cursor_++]);
    }
    return idx;
  }

 private:
  std::size_t n_, batch_;
  RngStream rng_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
};

// Mean dev contrastive loss over fixed-order batches, dropout off.
template <class S>
double dev_contrastive_loss(DualModel<S>& model, const std::vector<TrainingPair>& dev,
                            std::size_t batch_size) {
  double total = 0.0;
  std::size_t batches = 0;
  for (std::size_t start = 0; start + batch_size <= dev.size(); start += batch_size) {
    std::vector<std::vector<std::int32_t>> notes;
    std::vector<const EncounterSequence*> codes;
    for (std::size_t i = start; i < start + batch_size; ++i) {
      notes.push_back(dev[i].note_ids);
      codes.push_back(&dev[i].codes);
    }
    Tensor<S> t_n = model.project_notes(make_text_batch(notes));
    Tensor<S> d_n = model.project_codes(make_code_batch(codes));
    total += static_cast<double>(info_nce(t_n, d_n, model.temperature().inverse_tau()).item());
    ++batches;
  }
  if (batches == 0) throw DataError("dev_contrastive_loss: dev set smaller than one batch");
  return total / static_cast<double>(batches);
}

// Text -> code in-batch retrieval accuracy at top-1 over fixed batches.
template <class S>
double in_batch_retrieval_top1(DualModel<S>& model, const std::vector<TrainingPair>& pairs,
                               std::size_t batch_size) {
  std::size_t hits = 0, total = 0;
  for (std::size_t start = 0; start + batch_size <= pairs.size(); start += batch_size) {
    std::vector<std::vector<std::int32_t>> notes;
    std::vector<const EncounterSequence*> codes;
    for (std::size_t i = start; i < start + batch_size; ++i) {
      notes.push_back(pairs[i].note_ids);
      codes.push_back(&pairs[i].codes);
    }
    Tensor<S> t_n = model.project_notes(make_text_batch(notes));
    Tensor<S> d_n = model.project_codes(make_code_batch(codes));
    Tensor<S> sims = matmul(t_n, transpose(d_n));
    for (std::size_t i = 0; i < batch_size; ++i) {
      std::size_t best = 0;
      for (std::size_t j = 1; j < batch_size; ++j) {
        if (sims.values()[i * batch_size + j] > sims.values()[i * batch_size + best]) best = j;
      }
      hits += best == i;
      ++total;
    }
  }
  if (total == 0) throw DataError("in_batch_retrieval_top1: no full batch available");
  return static_cast<double>(hits) / static_cast<double>(total);
}

// Joint contrastive + text-MLM training. The model is left holding the
// parameters of the best dev-loss step.
template <class S>
ContrastiveResult train_contrastive(DualModel<S>& model, const std::vector<TrainingPair>& train_pairs,
                                    const std::vector<TrainingPair>& dev_pairs, const TrainConfig& cfg,
                                    const MaskingPolicy& masking = {},
                                    std::function<void(const std::string&)> log = {}) {
  cfg.validate();
  if (train_pairs.size() < cfg.batch_size) throw DataError("train_contrastive: fewer pairs than batch size");
  for (const auto& pair : train_pairs) {
    for (std::size_t t = 0; t < pair.codes.token_ids.size(); ++t) {
      if (pair.codes.day_offsets[t] != 0 || pair.codes.token_types[t] != 1) {
        throw DataError("train_contrastive: pair " + pair.id + " is not a single-encounter sequence");
      }
    }
  }

  AdamW<S> opt(cfg.optim());
  NamedParams<S> params = model.all_params();
  BatchSampler sampler(train_pairs.size(), cfg.batch_size, RngStream(cfg.seed, "sampling"));
  RngStream mask_rng(cfg.seed, "masking");
  RngStream dropout_rng(cfg.seed, "dropout");
  const auto text_vocab_size = static_cast<std::int32_t>(model.text().config().vocab);

  ContrastiveResult result;
  result.best_dev_loss = std::numeric_limits<double>::infinity();
  std::vector<std::vector<S>> best_snapshot;

  for (std::size_t step = 1; step <= cfg.steps; ++step) {
    CurvePoint point;
    point.step = step;
    for (std::size_t micro = 0; micro < cfg.grad_accum; ++micro) {
      const auto idx = sampler.next();
      std::vector<std::vector<std::int32_t>> notes;
      std::vector<const EncounterSequence*> codes;
      for (std::size_t i : idx) {
        notes.push_back(train_pairs[i].note_ids);
        codes.push_back(&train_pairs[i].codes);
      }
      if (log) {
        for (std::size_t a = 0; a < idx.size(); ++a) {
          for (std::size_t b = a + 1; b < idx.size(); ++b) {
            auto sa = train_pairs[idx[a]].codes.token_ids;
            auto sb = train_pairs[idx[b]].codes.token_ids;
            std::sort(sa.begin(), sa.end());
            std::sort(sb.begin(), sb.end());
            if (sa == sb) {
              log("step " + std::to_string(step) + ": duplicate code set in batch (" +
                  train_pairs[idx[a]].id + ", " + train_pairs[idx[b]].id + ")");
            }
          }
        }
      }

      TextBatch text_batch = make_text_batch(notes);
      CodeBatch code_batch = make_code_batch(codes);
      Tensor<S> t_n = model.text_proj().project(model.text().encode(text_batch, true, &dropout_rng).cls);
      Tensor<S> d_n = model.code_proj().project(model.code().encode(code_batch, true, &dropout_rng).cls);
      Tensor<S> contrastive = info_nce(t_n, d_n, model.temperature().inverse_tau());

      MaskedBatch masked = mask_text_batch(text_batch, masking, text_vocab_size, mask_rng);
      TextBatch corrupted = text_batch;
      corrupted.ids = masked.ids;
      Tensor<S> mlm = model.text().mlm_loss(corrupted, masked.labels, true, &dropout_rng);

      Tensor<S> total = combine_losses<S>({{contrastive, model.loss_weights().s_contrastive},
                                           {mlm, model.loss_weights().s_text_mlm}});
      if (cfg.grad_accum > 1) total = scale(total, static_cast<S>(1.0 / static_cast<double>(cfg.grad_accum)));
      total.backward();

      // With accumulation the graph loss is pre-scaled by 1/accum, so summing
      // the micro losses recovers the mean unscaled total either way.
      point.loss_total += static_cast<double>(total.item());
      point.loss_contrastive += static_cast<double>(contrastive.item()) / static_cast<double>(cfg.grad_accum);
      point.loss_mlm += static_cast<double>(mlm.item()) / static_cast<double>(cfg.grad_accum);
    }
    clip_global_norm(params, cfg.clip_norm);
    opt.step(params);
    model.temperature().clamp();
    model.zero_grads();

    point.tau = model.temperature().tau();
    point.s_mlm = static_cast<double>(model.loss_weights().s_text_mlm.values()[0]);
    point.s_contrastive = static_cast<double>(model.loss_weights().s_contrastive.values()[0]);
    point.lr = opt.last_lr();
    result.curve.push_back(point);

    if (step % cfg.eval_interval == 0 || step == cfg.steps) {
      const double dev_loss = dev_contrastive_loss(model, dev_pairs, cfg.batch_size);
      result.dev_curve.emplace_back(step, dev_loss);
      if (dev_loss < result.best_dev_loss) {
        result.best_dev_loss = dev_loss;
        result.best_step = step;
        best_snapshot = snapshot_params(params);
      }
      if (log) {
        log("step " + std::to_string(step) + ": dev contrastive loss " + std::to_string(dev_loss));
      }
    }
  }
  if (!best_snapshot.empty()) restore_params(params, best_snapshot);
  return result;
}

// Converts a model to a longer maximum document length: position table is
// tiled, every other parameter is copied, optimizer state starts fresh.
template <class S>
void stage_lengthen(DualModel<S>& model, std::size_t new_max_len) {
  model.text().lengthen(new_max_len);
}

}  // namespace icdc
