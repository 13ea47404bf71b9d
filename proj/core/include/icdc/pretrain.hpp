#pragma once

// Masked-language-model pre-training loops for the two encoders. Checkpoint
// selection follows dev perplexity (the model keeps its best-dev weights).

#include <functional>
#include <limits>

#include "icdc/code_encoder.hpp"
#include "icdc/contrastive.hpp"
#include "icdc/optim.hpp"
#include "icdc/text_encoder.hpp"

namespace icdc {

struct MlmCurvePoint {
  std::size_t step = 0;
  double loss = 0.0;
  double perplexity = 0.0;
  double lr = 0.0;
};

struct MlmResult {
  std::vector<MlmCurvePoint> curve;
  std::vector<std::pair<std::size_t, double>> dev_curve;  // (step, dev loss)
  double best_dev_loss = std::numeric_limits<double>::infinity();
  std::size_t best_step = 0;
};

inline std::string mlm_curve_csv(const std::vector<MlmCurvePoint>& curve) {
  std::ostringstream os;
  os << "step,loss,perplexity,lr\n";
  char buf[128];
  for (const auto& p : curve) {
    std::snprintf(buf, sizeof(buf), "%zu,%.9g,%.9g,%.9g\n", p.step, p.loss, p.perplexity, p.lr);
    os << buf;
  }
  return os.str();
}

namespace detail {

// Shared skeleton: `loss_of(indices, train_mode)` builds the masked batch and
// returns the scalar loss for those examples.
template <class S, class LossFn>
MlmResult run_mlm_loop(NamedParams<S>& params, std::size_t n_train, std::size_t n_dev, const TrainConfig& cfg,
                       LossFn&& loss_of, std::function<void(const std::string&)> log) {
  cfg.validate();
  if (n_train < cfg.batch_size) throw DataError("mlm training: fewer sequences than batch size");

  AdamW<S> opt(cfg.optim());
  BatchSampler sampler(n_train, cfg.batch_size, RngStream(cfg.seed, "sampling"));
  MlmResult result;
  std::vector<std::vector<S>> best_snapshot;

  auto dev_loss = [&]() {
    double total = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start + cfg.batch_size <= n_dev; start += cfg.batch_size) {
      std::vector<std::size_t> idx(cfg.batch_size);
      for (std::size_t i = 0; i < cfg.batch_size; ++i) idx[i] = start + i;
      total += loss_of(idx, /*train_mode=*/false, /*dev=*/true);
      ++batches;
    }
    if (batches == 0) throw DataError("mlm training: dev set smaller than one batch");
    return total / static_cast<double>(batches);
  };

  for (std::size_t step = 1; step <= cfg.steps; ++step) {
    double step_loss = 0.0;
    for (std::size_t micro = 0; micro < cfg.grad_accum; ++micro) {
      step_loss += loss_of(sampler.next(), /*train_mode=*/true, /*dev=*/false) /
                   static_cast<double>(cfg.grad_accum);
    }
    clip_global_norm(params, cfg.clip_norm);
    opt.step(params);
    for (auto& [name, t] : params) t.zero_grad();

    result.curve.push_back({step, step_loss, std::exp(step_loss), opt.last_lr()});
    if (step % cfg.eval_interval == 0 || step == cfg.steps) {
      const double dl = dev_loss();
      result.dev_curve.emplace_back(step, dl);
      if (dl < result.best_dev_loss) {
        result.best_dev_loss = dl;
        result.best_step = step;
        best_snapshot = snapshot_params(params);
      }
      if (log) log("step " + std::to_string(step) + ": dev mlm loss " + std::to_string(dl));
    }
  }
  if (!best_snapshot.empty()) restore_params(params, best_snapshot);
  return result;
}

}  // namespace detail

template <class S>
MlmResult train_code_mlm(CodeEncoder<S>& encoder, const std::vector<EncounterSequence>& train,
                         const std::vector<EncounterSequence>& dev, const TrainConfig& cfg,
                         const MaskingPolicy& masking = {},
                         std::function<void(const std::string&)> log = {}) {
  NamedParams<S> params = encoder.params().items();
  RngStream mask_rng(cfg.seed, "masking");
  RngStream dropout_rng(cfg.seed, "dropout");
  const auto vocab_size = static_cast<std::int32_t>(encoder.config().vocab);

  auto loss_of = [&](const std::vector<std::size_t>& idx, bool train_mode, bool dev_eval) {
    std::vector<const EncounterSequence*> seqs;
    seqs.reserve(idx.size());
    for (std::size_t i : idx) seqs.push_back(dev_eval ? &dev[i] : &train[i]);
    CodeBatch batch = make_code_batch(seqs);
    // Dev masking draws from its own stream so evaluation does not perturb
    // the training corruption sequence.
    RngStream dev_rng(cfg.seed, "masking-dev", idx[0]);
    MaskedBatch masked = mask_code_batch(batch, masking, vocab_size, dev_eval ? dev_rng : mask_rng);
    CodeBatch corrupted = batch;
    corrupted.ids = masked.ids;
    Tensor<S> loss = encoder.mlm_loss(corrupted, masked.labels, train_mode, &dropout_rng);
    if (train_mode) {
      Tensor<S> scaled = cfg.grad_accum > 1 ? scale(loss, static_cast<S>(1.0 / cfg.grad_accum)) : loss;
      scaled.backward();
    }
    return static_cast<double>(loss.item());
  };
  return detail::run_mlm_loop<S>(params, train.size(), dev.size(), cfg, loss_of, std::move(log));
}

template <class S>
MlmResult train_text_mlm(TextEncoder<S>& encoder, const std::vector<std::vector<std::int32_t>>& train,
                         const std::vector<std::vector<std::int32_t>>& dev, const TrainConfig& cfg,
                         const MaskingPolicy& masking = {},
                         std::function<void(const std::string&)> log = {}) {
  NamedParams<S> params = encoder.params().items();
  RngStream mask_rng(cfg.seed, "masking");
  RngStream dropout_rng(cfg.seed, "dropout");
  const auto vocab_size = static_cast<std::int32_t>(encoder.config().vocab);

  auto loss_of = [&](const std::vector<std::size_t>& idx, bool train_mode, bool dev_eval) {
    std::vector<std::vector<std::int32_t>> rows;
    rows.reserve(idx.size());
    for (std::size_t i : idx) rows.push_back(dev_eval ? dev[i] : train[i]);
    TextBatch batch = make_text_batch(rows);
    RngStream dev_rng(cfg.seed, "masking-dev", idx[0]);
    MaskedBatch masked = mask_text_batch(batch, masking, vocab_size, dev_eval ? dev_rng : mask_rng);
    TextBatch corrupted = batch;
    corrupted.ids = masked.ids;
    Tensor<S> loss = encoder.mlm_loss(corrupted, masked.labels, train_mode, &dropout_rng);
    if (train_mode) {
      Tensor<S> scaled = cfg.grad_accum > 1 ? scale(loss, static_cast<S>(1.0 / cfg.grad_accum)) : loss;
      scaled.backward();
    }
    return static_cast<double>(loss.item());
  };
  return detail::run_mlm_loop<S>(params, train.size(), dev.size(), cfg, loss_of, std::move(log));
}

}  // namespace icdc
