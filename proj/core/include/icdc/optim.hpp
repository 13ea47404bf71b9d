#pragma once

// AdamW with linear warmup / linear decay and global-norm gradient clipping.

#include <cmath>
#include <string>
#include <vector>

#include "icdc/tensor.hpp"

namespace icdc {

struct OptimConfig {
  double peak_lr = 1e-4;
  std::size_t warmup_steps = 0;
  std::size_t total_steps = 1;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-6;
  double clip_norm = 1.0;
};

// Linear ramp to peak_lr at step == warmup, then linear decay to 0 at
// step == total. Steps are 1-based update indices.
inline double lr_at(const OptimConfig& cfg, std::size_t step) {
  if (cfg.warmup_steps > 0 && step <= cfg.warmup_steps) {
    return cfg.peak_lr * static_cast<double>(step) / static_cast<double>(cfg.warmup_steps);
  }
  if (step >= cfg.total_steps) return 0.0;
  const double remaining = static_cast<double>(cfg.total_steps - step);
  const double span = static_cast<double>(cfg.total_steps - cfg.warmup_steps);
  return cfg.peak_lr * remaining / span;
}

template <class S>
using NamedParams = std::vector<std::pair<std::string, Tensor<S>>>;

// Rescales all gradients so their joint L2 norm is at most max_norm.
// Returns the pre-clip norm. Non-finite norms are a numeric error.
template <class S>
double clip_global_norm(NamedParams<S>& params, double max_norm) {
  double sq = 0.0;
  for (auto& [name, t] : params) {
    if (!t.has_grad()) continue;
    for (S g : t.grad()) sq += static_cast<double>(g) * static_cast<double>(g);
  }
  const double norm = std::sqrt(sq);
  if (!std::isfinite(norm)) throw NumericError("clip_global_norm: gradient norm is not finite");
  if (norm > max_norm && norm > 0.0) {
    const S factor = static_cast<S>(max_norm / norm);
    for (auto& [name, t] : params) {
      if (!t.has_grad()) continue;
      for (S& g : t.grad_mut()) g *= factor;
    }
  }
  return norm;
}

// Decoupled weight decay skips biases and layer-norm parameters, recognized
// by their trailing name segment ("b*", "g").
inline bool decays(const std::string& name) {
  const auto dot = name.rfind('.');
  const std::string leaf = dot == std::string::npos ? name : name.substr(dot + 1);
  return !(leaf == "g" || (!leaf.empty() && leaf[0] == 'b'));
}

template <class S>
class AdamW {
 public:
  explicit AdamW(OptimConfig cfg) : cfg_(cfg) {}

  const OptimConfig& config() const { return cfg_; }
  std::size_t step_count() const { return t_; }
  double last_lr() const { return last_lr_; }

  void reset() {
    t_ = 0;
    m_.clear();
    v_.clear();
  }

  void step(NamedParams<S>& params) {
    ++t_;
    last_lr_ = lr_at(cfg_, t_);
    if (m_.size() != params.size()) {
      m_.assign(params.size(), {});
      v_.assign(params.size(), {});
    }
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t p = 0; p < params.size(); ++p) {
      auto& [name, t] = params[p];
      if (!t.has_grad()) continue;
      auto g = t.grad();
      auto w = t.values_mut();
      auto& m = m_[p];
      auto& v = v_[p];
      if (m.size() != w.size()) {
        m.assign(w.size(), 0.0);
        v.assign(w.size(), 0.0);
      }
      const double wd = decays(name) ? cfg_.weight_decay : 0.0;
      for (std::size_t i = 0; i < w.size(); ++i) {
        const double gi = static_cast<double>(g[i]);
        m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * gi;
        v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * gi * gi;
        const double mhat = m[i] / bc1;
        const double vhat = v[i] / bc2;
        const double update = mhat / (std::sqrt(vhat) + cfg_.eps) + wd * static_cast<double>(w[i]);
        w[i] = static_cast<S>(static_cast<double>(w[i]) - last_lr_ * update);
      }
    }
  }

 private:
  OptimConfig cfg_;
  std::size_t t_ = 0;
  double last_lr_ = 0.0;
  std::vector<std::vector<double>> m_, v_;
};

template <class S>
std::vector<std::vector<S>> snapshot_params(const NamedParams<S>& params) {
  std::vector<std::vector<S>> snap;
  snap.reserve(params.size());
  for (const auto& [name, t] : params) snap.emplace_back(t.values().begin(), t.values().end());
  return snap;
}

template <class S>
void restore_params(NamedParams<S>& params, const std::vector<std::vector<S>>& snapshot) {
  if (snapshot.size() != params.size()) throw std::logic_error("restore_params: snapshot size mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto w = params[i].second.values_mut();
    std::copy(snapshot[i].begin(), snapshot[i].end(), w.begin());
  }
}

}  // namespace icdc
