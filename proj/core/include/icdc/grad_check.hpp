#pragma once

// Finite-difference gradient verification. Runs in 64-bit precision: central
// differences are too noisy in float to separate real defects from roundoff.

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "icdc/tensor.hpp"

namespace icdc {

struct GradCheckReport {
  bool pass = false;
  double max_rel_err = 0.0;
  std::size_t worst_coord = 0;
  std::vector<double> analytic;
  std::vector<double> numeric;
};

// |a - b| relative to max(|a|, |b|), with an absolute fallback so exactly-zero
// gradients (constant programs) compare cleanly.
inline bool grads_agree(double analytic, double numeric, double tol, double abs_tol, double* rel_err) {
  const double diff = std::abs(analytic - numeric);
  const double denom = std::max(std::abs(analytic), std::abs(numeric));
  *rel_err = denom > 0.0 ? diff / denom : 0.0;
  return diff <= abs_tol || *rel_err <= tol;
}

inline GradCheckReport compare_grads(const std::vector<double>& analytic, const std::vector<double>& numeric,
                                     double tol, double abs_tol = 1e-8) {
  GradCheckReport rep;
  rep.analytic = analytic;
  rep.numeric = numeric;
  rep.pass = true;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    double rel = 0.0;
    const bool ok = grads_agree(analytic[i], numeric[i], tol, abs_tol, &rel);
    if (rel > rep.max_rel_err) {
      rep.max_rel_err = rel;
      rep.worst_coord = i;
    }
    if (!ok) rep.pass = false;
  }
  return rep;
}

using TensorProgram = std::function<Tensor64(const Tensor64&)>;

// Central differences (f(x+h) - f(x-h)) / 2h per coordinate. Exceptions from
// perturbed evaluations are rethrown with the offending coordinate index.
inline std::vector<double> finite_difference_grad(const TensorProgram& fn, const Tensor64& point,
                                                  double h = 1e-5) {
  std::vector<double> base(point.values().begin(), point.values().end());
  std::vector<double> grad(base.size());
  for (std::size_t i = 0; i < base.size(); ++i) {
    auto eval_at = [&](double delta) {
      std::vector<double> vals = base;
      vals[i] += delta;
      try {
        return fn(Tensor64::from(point.shape(), std::move(vals))).item();
      } catch (const std::exception& e) {
        throw std::runtime_error("finite_difference_grad: coordinate " + std::to_string(i) + ": " + e.what());
      }
    };
    grad[i] = (eval_at(h) - eval_at(-h)) / (2.0 * h);
  }
  return grad;
}

inline std::vector<double> analytic_grad(const TensorProgram& fn, const Tensor64& point) {
  Tensor64 x = Tensor64::from(point.shape(), std::vector<double>(point.values().begin(), point.values().end()),
                              /*requires_grad=*/true);
  Tensor64 loss = fn(x);
  loss.backward();
  return std::vector<double>(x.grad().begin(), x.grad().end());
}

inline GradCheckReport grad_check(const TensorProgram& fn, const Tensor64& point, double tol = 1e-4,
                                  double h = 1e-5) {
  return compare_grads(analytic_grad(fn, point), finite_difference_grad(fn, point, h), tol);
}

}  // namespace icdc
