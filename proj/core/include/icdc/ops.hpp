#pragma once

// Differentiable primitives over Tensor<S>. Every op validates input shapes,
// checks outputs for non-finite values, and records a backward closure when
// any input requires a gradient. Reductions accumulate left-to-right in a
// fixed order so repeated runs are bit-identical.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "icdc/tensor.hpp"

namespace icdc {

namespace detail {

inline int normalize_axis(const char* op, int axis, std::size_t rank) {
  int a = axis < 0 ? axis + static_cast<int>(rank) : axis;
  if (a < 0 || a >= static_cast<int>(rank)) {
    throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) + " out of range for rank " +
                     std::to_string(rank));
  }
  return a;
}

struct AxisSplit {
  std::size_t outer, len, inner;
};

inline AxisSplit split_axis(const Shape& shape, int axis) {
  AxisSplit s{1, shape[static_cast<std::size_t>(axis)], 1};
  for (int i = 0; i < axis; ++i) s.outer *= shape[static_cast<std::size_t>(i)];
  for (std::size_t i = static_cast<std::size_t>(axis) + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// matmul: [batch..., m, k] x [batch..., k, n] -> [batch..., m, n].
// The right operand may also be rank-2 [k, n], broadcast across batches.
// ---------------------------------------------------------------------------
template <class S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.size() < 2 || sb.size() < 2) {
    throw ShapeError("matmul: operands must have rank >= 2, got " + shape_str(sa) + " x " + shape_str(sb));
  }
  const std::size_t m = sa[sa.size() - 2], k = sa[sa.size() - 1];
  const std::size_t kb = sb[sb.size() - 2], n = sb[sb.size() - 1];
  const bool broadcast_b = sb.size() == 2 && sa.size() > 2;
  const bool batch_match = broadcast_b || (sa.size() == sb.size() && std::equal(sa.begin(), sa.end() - 2, sb.begin()));
  if (k != kb || !batch_match) {
    throw ShapeError("matmul: incompatible shapes " + shape_str(sa) + " x " + shape_str(sb));
  }

  std::size_t batches = 1;
  for (std::size_t i = 0; i + 2 < sa.size(); ++i) batches *= sa[i];
  Shape out_shape(sa.begin(), sa.end() - 2);
  out_shape.push_back(m);
  out_shape.push_back(n);

  const S* pa = a.values().data();
  const S* pb = b.values().data();
  std::vector<S> out(batches * m * n, S(0));
  for (std::size_t t = 0; t < batches; ++t) {
    const S* A = pa + t * m * k;
    const S* B = broadcast_b ? pb : pb + t * k * n;
    S* C = out.data() + t * m * n;
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t p = 0; p < k; ++p) {
        const S aip = A[i * k + p];
        const S* Bp = B + p * n;
        S* Ci = C + i * n;
        for (std::size_t j = 0; j < n; ++j) Ci[j] += aip * Bp[j];
      }
    }
  }

  auto backward = [batches, m, k, n, broadcast_b](detail::Node<S>& self) {
    auto& na = *self.parents[0];
    auto& nb = *self.parents[1];
    const S* pa = na.value.data();
    const S* pb = nb.value.data();
    const S* g = self.grad.data();
    if (na.requires_grad) {
      na.ensure_grad();
      for (std::size_t t = 0; t < batches; ++t) {
        const S* B = broadcast_b ? pb : pb + t * k * n;
        const S* G = g + t * m * n;
        S* dA = na.grad.data() + t * m * k;
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t p = 0; p < k; ++p) {
            S acc = S(0);
            const S* Bp = B + p * n;
            const S* Gi = G + i * n;
            for (std::size_t j = 0; j < n; ++j) acc += Gi[j] * Bp[j];
            dA[i * k + p] += acc;
          }
        }
      }
    }
    if (nb.requires_grad) {
      nb.ensure_grad();
      for (std::size_t t = 0; t < batches; ++t) {
        const S* A = pa + t * m * k;
        const S* G = g + t * m * n;
        S* dB = broadcast_b ? nb.grad.data() : nb.grad.data() + t * k * n;
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t p = 0; p < k; ++p) {
            const S aip = A[i * k + p];
            const S* Gi = G + i * n;
            S* dBp = dB + p * n;
            for (std::size_t j = 0; j < n; ++j) dBp[j] += aip * Gi[j];
          }
        }
      }
    }
  };
  return detail::make_op<S>("matmul", std::move(out_shape), std::move(out), {a, b}, backward);
}

// ---------------------------------------------------------------------------
// add / mul: elementwise; the right operand may be a scalar (size 1) or a
// rank-1 vector matching the last axis (bias / per-feature gain).
// ---------------------------------------------------------------------------
namespace detail {

enum class BroadcastKind { None, Scalar, LastDim };

template <class S>
inline BroadcastKind broadcast_kind(const char* op, const Tensor<S>& a, const Tensor<S>& b) {
  if (a.shape() == b.shape()) return BroadcastKind::None;
  if (b.size() == 1) return BroadcastKind::Scalar;
  if (b.rank() == 1 && !a.shape().empty() && b.shape()[0] == a.shape().back()) return BroadcastKind::LastDim;
  throw ShapeError(std::string(op) + ": incompatible shapes " + shape_str(a.shape()) + " and " +
                   shape_str(b.shape()));
}

}  // namespace detail

template <class S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
  const auto kind = detail::broadcast_kind("add", a, b);
  const S* pa = a.values().data();
  const S* pb = b.values().data();
  const std::size_t n = a.size(), d = b.size();
  std::vector<S> out(n);
  switch (kind) {
    case detail::BroadcastKind::None:
      for (std::size_t i = 0; i < n; ++i) out[i] = pa[i] + pb[i];
      break;
    case detail::BroadcastKind::Scalar:
      for (std::size_t i = 0; i < n; ++i) out[i] = pa[i] + pb[0];
      break;
    case detail::BroadcastKind::LastDim:
      for (std::size_t i = 0; i < n; ++i) out[i] = pa[i] + pb[i % d];
      break;
  }
  auto backward = [kind, n, d](detail::Node<S>& self) {
    auto& na = *self.parents[0];
    auto& nb = *self.parents[1];
    const S* g = self.grad.data();
    if (na.requires_grad) {
      na.ensure_grad();
      for (std::size_t i = 0; i < n; ++i) na.grad[i] += g[i];
    }
    if (nb.requires_grad) {
      nb.ensure_grad();
      switch (kind) {
        case detail::BroadcastKind::None:
          for (std::size_t i = 0; i < n; ++i) nb.grad[i] += g[i];
          break;
        case detail::BroadcastKind::Scalar:
          for (std::size_t i = 0; i < n; ++i) nb.grad[0] += g[i];
          break;
        case detail::BroadcastKind::LastDim:
          for (std::size_t i = 0; i < n; ++i) nb.grad[i % d] += g[i];
          break;
      }
    }
  };
  return detail::make_op<S>("add", a.shape(), std::move(out), {a, b}, backward);
}

template <class S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
  const auto kind = detail::broadcast_kind("mul", a, b);
  const S* pa = a.values().data();
  const S* pb = b.values().data();
  const std::size_t n = a.size(), d = b.size();
  std::vector<S> out(n);
  switch (kind) {
    case detail::BroadcastKind::None:
      for (std::size_t i = 0; i < n; ++i) out[i] = pa[i] * pb[i];
      break;
    case detail::BroadcastKind::Scalar:
      for (std::size_t i = 0; i < n; ++i) out[i] = pa[i] * pb[0];
      break;
    case detail::BroadcastKind::LastDim:
      for (std::size_t i = 0; i < n; ++i) out[i] = pa[i] * pb[i % d];
      break;
  }
  auto backward = [kind, n, d](detail::Node<S>& self) {
    auto& na = *self.parents[0];
    auto& nb = *self.parents[1];
    const S* pa = na.value.data();
    const S* pb = nb.value.data();
    const S* g = self.grad.data();
    if (na.requires_grad) {
      na.ensure_grad();
      switch (kind) {
        case detail::BroadcastKind::None:
          for (std::size_t i = 0; i < n; ++i) na.grad[i] += g[i] * pb[i];
          break;
        case detail::BroadcastKind::Scalar:
          for (std::size_t i = 0; i < n; ++i) na.grad[i] += g[i] * pb[0];
          break;
        case detail::BroadcastKind::LastDim:
          for (std::size_t i = 0; i < n; ++i) na.grad[i] += g[i] * pb[i % d];
          break;
      }
    }
    if (nb.requires_grad) {
      nb.ensure_grad();
      switch (kind) {
        case detail::BroadcastKind::None:
          for (std::size_t i = 0; i < n; ++i) nb.grad[i] += g[i] * pa[i];
          break;
        case detail::BroadcastKind::Scalar:
          for (std::size_t i = 0; i < n; ++i) nb.grad[0] += g[i] * pa[i];
          break;
        case detail::BroadcastKind::LastDim:
          for (std::size_t i = 0; i < n; ++i) nb.grad[i % d] += g[i] * pa[i];
          break;
      }
    }
  };
  return detail::make_op<S>("mul", a.shape(), std::move(out), {a, b}, backward);
}

template <class S>
Tensor<S> scale(const Tensor<S>& a, S c) {
  const S* pa = a.values().data();
  std::vector<S> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = pa[i] * c;
  auto backward = [c](detail::Node<S>& self) {
    auto& na = *self.parents[0];
    if (!na.requires_grad) return;
    na.ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) na.grad[i] += self.grad[i] * c;
  };
  return detail::make_op<S>("scale", a.shape(), std::move(out), {a}, backward);
}

template <class S>
Tensor<S> exp(const Tensor<S>& a) {
  const S* pa = a.values().data();
  std::vector<S> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(pa[i]);
  auto backward = [](detail::Node<S>& self) {
    auto& na = *self.parents[0];
    if (!na.requires_grad) return;
    na.ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) na.grad[i] += self.grad[i] * self.value[i];
  };
  return detail::make_op<S>("exp", a.shape(), std::move(out), {a}, backward);
}

// ---------------------------------------------------------------------------
// softmax over one axis, numerically stabilized by max subtraction.
// ---------------------------------------------------------------------------
template <class S>
Tensor<S> softmax(const Tensor<S>& x, int axis = -1) {
  const int ax = detail::normalize_axis("softmax", axis, x.rank());
  const auto sp = detail::split_axis(x.shape(), ax);
  const S* px = x.values().data();
  std::vector<S> out(x.size());
  for (std::size_t o = 0; o < sp.outer; ++o) {
    for (std::size_t in = 0; in < sp.inner; ++in) {
      const std::size_t base = o * sp.len * sp.inner + in;
      S mx = px[base];
      for (std::size_t a = 1; a < sp.len; ++a) mx = std::max(mx, px[base + a * sp.inner]);
      S denom = S(0);
      for (std::size_t a = 0; a < sp.len; ++a) {
        const S e = std::exp(px[base + a * sp.inner] - mx);
        out[base + a * sp.inner] = e;
        denom += e;
      }
      for (std::size_t a = 0; a < sp.len; ++a) out[base + a * sp.inner] /= denom;
    }
  }
  auto backward = [sp](detail::Node<S>& self) {
    auto& nx = *self.parents[0];
    if (!nx.requires_grad) return;
    nx.ensure_grad();
    const S* y = self.value.data();
    const S* g = self.grad.data();
    for (std::size_t o = 0; o < sp.outer; ++o) {
      for (std::size_t in = 0; in < sp.inner; ++in) {
        const std::size_t base = o * sp.len * sp.inner + in;
        S dot = S(0);
        for (std::size_t a = 0; a < sp.len; ++a) {
          const std::size_t idx = base + a * sp.inner;
          dot += g[idx] * y[idx];
        }
        for (std::size_t a = 0; a < sp.len; ++a) {
          const std::size_t idx = base + a * sp.inner;
          nx.grad[idx] += y[idx] * (g[idx] - dot);
        }
      }
    }
  };
  return detail::make_op<S>("softmax", x.shape(), std::move(out), {x}, backward);
}

// ---------------------------------------------------------------------------
// layer_norm over one axis, pre-affine: (x - mean) / sqrt(var + eps).
// Gain/bias are applied by the caller with mul/add.
// ---------------------------------------------------------------------------
template <class S>
Tensor<S> layer_norm(const Tensor<S>& x, S eps, int axis = -1) {
  if (!(eps > S(0))) throw ShapeError("layer_norm: eps must be positive");
  const int ax = detail::normalize_axis("layer_norm", axis, x.rank());
  const auto sp = detail::split_axis(x.shape(), ax);
  const S* px = x.values().data();
  std::vector<S> out(x.size());
  std::vector<S> inv_std(sp.outer * sp.inner);
  for (std::size_t o = 0; o < sp.outer; ++o) {
    for (std::size_t in = 0; in < sp.inner; ++in) {
      const std::size_t base = o * sp.len * sp.inner + in;
      S mean = S(0);
      for (std::size_t a = 0; a < sp.len; ++a) mean += px[base + a * sp.inner];
      mean /= static_cast<S>(sp.len);
      S var = S(0);
      for (std::size_t a = 0; a < sp.len; ++a) {
        const S d = px[base + a * sp.inner] - mean;
        var += d * d;
      }
      var /= static_cast<S>(sp.len);
      const S inv = S(1) / std::sqrt(var + eps);
      inv_std[o * sp.inner + in] = inv;
      for (std::size_t a = 0; a < sp.len; ++a) out[base + a * sp.inner] = (px[base + a * sp.inner] - mean) * inv;
    }
  }
  auto backward = [sp, inv_std = std::move(inv_std)](detail::Node<S>& self) {
    auto& nx = *self.parents[0];
    if (!nx.requires_grad) return;
    nx.ensure_grad();
    const S* y = self.value.data();
    const S* g = self.grad.data();
    const S len = static_cast<S>(sp.len);
    for (std::size_t o = 0; o < sp.outer; ++o) {
      for (std::size_t in = 0; in < sp.inner; ++in) {
        const std::size_t base = o * sp.len * sp.inner + in;
        S gsum = S(0), gysum = S(0);
        for (std::size_t a = 0; a < sp.len; ++a) {
          const std::size_t idx = base + a * sp.inner;
          gsum += g[idx];
          gysum += g[idx] * y[idx];
        }
        const S inv = inv_std[o * sp.inner + in];
        for (std::size_t a = 0; a < sp.len; ++a) {
          const std::size_t idx = base + a * sp.inner;
          nx.grad[idx] += inv * (g[idx] - gsum / len - y[idx] * gysum / len);
        }
      }
    }
  };
  return detail::make_op<S>("layer_norm", x.shape(), std::move(out), {x}, backward);
}

// ---------------------------------------------------------------------------
// gelu, tanh approximation: 0.5 x (1 + tanh(c (x + 0.044715 x^3))).
// The finite-difference oracle must use the same formula.
// ---------------------------------------------------------------------------
template <class S>
Tensor<S> gelu(const Tensor<S>& x) {
  constexpr double kC = 0.7978845608028654;  // sqrt(2/pi)
  constexpr double kA = 0.044715;
  const S* px = x.values().data();
  std::vector<S> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double v = static_cast<double>(px[i]);
    out[i] = static_cast<S>(0.5 * v * (1.0 + std::tanh(kC * (v + kA * v * v * v))));
  }
  auto backward = [](detail::Node<S>& self) {
    auto& nx = *self.parents[0];
    if (!nx.requires_grad) return;
    nx.ensure_grad();
    constexpr double kC = 0.7978845608028654;
    constexpr double kA = 0.044715;
    const S* px = nx.value.data();
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      const double v = static_cast<double>(px[i]);
      const double t = std::tanh(kC * (v + kA * v * v * v));
      const double d = 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * kC * (1.0 + 3.0 * kA * v * v);
      nx.grad[i] += self.grad[i] * static_cast<S>(d);
    }
  };
  return detail::make_op<S>("gelu", x.shape(), std::move(out), {x}, backward);
}

// ---------------------------------------------------------------------------
// embedding_lookup: table [V, d] gathered by integer ids; output has the ids'
// shape with a trailing feature axis. Out-of-range ids are an error.
// ---------------------------------------------------------------------------
template <class S>
Tensor<S> embedding_lookup(const Tensor<S>& table, const std::vector<std::int32_t>& ids,
                           Shape id_shape = {}) {
  if (table.rank() != 2) throw ShapeError("embedding_lookup: table must be [V, d], got " + shape_str(table.shape()));
  if (id_shape.empty()) id_shape = {ids.size()};
  if (numel(id_shape) != ids.size()) {
    throw ShapeError("embedding_lookup: id shape " + shape_str(id_shape) + " does not match " +
                     std::to_string(ids.size()) + " ids");
  }
  const std::size_t v = table.shape()[0], d = table.shape()[1];
  const S* pt = table.values().data();
  std::vector<S> out(ids.size() * d);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const std::int32_t id = ids[i];
    if (id < 0 || static_cast<std::size_t>(id) >= v) {
      throw ShapeError("embedding_lookup: id " + std::to_string(id) + " outside table of size " + std::to_string(v));
    }
    std::copy(pt + static_cast<std::size_t>(id) * d, pt + (static_cast<std::size_t>(id) + 1) * d,
              out.begin() + static_cast<std::ptrdiff_t>(i * d));
  }
  Shape out_shape = std::move(id_shape);
  out_shape.push_back(d);
  auto backward = [ids, d](detail::Node<S>& self) {
    auto& nt = *self.parents[0];
    if (!nt.requires_grad) return;
    nt.ensure_grad();
    const S* g = self.grad.data();
    for (std::size_t i = 0; i < ids.size(); ++i) {
      S* row = nt.grad.data() + static_cast<std::size_t>(ids[i]) * d;
      const S* gi = g + i * d;
      for (std::size_t j = 0; j < d; ++j) row[j] += gi[j];
    }
  };
  return detail::make_op<S>("embedding_lookup", std::move(out_shape), std::move(out), {table}, backward);
}

// ---------------------------------------------------------------------------
// concat / slice along an axis.
// ---------------------------------------------------------------------------
template <class S>
Tensor<S> concat(const std::vector<Tensor<S>>& xs, int axis) {
  if (xs.empty()) throw ShapeError("concat: empty input list");
  const int ax = detail::normalize_axis("concat", axis, xs[0].rank());
  Shape out_shape = xs[0].shape();
  std::size_t total = 0;
  for (const auto& x : xs) {
    if (x.rank() != out_shape.size()) throw ShapeError("concat: rank mismatch");
    for (std::size_t i = 0; i < out_shape.size(); ++i) {
      if (static_cast<int>(i) != ax && x.shape()[i] != out_shape[i]) {
        throw ShapeError("concat: shape mismatch " + shape_str(x.shape()) + " vs " + shape_str(out_shape));
      }
    }
    total += x.shape()[static_cast<std::size_t>(ax)];
  }
  out_shape[static_cast<std::size_t>(ax)] = total;

  const auto sp_out = detail::split_axis(out_shape, ax);
  std::vector<S> out(numel(out_shape));
  std::vector<std::size_t> lens;
  std::size_t off = 0;
  for (const auto& x : xs) {
    const std::size_t len = x.shape()[static_cast<std::size_t>(ax)];
    lens.push_back(len);
    const S* px = x.values().data();
    for (std::size_t o = 0; o < sp_out.outer; ++o) {
      std::copy(px + o * len * sp_out.inner, px + (o + 1) * len * sp_out.inner,
                out.begin() + static_cast<std::ptrdiff_t>((o * sp_out.len + off) * sp_out.inner));
    }
    off += len;
  }
  auto backward = [sp_out, lens](detail::Node<S>& self) {
    const S* g = self.grad.data();
    std::size_t off = 0;
    for (std::size_t pi = 0; pi < self.parents.size(); ++pi) {
      auto& np = *self.parents[pi];
      const std::size_t len = lens[pi];
      if (np.requires_grad) {
        np.ensure_grad();
        for (std::size_t o = 0; o < sp_out.outer; ++o) {
          const S* src = g + (o * sp_out.len + off) * sp_out.inner;
          S* dst = np.grad.data() + o * len * sp_out.inner;
          for (std::size_t i = 0; i < len * sp_out.inner; ++i) dst[i] += src[i];
        }
      }
      off += len;
    }
  };
  return detail::make_op<S>("concat", std::move(out_shape), std::move(out), xs, backward);
}

template <class S>
Tensor<S> slice(const Tensor<S>& x, int axis, std::size_t start, std::size_t len) {
  const int ax = detail::normalize_axis("slice", axis, x.rank());
  const auto sp = detail::split_axis(x.shape(), ax);
  if (start + len > sp.len) {
    throw ShapeError("slice: range [" + std::to_string(start) + ", " + std::to_string(start + len) +
                     ") exceeds axis length " + std::to_string(sp.len));
  }
  Shape out_shape = x.shape();
  out_shape[static_cast<std::size_t>(ax)] = len;
  const S* px = x.values().data();
  std::vector<S> out(numel(out_shape));
  for (std::size_t o = 0; o < sp.outer; ++o) {
    std::copy(px + (o * sp.len + start) * sp.inner, px + (o * sp.len + start + len) * sp.inner,
              out.begin() + static_cast<std::ptrdiff_t>(o * len * sp.inner));
  }
  auto backward = [sp, start, len](detail::Node<S>& self) {
    auto& nx = *self.parents[0];
    if (!nx.requires_grad) return;
    nx.ensure_grad();
    const S* g = self.grad.data();
    for (std::size_t o = 0; o < sp.outer; ++o) {
      S* dst = nx.grad.data() + (o * sp.len + start) * sp.inner;
      const S* src = g + o * len * sp.inner;
      for (std::size_t i = 0; i < len * sp.inner; ++i) dst[i] += src[i];
    }
  };
  return detail::make_op<S>("slice", std::move(out_shape), std::move(out), {x}, backward);
}

// ---------------------------------------------------------------------------
// Full reductions to a scalar.
// ---------------------------------------------------------------------------
template <class S>
Tensor<S> sum(const Tensor<S>& x) {
  const S* px = x.values().data();
  S acc = S(0);
  for (std::size_t i = 0; i < x.size(); ++i) acc += px[i];
  auto backward = [](detail::Node<S>& self) {
    auto& nx = *self.parents[0];
    if (!nx.requires_grad) return;
    nx.ensure_grad();
    const S g = self.grad[0];
    for (auto& v : nx.grad) v += g;
  };
  return detail::make_op<S>("sum", Shape{1}, {acc}, {x}, backward);
}

template <class S>
Tensor<S> mean(const Tensor<S>& x) {
  const S* px = x.values().data();
  S acc = S(0);
  for (std::size_t i = 0; i < x.size(); ++i) acc += px[i];
  const S n = static_cast<S>(x.size());
  auto backward = [n](detail::Node<S>& self) {
    auto& nx = *self.parents[0];
    if (!nx.requires_grad) return;
    nx.ensure_grad();
    const S g = self.grad[0] / n;
    for (auto& v : nx.grad) v += g;
  };
  return detail::make_op<S>("mean", Shape{1}, {acc / n}, {x}, backward);
}

// ---------------------------------------------------------------------------
// cross_entropy: mean negative log-likelihood of integer labels under
// softmax(logits), over rows whose label differs from ignore_index.
// Logits are [N, C]; a batch with zero counted rows is an error.
// ---------------------------------------------------------------------------
template <class S>
Tensor<S> cross_entropy(const Tensor<S>& logits, const std::vector<std::int32_t>& labels,
                        std::int32_t ignore_index = -100) {
  if (logits.rank() != 2) throw ShapeError("cross_entropy: logits must be [N, C], got " + shape_str(logits.shape()));
  const std::size_t n = logits.shape()[0], c = logits.shape()[1];
  if (labels.size() != n) {
    throw ShapeError("cross_entropy: " + std::to_string(labels.size()) + " labels for " + std::to_string(n) + " rows");
  }
  const S* pz = logits.values().data();
  double loss = 0.0;
  std::size_t counted = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const std::int32_t y = labels[i];
    if (y == ignore_index) continue;
    if (y < 0 || static_cast<std::size_t>(y) >= c) {
      throw ShapeError("cross_entropy: label " + std::to_string(y) + " outside [0, " + std::to_string(c) + ")");
    }
    const S* z = pz + i * c;
    S mx = z[0];
    for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, z[j]);
    double denom = 0.0;
    for (std::size_t j = 0; j < c; ++j) denom += std::exp(static_cast<double>(z[j] - mx));
    loss += std::log(denom) + static_cast<double>(mx) - static_cast<double>(z[static_cast<std::size_t>(y)]);
    ++counted;
  }
  if (counted == 0) {
    throw std::invalid_argument("cross_entropy: every label equals ignore_index; loss undefined");
  }
  loss /= static_cast<double>(counted);

  auto backward = [labels, ignore_index, n, c, counted](detail::Node<S>& self) {
    auto& nz = *self.parents[0];
    if (!nz.requires_grad) return;
    nz.ensure_grad();
    const S g = self.grad[0] / static_cast<S>(counted);
    const S* pz = nz.value.data();
    for (std::size_t i = 0; i < n; ++i) {
      const std::int32_t y = labels[i];
      if (y == ignore_index) continue;
      const S* z = pz + i * c;
      S mx = z[0];
      for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, z[j]);
      S denom = S(0);
      for (std::size_t j = 0; j < c; ++j) denom += std::exp(z[j] - mx);
      S* gz = nz.grad.data() + i * c;
      for (std::size_t j = 0; j < c; ++j) {
        const S p = std::exp(z[j] - mx) / denom;
        gz[j] += g * (p - (static_cast<std::size_t>(y) == j ? S(1) : S(0)));
      }
    }
  };
  return detail::make_op<S>("cross_entropy", Shape{1}, {static_cast<S>(loss)}, {logits}, backward);
}

// ---------------------------------------------------------------------------
// l2_normalize rows (last axis) to unit Euclidean norm. Near-zero rows are
// guarded by a tiny additive floor inside the square root.
// ---------------------------------------------------------------------------
template <class S>
Tensor<S> l2_normalize(const Tensor<S>& x) {
  if (x.rank() < 1) throw ShapeError("l2_normalize: rank must be >= 1");
  const std::size_t d = x.shape().back();
  const std::size_t rows = x.size() / d;
  const S* px = x.values().data();
  std::vector<S> out(x.size());
  std::vector<S> inv_norm(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const S* xr = px + r * d;
    double ss = 1e-24;
    for (std::size_t j = 0; j < d; ++j) ss += static_cast<double>(xr[j]) * static_cast<double>(xr[j]);
    const S inv = static_cast<S>(1.0 / std::sqrt(ss));
    inv_norm[r] = inv;
    for (std::size_t j = 0; j < d; ++j) out[r * d + j] = xr[j] * inv;
  }
  auto backward = [d, rows, inv_norm = std::move(inv_norm)](detail::Node<S>& self) {
    auto& nx = *self.parents[0];
    if (!nx.requires_grad) return;
    nx.ensure_grad();
    const S* y = self.value.data();
    const S* g = self.grad.data();
    for (std::size_t r = 0; r < rows; ++r) {
      const S* yr = y + r * d;
      const S* gr = g + r * d;
      S dot = S(0);
      for (std::size_t j = 0; j < d; ++j) dot += gr[j] * yr[j];
      S* dst = nx.grad.data() + r * d;
      for (std::size_t j = 0; j < d; ++j) dst[j] += (gr[j] - yr[j] * dot) * inv_norm[r];
    }
  };
  return detail::make_op<S>("l2_normalize", x.shape(), std::move(out), {x}, backward);
}

// ---------------------------------------------------------------------------
// reshape / permute.
// ---------------------------------------------------------------------------
template <class S>
Tensor<S> reshape(const Tensor<S>& x, Shape new_shape) {
  if (numel(new_shape) != x.size()) {
    throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(new_shape));
  }
  std::vector<S> out(x.values().begin(), x.values().end());
  auto backward = [](detail::Node<S>& self) {
    auto& nx = *self.parents[0];
    if (!nx.requires_grad) return;
    nx.ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) nx.grad[i] += self.grad[i];
  };
  return detail::make_op<S>("reshape", std::move(new_shape), std::move(out), {x}, backward);
}

namespace detail {

inline std::vector<std::size_t> row_major_strides(const Shape& shape) {
  std::vector<std::size_t> st(shape.size(), 1);
  for (std::size_t i = shape.size(); i-- > 1;) st[i - 1] = st[i] * shape[i];
  return st;
}

template <class S>
void permute_copy(const Shape& in_shape, const std::vector<int>& perm, const S* src, S* dst,
                  bool add_into) {
  const std::size_t rank = in_shape.size();
  Shape out_shape(rank);
  for (std::size_t i = 0; i < rank; ++i) out_shape[i] = in_shape[static_cast<std::size_t>(perm[i])];
  const auto in_strides = row_major_strides(in_shape);
  std::vector<std::size_t> gather(rank);
  for (std::size_t i = 0; i < rank; ++i) gather[i] = in_strides[static_cast<std::size_t>(perm[i])];
  const std::size_t n = numel(in_shape);
  std::vector<std::size_t> idx(rank, 0);
  std::size_t src_off = 0;
  for (std::size_t lin = 0; lin < n; ++lin) {
    if (add_into) {
      dst[lin] += src[src_off];
    } else {
      dst[lin] = src[src_off];
    }
    for (std::size_t a = rank; a-- > 0;) {
      if (++idx[a] < out_shape[a]) {
        src_off += gather[a];
        break;
      }
      idx[a] = 0;
      src_off -= gather[a] * (out_shape[a] - 1);
    }
  }
}

}  // namespace detail

template <class S>
Tensor<S> permute(const Tensor<S>& x, const std::vector<int>& perm) {
  const std::size_t rank = x.rank();
  if (perm.size() != rank) throw ShapeError("permute: perm size must equal rank");
  std::vector<bool> seen(rank, false);
  for (int p : perm) {
    if (p < 0 || static_cast<std::size_t>(p) >= rank || seen[static_cast<std::size_t>(p)]) {
      throw ShapeError("permute: invalid permutation");
    }
    seen[static_cast<std::size_t>(p)] = true;
  }
  Shape out_shape(rank);
  for (std::size_t i = 0; i < rank; ++i) out_shape[i] = x.shape()[static_cast<std::size_t>(perm[i])];
  std::vector<S> out(x.size());
  detail::permute_copy(x.shape(), perm, x.values().data(), out.data(), false);

  std::vector<int> inv(rank);
  for (std::size_t i = 0; i < rank; ++i) inv[static_cast<std::size_t>(perm[i])] = static_cast<int>(i);
  auto backward = [inv, out_shape](detail::Node<S>& self) {
    auto& nx = *self.parents[0];
    if (!nx.requires_grad) return;
    nx.ensure_grad();
    detail::permute_copy(out_shape, inv, self.grad.data(), nx.grad.data(), true);
  };
  return detail::make_op<S>("permute", std::move(out_shape), std::move(out), {x}, backward);
}

template <class S>
Tensor<S> transpose(const Tensor<S>& x) {
  if (x.rank() != 2) throw ShapeError("transpose: expected rank 2, got " + shape_str(x.shape()));
  return permute(x, {1, 0});
}

// cosine similarity of all row pairs; equals a dot product after row
// normalization, so it composes from primitives and differentiates for free.
template <class S>
Tensor<S> cosine_similarity_matrix(const Tensor<S>& a, const Tensor<S>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[1]) {
    throw ShapeError("cosine_similarity_matrix: need [n,p] x [m,p], got " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
  }
  return matmul(l2_normalize(a), transpose(l2_normalize(b)));
}

// ---------------------------------------------------------------------------
// Row/column gathers on matrices (duplicate indices allowed; grads scatter-add).
// ---------------------------------------------------------------------------
template <class S>
Tensor<S> index_rows(const Tensor<S>& x, const std::vector<std::int32_t>& rows) {
  if (x.rank() != 2) throw ShapeError("index_rows: expected [N, C], got " + shape_str(x.shape()));
  const std::size_t n = x.shape()[0], c = x.shape()[1];
  const S* px = x.values().data();
  std::vector<S> out(rows.size() * c);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const std::int32_t r = rows[i];
    if (r < 0 || static_cast<std::size_t>(r) >= n) {
      throw ShapeError("index_rows: row " + std::to_string(r) + " outside [0, " + std::to_string(n) + ")");
    }
    std::copy(px + static_cast<std::size_t>(r) * c, px + (static_cast<std::size_t>(r) + 1) * c,
              out.begin() + static_cast<std::ptrdiff_t>(i * c));
  }
  auto backward = [rows, c](detail::Node<S>& self) {
    auto& nx = *self.parents[0];
    if (!nx.requires_grad) return;
    nx.ensure_grad();
    const S* g = self.grad.data();
    for (std::size_t i = 0; i < rows.size(); ++i) {
      S* dst = nx.grad.data() + static_cast<std::size_t>(rows[i]) * c;
      const S* src = g + i * c;
      for (std::size_t j = 0; j < c; ++j) dst[j] += src[j];
    }
  };
  return detail::make_op<S>("index_rows", Shape{rows.size(), c}, std::move(out), {x}, backward);
}

template <class S>
Tensor<S> index_cols(const Tensor<S>& x, const std::vector<std::int32_t>& cols) {
  if (x.rank() != 2) throw ShapeError("index_cols: expected [N, C], got " + shape_str(x.shape()));
  const std::size_t n = x.shape()[0], c = x.shape()[1];
  const S* px = x.values().data();
  std::vector<S> out(n * cols.size());
  for (std::size_t j = 0; j < cols.size(); ++j) {
    const std::int32_t cc = cols[j];
    if (cc < 0 || static_cast<std::size_t>(cc) >= c) {
      throw ShapeError("index_cols: col " + std::to_string(cc) + " outside [0, " + std::to_string(c) + ")");
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < cols.size(); ++j) {
      out[i * cols.size() + j] = px[i * c + static_cast<std::size_t>(cols[j])];
    }
  }
  auto backward = [cols, n, c](detail::Node<S>& self) {
    auto& nx = *self.parents[0];
    if (!nx.requires_grad) return;
    nx.ensure_grad();
    const S* g = self.grad.data();
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < cols.size(); ++j) {
        nx.grad[i * c + static_cast<std::size_t>(cols[j])] += g[i * cols.size() + j];
      }
    }
  };
  return detail::make_op<S>("index_cols", Shape{n, cols.size()}, std::move(out), {x}, backward);
}

// ---------------------------------------------------------------------------
// Inverted dropout driven by a named stream; a fixed stream state gives a
// reproducible mask. p == 0 is the identity.
// ---------------------------------------------------------------------------
template <class S>
Tensor<S> dropout(const Tensor<S>& x, double p, RngStream& rng) {
  if (p < 0.0 || p >= 1.0) throw ShapeError("dropout: p must be in [0, 1)");
  if (p == 0.0) return x;
  const S keep_scale = static_cast<S>(1.0 / (1.0 - p));
  const S* px = x.values().data();
  std::vector<S> mask(x.size());
  std::vector<S> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    mask[i] = rng.uniform() < p ? S(0) : keep_scale;
    out[i] = px[i] * mask[i];
  }
  auto backward = [mask = std::move(mask)](detail::Node<S>& self) {
    auto& nx = *self.parents[0];
    if (!nx.requires_grad) return;
    nx.ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) nx.grad[i] += self.grad[i] * mask[i];
  };
  return detail::make_op<S>("dropout", x.shape(), std::move(out), {x}, backward);
}

}  // namespace icdc
