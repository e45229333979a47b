#pragma once

// Differentiable primitives. Matrix-shaped ops act on the trailing two
// extents and treat any leading extents as a batch.

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "hosnet/tensor.hpp"

namespace hosnet {

namespace detail {

inline std::vector<double>* grad_of(const Tensor& t) {
  return t.requires_grad() ? &t.node().grad_buffer() : nullptr;
}

inline void require_same_shape(std::string_view op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
}

inline void require_rank_at_least(std::string_view op, const Tensor& a, std::size_t r) {
  if (a.rank() < r)
    throw DimensionError(std::string(op) + ": rank " + std::to_string(a.rank()) + " < " +
                         std::to_string(r));
}

// Product of all extents except the trailing `k`.
inline std::size_t leading(const Shape& s, std::size_t k) {
  std::size_t n = 1;
  for (std::size_t i = 0; i + k < s.size(); ++i) n *= s[i];
  return n;
}

inline Shape with_tail(const Shape& s, std::size_t drop, std::initializer_list<std::size_t> tail) {
  Shape r(s.begin(), s.end() - static_cast<std::ptrdiff_t>(drop));
  r.insert(r.end(), tail.begin(), tail.end());
  return r;
}

// c[b] (+)= op(a[b]) * op(b[b]) for row-major n×k · k×m blocks.
inline void gemm(const double* a, const double* b, double* c, std::size_t n, std::size_t k,
                 std::size_t m, bool ta, bool tb, bool accumulate) {
  if (!accumulate) std::fill(c, c + n * m, 0.0);
  if (!ta && !tb) {
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t p = 0; p < k; ++p) {
        const double av = a[i * k + p];
        if (av == 0.0) continue;
        const double* brow = b + p * m;
        double* crow = c + i * m;
        for (std::size_t j = 0; j < m; ++j) crow[j] += av * brow[j];
      }
  } else if (ta && !tb) {
    // a stored k×n
    for (std::size_t p = 0; p < k; ++p)
      for (std::size_t i = 0; i < n; ++i) {
        const double av = a[p * n + i];
        if (av == 0.0) continue;
        const double* brow = b + p * m;
        double* crow = c + i * m;
        for (std::size_t j = 0; j < m; ++j) crow[j] += av * brow[j];
      }
  } else if (!ta && tb) {
    // b stored m×k
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j) {
        const double* arow = a + i * k;
        const double* brow = b + j * k;
        double s = 0.0;
        for (std::size_t p = 0; p < k; ++p) s += arow[p] * brow[p];
        c[i * m + j] += s;
      }
  } else {
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j) {
        double s = 0.0;
        for (std::size_t p = 0; p < k; ++p) s += a[p * n + i] * b[j * k + p];
        c[i * m + j] += s;
      }
  }
}

template <class F, class DF>
Tensor unary(std::string_view op, const Tensor& a, F f, DF df) {
  std::vector<double> out(a.size());
  auto ad = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(ad[i]);
  return make_result(op, a.shape(), std::move(out), {&a},
                     [a, df](const std::vector<double>& g, const std::vector<double>& y) {
                       auto& ga = a.node().grad_buffer();
                       auto ad = a.data();
                       for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * df(ad[i], y[i]);
                     });
}

}  // namespace detail

// ---- elementwise -----------------------------------------------------------

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::require_same_shape("add", a, b);
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  return detail::make_result("add", a.shape(), std::move(out), {&a, &b},
                             [a, b](const std::vector<double>& g, const std::vector<double>&) {
                               for (auto* ga : {detail::grad_of(a), detail::grad_of(b)})
                                 if (ga)
                                   for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i];
                             });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  detail::require_same_shape("sub", a, b);
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
  return detail::make_result("sub", a.shape(), std::move(out), {&a, &b},
                             [a, b](const std::vector<double>& g, const std::vector<double>&) {
                               if (auto* ga = detail::grad_of(a))
                                 for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i];
                               if (auto* gb = detail::grad_of(b))
                                 for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] -= g[i];
                             });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::require_same_shape("mul", a, b);
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  return detail::make_result("mul", a.shape(), std::move(out), {&a, &b},
                             [a, b](const std::vector<double>& g, const std::vector<double>&) {
                               if (auto* ga = detail::grad_of(a))
                                 for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * b[i];
                               if (auto* gb = detail::grad_of(b))
                                 for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] += g[i] * a[i];
                             });
}

// Sum of any number of same-shape tensors as one tape record.
inline Tensor add_n(const std::vector<Tensor>& xs) {
  if (xs.empty()) throw ContractError("add_n: empty input");
  std::vector<double> out(xs[0].size(), 0.0);
  for (auto& x : xs) {
    detail::require_same_shape("add_n", xs[0], x);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += x[i];
  }
  return detail::make_result("add_n", xs[0].shape(), std::move(out), xs,
                             [xs](const std::vector<double>& g, const std::vector<double>&) {
                               for (auto& x : xs)
                                 if (auto* gx = detail::grad_of(x))
                                   for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i];
                             });
}

inline Tensor scale(const Tensor& a, double s) {
  return detail::unary("scale", a, [s](double x) { return s * x; },
                       [s](double, double) { return s; });
}

inline Tensor add_scalar(const Tensor& a, double s) {
  return detail::unary("add_scalar", a, [s](double x) { return x + s; },
                       [](double, double) { return 1.0; });
}

inline Tensor relu(const Tensor& a) {
  return detail::unary("relu", a, [](double x) { return x > 0.0 ? x : 0.0; },
                       [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

inline Tensor exp(const Tensor& a) {
  return detail::unary("exp", a, [](double x) { return std::exp(x); },
                       [](double, double y) { return y; });
}

inline Tensor log(const Tensor& a) {
  return detail::unary("log", a, [](double x) { return std::log(x); },
                       [](double x, double) { return 1.0 / x; });
}

inline Tensor abs(const Tensor& a) {
  return detail::unary("abs", a, [](double x) { return std::abs(x); },
                       [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

// x^p; callers keep the base positive when p is fractional or negative.
inline Tensor pow(const Tensor& a, double p) {
  return detail::unary("pow", a, [p](double x) { return std::pow(x, p); },
                       [p](double x, double) { return p * std::pow(x, p - 1.0); });
}

inline Tensor clamp_min(const Tensor& a, double lo) {
  return detail::unary("clamp_min", a, [lo](double x) { return x < lo ? lo : x; },
                       [lo](double x, double) { return x < lo ? 0.0 : 1.0; });
}

namespace detail {
// Replays a recorded sequence of incidence matrices in place of the step
// function. Used to evaluate the smooth part of a network around a fixed
// hypergraph (finite-difference checks).
struct StepReplay {
  enum class Mode { off, record, replay } mode = Mode::off;
  std::vector<std::vector<double>> values;
  std::size_t cursor = 0;
};
inline thread_local StepReplay step_replay;
}  // namespace detail

class FrozenStepScope {
 public:
  explicit FrozenStepScope(bool replay) : prev_(std::move(detail::step_replay)) {
    detail::step_replay = {};
    detail::step_replay.mode = replay ? detail::StepReplay::Mode::replay
                                      : detail::StepReplay::Mode::record;
  }
  FrozenStepScope(const FrozenStepScope&) = delete;
  FrozenStepScope& operator=(const FrozenStepScope&) = delete;
  ~FrozenStepScope() { detail::step_replay = std::move(prev_); }

  // Switch from recording to replaying the captured matrices.
  static void rewind(bool replay = true) {
    detail::step_replay.cursor = 0;
    detail::step_replay.mode =
        replay ? detail::StepReplay::Mode::replay : detail::StepReplay::Mode::record;
  }

 private:
  detail::StepReplay prev_;
};

// Hard 0/1 threshold at zero. Backward is straight-through, passing the
// incoming gradient only where |x| <= 1.
inline Tensor step_ste(const Tensor& a) {
  auto& rp = detail::step_replay;
  if (rp.mode == detail::StepReplay::Mode::replay) {
    if (rp.cursor >= rp.values.size()) throw ContractError("step replay exhausted");
    auto& v = rp.values[rp.cursor++];
    if (v.size() != a.size()) throw DimensionError("step replay shape changed");
    return Tensor(a.shape(), v);
  }
  auto out = detail::unary("step_ste", a, [](double x) { return x > 0.0 ? 1.0 : 0.0; },
                           [](double x, double) { return std::abs(x) <= 1.0 ? 1.0 : 0.0; });
  if (rp.mode == detail::StepReplay::Mode::record)
    rp.values.emplace_back(out.data().begin(), out.data().end());
  return out;
}

// ---- broadcasting against trailing extents ---------------------------------

// a[..., R, C] + b where b has the shape of a's trailing extents.
inline Tensor add_trailing(const Tensor& a, const Tensor& b) {
  if (b.rank() > a.rank() ||
      !std::equal(b.shape().begin(), b.shape().end(), a.shape().end() - b.rank()))
    throw DimensionError("add_trailing: " + shape_str(b.shape()) + " is not a suffix of " +
                         shape_str(a.shape()));
  const std::size_t inner = b.size();
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i % inner];
  return detail::make_result("add_trailing", a.shape(), std::move(out), {&a, &b},
                             [a, b, inner](const std::vector<double>& g, const std::vector<double>&) {
                               if (auto* ga = detail::grad_of(a))
                                 for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i];
                               if (auto* gb = detail::grad_of(b))
                                 for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i % inner] += g[i];
                             });
}

// Multiplies row r of every a[..., R, C] block by v. v is either [R] (shared
// across the batch) or [..., R] matching a's leading extents.
inline Tensor scale_rows(const Tensor& a, const Tensor& v) {
  detail::require_rank_at_least("scale_rows", a, 2);
  const std::size_t C = a.shape().back();
  const std::size_t rows = a.size() / C;  // batch * R
  const std::size_t R = a.shape()[a.rank() - 2];
  if (v.size() != R && v.size() != rows)
    throw DimensionError("scale_rows: vector " + shape_str(v.shape()) + " vs " +
                         shape_str(a.shape()));
  const std::size_t vmod = v.size();
  std::vector<double> out(a.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double s = v[r % vmod];
    for (std::size_t c = 0; c < C; ++c) out[r * C + c] = a[r * C + c] * s;
  }
  return detail::make_result(
      "scale_rows", a.shape(), std::move(out), {&a, &v},
      [a, v, C, rows, vmod](const std::vector<double>& g, const std::vector<double>&) {
        auto* ga = detail::grad_of(a);
        auto* gv = detail::grad_of(v);
        for (std::size_t r = 0; r < rows; ++r) {
          const double s = v[r % vmod];
          double acc = 0.0;
          for (std::size_t c = 0; c < C; ++c) {
            if (ga) (*ga)[r * C + c] += g[r * C + c] * s;
            acc += g[r * C + c] * a[r * C + c];
          }
          if (gv) (*gv)[r % vmod] += acc;
        }
      });
}

// Multiplies column c of every block by v[c]; v is [C] or [..., C].
inline Tensor scale_cols(const Tensor& a, const Tensor& v) {
  detail::require_rank_at_least("scale_cols", a, 2);
  const std::size_t C = a.shape().back();
  const std::size_t R = a.shape()[a.rank() - 2];
  const std::size_t batch = a.size() / (R * C);
  const bool shared = v.size() == C;
  if (!shared && v.size() != batch * C)
    throw DimensionError("scale_cols: vector " + shape_str(v.shape()) + " vs " +
                         shape_str(a.shape()));
  std::vector<double> out(a.size());
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t r = 0; r < R; ++r)
      for (std::size_t c = 0; c < C; ++c) {
        const std::size_t i = (b * R + r) * C + c;
        out[i] = a[i] * v[shared ? c : b * C + c];
      }
  return detail::make_result(
      "scale_cols", a.shape(), std::move(out), {&a, &v},
      [a, v, R, C, batch, shared](const std::vector<double>& g, const std::vector<double>&) {
        auto* ga = detail::grad_of(a);
        auto* gv = detail::grad_of(v);
        for (std::size_t b = 0; b < batch; ++b)
          for (std::size_t r = 0; r < R; ++r)
            for (std::size_t c = 0; c < C; ++c) {
              const std::size_t i = (b * R + r) * C + c;
              const std::size_t vi = shared ? c : b * C + c;
              if (ga) (*ga)[i] += g[i] * v[vi];
              if (gv) (*gv)[vi] += g[i] * a[i];
            }
      });
}

// Repeats v[..., C] as n identical rows: [..., n, C].
inline Tensor expand_rows(const Tensor& v, std::size_t n) {
  const std::size_t C = v.shape().back();
  const std::size_t batch = v.size() / C;
  std::vector<double> out(batch * n * C);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t c = 0; c < C; ++c) out[(b * n + r) * C + c] = v[b * C + c];
  return detail::make_result("expand_rows", detail::with_tail(v.shape(), 1, {n, C}), std::move(out),
                             {&v},
                             [v, n, C, batch](const std::vector<double>& g, const std::vector<double>&) {
                               auto& gv = v.node().grad_buffer();
                               for (std::size_t b = 0; b < batch; ++b)
                                 for (std::size_t r = 0; r < n; ++r)
                                   for (std::size_t c = 0; c < C; ++c) gv[b * C + c] += g[(b * n + r) * C + c];
                             });
}

// ---- matrix products -------------------------------------------------------

// a[..., N, K] · b[K, M] (shared right factor) or a[..., N, K] · b[..., K, M].
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  detail::require_rank_at_least("matmul", a, 2);
  detail::require_rank_at_least("matmul", b, 2);
  const std::size_t N = a.shape()[a.rank() - 2], K = a.shape().back();
  const std::size_t Kb = b.shape()[b.rank() - 2], M = b.shape().back();
  if (K != Kb)
    throw DimensionError("matmul: inner extents differ " + shape_str(a.shape()) + " · " +
                         shape_str(b.shape()));
  const bool shared = b.rank() == 2;
  const std::size_t batch = detail::leading(a.shape(), 2);
  if (!shared && (b.rank() != a.rank() ||
                  !std::equal(a.shape().begin(), a.shape().end() - 2, b.shape().begin())))
    throw DimensionError("matmul: batch extents differ " + shape_str(a.shape()) + " · " +
                         shape_str(b.shape()));
  std::vector<double> out(batch * N * M);
  const double* ad = a.data().data();
  const double* bd = b.data().data();
  if (shared) {
    detail::gemm(ad, bd, out.data(), batch * N, K, M, false, false, false);
  } else {
    for (std::size_t i = 0; i < batch; ++i)
      detail::gemm(ad + i * N * K, bd + i * K * M, out.data() + i * N * M, N, K, M, false, false,
                   false);
  }
  return detail::make_result(
      "matmul", detail::with_tail(a.shape(), 2, {N, M}), std::move(out), {&a, &b},
      [a, b, N, K, M, batch, shared](const std::vector<double>& g, const std::vector<double>&) {
        const double* ad = a.data().data();
        const double* bd = b.data().data();
        if (auto* ga = detail::grad_of(a)) {
          // da = g · bᵀ
          if (shared)
            detail::gemm(g.data(), bd, ga->data(), batch * N, M, K, false, true, true);
          else
            for (std::size_t i = 0; i < batch; ++i)
              detail::gemm(g.data() + i * N * M, bd + i * K * M, ga->data() + i * N * K, N, M, K,
                           false, true, true);
        }
        if (auto* gb = detail::grad_of(b)) {
          // db = aᵀ · g
          if (shared)
            detail::gemm(ad, g.data(), gb->data(), K, batch * N, M, true, false, true);
          else
            for (std::size_t i = 0; i < batch; ++i)
              detail::gemm(ad + i * N * K, g.data() + i * N * M, gb->data() + i * K * M, K, N, M,
                           true, false, true);
        }
      });
}

// Swaps the trailing two extents.
inline Tensor transpose(const Tensor& a) {
  detail::require_rank_at_least("transpose", a, 2);
  const std::size_t R = a.shape()[a.rank() - 2], C = a.shape().back();
  const std::size_t batch = detail::leading(a.shape(), 2);
  std::vector<double> out(a.size());
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t r = 0; r < R; ++r)
      for (std::size_t c = 0; c < C; ++c) out[b * R * C + c * R + r] = a[b * R * C + r * C + c];
  return detail::make_result("transpose", detail::with_tail(a.shape(), 2, {C, R}), std::move(out),
                             {&a},
                             [a, R, C, batch](const std::vector<double>& g, const std::vector<double>&) {
                               auto& ga = a.node().grad_buffer();
                               for (std::size_t b = 0; b < batch; ++b)
                                 for (std::size_t r = 0; r < R; ++r)
                                   for (std::size_t c = 0; c < C; ++c)
                                     ga[b * R * C + r * C + c] += g[b * R * C + c * R + r];
                             });
}

inline Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_size(shape) != a.size())
    throw DimensionError("reshape: " + shape_str(a.shape()) + " -> " + shape_str(shape));
  std::vector<double> out(a.data().begin(), a.data().end());
  return detail::make_result("reshape", std::move(shape), std::move(out), {&a},
                             [a](const std::vector<double>& g, const std::vector<double>&) {
                               auto& ga = a.node().grad_buffer();
                               for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                             });
}

// ---- row-wise (last extent) ops --------------------------------------------

inline Tensor softmax_rows(const Tensor& a) {
  const std::size_t C = a.shape().back();
  const std::size_t rows = a.size() / C;
  std::vector<double> out(a.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = a.data().data() + r * C;
    double mx = *std::max_element(x, x + C);
    double s = 0.0;
    for (std::size_t c = 0; c < C; ++c) s += (out[r * C + c] = std::exp(x[c] - mx));
    for (std::size_t c = 0; c < C; ++c) out[r * C + c] /= s;
  }
  return detail::make_result("softmax_rows", a.shape(), std::move(out), {&a},
                             [a, C, rows](const std::vector<double>& g, const std::vector<double>& y) {
                               auto& ga = a.node().grad_buffer();
                               for (std::size_t r = 0; r < rows; ++r) {
                                 double dot = 0.0;
                                 for (std::size_t c = 0; c < C; ++c) dot += g[r * C + c] * y[r * C + c];
                                 for (std::size_t c = 0; c < C; ++c)
                                   ga[r * C + c] += y[r * C + c] * (g[r * C + c] - dot);
                               }
                             });
}

// Standardizes each row over the last dimension, then applies gain and bias [C].
inline Tensor layer_norm(const Tensor& a, const Tensor& gain, const Tensor& bias, double eps = 1e-5) {
  const std::size_t C = a.shape().back();
  if (gain.shape() != Shape{C} || bias.shape() != Shape{C})
    throw DimensionError("layer_norm: gain/bias must be [" + std::to_string(C) + "]");
  const std::size_t rows = a.size() / C;
  std::vector<double> xhat(a.size()), inv(rows), out(a.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = a.data().data() + r * C;
    double mu = 0.0, var = 0.0;
    for (std::size_t c = 0; c < C; ++c) mu += x[c];
    mu /= static_cast<double>(C);
    for (std::size_t c = 0; c < C; ++c) var += (x[c] - mu) * (x[c] - mu);
    inv[r] = 1.0 / std::sqrt(var / static_cast<double>(C) + eps);
    for (std::size_t c = 0; c < C; ++c) {
      xhat[r * C + c] = (x[c] - mu) * inv[r];
      out[r * C + c] = xhat[r * C + c] * gain[c] + bias[c];
    }
  }
  return detail::make_result(
      "layer_norm", a.shape(), std::move(out), {&a, &gain, &bias},
      [a, gain, bias, C, rows, xhat = std::move(xhat), inv = std::move(inv)](const std::vector<double>& g,
                                                                           const std::vector<double>&) {
        if (auto* gg = detail::grad_of(gain))
          for (std::size_t i = 0; i < g.size(); ++i) (*gg)[i % C] += g[i] * xhat[i];
        if (auto* gb = detail::grad_of(bias))
          for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i % C] += g[i];
        auto* ga = detail::grad_of(a);
        if (!ga) return;
        const double n = static_cast<double>(C);
        for (std::size_t r = 0; r < rows; ++r) {
          double m1 = 0.0, m2 = 0.0;
          for (std::size_t c = 0; c < C; ++c) {
            const double gh = g[r * C + c] * gain[c];
            m1 += gh;
            m2 += gh * xhat[r * C + c];
          }
          m1 /= n;
          m2 /= n;
          for (std::size_t c = 0; c < C; ++c)
            (*ga)[r * C + c] += inv[r] * (g[r * C + c] * gain[c] - m1 - xhat[r * C + c] * m2);
        }
      });
}

struct BatchStats {
  std::vector<double> mean, var;  // biased variance
  std::size_t count = 0;
};

// Per-column standardization of a [B, D] batch with its own statistics, then
// gain and bias [D]. The statistics are written to `stats` when given.
inline Tensor batch_norm(const Tensor& a, const Tensor& gain, const Tensor& bias, double eps = 1e-5,
                         BatchStats* stats = nullptr) {
  if (a.rank() != 2) throw DimensionError("batch_norm: expects [B, D], got " + shape_str(a.shape()));
  const std::size_t B = a.dim(0), D = a.dim(1);
  if (gain.shape() != Shape{D} || bias.shape() != Shape{D})
    throw DimensionError("batch_norm: gain/bias must be [" + std::to_string(D) + "]");
  std::vector<double> mu(D, 0.0), var(D, 0.0), inv(D), xhat(a.size()), out(a.size());
  for (std::size_t i = 0; i < B; ++i)
    for (std::size_t d = 0; d < D; ++d) mu[d] += a[i * D + d];
  for (auto& m : mu) m /= static_cast<double>(B);
  for (std::size_t i = 0; i < B; ++i)
    for (std::size_t d = 0; d < D; ++d) var[d] += (a[i * D + d] - mu[d]) * (a[i * D + d] - mu[d]);
  for (std::size_t d = 0; d < D; ++d) {
    var[d] /= static_cast<double>(B);
    inv[d] = 1.0 / std::sqrt(var[d] + eps);
  }
  for (std::size_t i = 0; i < B; ++i)
    for (std::size_t d = 0; d < D; ++d) {
      xhat[i * D + d] = (a[i * D + d] - mu[d]) * inv[d];
      out[i * D + d] = xhat[i * D + d] * gain[d] + bias[d];
    }
  if (stats) *stats = {mu, var, B};
  return detail::make_result(
      "batch_norm", a.shape(), std::move(out), {&a, &gain, &bias},
      [a, gain, bias, B, D, xhat = std::move(xhat), inv = std::move(inv)](const std::vector<double>& g,
                                                                        const std::vector<double>&) {
        if (auto* gg = detail::grad_of(gain))
          for (std::size_t i = 0; i < g.size(); ++i) (*gg)[i % D] += g[i] * xhat[i];
        if (auto* gb = detail::grad_of(bias))
          for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i % D] += g[i];
        auto* ga = detail::grad_of(a);
        if (!ga) return;
        std::vector<double> m1(D, 0.0), m2(D, 0.0);
        for (std::size_t i = 0; i < B; ++i)
          for (std::size_t d = 0; d < D; ++d) {
            const double gh = g[i * D + d] * gain[d];
            m1[d] += gh;
            m2[d] += gh * xhat[i * D + d];
          }
        const double n = static_cast<double>(B);
        for (std::size_t i = 0; i < B; ++i)
          for (std::size_t d = 0; d < D; ++d)
            (*ga)[i * D + d] +=
                inv[d] * (g[i * D + d] * gain[d] - m1[d] / n - xhat[i * D + d] * m2[d] / n);
      });
}

// x / max(‖x‖₂, eps) per row.
inline Tensor l2_normalize_rows(const Tensor& a, double eps = 1e-12) {
  const std::size_t C = a.shape().back();
  const std::size_t rows = a.size() / C;
  std::vector<double> norms(rows), out(a.size());
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < C; ++c) s += a[r * C + c] * a[r * C + c];
    norms[r] = std::max(std::sqrt(s), eps);
    for (std::size_t c = 0; c < C; ++c) out[r * C + c] = a[r * C + c] / norms[r];
  }
  return detail::make_result(
      "l2_normalize_rows", a.shape(), std::move(out), {&a},
      [a, C, rows, norms, eps](const std::vector<double>& g, const std::vector<double>& y) {
        auto& ga = a.node().grad_buffer();
        for (std::size_t r = 0; r < rows; ++r) {
          const double n = norms[r];
          if (n <= eps) {
            for (std::size_t c = 0; c < C; ++c) ga[r * C + c] += g[r * C + c] / eps;
            continue;
          }
          double dot = 0.0;
          for (std::size_t c = 0; c < C; ++c) dot += g[r * C + c] * y[r * C + c];
          for (std::size_t c = 0; c < C; ++c)
            ga[r * C + c] += (g[r * C + c] - y[r * C + c] * dot) / n;
        }
      });
}

// ---- reductions ------------------------------------------------------------

inline Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double x : a.data()) s += x;
  return detail::make_result("sum", {1}, {s}, {&a},
                             [a](const std::vector<double>& g, const std::vector<double>&) {
                               auto& ga = a.node().grad_buffer();
                               for (auto& x : ga) x += g[0];
                             });
}

inline Tensor mean(const Tensor& a) {
  double s = 0.0;
  for (double x : a.data()) s += x;
  const double n = static_cast<double>(a.size());
  return detail::make_result("mean", {1}, {s / n}, {&a},
                             [a, n](const std::vector<double>& g, const std::vector<double>&) {
                               auto& ga = a.node().grad_buffer();
                               for (auto& x : ga) x += g[0] / n;
                             });
}

// Sums over the last extent: [..., C] -> [...] (rank-1 input gives [1]).
inline Tensor sum_last(const Tensor& a) {
  const std::size_t C = a.shape().back();
  const std::size_t rows = a.size() / C;
  std::vector<double> out(rows, 0.0);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < C; ++c) out[r] += a[r * C + c];
  Shape s(a.shape().begin(), a.shape().end() - 1);
  if (s.empty()) s = {1};
  return detail::make_result("sum_last", std::move(s), std::move(out), {&a},
                             [a, C, rows](const std::vector<double>& g, const std::vector<double>&) {
                               auto& ga = a.node().grad_buffer();
                               for (std::size_t r = 0; r < rows; ++r)
                                 for (std::size_t c = 0; c < C; ++c) ga[r * C + c] += g[r];
                             });
}

// Mean over the second-to-last extent: [..., R, C] -> [..., C].
inline Tensor mean_rows(const Tensor& a) {
  detail::require_rank_at_least("mean_rows", a, 2);
  const std::size_t R = a.shape()[a.rank() - 2], C = a.shape().back();
  const std::size_t batch = detail::leading(a.shape(), 2);
  std::vector<double> out(batch * C, 0.0);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t r = 0; r < R; ++r)
      for (std::size_t c = 0; c < C; ++c) out[b * C + c] += a[(b * R + r) * C + c];
  for (auto& x : out) x /= static_cast<double>(R);
  Shape s(a.shape().begin(), a.shape().end() - 2);
  s.push_back(C);
  return detail::make_result("mean_rows", std::move(s), std::move(out), {&a},
                             [a, R, C, batch](const std::vector<double>& g, const std::vector<double>&) {
                               auto& ga = a.node().grad_buffer();
                               const double inv = 1.0 / static_cast<double>(R);
                               for (std::size_t b = 0; b < batch; ++b)
                                 for (std::size_t r = 0; r < R; ++r)
                                   for (std::size_t c = 0; c < C; ++c)
                                     ga[(b * R + r) * C + c] += g[b * C + c] * inv;
                             });
}

// Sum over the second-to-last extent: [..., R, C] -> [..., C].
inline Tensor sum_rows(const Tensor& a) {
  const double R = static_cast<double>(a.shape().at(a.rank() - 2));
  return scale(mean_rows(a), R);
}

// ---- structural ------------------------------------------------------------

// Concatenates along the last extent; all leading extents must agree.
inline Tensor concat_last(const std::vector<Tensor>& xs) {
  if (xs.empty()) throw ContractError("concat_last: empty input");
  const Shape lead(xs[0].shape().begin(), xs[0].shape().end() - 1);
  const std::size_t rows = shape_size(lead);
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (auto& x : xs) {
    if (Shape(x.shape().begin(), x.shape().end() - 1) != lead)
      throw DimensionError("concat_last: leading extents differ");
    widths.push_back(x.shape().back());
    total += x.shape().back();
  }
  std::vector<double> out(rows * total);
  std::size_t off = 0;
  for (std::size_t k = 0; k < xs.size(); ++k) {
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < widths[k]; ++c) out[r * total + off + c] = xs[k][r * widths[k] + c];
    off += widths[k];
  }
  Shape s = lead;
  s.push_back(total);
  return detail::make_result(
      "concat_last", std::move(s), std::move(out), xs,
      [xs, widths, rows, total](const std::vector<double>& g, const std::vector<double>&) {
        std::size_t off = 0;
        for (std::size_t k = 0; k < xs.size(); ++k) {
          if (auto* gx = detail::grad_of(xs[k]))
            for (std::size_t r = 0; r < rows; ++r)
              for (std::size_t c = 0; c < widths[k]; ++c)
                (*gx)[r * widths[k] + c] += g[r * total + off + c];
          off += widths[k];
        }
      });
}

// Concatenates along the first extent; trailing extents must agree.
inline Tensor concat_first(const std::vector<Tensor>& xs) {
  if (xs.empty()) throw ContractError("concat_first: empty input");
  const Shape tail(xs[0].shape().begin() + 1, xs[0].shape().end());
  std::size_t lead = 0;
  std::vector<double> out;
  for (auto& x : xs) {
    if (Shape(x.shape().begin() + 1, x.shape().end()) != tail)
      throw DimensionError("concat_first: trailing extents differ");
    lead += x.dim(0);
    out.insert(out.end(), x.data().begin(), x.data().end());
  }
  Shape s{lead};
  s.insert(s.end(), tail.begin(), tail.end());
  return detail::make_result("concat_first", std::move(s), std::move(out), xs,
                             [xs](const std::vector<double>& g, const std::vector<double>&) {
                               std::size_t off = 0;
                               for (auto& x : xs) {
                                 if (auto* gx = detail::grad_of(x))
                                   for (std::size_t i = 0; i < x.size(); ++i) (*gx)[i] += g[off + i];
                                 off += x.size();
                               }
                             });
}

// Columns [begin, end) of the last extent.
inline Tensor slice_last(const Tensor& a, std::size_t begin, std::size_t end) {
  const std::size_t C = a.shape().back();
  if (begin >= end || end > C) throw DimensionError("slice_last: bad range");
  const std::size_t rows = a.size() / C, w = end - begin;
  std::vector<double> out(rows * w);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < w; ++c) out[r * w + c] = a[r * C + begin + c];
  return detail::make_result(
      "slice_last", detail::with_tail(a.shape(), 1, {w}), std::move(out), {&a},
      [a, rows, w, C, begin](const std::vector<double>& g, const std::vector<double>&) {
        auto& ga = a.node().grad_buffer();
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t c = 0; c < w; ++c) ga[r * C + begin + c] += g[r * w + c];
      });
}

// Rows [begin, end) of the second-to-last extent.
inline Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t end) {
  detail::require_rank_at_least("slice_rows", a, 2);
  const std::size_t R = a.shape()[a.rank() - 2], C = a.shape().back();
  if (begin >= end || end > R) throw DimensionError("slice_rows: bad range");
  const std::size_t batch = detail::leading(a.shape(), 2), h = end - begin;
  std::vector<double> out(batch * h * C);
  for (std::size_t b = 0; b < batch; ++b)
    std::copy_n(a.data().begin() + static_cast<std::ptrdiff_t>((b * R + begin) * C), h * C,
                out.begin() + static_cast<std::ptrdiff_t>(b * h * C));
  return detail::make_result(
      "slice_rows", detail::with_tail(a.shape(), 2, {h, C}), std::move(out), {&a},
      [a, batch, R, C, h, begin](const std::vector<double>& g, const std::vector<double>&) {
        auto& ga = a.node().grad_buffer();
        for (std::size_t b = 0; b < batch; ++b)
          for (std::size_t i = 0; i < h * C; ++i) ga[(b * R + begin) * C + i] += g[b * h * C + i];
      });
}

// Gathers entries along the first extent: out[i] = a[idx[i]].
inline Tensor index_select(const Tensor& a, const std::vector<std::size_t>& idx) {
  const std::size_t inner = a.size() / a.dim(0);
  std::vector<double> out(idx.size() * inner);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= a.dim(0)) throw DimensionError("index_select: index out of range");
    std::copy_n(a.data().begin() + static_cast<std::ptrdiff_t>(idx[i] * inner), inner,
                out.begin() + static_cast<std::ptrdiff_t>(i * inner));
  }
  Shape s = a.shape();
  s[0] = idx.size();
  return detail::make_result("index_select", std::move(s), std::move(out), {&a},
                             [a, idx, inner](const std::vector<double>& g, const std::vector<double>&) {
                               auto& ga = a.node().grad_buffer();
                               for (std::size_t i = 0; i < idx.size(); ++i)
                                 for (std::size_t k = 0; k < inner; ++k)
                                   ga[idx[i] * inner + k] += g[i * inner + k];
                             });
}

// Picks a[r][c] for each (r, c) of a matrix: returns [K].
inline Tensor pick(const Tensor& a, const std::vector<std::pair<std::size_t, std::size_t>>& at) {
  if (a.rank() != 2) throw DimensionError("pick: expects a matrix");
  if (at.empty()) throw ContractError("pick: no positions");
  const std::size_t C = a.dim(1);
  std::vector<double> out(at.size());
  for (std::size_t i = 0; i < at.size(); ++i) {
    if (at[i].first >= a.dim(0) || at[i].second >= C) throw DimensionError("pick: out of range");
    out[i] = a[at[i].first * C + at[i].second];
  }
  return detail::make_result("pick", {at.size()}, std::move(out), {&a},
                             [a, at, C](const std::vector<double>& g, const std::vector<double>&) {
                               auto& ga = a.node().grad_buffer();
                               for (std::size_t i = 0; i < at.size(); ++i)
                                 ga[at[i].first * C + at[i].second] += g[i];
                             });
}

// ---- losses and fused ops --------------------------------------------------

// Mean over rows of -log softmax(logits[r])[labels[r]].
inline Tensor cross_entropy(const Tensor& logits, const std::vector<std::size_t>& labels) {
  if (logits.rank() != 2) throw DimensionError("cross_entropy: logits must be a matrix");
  const std::size_t R = logits.dim(0), C = logits.dim(1);
  if (labels.size() != R) throw DimensionError("cross_entropy: label count differs from rows");
  std::vector<double> prob(R * C);
  double loss = 0.0;
  for (std::size_t r = 0; r < R; ++r) {
    if (labels[r] >= C) throw ContractError("cross_entropy: label out of range");
    const double* x = logits.data().data() + r * C;
    const double mx = *std::max_element(x, x + C);
    double s = 0.0;
    for (std::size_t c = 0; c < C; ++c) s += (prob[r * C + c] = std::exp(x[c] - mx));
    for (std::size_t c = 0; c < C; ++c) prob[r * C + c] /= s;
    loss += -(x[labels[r]] - mx - std::log(s));
  }
  loss /= static_cast<double>(R);
  return detail::make_result(
      "cross_entropy", {1}, {loss}, {&logits},
      [logits, labels, prob, R, C](const std::vector<double>& g, const std::vector<double>&) {
        auto& gl = logits.node().grad_buffer();
        const double s = g[0] / static_cast<double>(R);
        for (std::size_t r = 0; r < R; ++r)
          for (std::size_t c = 0; c < C; ++c)
            gl[r * C + c] += s * (prob[r * C + c] - (c == labels[r] ? 1.0 : 0.0));
      });
}

// ReLU(P - lambda * mean(P) 11ᵀ) with the mean taken over each whole matrix block.
inline Tensor prune_attention(const Tensor& p, double lambda) {
  detail::require_rank_at_least("prune_attention", p, 2);
  const std::size_t block = p.shape()[p.rank() - 2] * p.shape().back();
  const std::size_t batch = p.size() / block;
  std::vector<double> out(p.size()), thresh(batch);
  for (std::size_t b = 0; b < batch; ++b) {
    double s = 0.0;
    for (std::size_t i = 0; i < block; ++i) s += p[b * block + i];
    thresh[b] = lambda * s / static_cast<double>(block);
    for (std::size_t i = 0; i < block; ++i) {
      const double v = p[b * block + i] - thresh[b];
      out[b * block + i] = v > 0.0 ? v : 0.0;
    }
  }
  return detail::make_result(
      "prune_attention", p.shape(), std::move(out), {&p},
      [p, lambda, block, batch](const std::vector<double>& g, const std::vector<double>& y) {
        auto& gp = p.node().grad_buffer();
        for (std::size_t b = 0; b < batch; ++b) {
          double active = 0.0;
          for (std::size_t i = 0; i < block; ++i)
            if (y[b * block + i] > 0.0) {
              gp[b * block + i] += g[b * block + i];
              active += g[b * block + i];
            }
          const double d = lambda * active / static_cast<double>(block);
          for (std::size_t i = 0; i < block; ++i) gp[b * block + i] -= d;
        }
      });
}

// 3×3, stride 1, zero-padded patch extraction: [B, H, W, C] -> [B, H, W, 9C].
// Patch layout is (dy, dx, c) with dy, dx in {-1, 0, 1}.
inline Tensor im2col3x3(const Tensor& a) {
  if (a.rank() != 4) throw DimensionError("im2col3x3: expects [B, H, W, C]");
  const std::size_t B = a.dim(0), H = a.dim(1), W = a.dim(2), C = a.dim(3);
  std::vector<double> out(B * H * W * 9 * C, 0.0);
  auto src = [=](std::size_t b, std::size_t y, std::size_t x) { return ((b * H + y) * W + x) * C; };
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t x = 0; x < W; ++x) {
        double* dst = out.data() + ((b * H + y) * W + x) * 9 * C;
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx, dst += C) {
            const long yy = static_cast<long>(y) + dy, xx = static_cast<long>(x) + dx;
            if (yy < 0 || xx < 0 || yy >= static_cast<long>(H) || xx >= static_cast<long>(W)) continue;
            std::copy_n(a.data().begin() + static_cast<std::ptrdiff_t>(src(b, yy, xx)), C, dst);
          }
      }
  return detail::make_result(
      "im2col3x3", {B, H, W, 9 * C}, std::move(out), {&a},
      [a, B, H, W, C, src](const std::vector<double>& g, const std::vector<double>&) {
        auto& ga = a.node().grad_buffer();
        for (std::size_t b = 0; b < B; ++b)
          for (std::size_t y = 0; y < H; ++y)
            for (std::size_t x = 0; x < W; ++x) {
              const double* gs = g.data() + ((b * H + y) * W + x) * 9 * C;
              for (int dy = -1; dy <= 1; ++dy)
                for (int dx = -1; dx <= 1; ++dx, gs += C) {
                  const long yy = static_cast<long>(y) + dy, xx = static_cast<long>(x) + dx;
                  if (yy < 0 || xx < 0 || yy >= static_cast<long>(H) || xx >= static_cast<long>(W))
                    continue;
                  double* gd = ga.data() + src(b, yy, xx);
                  for (std::size_t c = 0; c < C; ++c) gd[c] += gs[c];
                }
            }
      });
}

// 2×2 average pooling, stride 2: [B, H, W, C] -> [B, H/2, W/2, C].
inline Tensor avg_pool2x2(const Tensor& a) {
  if (a.rank() != 4) throw DimensionError("avg_pool2x2: expects [B, H, W, C]");
  const std::size_t B = a.dim(0), H = a.dim(1), W = a.dim(2), C = a.dim(3);
  if (H % 2 || W % 2) throw DimensionError("avg_pool2x2: odd spatial extent");
  const std::size_t Ho = H / 2, Wo = W / 2;
  std::vector<double> out(B * Ho * Wo * C, 0.0);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t x = 0; x < W; ++x)
        for (std::size_t c = 0; c < C; ++c)
          out[((b * Ho + y / 2) * Wo + x / 2) * C + c] += 0.25 * a[((b * H + y) * W + x) * C + c];
  return detail::make_result(
      "avg_pool2x2", {B, Ho, Wo, C}, std::move(out), {&a},
      [a, B, H, W, C, Ho, Wo](const std::vector<double>& g, const std::vector<double>&) {
        auto& ga = a.node().grad_buffer();
        for (std::size_t b = 0; b < B; ++b)
          for (std::size_t y = 0; y < H; ++y)
            for (std::size_t x = 0; x < W; ++x)
              for (std::size_t c = 0; c < C; ++c)
                ga[((b * H + y) * W + x) * C + c] += 0.25 * g[((b * Ho + y / 2) * Wo + x / 2) * C + c];
      });
}

}  // namespace hosnet
