#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "hosnet/ops.hpp"

namespace hosnet {

namespace detail {

// In-place forward substitution: x <- L⁻¹ x for an n×k right-hand side.
inline void forward_subst(const double* L, double* x, std::size_t n, std::size_t k) {
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t p = 0; p < i; ++p) {
      const double l = L[i * n + p];
      if (l == 0.0) continue;
      for (std::size_t j = 0; j < k; ++j) x[i * k + j] -= l * x[p * k + j];
    }
    const double d = L[i * n + i];
    for (std::size_t j = 0; j < k; ++j) x[i * k + j] /= d;
  }
}

// In-place back substitution with the transpose: x <- L⁻ᵀ x.
inline void backward_subst_t(const double* L, double* x, std::size_t n, std::size_t k) {
  for (std::size_t ii = n; ii-- > 0;) {
    for (std::size_t p = ii + 1; p < n; ++p) {
      const double l = L[p * n + ii];
      if (l == 0.0) continue;
      for (std::size_t j = 0; j < k; ++j) x[ii * k + j] -= l * x[p * k + j];
    }
    const double d = L[ii * n + ii];
    for (std::size_t j = 0; j < k; ++j) x[ii * k + j] /= d;
  }
}

inline void cholesky_block(const double* s, double* L, std::size_t n) {
  std::fill(L, L + n * n, 0.0);
  for (std::size_t j = 0; j < n; ++j) {
    double d = s[j * n + j];
    for (std::size_t p = 0; p < j; ++p) d -= L[j * n + p] * L[j * n + p];
    if (!(d > 0.0))
      throw NumericalError("cholesky: non-positive pivot at index " + std::to_string(j));
    const double ljj = std::sqrt(d);
    L[j * n + j] = ljj;
    for (std::size_t i = j + 1; i < n; ++i) {
      double v = s[i * n + j];
      for (std::size_t p = 0; p < j; ++p) v -= L[i * n + p] * L[j * n + p];
      L[i * n + j] = v / ljj;
    }
  }
}

}  // namespace detail

// Lower-triangular L with L·Lᵀ = sigma, reading only the lower triangle of
// each [..., C, C] block. The gradient is returned symmetrized:
//   sigma_bar = ½ L⁻ᵀ (Φ + Φᵀ) L⁻¹,  Φ = tril(Lᵀ L_bar) with halved diagonal.
inline Tensor cholesky(const Tensor& sigma) {
  detail::require_rank_at_least("cholesky", sigma, 2);
  const std::size_t n = sigma.shape().back();
  if (sigma.shape()[sigma.rank() - 2] != n) throw DimensionError("cholesky: matrix must be square");
  const std::size_t batch = sigma.size() / (n * n);
  std::vector<double> out(sigma.size());
  for (std::size_t b = 0; b < batch; ++b)
    detail::cholesky_block(sigma.data().data() + b * n * n, out.data() + b * n * n, n);
  return detail::make_result(
      "cholesky", sigma.shape(), std::move(out), {&sigma},
      [sigma, n, batch](const std::vector<double>& g, const std::vector<double>& Ls) {
        auto& gs = sigma.node().grad_buffer();
        std::vector<double> phi(n * n);
        for (std::size_t b = 0; b < batch; ++b) {
          const double* L = Ls.data() + b * n * n;
          const double* gL = g.data() + b * n * n;
          // phi = Lᵀ gL, lower triangle, halved diagonal
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j) {
              double v = 0.0;
              if (j <= i)
                for (std::size_t p = i; p < n; ++p) v += L[p * n + i] * gL[p * n + j];
              phi[i * n + j] = j < i ? v : (j == i ? 0.5 * v : 0.0);
            }
          // S = L⁻ᵀ phi L⁻¹ : solve from the left, then transpose-solve for the right factor.
          detail::backward_subst_t(L, phi.data(), n, n);
          std::vector<double> t(n * n);
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j) t[i * n + j] = phi[j * n + i];
          detail::backward_subst_t(L, t.data(), n, n);  // t = L⁻ᵀ (L⁻ᵀ phi)ᵀ = (S)ᵀ
          double* gdst = gs.data() + b * n * n;
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j)
              gdst[i * n + j] += 0.5 * (t[i * n + j] + t[j * n + i]);
        }
      });
}

// X = L⁻¹ B for lower-triangular L[..., C, C] and B[..., C, K] (shared L
// when L is rank 2). Only the lower triangle of L is read.
inline Tensor solve_lower(const Tensor& L, const Tensor& B) {
  detail::require_rank_at_least("solve_lower", L, 2);
  detail::require_rank_at_least("solve_lower", B, 2);
  const std::size_t n = L.shape().back();
  if (L.shape()[L.rank() - 2] != n || B.shape()[B.rank() - 2] != n)
    throw DimensionError("solve_lower: " + shape_str(L.shape()) + " vs " + shape_str(B.shape()));
  const std::size_t k = B.shape().back();
  const std::size_t batch = B.size() / (n * k);
  const bool shared = L.size() == n * n;
  if (!shared && L.size() != batch * n * n) throw DimensionError("solve_lower: batch mismatch");
  std::vector<double> out(B.data().begin(), B.data().end());
  for (std::size_t b = 0; b < batch; ++b) {
    const double* Lb = L.data().data() + (shared ? 0 : b * n * n);
    for (std::size_t i = 0; i < n; ++i)
      if (!(std::abs(Lb[i * n + i]) > 0.0))
        throw NumericalError("solve_lower: zero diagonal at index " + std::to_string(i));
    detail::forward_subst(Lb, out.data() + b * n * k, n, k);
  }
  return detail::make_result(
      "solve_lower", B.shape(), std::move(out), {&L, &B},
      [L, B, n, k, batch, shared](const std::vector<double>& g, const std::vector<double>& X) {
        auto* gL = detail::grad_of(L);
        auto* gB = detail::grad_of(B);
        std::vector<double> gb(n * k);
        for (std::size_t b = 0; b < batch; ++b) {
          const double* Lb = L.data().data() + (shared ? 0 : b * n * n);
          std::copy_n(g.data() + b * n * k, n * k, gb.begin());
          detail::backward_subst_t(Lb, gb.data(), n, k);  // gb = L⁻ᵀ g
          if (gB)
            for (std::size_t i = 0; i < n * k; ++i) (*gB)[b * n * k + i] += gb[i];
          if (gL) {
            double* dst = gL->data() + (shared ? 0 : b * n * n);
            const double* Xb = X.data() + b * n * k;
            for (std::size_t i = 0; i < n; ++i)
              for (std::size_t j = 0; j <= i; ++j) {
                double v = 0.0;
                for (std::size_t c = 0; c < k; ++c) v += gb[i * k + c] * Xb[j * k + c];
                dst[i * n + j] -= v;
              }
          }
        }
      });
}

}  // namespace hosnet
