#pragma once

// Independent literal reimplementations of the model equations and retrieval
// metrics on plain nested vectors, used as test oracles. None of these call
// the library's tensor ops.

#include <algorithm>
#include <cmath>
#include <vector>

#include "test_util.hpp"

namespace hosnet::oracle {

using testing::Mat;
using testing::mat_mul;
using testing::mat_t;

inline Mat diag(const std::vector<double>& v) {
  Mat d(v.size(), std::vector<double>(v.size(), 0.0));
  for (std::size_t i = 0; i < v.size(); ++i) d[i][i] = v[i];
  return d;
}

inline Mat mat_add(const Mat& a, const Mat& b, double sb = 1.0) {
  Mat c = a;
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < a[i].size(); ++j) c[i][j] += sb * b[i][j];
  return c;
}

inline Mat softmax_rows(const Mat& a) {
  Mat s = a;
  for (auto& row : s) {
    double z = 0.0;
    for (double v : row) z += std::exp(v);
    for (double& v : row) v = std::exp(v) / z;
  }
  return s;
}

// Pre-threshold incidence scores Ψ(F′) Λ Ψ(F′)ᵀ Ω(F′) with the N×N affinity
// formed explicitly.
inline Mat incidence_scores(const Mat& fw, const Mat& psi, const std::vector<double>& lambda,
                            const Mat& omega) {
  const Mat proj = mat_mul(fw, psi);
  const Mat affinity = mat_mul(mat_mul(proj, diag(lambda)), mat_t(proj));
  return mat_mul(affinity, mat_mul(fw, omega));
}

inline Mat step(const Mat& s) {
  Mat h = s;
  for (auto& row : h)
    for (double& v : row) v = v > 0.0 ? 1.0 : 0.0;
  return h;
}

// R = (I − D^{1/2} H W B⁻¹ Hᵀ D^{−1/2}) F′ Θ + F with dense diagonal matrices.
inline Mat hypergraph_convolve(const Mat& f, const Mat& fw, const Mat& H, const std::vector<double>& w,
                               const Mat& theta, double eps_deg = 1e-6) {
  const std::size_t N = H.size(), M = H[0].size();
  std::vector<double> dv(N, eps_deg), de(M, eps_deg);
  for (std::size_t i = 0; i < N; ++i)
    for (std::size_t j = 0; j < M; ++j) {
      dv[i] += H[i][j];
      de[j] += H[i][j];
    }
  std::vector<double> d_half(N), d_minus_half(N), b_inv(M);
  for (std::size_t i = 0; i < N; ++i) {
    d_half[i] = std::sqrt(dv[i]);
    d_minus_half[i] = 1.0 / std::sqrt(dv[i]);
  }
  for (std::size_t j = 0; j < M; ++j) b_inv[j] = 1.0 / de[j];
  Mat op = mat_mul(mat_mul(mat_mul(mat_mul(mat_mul(diag(d_half), H), diag(w)), diag(b_inv)), mat_t(H)),
                   diag(d_minus_half));
  std::vector<double> ones(N, 1.0);
  const Mat lap = mat_add(diag(ones), op, -1.0);
  return mat_add(mat_mul(mat_mul(lap, fw), theta), f);
}

// ReLU(P − λ·Mean(P)·11ᵀ)·(key_value θ_v), P = softmax((query θ_q)(key_value θ_k)ᵀ).
inline Mat gat_align(const Mat& q, const Mat& kv, const Mat& tq, const Mat& tk, const Mat& tv,
                     double lambda) {
  const Mat P = softmax_rows(mat_mul(mat_mul(q, tq), mat_t(mat_mul(kv, tk))));
  double mean = 0.0;
  for (auto& row : P)
    for (double v : row) mean += v;
  mean /= static_cast<double>(P.size() * P[0].size());
  Mat pruned = P;
  for (auto& row : pruned)
    for (double& v : row) v = std::max(v - lambda * mean, 0.0);
  return mat_mul(pruned, mat_mul(kv, tv));
}

// Slot order L_vis, S_vis, L_ir, S_ir. M_L^vis = GAT(R_L^vis, R_S^ir) +
// GAT(R_L^vis, R_L^ir) + GAT(R_L^vis, R_S^vis) + R_L^vis, and likewise with
// the query role rotated through the other three slots.
inline std::vector<Mat> build_middle(const std::vector<Mat>& r, const Mat& tq, const Mat& tk, const Mat& tv,
                                     double lambda) {
  const int partners[4][3] = {{3, 2, 1}, {2, 3, 0}, {1, 0, 3}, {0, 1, 2}};
  std::vector<Mat> out;
  for (int a = 0; a < 4; ++a) {
    Mat m = r[static_cast<std::size_t>(a)];
    for (int b : partners[a]) m = mat_add(m, gat_align(r[static_cast<std::size_t>(a)], r[static_cast<std::size_t>(b)], tq, tk, tv, lambda));
    out.push_back(m);
  }
  return out;
}

// s_j = Σ_k ⟨r_j, r_k⟩, w = softmax(s), c = Σ_j w_j r_j, by two loops.
inline std::vector<double> identity_center(const Mat& r) {
  const std::size_t K = r.size(), D = r[0].size();
  std::vector<double> s(K, 0.0);
  for (std::size_t j = 0; j < K; ++j)
    for (std::size_t k = 0; k < K; ++k)
      for (std::size_t d = 0; d < D; ++d) s[j] += r[j][d] * r[k][d];
  double mx = *std::max_element(s.begin(), s.end()), z = 0.0;
  for (double v : s) z += std::exp(v - mx);
  std::vector<double> c(D, 0.0);
  for (std::size_t j = 0; j < K; ++j) {
    const double w = std::exp(s[j] - mx) / z;
    for (std::size_t d = 0; d < D; ++d) c[d] += w * r[j][d];
  }
  return c;
}

// The MRIC pseudocode: normalize, S = a bᵀ, cross-entropy of S and Sᵀ against
// the diagonal, plus the mean over identities of ‖a_i − b_i‖₁.
inline double mric_pair(const Mat& a, const Mat& b) {
  auto normalize = [](Mat m) {
    for (auto& row : m) {
      double n = 0.0;
      for (double v : row) n += v * v;
      n = std::sqrt(n);
      for (double& v : row) v /= n;
    }
    return m;
  };
  const Mat S = mat_mul(normalize(a), mat_t(normalize(b)));
  auto ce = [](const Mat& logits) {
    double total = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
      double z = 0.0;
      for (double v : logits[i]) z += std::exp(v);
      total += -std::log(std::exp(logits[i][i]) / z);
    }
    return total / static_cast<double>(logits.size());
  };
  double l1 = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t d = 0; d < a[i].size(); ++d) l1 += std::abs(a[i][d] - b[i][d]);
  return ce(S) + ce(mat_t(S)) + l1 / static_cast<double>(a.size());
}

inline double cosine_distance(const std::vector<double>& a, const std::vector<double>& b) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return 1.0 - dot / (std::sqrt(na) * std::sqrt(nb));
}

// 0-based rank of gallery item j for a query: the number of items strictly
// closer, plus equally close items with a smaller index.
inline std::vector<std::size_t> ranks(const std::vector<double>& q, const Mat& gallery) {
  std::vector<double> d;
  for (auto& g : gallery) d.push_back(cosine_distance(q, g));
  std::vector<std::size_t> r(gallery.size(), 0);
  for (std::size_t j = 0; j < gallery.size(); ++j)
    for (std::size_t k = 0; k < gallery.size(); ++k)
      if (d[k] < d[j] || (d[k] == d[j] && k < j)) ++r[j];
  return r;
}

inline std::vector<double> cmc(const Mat& query, const std::vector<int>& qid, const Mat& gallery,
                               const std::vector<int>& gid, const std::vector<std::size_t>& ks) {
  std::vector<double> hits(ks.size(), 0.0);
  double used = 0.0;
  for (std::size_t i = 0; i < query.size(); ++i) {
    const auto r = ranks(query[i], gallery);
    std::size_t best = gallery.size();
    for (std::size_t j = 0; j < gallery.size(); ++j)
      if (gid[j] == qid[i]) best = std::min(best, r[j]);
    if (best == gallery.size()) continue;
    used += 1.0;
    for (std::size_t k = 0; k < ks.size(); ++k)
      if (best + 1 <= ks[k]) hits[k] += 1.0;
  }
  for (auto& h : hits) h = used > 0.0 ? h / used : 0.0;
  return hits;
}

// AP = mean over relevant items of (relevant items ranked at or above it) / rank.
inline double mean_ap(const Mat& query, const std::vector<int>& qid, const Mat& gallery,
                      const std::vector<int>& gid) {
  double total = 0.0, used = 0.0;
  for (std::size_t i = 0; i < query.size(); ++i) {
    const auto r = ranks(query[i], gallery);
    double ap = 0.0, rel = 0.0;
    for (std::size_t j = 0; j < gallery.size(); ++j) {
      if (gid[j] != qid[i]) continue;
      rel += 1.0;
      double above = 0.0;
      for (std::size_t k = 0; k < gallery.size(); ++k)
        if (gid[k] == qid[i] && r[k] <= r[j]) above += 1.0;
      ap += above / static_cast<double>(r[j] + 1);
    }
    if (rel == 0.0) continue;
    total += ap / rel;
    used += 1.0;
  }
  return used > 0.0 ? total / used : 0.0;
}

}  // namespace hosnet::oracle
