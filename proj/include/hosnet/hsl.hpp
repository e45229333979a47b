#pragma once

// Whitened hypergraph relation enhancement.
//
// Each feature F ∈ [N, C] is treated as N nodes. The nodes are whitened with
// a Cholesky factor of their covariance, a binary incidence matrix H ∈ [N, M]
// is thresholded from a learned cross-correlation, and a hypergraph
// convolution adds the propagated signal back onto F:
//
//   R = (I − D^{1/2} H W B⁻¹ Hᵀ D^{−1/2}) F′ Θ + F
//
// All functions accept a leading batch extent: [B, N, C].

#include <string>

#include "hosnet/linalg.hpp"
#include "hosnet/params.hpp"
#include "hosnet/sle.hpp"

namespace hosnet {

inline constexpr double kDegreeEpsilon = 1e-6;

struct HslConfig {
  bool enabled = true;
  bool whitening = true;
  std::size_t hyperedges = 16;
  std::size_t metric_width = 0;  // C′ of the metric projection; 0 selects C
  double eps_cov = 1e-5;
};

struct WhiteningParams {
  Tensor gamma;  // [N], one scale per node
  Tensor beta;   // [N, C]
  double eps_cov = 1e-5;
};

struct IncidenceParams {
  Tensor psi;           // [C, C′]
  Tensor lambda_diag;   // [C′]
  Tensor omega;         // [C, M]
  Tensor edge_weights;  // [M]
  Tensor theta;         // [C, C]
};

struct HslParams {
  WhiteningParams whitening;
  IncidenceParams incidence;
  bool whiten = true;

  static HslParams create(ParameterStore& ps, const HslConfig& cfg, std::size_t nodes,
                          std::size_t channels, Rng& rng) {
    if (cfg.eps_cov <= 0.0) throw ConfigError("hsl.eps_cov must be positive");
    if (cfg.hyperedges < 1) throw ConfigError("hsl.hyperedges must be positive");
    const std::size_t cm = cfg.metric_width ? cfg.metric_width : channels;
    const double s = 1.0 / std::sqrt(static_cast<double>(channels));
    HslParams p;
    p.whiten = cfg.whitening;
    if (cfg.whitening) {
      p.whitening.gamma = ps.add_constant("hsl.gamma", {nodes}, 1.0);
      p.whitening.beta = ps.add_constant("hsl.beta", {nodes, channels}, 0.0);
    }
    p.whitening.eps_cov = cfg.eps_cov;
    p.incidence.psi = ps.add_normal("hsl.psi", {channels, cm}, s, rng);
    p.incidence.lambda_diag = ps.add_constant("hsl.lambda", {cm}, 1.0);
    p.incidence.omega = ps.add_normal("hsl.omega", {channels, cfg.hyperedges}, s, rng);
    p.incidence.edge_weights = ps.add_constant("hsl.edge_weights", {cfg.hyperedges}, 1.0);
    p.incidence.theta = ps.add_constant("hsl.theta", {channels, channels}, 0.0);
    return p;
  }
};

struct IncidenceMatrix {
  Tensor scores;        // pre-threshold [.., N, M]
  Tensor H;             // binary [.., N, M]
  Tensor node_degrees;  // [.., N], row sums + ε_deg
  Tensor edge_degrees;  // [.., M], column sums + ε_deg
};

// f′_n = γ_n (σ⁻¹ (f_nᵀ − μᵀ))ᵀ + β_n with σσᵀ = cov(F) + ε_cov·I.
inline Tensor whiten_nodes(const Tensor& f, const WhiteningParams& p) {
  detail::require_rank_at_least("whiten_nodes", f, 2);
  const std::size_t N = f.shape()[f.rank() - 2], C = f.shape().back();
  if (N < 2) throw ContractError("whiten_nodes: needs at least two nodes");
  const Tensor mu = mean_rows(f);
  const Tensor centered = sub(f, expand_rows(mu, N));
  Tensor eye = Tensor::eye(C);
  const Tensor cov = add_trailing(
      scale(matmul(transpose(centered), centered), 1.0 / static_cast<double>(N - 1)),
      scale(eye, p.eps_cov));
  const Tensor sigma = cholesky(cov);
  const Tensor white = transpose(solve_lower(sigma, transpose(centered)));
  return add_trailing(scale_rows(white, p.gamma), p.beta);
}

// H = step(Ψ(F′) Λ Ψ(F′)ᵀ Ω(F′)) with Ψ(F′) = F′ψ and Ω(F′) = F′ω.
// The scores carry a positive factor 1/(N·C′); H only sees their sign, but
// the straight-through window |score| ≤ 1 then spans the typical range.
inline IncidenceMatrix learn_incidence(const Tensor& f_white, const IncidenceParams& p) {
  detail::require_rank_at_least("learn_incidence", f_white, 2);
  const std::size_t N = f_white.shape()[f_white.rank() - 2];
  const Tensor proj = matmul(f_white, p.psi);
  const Tensor affinity = matmul(scale_cols(proj, p.lambda_diag), transpose(proj));
  IncidenceMatrix inc;
  inc.scores = scale(matmul(affinity, matmul(f_white, p.omega)),
                     1.0 / static_cast<double>(N * p.psi.shape().back()));
  inc.H = step_ste(inc.scores);
  inc.node_degrees = add_scalar(sum_last(inc.H), kDegreeEpsilon);
  inc.edge_degrees = add_scalar(sum_rows(inc.H), kDegreeEpsilon);
  return inc;
}

inline Tensor hypergraph_convolve(const Tensor& f, const Tensor& f_white,
                                  const IncidenceMatrix& inc, const IncidenceParams& p) {
  detail::require_same_shape("hypergraph_convolve", f, f_white);
  const Tensor x = matmul(f_white, p.theta);
  const Tensor inner = scale_rows(x, pow(inc.node_degrees, -0.5));
  Tensor edges = matmul(transpose(inc.H), inner);
  edges = scale_rows(scale_rows(edges, p.edge_weights), pow(inc.edge_degrees, -1.0));
  const Tensor propagated = scale_rows(matmul(inc.H, edges), pow(inc.node_degrees, 0.5));
  return add(sub(x, propagated), f);
}

struct EnhancedQuad {
  std::array<Tensor, 4> r;
  std::array<IncidenceMatrix, 4> incidence;  // empty when the module is bypassed

  Tensor& operator[](std::size_t i) { return r[i]; }
  const Tensor& operator[](std::size_t i) const { return r[i]; }
};

inline Tensor enhance(const Tensor& f, const HslParams& p, IncidenceMatrix* inc_out = nullptr) {
  const Tensor fw = p.whiten ? whiten_nodes(f, p.whitening) : f;
  auto inc = learn_incidence(fw, p.incidence);
  auto r = hypergraph_convolve(f, fw, inc, p.incidence);
  if (inc_out) *inc_out = std::move(inc);
  return r;
}

// One shared parameter set applied independently to the four features.
inline EnhancedQuad enhance_quad(const FeatureQuad& q, const HslParams& p) {
  EnhancedQuad out;
  for (std::size_t i = 0; i < 4; ++i) out.r[i] = enhance(q[i], p, &out.incidence[i]);
  return out;
}

// Mean pairwise Jaccard similarity between the distinct hyperedge columns of
// each H block, averaged over blocks. Columns with no members on either side
// count as identical.
inline double mean_hyperedge_jaccard(const Tensor& H) {
  const std::size_t N = H.shape()[H.rank() - 2], M = H.shape().back();
  const std::size_t batch = H.size() / (N * M);
  if (M < 2) return 0.0;
  double total = 0.0;
  std::size_t pairs = 0;
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t j = 0; j < M; ++j)
      for (std::size_t k = j + 1; k < M; ++k) {
        std::size_t inter = 0, uni = 0;
        for (std::size_t n = 0; n < N; ++n) {
          const bool a = H[(b * N + n) * M + j] > 0.5, c = H[(b * N + n) * M + k] > 0.5;
          inter += a && c;
          uni += a || c;
        }
        total += uni ? static_cast<double>(inter) / static_cast<double>(uni) : 1.0;
        ++pairs;
      }
  return total / static_cast<double>(pairs);
}

}  // namespace hosnet
