#pragma once

// Graph-attention alignment, middle-feature synthesis, and GeM pooling.

#include <array>
#include <string>
#include <vector>

#include "hosnet/hsl.hpp"
#include "hosnet/ops.hpp"
#include "hosnet/params.hpp"

namespace hosnet {

enum class Fusion { gat, add, concat };

inline Fusion parse_fusion(const std::string& s) {
  if (s == "gat") return Fusion::gat;
  if (s == "add") return Fusion::add;
  if (s == "concat") return Fusion::concat;
  throw ConfigError("cfl.fusion must be one of gat|add|concat, got `" + s + "`");
}

struct CflConfig {
  bool enabled = true;
  double lambda = 1.3;
  Fusion fusion = Fusion::gat;
  std::size_t parts = 2;
  double gem_p = 3.0;
};

struct GatParams {
  Tensor theta_q, theta_k, theta_v;  // [C, C]
  double lambda_thresh = 1.3;
  Tensor concat_proj;  // [4C, C], concat fusion only

  static GatParams create(ParameterStore& ps, const CflConfig& cfg, std::size_t C, Rng& rng) {
    if (cfg.lambda < 0.0) throw ConfigError("cfl.lambda must be nonnegative");
    const double s = 1.0 / std::sqrt(static_cast<double>(C));
    GatParams g;
    g.lambda_thresh = cfg.lambda;
    switch (cfg.fusion) {
      case Fusion::gat:
        g.theta_q = ps.add_normal("cfl.theta_q", {C, C}, s, rng);
        g.theta_k = ps.add_normal("cfl.theta_k", {C, C}, s, rng);
        g.theta_v = ps.add_normal("cfl.theta_v", {C, C}, s, rng);
        break;
      case Fusion::concat:
        g.concat_proj = ps.add_normal("cfl.concat_proj", {4 * C, C}, 0.5 * s, rng);
        break;
      case Fusion::add:
        break;
    }
    return g;
  }
};

// Row-stochastic similarity softmax((query θ_q)(key θ_k)ᵀ): [.., N, N].
inline Tensor attention_matrix(const Tensor& query, const Tensor& key, const GatParams& p) {
  return softmax_rows(matmul(matmul(query, p.theta_q), transpose(matmul(key, p.theta_k))));
}

// ReLU(P − λ·Mean(P)·11ᵀ)·(key_value θ_v), Mean over all N² entries.
inline Tensor gat_align(const Tensor& query, const Tensor& key_value, const GatParams& p) {
  detail::require_same_shape("gat_align", query, key_value);
  const Tensor P = attention_matrix(query, key_value, p);
  return matmul(prune_attention(P, p.lambda_thresh), matmul(key_value, p.theta_v));
}

struct MiddleQuad {
  std::array<Tensor, 4> m;

  Tensor& operator[](std::size_t i) { return m[i]; }
  const Tensor& operator[](std::size_t i) const { return m[i]; }
};

// The remaining three slots in the order used for the L_vis middle feature
// (S_ir, L_ir, S_vis), generalized by rotating the query role.
inline std::array<std::size_t, 3> partner_slots(std::size_t q) {
  using S = FeatureQuad::Slot;
  switch (q) {
    case S::L_vis: return {S::S_ir, S::L_ir, S::S_vis};
    case S::S_vis: return {S::L_ir, S::S_ir, S::L_vis};
    case S::L_ir: return {S::S_vis, S::L_vis, S::S_ir};
    default: return {S::L_vis, S::S_vis, S::L_ir};
  }
}

inline MiddleQuad build_middle(const EnhancedQuad& r, const GatParams& p,
                               Fusion fusion = Fusion::gat) {
  MiddleQuad out;
  if (fusion == Fusion::gat) {
    // Projections are shared by every pair; compute each once.
    std::array<Tensor, 4> q, k, v;
    for (std::size_t i = 0; i < 4; ++i) {
      q[i] = matmul(r[i], p.theta_q);
      k[i] = transpose(matmul(r[i], p.theta_k));
      v[i] = matmul(r[i], p.theta_v);
    }
    for (std::size_t a = 0; a < 4; ++a) {
      std::vector<Tensor> terms;
      for (auto b : partner_slots(a))
        terms.push_back(matmul(prune_attention(softmax_rows(matmul(q[a], k[b])), p.lambda_thresh), v[b]));
      terms.push_back(r[a]);
      out[a] = add_n(terms);
    }
  } else if (fusion == Fusion::add) {
    for (std::size_t a = 0; a < 4; ++a) {
      std::vector<Tensor> terms;
      for (auto b : partner_slots(a)) terms.push_back(r[b]);
      terms.push_back(r[a]);
      out[a] = add_n(terms);
    }
  } else {
    for (std::size_t a = 0; a < 4; ++a) {
      auto ps = partner_slots(a);
      out[a] = matmul(concat_last({r[a], r[ps[0]], r[ps[1]], r[ps[2]]}), p.concat_proj);
    }
  }
  return out;
}

// Holistic plus horizontal-stripe generalized-mean pooling:
// [.., N, C] -> [.., (1 + parts)·C], GeM(x) = mean(max(x, 1e-6)^p)^{1/p}.
inline Tensor pool(const Tensor& feature, std::size_t parts, double p_gem) {
  detail::require_rank_at_least("pool", feature, 2);
  const std::size_t N = feature.shape()[feature.rank() - 2];
  if (parts < 1 || N % parts != 0)
    throw ConfigError("pool: " + std::to_string(N) + " nodes do not split into " +
                      std::to_string(parts) + " stripes");
  if (p_gem <= 0.0) throw ConfigError("pool: GeM exponent must be positive");
  const Tensor powered = pow(clamp_min(feature, 1e-6), p_gem);
  std::vector<Tensor> pieces{pow(mean_rows(powered), 1.0 / p_gem)};
  const std::size_t h = N / parts;
  for (std::size_t s = 0; s < parts; ++s)
    pieces.push_back(pow(mean_rows(slice_rows(powered, s * h, (s + 1) * h)), 1.0 / p_gem));
  return concat_last(pieces);
}

}  // namespace hosnet
