#pragma once

// Identity centers, the modality-range identity-center contrastive (MRIC)
// loss family, cross-entropy, batch-hard triplet, and the joint objective.

#include <array>
#include <string>
#include <utility>
#include <vector>

#include "hosnet/ops.hpp"
#include "hosnet/params.hpp"
#include "hosnet/sle.hpp"

namespace hosnet {

struct LossConfig {
  bool mric = true;
  bool mric_sl = true;
  bool mric_mid = true;
  bool mric_vim = true;
  double triplet_margin = 0.3;
};

// Per-identity centers [P, D]; row i belongs to the i-th identity of the batch.
struct CenterSet {
  Tensor centers;
  std::string group;
};

// Softmax-weighted center of K same-identity features [K, D]:
//   s_j = Σ_k ⟨r_j, r_k⟩,  w = softmax(s),  c = Σ_j w_j r_j.
inline Tensor identity_center(const Tensor& features) {
  if (features.rank() != 2) throw DimensionError("identity_center: expects [K, D]");
  const auto K = features.dim(0), D = features.dim(1);
  const Tensor grouped = reshape(features, {1, K, D});
  const Tensor s = sum_last(matmul(grouped, transpose(grouped)));  // [1, K]
  const Tensor w = reshape(softmax_rows(s), {1, 1, K});
  return reshape(matmul(w, grouped), {D});
}

// Weighted centers for P consecutive groups of K rows: [P·K, D] -> [P, D].
inline Tensor identity_centers(const Tensor& features, std::size_t P, std::size_t K) {
  if (features.rank() != 2 || features.dim(0) != P * K)
    throw DimensionError("identity_centers: expected " + std::to_string(P * K) + " rows, got " +
                         shape_str(features.shape()));
  if (K == 0) throw ContractError("identity_centers: empty identity group");
  const auto D = features.dim(1);
  const Tensor grouped = reshape(features, {P, K, D});
  const Tensor s = sum_last(matmul(grouped, transpose(grouped)));  // [P, K]
  const Tensor w = reshape(softmax_rows(s), {P, 1, K});
  return reshape(matmul(w, grouped), {P, D});
}

// Plain per-identity average over P consecutive groups of K rows.
inline Tensor mean_centers(const Tensor& features, std::size_t P, std::size_t K) {
  if (features.rank() != 2 || features.dim(0) != P * K)
    throw DimensionError("mean_centers: expected " + std::to_string(P * K) + " rows, got " +
                         shape_str(features.shape()));
  return mean_rows(reshape(features, {P, K, features.dim(1)}));
}

// CE(S, diag) + CE(Sᵀ, diag) + mean_i ‖a_i − b_i‖₁ with S the cosine
// similarity of the two center sets.
inline Tensor mric_pair(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || a.shape() != b.shape())
    throw ContractError("mric_pair: center sets differ in cardinality or width: " +
                        shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  const std::size_t P = a.dim(0);
  std::vector<std::size_t> labels(P);
  for (std::size_t i = 0; i < P; ++i) labels[i] = i;
  const Tensor S = matmul(l2_normalize_rows(a), transpose(l2_normalize_rows(b)));
  const Tensor l1 = mean(sum_last(abs(sub(a, b))));
  return add_n({cross_entropy(S, labels), cross_entropy(transpose(S), labels), l1});
}

inline Tensor mric_pair(const CenterSet& a, const CenterSet& b) {
  if (a.centers.rank() != 2 || a.centers.shape() != b.centers.shape())
    throw ContractError("mric_pair: `" + a.group + "` and `" + b.group +
                        "` hold different identity sets");
  return mric_pair(a.centers, b.centers);
}

// Center sets indexed by quad slot (L_vis, S_vis, L_ir, S_ir).
using SlotCenters = std::array<CenterSet, 4>;

namespace detail {
inline void require_groups(const SlotCenters& c, const char* what) {
  for (auto& s : c)
    if (s.centers.rank() != 2) throw ContractError(std::string(what) + ": missing center group");
}
}  // namespace detail

// Same-range VIS/IR pairs: (S_vis, S_ir) + (L_vis, L_ir).
inline Tensor mric_sl(const SlotCenters& c) {
  detail::require_groups(c, "mric_sl");
  return add(mric_pair(c[1], c[3]), mric_pair(c[0], c[2]));
}

// All six unordered pairs among the middle-feature centers.
inline Tensor mric_mid(const SlotCenters& m) {
  detail::require_groups(m, "mric_mid");
  // (S_vis,L_vis) (S_vis,S_ir) (S_vis,L_ir) (L_vis,S_ir) (L_vis,L_ir) (S_ir,L_ir)
  static constexpr std::pair<int, int> pairs[] = {{1, 0}, {1, 3}, {1, 2}, {0, 3}, {0, 2}, {3, 2}};
  std::vector<Tensor> terms;
  for (auto [i, j] : pairs) terms.push_back(mric_pair(m[i], m[j]));
  return add_n(terms);
}

// Modality aggregates; `mid` may be empty when no middle features exist.
inline Tensor mric_vim(const CenterSet& vis, const CenterSet& ir, const CenterSet* mid) {
  if (vis.centers.rank() != 2 || ir.centers.rank() != 2)
    throw ContractError("mric_vim: missing modality centers");
  if (!mid) return mric_pair(vis, ir);
  return add_n({mric_pair(vis, ir), mric_pair(vis, *mid), mric_pair(ir, *mid)});
}

// Softmax cross-entropy of a linear classifier over identity labels.
struct ClassifierParams {
  Tensor weight;  // [D, identities]
  Tensor bias;    // [identities]

  static ClassifierParams create(ParameterStore& ps, std::size_t dim, std::size_t identities,
                                 Rng& rng) {
    return {ps.add_normal("classifier.weight", {dim, identities}, 1.0 / std::sqrt(static_cast<double>(dim)), rng),
            ps.add_constant("classifier.bias", {identities}, 0.0)};
  }
};

inline Tensor ce_loss(const Tensor& features, const std::vector<std::size_t>& labels,
                      const ClassifierParams& cls) {
  return cross_entropy(add_trailing(matmul(features, cls.weight), cls.bias), labels);
}

struct TripletResult {
  Tensor loss;
  bool all_skipped = false;
  std::size_t anchors_used = 0;
};

// Batch-hard triplet on Euclidean distances between L2-normalized rows.
// Anchors without a positive or without a negative are skipped.
inline TripletResult triplet_loss(const Tensor& features, const std::vector<std::size_t>& labels,
                                  double margin) {
  if (features.rank() != 2 || features.dim(0) != labels.size())
    throw DimensionError("triplet_loss: one label per feature row required");
  const std::size_t B = labels.size();
  const Tensor x = l2_normalize_rows(features);
  // ‖a−b‖² = 2 − 2⟨a,b⟩ for unit rows; clamp keeps sqrt differentiable at 0.
  const Tensor dist = pow(clamp_min(add_scalar(scale(matmul(x, transpose(x)), -2.0), 2.0), 1e-12), 0.5);
  std::vector<std::pair<std::size_t, std::size_t>> pos, neg;
  for (std::size_t i = 0; i < B; ++i) {
    long hp = -1, hn = -1;
    for (std::size_t j = 0; j < B; ++j) {
      if (j == i) continue;
      const double d = dist.at(i, j);
      if (labels[j] == labels[i]) {
        if (hp < 0 || d > dist.at(i, static_cast<std::size_t>(hp))) hp = static_cast<long>(j);
      } else if (hn < 0 || d < dist.at(i, static_cast<std::size_t>(hn))) {
        hn = static_cast<long>(j);
      }
    }
    if (hp < 0 || hn < 0) continue;
    pos.emplace_back(i, static_cast<std::size_t>(hp));
    neg.emplace_back(i, static_cast<std::size_t>(hn));
  }
  TripletResult r;
  r.anchors_used = pos.size();
  if (pos.empty()) {
    r.all_skipped = true;
    r.loss = Tensor::scalar(0.0);
    return r;
  }
  r.loss = mean(relu(add_scalar(sub(pick(dist, pos), pick(dist, neg)), margin)));
  return r;
}

struct LossBreakdown {
  Tensor ce, tri, mric_sl, mric_mid, mric_vim, total;
  bool triplet_skipped = false;

  double value(const Tensor& t) const { return t.size() ? t.item() : 0.0; }
};

// Pooled, L2-normalized descriptors of one PK batch. Rows of every tensor are
// grouped by identity (P groups of K pairs).
struct BatchFeatures {
  std::size_t P = 0, K = 0;
  std::array<Tensor, 4> enhanced;  // per slot, [P·K, D]
  std::array<Tensor, 4> middle;    // per slot, empty when middles are disabled
  Tensor embedding;                // [2·P·K, 2D]: VIS rows then IR rows, classifier input
  Tensor inference;                // L2-normalized embedding
  BatchStats neck_stats;           // batch statistics seen by the neck
  std::vector<std::size_t> labels; // one per inference row

  bool has_middle() const { return middle[0].rank() == 2; }
};

// Range-specific weighted centers, plain modality/middle averages, and the
// three MRIC terms. Terms that are toggled off or lack inputs are zero.
struct MricTerms {
  Tensor sl, mid, vim;
};

inline MricTerms mric_terms(const BatchFeatures& f, const LossConfig& cfg) {
  MricTerms t;
  const auto zero = Tensor::scalar(0.0);
  t.sl = t.mid = t.vim = zero;
  if (!cfg.mric) return t;
  if (cfg.mric_sl) {
    SlotCenters c;
    for (std::size_t s = 0; s < 4; ++s) c[s] = {identity_centers(f.enhanced[s], f.P, f.K), slot_name(s)};
    t.sl = mric_sl(c);
  }
  if (cfg.mric_mid && f.has_middle()) {
    SlotCenters c;
    for (std::size_t s = 0; s < 4; ++s)
      c[s] = {identity_centers(f.middle[s], f.P, f.K), std::string("mid_") + slot_name(s)};
    t.mid = mric_mid(c);
  }
  if (cfg.mric_vim) {
    // Every slot holds K features per identity, so the plain average over
    // all of a modality's features is the mean of the per-slot averages.
    auto aggregate = [&](std::initializer_list<std::size_t> slots, const std::array<Tensor, 4>& src,
                         const char* name) {
      std::vector<Tensor> parts;
      for (auto s : slots) parts.push_back(mean_centers(src[s], f.P, f.K));
      return CenterSet{scale(add_n(parts), 1.0 / static_cast<double>(parts.size())), name};
    };
    const auto vis = aggregate({0, 1}, f.enhanced, "vis");
    const auto ir = aggregate({2, 3}, f.enhanced, "ir");
    if (f.has_middle()) {
      const auto mid = aggregate({0, 1, 2, 3}, f.middle, "mid");
      t.vim = mric_vim(vis, ir, &mid);
    } else {
      t.vim = mric_vim(vis, ir, nullptr);
    }
  }
  return t;
}

inline LossBreakdown joint_loss(const BatchFeatures& f, const ClassifierParams& cls,
                                const LossConfig& cfg) {
  LossBreakdown out;
  out.ce = ce_loss(f.embedding, f.labels, cls);
  auto tri = triplet_loss(f.inference, f.labels, cfg.triplet_margin);
  out.tri = tri.loss;
  out.triplet_skipped = tri.all_skipped;
  auto m = mric_terms(f, cfg);
  out.mric_sl = m.sl;
  out.mric_mid = m.mid;
  out.mric_vim = m.vim;
  out.total = add_n({out.ce, out.tri, out.mric_sl, out.mric_mid, out.mric_vim});
  return out;
}

}  // namespace hosnet
