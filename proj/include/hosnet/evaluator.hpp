#pragma once

// Cross-modality retrieval metrics over unit-norm descriptors.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "hosnet/model.hpp"

namespace hosnet {

struct Descriptor {
  int id = 0;
  std::vector<double> v;
};

inline std::vector<Descriptor> descriptors(const std::vector<InferenceFeature>& fs, Modality m) {
  std::vector<Descriptor> out;
  for (auto& f : fs)
    if (f.modality == m) out.push_back({f.id, f.vector});
  return out;
}

inline double cosine(const std::vector<double>& a, const std::vector<double>& b) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  const double den = std::sqrt(na) * std::sqrt(nb);
  return den > 0.0 ? dot / den : 0.0;
}

// Gallery indices ordered by increasing cosine distance; ties keep gallery order.
inline std::vector<std::size_t> rank_gallery(const Descriptor& q, const std::vector<Descriptor>& gallery) {
  std::vector<double> dist(gallery.size());
  for (std::size_t j = 0; j < gallery.size(); ++j) dist[j] = 1.0 - cosine(q.v, gallery[j].v);
  std::vector<std::size_t> order(gallery.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return dist[a] < dist[b]; });
  return order;
}

struct CmcResult {
  std::vector<double> rank;  // rank[i] = accuracy at ks[i]
  std::size_t queries_used = 0;
  std::size_t queries_excluded = 0;  // identity absent from the gallery
};

inline CmcResult cmc(const std::vector<Descriptor>& query, const std::vector<Descriptor>& gallery,
                     const std::vector<std::size_t>& ks) {
  if (gallery.empty()) throw ContractError("cmc: empty gallery");
  for (auto k : ks)
    if (k == 0) throw ConfigError("cmc: ranks are 1-based");
  CmcResult r;
  r.rank.assign(ks.size(), 0.0);
  for (const auto& q : query) {
    const auto order = rank_gallery(q, gallery);
    std::size_t first = gallery.size();
    for (std::size_t pos = 0; pos < order.size(); ++pos)
      if (gallery[order[pos]].id == q.id) {
        first = pos;
        break;
      }
    if (first == gallery.size()) {
      ++r.queries_excluded;
      continue;
    }
    ++r.queries_used;
    for (std::size_t i = 0; i < ks.size(); ++i)
      if (first < ks[i]) r.rank[i] += 1.0;
  }
  if (r.queries_used)
    for (auto& x : r.rank) x /= static_cast<double>(r.queries_used);
  return r;
}

// Mean over queries of the average precision at each relevant gallery item.
inline double mean_ap(const std::vector<Descriptor>& query, const std::vector<Descriptor>& gallery) {
  if (gallery.empty()) throw ContractError("mean_ap: empty gallery");
  double total = 0.0;
  std::size_t used = 0;
  for (const auto& q : query) {
    const auto order = rank_gallery(q, gallery);
    double hits = 0.0, ap = 0.0;
    for (std::size_t pos = 0; pos < order.size(); ++pos)
      if (gallery[order[pos]].id == q.id) {
        hits += 1.0;
        ap += hits / static_cast<double>(pos + 1);
      }
    if (hits == 0.0) continue;
    total += ap / hits;
    ++used;
  }
  return used ? total / static_cast<double>(used) : 0.0;
}

// Mean (1 − cos) over every same-identity VIS/IR pair.
inline double cross_modal_distance(const std::vector<Descriptor>& vis, const std::vector<Descriptor>& ir) {
  double total = 0.0;
  std::size_t n = 0;
  for (auto& a : vis)
    for (auto& b : ir)
      if (a.id == b.id) {
        total += 1.0 - cosine(a.v, b.v);
        ++n;
      }
  if (!n) throw ContractError("cross_modal_distance: no same-identity pairs");
  return total / static_cast<double>(n);
}

struct MetricsReport {
  std::vector<std::size_t> ks;
  std::vector<double> cmc;
  double map = 0.0;
  double intra_similarity = 0.0;  // mean cross-modal cosine, same identity
  double inter_similarity = 0.0;  // mean cross-modal cosine, different identity
  double cross_modal_distance = 0.0;
  std::size_t queries = 0, gallery = 0, queries_excluded = 0;
};

inline MetricsReport evaluate(const std::vector<Descriptor>& query, const std::vector<Descriptor>& gallery,
                              const std::vector<std::size_t>& ks) {
  MetricsReport m;
  m.ks = ks;
  auto c = cmc(query, gallery, ks);
  m.cmc = c.rank;
  m.queries_excluded = c.queries_excluded;
  m.map = mean_ap(query, gallery);
  m.queries = query.size();
  m.gallery = gallery.size();
  double intra = 0.0, inter = 0.0;
  std::size_t ni = 0, ne = 0;
  for (auto& q : query)
    for (auto& g : gallery) {
      const double s = cosine(q.v, g.v);
      if (q.id == g.id) {
        intra += s;
        ++ni;
      } else {
        inter += s;
        ++ne;
      }
    }
  m.intra_similarity = ni ? intra / static_cast<double>(ni) : 0.0;
  m.inter_similarity = ne ? inter / static_cast<double>(ne) : 0.0;
  m.cross_modal_distance = ni ? 1.0 - m.intra_similarity : 0.0;
  return m;
}

// Histogram of cross-modal cosine similarities on [-1, 1]:
// rows of (bin_low, bin_high, intra_count, inter_count).
struct SimilarityHistogram {
  std::vector<double> edges;
  std::vector<std::size_t> intra, inter;
};

inline SimilarityHistogram similarity_histogram(const std::vector<Descriptor>& query,
                                                const std::vector<Descriptor>& gallery,
                                                std::size_t bins = 40) {
  SimilarityHistogram h;
  for (std::size_t i = 0; i <= bins; ++i)
    h.edges.push_back(-1.0 + 2.0 * static_cast<double>(i) / static_cast<double>(bins));
  h.intra.assign(bins, 0);
  h.inter.assign(bins, 0);
  for (auto& q : query)
    for (auto& g : gallery) {
      const double s = std::clamp(cosine(q.v, g.v), -1.0, 1.0);
      auto b = static_cast<std::size_t>((s + 1.0) / 2.0 * static_cast<double>(bins));
      b = std::min(b, bins - 1);
      (q.id == g.id ? h.intra : h.inter)[b]++;
    }
  return h;
}

}  // namespace hosnet
