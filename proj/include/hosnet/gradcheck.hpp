#pragma once

// Finite-difference gradient suite over every differentiable operation, the
// composite modules, and a tiny end-to-end model.
//
// Each check evaluates a scalar probe ⟨op(x), R⟩ with a fixed random R, runs
// backward once, and compares against central differences of the same probe.
// Paths through the step function are exempt: composite checks freeze H at
// the values seen on the first pass, and the step itself is checked for
// finite, clipped gradients instead.

#include <algorithm>
#include <chrono>
#include <functional>
#include <string>
#include <vector>

#include "hosnet/model.hpp"

namespace hosnet {

struct GradcheckOptions {
  double h = 1e-5;
  double tolerance = 1e-4;
  // Relative error denominator floor; gradients below it compare absolutely.
  double floor = 1e-3;
  std::uint64_t seed = 0;
  std::string only;          // run a single named check
  std::string inject_fault;  // op whose backward rule gets corrupted
};

struct GradcheckResult {
  std::string name;
  bool exempt = false;  // straight-through: checked for finiteness and clipping
  bool passed = false;
  double max_rel_error = 0.0;
  std::size_t coordinates = 0;
  std::string detail;
};

namespace gradcheck_detail {

using Leaves = std::vector<Tensor>;
using ScalarFn = std::function<Tensor(const Leaves&)>;

inline Tensor random_tensor(Shape shape, Rng& rng, double scale = 1.0, double shift = 0.0) {
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<double> v(shape_size(shape));
  for (auto& x : v) x = shift + scale * n(rng);
  return Tensor(std::move(shape), std::move(v));
}

inline Tensor uniform_tensor(Shape shape, Rng& rng, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(shape_size(shape));
  for (auto& x : v) x = u(rng);
  return Tensor(std::move(shape), std::move(v));
}

// ⟨t, R⟩ with R drawn from a fixed stream, so every evaluation sees the same R.
inline Tensor probe(const Tensor& t, std::uint64_t salt = 17) {
  Rng rng(salt);
  return sum(mul(t, random_tensor(t.shape(), rng)));
}

inline double rel_error(double a, double n, double floor) {
  return std::abs(a - n) / std::max({std::abs(a), std::abs(n), floor});
}

// Compares backward() against central differences for every coordinate of
// every leaf. `before_eval` runs ahead of each forward pass.
inline GradcheckResult compare(const std::string& name, Leaves leaves, const ScalarFn& fn,
                               const GradcheckOptions& opt, const std::function<void()>& before_eval = {}) {
  GradcheckResult r;
  r.name = name;
  for (auto& l : leaves) {
    l.set_requires_grad(true);
    l.zero_grad();
  }
  {
    Tape tape;
    TapeScope scope(tape);
    if (before_eval) before_eval();
    const Tensor loss = fn(leaves);
    CorruptBackwardScope fault(opt.inject_fault);
    backward(loss, tape);
  }
  NoGradScope nograd;
  for (auto& l : leaves) {
    const auto analytic = l.grad();
    auto buf = l.mutable_data();
    for (std::size_t i = 0; i < buf.size(); ++i) {
      const double orig = buf[i];
      buf[i] = orig + opt.h;
      if (before_eval) before_eval();
      const double fp = fn(leaves).item();
      buf[i] = orig - opt.h;
      if (before_eval) before_eval();
      const double fm = fn(leaves).item();
      buf[i] = orig;
      const double numeric = (fp - fm) / (2.0 * opt.h);
      r.max_rel_error = std::max(r.max_rel_error, rel_error(analytic[i], numeric, opt.floor));
      ++r.coordinates;
    }
  }
  r.passed = r.max_rel_error < opt.tolerance;
  return r;
}

// Freezes every step output at its first-pass value, then compares.
inline GradcheckResult compare_frozen(const std::string& name, Leaves leaves, const ScalarFn& fn,
                                      const GradcheckOptions& opt) {
  FrozenStepScope frozen(false);
  {
    NoGradScope nograd;
    fn(leaves);
  }
  return compare(name, std::move(leaves), fn, opt, [] { FrozenStepScope::rewind(true); });
}

struct Check {
  std::string name;
  bool exempt;
  std::function<GradcheckResult(const GradcheckOptions&)> run;
};

inline Tensor spd_from(const Tensor& a) {
  const std::size_t n = a.dim(0);
  return add(matmul(a, transpose(a)), Tensor::eye(n));
}

// Straight-through contract: finite gradient, equal to the upstream gradient
// where |x| <= 1 and zero elsewhere.
inline GradcheckResult step_bounds(const GradcheckOptions& opt) {
  GradcheckResult r;
  r.name = "step_ste";
  r.exempt = true;
  Rng rng(opt.seed + 101);
  Tensor x = random_tensor({6, 5}, rng, 1.5);
  x.set_requires_grad(true);
  const Tensor w = random_tensor({6, 5}, rng);
  {
    Tape tape;
    TapeScope scope(tape);
    const Tensor loss = sum(mul(step_ste(x), w));
    CorruptBackwardScope fault(opt.inject_fault);
    backward(loss, tape);
  }
  const auto g = x.grad();
  bool ok = true;
  for (std::size_t i = 0; i < g.size(); ++i) {
    const double expect = std::abs(x[i]) <= 1.0 ? w[i] : 0.0;
    ok = ok && std::isfinite(g[i]) && g[i] == expect;
    r.max_rel_error = std::max(r.max_rel_error, std::abs(g[i] - expect));
  }
  r.coordinates = g.size();
  r.passed = ok;
  r.detail = "gradient equals the upstream gradient inside |x| <= 1 and vanishes outside";
  return r;
}

// Incidence learning end to end without freezing: gradients reaching Ψ, Λ, Ω
// through the step must be finite and bounded by the clip rule.
inline GradcheckResult incidence_bounds(const GradcheckOptions& opt) {
  GradcheckResult r;
  r.name = "learn_incidence";
  r.exempt = true;
  Rng rng(opt.seed + 102);
  IncidenceParams p;
  p.psi = random_tensor({4, 3}, rng, 0.5);
  p.lambda_diag = uniform_tensor({3}, rng, 0.5, 1.5);
  p.omega = random_tensor({4, 5}, rng, 0.5);
  const Tensor f = random_tensor({6, 4}, rng);
  const Tensor w = random_tensor({6, 5}, rng);
  Leaves leaves{p.psi, p.lambda_diag, p.omega};
  for (auto& l : leaves) l.set_requires_grad(true);
  IncidenceMatrix inc;
  {
    Tape tape;
    TapeScope scope(tape);
    inc = learn_incidence(f, p);
    const Tensor loss = sum(mul(inc.H, w));
    CorruptBackwardScope fault(opt.inject_fault);
    backward(loss, tape);
  }
  // |dL/dscore| <= |w| elementwise, so each leaf gradient is bounded by the
  // same contraction applied to |w|.
  double wmax = 0.0;
  for (double v : w.data()) wmax = std::max(wmax, std::abs(v));
  bool ok = true;
  for (auto& l : leaves)
    for (double g : l.grad()) {
      ok = ok && std::isfinite(g);
      r.max_rel_error = std::max(r.max_rel_error, std::abs(g));
      ++r.coordinates;
    }
  for (double h : inc.H.data()) ok = ok && (h == 0.0 || h == 1.0);
  r.passed = ok && wmax > 0.0;
  r.detail = "H binary, gradients through the step finite (max |g| reported)";
  return r;
}

inline ModelConfig tiny_model_config() {
  ModelConfig m;
  m.sle.in_channels = 2;
  m.sle.image_h = 8;
  m.sle.image_w = 4;
  m.sle.channels = 4;
  m.sle.grid_h = 4;
  m.sle.grid_w = 2;  // N = 8
  m.sle.conv_blocks = 1;
  m.sle.transformer_blocks = 1;
  m.sle.heads = 2;
  m.hsl.hyperedges = 4;
  m.cfl.parts = 2;
  m.train_identities = 2;
  return m;
}

inline std::vector<Check> checks() {
  std::vector<Check> cs;
  auto simple = [&](std::string name, std::function<std::pair<Leaves, ScalarFn>(Rng&)> make) {
    cs.push_back({name, false, [name, make](const GradcheckOptions& opt) {
                    Rng rng(opt.seed + std::hash<std::string>{}(name));
                    auto [leaves, fn] = make(rng);
                    return compare(name, leaves, fn, opt);
                  }});
  };
  using P = std::pair<Leaves, ScalarFn>;

  simple("add", [](Rng& g) { return P{{random_tensor({4, 3}, g), random_tensor({4, 3}, g)}, [](const Leaves& x) { return probe(add(x[0], x[1])); }}; });
  simple("sub", [](Rng& g) { return P{{random_tensor({4, 3}, g), random_tensor({4, 3}, g)}, [](const Leaves& x) { return probe(sub(x[0], x[1])); }}; });
  simple("mul", [](Rng& g) { return P{{random_tensor({4, 3}, g), random_tensor({4, 3}, g)}, [](const Leaves& x) { return probe(mul(x[0], x[1])); }}; });
  simple("add_n", [](Rng& g) { return P{{random_tensor({3, 2}, g), random_tensor({3, 2}, g), random_tensor({3, 2}, g)}, [](const Leaves& x) { return probe(add_n({x[0], x[1], x[2]})); }}; });
  simple("scale", [](Rng& g) { return P{{random_tensor({5}, g)}, [](const Leaves& x) { return probe(add_scalar(scale(x[0], -2.5), 0.7)); }}; });
  simple("transpose", [](Rng& g) { return P{{random_tensor({2, 4, 3}, g)}, [](const Leaves& x) { return probe(transpose(x[0])); }}; });
  simple("relu", [](Rng& g) { return P{{random_tensor({6, 4}, g)}, [](const Leaves& x) { return probe(relu(x[0])); }}; });
  simple("exp", [](Rng& g) { return P{{random_tensor({6, 4}, g, 0.5)}, [](const Leaves& x) { return probe(exp(x[0])); }}; });
  simple("log", [](Rng& g) { return P{{uniform_tensor({6, 4}, g, 0.5, 2.0)}, [](const Leaves& x) { return probe(log(x[0])); }}; });
  simple("abs", [](Rng& g) { return P{{random_tensor({6, 4}, g)}, [](const Leaves& x) { return probe(abs(x[0])); }}; });
  simple("pow", [](Rng& g) { return P{{uniform_tensor({6, 4}, g, 0.3, 2.0)}, [](const Leaves& x) { return probe(add(pow(x[0], 3.0), pow(x[0], 1.0 / 3.0))); }}; });
  simple("clamp_min", [](Rng& g) { return P{{random_tensor({6, 4}, g)}, [](const Leaves& x) { return probe(clamp_min(x[0], 0.1)); }}; });
  simple("matmul", [](Rng& g) { return P{{random_tensor({2, 5, 4}, g), random_tensor({4, 3}, g)}, [](const Leaves& x) { return probe(matmul(x[0], x[1])); }}; });
  simple("matmul_batched", [](Rng& g) { return P{{random_tensor({2, 5, 4}, g), random_tensor({2, 4, 3}, g)}, [](const Leaves& x) { return probe(matmul(x[0], x[1])); }}; });
  simple("softmax_rows", [](Rng& g) { return P{{random_tensor({5, 6}, g)}, [](const Leaves& x) { return probe(softmax_rows(x[0])); }}; });
  simple("cholesky", [](Rng& g) { return P{{random_tensor({5, 5}, g)}, [](const Leaves& x) { return probe(cholesky(spd_from(x[0]))); }}; });
  simple("solve_lower", [](Rng& g) { return P{{random_tensor({4, 4}, g), random_tensor({4, 3}, g)}, [](const Leaves& x) { return probe(solve_lower(cholesky(spd_from(x[0])), x[1])); }}; });
  simple("l2_normalize_rows", [](Rng& g) { return P{{random_tensor({5, 4}, g)}, [](const Leaves& x) { return probe(l2_normalize_rows(x[0])); }}; });
  simple("mean", [](Rng& g) { return P{{random_tensor({5, 4}, g)}, [](const Leaves& x) { return scale(mean(mul(x[0], x[0])), 3.0); }}; });
  simple("sum_last", [](Rng& g) { return P{{random_tensor({3, 5, 4}, g)}, [](const Leaves& x) { return probe(sum_last(x[0])); }}; });
  simple("mean_rows", [](Rng& g) { return P{{random_tensor({3, 5, 4}, g)}, [](const Leaves& x) { return probe(mean_rows(x[0])); }}; });
  simple("sum_rows", [](Rng& g) { return P{{random_tensor({3, 5, 4}, g)}, [](const Leaves& x) { return probe(sum_rows(x[0])); }}; });
  simple("concat_last", [](Rng& g) { return P{{random_tensor({3, 2}, g), random_tensor({3, 4}, g)}, [](const Leaves& x) { return probe(concat_last({x[0], x[1]})); }}; });
  simple("concat_first", [](Rng& g) { return P{{random_tensor({2, 3}, g), random_tensor({4, 3}, g)}, [](const Leaves& x) { return probe(concat_first({x[0], x[1]})); }}; });
  simple("slice_last", [](Rng& g) { return P{{random_tensor({3, 6}, g)}, [](const Leaves& x) { return probe(slice_last(x[0], 1, 4)); }}; });
  simple("slice_rows", [](Rng& g) { return P{{random_tensor({2, 6, 3}, g)}, [](const Leaves& x) { return probe(slice_rows(x[0], 2, 5)); }}; });
  simple("reshape", [](Rng& g) { return P{{random_tensor({2, 6}, g)}, [](const Leaves& x) { return probe(reshape(x[0], {3, 4})); }}; });
  simple("index_select", [](Rng& g) { return P{{random_tensor({5, 3}, g)}, [](const Leaves& x) { return probe(index_select(x[0], {4, 0, 0, 2})); }}; });
  simple("pick", [](Rng& g) { return P{{random_tensor({4, 4}, g)}, [](const Leaves& x) { return probe(pick(x[0], {{0, 1}, {3, 2}, {0, 1}})); }}; });
  simple("cross_entropy", [](Rng& g) { return P{{random_tensor({5, 4}, g)}, [](const Leaves& x) { return cross_entropy(x[0], {0, 3, 1, 1, 2}); }}; });
  simple("add_trailing", [](Rng& g) { return P{{random_tensor({2, 3, 4}, g), random_tensor({4}, g)}, [](const Leaves& x) { return probe(add_trailing(x[0], x[1])); }}; });
  simple("scale_rows", [](Rng& g) { return P{{random_tensor({2, 3, 4}, g), random_tensor({3}, g)}, [](const Leaves& x) { return probe(scale_rows(x[0], x[1])); }}; });
  simple("scale_cols", [](Rng& g) { return P{{random_tensor({2, 3, 4}, g), random_tensor({4}, g)}, [](const Leaves& x) { return probe(scale_cols(x[0], x[1])); }}; });
  simple("expand_rows", [](Rng& g) { return P{{random_tensor({2, 4}, g)}, [](const Leaves& x) { return probe(expand_rows(x[0], 3)); }}; });
  simple("layer_norm", [](Rng& g) { return P{{random_tensor({3, 5}, g), random_tensor({5}, g), random_tensor({5}, g)}, [](const Leaves& x) { return probe(layer_norm(x[0], x[1], x[2])); }}; });
  simple("batch_norm", [](Rng& g) { return P{{random_tensor({6, 4}, g), random_tensor({4}, g), random_tensor({4}, g)}, [](const Leaves& x) { return probe(batch_norm(x[0], x[1], x[2])); }}; });
  simple("prune_attention", [](Rng& g) { return P{{softmax_rows(random_tensor({2, 4, 4}, g, 2.0))}, [](const Leaves& x) { return probe(prune_attention(x[0], 1.3)); }}; });
  simple("im2col3x3", [](Rng& g) { return P{{random_tensor({1, 3, 4, 2}, g)}, [](const Leaves& x) { return probe(im2col3x3(x[0])); }}; });
  simple("avg_pool2x2", [](Rng& g) { return P{{random_tensor({1, 4, 4, 2}, g)}, [](const Leaves& x) { return probe(avg_pool2x2(x[0])); }}; });

  simple("whiten_nodes", [](Rng& g) {
    return P{{random_tensor({2, 12, 3}, g), uniform_tensor({12}, g, 0.5, 1.5), random_tensor({12, 3}, g)},
             [](const Leaves& x) {
               WhiteningParams w{x[1], x[2], 1e-5};
               return probe(whiten_nodes(x[0], w));
             }};
  });
  simple("incidence_scores", [](Rng& g) {
    return P{{random_tensor({6, 4}, g), random_tensor({4, 3}, g, 0.5), uniform_tensor({3}, g, 0.5, 1.5), random_tensor({4, 5}, g, 0.5)},
             [](const Leaves& x) {
               IncidenceParams p;
               p.psi = x[1];
               p.lambda_diag = x[2];
               p.omega = x[3];
               FrozenStepScope frozen(false);  // H is not differentiated here
               return probe(learn_incidence(x[0], p).scores);
             }};
  });
  simple("hypergraph_convolve", [](Rng& g) {
    // fixed binary H; one isolated node and one empty hyperedge exercise ε_deg
    const Tensor H = Tensor::matrix({{1, 0, 1, 0}, {1, 1, 0, 0}, {0, 0, 0, 0}, {0, 1, 1, 0}, {1, 1, 1, 0}});
    return P{{random_tensor({5, 3}, g), random_tensor({5, 3}, g), uniform_tensor({4}, g, 0.5, 1.5), random_tensor({3, 3}, g)},
             [H](const Leaves& x) {
               IncidenceParams p;
               p.edge_weights = x[2];
               p.theta = x[3];
               IncidenceMatrix inc;
               inc.H = H;
               inc.node_degrees = add_scalar(sum_last(H), kDegreeEpsilon);
               inc.edge_degrees = add_scalar(sum_rows(H), kDegreeEpsilon);
               return probe(hypergraph_convolve(x[0], x[1], inc, p));
             }};
  });
  simple("gat_align", [](Rng& g) {
    return P{{random_tensor({6, 4}, g), random_tensor({6, 4}, g), random_tensor({4, 4}, g), random_tensor({4, 4}, g), random_tensor({4, 4}, g)},
             [](const Leaves& x) {
               GatParams p{x[2], x[3], x[4], 0.8, {}};
               return probe(gat_align(x[0], x[1], p));
             }};
  });
  simple("build_middle", [](Rng& g) {
    return P{{random_tensor({4, 3}, g), random_tensor({4, 3}, g), random_tensor({4, 3}, g), random_tensor({4, 3}, g),
              random_tensor({3, 3}, g), random_tensor({3, 3}, g), random_tensor({3, 3}, g)},
             [](const Leaves& x) {
               EnhancedQuad r;
               for (int i = 0; i < 4; ++i) r.r[static_cast<std::size_t>(i)] = x[static_cast<std::size_t>(i)];
               GatParams p{x[4], x[5], x[6], 0.9, {}};
               const MiddleQuad m = build_middle(r, p);
               return probe(concat_last({m[0], m[1], m[2], m[3]}));
             }};
  });
  simple("build_middle_concat", [](Rng& g) {
    return P{{random_tensor({4, 3}, g), random_tensor({4, 3}, g), random_tensor({4, 3}, g), random_tensor({4, 3}, g), random_tensor({12, 3}, g)},
             [](const Leaves& x) {
               EnhancedQuad r;
               for (int i = 0; i < 4; ++i) r.r[static_cast<std::size_t>(i)] = x[static_cast<std::size_t>(i)];
               GatParams p;
               p.concat_proj = x[4];
               const MiddleQuad m = build_middle(r, p, Fusion::concat);
               return probe(concat_last({m[0], m[1], m[2], m[3]}));
             }};
  });
  simple("pool", [](Rng& g) {
    return P{{uniform_tensor({2, 8, 4}, g, 0.1, 2.0)}, [](const Leaves& x) { return probe(pool(x[0], 2, 3.0)); }};
  });
  simple("identity_center", [](Rng& g) {
    return P{{random_tensor({8, 5}, g, 0.5)}, [](const Leaves& x) { return probe(identity_centers(x[0], 2, 4)); }};
  });
  simple("mric_pair", [](Rng& g) {
    return P{{random_tensor({4, 6}, g), random_tensor({4, 6}, g)}, [](const Leaves& x) { return mric_pair(x[0], x[1]); }};
  });
  simple("triplet_loss", [](Rng& g) {
    return P{{random_tensor({8, 5}, g)}, [](const Leaves& x) {
               return triplet_loss(x[0], {0, 0, 1, 1, 2, 2, 3, 3}, 0.3).loss;
             }};
  });
  simple("ce_loss", [](Rng& g) {
    return P{{random_tensor({6, 5}, g), random_tensor({5, 3}, g), random_tensor({3}, g)},
             [](const Leaves& x) { return ce_loss(x[0], {0, 2, 1, 1, 0, 2}, ClassifierParams{x[1], x[2]}); }};
  });

  // Module-level probes over learnable parameters.
  cs.push_back({"extract_quad", false, [](const GradcheckOptions& opt) {
                  Rng rng(opt.seed + 201);
                  ParameterStore ps;
                  const auto cfg = tiny_model_config();
                  const Sle sle = Sle::create(ps, cfg.sle, rng);
                  const Tensor vis = random_tensor({2, 8, 4, 2}, rng), ir = random_tensor({2, 8, 4, 2}, rng);
                  Leaves leaves;
                  for (auto& p : ps.all()) leaves.push_back(p.value);
                  return compare("extract_quad", leaves, [&](const Leaves&) {
                    const auto q = sle.extract_quad(sle.stem(vis, Modality::vis), sle.stem(ir, Modality::ir));
                    return probe(concat_last({q[0], q[1], q[2], q[3]}));
                  }, opt);
                }});
  cs.push_back({"enhance_quad", false, [](const GradcheckOptions& opt) {
                  Rng rng(opt.seed + 202);
                  ParameterStore ps;
                  HslConfig hc;
                  hc.hyperedges = 4;
                  const HslParams p = HslParams::create(ps, hc, 8, 4, rng);
                  // nonzero Θ so the propagation term is exercised
                  for (auto& v : ps.all()) {
                    if (v.name != "hsl.theta") continue;
                    Rng r2(7);
                    std::normal_distribution<double> n(0.0, 0.5);
                    for (auto& x : v.value.mutable_data()) x = n(r2);
                  }
                  FeatureQuad q;
                  for (auto& f : q.f) f = random_tensor({2, 8, 4}, rng);
                  Leaves leaves{q[0], q[1], q[2], q[3]};
                  for (auto& v : ps.all()) leaves.push_back(v.value);
                  return compare_frozen("enhance_quad", leaves, [&](const Leaves&) {
                    const auto r = enhance_quad(q, p);
                    return probe(concat_last({r[0], r[1], r[2], r[3]}));
                  }, opt);
                }});
  cs.push_back({"joint_loss_end_to_end", false, [](const GradcheckOptions& opt) {
                  // stem → SLE → HSL → CFL → joint loss; N=8, C=4, M=4, P=2, K=2
                  auto cfg = tiny_model_config();
                  cfg.init_seed = opt.seed;
                  HosNet model(cfg);
                  Rng rng(opt.seed + 203);
                  for (auto& p : model.params().all()) {
                    if (p.name != "hsl.theta") continue;
                    std::normal_distribution<double> n(0.0, 0.5);
                    for (auto& x : p.value.mutable_data()) x = n(rng);
                  }
                  const Tensor vis = random_tensor({4, 8, 4, 2}, rng), ir = random_tensor({4, 8, 4, 2}, rng);
                  const std::vector<std::size_t> labels{0, 0, 1, 1};
                  Leaves leaves;
                  for (auto& p : model.params().all())
                    if (!p.buffer) leaves.push_back(p.value);
                  LossConfig lc;
                  return compare_frozen("joint_loss_end_to_end", leaves, [&](const Leaves&) {
                    return model.loss(model.forward(vis, ir, 2, 2, labels), lc).total;
                  }, opt);
                }});

  cs.push_back({"step_ste", true, step_bounds});
  cs.push_back({"learn_incidence", true, incidence_bounds});
  return cs;
}

}  // namespace gradcheck_detail

inline std::vector<std::string> gradcheck_names() {
  std::vector<std::string> out;
  for (auto& c : gradcheck_detail::checks()) out.push_back(c.name);
  return out;
}

// Runs the suite (or the single check named in `opt.only`).
inline std::vector<GradcheckResult> run_gradchecks(const GradcheckOptions& opt) {
  std::vector<GradcheckResult> out;
  bool found = opt.only.empty();
  for (auto& c : gradcheck_detail::checks()) {
    if (!opt.only.empty() && c.name != opt.only) continue;
    found = true;
    GradcheckResult r;
    try {
      r = c.run(opt);
    } catch (const Error& e) {
      r.name = c.name;
      r.passed = false;
      r.detail = e.what();
    }
    r.exempt = c.exempt;
    out.push_back(std::move(r));
  }
  if (!found) throw ConfigError("unknown gradcheck op `" + opt.only + "`");
  return out;
}

}  // namespace hosnet
