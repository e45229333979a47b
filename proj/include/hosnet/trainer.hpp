#pragma once

// Mini-batch SGD training loop with momentum and a warm-up step schedule.

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "hosnet/evaluator.hpp"
#include "hosnet/model.hpp"

namespace hosnet {

struct TrainConfig {
  int epochs = 30;
  int batches_per_epoch = 20;
  BatchSpec batch;
  double momentum = 0.9;
  double lr_divisor = 4.0;
  std::uint64_t seed = 0;
  long max_steps = 0;  // 0: no cap
  double grad_clip = 2.0;  // global gradient-norm cap, 0: off
  LossConfig loss;

  static TrainConfig from(const Config& c) {
    TrainConfig t;
    t.epochs = static_cast<int>(c.integer("train.epochs"));
    t.batches_per_epoch = static_cast<int>(c.integer("train.batches_per_epoch"));
    t.batch.P = static_cast<int>(c.integer("train.P"));
    t.batch.K = static_cast<int>(c.integer("train.K"));
    t.momentum = c.real("train.momentum");
    t.lr_divisor = c.real("train.lr_divisor");
    t.seed = static_cast<std::uint64_t>(c.integer("train.seed"));
    t.max_steps = static_cast<long>(c.integer("train.max_steps"));
    t.grad_clip = c.real("train.grad_clip");
    t.loss = loss_config_from(c);
    t.validate();
    return t;
  }

  void validate() const {
    if (epochs < 0) throw ConfigError("train.epochs must be nonnegative");
    if (batches_per_epoch < 1) throw ConfigError("train.batches_per_epoch must be positive");
    if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("train.momentum must lie in [0, 1)");
    if (lr_divisor <= 0.0) throw ConfigError("train.lr_divisor must be positive");
    if (grad_clip < 0.0) throw ConfigError("train.grad_clip must be nonnegative");
    if (batch.P < 2 || batch.K < 1) throw ConfigError("train.P >= 2 and train.K >= 1 required");
  }
};

// Warm-up 0.01 → 0.1 over [0, 10), 0.1 on [10, 20), 0.01 on [20, 50), 0.001
// afterwards; `divisor` compresses every knot.
inline double lr_schedule(double epoch, double divisor = 1.0) {
  if (epoch < 0.0) throw ContractError("lr_schedule: negative epoch");
  const double e = epoch * divisor;
  if (e < 10.0) return 0.01 + (0.1 - 0.01) * e / 10.0;
  if (e < 20.0) return 0.1;
  if (e < 50.0) return 0.01;
  return 0.001;
}

// Rescales all gradients so their joint L2 norm is at most max_norm.
// Returns the norm before clipping.
inline double clip_grad_norm(ParameterStore& store, double max_norm) {
  double sq = 0.0;
  for (auto& p : store.all())
    if (!p.buffer && p.value.has_grad())
      for (double g : p.value.node().grad) sq += g * g;
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double s = max_norm / norm;
    for (auto& p : store.all())
      if (!p.buffer && p.value.has_grad())
        for (double& g : p.value.node().grad) g *= s;
  }
  return norm;
}

// v ← μ·v + g;  p ← p − lr·v
inline void sgd_step(ParameterStore& store, double lr, double momentum) {
  for (auto& p : store.all()) {
    if (p.buffer) continue;
    if (!p.value.has_grad()) {
      // zero gradient still decays the velocity
      auto w = p.value.mutable_data();
      for (std::size_t i = 0; i < w.size(); ++i) {
        p.momentum[i] *= momentum;
        w[i] -= lr * p.momentum[i];
      }
      continue;
    }
    const auto& g = p.value.node().grad;
    auto w = p.value.mutable_data();
    for (std::size_t i = 0; i < w.size(); ++i) {
      p.momentum[i] = momentum * p.momentum[i] + g[i];
      w[i] -= lr * p.momentum[i];
    }
  }
}

struct EpochMetrics {
  int epoch = 0;
  double lr = 0.0;
  double ce = 0.0, tri = 0.0, mric_sl = 0.0, mric_mid = 0.0, mric_vim = 0.0, total = 0.0;
  double cross_modal_distance = 0.0;
};

struct TrainingError : Error {
  using Error::Error;
};

struct TrainResult {
  std::vector<EpochMetrics> epochs;
  double initial_distance = 0.0;
  long steps = 0;
  std::string rng_state;
};

inline std::string metrics_csv_header() {
  return "epoch,lr,ce,tri,mric_sl,mric_mid,mric_vim,total,cross_modal_distance";
}

inline std::string metrics_csv_row(const EpochMetrics& m) {
  char buf[512];
  std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g", m.epoch, m.lr,
                m.ce, m.tri, m.mric_sl, m.mric_mid, m.mric_vim, m.total, m.cross_modal_distance);
  return buf;
}

// Mean same-identity VIS/IR cosine distance of the deployed descriptors.
inline double eval_distance(const HosNet& model, const DatasetSplit& data) {
  auto q = model.extract_inference_features(data.query);
  auto g = model.extract_inference_features(data.gallery);
  return cross_modal_distance(descriptors(g, Modality::vis), descriptors(q, Modality::ir));
}

// Distance for each model snapshot, in order.
inline std::vector<double> distance_trace(const std::vector<const HosNet*>& snapshots,
                                          const DatasetSplit& data) {
  std::vector<double> out;
  for (auto* m : snapshots) out.push_back(eval_distance(*m, data));
  return out;
}

using EpochCallback = std::function<void(const EpochMetrics&)>;

inline TrainResult train(HosNet& model, const DatasetSplit& data, const TrainConfig& cfg,
                         const EpochCallback& on_epoch = {}) {
  cfg.validate();
  TrainResult result;
  Rng rng(cfg.seed);
  model.calibrate_neck(data.train);
  result.initial_distance = eval_distance(model, data);
  for (int e = 0; e < cfg.epochs; ++e) {
    EpochMetrics m;
    m.epoch = e + 1;
    m.lr = lr_schedule(static_cast<double>(e), cfg.lr_divisor);
    int batches = 0;
    for (int b = 0; b < cfg.batches_per_epoch; ++b) {
      if (cfg.max_steps > 0 && result.steps >= cfg.max_steps) break;
      const std::string batch_rng = rng_state(rng);
      const Batch batch = sample_batch(data, cfg.batch, rng);
      model.params().zero_grad();
      Tape tape;
      LossBreakdown loss;
      try {
        TapeScope scope(tape);
        const BatchFeatures f = model.forward(batch);
        loss = model.loss(f, cfg.loss);
        backward(loss.total, tape);
      } catch (const NumericalError& err) {
        throw TrainingError("non-finite value at epoch " + std::to_string(e + 1) + " batch " +
                            std::to_string(b) + " (" + err.what() + "); batch rng state: " + batch_rng);
      }
      clip_grad_norm(model.params(), cfg.grad_clip);
      sgd_step(model.params(), m.lr, cfg.momentum);
      m.ce += loss.ce.item();
      m.tri += loss.tri.item();
      m.mric_sl += loss.mric_sl.item();
      m.mric_mid += loss.mric_mid.item();
      m.mric_vim += loss.mric_vim.item();
      m.total += loss.total.item();
      ++batches;
      ++result.steps;
    }
    if (batches == 0) break;
    for (double* x : {&m.ce, &m.tri, &m.mric_sl, &m.mric_mid, &m.mric_vim, &m.total})
      *x /= static_cast<double>(batches);
    model.calibrate_neck(data.train);
    m.cross_modal_distance = eval_distance(model, data);
    result.epochs.push_back(m);
    if (on_epoch) on_epoch(m);
  }
  result.rng_state = rng_state(rng);
  return result;
}

// Mean pairwise hyperedge Jaccard over every feature of the given images.
inline double hyperedge_jaccard(const HosNet& model, const std::vector<SyntheticSample>& samples) {
  if (!model.hsl()) throw ContractError("hyperedge_jaccard: HSL is disabled");
  NoGradScope nograd;
  double total = 0.0;
  int n = 0;
  for (Modality m : {Modality::vis, Modality::ir}) {
    std::vector<SyntheticSample> run;
    for (auto& s : samples)
      if (s.modality == m) run.push_back(s);
    if (run.empty()) continue;
    const Tensor b = model.stem(stack_images(run), m);
    for (const Tensor& f : {model.sle().tb(b), model.sle().cb(b)}) {
      IncidenceMatrix inc;
      enhance(f, *model.hsl(), &inc);
      total += mean_hyperedge_jaccard(inc.H);
      ++n;
    }
  }
  return n ? total / n : 0.0;
}

}  // namespace hosnet
