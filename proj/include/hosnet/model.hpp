#pragma once

// The assembled network: stem → SLE → HSL → CFL → pooling, plus the
// identity classifier used by the cross-entropy term.

#include <optional>
#include <string>
#include <vector>

#include "hosnet/cfl.hpp"
#include "hosnet/config.hpp"
#include "hosnet/data.hpp"
#include "hosnet/hsl.hpp"
#include "hosnet/losses.hpp"
#include "hosnet/params.hpp"
#include "hosnet/sle.hpp"

namespace hosnet {

struct ModelConfig {
  SleConfig sle;
  HslConfig hsl;
  CflConfig cfl;
  std::size_t train_identities = 32;
  std::uint64_t init_seed = 0;

  static ModelConfig from(const Config& c, std::size_t train_identities) {
    ModelConfig m;
    m.sle.in_channels = static_cast<std::size_t>(c.integer("data.channels"));
    m.sle.image_h = static_cast<std::size_t>(c.integer("data.height"));
    m.sle.image_w = static_cast<std::size_t>(c.integer("data.width"));
    m.sle.channels = static_cast<std::size_t>(c.integer("sle.channels"));
    m.sle.grid_h = static_cast<std::size_t>(c.integer("sle.grid_h"));
    m.sle.grid_w = static_cast<std::size_t>(c.integer("sle.grid_w"));
    m.sle.conv_blocks = static_cast<int>(c.integer("sle.conv_blocks"));
    m.sle.transformer_blocks = static_cast<int>(c.integer("sle.transformer_blocks"));
    m.sle.heads = static_cast<int>(c.integer("sle.heads"));
    m.hsl.enabled = c.boolean("hsl.enabled");
    m.hsl.whitening = c.boolean("hsl.whitening");
    m.hsl.hyperedges = static_cast<std::size_t>(c.integer("hsl.hyperedges"));
    m.hsl.eps_cov = c.real("hsl.eps_cov");
    m.cfl.enabled = c.boolean("cfl.enabled");
    m.cfl.lambda = c.real("cfl.lambda");
    m.cfl.fusion = parse_fusion(c.str("cfl.fusion"));
    m.cfl.parts = static_cast<std::size_t>(c.integer("cfl.parts"));
    m.cfl.gem_p = c.real("cfl.gem_p");
    m.train_identities = train_identities;
    m.init_seed = static_cast<std::uint64_t>(c.integer("train.seed"));
    return m;
  }

  std::size_t pooled_dim() const { return (1 + cfl.parts) * sle.channels; }
  std::size_t inference_dim() const { return 2 * pooled_dim(); }
};

// Batch normalization of the pooled descriptor ahead of the classifier. Training
// uses batch statistics; inference uses statistics recomputed over the whole
// training set (see HosNet::calibrate_neck).
struct NeckParams {
  static constexpr double kEps = 1e-5;
  Tensor gain, bias, running_mean, running_var;  // [D]

  static NeckParams create(ParameterStore& ps, std::size_t dim) {
    return {ps.add_constant("neck.gain", {dim}, 1.0), ps.add_constant("neck.bias", {dim}, 0.0),
            ps.add_buffer("neck.running_mean", {dim}, 0.0), ps.add_buffer("neck.running_var", {dim}, 1.0)};
  }

  // Batch-standardized x̂ (unit variance per column over the batch).
  Tensor standardize(const Tensor& x, BatchStats* stats) const {
    const std::size_t D = gain.size();
    return batch_norm(x, Tensor::full({D}, 1.0), Tensor::zeros({D}), kEps, stats);
  }

  Tensor affine(const Tensor& xhat) const { return add_trailing(scale_cols(xhat, gain), bias); }

  Tensor eval(const Tensor& x) const {
    const std::size_t D = gain.size();
    std::vector<double> a(D), c(D);
    for (std::size_t d = 0; d < D; ++d) {
      a[d] = gain[d] / std::sqrt(running_var[d] + kEps);
      c[d] = bias[d] - running_mean[d] * a[d];
    }
    return add_trailing(scale_cols(x, Tensor({D}, std::move(a))), Tensor({D}, std::move(c)));
  }

  void reset(const BatchStats& s) {
    auto rm = running_mean.mutable_data();
    auto rv = running_var.mutable_data();
    const double unbias = s.count > 1 ? static_cast<double>(s.count) / static_cast<double>(s.count - 1) : 1.0;
    for (std::size_t d = 0; d < rm.size(); ++d) {
      rm[d] = s.mean[d];
      rv[d] = s.var[d] * unbias;
    }
  }
};

struct InferenceFeature {
  int id = 0;
  Modality modality = Modality::vis;
  std::vector<double> vector;  // unit L2 norm
};

class HosNet {
 public:
  explicit HosNet(const ModelConfig& cfg) : cfg_(cfg) {
    cfg_.sle.validate();
    if (cfg_.sle.nodes() % cfg_.cfl.parts != 0)
      throw ConfigError("cfl.parts must divide the node count");
    Rng rng(cfg_.init_seed ^ 0x9e3779b97f4a7c15ULL);
    sle_ = Sle::create(params_, cfg_.sle, rng);
    if (cfg_.hsl.enabled) hsl_ = HslParams::create(params_, cfg_.hsl, cfg_.sle.nodes(), cfg_.sle.channels, rng);
    if (cfg_.cfl.enabled) gat_ = GatParams::create(params_, cfg_.cfl, cfg_.sle.channels, rng);
    neck_ = NeckParams::create(params_, cfg_.inference_dim());
    cls_ = ClassifierParams::create(params_, cfg_.inference_dim(), cfg_.train_identities, rng);
  }

  const ModelConfig& config() const { return cfg_; }
  ParameterStore& params() { return params_; }
  const ParameterStore& params() const { return params_; }
  const Sle& sle() const { return sle_; }
  const std::optional<HslParams>& hsl() const { return hsl_; }
  const std::optional<GatParams>& gat() const { return gat_; }
  const ClassifierParams& classifier() const { return cls_; }
  const NeckParams& neck() const { return neck_; }

  // Sets the running statistics to those of the given samples' embeddings.
  void calibrate_neck(const std::vector<SyntheticSample>& samples, std::size_t chunk = 64) {
    NoGradScope nograd;
    std::vector<Tensor> rows;
    for_each_run(samples, chunk, [&](const std::vector<SyntheticSample>& run) {
      rows.push_back(embedding(stack_images(run), run.front().modality));
    });
    BatchStats stats;
    batch_norm(concat_first(rows), neck_.gain, neck_.bias, NeckParams::kEps, &stats);
    neck_.reset(stats);
  }

  Tensor stem(const Tensor& images, Modality m) const { return sle_.stem(images, m); }

  // Single-image stem output [H, W, C].
  Tensor stem(const SyntheticSample& s) const {
    const auto& sh = s.image.shape();
    auto out = sle_.stem(reshape(s.image, {1, sh[0], sh[1], sh[2]}), s.modality);
    return reshape(out, {out.dim(1), out.dim(2), out.dim(3)});
  }

  // Relation-enhanced quad (the identity when HSL is disabled).
  EnhancedQuad enhance(const FeatureQuad& q) const {
    if (hsl_) return enhance_quad(q, *hsl_);
    EnhancedQuad e;
    for (std::size_t i = 0; i < 4; ++i) e.r[i] = q[i];
    return e;
  }

  // Full training forward for paired VIS/IR images (row i of each is a pair).
  BatchFeatures forward(const Tensor& vis_images, const Tensor& ir_images, std::size_t P,
                        std::size_t K, const std::vector<std::size_t>& labels,
                        EnhancedQuad* enhanced_out = nullptr) const {
    const FeatureQuad q = sle_.extract_quad(stem(vis_images, Modality::vis), stem(ir_images, Modality::ir));
    EnhancedQuad r = enhance(q);
    BatchFeatures f;
    f.P = P;
    f.K = K;
    f.embedding = neck_.affine(neck_.standardize(paired_embedding(r.r), &f.neck_stats));
    f.inference = l2_normalize_rows(f.embedding);
    for (std::size_t s = 0; s < 4; ++s) f.enhanced[s] = pooled(r[s]);
    if (gat_) {
      const MiddleQuad m = build_middle(r, *gat_, cfg_.cfl.fusion);
      for (std::size_t s = 0; s < 4; ++s) f.middle[s] = pooled(m[s]);
    }
    f.labels = labels;
    f.labels.insert(f.labels.end(), labels.begin(), labels.end());
    if (enhanced_out) *enhanced_out = std::move(r);
    return f;
  }

  BatchFeatures forward(const Batch& batch, EnhancedQuad* enhanced_out = nullptr) const {
    std::vector<std::size_t> labels;
    for (auto& s : batch.vis) labels.push_back(static_cast<std::size_t>(s.id));
    return forward(stack_images(batch.vis), stack_images(batch.ir),
                   static_cast<std::size_t>(batch.spec.P), static_cast<std::size_t>(batch.spec.K),
                   labels, enhanced_out);
  }

  LossBreakdown loss(const BatchFeatures& f, const LossConfig& cfg) const {
    return joint_loss(f, cls_, cfg);
  }

  // Pooled concat(r_L, r_S) before the neck: [B, inference_dim].
  Tensor embedding(const Tensor& images, Modality m) const {
    const Tensor b = stem(images, m);
    // Enhancement is per feature, so one modality needs no partner slots.
    const Tensor L = sle_.tb(b), S = sle_.cb(b);
    const Tensor rL = hsl_ ? hosnet::enhance(L, *hsl_) : L;
    const Tensor rS = hsl_ ? hosnet::enhance(S, *hsl_) : S;
    return embedding_rows(rL, rS);
  }

  // Deployed representation: stem → SLE → HSL → pooling → neck; no middle features.
  Tensor inference_features(const Tensor& images, Modality m) const {
    return l2_normalize_rows(neck_.eval(embedding(images, m)));
  }

  std::vector<InferenceFeature> extract_inference_features(const std::vector<SyntheticSample>& samples,
                                                           std::size_t chunk = 64) const {
    NoGradScope nograd;
    std::vector<InferenceFeature> out;
    out.reserve(samples.size());
    for_each_run(samples, chunk, [&](const std::vector<SyntheticSample>& run) {
      const Tensor feats = inference_features(stack_images(run), run.front().modality);
      const std::size_t D = feats.dim(1);
      for (std::size_t r = 0; r < run.size(); ++r)
        out.push_back({run[r].id, run[r].modality,
                       std::vector<double>(feats.data().begin() + static_cast<std::ptrdiff_t>(r * D),
                                           feats.data().begin() + static_cast<std::ptrdiff_t>((r + 1) * D))});
    });
    return out;
  }

 private:
  // Calls fn on consecutive single-modality runs of at most `chunk` samples.
  template <class Fn>
  static void for_each_run(const std::vector<SyntheticSample>& samples, std::size_t chunk, Fn&& fn) {
    std::size_t i = 0;
    while (i < samples.size()) {
      std::size_t j = i;
      while (j < samples.size() && j - i < chunk && samples[j].modality == samples[i].modality) ++j;
      fn(std::vector<SyntheticSample>(samples.begin() + static_cast<std::ptrdiff_t>(i),
                                      samples.begin() + static_cast<std::ptrdiff_t>(j)));
      i = j;
    }
  }

  // L2-normalized GeM descriptor of one feature: [B, (1 + parts)·C].
  Tensor pooled(const Tensor& feature) const {
    return l2_normalize_rows(pool(feature, cfg_.cfl.parts, cfg_.cfl.gem_p));
  }

  // [2B, 2D]: concat(GeM(L), GeM(S)) rows for VIS then IR.
  Tensor paired_embedding(const std::array<Tensor, 4>& quad) const {
    using S = FeatureQuad::Slot;
    return concat_first({embedding_rows(quad[S::L_vis], quad[S::S_vis]),
                         embedding_rows(quad[S::L_ir], quad[S::S_ir])});
  }

  // Unnormalized concat(GeM(r_L), GeM(r_S)); the classifier reads this.
  Tensor embedding_rows(const Tensor& r_long, const Tensor& r_short) const {
    return concat_last({pool(r_long, cfg_.cfl.parts, cfg_.cfl.gem_p), pool(r_short, cfg_.cfl.parts, cfg_.cfl.gem_p)});
  }

  ModelConfig cfg_;
  ParameterStore params_;
  Sle sle_;
  std::optional<HslParams> hsl_;
  std::optional<GatParams> gat_;
  NeckParams neck_;
  ClassifierParams cls_;
};

inline LossConfig loss_config_from(const Config& c) {
  LossConfig l;
  l.mric = c.boolean("loss.mric");
  l.mric_sl = c.boolean("loss.mric_sl");
  l.mric_mid = c.boolean("loss.mric_mid");
  l.mric_vim = c.boolean("loss.mric_vim");
  l.triplet_margin = c.real("loss.triplet_margin");
  return l;
}

}  // namespace hosnet
