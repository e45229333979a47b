#pragma once

// Two-stream stem and the short-range (convolutional) / long-range
// (transformer) feature branches.

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "hosnet/data.hpp"
#include "hosnet/ops.hpp"
#include "hosnet/params.hpp"

namespace hosnet {

struct SleConfig {
  std::size_t in_channels = 8;
  std::size_t image_h = 16, image_w = 8;
  std::size_t channels = 16;
  std::size_t grid_h = 8, grid_w = 4;
  int conv_blocks = 3;
  int transformer_blocks = 2;
  int heads = 4;
  std::size_t ffn_width = 0;  // 0 selects 2·channels

  std::size_t nodes() const { return grid_h * grid_w; }
  std::size_t ffn() const { return ffn_width ? ffn_width : 2 * channels; }

  void validate() const {
    if (image_h != 2 * grid_h || image_w != 2 * grid_w)
      throw ConfigError("stem halves the image: expected a " + std::to_string(2 * grid_h) + "x" +
                        std::to_string(2 * grid_w) + " image for grid " + std::to_string(grid_h) +
                        "x" + std::to_string(grid_w));
    if (heads < 1 || channels % static_cast<std::size_t>(heads) != 0)
      throw ConfigError("sle.heads must divide sle.channels");
    if (conv_blocks < 1 || transformer_blocks < 1) throw ConfigError("branch depth must be >= 1");
  }
};

// One feature per (range, modality): [B, N, C] with N = grid_h·grid_w.
struct FeatureQuad {
  enum Slot : std::size_t { L_vis = 0, S_vis = 1, L_ir = 2, S_ir = 3 };
  std::array<Tensor, 4> f;

  Tensor& operator[](std::size_t i) { return f[i]; }
  const Tensor& operator[](std::size_t i) const { return f[i]; }
};

inline const char* slot_name(std::size_t s) {
  static const char* names[] = {"L_vis", "S_vis", "L_ir", "S_ir"};
  return names[s];
}

struct ConvBlock {
  Tensor weight;  // [9·Cin, Cout], patch layout (dy, dx, c)
  Tensor gain;    // [Cout]
  Tensor bias;    // [Cout]

  static ConvBlock create(ParameterStore& ps, const std::string& name, std::size_t cin,
                          std::size_t cout, Rng& rng) {
    return {ps.add_normal(name + ".weight", {9 * cin, cout}, std::sqrt(2.0 / (9.0 * cin)), rng),
            ps.add_constant(name + ".gain", {cout}, 1.0), ps.add_constant(name + ".bias", {cout}, 0.0)};
  }

  // x: [B, H, W, Cin] -> ReLU(LN(conv3x3(x))): [B, H, W, Cout]
  Tensor operator()(const Tensor& x) const {
    return relu(layer_norm(matmul(im2col3x3(x), weight), gain, bias));
  }
};

// Modality-specific first block, then a shared block; 2× spatial downsampling.
struct Stem {
  ConvBlock first[2];
  ConvBlock shared;

  static Stem create(ParameterStore& ps, const SleConfig& cfg, Rng& rng) {
    Stem s;
    s.first[0] = ConvBlock::create(ps, "stem.vis", cfg.in_channels, cfg.channels, rng);
    s.first[1] = ConvBlock::create(ps, "stem.ir", cfg.in_channels, cfg.channels, rng);
    s.shared = ConvBlock::create(ps, "stem.shared", cfg.channels, cfg.channels, rng);
    return s;
  }

  // images: [B, Hin, Win, Cin] of a single modality -> [B, H, W, C]
  Tensor operator()(const Tensor& images, Modality m) const {
    const int k = static_cast<int>(m);
    if (k != 0 && k != 1) throw ContractError("stem: unknown modality tag " + std::to_string(k));
    return shared(avg_pool2x2(first[k](images)));
  }
};

struct ConvBranch {
  std::vector<ConvBlock> blocks;

  static ConvBranch create(ParameterStore& ps, const SleConfig& cfg, Rng& rng) {
    ConvBranch b;
    for (int i = 0; i < cfg.conv_blocks; ++i)
      b.blocks.push_back(
          ConvBlock::create(ps, "cb." + std::to_string(i), cfg.channels, cfg.channels, rng));
    return b;
  }

  // [B, H, W, C] -> [B, N, C]
  Tensor operator()(const Tensor& x) const {
    Tensor h = x;
    for (auto& blk : blocks) h = blk(h);
    return reshape(h, {x.dim(0), x.dim(1) * x.dim(2), x.dim(3)});
  }
};

// Fixed sinusoidal encoding over the flattened token grid: [N, C].
inline Tensor sinusoidal_positions(std::size_t n, std::size_t c) {
  std::vector<double> v(n * c);
  for (std::size_t p = 0; p < n; ++p)
    for (std::size_t i = 0; i < c; ++i) {
      const double freq = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / static_cast<double>(c));
      v[p * c + i] = (i % 2 == 0) ? std::sin(static_cast<double>(p) * freq)
                                  : std::cos(static_cast<double>(p) * freq);
    }
  return Tensor({n, c}, std::move(v));
}

struct TransformerBlock {
  Tensor wq, wk, wv, wo;  // [C, C]
  Tensor w1, b1, w2, b2;  // feedforward C -> F -> C
  Tensor ln1_gain, ln1_bias, ln2_gain, ln2_bias;
  int heads = 4;

  static TransformerBlock create(ParameterStore& ps, const std::string& name, const SleConfig& cfg,
                                 Rng& rng) {
    const auto C = cfg.channels, F = cfg.ffn();
    const double s = 1.0 / std::sqrt(static_cast<double>(C));
    TransformerBlock t;
    t.heads = cfg.heads;
    t.wq = ps.add_normal(name + ".wq", {C, C}, s, rng);
    t.wk = ps.add_normal(name + ".wk", {C, C}, s, rng);
    t.wv = ps.add_normal(name + ".wv", {C, C}, s, rng);
    t.wo = ps.add_normal(name + ".wo", {C, C}, 0.5 * s, rng);
    t.w1 = ps.add_normal(name + ".ffn1.weight", {C, F}, std::sqrt(2.0 / static_cast<double>(C)), rng);
    t.b1 = ps.add_constant(name + ".ffn1.bias", {F}, 0.0);
    t.w2 = ps.add_normal(name + ".ffn2.weight", {F, C}, 0.5 / std::sqrt(static_cast<double>(F)), rng);
    t.b2 = ps.add_constant(name + ".ffn2.bias", {C}, 0.0);
    t.ln1_gain = ps.add_constant(name + ".ln1.gain", {C}, 1.0);
    t.ln1_bias = ps.add_constant(name + ".ln1.bias", {C}, 0.0);
    t.ln2_gain = ps.add_constant(name + ".ln2.gain", {C}, 1.0);
    t.ln2_bias = ps.add_constant(name + ".ln2.bias", {C}, 0.0);
    return t;
  }

  // Row-stochastic attention maps, one [B, N, N] per head, of the
  // already-normalized input x.
  std::vector<Tensor> attention(const Tensor& x) const {
    const std::size_t C = x.shape().back(), dh = C / static_cast<std::size_t>(heads);
    const Tensor q = matmul(x, wq), k = matmul(x, wk);
    std::vector<Tensor> maps;
    for (int h = 0; h < heads; ++h) {
      const auto b = static_cast<std::size_t>(h) * dh;
      const auto qh = slice_last(q, b, b + dh), kh = slice_last(k, b, b + dh);
      maps.push_back(softmax_rows(scale(matmul(qh, transpose(kh)), 1.0 / std::sqrt(static_cast<double>(dh)))));
    }
    return maps;
  }

  // Pre-norm residual block, x: [B, N, C]
  Tensor operator()(const Tensor& x) const {
    const std::size_t C = x.shape().back(), dh = C / static_cast<std::size_t>(heads);
    const Tensor xn = layer_norm(x, ln1_gain, ln1_bias);
    const Tensor v = matmul(xn, wv);
    auto maps = attention(xn);
    std::vector<Tensor> outs;
    for (int h = 0; h < heads; ++h) {
      const auto b = static_cast<std::size_t>(h) * dh;
      outs.push_back(matmul(maps[static_cast<std::size_t>(h)], slice_last(v, b, b + dh)));
    }
    const Tensor attended = heads == 1 ? outs[0] : concat_last(outs);
    const Tensor h1 = add(x, matmul(attended, wo));
    const Tensor hn = layer_norm(h1, ln2_gain, ln2_bias);
    const Tensor ff = add_trailing(matmul(relu(add_trailing(matmul(hn, w1), b1)), w2), b2);
    return add(h1, ff);
  }
};

struct TransformerBranch {
  std::vector<TransformerBlock> blocks;

  static TransformerBranch create(ParameterStore& ps, const SleConfig& cfg, Rng& rng) {
    TransformerBranch b;
    for (int i = 0; i < cfg.transformer_blocks; ++i)
      b.blocks.push_back(TransformerBlock::create(ps, "tb." + std::to_string(i), cfg, rng));
    return b;
  }

  // [B, H, W, C] -> [B, N, C]
  Tensor operator()(const Tensor& x) const {
    const std::size_t N = x.dim(1) * x.dim(2), C = x.dim(3);
    Tensor h = add_trailing(reshape(x, {x.dim(0), N, C}), sinusoidal_positions(N, C));
    for (auto& blk : blocks) h = blk(h);
    return h;
  }
};

struct Sle {
  SleConfig cfg;
  Stem stem;
  ConvBranch cb;
  TransformerBranch tb;

  static Sle create(ParameterStore& ps, const SleConfig& cfg, Rng& rng) {
    cfg.validate();
    Sle s;
    s.cfg = cfg;
    s.stem = Stem::create(ps, cfg, rng);
    s.cb = ConvBranch::create(ps, cfg, rng);
    s.tb = TransformerBranch::create(ps, cfg, rng);
    return s;
  }

  // Branch parameters are shared across modalities.
  FeatureQuad extract_quad(const Tensor& b_vis, const Tensor& b_ir) const {
    if (b_vis.shape() != b_ir.shape())
      throw DimensionError("extract_quad: " + shape_str(b_vis.shape()) + " vs " +
                           shape_str(b_ir.shape()));
    FeatureQuad q;
    q[FeatureQuad::L_vis] = tb(b_vis);
    q[FeatureQuad::S_vis] = cb(b_vis);
    q[FeatureQuad::L_ir] = tb(b_ir);
    q[FeatureQuad::S_ir] = cb(b_ir);
    return q;
  }
};

// Stacks sample images into [B, H, W, C].
inline Tensor stack_images(const std::vector<SyntheticSample>& samples) {
  if (samples.empty()) throw ContractError("stack_images: no samples");
  const auto& s = samples.front().image.shape();
  std::vector<double> v;
  v.reserve(samples.size() * samples.front().image.size());
  for (auto& x : samples) {
    if (x.image.shape() != s) throw DimensionError("stack_images: inconsistent image shapes");
    v.insert(v.end(), x.image.data().begin(), x.image.data().end());
  }
  return Tensor({samples.size(), s[0], s[1], s[2]}, std::move(v));
}

}  // namespace hosnet
