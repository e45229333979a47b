#pragma once

// Synthetic two-modality identity data and PK mini-batch sampling.

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>
#include <random>
#include <string>
#include <vector>

#include "hosnet/config.hpp"
#include "hosnet/tensor.hpp"

namespace hosnet {

using Rng = std::mt19937_64;

enum class Modality : int { vis = 0, ir = 1 };

inline const char* modality_name(Modality m) { return m == Modality::vis ? "vis" : "ir"; }

struct SamplingError : Error {
  using Error::Error;
};

struct SyntheticSample {
  int id = 0;
  Modality modality = Modality::vis;
  Tensor image;  // [H, W, C]
};

struct DataConfig {
  std::uint64_t seed = 0;
  int identities = 48;
  int images_per_id = 8;
  double noise = 1.5;
  int latent = 16;
  int height = 16;
  int width = 8;
  int channels = 8;

  static DataConfig from(const Config& c) {
    DataConfig d;
    d.seed = static_cast<std::uint64_t>(c.integer("data.seed"));
    d.identities = static_cast<int>(c.integer("data.identities"));
    d.images_per_id = static_cast<int>(c.integer("data.images_per_id"));
    d.noise = c.real("data.noise");
    d.latent = static_cast<int>(c.integer("data.latent"));
    d.height = static_cast<int>(c.integer("data.height"));
    d.width = static_cast<int>(c.integer("data.width"));
    d.channels = static_cast<int>(c.integer("data.channels"));
    return d;
  }

  int test_identities() const { return identities / 3; }
  int train_identities() const { return identities - test_identities(); }
};

inline constexpr std::size_t kRenderStripes = 4;

struct DatasetSplit {
  DataConfig config;
  std::vector<SyntheticSample> train;
  std::vector<SyntheticSample> query;    // test identities, IR
  std::vector<SyntheticSample> gallery;  // test identities, VIS
  int train_identities = 0;              // train labels are 0..train_identities-1
};

struct BatchSpec {
  int P = 8;
  int K = 4;
};

// P·K VIS samples followed by P·K IR samples, both grouped by identity in the
// same order, so vis[i] and ir[i] form a same-identity pair.
struct Batch {
  BatchSpec spec;
  std::vector<SyntheticSample> vis;
  std::vector<SyntheticSample> ir;

  std::vector<SyntheticSample> all() const {
    auto v = vis;
    v.insert(v.end(), ir.begin(), ir.end());
    return v;
  }
};

namespace detail {

// Render options exposed for tests: force identical modality maps.
struct RenderOptions {
  bool shared_render = false;
};

}  // namespace detail

inline DatasetSplit generate_dataset(const DataConfig& cfg, detail::RenderOptions opts = {}) {
  if (cfg.identities < 4)
    throw ConfigError("data.identities must be at least 4 to form train and test splits, got " +
                      std::to_string(cfg.identities));
  if (cfg.images_per_id < 1 || cfg.latent < 1 || cfg.height < 1 || cfg.width < 1 ||
      cfg.channels < 1)
    throw ConfigError("data extents must be positive");
  if (cfg.noise < 0.0) throw ConfigError("data.noise must be nonnegative");

  Rng rng(cfg.seed);
  std::normal_distribution<double> unit(0.0, 1.0);
  const std::size_t H = static_cast<std::size_t>(cfg.height), W = static_cast<std::size_t>(cfg.width),
                    C = static_cast<std::size_t>(cfg.channels);
  const std::size_t pixels = H * W * C;
  const std::size_t d = static_cast<std::size_t>(cfg.latent);

  // Each modality renders z through one channel-mixing matrix per horizontal
  // stripe, so the map is stationary within a stripe (a body part). Stripe s
  // only sees its own contiguous block of latent dimensions.
  const std::size_t stripes = std::min<std::size_t>({kRenderStripes, H, d});
  auto latent_stripe = [&](std::size_t k) { return k * stripes / d; };
  // unit variance per rendered value: each stripe mixes d/stripes latents
  const double part_scale = std::sqrt(static_cast<double>(stripes) / static_cast<double>(d));
  std::vector<double> mixing[2], bias[2];
  for (int m = 0; m < 2; ++m) {
    mixing[m].resize(stripes * C * d);
    for (std::size_t st = 0; st < stripes; ++st)
      for (std::size_t k = 0; k < C * d; ++k) {
        const double g = unit(rng);
        mixing[m][st * C * d + k] = latent_stripe(k % d) == st ? part_scale * g : 0.0;
      }
    bias[m].resize(C);
    for (auto& x : bias[m]) x = unit(rng);
  }
  if (opts.shared_render) {
    mixing[1] = mixing[0];
    bias[1] = bias[0];
  }

  std::vector<std::vector<double>> latents(static_cast<std::size_t>(cfg.identities));
  for (auto& z : latents) {
    z.resize(d);
    for (auto& x : z) x = unit(rng);
  }

  DatasetSplit split;
  split.config = cfg;
  split.train_identities = cfg.train_identities();
  const Shape shape{static_cast<std::size_t>(cfg.height), static_cast<std::size_t>(cfg.width),
                    static_cast<std::size_t>(cfg.channels)};
  for (int id = 0; id < cfg.identities; ++id) {
    const auto& z = latents[static_cast<std::size_t>(id)];
    for (int m = 0; m < 2; ++m) {
      std::vector<double> clean(pixels);
      for (std::size_t p = 0; p < pixels; ++p) {
        const std::size_t c = p % C, stripe = (p / (W * C)) * stripes / H;
        const double* g = &mixing[m][(stripe * C + c) * d];
        double v = bias[m][c];
        for (std::size_t k = 0; k < d; ++k) v += g[k] * z[k];
        clean[p] = v;
      }
      for (int s = 0; s < cfg.images_per_id; ++s) {
        std::vector<double> img(clean);
        for (auto& x : img) x += cfg.noise * unit(rng);
        SyntheticSample sample{id, static_cast<Modality>(m), Tensor(shape, std::move(img))};
        if (id < split.train_identities)
          split.train.push_back(std::move(sample));
        else if (m == 1)
          split.query.push_back(std::move(sample));
        else
          split.gallery.push_back(std::move(sample));
      }
    }
  }
  return split;
}

inline Batch sample_batch(const DatasetSplit& split, const BatchSpec& spec, Rng& rng) {
  if (spec.P < 2 || spec.K < 1) throw ConfigError("batch spec requires P >= 2 and K >= 1");
  // index samples by (id, modality)
  std::vector<std::vector<std::size_t>> by[2];
  by[0].resize(static_cast<std::size_t>(split.train_identities));
  by[1].resize(static_cast<std::size_t>(split.train_identities));
  for (std::size_t i = 0; i < split.train.size(); ++i) {
    const auto& s = split.train[i];
    by[static_cast<int>(s.modality)][static_cast<std::size_t>(s.id)].push_back(i);
  }
  std::vector<int> eligible;
  for (int id = 0; id < split.train_identities; ++id)
    if (static_cast<int>(by[0][static_cast<std::size_t>(id)].size()) >= spec.K &&
        static_cast<int>(by[1][static_cast<std::size_t>(id)].size()) >= spec.K)
      eligible.push_back(id);
  if (static_cast<int>(eligible.size()) < spec.P)
    throw SamplingError("only " + std::to_string(eligible.size()) + " identities have " +
                        std::to_string(spec.K) + " images per modality; batch needs " +
                        std::to_string(spec.P));

  std::shuffle(eligible.begin(), eligible.end(), rng);
  Batch batch;
  batch.spec = spec;
  for (int p = 0; p < spec.P; ++p) {
    const auto id = static_cast<std::size_t>(eligible[static_cast<std::size_t>(p)]);
    for (int m = 0; m < 2; ++m) {
      auto pool = by[m][id];
      std::shuffle(pool.begin(), pool.end(), rng);
      auto& dst = m == 0 ? batch.vis : batch.ir;
      for (int k = 0; k < spec.K; ++k) dst.push_back(split.train[pool[static_cast<std::size_t>(k)]]);
    }
  }
  return batch;
}

// ---- dump / load -----------------------------------------------------------
//
// Text header lines
//   hosnet-data 1
//   split <name>
//   seed <seed>
//   count <n>
//   shape <H> <W> <C>
// followed by n records of: int64 id, int64 modality, H·W·C float64 values,
// all little-endian.

namespace detail {

inline void write_le_u64(std::ostream& os, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<const char*>(b), 8);
}

inline std::uint64_t read_le_u64(std::istream& is) {
  unsigned char b[8];
  if (!is.read(reinterpret_cast<char*>(b), 8)) throw Error("unexpected end of binary payload");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

inline void write_le_f64(std::ostream& os, double x) {
  std::uint64_t v;
  std::memcpy(&v, &x, 8);
  write_le_u64(os, v);
}

inline double read_le_f64(std::istream& is) {
  std::uint64_t v = read_le_u64(is);
  double x;
  std::memcpy(&x, &v, 8);
  return x;
}

inline std::string expect_line(std::istream& is, const std::string& key) {
  std::string line;
  if (!std::getline(is, line) || line.rfind(key, 0) != 0)
    throw Error("malformed header: expected `" + key + "`, got `" + line + "`");
  return line.size() > key.size() ? line.substr(key.size() + 1) : std::string{};
}

}  // namespace detail

inline void save_samples(const std::string& path, const std::string& split_name,
                         std::uint64_t seed, const std::vector<SyntheticSample>& samples) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot write " + path);
  if (samples.empty()) throw ContractError("refusing to write an empty split");
  const auto& s = samples.front().image.shape();
  os << "hosnet-data 1\nsplit " << split_name << "\nseed " << seed << "\ncount " << samples.size()
     << "\nshape " << s[0] << ' ' << s[1] << ' ' << s[2] << '\n';
  for (const auto& x : samples) {
    detail::write_le_u64(os, static_cast<std::uint64_t>(x.id));
    detail::write_le_u64(os, static_cast<std::uint64_t>(x.modality));
    for (double v : x.image.data()) detail::write_le_f64(os, v);
  }
}

inline std::vector<SyntheticSample> load_samples(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot read " + path);
  detail::expect_line(is, "hosnet-data");
  detail::expect_line(is, "split");
  detail::expect_line(is, "seed");
  const auto count = std::stoull(detail::expect_line(is, "count"));
  std::istringstream shp(detail::expect_line(is, "shape"));
  std::size_t h = 0, w = 0, c = 0;
  shp >> h >> w >> c;
  std::vector<SyntheticSample> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    SyntheticSample s;
    s.id = static_cast<int>(detail::read_le_u64(is));
    s.modality = static_cast<Modality>(detail::read_le_u64(is));
    std::vector<double> img(h * w * c);
    for (auto& v : img) v = detail::read_le_f64(is);
    s.image = Tensor({h, w, c}, std::move(img));
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace hosnet
