#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <map>
#include <set>

#include "hosnet/data.hpp"
#include "hosnet/evaluator.hpp"
#include "test_util.hpp"

using namespace hosnet;
using namespace hosnet::testing;

namespace {

DataConfig small_config() {
  DataConfig c;
  c.identities = 12;
  c.images_per_id = 4;
  return c;
}

}  // namespace

TEST(GenerateDataset, SameSeedIsBitwiseIdentical) {
  const auto a = generate_dataset(small_config()), b = generate_dataset(small_config());
  ASSERT_EQ(a.train.size(), b.train.size());
  for (std::size_t i = 0; i < a.train.size(); ++i)
    EXPECT_TRUE(bitwise_equal(a.train[i].image.data(), b.train[i].image.data()));
  for (std::size_t i = 0; i < a.query.size(); ++i)
    EXPECT_TRUE(bitwise_equal(a.query[i].image.data(), b.query[i].image.data()));
  auto c = small_config();
  c.seed = 1;
  EXPECT_FALSE(bitwise_equal(generate_dataset(c).train[0].image.data(), a.train[0].image.data()));
}

TEST(GenerateDataset, ZeroNoiseRepeatsImagesWithinIdentityAndModality) {
  auto c = small_config();
  c.noise = 0.0;
  const auto d = generate_dataset(c);
  std::map<std::pair<int, int>, const SyntheticSample*> first;
  for (const auto* set : {&d.train, &d.query, &d.gallery})
    for (const auto& s : *set) {
      auto key = std::make_pair(s.id, static_cast<int>(s.modality));
      auto [it, fresh] = first.emplace(key, &s);
      if (!fresh) {
        EXPECT_TRUE(bitwise_equal(it->second->image.data(), s.image.data()));
      }
    }
}

TEST(GenerateDataset, SharedRenderGivesZeroCrossModalDistance) {
  auto c = small_config();
  c.noise = 0.0;
  const auto d = generate_dataset(c, {.shared_render = true});
  // direct cosine distance between raw same-identity VIS/IR images
  std::vector<Descriptor> vis, ir;
  for (auto& s : d.gallery) vis.push_back({s.id, {s.image.data().begin(), s.image.data().end()}});
  for (auto& s : d.query) ir.push_back({s.id, {s.image.data().begin(), s.image.data().end()}});
  EXPECT_NEAR(cross_modal_distance(vis, ir), 0.0, 1e-14);
  // distinct renders leave a real modality gap
  c.noise = 0.0;
  const auto gap = generate_dataset(c);
  std::vector<Descriptor> v2, i2;
  for (auto& s : gap.gallery) v2.push_back({s.id, {s.image.data().begin(), s.image.data().end()}});
  for (auto& s : gap.query) i2.push_back({s.id, {s.image.data().begin(), s.image.data().end()}});
  EXPECT_GT(cross_modal_distance(v2, i2), 0.1);
}

TEST(GenerateDataset, SplitArithmeticAndDisjointness) {
  DataConfig c;  // 48 identities
  const auto d = generate_dataset(c);
  EXPECT_EQ(d.train_identities, 32);
  std::set<int> train_ids, test_ids;
  for (auto& s : d.train) train_ids.insert(s.id);
  for (auto& s : d.query) test_ids.insert(s.id);
  for (auto& s : d.gallery) test_ids.insert(s.id);
  EXPECT_EQ(train_ids.size(), 32u);
  EXPECT_EQ(test_ids.size(), 16u);
  for (int id : test_ids) EXPECT_EQ(train_ids.count(id), 0u);
  for (auto& s : d.query) EXPECT_EQ(s.modality, Modality::ir);
  for (auto& s : d.gallery) EXPECT_EQ(s.modality, Modality::vis);
  EXPECT_EQ(d.train.size(), 32u * 2 * 8);
  for (auto& s : d.train)
    for (double v : s.image.data()) ASSERT_TRUE(std::isfinite(v));
}

TEST(GenerateDataset, TooFewIdentitiesIsConfigError) {
  DataConfig c;
  c.identities = 3;
  EXPECT_THROW(generate_dataset(c), ConfigError);
}

TEST(SampleBatch, DefaultBatchShape) {
  const auto d = generate_dataset(DataConfig{});
  Rng rng(0);
  const Batch b = sample_batch(d, {8, 4}, rng);
  EXPECT_EQ(b.vis.size() + b.ir.size(), 64u);
  EXPECT_EQ(b.vis.size(), 32u);
  std::map<int, int> vis_count, ir_count;
  for (auto& s : b.vis) {
    EXPECT_EQ(s.modality, Modality::vis);
    ++vis_count[s.id];
  }
  for (auto& s : b.ir) {
    EXPECT_EQ(s.modality, Modality::ir);
    ++ir_count[s.id];
  }
  EXPECT_EQ(vis_count.size(), 8u);
  for (auto& [id, n] : vis_count) {
    EXPECT_EQ(n, 4);
    EXPECT_EQ(ir_count[id], 4);
    EXPECT_LT(id, d.train_identities);
  }
  for (std::size_t i = 0; i < b.vis.size(); ++i) EXPECT_EQ(b.vis[i].id, b.ir[i].id);
}

TEST(SampleBatch, MinimalBatch) {
  const auto d = generate_dataset(small_config());
  Rng rng(1);
  const Batch b = sample_batch(d, {2, 1}, rng);
  EXPECT_EQ(b.all().size(), 4u);
  std::set<int> ids;
  for (auto& s : b.all()) ids.insert(s.id);
  EXPECT_EQ(ids.size(), 2u);
}

TEST(SampleBatch, LabelHistogramIsUniform) {
  const auto d = generate_dataset(DataConfig{});
  Rng rng(2);
  std::vector<double> counts(static_cast<std::size_t>(d.train_identities), 0.0);
  for (int i = 0; i < 1000; ++i) {
    const Batch b = sample_batch(d, {8, 4}, rng);
    for (int p = 0; p < 8; ++p) counts[static_cast<std::size_t>(b.vis[static_cast<std::size_t>(p * 4)].id)] += 1.0;
  }
  const double expected = 1000.0 * 8.0 / static_cast<double>(d.train_identities);
  double chi2 = 0.0;
  for (double c : counts) chi2 += (c - expected) * (c - expected) / expected;
  // 31 degrees of freedom; 61.1 is the 0.999 quantile
  EXPECT_LT(chi2, 61.1);
}

TEST(SampleBatch, SameSeedSameStream) {
  const auto d = generate_dataset(small_config());
  Rng a(5), b(5);
  for (int i = 0; i < 10; ++i) {
    const auto x = sample_batch(d, {3, 2}, a), y = sample_batch(d, {3, 2}, b);
    for (std::size_t j = 0; j < x.vis.size(); ++j) {
      EXPECT_EQ(x.vis[j].id, y.vis[j].id);
      EXPECT_TRUE(bitwise_equal(x.ir[j].image.data(), y.ir[j].image.data()));
    }
  }
}

TEST(SampleBatch, InsufficientImagesIsSamplingError) {
  auto c = small_config();
  c.images_per_id = 2;
  const auto d = generate_dataset(c);
  Rng rng(0);
  EXPECT_THROW(sample_batch(d, {2, 3}, rng), SamplingError);
  EXPECT_THROW(sample_batch(d, {9, 1}, rng), SamplingError);  // 8 train identities
}

TEST(DatasetFiles, DumpLoadRoundTrip) {
  const auto d = generate_dataset(small_config());
  const auto path = (std::filesystem::temp_directory_path() / "hosnet_data_test.bin").string();
  save_samples(path, "train", 0, d.train);
  const auto back = load_samples(path);
  ASSERT_EQ(back.size(), d.train.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    EXPECT_EQ(back[i].id, d.train[i].id);
    EXPECT_EQ(back[i].modality, d.train[i].modality);
    EXPECT_TRUE(bitwise_equal(back[i].image.data(), d.train[i].image.data()));
  }
  std::remove(path.c_str());
}
