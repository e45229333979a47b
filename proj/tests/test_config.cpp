#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "hosnet/pipeline.hpp"

using namespace hosnet;

TEST(Config, ParsesCommentsAndWhitespace) {
  std::istringstream in("# header\n  train.epochs = 7  \n\ncfl.lambda=0.5 # inline\n");
  const auto c = Config::parse(in);
  EXPECT_EQ(c.integer("train.epochs"), 7);
  EXPECT_DOUBLE_EQ(c.real("cfl.lambda"), 0.5);
  std::istringstream bad("no equals sign\n");
  EXPECT_THROW(Config::parse(bad), ConfigError);
}

TEST(Config, UnknownKeyIsRejected) {
  auto c = Config::defaults();
  EXPECT_THROW(c.set("train.epoch", "3"), ConfigError);
  EXPECT_THROW(resolve_config("", {"nosuch.key=1"}), ConfigError);
  EXPECT_THROW(resolve_config("", {"train.epochs"}), ConfigError);
}

TEST(Config, TypedAccessorsValidate) {
  auto c = Config::defaults();
  c.set("train.epochs", "3.5");
  EXPECT_THROW(c.integer("train.epochs"), ConfigError);
  c.set("hsl.whitening", "maybe");
  EXPECT_THROW(c.boolean("hsl.whitening"), ConfigError);
  c.set("hsl.whitening", "off");
  EXPECT_FALSE(c.boolean("hsl.whitening"));
  EXPECT_THROW(parse_fusion("max"), ConfigError);
}

TEST(Config, DefaultsThenFileThenOverrides) {
  const auto path = (std::filesystem::temp_directory_path() / "hosnet_config_test.txt").string();
  std::ofstream(path) << "train.epochs = 5\ncfl.lambda = 0.7\n";
  const auto c = resolve_config(path, {"train.epochs=9"});
  EXPECT_EQ(c.integer("train.epochs"), 9);
  EXPECT_DOUBLE_EQ(c.real("cfl.lambda"), 0.7);
  EXPECT_EQ(c.integer("train.P"), 8);
  std::istringstream back(c.serialize());
  const auto round = Config::parse(back);
  EXPECT_EQ(round.serialize(), c.serialize());
  std::filesystem::remove(path);
  EXPECT_THROW(resolve_config(path, {}), ConfigError);
}

TEST(ParseRanks, CommaList) {
  EXPECT_EQ(parse_ranks("1,5,10"), (std::vector<std::size_t>{1, 5, 10}));
  EXPECT_THROW(parse_ranks("1,x"), ConfigError);
  EXPECT_THROW(parse_ranks("0"), ConfigError);
}
