#include <doctest.h>

#include <fstream>
#include <map>

#include "coseg/config.hpp"
#include "helpers.hpp"

using namespace coseg;

TEST_CASE("key = value parsing") {
  const auto kv = parse_key_values("# header\n\n  lr = 0.01  \nwidths=4, 4,6 # trailing\r\n\t\nloss = dice\n");
  REQUIRE(kv.size() == 3);
  CHECK(kv[0] == std::pair<std::string, std::string>{"lr", "0.01"});
  CHECK(kv[1] == std::pair<std::string, std::string>{"widths", "4, 4,6"});
  CHECK(kv[2] == std::pair<std::string, std::string>{"loss", "dice"});
  CHECK(parse_key_values("").empty());
  CHECK(parse_key_values("# only a comment\n").empty());

  CHECK_THROWS_CODE(parse_key_values("lr 0.01\n"), ErrorCode::InvalidConfig);
  CHECK_THROWS_CODE(parse_key_values(" = 3\n"), ErrorCode::InvalidConfig);
  CHECK_THROWS_CODE(parse_key_values("lr = 1\nlr = 2\n"), ErrorCode::InvalidConfig);
}

TEST_CASE("every known key is accepted and lands in the right field") {
  const std::map<std::string, std::string> sample = {
      {"input_size", "32"},    {"levels", "3"},           {"widths", "8,16,32"},   {"arch", "plain"},
      {"head", "mask"},        {"adapter_channels", "8"}, {"bn_momentum", "0.8"},  {"bn_epsilon", "0.001"},
      {"preset", "paper"},     {"batch_size", "2"},       {"lr", "0.002"},         {"weight_decay", "0.5"},
      {"plateau_patience", "7"}, {"lr_factor", "0.25"},   {"max_epochs", "12"},    {"loss", "iou3d-pen"},
      {"seed", "99"},          {"augment", "false"},      {"lambda", "3"},         {"epsilon", "1e-6"},
      {"image_size", "32"},    {"distractors_min", "1"},  {"distractors_max", "2"}, {"scale_min", "0.2"},
      {"scale_max", "0.3"},    {"rotation_min", "0.1"},   {"rotation_max", "0.2"}, {"color_jitter", "0.01"},
      {"noise_sigma", "0.02"}};
  const auto keys = CliConfig::known_keys();
  CHECK(keys.size() == sample.size());
  CliConfig c;
  for (const std::string& k : keys) {
    INFO(k);
    REQUIRE(sample.count(k) == 1);
    c.set(k, sample.at(k));
  }
  CHECK(c.net.input_size == 32);
  CHECK(c.net.levels == 3);
  CHECK(c.net.widths == std::vector<int>{8, 16, 32});
  CHECK_FALSE(c.net.dense_connections);
  CHECK(c.net.head == OutputHead::MaskSigmoid);
  CHECK(c.net.adapter_channels == 8);
  CHECK(c.net.batch_norm.momentum == 0.8);
  CHECK(c.net.batch_norm.epsilon == 0.001);
  CHECK(c.train.batch_size == 2);
  CHECK(c.train.lr == 0.002);
  CHECK(c.train.weight_decay == 0.5);
  CHECK(c.train.plateau_patience == 7);
  CHECK(c.train.lr_factor == 0.25);
  CHECK(c.train.max_epochs == 12);
  CHECK(c.train.loss == LossKind::Iou3dPenalized);
  CHECK(c.train.seed == 99);
  CHECK_FALSE(c.train.augment);
  CHECK(c.train.loss_config.lambda == 3.0);
  CHECK(c.train.loss_config.epsilon == 1e-6);
  CHECK(c.gen.image_size == 32);
  CHECK(c.gen.distractors_min == 1);
  CHECK(c.gen.distractors_max == 2);
  CHECK(c.gen.scale_min == 0.2);
  CHECK(c.gen.scale_max == 0.3);
  CHECK(c.gen.rotation_min == 0.1);
  CHECK(c.gen.rotation_max == 0.2);
  CHECK(c.gen.color_jitter == 0.01);
  CHECK(c.gen.noise_sigma == 0.02);
  c.validate();
}

TEST_CASE("bad keys and values are InvalidConfig") {
  CliConfig c;
  CHECK_THROWS_CODE(c.set("learning_rate", "1"), ErrorCode::InvalidConfig);
  CHECK_THROWS_CODE(c.set("batch_size", "4x"), ErrorCode::InvalidConfig);
  CHECK_THROWS_CODE(c.set("batch_size", ""), ErrorCode::InvalidConfig);
  CHECK_THROWS_CODE(c.set("lr", "fast"), ErrorCode::InvalidConfig);
  CHECK_THROWS_CODE(c.set("seed", "-1"), ErrorCode::InvalidConfig);
  CHECK_THROWS_CODE(c.set("widths", "4,,6"), ErrorCode::InvalidConfig);
  CHECK_THROWS_CODE(c.set("arch", "resnet"), ErrorCode::InvalidConfig);
  CHECK_THROWS_CODE(c.set("augment", "yes"), ErrorCode::InvalidConfig);
  CHECK_THROWS_CODE(c.set("preset", "huge"), ErrorCode::InvalidConfig);
  CHECK(c.train.batch_size == TrainConfig{}.batch_size);
}

TEST_CASE("range checks run in validate, per module") {
  CliConfig c;
  c.validate();
  c.set("batch_size", "0");
  CHECK_THROWS_CODE(c.validate(), ErrorCode::InvalidConfig);
  c = {};
  c.set("widths", "4,4");
  CHECK_THROWS_CODE(c.validate(), ErrorCode::InvalidConfig);
  c = {};
  c.set("noise_sigma", "-1");
  CHECK_THROWS_CODE(c.validate(), ErrorCode::InvalidConfig);
  c = {};
  c.set("lambda", "0.5");
  CHECK_THROWS_CODE(c.validate(), ErrorCode::InvalidConfig);
}

TEST_CASE("preset applies before the other keys wherever it appears") {
  CliConfig c;
  c.apply({{"lr", "0.01"}, {"preset", "paper"}});
  CHECK(c.train.lr == 0.01);
  CHECK(c.train.max_epochs == TrainConfig::paper_preset().max_epochs);

  CliConfig d;
  d.apply({{"preset", "paper"}});
  CHECK(d.train.lr == TrainConfig::paper_preset().lr);
  d.set("preset", "toy");
  CHECK(d.train.lr == TrainConfig{}.lr);
}

TEST_CASE("load_file") {
  testutil::TempDir dir("cfg");
  std::ofstream(dir / "a.cfg") << "# net\nwidths = 4,4,6\nadapter_channels = 4\nloss = dice\n";
  const CliConfig c = CliConfig::load_file(dir / "a.cfg");
  CHECK(c.net.widths == std::vector<int>{4, 4, 6});
  CHECK(c.train.loss == LossKind::Dice);
  CHECK_THROWS_CODE(CliConfig::load_file(dir / "missing.cfg"), ErrorCode::MissingFile);
  std::ofstream(dir / "b.cfg") << "depth = 3\n";
  CHECK_THROWS_CODE(CliConfig::load_file(dir / "b.cfg"), ErrorCode::InvalidConfig);
}
