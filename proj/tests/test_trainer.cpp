#include <doctest.h>

#include <json.hpp>

#include <cmath>
#include <fstream>

#include "coseg/trainer.hpp"
#include "helpers.hpp"

using namespace coseg;
using ad::Tensor;

namespace {

NetConfig tiny_net() {
  NetConfig c;
  c.input_size = 16;
  c.widths = {4, 4, 6};
  c.adapter_channels = 4;
  return c;
}

GenConfig tiny_gen() {
  GenConfig g;
  g.image_size = 16;
  return g;
}

TrainConfig short_run(int epochs) {
  TrainConfig t;
  t.max_epochs = epochs;
  t.seed = 3;
  return t;
}

NetParams scalar_param(float v) {
  NetParams p;
  p["w"] = {Tensor<float>({1}, v), true};
  return p;
}

// Textbook Adam with decoupled decay, for comparison with adam_step.
struct RefAdam {
  double m = 0, v = 0;
  long t = 0;
  double step(double theta, double g, double lr, double wd) {
    ++t;
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    const double mh = m / (1 - std::pow(0.9, static_cast<double>(t)));
    const double vh = v / (1 - std::pow(0.999, static_cast<double>(t)));
    return theta - lr * mh / (std::sqrt(vh) + 1e-8) - lr * wd * theta;
  }
};

}  // namespace

TEST_CASE("adam examples") {
  AdamState s;
  NetParams p = scalar_param(0.5f);
  adam_step(p, {{"w", Tensor<float>({1}, 1.0f)}}, s, 1e-3, 0.0);
  CHECK(p.at("w").value[0] == doctest::Approx(0.5 - 1e-3 / (1 + 1e-8)).epsilon(1e-7));

  AdamState z;
  NetParams q = scalar_param(0.5f);
  for (int i = 0; i < 10; ++i) adam_step(q, {{"w", Tensor<float>({1}, 0.0f)}}, z, 1e-3, 0.0);
  CHECK(q.at("w").value[0] == 0.5f);

  AdamState d;
  NetParams r = scalar_param(2.0f);
  double expected = 2.0;
  for (int i = 0; i < 5; ++i) {
    adam_step(r, {{"w", Tensor<float>({1}, 0.0f)}}, d, 0.1, 0.5);
    expected *= 1.0 - 0.1 * 0.5;
  }
  CHECK(r.at("w").value[0] == doctest::Approx(expected).epsilon(1e-6));
}

TEST_CASE("adam matches a reference over many steps") {
  SplitMix64 rng(4);
  AdamState s;
  NetParams p = scalar_param(0.3f);
  RefAdam ref;
  double theta = 0.3;
  for (int i = 0; i < 50; ++i) {
    const double g = rng.uniform(-1, 1);
    adam_step(p, {{"w", Tensor<float>({1}, static_cast<float>(g))}}, s, 1e-2, 5e-5);
    theta = ref.step(theta, static_cast<double>(static_cast<float>(g)), 1e-2, 5e-5);
    CHECK(p.at("w").value[0] == doctest::Approx(theta).epsilon(1e-5));
  }
  CHECK(s.step == 50);
}

TEST_CASE("adam leaves buffers alone and rejects bad gradients") {
  AdamState s;
  NetParams p = scalar_param(1.0f);
  p["buf"] = {Tensor<float>({2}, 3.0f), false};
  adam_step(p, {{"w", Tensor<float>({1}, 1.0f)}, {"buf", Tensor<float>({2}, 1.0f)}}, s, 0.1, 0.1);
  CHECK(p.at("buf").value == Tensor<float>({2}, 3.0f));
  CHECK_THROWS_CODE(adam_step(p, {{"w", Tensor<float>({2}, 1.0f)}}, s, 0.1, 0.0), ErrorCode::ShapeMismatch);
  CHECK_THROWS_CODE(adam_step(p, {{"nope", Tensor<float>({1}, 1.0f)}}, s, 0.1, 0.0), ErrorCode::UnknownInput);
}

TEST_CASE("plateau schedule halves exactly after patience stale epochs") {
  SplitMix64 rng(6);
  for (int trial = 0; trial < 200; ++trial) {
    const int patience = static_cast<int>(rng.uniform_int(1, 4));
    PlateauSchedule sched(1e-3, patience, 0.5);
    double lr = 1e-3, best = INFINITY;
    int stale = 0;
    double loss = 1.0;
    for (int e = 0; e < 40; ++e) {
      loss += rng.uniform() < 0.4 ? -rng.uniform(0, 0.1) : rng.uniform(0, 0.05);
      if (rng.uniform() < 0.1) loss = best - 5e-7;  // inside min_delta: not an improvement
      if (loss <= best - 1e-6) {
        best = loss;
        stale = 0;
      } else if (++stale >= patience) {
        lr *= 0.5;
        stale = 0;
      }
      CHECK(sched.observe(loss) == lr);
      CHECK(sched.lr() == lr);
    }
  }
}

TEST_CASE("training smoke run, determinism and checkpoint selection") {
  const auto train_set = generate_items(1, tiny_gen(), 8);
  const auto val_set = generate_items(2, tiny_gen(), 4);
  const TrainConfig cfg = short_run(3);
  int seen = 0;
  const TrainResult a = train(train_set, val_set, tiny_net(), cfg, [&](const EpochRecord& r) { CHECK(r.epoch == ++seen); });
  CHECK(seen == 3);
  REQUIRE(a.history.epochs.size() == 3);
  const TrainResult b = train(train_set, val_set, tiny_net(), cfg);
  CHECK(a.history.to_csv() == b.history.to_csv());
  for (const auto& [name, e] : a.best_params) CHECK(e.value == b.best_params.at(name).value);

  double min_val = INFINITY;
  int argmin = 0;
  for (const auto& r : a.history.epochs) {
    CHECK(std::isfinite(r.train_loss));
    CHECK(r.lr == cfg.lr);
    if (r.val_loss < min_val) {
      min_val = r.val_loss;
      argmin = r.epoch;
    }
  }
  CHECK(a.best_val_loss == min_val);
  CHECK(a.best_epoch == argmin);
  NetParams best = a.best_params;
  CHECK(dataset_loss(val_set, tiny_net(), best, cfg.loss) == a.best_val_loss);

  const std::string csv = a.history.to_csv();
  CHECK(csv.starts_with("epoch,train_loss,val_loss,lr\n1,"));
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 4);

  TrainConfig other = cfg;
  other.seed = 4;
  CHECK(train(train_set, val_set, tiny_net(), other).history.to_csv() != csv);
}

TEST_CASE("lr never increases and drops under a short patience") {
  const auto train_set = generate_items(5, tiny_gen(), 4);
  const auto val_set = generate_items(6, tiny_gen(), 2);
  TrainConfig cfg = short_run(6);
  cfg.plateau_patience = 1;
  cfg.lr = 0.5;  // large enough to make validation loss bounce
  const TrainResult r = train(train_set, val_set, tiny_net(), cfg);
  for (std::size_t i = 1; i < r.history.epochs.size(); ++i)
    CHECK(r.history.epochs[i].lr <= r.history.epochs[i - 1].lr);
  CHECK(r.history.epochs.back().lr < cfg.lr);
}

TEST_CASE("training preconditions") {
  const auto items = generate_items(1, tiny_gen(), 3);
  CHECK_THROWS_CODE(train({}, items, tiny_net(), short_run(1)), ErrorCode::DatasetEmpty);
  CHECK_THROWS_CODE(train(items, {}, tiny_net(), short_run(1)), ErrorCode::DatasetEmpty);
  CHECK_THROWS_CODE(train({items[0]}, items, tiny_net(), short_run(1)), ErrorCode::BatchTooSmall);
  NetConfig wrong = tiny_net();
  wrong.input_size = 32;
  CHECK_THROWS_CODE(train(items, items, wrong, short_run(1)), ErrorCode::ShapeMismatch);
  TrainConfig bad = short_run(1);
  bad.batch_size = 1;
  CHECK_THROWS_CODE(train(items, items, tiny_net(), bad), ErrorCode::InvalidConfig);
  bad = short_run(1);
  bad.lr_factor = 1.0;
  CHECK_THROWS_CODE(bad.validate(), ErrorCode::InvalidConfig);
  CHECK(TrainConfig::paper_preset().lr == 1e-5);
  CHECK(TrainConfig::paper_preset().max_epochs == 120);
}

TEST_CASE("augmentation is part of the seeded stream") {
  const auto train_set = generate_items(7, tiny_gen(), 4);
  const auto val_set = generate_items(8, tiny_gen(), 2);
  TrainConfig on = short_run(2), off = short_run(2);
  off.augment = false;
  const auto a = train(train_set, val_set, tiny_net(), on).history.to_csv();
  CHECK(a == train(train_set, val_set, tiny_net(), on).history.to_csv());
  CHECK(a != train(train_set, val_set, tiny_net(), off).history.to_csv());
}

TEST_CASE("evaluation") {
  const auto items = generate_items(9, tiny_gen(), 5);

  SUBCASE("oracle predictions score 1") {
    for (OutputHead head : {OutputHead::SndmTanh, OutputHead::MaskSigmoid}) {
      const Predictor oracle = [&](const DatasetItem& it) {
        return std::make_pair(target_for(it.mask_a, head), target_for(it.mask_b, head));
      };
      const MetricsReport r = evaluate(items, oracle, head == OutputHead::SndmTanh ? 0.0 : 0.5);
      CHECK(r.items.size() == 10);
      CHECK(r.items[1].id == items[0].id + "/b");
      CHECK(r.mean.jaccard == 1.0);
      CHECK(r.mean.precision == 1.0);
      CHECK(r.mean.pixel_accuracy == 1.0);
    }
  }
  SUBCASE("untrained network gives a well-formed report") {
    const NetParams p = init_params(tiny_net(), 1);
    const MetricsReport r = evaluate(items, tiny_net(), p);
    const auto j = nlohmann::json::parse(r.to_json());
    CHECK(j["items"].size() == 10);
    for (const auto& item : j["items"]) {
      CHECK(item["jaccard"].get<double>() >= 0.0);
      CHECK(item["jaccard"].get<double>() <= 1.0);
    }
  }
  SUBCASE("checkpoint evaluation") {
    testutil::TempDir dir("eval");
    const NetParams p = init_params(tiny_net(), 2);
    save_checkpoint(dir / "m.ckpt", tiny_net(), p);
    CHECK(evaluate_checkpoint(dir / "m.ckpt", items).to_json() == evaluate(items, tiny_net(), p).to_json());
    std::ofstream(dir / "bad.ckpt") << "CKPT";
    CHECK_THROWS_CODE(evaluate_checkpoint(dir / "bad.ckpt", items), ErrorCode::CheckpointCorrupt);
  }
}

TEST_CASE("target_for") {
  const BinaryMask m = testutil::mask_from(3, 3, "....#....");
  CHECK(target_for(m, OutputHead::SndmTanh) == sndm_encode(m));
  const FloatMap t = target_for(m, OutputHead::MaskSigmoid);
  CHECK(t.at(1, 1) == 1.0f);
  CHECK(t.at(0, 0) == 0.0f);
}

TEST_CASE("ablation variants") {
  CHECK(variant_name(Variant::BaselinePlus) == "Baseline+");
  CHECK_FALSE(variant_net(Variant::Baseline).dense_connections);
  CHECK(variant_net(Variant::Baseline).head == OutputHead::MaskSigmoid);
  CHECK(variant_net(Variant::BaselinePlus).dense_connections);
  CHECK(variant_net(Variant::BaselinePlus).head == OutputHead::MaskSigmoid);
  CHECK(variant_net(Variant::Full).head == OutputHead::SndmTanh);
  CHECK(variant_loss(Variant::Baseline) == LossKind::Dice);
  CHECK(variant_loss(Variant::Full) == LossKind::Iou3dEdge);
}

TEST_CASE("tiny ablation: 3 rows, runs x 3 jobs, reproducible") {
  AblationConfig cfg;
  cfg.runs = 2;
  cfg.train_pairs = 4;
  cfg.val_pairs = 2;
  cfg.test_pairs = 2;
  cfg.gen = tiny_gen();
  cfg.net = tiny_net();
  cfg.train = short_run(1);
  cfg.threads = 2;
  int calls = 0;
  const AblationTable t = ablation(cfg, [&](const AblationRun&) { ++calls; });
  CHECK(calls == 6);
  CHECK(t.jobs == 6);
  REQUIRE(t.rows.size() == 3);
  for (const auto& row : t.rows) {
    REQUIRE(row.runs.size() == 2);
    CHECK(row.mean.jaccard == doctest::Approx((row.runs[0].test_mean.jaccard + row.runs[1].test_mean.jaccard) / 2));
    CHECK(row.runs[0].seed == row.runs[0].seed);
  }
  CHECK(t.rows[0].runs[1].seed == t.rows[2].runs[1].seed);
  CHECK(t.rows[0].runs[0].seed != t.rows[0].runs[1].seed);

  const auto j = nlohmann::json::parse(t.to_json());
  CHECK(j["rows"].size() == 3);
  CHECK(j["rows"][2]["variant"] == "Full");
  CHECK(j["rows"][0]["arch"] == "plain");
  CHECK(j["jobs"] == 6);

  cfg.threads = 1;
  CHECK(ablation(cfg).to_json() == t.to_json());

  cfg.runs = 0;
  CHECK_THROWS_CODE(ablation(cfg), ErrorCode::InvalidConfig);
}
