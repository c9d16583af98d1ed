#include "coseg/trainer.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <mutex>
#include <numbers>
#include <numeric>

#include <json.hpp>

#include "coseg/error.hpp"
#include "coseg/parallel.hpp"
#include "coseg/rng.hpp"
#include "coseg/sndm_codec.hpp"

namespace coseg {

namespace {

constexpr int kEvalBatch = 8;

struct Batch {
  ad::Tensor<float> img_a, img_b, tgt_a, tgt_b;
};

void copy_map_to_tensor(const FloatMap& map, ad::Tensor<float>& batch, int index) {
  const std::size_t plane = map.size();
  std::copy(map.values().begin(), map.values().end(), batch.ptr() + static_cast<std::size_t>(index) * plane);
}

FloatMap tensor_item_to_map(const ad::Tensor<float>& t, int index) {
  const int h = t.dim(2), w = t.dim(3);
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  const float* src = t.ptr() + static_cast<std::size_t>(index) * plane;
  return FloatMap(w, h, std::vector<float>(src, src + plane));
}

// Images for items[order[begin..end)], plus targets when given.
Batch make_batch(const std::vector<DatasetItem>& items, const std::vector<std::size_t>& order, std::size_t begin,
                 std::size_t end, const std::vector<std::pair<FloatMap, FloatMap>>* targets) {
  const int n = static_cast<int>(end - begin);
  const int h = items.front().img_a.height(), w = items.front().img_a.width();
  Batch b{ad::Tensor<float>({n, 3, h, w}), ad::Tensor<float>({n, 3, h, w}), {}, {}};
  if (targets) {
    b.tgt_a = ad::Tensor<float>({n, 1, h, w});
    b.tgt_b = ad::Tensor<float>({n, 1, h, w});
  }
  for (int i = 0; i < n; ++i) {
    const std::size_t idx = order[begin + static_cast<std::size_t>(i)];
    copy_image_to_tensor(items[idx].img_a, b.img_a, i);
    copy_image_to_tensor(items[idx].img_b, b.img_b, i);
    if (targets) {
      copy_map_to_tensor((*targets)[idx].first, b.tgt_a, i);
      copy_map_to_tensor((*targets)[idx].second, b.tgt_b, i);
    }
  }
  return b;
}

// In-place dihedral transform of every h*w plane of a square-image tensor:
// bit 0 mirrors x, bit 1 mirrors y, bit 2 transposes.
void dihedral_item(ad::Tensor<float>& t, int index, int transform) {
  const int c = t.dim(1), h = t.dim(2), w = t.dim(3);
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  std::vector<float> tmp(plane);
  for (int ch = 0; ch < c; ++ch) {
    float* p = t.ptr() + (static_cast<std::size_t>(index) * c + ch) * plane;
    std::copy(p, p + plane, tmp.begin());
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        int sx = (transform & 1) ? w - 1 - x : x;
        int sy = (transform & 2) ? h - 1 - y : y;
        if (transform & 4) std::swap(sx, sy);
        p[static_cast<std::size_t>(y) * w + x] = tmp[static_cast<std::size_t>(sy) * w + sx];
      }
    }
  }
}

// Applies the 3x3 colour matrix `m` (row-major) about mid-grey to one item.
void recolor_item(ad::Tensor<float>& t, int index, const std::array<double, 9>& m) {
  const std::size_t plane = static_cast<std::size_t>(t.dim(2)) * t.dim(3);
  float* p = t.ptr() + static_cast<std::size_t>(index) * 3 * plane;
  for (std::size_t i = 0; i < plane; ++i) {
    const double r = p[i] - 0.5, g = p[plane + i] - 0.5, b = p[2 * plane + i] - 0.5;
    for (int ch = 0; ch < 3; ++ch) {
      const double* row = m.data() + 3 * ch;
      p[static_cast<std::size_t>(ch) * plane + i] = static_cast<float>(0.5 + row[0] * r + row[1] * g + row[2] * b);
    }
  }
}

// Hue rotation about the grey axis by a random angle, then an optional
// red/green swap and an optional inversion. All of these map grey to grey
// and keep colour distances.
std::array<double, 9> random_color_transform(SplitMix64& rng) {
  const double theta = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double c = std::cos(theta), s = std::sin(theta) / std::sqrt(3.0), k = (1.0 - c) / 3.0;
  std::array<double, 9> m = {c + k, k - s, k + s, k + s, c + k, k - s, k - s, k + s, c + k};
  if (rng.uniform() < 0.5) {
    for (int j = 0; j < 3; ++j) std::swap(m[static_cast<std::size_t>(j)], m[static_cast<std::size_t>(3 + j)]);
  }
  if (rng.uniform() < 0.5) {
    for (double& v : m) v = -v;
  }
  return m;
}

void augment_batch(Batch& b, SplitMix64& rng) {
  for (int i = 0; i < b.img_a.dim(0); ++i) {
    // Each of the three bits is a reflection. B gets the same reflection
    // parity as A, so the two copies of the object stay related by a rotation
    // as in generated pairs.
    const int ta = static_cast<int>(rng.uniform_int(0, 7));
    int tb = static_cast<int>(rng.uniform_int(0, 3));
    if ((std::popcount(static_cast<unsigned>(ta)) + std::popcount(static_cast<unsigned>(tb))) % 2 != 0) tb |= 4;
    dihedral_item(b.img_a, i, ta);
    dihedral_item(b.tgt_a, i, ta);
    dihedral_item(b.img_b, i, tb);
    dihedral_item(b.tgt_b, i, tb);
    // One colour change for both images keeps the common object's colours equal.
    const auto colour = random_color_transform(rng);
    recolor_item(b.img_a, i, colour);
    recolor_item(b.img_b, i, colour);
  }
}

std::vector<std::pair<FloatMap, FloatMap>> make_targets(const std::vector<DatasetItem>& items, OutputHead head) {
  std::vector<std::pair<FloatMap, FloatMap>> out;
  out.reserve(items.size());
  for (const DatasetItem& it : items) out.emplace_back(target_for(it.mask_a, head), target_for(it.mask_b, head));
  return out;
}

void check_sizes(const std::vector<DatasetItem>& items, const NetConfig& net, const char* what) {
  for (const DatasetItem& it : items) {
    if (it.img_a.width() != net.input_size || it.img_a.height() != net.input_size) {
      throw Error(ErrorCode::ShapeMismatch, std::string(what) + " pair " + it.id + " is " +
                                                std::to_string(it.img_a.width()) + "x" +
                                                std::to_string(it.img_a.height()) + ", network expects " +
                                                std::to_string(net.input_size));
    }
  }
}

double loss_over(const std::vector<DatasetItem>& items, const std::vector<std::pair<FloatMap, FloatMap>>& targets,
                 CosegNet<float>& model, NetParams& params) {
  std::vector<std::size_t> order(items.size());
  std::iota(order.begin(), order.end(), 0);
  double total = 0.0;
  for (std::size_t begin = 0; begin < items.size(); begin += kEvalBatch) {
    const std::size_t end = std::min(items.size(), begin + kEvalBatch);
    const Batch b = make_batch(items, order, begin, end, &targets);
    total += model.forward_loss(b.img_a, b.img_b, b.tgt_a, b.tgt_b, params, ad::Mode::Eval) *
             static_cast<double>(end - begin);
  }
  return total / static_cast<double>(items.size());
}

}  // namespace

// --- configuration ----------------------------------------------------------------

void TrainConfig::validate() const {
  auto fail = [](const std::string& msg) { throw Error(ErrorCode::InvalidConfig, msg); };
  if (batch_size < 2) fail("batch_size must be at least 2 (batch norm)");
  if (!(lr > 0.0) || !std::isfinite(lr)) fail("lr must be positive");
  if (!(weight_decay >= 0.0) || !std::isfinite(weight_decay)) fail("weight_decay must be non-negative");
  if (plateau_patience < 1) fail("plateau_patience must be positive");
  if (!(lr_factor > 0.0 && lr_factor < 1.0)) fail("lr_factor must be in (0, 1)");
  if (max_epochs < 1) fail("max_epochs must be positive");
  loss_config.validate();
}

TrainConfig TrainConfig::paper_preset() {
  TrainConfig c;
  c.lr = 1e-5;
  c.max_epochs = 120;
  return c;
}

// --- optimizer --------------------------------------------------------------------

void adam_step(NetParams& params, const std::map<std::string, ad::Tensor<float>>& grads, AdamState& state,
               double lr, double weight_decay, const AdamSettings& settings) {
  for (const auto& [name, g] : grads) {
    auto it = params.find(name);
    if (it == params.end()) throw Error(ErrorCode::UnknownInput, "gradient for unknown parameter " + name);
    if (it->second.value.shape() != g.shape()) {
      throw Error(ErrorCode::ShapeMismatch, "gradient of " + name + " has shape " + ad::shape_str(g.shape()) +
                                                ", parameter " + ad::shape_str(it->second.value.shape()));
    }
  }
  ++state.step;
  const double c1 = 1.0 - std::pow(settings.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(settings.beta2, static_cast<double>(state.step));
  for (const auto& [name, g] : grads) {
    ad::ParamEntry<float>& entry = params.at(name);
    if (!entry.trainable) continue;
    auto& m = state.m[name];
    auto& v = state.v[name];
    m.resize(g.numel(), 0.0);
    v.resize(g.numel(), 0.0);
    ad::Tensor<float>& theta = entry.value;
    for (std::size_t i = 0; i < g.numel(); ++i) {
      const double gi = g[i];
      m[i] = settings.beta1 * m[i] + (1.0 - settings.beta1) * gi;
      v[i] = settings.beta2 * v[i] + (1.0 - settings.beta2) * gi * gi;
      const double m_hat = m[i] / c1;
      const double v_hat = v[i] / c2;
      const double t = theta[i];
      theta[i] = static_cast<float>(t - lr * m_hat / (std::sqrt(v_hat) + settings.epsilon) - lr * weight_decay * t);
    }
  }
}

PlateauSchedule::PlateauSchedule(double lr, int patience, double factor, double min_delta)
    : lr_(lr), patience_(patience), factor_(factor), min_delta_(min_delta) {}

double PlateauSchedule::observe(double loss) {
  if (loss <= best_ - min_delta_) {
    best_ = loss;
    stale_ = 0;
  } else if (++stale_ >= patience_) {
    lr_ *= factor_;
    stale_ = 0;
  }
  return lr_;
}

std::string TrainHistory::to_csv() const {
  std::string out = "epoch,train_loss,val_loss,lr\n";
  char line[160];
  for (const EpochRecord& e : epochs) {
    std::snprintf(line, sizeof line, "%d,%.17g,%.17g,%.17g\n", e.epoch, e.train_loss, e.val_loss, e.lr);
    out += line;
  }
  return out;
}

// --- training ---------------------------------------------------------------------

FloatMap target_for(const BinaryMask& mask, OutputHead head) {
  if (head == OutputHead::SndmTanh) return sndm_encode(mask);
  FloatMap out(mask.width(), mask.height());
  for (std::size_t i = 0; i < mask.size(); ++i) out.values()[i] = mask.labels()[i] ? 1.0f : 0.0f;
  return out;
}

TrainResult train(const std::vector<DatasetItem>& train_set, const std::vector<DatasetItem>& val_set,
                  const NetConfig& net, const TrainConfig& config,
                  const std::function<void(const EpochRecord&)>& on_epoch) {
  net.validate();
  config.validate();
  if (train_set.empty()) throw Error(ErrorCode::DatasetEmpty, "training set is empty");
  if (val_set.empty()) throw Error(ErrorCode::DatasetEmpty, "validation set is empty");
  if (train_set.size() < 2) throw Error(ErrorCode::BatchTooSmall, "training needs at least 2 pairs");
  check_sizes(train_set, net, "training");
  check_sizes(val_set, net, "validation");

  const auto train_targets = make_targets(train_set, net.head);
  const auto val_targets = make_targets(val_set, net.head);
  CosegNet<float> model(net, config.loss, config.loss_config);
  NetParams params = init_params(net, derive_seed(config.seed, 1));
  AdamState adam;
  PlateauSchedule schedule(config.lr, config.plateau_patience, config.lr_factor);

  TrainResult result;
  result.best_params = params;
  std::vector<std::size_t> order(train_set.size());
  const auto batch = static_cast<std::size_t>(config.batch_size);
  for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    std::iota(order.begin(), order.end(), 0);
    SplitMix64 rng(derive_seed(config.seed, 2 + static_cast<std::uint64_t>(epoch)));
    for (std::size_t i = order.size() - 1; i > 0; --i) {
      std::swap(order[i], order[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i)))]);
    }

    const double lr = schedule.lr();
    double loss_sum = 0.0;
    std::size_t seen = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += batch) {
      const std::size_t end = std::min(order.size(), begin + batch);
      if (end - begin < 2) break;
      Batch b = make_batch(train_set, order, begin, end, &train_targets);
      if (config.augment) augment_batch(b, rng);
      double value = 0.0;
      const auto grads = model.loss_and_grads(b.img_a, b.img_b, b.tgt_a, b.tgt_b, params, ad::Mode::Train, &value);
      adam_step(params, grads, adam, lr, config.weight_decay);
      loss_sum += value * static_cast<double>(end - begin);
      seen += end - begin;
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(seen);
    rec.val_loss = loss_over(val_set, val_targets, model, params);
    rec.lr = lr;
    rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (rec.val_loss < result.best_val_loss) {
      result.best_val_loss = rec.val_loss;
      result.best_epoch = epoch;
      result.best_params = params;
    }
    schedule.observe(rec.val_loss);
    result.history.epochs.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  return result;
}

double dataset_loss(const std::vector<DatasetItem>& items, const NetConfig& net, NetParams& params, LossKind loss,
                    const LossConfig& loss_config) {
  if (items.empty()) throw Error(ErrorCode::DatasetEmpty, "dataset is empty");
  check_sizes(items, net, "dataset");
  CosegNet<float> model(net, loss, loss_config);
  return loss_over(items, make_targets(items, net.head), model, params);
}

// --- evaluation -------------------------------------------------------------------

MetricsReport evaluate(const std::vector<DatasetItem>& items, const Predictor& predict, double threshold) {
  if (items.empty()) throw Error(ErrorCode::DatasetEmpty, "dataset is empty");
  MetricsReport report;
  report.items.resize(items.size() * 2);
  parallel_for(items.size(), worker_count(), [&](std::size_t i) {
    const auto [pa, pb] = predict(items[i]);
    auto decode = [threshold](const FloatMap& p) {
      BinaryMask m(p.width(), p.height());
      for (std::size_t k = 0; k < p.size(); ++k) {
        m.set(static_cast<int>(k % static_cast<std::size_t>(p.width())),
              static_cast<int>(k / static_cast<std::size_t>(p.width())), p.values()[k] > threshold);
      }
      return m;
    };
    report.items[2 * i] = {items[i].id + "/a", score(decode(pa), items[i].mask_a)};
    report.items[2 * i + 1] = {items[i].id + "/b", score(decode(pb), items[i].mask_b)};
  });
  report.finalize();
  return report;
}

std::vector<std::pair<FloatMap, FloatMap>> predict_pairs(const std::vector<DatasetItem>& items, const NetConfig& net,
                                                         const NetParams& params) {
  check_sizes(items, net, "evaluation");
  std::vector<std::pair<FloatMap, FloatMap>> out(items.size(), {FloatMap(1, 1), FloatMap(1, 1)});
  const std::size_t batches = (items.size() + kEvalBatch - 1) / kEvalBatch;
  std::vector<std::size_t> order(items.size());
  std::iota(order.begin(), order.end(), 0);
  // Eval mode treats batch items independently, so batching and threading do
  // not change any output bit.
  parallel_for(batches, worker_count(), [&](std::size_t bi) {
    CosegNet<float> model(net, LossKind::Dice);
    NetParams local = params;
    const std::size_t begin = bi * kEvalBatch;
    const std::size_t end = std::min(items.size(), begin + kEvalBatch);
    const Batch b = make_batch(items, order, begin, end, nullptr);
    const PairOutput<float> pred = model.forward_pair(b.img_a, b.img_b, local, ad::Mode::Eval);
    for (std::size_t i = begin; i < end; ++i) {
      const int k = static_cast<int>(i - begin);
      out[i] = {tensor_item_to_map(pred.pred_a, k), tensor_item_to_map(pred.pred_b, k)};
    }
  });
  return out;
}

MetricsReport evaluate(const std::vector<DatasetItem>& items, const NetConfig& net, const NetParams& params) {
  const auto preds = predict_pairs(items, net, params);
  const double threshold = net.head == OutputHead::SndmTanh ? 0.0 : 0.5;
  return evaluate(
      items,
      [&](const DatasetItem& item) {
        const std::size_t i = static_cast<std::size_t>(&item - items.data());
        return preds[i];
      },
      threshold);
}

MetricsReport evaluate_checkpoint(const std::filesystem::path& checkpoint, const std::vector<DatasetItem>& items) {
  const auto [net, params] = load_checkpoint(checkpoint);
  return evaluate(items, net, params);
}

std::vector<DatasetItem> generate_items(std::uint64_t seed, const GenConfig& config, int n_pairs) {
  if (n_pairs < 1) throw Error(ErrorCode::DatasetEmpty, "pair count must be positive");
  std::vector<DatasetItem> items;
  items.reserve(static_cast<std::size_t>(n_pairs));
  for (int i = 0; i < n_pairs; ++i) {
    PairSample s = gen_pair(derive_seed(seed, static_cast<std::uint64_t>(i)), config);
    char id[32];
    std::snprintf(id, sizeof id, "pair_%04d", i);
    items.push_back({id, std::move(s.img_a), std::move(s.img_b), std::move(s.mask_a), std::move(s.mask_b)});
  }
  return items;
}

// --- ablation ---------------------------------------------------------------------

std::string_view variant_name(Variant v) {
  switch (v) {
    case Variant::Baseline:
      return "Baseline";
    case Variant::BaselinePlus:
      return "Baseline+";
    case Variant::Full:
      return "Full";
  }
  return "?";
}

NetConfig variant_net(Variant v, NetConfig base) {
  base.dense_connections = v != Variant::Baseline;
  base.head = v == Variant::Full ? OutputHead::SndmTanh : OutputHead::MaskSigmoid;
  return base;
}

LossKind variant_loss(Variant v) { return v == Variant::Full ? LossKind::Iou3dEdge : LossKind::Dice; }

void AblationConfig::validate() const {
  if (runs < 1) throw Error(ErrorCode::InvalidConfig, "runs must be positive");
  if (train_pairs < 2 || val_pairs < 1 || test_pairs < 1) throw Error(ErrorCode::InvalidConfig, "bad dataset sizes");
  if (threads < 0) throw Error(ErrorCode::InvalidConfig, "threads must be non-negative");
  gen.validate();
  net.validate();
  train.validate();
  if (gen.image_size != net.input_size) {
    throw Error(ErrorCode::InvalidConfig, "generator image_size differs from network input_size");
  }
}

AblationTable ablation(const AblationConfig& config, const std::function<void(const AblationRun&)>& on_job) {
  config.validate();
  constexpr Variant kVariants[] = {Variant::Baseline, Variant::BaselinePlus, Variant::Full};
  const auto runs = static_cast<std::size_t>(config.runs);

  AblationTable table;
  table.config = config;
  table.jobs = config.runs * 3;
  std::vector<AblationRun> results(runs * 3);
  std::mutex report_mutex;
  // Job j = run·3 + variant.
  parallel_for(results.size(), config.threads > 0 ? config.threads : worker_count(), [&](std::size_t j) {
    const int run = static_cast<int>(j / 3);
    const Variant variant = kVariants[j % 3];
    const std::uint64_t seed = derive_seed(config.base_seed, static_cast<std::uint64_t>(run));
    const auto train_set = generate_items(derive_seed(seed, 11), config.gen, config.train_pairs);
    const auto val_set = generate_items(derive_seed(seed, 12), config.gen, config.val_pairs);
    const auto test_set = generate_items(derive_seed(seed, 13), config.gen, config.test_pairs);

    const NetConfig net = variant_net(variant, config.net);
    TrainConfig tc = config.train;
    tc.loss = variant_loss(variant);
    tc.seed = seed;
    TrainResult r = train(train_set, val_set, net, tc);
    const MetricsReport report = evaluate(test_set, net, r.best_params);

    AblationRun out{variant, run, seed, report.mean, r.best_val_loss, r.best_epoch, std::move(r.history)};
    if (on_job) {
      std::lock_guard lock(report_mutex);
      on_job(out);
    }
    results[j] = std::move(out);
  });

  for (std::size_t v = 0; v < 3; ++v) {
    AblationRow row{kVariants[v], {}, {}};
    for (std::size_t r = 0; r < runs; ++r) row.runs.push_back(results[r * 3 + v]);
    for (const AblationRun& run : row.runs) {
      row.mean.precision += run.test_mean.precision;
      row.mean.pixel_accuracy += run.test_mean.pixel_accuracy;
      row.mean.jaccard += run.test_mean.jaccard;
    }
    row.mean.precision /= static_cast<double>(runs);
    row.mean.pixel_accuracy /= static_cast<double>(runs);
    row.mean.jaccard /= static_cast<double>(runs);
    table.rows.push_back(std::move(row));
  }
  return table;
}

std::string AblationTable::to_json() const {
  using nlohmann::ordered_json;
  ordered_json root;
  root["runs"] = config.runs;
  root["base_seed"] = config.base_seed;
  root["jobs"] = jobs;
  root["train_pairs"] = config.train_pairs;
  root["val_pairs"] = config.val_pairs;
  root["test_pairs"] = config.test_pairs;
  root["epochs"] = config.train.max_epochs;
  ordered_json out_rows = ordered_json::array();
  for (const AblationRow& row : rows) {
    const NetConfig net = variant_net(row.variant, config.net);
    ordered_json r;
    r["variant"] = std::string(variant_name(row.variant));
    r["arch"] = net.dense_connections ? "dense" : "plain";
    r["head"] = std::string(head_name(net.head));
    r["loss"] = std::string(loss_kind_name(variant_loss(row.variant)));
    r["precision"] = row.mean.precision;
    r["pixel_accuracy"] = row.mean.pixel_accuracy;
    r["jaccard"] = row.mean.jaccard;
    ordered_json per_run = ordered_json::array();
    for (const AblationRun& run : row.runs) {
      ordered_json j;
      j["run"] = run.run;
      j["seed"] = run.seed;
      j["precision"] = run.test_mean.precision;
      j["pixel_accuracy"] = run.test_mean.pixel_accuracy;
      j["jaccard"] = run.test_mean.jaccard;
      j["best_epoch"] = run.best_epoch;
      j["best_val_loss"] = run.best_val_loss;
      per_run.push_back(std::move(j));
    }
    r["per_run"] = std::move(per_run);
    out_rows.push_back(std::move(r));
  }
  root["rows"] = std::move(out_rows);
  return root.dump(2) + "\n";
}

}  // namespace coseg
