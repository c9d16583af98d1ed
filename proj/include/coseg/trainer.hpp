#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "coseg/cosegnet.hpp"
#include "coseg/losses.hpp"
#include "coseg/metrics.hpp"
#include "coseg/synthetic_data.hpp"

namespace coseg {

struct TrainConfig {
  int batch_size = 4;
  double lr = 1e-3;
  double weight_decay = 5e-5;
  int plateau_patience = 10;
  double lr_factor = 0.5;
  int max_epochs = 40;
  LossKind loss = LossKind::Iou3dEdge;
  LossConfig loss_config;
  std::uint64_t seed = 1;
  /// Random flips/transposes of each training image (A and B drawn separately
  /// with equal reflection parity) and one colour rotation/inversion shared by
  /// the pair, drawn from the epoch's shuffle stream.
  bool augment = true;

  /// Throws InvalidConfig.
  void validate() const;

  /// lr 1e-5 and 120 epochs; everything else as the defaults.
  static TrainConfig paper_preset();
};

struct AdamSettings {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  long step = 0;
  std::map<std::string, std::vector<double>> m;
  std::map<std::string, std::vector<double>> v;
};

/// One Adam update with bias correction and decoupled weight decay:
/// θ ← θ - lr·m̂/(√v̂ + ε) - lr·wd·θ. Parameters without a gradient entry and
/// non-trainable buffers are left alone. Throws ShapeMismatch.
void adam_step(NetParams& params, const std::map<std::string, ad::Tensor<float>>& grads, AdamState& state,
               double lr, double weight_decay, const AdamSettings& settings = {});

/// Multiplies the rate by `factor` once the monitored loss has gone
/// `patience` consecutive epochs without dropping at least `min_delta` below
/// the best value so far; the count restarts after every reduction.
class PlateauSchedule {
 public:
  PlateauSchedule(double lr, int patience, double factor, double min_delta = 1e-6);

  /// Records one epoch's loss; returns the rate for the next epoch.
  double observe(double loss);

  double lr() const noexcept { return lr_; }
  double best() const noexcept { return best_; }
  int epochs_without_improvement() const noexcept { return stale_; }

 private:
  double lr_;
  int patience_;
  double factor_;
  double min_delta_;
  double best_ = std::numeric_limits<double>::infinity();
  int stale_ = 0;
};

struct EpochRecord {
  int epoch = 0;  // 1-based
  double train_loss = 0.0;
  double val_loss = 0.0;
  double lr = 0.0;  // rate used during this epoch
  double wall_seconds = 0.0;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;

  /// "epoch,train_loss,val_loss,lr" with 17 significant digits. Wall time is
  /// left out so histories of identical runs compare byte-for-byte.
  std::string to_csv() const;
};

struct TrainResult {
  NetParams best_params;
  TrainHistory history;
  int best_epoch = 0;
  double best_val_loss = std::numeric_limits<double>::infinity();
};

/// Network target for a mask: its SNDM for the tanh head, 0/1 labels for the
/// sigmoid head.
FloatMap target_for(const BinaryMask& mask, OutputHead head);

/// Trains from init_params(net, derive_seed(seed, 1)); the shuffle order of
/// epoch e comes from derive_seed(seed, 2 + e). A trailing batch of one pair
/// is dropped (batch norm needs two). Throws DatasetEmpty, BatchTooSmall.
TrainResult train(const std::vector<DatasetItem>& train_set, const std::vector<DatasetItem>& val_set,
                  const NetConfig& net, const TrainConfig& config,
                  const std::function<void(const EpochRecord&)>& on_epoch = {});

/// Loss over a dataset in eval mode, averaged over pairs.
double dataset_loss(const std::vector<DatasetItem>& items, const NetConfig& net, NetParams& params,
                    LossKind loss, const LossConfig& loss_config = {});

/// Raw network outputs for one pair.
using Predictor = std::function<std::pair<FloatMap, FloatMap>(const DatasetItem&)>;

/// Thresholds predictions (> threshold is foreground) and scores each image
/// against its mask. Items are "<id>/a" and "<id>/b".
MetricsReport evaluate(const std::vector<DatasetItem>& items, const Predictor& predict, double threshold);

/// Runs the network in eval mode: threshold 0 for the tanh head, 0.5 for the
/// sigmoid head.
MetricsReport evaluate(const std::vector<DatasetItem>& items, const NetConfig& net, const NetParams& params);
MetricsReport evaluate_checkpoint(const std::filesystem::path& checkpoint, const std::vector<DatasetItem>& items);

/// Network outputs for a list of pairs, computed in eval mode in batches.
std::vector<std::pair<FloatMap, FloatMap>> predict_pairs(const std::vector<DatasetItem>& items, const NetConfig& net,
                                                         const NetParams& params);

std::vector<DatasetItem> generate_items(std::uint64_t seed, const GenConfig& config, int n_pairs);

enum class Variant { Baseline, BaselinePlus, Full };

std::string_view variant_name(Variant v);  // "Baseline", "Baseline+", "Full"
/// Plain skips + sigmoid + Dice, dense + sigmoid + Dice, dense + tanh + 3D IOU
/// with penalty and edge weights.
NetConfig variant_net(Variant v, NetConfig base = {});
LossKind variant_loss(Variant v);

struct AblationConfig {
  int runs = 5;
  std::uint64_t base_seed = 1;
  int train_pairs = 200;
  int val_pairs = 50;
  int test_pairs = 100;
  GenConfig gen;
  NetConfig net;
  TrainConfig train;
  int threads = 0;  // 0: worker_count()

  void validate() const;
};

struct AblationRun {
  Variant variant;
  int run = 0;
  std::uint64_t seed = 0;
  MetricScores test_mean;
  double best_val_loss = 0.0;
  int best_epoch = 0;
  TrainHistory history;
};

struct AblationRow {
  Variant variant;
  MetricScores mean;
  std::vector<AblationRun> runs;
};

struct AblationTable {
  AblationConfig config;
  std::vector<AblationRow> rows;
  int jobs = 0;

  std::string to_json() const;
};

/// Run r uses seed derive_seed(base_seed, r) for its data and for all three
/// variants' training, so variants are compared on identical pairs and
/// initial encoder weights. Jobs run on up to `threads` threads.
AblationTable ablation(const AblationConfig& config,
                       const std::function<void(const AblationRun&)>& on_job = {});

}  // namespace coseg
