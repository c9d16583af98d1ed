#include "coseg/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <optional>

#include "coseg/config.hpp"
#include "coseg/distance_transform.hpp"
#include "coseg/error.hpp"
#include "coseg/sndm_codec.hpp"

namespace coseg {

namespace {

namespace fs = std::filesystem;

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

fs::path with_suffix(const fs::path& input, const std::string& suffix) {
  fs::path p = input;
  p.replace_extension();
  return p.string() + suffix;
}

// Shared by the subcommands that accept a config file.
struct ConfigFlags {
  std::string file;
  std::vector<std::pair<std::string, std::string>> overrides;

  CliConfig resolve() const {
    CliConfig c = file.empty() ? CliConfig{} : CliConfig::load_file(file);
    for (const auto& [k, v] : overrides) c.set(k, v);
    return c;
  }
};

// Flag values are kept as strings and passed through CliConfig::set, so file
// keys and flags are parsed and validated by the same code.
struct Flag {
  std::string flag;
  std::string key;
  std::string help;
  std::string default_text;
  std::string value;
};

void add_flags(CLI::App* cmd, std::vector<Flag>& flags) {
  for (Flag& f : flags) cmd->add_option(f.flag, f.value, f.help + " (default: " + f.default_text + ")");
}

void collect(const CLI::App* cmd, const std::vector<Flag>& flags, ConfigFlags& cfg) {
  for (const Flag& f : flags) {
    if (cmd->count(f.flag) > 0) cfg.overrides.emplace_back(f.key, f.value);
  }
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Co-segmentation toolkit: exact distance transforms, signed normalized distance maps, "
               "a dense Siamese U-Net with 3D IOU losses, synthetic data and ablations.",
               "coseg"};
  app.require_subcommand(1);
  app.option_defaults()->always_capture_default();

  const TrainConfig train_defaults;
  const NetConfig net_defaults;
  const GenConfig gen_defaults;

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "Generate synthetic co-segmentation pairs with a manifest");
  int gen_pairs = 0;
  std::uint64_t gen_seed = 1;
  std::string gen_out;
  ConfigFlags gen_cfg;
  gen->add_option("--pairs", gen_pairs, "Number of pairs")->required()->check(CLI::PositiveNumber);
  gen->add_option("--seed", gen_seed, "Base seed");
  gen->add_option("--out", gen_out, "Output directory")->required();
  gen->add_option("--config", gen_cfg.file, "key = value config file");
  std::vector<Flag> gen_flags = {
      {"--size", "image_size", "Image side in pixels", std::to_string(gen_defaults.image_size), ""},
      {"--distractors-max", "distractors_max", "Most distractors per image",
       std::to_string(gen_defaults.distractors_max), ""},
  };
  add_flags(gen, gen_flags);

  // edt
  auto* edt_cmd = app.add_subcommand("edt", "Exact Euclidean distance of each pixel to the mask boundary");
  std::string edt_in, edt_out;
  bool edt_oracle = false;
  edt_cmd->add_option("mask", edt_in, "Binary PGM mask")->required();
  edt_cmd->add_option("--out", edt_out, "Output float map (default: <mask>.edt)");
  edt_cmd->add_flag("--oracle", edt_oracle, "Also run the brute-force reference and fail on any mismatch");

  // sndm-encode / sndm-decode
  auto* enc = app.add_subcommand("sndm-encode", "Encode a binary mask as a signed normalized distance map");
  std::string enc_in, enc_out;
  enc->add_option("mask", enc_in, "Binary PGM mask")->required();
  enc->add_option("--out", enc_out, "Output float map (default: <mask>.sndm)");

  auto* dec = app.add_subcommand("sndm-decode", "Decode a signed map to a binary mask by sign");
  std::string dec_in, dec_out;
  dec->add_option("map", dec_in, "Float map")->required();
  dec->add_option("--out", dec_out, "Output PGM mask (default: <map>_mask.pgm)");

  // train
  auto* tr = app.add_subcommand("train", "Train the network; keeps the best-validation checkpoint");
  std::string tr_data, tr_val, tr_out, tr_history;
  bool tr_quiet = false;
  ConfigFlags tr_cfg;
  tr->add_option("--data", tr_data, "Training set directory (with manifest.tsv)")->required();
  tr->add_option("--val", tr_val, "Validation set directory")->required();
  tr->add_option("--out", tr_out, "Checkpoint path")->required();
  tr->add_option("--history", tr_history, "History CSV (default: <out>.history.csv)");
  tr->add_option("--config", tr_cfg.file, "key = value config file");
  tr->add_flag("--quiet", tr_quiet, "Do not print per-epoch progress");
  std::vector<Flag> tr_flags = {
      {"--arch", "arch", "Decoder wiring: plain|dense", "dense", ""},
      {"--head", "head", "Output head: sndm|mask", std::string(head_name(net_defaults.head)), ""},
      {"--loss", "loss", "dice|iou3d|iou3d-pen|iou3d-edge", std::string(loss_kind_name(train_defaults.loss)), ""},
      {"--seed", "seed", "Seed for initialization and shuffling", std::to_string(train_defaults.seed), ""},
      {"--epochs", "max_epochs", "Training epochs", std::to_string(train_defaults.max_epochs), ""},
      {"--batch", "batch_size", "Pairs per batch", std::to_string(train_defaults.batch_size), ""},
      {"--lr", "lr", "Initial learning rate", fmt(train_defaults.lr), ""},
      {"--weight-decay", "weight_decay", "Decoupled weight decay", fmt(train_defaults.weight_decay), ""},
      {"--lambda", "lambda", "Sign-disagreement penalty", fmt(train_defaults.loss_config.lambda), ""},
      {"--preset", "preset", "toy|paper", "toy", ""},
      {"--augment", "augment", "Random flips and colour changes of training pairs: true|false", "true", ""},
  };
  add_flags(tr, tr_flags);

  // eval
  auto* ev = app.add_subcommand("eval", "Score a checkpoint on a dataset (precision, pixel accuracy, Jaccard)");
  std::string ev_ckpt, ev_data, ev_report;
  ev->add_option("--ckpt", ev_ckpt, "Checkpoint")->required();
  ev->add_option("--data", ev_data, "Dataset directory")->required();
  ev->add_option("--report", ev_report, "JSON report path (default: standard output)");

  // gradcheck
  auto* gc = app.add_subcommand("gradcheck", "Compare analytic and central-difference gradients");
  std::string gc_target = "loss";
  std::string gc_loss = "iou3d-edge";
  int gc_trials = 0;
  std::uint64_t gc_seed = 7;
  double gc_lambda = LossConfig{}.lambda;
  std::optional<double> gc_tol;
  ConfigFlags gc_cfg;
  gc->add_option("--target", gc_target, "loss|net")->check(CLI::IsMember({"loss", "net"}));
  gc->add_option("--loss", gc_loss, "dice|iou3d|iou3d-pen|iou3d-edge");
  gc->add_option("--trials", gc_trials, "Random points (loss) or sampled parameters (net); 0 picks 100 or 20");
  gc->add_option("--seed", gc_seed, "Seed");
  gc->add_option("--lambda", gc_lambda, "Sign-disagreement penalty");
  gc->add_option("--tolerance", gc_tol, "Exit 1 when the max relative error reaches this (default: 1e-4 loss, 1e-3 net)");
  gc->add_option("--config", gc_cfg.file, "Network config for --target net (default: a 16x16 three-level net)");

  // ablation
  auto* ab = app.add_subcommand("ablation", "Train Baseline, Baseline+ and Full for several seeds and compare");
  AblationConfig ab_defaults;
  int ab_runs = ab_defaults.runs;
  std::uint64_t ab_seed = ab_defaults.base_seed;
  std::string ab_out;
  int ab_train = ab_defaults.train_pairs, ab_val = ab_defaults.val_pairs, ab_test = ab_defaults.test_pairs;
  int ab_threads = 0;
  ConfigFlags ab_cfg;
  ab->add_option("--runs", ab_runs, "Seeds per variant")->check(CLI::PositiveNumber);
  ab->add_option("--seed", ab_seed, "Base seed");
  ab->add_option("--out", ab_out, "Output JSON table")->required();
  ab->add_option("--train-pairs", ab_train, "Training pairs per run");
  ab->add_option("--val-pairs", ab_val, "Validation pairs per run");
  ab->add_option("--test-pairs", ab_test, "Held-out pairs per run");
  ab->add_option("--threads", ab_threads, "Worker threads (0: SNDM_THREADS or all cores)");
  ab->add_option("--config", ab_cfg.file, "key = value config file");
  std::vector<Flag> ab_flags = {
      {"--epochs", "max_epochs", "Training epochs", std::to_string(train_defaults.max_epochs), ""},
  };
  add_flags(ab, ab_flags);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    out << (app.get_subcommands().empty() ? app.help() : app.get_subcommands().front()->help());
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    std::string msg = e.what();
    std::replace(msg.begin(), msg.end(), '\n', ' ');
    err << "error: Usage: " << msg << "\n";
    err << (app.get_subcommands().empty() ? app.help() : app.get_subcommands().front()->help());
    return 2;
  }

  try {
    if (gen->parsed()) {
      collect(gen, gen_flags, gen_cfg);
      const CliConfig c = gen_cfg.resolve();
      c.gen.validate();
      const auto entries = gen_dataset(gen_seed, c.gen, gen_pairs, gen_out);
      out << "wrote " << entries.size() << " pairs to " << gen_out << "\n";
    } else if (edt_cmd->parsed()) {
      const BinaryMask mask = read_mask(edt_in);
      const DistanceMap d = edt(mask);
      if (edt_oracle) {
        const auto sq = brute_force_squared_edt(mask.width(), mask.height(), boundary_set(mask));
        for (std::size_t i = 0; i < sq.size(); ++i) {
          if (sq[i] != d.squared()[i]) {
            const auto w = static_cast<std::size_t>(mask.width());
            throw Error(ErrorCode::InvalidValue, "edt disagrees with the brute-force oracle at (" +
                                                     std::to_string(i % w) + "," + std::to_string(i / w) +
                                                     "): " + std::to_string(d.squared()[i]) + " vs " +
                                                     std::to_string(sq[i]));
          }
        }
      }
      const FloatMap dist = d.to_float_map();
      const fs::path target = edt_out.empty() ? with_suffix(edt_in, ".edt") : fs::path(edt_out);
      write_float_map(dist, target);
      float max_d = 0.0f;
      for (float v : dist.values()) max_d = std::max(max_d, v);
      out << "wrote " << target.string() << " (" << mask.width() << "x" << mask.height()
          << ", max distance " << fmt(max_d) << ")\n";
    } else if (enc->parsed()) {
      const BinaryMask mask = read_mask(enc_in);
      const fs::path target = enc_out.empty() ? with_suffix(enc_in, ".sndm") : fs::path(enc_out);
      write_float_map(sndm_encode(mask), target);
      out << "wrote " << target.string() << "\n";
    } else if (dec->parsed()) {
      const FloatMap map = read_float_map(dec_in);
      const fs::path target = dec_out.empty() ? with_suffix(dec_in, "_mask.pgm") : fs::path(dec_out);
      write_mask(sndm_decode(map), target);
      out << "wrote " << target.string() << "\n";
    } else if (tr->parsed()) {
      collect(tr, tr_flags, tr_cfg);
      CliConfig c = tr_cfg.resolve();
      c.validate();
      const auto train_set = load_dataset(tr_data);
      const auto val_set = load_dataset(tr_val);
      c.net.input_size = train_set.front().img_a.width();
      c.net.validate();
      const TrainResult r = train(train_set, val_set, c.net, c.train, [&](const EpochRecord& e) {
        if (!tr_quiet) {
          out << "epoch " << e.epoch << " train_loss " << fmt(e.train_loss) << " val_loss " << fmt(e.val_loss)
              << " lr " << fmt(e.lr) << "\n";
          out.flush();
        }
      });
      save_checkpoint(tr_out, c.net, r.best_params);
      const fs::path history = tr_history.empty() ? fs::path(tr_out + ".history.csv") : fs::path(tr_history);
      write_file_atomic(history, r.history.to_csv());
      out << "best epoch " << r.best_epoch << " val_loss " << fmt(r.best_val_loss) << "; wrote " << tr_out
          << " and " << history.string() << "\n";
    } else if (ev->parsed()) {
      const auto items = load_dataset(ev_data);
      const MetricsReport report = evaluate_checkpoint(ev_ckpt, items);
      if (ev_report.empty()) {
        out << report.to_json();
      } else {
        write_file_atomic(ev_report, report.to_json());
        out << "precision " << fmt(report.mean.precision) << " pixel_accuracy " << fmt(report.mean.pixel_accuracy)
            << " jaccard " << fmt(report.mean.jaccard) << "; wrote " << ev_report << "\n";
      }
    } else if (gc->parsed()) {
      const LossKind kind = parse_loss_kind(gc_loss);
      LossConfig lc;
      lc.lambda = gc_lambda;
      lc.validate();
      double worst = 0.0;
      double tolerance = 0.0;
      int trials = gc_trials;
      if (gc_target == "loss") {
        if (trials <= 0) trials = 100;
        tolerance = gc_tol.value_or(1e-4);
        worst = grad_check_loss(kind, trials, gc_seed, lc);
      } else {
        if (trials <= 0) trials = 20;
        tolerance = gc_tol.value_or(1e-3);
        NetConfig net;
        if (!gc_cfg.file.empty()) {
          net = gc_cfg.resolve().net;
        } else {
          net.input_size = 16;
          net.widths = {4, 4, 6};
          net.adapter_channels = 4;
          net.head = kind == LossKind::Dice ? OutputHead::MaskSigmoid : OutputHead::SndmTanh;
        }
        worst = grad_check_net(net, kind, trials, gc_seed, lc);
      }
      out << "target " << gc_target << " loss " << loss_kind_name(kind) << " trials " << trials << " seed "
          << gc_seed << "\n";
      out << "max_rel_error " << fmt(worst) << "\n";
      if (!(worst < tolerance)) {
        throw Error(ErrorCode::InvalidValue, "max relative error " + fmt(worst) + " exceeds " + fmt(tolerance));
      }
    } else if (ab->parsed()) {
      collect(ab, ab_flags, ab_cfg);
      const CliConfig c = ab_cfg.resolve();
      AblationConfig ac;
      ac.runs = ab_runs;
      ac.base_seed = ab_seed;
      ac.train_pairs = ab_train;
      ac.val_pairs = ab_val;
      ac.test_pairs = ab_test;
      ac.threads = ab_threads;
      ac.gen = c.gen;
      ac.net = c.net;
      ac.train = c.train;
      ac.validate();
      const AblationTable table = ablation(ac, [&](const AblationRun& r) {
        out << "done " << variant_name(r.variant) << " run " << r.run << " jaccard " << fmt(r.test_mean.jaccard)
            << " precision " << fmt(r.test_mean.precision) << "\n";
        out.flush();
      });
      write_file_atomic(ab_out, table.to_json());
      for (const AblationRow& row : table.rows) {
        out << variant_name(row.variant) << " precision " << fmt(row.mean.precision) << " pixel_accuracy "
            << fmt(row.mean.pixel_accuracy) << " jaccard " << fmt(row.mean.jaccard) << "\n";
      }
    }
  } catch (const Error& e) {
    std::string msg = e.what();
    std::replace(msg.begin(), msg.end(), '\n', ' ');
    err << "error: " << error_code_name(e.code()) << ": " << msg << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << "error: IoFailure: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

}  // namespace coseg
