#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "coseg/cosegnet.hpp"
#include "coseg/synthetic_data.hpp"
#include "coseg/trainer.hpp"

namespace coseg {

/// Parses flat "key = value" lines; '#' starts a comment, blank lines are
/// skipped. Throws InvalidConfig on malformed lines or repeated keys.
std::vector<std::pair<std::string, std::string>> parse_key_values(std::string_view text);

/// Network, training (with loss) and generator settings in one place, loaded
/// from a file and then overridden by command-line flags.
///
/// Keys: input_size, levels, widths (comma list), arch (plain|dense),
/// head (sndm|mask), adapter_channels, bn_momentum, bn_epsilon;
/// preset (toy|paper), batch_size, lr, weight_decay, plateau_patience,
/// lr_factor, max_epochs, loss, seed, augment (true|false), lambda, epsilon;
/// image_size, distractors_min, distractors_max, scale_min, scale_max,
/// rotation_min, rotation_max, color_jitter, noise_sigma.
struct CliConfig {
  NetConfig net;
  TrainConfig train;
  GenConfig gen;

  /// Throws InvalidConfig for unknown keys or unparsable values. Validation
  /// of ranges is left to validate().
  void set(const std::string& key, const std::string& value);

  /// `preset` is applied before all other keys regardless of position.
  void apply(const std::vector<std::pair<std::string, std::string>>& entries);

  void validate() const;

  static CliConfig load_file(const std::filesystem::path& path);
  static std::vector<std::string> known_keys();
};

}  // namespace coseg
