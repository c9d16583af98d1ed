#include "coseg/config.hpp"

#include <charconv>
#include <set>
#include <sstream>

#include "coseg/error.hpp"

namespace coseg {

namespace {

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return std::string(s.substr(first, last - first + 1));
}

template <class T>
T parse_number(const std::string& key, const std::string& value) {
  T out{};
  const char* begin = value.data();
  const char* end = begin + value.size();
  const auto [ptr, ec] = std::from_chars(begin, end, out);
  if (ec != std::errc() || ptr != end || value.empty()) {
    throw Error(ErrorCode::InvalidConfig, key + ": cannot parse '" + value + "'");
  }
  return out;
}

std::vector<int> parse_int_list(const std::string& key, const std::string& value) {
  std::vector<int> out;
  std::istringstream is(value);
  std::string item;
  while (std::getline(is, item, ',')) out.push_back(parse_number<int>(key, trim(item)));
  if (out.empty()) throw Error(ErrorCode::InvalidConfig, key + ": empty list");
  return out;
}

const std::vector<std::string>& keys() {
  static const std::vector<std::string> k = {
      "input_size", "levels", "widths", "arch", "head", "adapter_channels", "bn_momentum", "bn_epsilon",
      "preset", "batch_size", "lr", "weight_decay", "plateau_patience", "lr_factor", "max_epochs", "loss",
      "seed", "augment", "lambda", "epsilon", "image_size", "distractors_min", "distractors_max", "scale_min",
      "scale_max", "rotation_min", "rotation_max", "color_jitter", "noise_sigma"};
  return k;
}

}  // namespace

std::vector<std::pair<std::string, std::string>> parse_key_values(std::string_view text) {
  std::vector<std::pair<std::string, std::string>> out;
  std::set<std::string> seen;
  std::istringstream is{std::string(text)};
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    const std::string body = trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) {
      throw Error(ErrorCode::InvalidConfig, "line " + std::to_string(line_no) + ": expected 'key = value'");
    }
    std::string key = trim(std::string_view(body).substr(0, eq));
    std::string value = trim(std::string_view(body).substr(eq + 1));
    if (key.empty()) throw Error(ErrorCode::InvalidConfig, "line " + std::to_string(line_no) + ": empty key");
    if (!seen.insert(key).second) {
      throw Error(ErrorCode::InvalidConfig, "line " + std::to_string(line_no) + ": duplicate key '" + key + "'");
    }
    out.emplace_back(std::move(key), std::move(value));
  }
  return out;
}

void CliConfig::set(const std::string& key, const std::string& value) {
  if (key == "input_size") net.input_size = parse_number<int>(key, value);
  else if (key == "levels") net.levels = parse_number<int>(key, value);
  else if (key == "widths") net.widths = parse_int_list(key, value);
  else if (key == "arch") {
    if (value == "dense") net.dense_connections = true;
    else if (value == "plain") net.dense_connections = false;
    else throw Error(ErrorCode::InvalidConfig, "arch: expected plain|dense, got '" + value + "'");
  } else if (key == "head") net.head = parse_head(value);
  else if (key == "adapter_channels") net.adapter_channels = parse_number<int>(key, value);
  else if (key == "bn_momentum") net.batch_norm.momentum = parse_number<double>(key, value);
  else if (key == "bn_epsilon") net.batch_norm.epsilon = parse_number<double>(key, value);
  else if (key == "preset") {
    if (value == "paper") {
      const TrainConfig p = TrainConfig::paper_preset();
      train.lr = p.lr;
      train.max_epochs = p.max_epochs;
    } else if (value == "toy") {
      const TrainConfig d;
      train.lr = d.lr;
      train.max_epochs = d.max_epochs;
    } else {
      throw Error(ErrorCode::InvalidConfig, "preset: expected toy|paper, got '" + value + "'");
    }
  } else if (key == "batch_size") train.batch_size = parse_number<int>(key, value);
  else if (key == "lr") train.lr = parse_number<double>(key, value);
  else if (key == "weight_decay") train.weight_decay = parse_number<double>(key, value);
  else if (key == "plateau_patience") train.plateau_patience = parse_number<int>(key, value);
  else if (key == "lr_factor") train.lr_factor = parse_number<double>(key, value);
  else if (key == "max_epochs") train.max_epochs = parse_number<int>(key, value);
  else if (key == "loss") train.loss = parse_loss_kind(value);
  else if (key == "seed") train.seed = parse_number<std::uint64_t>(key, value);
  else if (key == "augment") {
    if (value == "true" || value == "1") train.augment = true;
    else if (value == "false" || value == "0") train.augment = false;
    else throw Error(ErrorCode::InvalidConfig, "augment: expected true|false, got '" + value + "'");
  }
  else if (key == "lambda") train.loss_config.lambda = parse_number<double>(key, value);
  else if (key == "epsilon") train.loss_config.epsilon = parse_number<double>(key, value);
  else if (key == "image_size") gen.image_size = parse_number<int>(key, value);
  else if (key == "distractors_min") gen.distractors_min = parse_number<int>(key, value);
  else if (key == "distractors_max") gen.distractors_max = parse_number<int>(key, value);
  else if (key == "scale_min") gen.scale_min = parse_number<double>(key, value);
  else if (key == "scale_max") gen.scale_max = parse_number<double>(key, value);
  else if (key == "rotation_min") gen.rotation_min = parse_number<double>(key, value);
  else if (key == "rotation_max") gen.rotation_max = parse_number<double>(key, value);
  else if (key == "color_jitter") gen.color_jitter = parse_number<double>(key, value);
  else if (key == "noise_sigma") gen.noise_sigma = parse_number<double>(key, value);
  else throw Error(ErrorCode::InvalidConfig, "unknown key '" + key + "'");
}

void CliConfig::apply(const std::vector<std::pair<std::string, std::string>>& entries) {
  for (const auto& [k, v] : entries) {
    if (k == "preset") set(k, v);
  }
  for (const auto& [k, v] : entries) {
    if (k != "preset") set(k, v);
  }
}

void CliConfig::validate() const {
  net.validate();
  train.validate();
  gen.validate();
}

CliConfig CliConfig::load_file(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  CliConfig c;
  c.apply(parse_key_values(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size())));
  return c;
}

std::vector<std::string> CliConfig::known_keys() { return keys(); }

}  // namespace coseg
