#include "coseg/cosegnet.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <limits>
#include <sstream>

#include "coseg/error.hpp"
#include "coseg/rng.hpp"
#include "coseg/sndm_codec.hpp"

namespace coseg {

using ad::shape_str;

namespace {

std::string enc_name(int level, const char* part, int j) {
  return "enc" + std::to_string(level) + "." + part + std::to_string(j);
}

std::string adapter_name(int from, int to) {
  return "adapt" + std::to_string(from) + "to" + std::to_string(to);
}

std::string dec_name(int module) { return "dec" + std::to_string(module); }

std::uint64_t fnv1a(std::string_view text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

bool is_buffer_name(std::string_view name) {
  return name.ends_with(".running_mean") || name.ends_with(".running_var");
}

void add_bn_specs(std::vector<ParamSpec>& specs, const std::string& prefix, int channels) {
  using R = ParamSpec::Role;
  specs.push_back({prefix + ".gamma", {channels}, R::BnScale, 0});
  specs.push_back({prefix + ".beta", {channels}, R::BnShift, 0});
  specs.push_back({prefix + ".running_mean", {channels}, R::RunningMean, 0});
  specs.push_back({prefix + ".running_var", {channels}, R::RunningVar, 0});
}

// Decoder module k receives adapters from these earlier modules.
std::vector<int> adapter_sources(const NetConfig& c, int module) {
  std::vector<int> from;
  if (c.dense_connections) {
    for (int m = 1; m < module; ++m) from.push_back(m);
  } else if (module > 1) {
    from.push_back(module - 1);
  }
  return from;
}

int decoder_input_channels(const NetConfig& c, int module) {
  const int L = c.levels;
  int ch = c.widths[static_cast<std::size_t>(L - module)];
  if (module == 1) ch += c.correlation_channels();
  ch += c.adapter_channels * static_cast<int>(adapter_sources(c, module).size());
  if (module == L) ch += 3;
  return ch;
}

}  // namespace

std::string_view head_name(OutputHead head) { return head == OutputHead::SndmTanh ? "sndm" : "mask"; }

OutputHead parse_head(std::string_view name) {
  if (name == "sndm") return OutputHead::SndmTanh;
  if (name == "mask") return OutputHead::MaskSigmoid;
  throw Error(ErrorCode::InvalidConfig, "unknown head '" + std::string(name) + "' (expected sndm|mask)");
}

void NetConfig::validate() const {
  auto fail = [](const std::string& msg) { throw Error(ErrorCode::InvalidConfig, msg); };
  if (levels < 1 || levels > 8) fail("levels must be in [1, 8]");
  if (static_cast<int>(widths.size()) != levels) {
    fail("widths has " + std::to_string(widths.size()) + " entries for " + std::to_string(levels) + " levels");
  }
  for (int w : widths) {
    if (w <= 0) fail("widths must be positive");
  }
  const int step = 1 << levels;
  if (input_size <= 0 || input_size % step != 0) {
    fail("input_size " + std::to_string(input_size) + " is not divisible by 2^levels = " + std::to_string(step));
  }
  if (adapter_channels <= 0) fail("adapter_channels must be positive");
  if (!(batch_norm.momentum >= 0.0 && batch_norm.momentum < 1.0)) fail("batch-norm momentum must be in [0, 1)");
  if (!(batch_norm.epsilon > 0.0)) fail("batch-norm epsilon must be positive");
}

int NetConfig::correlation_channels() const {
  const int s = level_size(levels - 1);
  return s * s;
}

int NetConfig::decoder_width(int module) const {
  if (module == levels) return 1;
  return widths[static_cast<std::size_t>(levels - module)];
}

std::string NetConfig::to_text() const {
  std::ostringstream os;
  os.precision(17);
  os << "input_size=" << input_size << "\n";
  os << "levels=" << levels << "\n";
  os << "widths=";
  for (std::size_t i = 0; i < widths.size(); ++i) os << (i ? "," : "") << widths[i];
  os << "\n";
  os << "dense_connections=" << (dense_connections ? 1 : 0) << "\n";
  os << "head=" << head_name(head) << "\n";
  os << "adapter_channels=" << adapter_channels << "\n";
  os << "bn_momentum=" << batch_norm.momentum << "\n";
  os << "bn_epsilon=" << batch_norm.epsilon << "\n";
  return os.str();
}

NetConfig NetConfig::from_text(const std::string& text) {
  NetConfig c;
  std::istringstream is(text);
  std::string line;
  auto as_int = [](const std::string& key, const std::string& v) {
    std::size_t used = 0;
    int out = 0;
    try {
      out = std::stoi(v, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != v.size() || v.empty()) throw Error(ErrorCode::InvalidConfig, key + ": not an integer: " + v);
    return out;
  };
  auto as_double = [](const std::string& key, const std::string& v) {
    std::size_t used = 0;
    double out = 0;
    try {
      out = std::stod(v, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != v.size() || v.empty()) throw Error(ErrorCode::InvalidConfig, key + ": not a number: " + v);
    return out;
  };
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw Error(ErrorCode::InvalidConfig, "expected key=value: " + line);
    const std::string key = line.substr(0, eq);
    const std::string value = line.substr(eq + 1);
    if (key == "input_size") {
      c.input_size = as_int(key, value);
    } else if (key == "levels") {
      c.levels = as_int(key, value);
    } else if (key == "widths") {
      c.widths.clear();
      std::istringstream ws(value);
      std::string item;
      while (std::getline(ws, item, ',')) c.widths.push_back(as_int(key, item));
    } else if (key == "dense_connections") {
      c.dense_connections = as_int(key, value) != 0;
    } else if (key == "head") {
      c.head = parse_head(value);
    } else if (key == "adapter_channels") {
      c.adapter_channels = as_int(key, value);
    } else if (key == "bn_momentum") {
      c.batch_norm.momentum = as_double(key, value);
    } else if (key == "bn_epsilon") {
      c.batch_norm.epsilon = as_double(key, value);
    } else {
      throw Error(ErrorCode::InvalidConfig, "unknown network key '" + key + "'");
    }
  }
  c.validate();
  return c;
}

std::vector<ParamSpec> param_specs(const NetConfig& c) {
  c.validate();
  using R = ParamSpec::Role;
  std::vector<ParamSpec> specs;
  const int L = c.levels;

  int in = 3;
  for (int l = 0; l < L; ++l) {
    const int w = c.widths[static_cast<std::size_t>(l)];
    for (int j = 0; j < 2; ++j) {
      const int ci = j == 0 ? in : w;
      specs.push_back({enc_name(l, "conv", j) + ".w", {w, ci, 3, 3}, R::ConvWeight, ci * 9});
      add_bn_specs(specs, enc_name(l, "bn", j), w);
    }
    in = w;
  }

  for (int k = 1; k <= L; ++k) {
    for (int m : adapter_sources(c, k)) {
      const std::string prefix = adapter_name(m, k);
      int ci = c.decoder_width(m);
      for (int d = 0; d < k - m; ++d) {
        specs.push_back({prefix + ".deconv" + std::to_string(d) + ".w", {ci, c.adapter_channels, 2, 2},
                         R::DeconvWeight, ci});
        ci = c.adapter_channels;
      }
      add_bn_specs(specs, prefix + ".bn", c.adapter_channels);
    }
    const int ci = decoder_input_channels(c, k);
    if (k < L) {
      const int w = c.decoder_width(k);
      specs.push_back({dec_name(k) + ".conv0.w", {w, ci, 3, 3}, R::ConvWeight, ci * 9});
      add_bn_specs(specs, dec_name(k) + ".bn0", w);
      specs.push_back({dec_name(k) + ".conv1.w", {w, w, 3, 3}, R::ConvWeight, w * 9});
      add_bn_specs(specs, dec_name(k) + ".bn1", w);
    } else {
      specs.push_back({dec_name(k) + ".out.w", {1, ci, 3, 3}, R::ConvWeight, ci * 9});
      specs.push_back({dec_name(k) + ".out.b", {1}, R::Bias, 0});
    }
  }
  return specs;
}

NetParams init_params(const NetConfig& config, std::uint64_t seed) {
  NetParams params;
  const std::string out_weight = dec_name(config.levels) + ".out.w";
  for (const ParamSpec& spec : param_specs(config)) {
    ad::Tensor<float> t(spec.shape);
    using R = ParamSpec::Role;
    switch (spec.role) {
      case R::ConvWeight:
      case R::DeconvWeight: {
        const double gain = spec.name == out_weight ? 1.0 : 2.0;
        const double std_dev = std::sqrt(gain / spec.fan_in);
        SplitMix64 rng(derive_seed(seed, fnv1a(spec.name)));
        for (std::size_t i = 0; i < t.numel(); ++i) t[i] = static_cast<float>(std_dev * rng.normal());
        break;
      }
      case R::BnScale:
      case R::RunningVar:
        t.fill(1.0f);
        break;
      case R::Bias:
      case R::BnShift:
      case R::RunningMean:
        break;
    }
    params[spec.name] = {std::move(t), !is_buffer_name(spec.name)};
  }
  return params;
}

std::size_t trainable_parameter_count(const NetParams& params) {
  std::size_t n = 0;
  for (const auto& [name, entry] : params) {
    if (entry.trainable) n += entry.value.numel();
  }
  return n;
}

// --- graph ----------------------------------------------------------------------

template <class T>
std::pair<ad::NodeId, ad::NodeId> correlation_nodes(ad::Tape<T>& t, ad::NodeId feat_a, ad::NodeId feat_b,
                                                    int channels, int height, int width) {
  const int n = height * width;
  const ad::NodeId fa = t.reshape_items(t.l2_normalize_channels(feat_a), {channels, n});
  const ad::NodeId fb = t.reshape_items(t.l2_normalize_channels(feat_b), {channels, n});
  // Channel j of corrA at position i is <fa_i, fb_j>, i.e. row j of fbᵀ·fa.
  const ad::NodeId corr_a = t.reshape_items(t.matmul(fb, fa, true), {n, height, width});
  const ad::NodeId corr_b = t.reshape_items(t.matmul(fa, fb, true), {n, height, width});
  return {corr_a, corr_b};
}

template std::pair<ad::NodeId, ad::NodeId> correlation_nodes(ad::Tape<float>&, ad::NodeId, ad::NodeId, int, int,
                                                             int);
template std::pair<ad::NodeId, ad::NodeId> correlation_nodes(ad::Tape<double>&, ad::NodeId, ad::NodeId, int, int,
                                                             int);

std::pair<ad::Tensor<double>, ad::Tensor<double>> correlation(const ad::Tensor<double>& feat_a,
                                                              const ad::Tensor<double>& feat_b) {
  if (feat_a.rank() != 3 || feat_a.shape() != feat_b.shape()) {
    throw Error(ErrorCode::ShapeMismatch,
                "correlation needs matching [C,H,W] maps, got " + shape_str(feat_a.shape()) + " and " +
                    shape_str(feat_b.shape()));
  }
  const int c = feat_a.dim(0), h = feat_a.dim(1), w = feat_a.dim(2);
  ad::Tape<double> t;
  const ad::NodeId a = t.input("a", {1, c, h, w});
  const ad::NodeId b = t.input("b", {1, c, h, w});
  const auto [ca, cb] = correlation_nodes(t, a, b, c, h, w);
  ad::Tensor<double> a4 = feat_a, b4 = feat_b;
  a4.reshape({1, c, h, w});
  b4.reshape({1, c, h, w});
  ad::ParamStore<double> none;
  t.forward({{"a", a4}, {"b", b4}}, none, ad::Mode::Eval);
  ad::Tensor<double> out_a = t.value(ca), out_b = t.value(cb);
  out_a.reshape({h * w, h, w});
  out_b.reshape({h * w, h, w});
  return {std::move(out_a), std::move(out_b)};
}

template <class T>
CosegNet<T>::CosegNet(const NetConfig& config, LossKind loss, LossConfig loss_config) : config_(config) {
  config_.validate();
  const NetConfig& c = config_;
  const int L = c.levels;
  const int S = c.input_size;
  auto& t = tape_;

  auto conv_bn_relu = [&](ad::NodeId x, const std::string& conv, const std::string& bn) {
    ad::NodeId y = t.conv2d(x, t.param(conv + ".w"));
    y = t.batch_norm(y, t.param(bn + ".gamma"), t.param(bn + ".beta"), bn + ".running_mean",
                     bn + ".running_var", c.batch_norm);
    return t.relu(y);
  };

  const ad::NodeId img_a = t.input("img_a", {-1, 3, S, S});
  const ad::NodeId img_b = t.input("img_b", {-1, 3, S, S});
  const ad::NodeId images = t.concat_batch({img_a, img_b});

  // Shared encoder over the stacked batch.
  std::vector<ad::NodeId> skips;
  ad::NodeId x = images;
  for (int l = 0; l < L; ++l) {
    if (l > 0) x = t.max_pool2x2(x);
    for (int j = 0; j < 2; ++j) x = conv_bn_relu(x, enc_name(l, "conv", j), enc_name(l, "bn", j));
    skips.push_back(x);
  }

  const int s = c.level_size(L - 1);
  const auto [corr_a, corr_b] = correlation_nodes(t, t.slice_batch(skips.back(), 0, 2),
                                                  t.slice_batch(skips.back(), 1, 2), c.widths.back(), s, s);
  const ad::NodeId corr = t.concat_batch({corr_a, corr_b});

  std::vector<ad::NodeId> modules(static_cast<std::size_t>(L) + 1, -1);
  ad::NodeId out = -1;
  for (int k = 1; k <= L; ++k) {
    std::vector<ad::NodeId> parts{skips[static_cast<std::size_t>(L - k)]};
    if (k == 1) parts.push_back(corr);
    for (int m : adapter_sources(c, k)) {
      const std::string prefix = adapter_name(m, k);
      ad::NodeId a = modules[static_cast<std::size_t>(m)];
      for (int d = 0; d < k - m; ++d) a = t.deconv2x2(a, t.param(prefix + ".deconv" + std::to_string(d) + ".w"));
      const std::string bn = prefix + ".bn";
      a = t.batch_norm(a, t.param(bn + ".gamma"), t.param(bn + ".beta"), bn + ".running_mean",
                       bn + ".running_var", c.batch_norm);
      parts.push_back(t.relu(a));
    }
    if (k == L) parts.push_back(images);
    const ad::NodeId in = parts.size() == 1 ? parts[0] : t.concat_channels(parts);
    decoder_inputs_.push_back(in);
    if (k < L) {
      const ad::NodeId h = conv_bn_relu(in, dec_name(k) + ".conv0", dec_name(k) + ".bn0");
      modules[static_cast<std::size_t>(k)] = conv_bn_relu(h, dec_name(k) + ".conv1", dec_name(k) + ".bn1");
    } else {
      const ad::NodeId logits = t.conv2d(in, t.param(dec_name(k) + ".out.w"), t.param(dec_name(k) + ".out.b"));
      out = c.head == OutputHead::SndmTanh ? t.tanh(logits) : t.sigmoid(logits);
    }
  }

  pred_a_ = t.slice_batch(out, 0, 2);
  pred_b_ = t.slice_batch(out, 1, 2);

  // Targets come last so inference can stop at pred_b_ without them.
  const ad::NodeId target_a = t.input("target_a", {-1, 1, S, S});
  const ad::NodeId target_b = t.input("target_b", {-1, 1, S, S});
  loss_ = t.loss(out, t.concat_batch({target_a, target_b}), loss, loss_config);
}

template <class T>
std::map<std::string, ad::Tensor<T>> CosegNet<T>::feeds(const ad::Tensor<T>& img_a, const ad::Tensor<T>& img_b,
                                                        ad::Mode mode) const {
  if (img_a.shape() != img_b.shape()) {
    throw Error(ErrorCode::ShapeMismatch,
                "image batches differ: " + shape_str(img_a.shape()) + " vs " + shape_str(img_b.shape()));
  }
  if (img_a.rank() != 4) throw Error(ErrorCode::ShapeMismatch, "images must be [N,3,S,S], got " + shape_str(img_a.shape()));
  if (mode == ad::Mode::Train && img_a.dim(0) < 2) {
    throw Error(ErrorCode::BatchTooSmall, "train mode needs at least 2 pairs per batch, got " +
                                              std::to_string(img_a.dim(0)));
  }
  return {{"img_a", img_a}, {"img_b", img_b}};
}

template <class T>
PairOutput<T> CosegNet<T>::forward_pair(const ad::Tensor<T>& img_a, const ad::Tensor<T>& img_b,
                                        ad::ParamStore<T>& params, ad::Mode mode) {
  tape_.forward(feeds(img_a, img_b, mode), params, mode, pred_b_);
  return {tape_.value(pred_a_), tape_.value(pred_b_)};
}

template <class T>
double CosegNet<T>::forward_loss(const ad::Tensor<T>& img_a, const ad::Tensor<T>& img_b,
                                 const ad::Tensor<T>& target_a, const ad::Tensor<T>& target_b,
                                 ad::ParamStore<T>& params, ad::Mode mode) {
  auto in = feeds(img_a, img_b, mode);
  in["target_a"] = target_a;
  in["target_b"] = target_b;
  tape_.forward(in, params, mode);
  return static_cast<double>(tape_.value(loss_)[0]);
}

template <class T>
std::map<std::string, ad::Tensor<T>> CosegNet<T>::loss_and_grads(
    const ad::Tensor<T>& img_a, const ad::Tensor<T>& img_b, const ad::Tensor<T>& target_a,
    const ad::Tensor<T>& target_b, ad::ParamStore<T>& params, ad::Mode mode, double* loss_value) {
  const double value = forward_loss(img_a, img_b, target_a, target_b, params, mode);
  if (loss_value) *loss_value = value;
  tape_.backward(loss_);
  return tape_.param_grads();
}

template <class T>
const ad::Shape& CosegNet<T>::decoder_input_shape(int module) const {
  if (module < 1 || module > config_.levels) {
    throw Error(ErrorCode::InvalidValue, "decoder module " + std::to_string(module) + " out of range");
  }
  return tape_.value(decoder_inputs_[static_cast<std::size_t>(module - 1)]).shape();
}

template class CosegNet<float>;
template class CosegNet<double>;

// --- gradient check ---------------------------------------------------------------

namespace {

// Random rectangle mask with both classes present.
BinaryMask random_rect_mask(int size, SplitMix64& rng) {
  BinaryMask m(size, size);
  const int x0 = static_cast<int>(rng.uniform_int(0, size / 2 - 1));
  const int y0 = static_cast<int>(rng.uniform_int(0, size / 2 - 1));
  const int x1 = static_cast<int>(rng.uniform_int(x0 + 1, size - 1));
  const int y1 = static_cast<int>(rng.uniform_int(y0 + 1, size - 1));
  for (int y = y0; y < y1; ++y)
    for (int x = x0; x < x1; ++x) m.set(x, y, true);
  return m;
}

void fill_target(ad::Tensor<double>& t, int index, const BinaryMask& mask, bool sndm) {
  const int size = mask.width();
  const std::size_t base = static_cast<std::size_t>(index) * size * size;
  if (sndm) {
    const Sndm map = sndm_encode(mask);
    for (std::size_t i = 0; i < map.size(); ++i) t[base + i] = map.values()[i];
  } else {
    for (std::size_t i = 0; i < mask.size(); ++i) t[base + i] = mask.labels()[i];
  }
}

}  // namespace

double grad_check_net(const NetConfig& config, LossKind loss, int samples, std::uint64_t seed,
                      LossConfig loss_config) {
  constexpr int kBatch = 2;
  constexpr double kSteps[2] = {1e-6, 1e-7};
  const int S = config.input_size;
  ad::ParamStore<double> params = ad::cast_params<double>(init_params(config, seed));
  SplitMix64 rng(derive_seed(seed, 0x6772616463686bULL));

  ad::Tensor<double> img_a({kBatch, 3, S, S}), img_b({kBatch, 3, S, S});
  for (std::size_t i = 0; i < img_a.numel(); ++i) img_a[i] = rng.uniform();
  for (std::size_t i = 0; i < img_b.numel(); ++i) img_b[i] = rng.uniform();
  ad::Tensor<double> tgt_a({kBatch, 1, S, S}), tgt_b({kBatch, 1, S, S});
  const bool sndm = config.head == OutputHead::SndmTanh;
  for (int n = 0; n < kBatch; ++n) {
    fill_target(tgt_a, n, random_rect_mask(S, rng), sndm);
    fill_target(tgt_b, n, random_rect_mask(S, rng), sndm);
  }

  CosegNet<double> net(config, loss, loss_config);
  ad::ParamStore<double> scratch = params;
  const auto grads = net.loss_and_grads(img_a, img_b, tgt_a, tgt_b, scratch, ad::Mode::Train);

  std::vector<std::string> names;
  for (const auto& [name, entry] : params) {
    if (entry.trainable) names.push_back(name);
  }
  double worst = 0.0;
  for (int s = 0; s < samples; ++s) {
    const std::string& name = names[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(names.size()) - 1))];
    const std::size_t count = params.at(name).value.numel();
    const auto idx = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(count) - 1));
    const double analytic = grads.at(name)[idx];

    auto loss_at = [&](double delta) {
      ad::ParamStore<double> p = params;
      p.at(name).value[idx] += delta;
      return net.forward_loss(img_a, img_b, tgt_a, tgt_b, p, ad::Mode::Train);
    };
    double err = std::numeric_limits<double>::infinity();
    for (double h : kSteps) {
      const double numeric = (loss_at(h) - loss_at(-h)) / (2.0 * h);
      err = std::min(err, std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-6}));
    }
    worst = std::max(worst, err);
  }
  return worst;
}

// --- checkpoints -------------------------------------------------------------------

namespace {

constexpr std::uint32_t kCheckpointVersion = 1;

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::string text(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw Error(ErrorCode::CheckpointCorrupt, "checkpoint truncated");
  }
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const NetConfig& config, const NetParams& params) {
  std::vector<std::uint8_t> out{'C', 'K', 'P', 'T'};
  put_u32(out, kCheckpointVersion);
  const std::string header = config.to_text();
  put_u32(out, static_cast<std::uint32_t>(header.size()));
  out.insert(out.end(), header.begin(), header.end());
  put_u32(out, static_cast<std::uint32_t>(params.size()));
  for (const auto& [name, entry] : params) {
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out.insert(out.end(), name.begin(), name.end());
    put_u32(out, static_cast<std::uint32_t>(entry.value.rank()));
    for (int d : entry.value.shape()) put_u32(out, static_cast<std::uint32_t>(d));
    for (std::size_t i = 0; i < entry.value.numel(); ++i) put_u32(out, std::bit_cast<std::uint32_t>(entry.value[i]));
  }
  write_file_atomic(path, out);
}

std::pair<NetConfig, NetParams> load_checkpoint(const std::filesystem::path& path) {
  const std::vector<std::uint8_t> bytes = read_file_bytes(path);
  Reader r(bytes);
  if (r.text(4) != "CKPT") throw Error(ErrorCode::CheckpointCorrupt, "bad magic in " + path.string());
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw Error(ErrorCode::CheckpointCorrupt, "unsupported checkpoint version " + std::to_string(version));
  }
  NetConfig config;
  try {
    config = NetConfig::from_text(r.text(r.u32()));
  } catch (const Error& e) {
    if (e.code() == ErrorCode::CheckpointCorrupt) throw;
    throw Error(ErrorCode::CheckpointCorrupt, std::string("bad network header: ") + e.what());
  }
  const std::uint32_t count = r.u32();
  NetParams params;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string name = r.text(r.u32());
    const std::uint32_t rank = r.u32();
    if (rank > 8) throw Error(ErrorCode::CheckpointCorrupt, "tensor " + name + " has rank " + std::to_string(rank));
    ad::Shape shape;
    std::size_t numel = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      const std::uint32_t extent = r.u32();
      if (extent == 0 || extent > (1u << 24)) throw Error(ErrorCode::CheckpointCorrupt, "bad extent in " + name);
      shape.push_back(static_cast<int>(extent));
      numel *= extent;
      if (numel > (std::size_t{1} << 28)) throw Error(ErrorCode::CheckpointCorrupt, "tensor " + name + " too large");
    }
    ad::Tensor<float> t(shape);
    for (std::size_t j = 0; j < numel; ++j) {
      t[j] = r.f32();
      if (!std::isfinite(t[j])) throw Error(ErrorCode::CheckpointCorrupt, "non-finite value in " + name);
    }
    params[name] = {std::move(t), !is_buffer_name(name)};
  }
  if (!r.done()) throw Error(ErrorCode::CheckpointCorrupt, "trailing bytes after tensors");

  for (const ParamSpec& spec : param_specs(config)) {
    auto it = params.find(spec.name);
    if (it == params.end()) throw Error(ErrorCode::CheckpointCorrupt, "missing tensor " + spec.name);
    if (it->second.value.shape() != spec.shape) {
      throw Error(ErrorCode::CheckpointCorrupt, "tensor " + spec.name + " has shape " +
                                                    shape_str(it->second.value.shape()) + ", expected " +
                                                    shape_str(spec.shape));
    }
  }
  if (params.size() != param_specs(config).size()) {
    throw Error(ErrorCode::CheckpointCorrupt, "unexpected tensors in checkpoint");
  }
  return {config, std::move(params)};
}

void copy_image_to_tensor(const RgbImage& image, ad::Tensor<float>& batch, int index) {
  const int h = image.height(), w = image.width();
  if (batch.rank() != 4 || batch.dim(1) != 3 || batch.dim(2) != h || batch.dim(3) != w || index < 0 ||
      index >= batch.dim(0)) {
    throw Error(ErrorCode::ShapeMismatch, "image " + std::to_string(w) + "x" + std::to_string(h) +
                                              " does not fit batch " + shape_str(batch.shape()));
  }
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  float* dst = batch.ptr() + static_cast<std::size_t>(index) * 3 * plane;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) dst[c * plane + static_cast<std::size_t>(y) * w + x] = image.at(x, y, c);
}

}  // namespace coseg
