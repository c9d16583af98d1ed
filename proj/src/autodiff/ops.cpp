#include "ops.hpp"

#include <Eigen/Core>
#include <cmath>

#include "coseg/error.hpp"

namespace coseg::ad::ops {

namespace {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MatMap = Eigen::Map<RowMat<T>>;
template <class T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

[[noreturn]] void shape_error(std::string_view op, const std::string& detail) {
  throw Error(ErrorCode::ShapeMismatch, std::string(op) + ": " + detail);
}

void expect_rank(std::string_view op, const Shape& s, int rank) {
  if (static_cast<int>(s.size()) != rank) {
    shape_error(op, "expected rank " + std::to_string(rank) + ", got " + shape_str(s));
  }
}

void expect_same(std::string_view op, const Shape& a, const Shape& b) {
  if (a != b) shape_error(op, shape_str(a) + " vs " + shape_str(b));
}

// --- convolution ------------------------------------------------------------

// cols[(c*9 + ky*3 + kx), y*W + x] = src[c, y+ky-1, x+kx-1] (zero outside).
template <class T>
void im2col3x3(const T* src, int channels, int h, int w, T* cols) {
  const std::size_t hw = static_cast<std::size_t>(h) * w;
  for (int c = 0; c < channels; ++c) {
    const T* plane = src + c * hw;
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        T* row = cols + (static_cast<std::size_t>(c) * 9 + ky * 3 + kx) * hw;
        const int dy = ky - 1;
        const int dx = kx - 1;
        const int x0 = std::max(0, -dx);
        const int x1 = std::min(w, w - dx);
        for (int y = 0; y < h; ++y) {
          T* dst = row + static_cast<std::size_t>(y) * w;
          const int sy = y + dy;
          if (sy < 0 || sy >= h) {
            std::fill(dst, dst + w, T(0));
            continue;
          }
          const T* s = plane + static_cast<std::size_t>(sy) * w + dx;
          for (int x = 0; x < x0; ++x) dst[x] = T(0);
          for (int x = x0; x < x1; ++x) dst[x] = s[x];
          for (int x = x1; x < w; ++x) dst[x] = T(0);
        }
      }
    }
  }
}

template <class T>
void col2im3x3_add(const T* cols, int channels, int h, int w, T* dst_img) {
  const std::size_t hw = static_cast<std::size_t>(h) * w;
  for (int c = 0; c < channels; ++c) {
    T* plane = dst_img + c * hw;
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        const T* row = cols + (static_cast<std::size_t>(c) * 9 + ky * 3 + kx) * hw;
        const int dy = ky - 1;
        const int dx = kx - 1;
        const int x0 = std::max(0, -dx);
        const int x1 = std::min(w, w - dx);
        for (int y = 0; y < h; ++y) {
          const int sy = y + dy;
          if (sy < 0 || sy >= h) continue;
          const T* src = row + static_cast<std::size_t>(y) * w;
          T* d = plane + static_cast<std::size_t>(sy) * w + dx;
          for (int x = x0; x < x1; ++x) d[x] += src[x];
        }
      }
    }
  }
}

template <class T>
class Conv2d final : public Op<T> {
 public:
  explicit Conv2d(bool has_bias) : has_bias_(has_bias) {}
  std::string_view name() const override { return "conv2d"; }

  void forward(std::span<const Tensor<T>* const> in, Tensor<T>& out, OpContext<T>&) override {
    const Tensor<T>& x = *in[0];
    const Tensor<T>& wt = *in[1];
    expect_rank(name(), x.shape(), 4);
    expect_rank(name(), wt.shape(), 4);
    const int n = x.dim(0), ci = x.dim(1), h = x.dim(2), w = x.dim(3);
    const int co = wt.dim(0);
    if (wt.dim(1) != ci || wt.dim(2) != 3 || wt.dim(3) != 3) {
      shape_error(name(), "kernel " + shape_str(wt.shape()) + " for input " + shape_str(x.shape()));
    }
    if (has_bias_) expect_same(name(), in[2]->shape(), Shape{co});
    out.reset({n, co, h, w});
    const std::size_t hw = static_cast<std::size_t>(h) * w;
    cols_.resize(static_cast<std::size_t>(ci) * 9 * hw);
    ConstMatMap<T> kernel(wt.ptr(), co, ci * 9);
    ConstMatMap<T> cols(cols_.data(), ci * 9, static_cast<Eigen::Index>(hw));
    for (int b = 0; b < n; ++b) {
      im2col3x3(x.ptr() + static_cast<std::size_t>(b) * ci * hw, ci, h, w, cols_.data());
      MatMap<T> y(out.ptr() + static_cast<std::size_t>(b) * co * hw, co, static_cast<Eigen::Index>(hw));
      y.noalias() = kernel * cols;
      if (has_bias_) {
        for (int c = 0; c < co; ++c) y.row(c).array() += (*in[2])[c];
      }
    }
  }

  void backward(std::span<const Tensor<T>* const> in, const Tensor<T>&, const Tensor<T>& dout,
                std::span<Tensor<T>*> din) override {
    const Tensor<T>& x = *in[0];
    const Tensor<T>& wt = *in[1];
    const int n = x.dim(0), ci = x.dim(1), h = x.dim(2), w = x.dim(3);
    const int co = wt.dim(0);
    const std::size_t hw = static_cast<std::size_t>(h) * w;
    ConstMatMap<T> kernel(wt.ptr(), co, ci * 9);
    ConstMatMap<T> cols(cols_.data(), ci * 9, static_cast<Eigen::Index>(hw));
    dcols_.resize(cols_.size());
    MatMap<T> dcols(dcols_.data(), ci * 9, static_cast<Eigen::Index>(hw));
    for (int b = 0; b < n; ++b) {
      ConstMatMap<T> dy(dout.ptr() + static_cast<std::size_t>(b) * co * hw, co,
                        static_cast<Eigen::Index>(hw));
      if (din[1]) {
        im2col3x3(x.ptr() + static_cast<std::size_t>(b) * ci * hw, ci, h, w, cols_.data());
        MatMap<T> dk(din[1]->ptr(), co, ci * 9);
        dk.noalias() += dy * cols.transpose();
      }
      if (din[0]) {
        dcols.noalias() = kernel.transpose() * dy;
        col2im3x3_add(dcols_.data(), ci, h, w, din[0]->ptr() + static_cast<std::size_t>(b) * ci * hw);
      }
      if (has_bias_ && din[2]) {
        for (int c = 0; c < co; ++c) (*din[2])[c] += dy.row(c).sum();
      }
    }
  }

 private:
  bool has_bias_;
  std::vector<T> cols_;
  std::vector<T> dcols_;
};

// Transposed convolution, kernel 2x2, stride 2: every input pixel paints a
// disjoint 2x2 output block. Weight layout [Ci, Co, 2, 2].
template <class T>
class Deconv2x2 final : public Op<T> {
 public:
  explicit Deconv2x2(bool has_bias) : has_bias_(has_bias) {}
  std::string_view name() const override { return "deconv2x2"; }

  void forward(std::span<const Tensor<T>* const> in, Tensor<T>& out, OpContext<T>&) override {
    const Tensor<T>& x = *in[0];
    const Tensor<T>& wt = *in[1];
    expect_rank(name(), x.shape(), 4);
    expect_rank(name(), wt.shape(), 4);
    const int n = x.dim(0), ci = x.dim(1), h = x.dim(2), w = x.dim(3);
    const int co = wt.dim(1);
    if (wt.dim(0) != ci || wt.dim(2) != 2 || wt.dim(3) != 2) {
      shape_error(name(), "kernel " + shape_str(wt.shape()) + " for input " + shape_str(x.shape()));
    }
    if (has_bias_) expect_same(name(), in[2]->shape(), Shape{co});
    out.reset({n, co, 2 * h, 2 * w});
    const auto hw = static_cast<Eigen::Index>(h) * w;
    tmp_.resize(static_cast<std::size_t>(co) * 4 * hw);
    ConstMatMap<T> kernel(wt.ptr(), ci, co * 4);
    MatMap<T> tmp(tmp_.data(), co * 4, hw);
    for (int b = 0; b < n; ++b) {
      ConstMatMap<T> xb(x.ptr() + static_cast<std::size_t>(b) * ci * hw, ci, hw);
      tmp.noalias() = kernel.transpose() * xb;
      for (int c = 0; c < co; ++c) {
        const T bias = has_bias_ ? (*in[2])[c] : T(0);
        for (int k = 0; k < 4; ++k) {
          const T* row = tmp_.data() + (static_cast<std::size_t>(c) * 4 + k) * hw;
          const int ky = k / 2, kx = k % 2;
          for (int y = 0; y < h; ++y)
            for (int xx = 0; xx < w; ++xx)
              out.at(b, c, 2 * y + ky, 2 * xx + kx) = row[y * w + xx] + bias;
        }
      }
    }
  }

  void backward(std::span<const Tensor<T>* const> in, const Tensor<T>&, const Tensor<T>& dout,
                std::span<Tensor<T>*> din) override {
    const Tensor<T>& x = *in[0];
    const Tensor<T>& wt = *in[1];
    const int n = x.dim(0), ci = x.dim(1), h = x.dim(2), w = x.dim(3);
    const int co = wt.dim(1);
    const auto hw = static_cast<Eigen::Index>(h) * w;
    ConstMatMap<T> kernel(wt.ptr(), ci, co * 4);
    MatMap<T> dtmp(tmp_.data(), co * 4, hw);
    for (int b = 0; b < n; ++b) {
      for (int c = 0; c < co; ++c) {
        for (int k = 0; k < 4; ++k) {
          T* row = tmp_.data() + (static_cast<std::size_t>(c) * 4 + k) * hw;
          const int ky = k / 2, kx = k % 2;
          for (int y = 0; y < h; ++y)
            for (int xx = 0; xx < w; ++xx) row[y * w + xx] = dout.at(b, c, 2 * y + ky, 2 * xx + kx);
        }
      }
      ConstMatMap<T> xb(x.ptr() + static_cast<std::size_t>(b) * ci * hw, ci, hw);
      if (din[1]) {
        MatMap<T> dk(din[1]->ptr(), ci, co * 4);
        dk.noalias() += xb * dtmp.transpose();
      }
      if (din[0]) {
        MatMap<T> dx(din[0]->ptr() + static_cast<std::size_t>(b) * ci * hw, ci, hw);
        dx.noalias() += kernel * dtmp;
      }
      if (has_bias_ && din[2]) {
        for (int c = 0; c < co; ++c) {
          T s = 0;
          for (int k = 0; k < 4; ++k) s += dtmp.row(c * 4 + k).sum();
          (*din[2])[c] += s;
        }
      }
    }
  }

 private:
  bool has_bias_;
  std::vector<T> tmp_;
};

// --- batch normalization ----------------------------------------------------

template <class T>
class BatchNorm final : public Op<T> {
 public:
  BatchNorm(std::string running_mean, std::string running_var, BatchNormSettings settings)
      : running_mean_(std::move(running_mean)),
        running_var_(std::move(running_var)),
        settings_(settings) {}
  std::string_view name() const override { return "batch_norm"; }

  void forward(std::span<const Tensor<T>* const> in, Tensor<T>& out, OpContext<T>& ctx) override {
    const Tensor<T>& x = *in[0];
    if (x.rank() < 2) shape_error(name(), "input rank < 2");
    const int n = x.dim(0), c = x.dim(1);
    const std::size_t inner = x.numel() / (static_cast<std::size_t>(n) * c);
    expect_same(name(), in[1]->shape(), Shape{c});
    expect_same(name(), in[2]->shape(), Shape{c});
    if (!ctx.params) throw Error(ErrorCode::UnknownInput, "batch_norm needs a parameter store");
    auto& rm = lookup(*ctx.params, running_mean_, c);
    auto& rv = lookup(*ctx.params, running_var_, c);

    mode_ = ctx.mode;
    out.reset(x.shape());
    xhat_.reset(x.shape());
    inv_std_.assign(c, 0.0);
    const std::size_t count = static_cast<std::size_t>(n) * inner;
    if (mode_ == Mode::Train && count < 2) {
      throw Error(ErrorCode::BatchTooSmall, "batch_norm needs at least two values per channel");
    }
    for (int ch = 0; ch < c; ++ch) {
      double mean = 0.0, var = 0.0;
      if (mode_ == Mode::Train) {
        for (int b = 0; b < n; ++b) {
          const T* p = x.ptr() + (static_cast<std::size_t>(b) * c + ch) * inner;
          for (std::size_t i = 0; i < inner; ++i) mean += p[i];
        }
        mean /= static_cast<double>(count);
        for (int b = 0; b < n; ++b) {
          const T* p = x.ptr() + (static_cast<std::size_t>(b) * c + ch) * inner;
          for (std::size_t i = 0; i < inner; ++i) {
            const double d = p[i] - mean;
            var += d * d;
          }
        }
        var /= static_cast<double>(count);
        const double m = settings_.momentum;
        const double unbiased = var * static_cast<double>(count) / static_cast<double>(count - 1);
        rm[ch] = static_cast<T>(m * rm[ch] + (1.0 - m) * mean);
        rv[ch] = static_cast<T>(m * rv[ch] + (1.0 - m) * unbiased);
      } else {
        mean = rm[ch];
        var = rv[ch];
      }
      const double inv_std = 1.0 / std::sqrt(var + settings_.epsilon);
      inv_std_[ch] = inv_std;
      const T gamma = (*in[1])[ch];
      const T beta = (*in[2])[ch];
      for (int b = 0; b < n; ++b) {
        const std::size_t off = (static_cast<std::size_t>(b) * c + ch) * inner;
        for (std::size_t i = 0; i < inner; ++i) {
          const T xh = static_cast<T>((x[off + i] - mean) * inv_std);
          xhat_[off + i] = xh;
          out[off + i] = gamma * xh + beta;
        }
      }
    }
  }

  void backward(std::span<const Tensor<T>* const> in, const Tensor<T>&, const Tensor<T>& dout,
                std::span<Tensor<T>*> din) override {
    const Tensor<T>& x = *in[0];
    const int n = x.dim(0), c = x.dim(1);
    const std::size_t inner = x.numel() / (static_cast<std::size_t>(n) * c);
    const double count = static_cast<double>(n) * static_cast<double>(inner);
    for (int ch = 0; ch < c; ++ch) {
      double sum_dy = 0.0, sum_dy_xhat = 0.0;
      for (int b = 0; b < n; ++b) {
        const std::size_t off = (static_cast<std::size_t>(b) * c + ch) * inner;
        for (std::size_t i = 0; i < inner; ++i) {
          sum_dy += dout[off + i];
          sum_dy_xhat += static_cast<double>(dout[off + i]) * xhat_[off + i];
        }
      }
      if (din[1]) (*din[1])[ch] += static_cast<T>(sum_dy_xhat);
      if (din[2]) (*din[2])[ch] += static_cast<T>(sum_dy);
      if (!din[0]) continue;
      const double scale = (*in[1])[ch] * inv_std_[ch];
      for (int b = 0; b < n; ++b) {
        const std::size_t off = (static_cast<std::size_t>(b) * c + ch) * inner;
        for (std::size_t i = 0; i < inner; ++i) {
          double g;
          if (mode_ == Mode::Train) {
            g = scale * (dout[off + i] - sum_dy / count - xhat_[off + i] * sum_dy_xhat / count);
          } else {
            g = scale * dout[off + i];
          }
          (*din[0])[off + i] += static_cast<T>(g);
        }
      }
    }
  }

 private:
  static Tensor<T>& lookup(ParamStore<T>& params, const std::string& key, int channels) {
    auto it = params.find(key);
    if (it == params.end()) throw Error(ErrorCode::UnknownInput, "missing buffer " + key);
    expect_same("batch_norm", it->second.value.shape(), Shape{channels});
    return it->second.value;
  }

  std::string running_mean_;
  std::string running_var_;
  BatchNormSettings settings_;
  Mode mode_ = Mode::Eval;
  Tensor<T> xhat_;
  std::vector<double> inv_std_;
};

// --- pointwise ----------------------------------------------------------------

enum class Pointwise { Relu, Tanh, Sigmoid };

template <class T, Pointwise K>
class Activation final : public Op<T> {
 public:
  std::string_view name() const override {
    switch (K) {
      case Pointwise::Relu: return "relu";
      case Pointwise::Tanh: return "tanh";
      case Pointwise::Sigmoid: return "sigmoid";
    }
    return "?";
  }

  void forward(std::span<const Tensor<T>* const> in, Tensor<T>& out, OpContext<T>&) override {
    const Tensor<T>& x = *in[0];
    out.reset(x.shape());
    for (std::size_t i = 0; i < x.numel(); ++i) {
      const T v = x[i];
      if constexpr (K == Pointwise::Relu) out[i] = v > T(0) ? v : T(0);
      else if constexpr (K == Pointwise::Tanh) out[i] = std::tanh(v);
      else out[i] = T(1) / (T(1) + std::exp(-v));
    }
  }

  void backward(std::span<const Tensor<T>* const> in, const Tensor<T>& out, const Tensor<T>& dout,
                std::span<Tensor<T>*> din) override {
    if (!din[0]) return;
    Tensor<T>& dx = *din[0];
    for (std::size_t i = 0; i < out.numel(); ++i) {
      if constexpr (K == Pointwise::Relu) dx[i] += (*in[0])[i] > T(0) ? dout[i] : T(0);
      else if constexpr (K == Pointwise::Tanh) dx[i] += dout[i] * (T(1) - out[i] * out[i]);
      else dx[i] += dout[i] * out[i] * (T(1) - out[i]);
    }
  }
};

template <class T>
class MaxPool2x2 final : public Op<T> {
 public:
  std::string_view name() const override { return "max_pool2x2"; }

  void forward(std::span<const Tensor<T>* const> in, Tensor<T>& out, OpContext<T>&) override {
    const Tensor<T>& x = *in[0];
    expect_rank(name(), x.shape(), 4);
    const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    if (h % 2 || w % 2) shape_error(name(), "odd spatial extent " + shape_str(x.shape()));
    out.reset({n, c, h / 2, w / 2});
    argmax_.resize(out.numel());
    std::size_t o = 0;
    for (int b = 0; b < n; ++b) {
      for (int ch = 0; ch < c; ++ch) {
        const std::size_t base = (static_cast<std::size_t>(b) * c + ch) * h * w;
        for (int y = 0; y < h / 2; ++y) {
          for (int xx = 0; xx < w / 2; ++xx, ++o) {
            std::size_t best = base + static_cast<std::size_t>(2 * y) * w + 2 * xx;
            for (int k = 1; k < 4; ++k) {
              const std::size_t idx = base + static_cast<std::size_t>(2 * y + k / 2) * w + 2 * xx + k % 2;
              if (x[idx] > x[best]) best = idx;  // first maximum wins ties
            }
            argmax_[o] = best;
            out[o] = x[best];
          }
        }
      }
    }
  }

  void backward(std::span<const Tensor<T>* const>, const Tensor<T>&, const Tensor<T>& dout,
                std::span<Tensor<T>*> din) override {
    if (!din[0]) return;
    for (std::size_t o = 0; o < argmax_.size(); ++o) (*din[0])[argmax_[o]] += dout[o];
  }

 private:
  std::vector<std::size_t> argmax_;
};

// --- structural ----------------------------------------------------------------

template <class T>
class Concat final : public Op<T> {
 public:
  explicit Concat(int axis) : axis_(axis) {}
  std::string_view name() const override { return axis_ == 0 ? "concat_batch" : "concat_channels"; }

  void forward(std::span<const Tensor<T>* const> in, Tensor<T>& out, OpContext<T>&) override {
    Shape shape = in[0]->shape();
    if (static_cast<int>(shape.size()) <= axis_) shape_error(name(), "rank too small");
    shape[axis_] = 0;
    for (const auto* t : in) {
      Shape s = t->shape();
      if (s.size() != shape.size()) shape_error(name(), "rank mismatch");
      shape[axis_] += s[axis_];
      s[axis_] = 0;
      Shape ref = shape;
      ref[axis_] = 0;
      if (s != ref) shape_error(name(), shape_str(t->shape()) + " vs " + shape_str(in[0]->shape()));
    }
    out.reset(shape);
    const std::size_t outer = outer_count(shape);
    std::size_t offset = 0;
    const std::size_t out_chunk = out.numel() / outer;
    for (const auto* t : in) {
      const std::size_t chunk = t->numel() / outer;
      for (std::size_t o = 0; o < outer; ++o) {
        std::copy_n(t->ptr() + o * chunk, chunk, out.ptr() + o * out_chunk + offset);
      }
      offset += chunk;
    }
  }

  void backward(std::span<const Tensor<T>* const> in, const Tensor<T>& out, const Tensor<T>& dout,
                std::span<Tensor<T>*> din) override {
    const std::size_t outer = outer_count(out.shape());
    const std::size_t out_chunk = out.numel() / outer;
    std::size_t offset = 0;
    for (std::size_t i = 0; i < in.size(); ++i) {
      const std::size_t chunk = in[i]->numel() / outer;
      if (din[i]) {
        for (std::size_t o = 0; o < outer; ++o) {
          const T* src = dout.ptr() + o * out_chunk + offset;
          T* dst = din[i]->ptr() + o * chunk;
          for (std::size_t k = 0; k < chunk; ++k) dst[k] += src[k];
        }
      }
      offset += chunk;
    }
  }

 private:
  std::size_t outer_count(const Shape& s) const {
    std::size_t outer = 1;
    for (int a = 0; a < axis_; ++a) outer *= static_cast<std::size_t>(s[a]);
    return outer;
  }

  int axis_;
};

template <class T>
class SliceBatch final : public Op<T> {
 public:
  SliceBatch(int part, int parts) : part_(part), parts_(parts) {}
  std::string_view name() const override { return "slice_batch"; }

  void forward(std::span<const Tensor<T>* const> in, Tensor<T>& out, OpContext<T>&) override {
    const Tensor<T>& x = *in[0];
    if (x.rank() < 1 || parts_ < 1 || part_ < 0 || part_ >= parts_ || x.dim(0) % parts_ != 0) {
      shape_error(name(), "part " + std::to_string(part_) + "/" + std::to_string(parts_) + " of " +
                              shape_str(x.shape()));
    }
    Shape shape = x.shape();
    shape[0] = x.dim(0) / parts_;
    out.reset(shape);
    std::copy_n(x.ptr() + part_ * out.numel(), out.numel(), out.ptr());
  }

  void backward(std::span<const Tensor<T>* const>, const Tensor<T>& out, const Tensor<T>& dout,
                std::span<Tensor<T>*> din) override {
    if (!din[0]) return;
    T* dst = din[0]->ptr() + part_ * out.numel();
    for (std::size_t k = 0; k < out.numel(); ++k) dst[k] += dout[k];
  }

 private:
  int part_;
  int parts_;
};

template <class T>
class ReshapeItems final : public Op<T> {
 public:
  explicit ReshapeItems(Shape item_shape) : item_shape_(std::move(item_shape)) {}
  std::string_view name() const override { return "reshape_items"; }

  void forward(std::span<const Tensor<T>* const> in, Tensor<T>& out, OpContext<T>&) override {
    const Tensor<T>& x = *in[0];
    Shape shape{x.dim(0)};
    shape.insert(shape.end(), item_shape_.begin(), item_shape_.end());
    if (shape_numel(shape) != x.numel()) {
      shape_error(name(), shape_str(x.shape()) + " to " + shape_str(shape));
    }
    out = x;
    out.reshape(shape);
  }

  void backward(std::span<const Tensor<T>* const>, const Tensor<T>&, const Tensor<T>& dout,
                std::span<Tensor<T>*> din) override {
    if (!din[0]) return;
    for (std::size_t k = 0; k < dout.numel(); ++k) (*din[0])[k] += dout[k];
  }

 private:
  Shape item_shape_;
};

template <class T>
class MatMul final : public Op<T> {
 public:
  explicit MatMul(bool transpose_a) : transpose_a_(transpose_a) {}
  std::string_view name() const override { return "matmul"; }

  void forward(std::span<const Tensor<T>* const> in, Tensor<T>& out, OpContext<T>&) override {
    const Tensor<T>& a = *in[0];
    const Tensor<T>& b = *in[1];
    expect_rank(name(), a.shape(), 3);
    expect_rank(name(), b.shape(), 3);
    const int n = a.dim(0);
    const int m = transpose_a_ ? a.dim(2) : a.dim(1);
    const int k = transpose_a_ ? a.dim(1) : a.dim(2);
    if (b.dim(0) != n || b.dim(1) != k) shape_error(name(), shape_str(a.shape()) + " x " + shape_str(b.shape()));
    const int p = b.dim(2);
    out.reset({n, m, p});
    for (int i = 0; i < n; ++i) {
      ConstMatMap<T> am(a.ptr() + static_cast<std::size_t>(i) * m * k, a.dim(1), a.dim(2));
      ConstMatMap<T> bm(b.ptr() + static_cast<std::size_t>(i) * k * p, k, p);
      MatMap<T> om(out.ptr() + static_cast<std::size_t>(i) * m * p, m, p);
      if (transpose_a_) om.noalias() = am.transpose() * bm;
      else om.noalias() = am * bm;
    }
  }

  void backward(std::span<const Tensor<T>* const> in, const Tensor<T>&, const Tensor<T>& dout,
                std::span<Tensor<T>*> din) override {
    const Tensor<T>& a = *in[0];
    const Tensor<T>& b = *in[1];
    const int n = a.dim(0);
    const int m = transpose_a_ ? a.dim(2) : a.dim(1);
    const int k = transpose_a_ ? a.dim(1) : a.dim(2);
    const int p = b.dim(2);
    for (int i = 0; i < n; ++i) {
      ConstMatMap<T> am(a.ptr() + static_cast<std::size_t>(i) * m * k, a.dim(1), a.dim(2));
      ConstMatMap<T> bm(b.ptr() + static_cast<std::size_t>(i) * k * p, k, p);
      ConstMatMap<T> dm(dout.ptr() + static_cast<std::size_t>(i) * m * p, m, p);
      if (din[0]) {
        MatMap<T> da(din[0]->ptr() + static_cast<std::size_t>(i) * m * k, a.dim(1), a.dim(2));
        if (transpose_a_) da.noalias() += bm * dm.transpose();
        else da.noalias() += dm * bm.transpose();
      }
      if (din[1]) {
        MatMap<T> db(din[1]->ptr() + static_cast<std::size_t>(i) * k * p, k, p);
        if (transpose_a_) db.noalias() += am * dm;
        else db.noalias() += am.transpose() * dm;
      }
    }
  }

 private:
  bool transpose_a_;
};

template <class T>
class L2Normalize final : public Op<T> {
 public:
  explicit L2Normalize(double epsilon) : epsilon_(epsilon) {}
  std::string_view name() const override { return "l2_normalize_channels"; }

  void forward(std::span<const Tensor<T>* const> in, Tensor<T>& out, OpContext<T>&) override {
    const Tensor<T>& x = *in[0];
    if (x.rank() < 2) shape_error(name(), "input rank < 2");
    const int n = x.dim(0), c = x.dim(1);
    const std::size_t inner = x.numel() / (static_cast<std::size_t>(n) * c);
    out.reset(x.shape());
    norm_.assign(static_cast<std::size_t>(n) * inner, 0.0);
    for (int b = 0; b < n; ++b) {
      const std::size_t base = static_cast<std::size_t>(b) * c * inner;
      for (std::size_t s = 0; s < inner; ++s) {
        double sq = 0.0;
        for (int ch = 0; ch < c; ++ch) {
          const double v = x[base + ch * inner + s];
          sq += v * v;
        }
        const double r = std::sqrt(sq + epsilon_);
        norm_[b * inner + s] = r;
        for (int ch = 0; ch < c; ++ch) out[base + ch * inner + s] = static_cast<T>(x[base + ch * inner + s] / r);
      }
    }
  }

  void backward(std::span<const Tensor<T>* const> in, const Tensor<T>& out, const Tensor<T>& dout,
                std::span<Tensor<T>*> din) override {
    if (!din[0]) return;
    const Tensor<T>& x = *in[0];
    const int n = x.dim(0), c = x.dim(1);
    const std::size_t inner = x.numel() / (static_cast<std::size_t>(n) * c);
    for (int b = 0; b < n; ++b) {
      const std::size_t base = static_cast<std::size_t>(b) * c * inner;
      for (std::size_t s = 0; s < inner; ++s) {
        double dot = 0.0;
        for (int ch = 0; ch < c; ++ch) {
          dot += static_cast<double>(dout[base + ch * inner + s]) * out[base + ch * inner + s];
        }
        const double r = norm_[b * inner + s];
        for (int ch = 0; ch < c; ++ch) {
          const std::size_t i = base + ch * inner + s;
          (*din[0])[i] += static_cast<T>((dout[i] - out[i] * dot) / r);
        }
      }
    }
  }

 private:
  double epsilon_;
  std::vector<double> norm_;
};

template <class T, bool Multiply>
class Binary final : public Op<T> {
 public:
  std::string_view name() const override { return Multiply ? "mul" : "add"; }

  void forward(std::span<const Tensor<T>* const> in, Tensor<T>& out, OpContext<T>&) override {
    expect_same(name(), in[0]->shape(), in[1]->shape());
    out.reset(in[0]->shape());
    for (std::size_t i = 0; i < out.numel(); ++i) {
      out[i] = Multiply ? (*in[0])[i] * (*in[1])[i] : (*in[0])[i] + (*in[1])[i];
    }
  }

  void backward(std::span<const Tensor<T>* const> in, const Tensor<T>&, const Tensor<T>& dout,
                std::span<Tensor<T>*> din) override {
    for (int side = 0; side < 2; ++side) {
      if (!din[side]) continue;
      for (std::size_t i = 0; i < dout.numel(); ++i) {
        (*din[side])[i] += Multiply ? dout[i] * (*in[1 - side])[i] : dout[i];
      }
    }
  }
};

template <class T>
class Reduce final : public Op<T> {
 public:
  explicit Reduce(bool mean) : mean_(mean) {}
  std::string_view name() const override { return mean_ ? "mean" : "sum"; }

  void forward(std::span<const Tensor<T>* const> in, Tensor<T>& out, OpContext<T>&) override {
    const Tensor<T>& x = *in[0];
    if (x.empty()) shape_error(name(), "empty input");
    double s = 0.0;
    for (std::size_t i = 0; i < x.numel(); ++i) s += x[i];
    if (mean_) s /= static_cast<double>(x.numel());
    out.reset({1});
    out[0] = static_cast<T>(s);
  }

  void backward(std::span<const Tensor<T>* const> in, const Tensor<T>&, const Tensor<T>& dout,
                std::span<Tensor<T>*> din) override {
    if (!din[0]) return;
    const T g = mean_ ? static_cast<T>(dout[0] / static_cast<double>(in[0]->numel())) : dout[0];
    for (std::size_t i = 0; i < in[0]->numel(); ++i) (*din[0])[i] += g;
  }

 private:
  bool mean_;
};

template <class T>
class LossOp final : public Op<T> {
 public:
  LossOp(LossKind kind, LossConfig cfg) : kind_(kind), cfg_(cfg) {}
  std::string_view name() const override { return "loss"; }

  void forward(std::span<const Tensor<T>* const> in, Tensor<T>& out, OpContext<T>&) override {
    const Tensor<T>& pred = *in[0];
    const Tensor<T>& target = *in[1];
    expect_same(name(), pred.shape(), target.shape());
    if (pred.rank() < 2 || pred.dim(0) < 1) shape_error(name(), "bad shape " + shape_str(pred.shape()));
    const int n = pred.dim(0);
    const std::size_t item = pred.numel() / n;
    grad_.assign(pred.numel(), 0.0);
    std::vector<double> p(item), t(item);
    double total = 0.0;
    for (int b = 0; b < n; ++b) {
      std::copy_n(pred.ptr() + b * item, item, p.begin());
      std::copy_n(target.ptr() + b * item, item, t.begin());
      const LossValue v = evaluate_loss(kind_, p, t, cfg_);
      total += v.value;
      for (std::size_t k = 0; k < item; ++k) grad_[b * item + k] = v.grad[k] / n;
    }
    out.reset({1});
    out[0] = static_cast<T>(total / n);
  }

  void backward(std::span<const Tensor<T>* const>, const Tensor<T>&, const Tensor<T>& dout,
                std::span<Tensor<T>*> din) override {
    if (!din[0]) return;
    for (std::size_t k = 0; k < grad_.size(); ++k) (*din[0])[k] += static_cast<T>(dout[0] * grad_[k]);
  }

 private:
  LossKind kind_;
  LossConfig cfg_;
  std::vector<double> grad_;
};

}  // namespace

template <class T> std::unique_ptr<Op<T>> conv2d(bool has_bias) { return std::make_unique<Conv2d<T>>(has_bias); }
template <class T> std::unique_ptr<Op<T>> deconv2x2(bool has_bias) { return std::make_unique<Deconv2x2<T>>(has_bias); }
template <class T>
std::unique_ptr<Op<T>> batch_norm(std::string running_mean, std::string running_var, BatchNormSettings settings) {
  return std::make_unique<BatchNorm<T>>(std::move(running_mean), std::move(running_var), settings);
}
template <class T> std::unique_ptr<Op<T>> relu() { return std::make_unique<Activation<T, Pointwise::Relu>>(); }
template <class T> std::unique_ptr<Op<T>> tanh() { return std::make_unique<Activation<T, Pointwise::Tanh>>(); }
template <class T> std::unique_ptr<Op<T>> sigmoid() { return std::make_unique<Activation<T, Pointwise::Sigmoid>>(); }
template <class T> std::unique_ptr<Op<T>> max_pool2x2() { return std::make_unique<MaxPool2x2<T>>(); }
template <class T> std::unique_ptr<Op<T>> concat(int axis) { return std::make_unique<Concat<T>>(axis); }
template <class T> std::unique_ptr<Op<T>> slice_batch(int part, int parts) { return std::make_unique<SliceBatch<T>>(part, parts); }
template <class T> std::unique_ptr<Op<T>> reshape_items(Shape item_shape) { return std::make_unique<ReshapeItems<T>>(std::move(item_shape)); }
template <class T> std::unique_ptr<Op<T>> matmul(bool transpose_a) { return std::make_unique<MatMul<T>>(transpose_a); }
template <class T> std::unique_ptr<Op<T>> l2_normalize(double epsilon) { return std::make_unique<L2Normalize<T>>(epsilon); }
template <class T> std::unique_ptr<Op<T>> add() { return std::make_unique<Binary<T, false>>(); }
template <class T> std::unique_ptr<Op<T>> mul() { return std::make_unique<Binary<T, true>>(); }
template <class T> std::unique_ptr<Op<T>> reduce(bool mean) { return std::make_unique<Reduce<T>>(mean); }
template <class T> std::unique_ptr<Op<T>> loss(LossKind kind, LossConfig cfg) { return std::make_unique<LossOp<T>>(kind, cfg); }

#define COSEG_INSTANTIATE_OPS(T)                                                            \
  template std::unique_ptr<Op<T>> conv2d<T>(bool);                                          \
  template std::unique_ptr<Op<T>> deconv2x2<T>(bool);                                       \
  template std::unique_ptr<Op<T>> batch_norm<T>(std::string, std::string, BatchNormSettings); \
  template std::unique_ptr<Op<T>> relu<T>();                                                \
  template std::unique_ptr<Op<T>> tanh<T>();                                                \
  template std::unique_ptr<Op<T>> sigmoid<T>();                                             \
  template std::unique_ptr<Op<T>> max_pool2x2<T>();                                         \
  template std::unique_ptr<Op<T>> concat<T>(int);                                           \
  template std::unique_ptr<Op<T>> slice_batch<T>(int, int);                                 \
  template std::unique_ptr<Op<T>> reshape_items<T>(Shape);                                  \
  template std::unique_ptr<Op<T>> matmul<T>(bool);                                          \
  template std::unique_ptr<Op<T>> l2_normalize<T>(double);                                  \
  template std::unique_ptr<Op<T>> add<T>();                                                 \
  template std::unique_ptr<Op<T>> mul<T>();                                                 \
  template std::unique_ptr<Op<T>> reduce<T>(bool);                                          \
  template std::unique_ptr<Op<T>> loss<T>(LossKind, LossConfig);

COSEG_INSTANTIATE_OPS(float)
COSEG_INSTANTIATE_OPS(double)

}  // namespace coseg::ad::ops
