#pragma once

// Small feed-forward models (MLP and a compact convnet) with hand-written
// reverse-mode (vjp) and forward-mode (jvp) differentiation.
//
// Batches are column-major: one column per example, one row per feature.
// Image inputs use channel-major (c, y, x) ordering inside a column.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "iscope/error.hpp"
#include "iscope/param_vector.hpp"
#include "iscope/rng.hpp"

namespace iscope {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

enum class Architecture { mlp, convnet_small };
enum class Activation { relu, tanh };

struct ImageShape {
  std::size_t channels = 1;
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t size() const { return channels * height * width; }
  bool operator==(const ImageShape&) const = default;
};

struct ModelSpec {
  Architecture arch = Architecture::mlp;
  /// Hidden widths (mlp) or conv channel counts (convnet_small).
  std::vector<std::size_t> hidden;
  Activation activation = Activation::relu;
  std::size_t input_dim = 2;
  std::size_t output_dim = 2;
  bool bias = true;
  /// Required for convnet_small; input_dim must equal image->size().
  std::optional<ImageShape> image;
  std::uint64_t init_seed = 0;

  bool operator==(const ModelSpec&) const = default;
};

namespace detail {

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstWeights = Eigen::Map<const RowMajor>;
using Weights = Eigen::Map<RowMajor>;
using ConstBias = Eigen::Map<const Vector>;
using BiasRef = Eigen::Map<Vector>;

struct Dense {
  std::string name;
  std::size_t in = 0, out = 0;
  bool bias = true;
  std::size_t w_off = 0, b_off = 0;
};

struct Conv2d {
  static constexpr std::size_t kKernel = 3;
  std::string name;
  ImageShape in;
  std::size_t out_channels = 0;
  bool bias = true;
  std::size_t w_off = 0, b_off = 0;

  std::size_t patch() const { return in.channels * kKernel * kKernel; }
  std::size_t pixels() const { return in.height * in.width; }
};

struct AvgPool2 {
  ImageShape in;
  ImageShape out() const { return {in.channels, in.height / 2, in.width / 2}; }
};

struct Act {
  Activation kind;
};

using Layer = std::variant<Dense, Conv2d, AvgPool2, Act>;

// Patch matrix for a 3x3 same-padded convolution: rows (c, ky, kx), columns (example, y, x).
inline Matrix im2col(const Matrix& x, const Conv2d& l) {
  const auto H = static_cast<long>(l.in.height), W = static_cast<long>(l.in.width);
  const long K = Conv2d::kKernel, pix = H * W, B = x.cols();
  Matrix cols = Matrix::Zero(static_cast<long>(l.patch()), B * pix);
  for (long b = 0; b < B; ++b)
    for (long c = 0; c < static_cast<long>(l.in.channels); ++c)
      for (long ky = 0; ky < K; ++ky)
        for (long kx = 0; kx < K; ++kx) {
          const long row = (c * K + ky) * K + kx;
          for (long y = 0; y < H; ++y) {
            const long sy = y + ky - 1;
            if (sy < 0 || sy >= H) continue;
            for (long xx = 0; xx < W; ++xx) {
              const long sx = xx + kx - 1;
              if (sx < 0 || sx >= W) continue;
              cols(row, b * pix + y * W + xx) = x(c * pix + sy * W + sx, b);
            }
          }
        }
  return cols;
}

inline Matrix col2im(const Matrix& cols, const Conv2d& l, long batch) {
  const auto H = static_cast<long>(l.in.height), W = static_cast<long>(l.in.width);
  const long K = Conv2d::kKernel, pix = H * W;
  Matrix x = Matrix::Zero(static_cast<long>(l.in.size()), batch);
  for (long b = 0; b < batch; ++b)
    for (long c = 0; c < static_cast<long>(l.in.channels); ++c)
      for (long ky = 0; ky < K; ++ky)
        for (long kx = 0; kx < K; ++kx) {
          const long row = (c * K + ky) * K + kx;
          for (long y = 0; y < H; ++y) {
            const long sy = y + ky - 1;
            if (sy < 0 || sy >= H) continue;
            for (long xx = 0; xx < W; ++xx) {
              const long sx = xx + kx - 1;
              if (sx < 0 || sx >= W) continue;
              x(c * pix + sy * W + sx, b) += cols(row, b * pix + y * W + xx);
            }
          }
        }
  return x;
}

// (out, B*pix) channel matrix <-> (out*pix, B) column batch.
inline Matrix channels_to_batch(const Matrix& m, long out, long pix, long batch) {
  Matrix y(out * pix, batch);
  for (long b = 0; b < batch; ++b)
    for (long o = 0; o < out; ++o) y.block(o * pix, b, pix, 1) = m.block(o, b * pix, 1, pix).transpose();
  return y;
}

inline Matrix batch_to_channels(const Matrix& y, long out, long pix) {
  const long batch = y.cols();
  Matrix m(out, batch * pix);
  for (long b = 0; b < batch; ++b)
    for (long o = 0; o < out; ++o) m.block(o, b * pix, 1, pix) = y.block(o * pix, b, pix, 1).transpose();
  return m;
}

inline Matrix pool_forward(const Matrix& x, const AvgPool2& l) {
  const auto o = l.out();
  const long H = static_cast<long>(l.in.height), W = static_cast<long>(l.in.width);
  const long oh = static_cast<long>(o.height), ow = static_cast<long>(o.width);
  Matrix y(static_cast<long>(o.size()), x.cols());
  for (long b = 0; b < x.cols(); ++b)
    for (long c = 0; c < static_cast<long>(o.channels); ++c)
      for (long yy = 0; yy < oh; ++yy)
        for (long xx = 0; xx < ow; ++xx) {
          const long base = c * H * W + 2 * yy * W + 2 * xx;
          y(c * oh * ow + yy * ow + xx, b) =
              0.25 * (x(base, b) + x(base + 1, b) + x(base + W, b) + x(base + W + 1, b));
        }
  return y;
}

inline Matrix pool_backward(const Matrix& dy, const AvgPool2& l) {
  const auto o = l.out();
  const long H = static_cast<long>(l.in.height), W = static_cast<long>(l.in.width);
  const long oh = static_cast<long>(o.height), ow = static_cast<long>(o.width);
  Matrix dx = Matrix::Zero(static_cast<long>(l.in.size()), dy.cols());
  for (long b = 0; b < dy.cols(); ++b)
    for (long c = 0; c < static_cast<long>(o.channels); ++c)
      for (long yy = 0; yy < oh; ++yy)
        for (long xx = 0; xx < ow; ++xx) {
          const double g = 0.25 * dy(c * oh * ow + yy * ow + xx, b);
          const long base = c * H * W + 2 * yy * W + 2 * xx;
          dx(base, b) += g;
          dx(base + 1, b) += g;
          dx(base + W, b) += g;
          dx(base + W + 1, b) += g;
        }
  return dx;
}

}  // namespace detail

/// Values recorded by a forward pass: values[i] is the input of layer i and
/// values.back() is the model output.
struct ForwardTape {
  std::vector<Matrix> values;
  const Matrix& output() const { return values.back(); }
};

/// A model architecture instantiated from a ModelSpec. Holds no parameters;
/// every evaluation takes the flat parameter span explicitly.
class Model {
 public:
  explicit Model(ModelSpec spec) : spec_(std::move(spec)) { build(); }

  const ModelSpec& spec() const noexcept { return spec_; }
  const std::shared_ptr<const ParamLayout>& layout() const noexcept { return layout_; }
  std::size_t param_count() const noexcept { return layout_->size(); }
  std::size_t input_dim() const noexcept { return spec_.input_dim; }
  std::size_t output_dim() const noexcept { return spec_.output_dim; }

  /// True when the output is an affine function of the parameters (a single
  /// dense layer). The first-order Taylor model of such a model is exact.
  bool affine_in_params() const noexcept { return layers_.size() == 1; }

  /// Fan-in scaled uniform initialization, U(-1/sqrt(fan_in), 1/sqrt(fan_in)),
  /// keyed by (init_seed, flat index).
  ParamVector init_params() const {
    ParamVector p(layout_);
    const CounterRng rng(derive_seed(spec_.init_seed, "init"));
    for (std::size_t e = 0; e < layout_->entries().size(); ++e) {
      const std::size_t off = layout_->offset(e), n = layout_->entries()[e].size();
      const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in_[e]));
      for (std::size_t i = 0; i < n; ++i) p[off + i] = rng.uniform(off + i, 0, -bound, bound);
    }
    return p;
  }

  /// Throws ShapeError naming the first layer whose parameter block disagrees.
  void check_params(const ParamVector& params) const {
    if (params.layout_ptr() == layout_ || params.layout() == *layout_) return;
    const auto& want = layout_->entries();
    const auto& got = params.layout().entries();
    for (std::size_t e = 0; e < want.size(); ++e) {
      if (e >= got.size()) throw ShapeError(want[e].name, "missing from parameter vector");
      if (!(want[e] == got[e])) throw ShapeError(want[e].name, "parameter block has the wrong shape or name");
    }
    throw ShapeError(got[want.size()].name, "unexpected extra parameter block");
  }

  void check_inputs(const Matrix& x) const {
    if (static_cast<std::size_t>(x.rows()) != spec_.input_dim)
      throw ShapeError("input", "expected " + std::to_string(spec_.input_dim) + " features, got " +
                                    std::to_string(x.rows()));
  }

  Matrix forward(std::span<const double> p, const Matrix& x) const {
    Matrix h = x;
    for (const auto& layer : layers_) h = apply(layer, p, h);
    return h;
  }

  ForwardTape forward_tape(std::span<const double> p, const Matrix& x) const {
    ForwardTape tape;
    tape.values.reserve(layers_.size() + 1);
    tape.values.push_back(x);
    for (const auto& layer : layers_) tape.values.push_back(apply(layer, p, tape.values.back()));
    return tape;
  }

  /// Accumulates d(<dy, f>)/dp into grad. The tape must come from forward_tape(p, x).
  void backward(std::span<const double> p, const ForwardTape& tape, Matrix dy, std::span<double> grad) const {
    for (std::size_t i = layers_.size(); i-- > 0;) {
      const bool need_dx = i > 0;
      dy = std::visit([&](const auto& l) { return vjp(l, p, tape.values[i], tape.values[i + 1], dy, grad, need_dx); },
                      layers_[i]);
    }
  }

  /// Returns (f(p, x), d/de f(p + e*dp, x) at e=0).
  std::pair<Matrix, Matrix> jvp(std::span<const double> p, std::span<const double> dp, const Matrix& x) const {
    Matrix h = x;
    std::optional<Matrix> dh;
    for (const auto& layer : layers_) {
      Matrix next = apply(layer, p, h);
      dh = std::visit([&](const auto& l) { return tangent(l, p, dp, h, next, dh); }, layer);
      h = std::move(next);
    }
    if (!dh) dh = Matrix::Zero(h.rows(), h.cols());
    return {std::move(h), std::move(*dh)};
  }

 private:
  void build() {
    if (spec_.output_dim == 0) throw InvalidArgument("model output dimension must be positive");
    std::vector<TensorShape> shapes;
    std::size_t off = 0;
    auto add = [&](const std::string& name, std::vector<std::size_t> dims, std::size_t fan_in) {
      TensorShape s{name, std::move(dims)};
      const std::size_t at = off;
      off += s.size();
      shapes.push_back(std::move(s));
      fan_in_.push_back(fan_in);
      return at;
    };
    auto add_dense = [&](std::size_t in, std::size_t out) {
      detail::Dense d{"dense" + std::to_string(dense_count_++), in, out, spec_.bias, 0, 0};
      d.w_off = add(d.name + ".weight", {out, in}, in);
      if (d.bias) d.b_off = add(d.name + ".bias", {out}, in);
      layers_.emplace_back(std::move(d));
    };

    if (spec_.arch == Architecture::mlp) {
      std::size_t width = spec_.input_dim;
      for (std::size_t h : spec_.hidden) {
        add_dense(width, h);
        layers_.emplace_back(detail::Act{spec_.activation});
        width = h;
      }
      add_dense(width, spec_.output_dim);
    } else {
      if (!spec_.image) throw InvalidArgument("convnet_small requires an image shape");
      if (spec_.image->size() != spec_.input_dim)
        throw ShapeError("input", "image shape does not match input dimension");
      ImageShape shape = *spec_.image;
      std::size_t conv_count = 0;
      for (std::size_t ch : spec_.hidden) {
        detail::Conv2d c{"conv" + std::to_string(conv_count++), shape, ch, spec_.bias, 0, 0};
        c.w_off = add(c.name + ".weight", {ch, shape.channels, 3, 3}, c.patch());
        if (c.bias) c.b_off = add(c.name + ".bias", {ch}, c.patch());
        layers_.emplace_back(std::move(c));
        layers_.emplace_back(detail::Act{spec_.activation});
        shape.channels = ch;
        detail::AvgPool2 pool{shape};
        if (shape.height < 2 || shape.width < 2) throw ShapeError("pool", "image too small for pooling");
        layers_.emplace_back(pool);
        shape = pool.out();
      }
      add_dense(shape.size(), spec_.output_dim);
    }
    layout_ = std::make_shared<const ParamLayout>(std::move(shapes));
  }

  static Matrix apply(const detail::Layer& layer, std::span<const double> p, const Matrix& x) {
    return std::visit([&](const auto& l) { return fwd(l, p, x); }, layer);
  }

  static Matrix fwd(const detail::Dense& l, std::span<const double> p, const Matrix& x) {
    detail::ConstWeights w(p.data() + l.w_off, static_cast<long>(l.out), static_cast<long>(l.in));
    Matrix y = w * x;
    if (l.bias) y.colwise() += detail::ConstBias(p.data() + l.b_off, static_cast<long>(l.out));
    return y;
  }

  static Matrix fwd(const detail::Conv2d& l, std::span<const double> p, const Matrix& x) {
    const long out = static_cast<long>(l.out_channels), pix = static_cast<long>(l.pixels());
    detail::ConstWeights w(p.data() + l.w_off, out, static_cast<long>(l.patch()));
    Matrix m = w * detail::im2col(x, l);
    if (l.bias) m.colwise() += detail::ConstBias(p.data() + l.b_off, out);
    return detail::channels_to_batch(m, out, pix, x.cols());
  }

  static Matrix fwd(const detail::AvgPool2& l, std::span<const double>, const Matrix& x) {
    return detail::pool_forward(x, l);
  }

  static Matrix fwd(const detail::Act& l, std::span<const double>, const Matrix& x) {
    if (l.kind == Activation::relu) return x.cwiseMax(0.0);
    return x.array().tanh().matrix();
  }

  static Matrix vjp(const detail::Dense& l, std::span<const double> p, const Matrix& x, const Matrix&,
                    const Matrix& dy, std::span<double> grad, bool need_dx) {
    const long out = static_cast<long>(l.out), in = static_cast<long>(l.in);
    detail::Weights gw(grad.data() + l.w_off, out, in);
    gw.noalias() += dy * x.transpose();
    if (l.bias) detail::BiasRef(grad.data() + l.b_off, out) += dy.rowwise().sum();
    if (!need_dx) return {};
    detail::ConstWeights w(p.data() + l.w_off, out, in);
    return w.transpose() * dy;
  }

  static Matrix vjp(const detail::Conv2d& l, std::span<const double> p, const Matrix& x, const Matrix&,
                    const Matrix& dy, std::span<double> grad, bool need_dx) {
    const long out = static_cast<long>(l.out_channels), pix = static_cast<long>(l.pixels());
    const long patch = static_cast<long>(l.patch());
    const Matrix dm = detail::batch_to_channels(dy, out, pix);
    const Matrix cols = detail::im2col(x, l);
    detail::Weights gw(grad.data() + l.w_off, out, patch);
    gw.noalias() += dm * cols.transpose();
    if (l.bias) detail::BiasRef(grad.data() + l.b_off, out) += dm.rowwise().sum();
    if (!need_dx) return {};
    detail::ConstWeights w(p.data() + l.w_off, out, patch);
    return detail::col2im(w.transpose() * dm, l, x.cols());
  }

  static Matrix vjp(const detail::AvgPool2& l, std::span<const double>, const Matrix&, const Matrix&,
                    const Matrix& dy, std::span<double>, bool) {
    return detail::pool_backward(dy, l);
  }

  static Matrix vjp(const detail::Act& l, std::span<const double>, const Matrix& x, const Matrix& y,
                    const Matrix& dy, std::span<double>, bool) {
    // relu'(0) is taken as 0.
    if (l.kind == Activation::relu) return (x.array() > 0.0).select(dy.array(), 0.0).matrix();
    return (dy.array() * (1.0 - y.array().square())).matrix();
  }

  static std::optional<Matrix> tangent(const detail::Dense& l, std::span<const double> p,
                                       std::span<const double> dp, const Matrix& x, const Matrix&,
                                       const std::optional<Matrix>& dx) {
    const long out = static_cast<long>(l.out), in = static_cast<long>(l.in);
    detail::ConstWeights dw(dp.data() + l.w_off, out, in);
    Matrix dy = dw * x;
    if (dx) {
      detail::ConstWeights w(p.data() + l.w_off, out, in);
      dy.noalias() += w * *dx;
    }
    if (l.bias) dy.colwise() += detail::ConstBias(dp.data() + l.b_off, out);
    return dy;
  }

  static std::optional<Matrix> tangent(const detail::Conv2d& l, std::span<const double> p,
                                       std::span<const double> dp, const Matrix& x, const Matrix&,
                                       const std::optional<Matrix>& dx) {
    const long out = static_cast<long>(l.out_channels), pix = static_cast<long>(l.pixels());
    const long patch = static_cast<long>(l.patch());
    detail::ConstWeights dw(dp.data() + l.w_off, out, patch);
    Matrix m = dw * detail::im2col(x, l);
    if (dx) {
      detail::ConstWeights w(p.data() + l.w_off, out, patch);
      m.noalias() += w * detail::im2col(*dx, l);
    }
    if (l.bias) m.colwise() += detail::ConstBias(dp.data() + l.b_off, out);
    return detail::channels_to_batch(m, out, pix, x.cols());
  }

  static std::optional<Matrix> tangent(const detail::AvgPool2& l, std::span<const double>, std::span<const double>,
                                       const Matrix&, const Matrix&, const std::optional<Matrix>& dx) {
    if (!dx) return std::nullopt;
    return detail::pool_forward(*dx, l);
  }

  static std::optional<Matrix> tangent(const detail::Act& l, std::span<const double>, std::span<const double>,
                                       const Matrix& x, const Matrix& y, const std::optional<Matrix>& dx) {
    if (!dx) return std::nullopt;
    if (l.kind == Activation::relu) return Matrix((x.array() > 0.0).select(dx->array(), 0.0));
    return Matrix(dx->array() * (1.0 - y.array().square()));
  }

  ModelSpec spec_;
  std::vector<detail::Layer> layers_;
  std::vector<std::size_t> fan_in_;
  std::shared_ptr<const ParamLayout> layout_;
  std::size_t dense_count_ = 0;
};

}  // namespace iscope
