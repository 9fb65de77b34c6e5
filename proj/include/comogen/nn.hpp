#pragma once

#include <cmath>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "comogen/error.hpp"
#include "comogen/rng.hpp"

namespace comogen::nn {

template <typename Real>
using Mat = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Real>
struct Param {
  std::string name;
  Mat<Real> value;
  Mat<Real> grad;
  bool trainable = true;

  Param() = default;
  Param(std::string n, int rows, int cols)
      : name(std::move(n)), value(Mat<Real>::Zero(rows, cols)), grad(Mat<Real>::Zero(rows, cols)) {}

  Eigen::Index size() const { return value.size(); }
  void zero_grad() { grad.setZero(); }
};

template <typename Real>
using ParamList = std::vector<Param<Real>*>;

template <typename Real>
void fill_uniform(Mat<Real>& m, Rng& rng, double bound) {
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<Real>(rng.uniform(-bound, bound));
}

template <typename Real>
void fill_normal(Mat<Real>& m, Rng& rng, double stddev) {
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<Real>(stddev * rng.normal());
}

// Low-rank additive path: y += scale * (x * down) * up.
template <typename Real>
struct Lora {
  Param<Real> down;
  Param<Real> up;
  Real scale = 1;
  Mat<Real> xd;  // cached x * down
};

// y = x W + b with W stored in x out. Optionally carries a LoRA path.
template <typename Real>
class Linear {
 public:
  Linear() = default;
  Linear(const std::string& name, int in, int out, bool bias = true)
      : weight_(name + ".weight", in, out), has_bias_(bias) {
    if (bias) bias_ = Param<Real>(name + ".bias", 1, out);
  }

  int in() const { return static_cast<int>(weight_.value.rows()); }
  int out() const { return static_cast<int>(weight_.value.cols()); }

  void init_xavier(Rng& rng) {
    fill_uniform(weight_.value, rng, std::sqrt(6.0 / (in() + out())));
    if (has_bias_) bias_.value.setZero();
  }

  Mat<Real> forward(const Mat<Real>& x, bool cache) {
    Mat<Real> y = x * weight_.value;
    if (has_bias_) y.rowwise() += bias_.value.row(0);
    if (lora_) {
      Mat<Real> xd = x * lora_->down.value;
      y.noalias() += lora_->scale * (xd * lora_->up.value);
      if (cache) lora_->xd = std::move(xd);
    }
    if (cache) x_ = x;
    return y;
  }

  // Accumulates parameter gradients for trainable parameters; returns dL/dx
  // when need_input_grad is set (an empty matrix otherwise).
  Mat<Real> backward(const Mat<Real>& dy, bool need_input_grad = true) {
    if (weight_.trainable) weight_.grad.noalias() += x_.transpose() * dy;
    if (has_bias_ && bias_.trainable) bias_.grad.row(0) += dy.colwise().sum();
    Mat<Real> dx;
    if (need_input_grad) dx = dy * weight_.value.transpose();
    if (lora_) {
      Mat<Real> dyu = dy * lora_->up.value.transpose();  // rows x r
      if (lora_->up.trainable) lora_->up.grad.noalias() += lora_->scale * (lora_->xd.transpose() * dy);
      if (lora_->down.trainable) lora_->down.grad.noalias() += lora_->scale * (x_.transpose() * dyu);
      if (need_input_grad) dx.noalias() += lora_->scale * (dyu * lora_->down.value.transpose());
    }
    return dx;
  }

  void attach_lora(const std::string& name, int rank, double alpha, Rng& rng) {
    if (lora_) throw Error("LoRA already attached to " + weight_.name);
    lora_ = Lora<Real>{};
    lora_->down = Param<Real>(name + ".lora_down", in(), rank);
    lora_->up = Param<Real>(name + ".lora_up", rank, out());
    lora_->scale = static_cast<Real>(alpha / rank);
    fill_uniform(lora_->down.value, rng, 1.0 / std::sqrt(static_cast<double>(in())));
  }

  bool has_lora() const { return lora_.has_value(); }
  Lora<Real>* lora() { return lora_ ? &*lora_ : nullptr; }
  const Lora<Real>* lora() const { return lora_ ? &*lora_ : nullptr; }

  void collect(ParamList<Real>& base) {
    base.push_back(&weight_);
    if (has_bias_) base.push_back(&bias_);
  }
  void collect_lora(ParamList<Real>& out) {
    if (!lora_) return;
    out.push_back(&lora_->down);
    out.push_back(&lora_->up);
  }

  Param<Real>& weight() { return weight_; }
  Param<Real>& bias() { return bias_; }
  const Param<Real>& weight() const { return weight_; }

  void clear_cache() {
    x_.resize(0, 0);
    if (lora_) lora_->xd.resize(0, 0);
  }

 private:
  Param<Real> weight_;
  Param<Real> bias_;
  bool has_bias_ = true;
  std::optional<Lora<Real>> lora_;
  Mat<Real> x_;
};

// Row-wise layer normalization without affine parameters.
template <typename Real>
struct LayerNorm {
  static constexpr double kEps = 1e-6;
  Mat<Real> y;
  Eigen::Matrix<Real, Eigen::Dynamic, 1> inv_std;

  Mat<Real> forward(const Mat<Real>& x, bool cache) {
    const Eigen::Index n = x.cols();
    Mat<Real> out(x.rows(), n);
    Eigen::Matrix<Real, Eigen::Dynamic, 1> istd(x.rows());
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
      const Real mean = x.row(r).mean();
      const auto centered = x.row(r).array() - mean;
      const Real var = centered.square().sum() / static_cast<Real>(n);
      istd(r) = Real(1) / std::sqrt(var + static_cast<Real>(kEps));
      out.row(r) = centered * istd(r);
    }
    if (cache) {
      y = out;
      inv_std = std::move(istd);
    }
    return out;
  }

  Mat<Real> backward(const Mat<Real>& dy) const {
    const Real n = static_cast<Real>(dy.cols());
    Mat<Real> dx(dy.rows(), dy.cols());
    for (Eigen::Index r = 0; r < dy.rows(); ++r) {
      const Real mean_dy = dy.row(r).sum() / n;
      const Real mean_dyy = dy.row(r).dot(y.row(r)) / n;
      dx.row(r) = (dy.row(r).array() - mean_dy - y.row(r).array() * mean_dyy) * inv_std(r);
    }
    return dx;
  }
};

// tanh-approximated GELU.
template <typename Real>
struct Gelu {
  static constexpr Real kA = static_cast<Real>(0.7978845608028654);  // sqrt(2/pi)
  static constexpr Real kB = static_cast<Real>(0.044715);
  Mat<Real> x;
  Mat<Real> th;

  Mat<Real> forward(const Mat<Real>& in, bool cache) {
    Mat<Real> t = (kA * (in.array() + kB * in.array().cube())).tanh().matrix();
    Mat<Real> out = (Real(0.5) * in.array() * (Real(1) + t.array())).matrix();
    if (cache) {
      x = in;
      th = std::move(t);
    }
    return out;
  }

  Mat<Real> backward(const Mat<Real>& dy) const {
    const auto v = x.array();
    const auto t = th.array();
    const auto d_inner = kA * (Real(1) + Real(3) * kB * v.square());
    return (dy.array() * (Real(0.5) * (Real(1) + t) + Real(0.5) * v * (Real(1) - t.square()) * d_inner)).matrix();
  }
};

template <typename Real>
inline Real sigmoid(Real v) {
  return Real(1) / (Real(1) + std::exp(-v));
}

template <typename Real>
struct Silu {
  Mat<Real> x;

  Mat<Real> forward(const Mat<Real>& in, bool cache) {
    if (cache) x = in;
    return in.unaryExpr([](Real v) { return v * sigmoid(v); });
  }

  Mat<Real> backward(const Mat<Real>& dy) const {
    return dy.binaryExpr(x, [](Real g, Real v) {
      const Real s = sigmoid(v);
      return g * (s + v * s * (Real(1) - s));
    });
  }
};

// Numerically stable in-place row softmax.
template <typename Real>
void softmax_rows(Mat<Real>& s) {
  for (Eigen::Index r = 0; r < s.rows(); ++r) {
    auto row = s.row(r);
    const Real m = row.maxCoeff();
    row = (row.array() - m).exp();
    row /= row.sum();
  }
}

template <typename Dst, typename Src>
void cast_into(Dst& dst, const Src& src) {
  dst = src.template cast<typename Dst::Scalar>();
}

}  // namespace comogen::nn
