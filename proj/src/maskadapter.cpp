#include "comogen/maskadapter.hpp"

#include <cmath>

#include "comogen/error.hpp"
#include "comogen/mmdit.hpp"

namespace comogen::adapter {

void AdapterConfig::validate() const {
  if (hidden < 1) throw RangeError("adapter hidden channels must be >= 1");
  if (kernel < 1 || kernel % 2 == 0) throw RangeError("adapter kernel must be odd and >= 1");
  if (activation != "silu") throw RangeError("unsupported adapter activation '" + activation + "'");
}

nlohmann::json AdapterConfig::to_json() const {
  return {{"hidden", hidden}, {"kernel", kernel}, {"activation", activation}};
}

AdapterConfig AdapterConfig::from_json(const nlohmann::json& j) {
  AdapterConfig c;
  for (const auto& [key, value] : j.items()) {
    if (key == "hidden")
      c.hidden = value.get<int>();
    else if (key == "kernel")
      c.kernel = value.get<int>();
    else if (key == "activation")
      c.activation = value.get<std::string>();
    else
      throw FormatError("unknown key adapter." + key);
  }
  c.validate();
  return c;
}

template <typename Real>
Conv3d<Real>::Conv3d(const std::string& name, int in_channels, int out_channels, int kernel, int frames, int height,
                     int width)
    : in_(in_channels),
      out_(out_channels),
      kernel_(kernel),
      frames_(frames),
      height_(height),
      width_(width),
      linear_(name, in_channels * kernel * kernel * kernel, out_channels) {}

template <typename Real>
void Conv3d<Real>::init_he(Rng& rng) {
  nn::fill_uniform(linear_.weight().value, rng, std::sqrt(6.0 / linear_.in()));
  linear_.bias().value.setZero();
}

template <typename Real>
Mat<Real> Conv3d<Real>::im2col(const Mat<Real>& x) const {
  const int n = frames_ * height_ * width_;
  const int r = kernel_ / 2;
  Mat<Real> cols = Mat<Real>::Zero(n, in_ * kernel_ * kernel_ * kernel_);
  for (int t = 0; t < frames_; ++t)
    for (int y = 0; y < height_; ++y)
      for (int x0 = 0; x0 < width_; ++x0) {
        const int row = (t * height_ + y) * width_ + x0;
        int k = 0;
        for (int kt = -r; kt <= r; ++kt)
          for (int ky = -r; ky <= r; ++ky)
            for (int kx = -r; kx <= r; ++kx, ++k) {
              const int tt = t + kt, yy = y + ky, xx = x0 + kx;
              if (tt < 0 || tt >= frames_ || yy < 0 || yy >= height_ || xx < 0 || xx >= width_) continue;
              cols.block(row, k * in_, 1, in_) = x.row((tt * height_ + yy) * width_ + xx);
            }
      }
  return cols;
}

template <typename Real>
Mat<Real> Conv3d<Real>::col2im(const Mat<Real>& cols) const {
  const int r = kernel_ / 2;
  Mat<Real> dx = Mat<Real>::Zero(frames_ * height_ * width_, in_);
  for (int t = 0; t < frames_; ++t)
    for (int y = 0; y < height_; ++y)
      for (int x0 = 0; x0 < width_; ++x0) {
        const int row = (t * height_ + y) * width_ + x0;
        int k = 0;
        for (int kt = -r; kt <= r; ++kt)
          for (int ky = -r; ky <= r; ++ky)
            for (int kx = -r; kx <= r; ++kx, ++k) {
              const int tt = t + kt, yy = y + ky, xx = x0 + kx;
              if (tt < 0 || tt >= frames_ || yy < 0 || yy >= height_ || xx < 0 || xx >= width_) continue;
              dx.row((tt * height_ + yy) * width_ + xx) += cols.block(row, k * in_, 1, in_);
            }
      }
  return dx;
}

template <typename Real>
Mat<Real> Conv3d<Real>::forward(const Mat<Real>& x, bool cache) {
  if (x.rows() != frames_ * height_ * width_ || x.cols() != in_) throw DimensionError("conv3d input has the wrong shape");
  return linear_.forward(im2col(x), cache);
}

template <typename Real>
Mat<Real> Conv3d<Real>::backward(const Mat<Real>& dy, bool need_input_grad) {
  const Mat<Real> dcols = linear_.backward(dy, need_input_grad);
  if (!need_input_grad) return {};
  return col2im(dcols);
}

template <typename Real>
MaskAdapter<Real>::MaskAdapter(const AdapterConfig& cfg, int latent_channels, int frames, int height, int width)
    : cfg_(cfg), channels_(latent_channels), frames_(frames), height_(height), width_(width) {
  cfg_.validate();
  conv1_ = Conv3d<Real>("conv1", 1, cfg.hidden, cfg.kernel, frames, height, width);
  conv2_ = Conv3d<Real>("conv2", cfg.hidden, cfg.hidden, cfg.kernel, frames, height, width);
  proj_ = nn::Linear<Real>("proj", cfg.hidden, latent_channels);
}

template <typename Real>
void MaskAdapter<Real>::init(Rng& rng) {
  conv1_.init_he(rng);
  conv2_.init_he(rng);
  proj_.weight().value.setZero();
  proj_.bias().value.setZero();
}

template <typename Real>
Mat<Real> MaskAdapter<Real>::forward(std::span<const float> normalized, bool cache) {
  const int n = frames_ * height_ * width_;
  if (static_cast<int>(normalized.size()) != n)
    throw DimensionError("adapter mask must have " + std::to_string(n) + " latent cells, got " +
                         std::to_string(normalized.size()));
  Mat<Real> m(n, 1);
  for (int i = 0; i < n; ++i) m(i, 0) = static_cast<Real>(normalized[i]);
  const Mat<Real> h1 = act1_.forward(conv1_.forward(m, cache), cache);
  const Mat<Real> h2 = act2_.forward(conv2_.forward(h1, cache), cache);
  return proj_.forward(h2, cache);
}

template <typename Real>
void MaskAdapter<Real>::backward(const Mat<Real>& d_out) {
  const Mat<Real> dh2 = act2_.backward(proj_.backward(d_out));
  const Mat<Real> dh1 = act1_.backward(conv2_.backward(dh2, true));
  conv1_.backward(dh1, false);
}

template <typename Real>
codec::LatentGrid MaskAdapter<Real>::adapt(const codec::LatentMask& mask) {
  if (mask.frames != frames_ || mask.height != height_ || mask.width != width_)
    throw DimensionError("latent mask shape does not match the adapter grid");
  const Mat<Real> out = forward(mask.normalized, false);
  return mmdit::from_tokens<Real>(out, frames_, height_, width_);
}

template <typename Real>
nn::ParamList<Real> MaskAdapter<Real>::parameters() {
  nn::ParamList<Real> out;
  conv1_.collect(out);
  conv2_.collect(out);
  proj_.collect(out);
  return out;
}

template <typename Real>
std::size_t MaskAdapter<Real>::parameter_count() {
  std::size_t n = 0;
  for (auto* p : parameters()) n += static_cast<std::size_t>(p->size());
  return n;
}

template <typename Real>
void MaskAdapter<Real>::set_trainable(bool on) {
  for (auto* p : parameters()) p->trainable = on;
}

codec::LatentGrid inject(const codec::LatentGrid& z, const codec::LatentGrid& dz, double w) {
  if (!z.same_shape(dz)) throw DimensionError("inject: residual shape does not match the latent");
  if (!(w >= 0.0 && w <= 1.0)) throw RangeError("inject: weight must lie in [0, 1]");
  codec::LatentGrid out = z;
  const float wf = static_cast<float>(w);
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += wf * dz.data[i];
  return out;
}

template class Conv3d<float>;
template class Conv3d<double>;
template class MaskAdapter<float>;
template class MaskAdapter<double>;

}  // namespace comogen::adapter
