#pragma once

#include <span>
#include <string>

#include <json.hpp>

#include "comogen/latentcodec.hpp"
#include "comogen/nn.hpp"

namespace comogen::adapter {

using nn::Mat;

struct AdapterConfig {
  int hidden = 32;
  int kernel = 3;
  std::string activation = "silu";

  void validate() const;
  nlohmann::json to_json() const;
  static AdapterConfig from_json(const nlohmann::json& j);
};

// Stride-1, same-padded 3D convolution over a T x H x W token grid stored
// token-major (rows = (t * H + y) * W + x, columns = channels).
template <typename Real>
class Conv3d {
 public:
  Conv3d() = default;
  Conv3d(const std::string& name, int in_channels, int out_channels, int kernel, int frames, int height, int width);

  void init_he(Rng& rng);
  Mat<Real> forward(const Mat<Real>& x, bool cache);
  // Returns dL/dx if requested.
  Mat<Real> backward(const Mat<Real>& dy, bool need_input_grad);
  void collect(nn::ParamList<Real>& out) { linear_.collect(out); }

 private:
  Mat<Real> im2col(const Mat<Real>& x) const;
  Mat<Real> col2im(const Mat<Real>& cols) const;

  int in_ = 0, out_ = 0, kernel_ = 3, frames_ = 0, height_ = 0, width_ = 0;
  nn::Linear<Real> linear_;
};

// conv -> SiLU -> conv -> SiLU -> per-position linear to the latent channel
// count. The final projection starts at zero so the residual is a no-op.
template <typename Real>
class MaskAdapter {
 public:
  MaskAdapter(const AdapterConfig& cfg, int latent_channels, int frames, int height, int width);

  void init(Rng& rng);
  const AdapterConfig& config() const { return cfg_; }

  // normalized: T' * H' * W' values in token order. Returns Nv x C.
  Mat<Real> forward(std::span<const float> normalized, bool cache);
  void backward(const Mat<Real>& d_out);

  codec::LatentGrid adapt(const codec::LatentMask& mask);

  nn::ParamList<Real> parameters();
  std::size_t parameter_count();
  void set_trainable(bool on);

  nn::Linear<Real>& projection() { return proj_; }

 private:
  AdapterConfig cfg_;
  int channels_, frames_, height_, width_;
  Conv3d<Real> conv1_, conv2_;
  nn::Silu<Real> act1_, act2_;
  nn::Linear<Real> proj_;
};

// Z + w * dZ.
codec::LatentGrid inject(const codec::LatentGrid& z, const codec::LatentGrid& dz, double w);

}  // namespace comogen::adapter
