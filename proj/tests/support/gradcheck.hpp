#pragma once

// Finite-difference check of the full conditioned model (mask adapter,
// residual injection, backbone with LoRA) in double precision.

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "comogen/maskadapter.hpp"
#include "comogen/mmdit.hpp"

namespace gradcheck {

using comogen::Rng;
using comogen::nn::Mat;

struct Probe {
  std::string name;
  long index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel = 0.0;
};

struct Result {
  std::vector<Probe> probes;
  double worst = 0.0;
};

inline comogen::mmdit::ModelConfig small_config() {
  comogen::mmdit::ModelConfig c;
  c.depth = 3;
  c.width = 8;
  c.heads = 2;
  c.text_length = 4;
  c.vocab_size = 9;
  c.mlp_ratio = 2;
  c.time_features = 8;
  c.latent_frames = 2;
  c.latent_height = 3;
  c.latent_width = 3;
  c.channels = 6;
  return c;
}

inline Result run(int n_probes, std::uint64_t seed) {
  using namespace comogen;
  const auto cfg = small_config();
  Rng rng(seed);
  mmdit::Mmdit<double> model(cfg);
  model.init(rng);
  model.attach_lora({1}, 2, 4.0, rng);
  adapter::AdapterConfig acfg;
  acfg.hidden = 4;
  adapter::MaskAdapter<double> ad(acfg, cfg.channels, cfg.latent_frames, cfg.latent_height, cfg.latent_width);
  ad.init(rng);

  // Zero-initialized parts would make most gradients vanish; use random values.
  nn::ParamList<double> params = model.base_parameters();
  for (auto* p : model.lora_parameters()) params.push_back(p);
  for (auto* p : ad.parameters()) params.push_back(p);
  for (auto* p : params) {
    nn::fill_normal(p->value, rng, 0.3);
    p->trainable = true;
  }

  const int nv = cfg.video_tokens(), hw = cfg.latent_height * cfg.latent_width;
  Mat<double> x0(nv, cfg.channels), eps(nv, cfg.channels), cond(hw, cfg.channels);
  for (auto* m : {&x0, &eps, &cond}) nn::fill_normal(*m, rng, 1.0);
  std::vector<float> mask(nv);
  for (auto& v : mask) v = rng.uniform() < 0.4 ? 0.6f : -0.4f;
  const std::vector<int> tokens{1, 7, 0, 0};
  const double t = 0.37, w = 0.8;
  const Mat<double> target = x0 - eps;

  auto loss = [&](bool grad) {
    mmdit::ForwardOptions fo;
    fo.cache = grad;
    const Mat<double> dz = ad.forward(mask, grad);
    const Mat<double> input = (1.0 - t) * x0 + t * eps + w * dz;
    const Mat<double> v = model.forward(input, cond, tokens, t, fo);
    const Mat<double> diff = v - target;
    if (grad) {
      const Mat<double> dlat = model.backward(2.0 * diff / static_cast<double>(diff.size()));
      ad.backward(w * dlat);
    }
    return diff.squaredNorm() / static_cast<double>(diff.size());
  };

  for (auto* p : params) p->zero_grad();
  loss(true);

  Result r;
  const double h = 1e-4;
  for (int k = 0; k < n_probes; ++k) {
    auto* p = params[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(params.size()) - 1))];
    const long i = rng.uniform_int(0, static_cast<int>(p->size()) - 1);
    double& x = p->value.data()[i];
    const double orig = x;
    auto at = [&](double dx) {
      x = orig + dx;
      return loss(false);
    };
    // Fourth-order central difference.
    const double num = (-at(2 * h) + 8 * at(h) - 8 * at(-h) + at(-2 * h)) / (12 * h);
    x = orig;
    Probe pr{p->name, i, p->grad.data()[i], num, 0.0};
    pr.rel = std::abs(pr.analytic - pr.numeric) / std::max({std::abs(pr.analytic), std::abs(pr.numeric), 1e-8});
    r.worst = std::max(r.worst, pr.rel);
    r.probes.push_back(pr);
  }
  return r;
}

}  // namespace gradcheck
