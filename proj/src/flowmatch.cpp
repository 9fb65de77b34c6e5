#include "comogen/flowmatch.hpp"

#include <cmath>
#include <numbers>

#include "comogen/error.hpp"
#include "comogen/rng.hpp"

namespace comogen::flow {

LatentGrid interp(const LatentGrid& x0, const LatentGrid& eps, double t) {
  if (!x0.same_shape(eps)) throw DimensionError("interp: x0 and eps differ in shape");
  if (!(t >= 0.0 && t <= 1.0)) throw RangeError("interp: t must lie in [0, 1]");
  LatentGrid out = x0;
  if (t == 0.0) return out;
  if (t == 1.0) return eps;
  const double a = 1.0 - t;
  for (std::size_t i = 0; i < out.data.size(); ++i)
    out.data[i] = static_cast<float>(a * x0.data[i] + t * eps.data[i]);
  return out;
}

LatentGrid velocity_target(const LatentGrid& x0, const LatentGrid& eps) {
  if (!x0.same_shape(eps)) throw DimensionError("velocity_target: x0 and eps differ in shape");
  LatentGrid out = x0;
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = x0.data[i] - eps.data[i];
  return out;
}

void FlowBatch::validate() const {
  if (x0.size() != eps.size() || x0.size() != t.size()) throw DimensionError("flow batch fields differ in length");
  for (std::size_t i = 0; i < x0.size(); ++i) {
    if (!x0[i].same_shape(eps[i])) throw DimensionError("flow batch: x0 and eps differ in shape");
    if (!(t[i] >= 0.0 && t[i] <= 1.0)) throw RangeError("flow batch: t must lie in [0, 1]");
  }
}

double fm_loss(const VelocityFn& model, const FlowBatch& batch, std::span<const LatentGrid> dz, double w) {
  batch.validate();
  if (!dz.empty() && dz.size() != batch.x0.size()) throw DimensionError("fm_loss: one residual per example required");
  if (batch.x0.empty()) throw DimensionError("fm_loss: empty batch");
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t b = 0; b < batch.x0.size(); ++b) {
    LatentGrid xt = interp(batch.x0[b], batch.eps[b], batch.t[b]);
    if (!dz.empty()) {
      if (!dz[b].same_shape(xt)) throw DimensionError("fm_loss: residual shape does not match the latent");
      for (std::size_t i = 0; i < xt.data.size(); ++i) xt.data[i] += static_cast<float>(w) * dz[b].data[i];
    }
    const LatentGrid v = model(xt, batch.t[b], -1);
    if (!v.same_shape(xt)) throw DimensionError("fm_loss: model output shape does not match the latent");
    for (std::size_t i = 0; i < v.data.size(); ++i) {
      const float target = batch.x0[b].data[i] - batch.eps[b].data[i];
      const double e = static_cast<double>(v.data[i]) - target;
      total += e * e;
    }
    count += v.data.size();
  }
  return total / static_cast<double>(count);
}

double cosine_weight(int s, int tau) {
  if (tau < 2) throw RangeError("cosine_weight: tau must be >= 2");
  if (s < 0 || s >= tau) throw RangeError("cosine_weight: step index out of range");
  if (s == 0) return 1.0;
  if (s == tau - 1) return 0.0;
  const double ts = static_cast<double>(s) / (tau - 1);
  return 0.5 * (1.0 + std::cos(std::numbers::pi * ts));
}

InjectionSchedule parse_schedule(const std::string& name) {
  if (name == "cosine") return InjectionSchedule::cosine;
  if (name == "constant") return InjectionSchedule::constant;
  if (name == "zero") return InjectionSchedule::zero;
  throw RangeError("unknown injection schedule '" + name + "'");
}

std::string schedule_name(InjectionSchedule s) {
  switch (s) {
    case InjectionSchedule::cosine:
      return "cosine";
    case InjectionSchedule::constant:
      return "constant";
    case InjectionSchedule::zero:
      return "zero";
  }
  return "cosine";
}

std::vector<double> schedule_weights(int tau, InjectionSchedule schedule) {
  if (tau < 2) throw RangeError("schedule: tau must be >= 2");
  std::vector<double> w(tau);
  for (int s = 0; s < tau; ++s) {
    switch (schedule) {
      case InjectionSchedule::cosine:
        w[s] = cosine_weight(s, tau);
        break;
      case InjectionSchedule::constant:
        w[s] = 1.0;
        break;
      case InjectionSchedule::zero:
        w[s] = 0.0;
        break;
    }
  }
  return w;
}

TrainingWeighting parse_training_weighting(const std::string& name) {
  if (name == "constant") return TrainingWeighting::constant;
  if (name == "cosine") return TrainingWeighting::cosine;
  throw RangeError("unknown training weighting '" + name + "'");
}

double training_weight(double t, TrainingWeighting mode) {
  if (mode == TrainingWeighting::constant) return 1.0;
  // Sampling visits t = 1 first (weight 1) and t -> 0 last (weight 0).
  return 0.5 * (1.0 + std::cos(std::numbers::pi * (1.0 - t)));
}

LatentGrid integrate(const VelocityFn& model, const LatentGrid& eps, const LatentGrid* dz, int tau,
                     std::span<const double> weights) {
  if (tau < 2) throw RangeError("sample: tau must be >= 2");
  if (static_cast<int>(weights.size()) != tau) throw DimensionError("sample: one weight per step required");
  if (dz && !dz->same_shape(eps)) throw DimensionError("sample: residual shape does not match the latent");
  LatentGrid z = eps;
  LatentGrid z_in = eps;
  const float dt = 1.0f / static_cast<float>(tau);
  for (int s = 0; s < tau; ++s) {
    const double t = 1.0 - static_cast<double>(s) / tau;
    z_in.data = z.data;
    if (dz && weights[s] != 0.0) {
      const float w = static_cast<float>(weights[s]);
      for (std::size_t i = 0; i < z_in.data.size(); ++i) z_in.data[i] += w * dz->data[i];
    }
    const LatentGrid v = model(z_in, t, s);
    if (!v.same_shape(z)) throw DimensionError("sample: model output shape does not match the latent");
    for (std::size_t i = 0; i < z.data.size(); ++i) {
      z.data[i] += dt * v.data[i];
      if (!std::isfinite(z.data[i])) throw NumericError("sample: non-finite latent at step " + std::to_string(s), s);
    }
  }
  return z;
}

LatentGrid gaussian_latent(int channels, int frames, int height, int width, std::uint64_t seed) {
  LatentGrid z(channels, frames, height, width);
  Rng rng(seed);
  for (auto& v : z.data) v = static_cast<float>(rng.normal());
  return z;
}

}  // namespace comogen::flow
