#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "comogen/latentcodec.hpp"

namespace comogen::flow {

using codec::LatentGrid;

// (1 - t) x0 + t eps.
LatentGrid interp(const LatentGrid& x0, const LatentGrid& eps, double t);

// Regression target of the velocity field: x0 - eps.
LatentGrid velocity_target(const LatentGrid& x0, const LatentGrid& eps);

struct FlowBatch {
  std::vector<LatentGrid> x0;
  std::vector<LatentGrid> eps;
  std::vector<double> t;

  void validate() const;
};

// Velocity model evaluated at latent z, time t, sampling step index `step`
// (-1 outside of sampling).
using VelocityFn = std::function<LatentGrid(const LatentGrid& z, double t, int step)>;

// Mean squared error between model(x_t + w * dz) and x0 - eps, averaged over
// batch and elements. dz, when non-empty, holds one residual per example.
double fm_loss(const VelocityFn& model, const FlowBatch& batch, std::span<const LatentGrid> dz = {}, double w = 1.0);

// 0.5 * (1 + cos(pi * s / (tau - 1))).
double cosine_weight(int s, int tau);

enum class InjectionSchedule { cosine, constant, zero };

InjectionSchedule parse_schedule(const std::string& name);
std::string schedule_name(InjectionSchedule s);
std::vector<double> schedule_weights(int tau, InjectionSchedule schedule);

// How the residual is weighted while training: always fully applied, or
// the cosine weight of the sampling position that time t corresponds to.
enum class TrainingWeighting { constant, cosine };
TrainingWeighting parse_training_weighting(const std::string& name);
double training_weight(double t, TrainingWeighting mode);

// Euler integration from t = 1 to t = 0 in tau uniform steps. At step s the
// model sees z + w_s * dz at t = 1 - s / tau and z advances by v / tau.
// dz may be null. Throws NumericError naming the step on a non-finite latent.
LatentGrid integrate(const VelocityFn& model, const LatentGrid& eps, const LatentGrid* dz, int tau,
                     std::span<const double> weights);

LatentGrid gaussian_latent(int channels, int frames, int height, int width, std::uint64_t seed);

}  // namespace comogen::flow
