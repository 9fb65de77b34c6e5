#include <doctest.h>

#include <limits>

#include "comogen/error.hpp"
#include "comogen/flowmatch.hpp"

using namespace comogen;
using namespace comogen::flow;

namespace {

LatentGrid random_grid(std::uint64_t seed, int c = 3, int t = 2, int h = 2, int w = 2) {
  return gaussian_latent(c, t, h, w, seed);
}

}  // namespace

TEST_CASE("interpolation endpoints and midpoint") {
  const auto x0 = random_grid(1), eps = random_grid(2);
  CHECK(interp(x0, eps, 0.0) == x0);
  CHECK(interp(x0, eps, 1.0) == eps);
  const auto mid = interp(x0, eps, 0.5);
  for (std::size_t i = 0; i < mid.size(); ++i) CHECK(mid.data[i] == (x0.data[i] + eps.data[i]) / 2);
}

TEST_CASE("loss of an exact oracle is zero and of a zero model is the target energy") {
  FlowBatch b;
  b.x0 = {random_grid(3), random_grid(4)};
  b.eps = {random_grid(5), random_grid(6)};
  b.t = {0.3, 0.8};
  int calls = 0;
  const VelocityFn oracle = [&](const LatentGrid&, double, int) {
    const int k = calls++;
    return velocity_target(b.x0[k], b.eps[k]);
  };
  CHECK(fm_loss(oracle, b) == 0.0);

  const VelocityFn zero = [](const LatentGrid& z, double, int) { return LatentGrid(z.channels, z.frames, z.height, z.width); };
  double e = 0.0, n = 0.0;
  for (int k = 0; k < 2; ++k)
    for (std::size_t i = 0; i < b.x0[k].size(); ++i) {
      const double d = b.x0[k].data[i] - b.eps[k].data[i];
      e += d * d;
      n += 1;
    }
  CHECK(fm_loss(zero, b) == doctest::Approx(e / n).epsilon(1e-12));
}

TEST_CASE("loss on a two-token one-channel instance by hand") {
  FlowBatch b;
  LatentGrid x0(1, 1, 1, 2), eps(1, 1, 1, 2);
  x0.data = {1.0f, -2.0f};
  eps.data = {0.5f, 1.0f};
  b.x0 = {x0};
  b.eps = {eps};
  b.t = {0.25};
  // Model returns twice its input: v = 2 * ((1-t) x0 + t eps).
  const VelocityFn m = [](const LatentGrid& z, double, int) {
    LatentGrid v = z;
    for (auto& a : v.data) a *= 2.0f;
    return v;
  };
  const double z0 = 0.75 * 1.0 + 0.25 * 0.5, z1 = 0.75 * -2.0 + 0.25 * 1.0;
  const double d0 = 2 * z0 - 0.5, d1 = 2 * z1 - (-3.0);
  CHECK(fm_loss(m, b) == doctest::Approx((d0 * d0 + d1 * d1) / 2).epsilon(1e-7));

  LatentGrid dz(1, 1, 1, 2);
  dz.data = {1.0f, 1.0f};
  const double e0 = 2 * (z0 + 0.5) - 0.5, e1 = 2 * (z1 + 0.5) + 3.0;
  const std::vector<LatentGrid> r{dz};
  CHECK(fm_loss(m, b, r, 0.5) == doctest::Approx((e0 * e0 + e1 * e1) / 2).epsilon(1e-7));
}

TEST_CASE("malformed batches are rejected") {
  FlowBatch b;
  b.x0 = {random_grid(1)};
  b.eps = {random_grid(2, 3, 2, 2, 3)};
  b.t = {0.5};
  CHECK_THROWS_AS(b.validate(), DimensionError);
  b.eps = {random_grid(2)};
  b.t = {1.5};
  CHECK_THROWS_AS(b.validate(), RangeError);
}

TEST_CASE("cosine weights hit the endpoints exactly") {
  for (int tau : {2, 3, 5, 20, 100}) {
    const auto w = schedule_weights(tau, InjectionSchedule::cosine);
    CHECK(w.front() == 1.0);
    CHECK(w.back() == 0.0);
    for (int s = 1; s < tau; ++s)
      if (tau >= 3) CHECK(w[s] < w[s - 1]);
  }
  CHECK(cosine_weight(1, 3) == 0.5);
  CHECK(schedule_weights(2, InjectionSchedule::cosine) == std::vector<double>{1.0, 0.0});
  CHECK_THROWS_AS(cosine_weight(0, 1), RangeError);
  CHECK_THROWS_AS(cosine_weight(5, 5), RangeError);
  CHECK(schedule_weights(4, InjectionSchedule::constant) == std::vector<double>(4, 1.0));
}

TEST_CASE("Euler sampling with a constant velocity oracle recovers x0") {
  const auto x0 = random_grid(10, 4, 2, 3, 3), eps = random_grid(11, 4, 2, 3, 3);
  const VelocityFn oracle = [&](const LatentGrid&, double, int) { return velocity_target(x0, eps); };
  for (int tau : {2, 3, 20, 50}) {
    const auto w = schedule_weights(tau, InjectionSchedule::zero);
    const auto out = integrate(oracle, eps, nullptr, tau, w);
    for (std::size_t i = 0; i < out.size(); ++i) CHECK(std::abs(out.data[i] - x0.data[i]) <= 1e-5);
  }
}

TEST_CASE("zero weights make the residual a no-op and the model sees the documented times") {
  const auto eps = random_grid(20), dz = random_grid(21);
  std::vector<double> seen;
  const VelocityFn m = [&](const LatentGrid& z, double t, int) {
    seen.push_back(t);
    LatentGrid v = z;
    for (auto& a : v.data) a = -a * static_cast<float>(t) + 0.1f;
    return v;
  };
  const auto zero = schedule_weights(5, InjectionSchedule::zero);
  const auto a = integrate(m, eps, nullptr, 5, zero);
  const auto b = integrate(m, eps, &dz, 5, zero);
  CHECK(a == b);
  REQUIRE(seen.size() == 10);
  for (int s = 0; s < 5; ++s) CHECK(seen[s] == 1.0 - s / 5.0);
  const auto c = integrate(m, eps, &dz, 5, schedule_weights(5, InjectionSchedule::constant));
  CHECK(!(c == a));
}

TEST_CASE("a diverging model is reported with its step") {
  const auto eps = random_grid(30);
  const VelocityFn m = [](const LatentGrid& z, double, int s) {
    LatentGrid v = z;
    for (auto& a : v.data) a = s == 2 ? std::numeric_limits<float>::infinity() : 0.0f;
    return v;
  };
  try {
    integrate(m, eps, nullptr, 4, schedule_weights(4, InjectionSchedule::cosine));
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(e.step() == 2);
  }
}

TEST_CASE("training weight follows the sampling schedule direction") {
  CHECK(training_weight(0.3, TrainingWeighting::constant) == 1.0);
  CHECK(training_weight(1.0, TrainingWeighting::cosine) == 1.0);
  CHECK(training_weight(0.0, TrainingWeighting::cosine) == doctest::Approx(0.0));
  CHECK_THROWS_AS(parse_training_weighting("linear"), RangeError);
}
