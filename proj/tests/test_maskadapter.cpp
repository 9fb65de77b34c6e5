#include <doctest.h>

#include "comogen/error.hpp"
#include "comogen/latentcodec.hpp"
#include "comogen/maskadapter.hpp"
#include "test_util.hpp"

using namespace comogen;
using namespace comogen::adapter;

namespace {

codec::LatentMask random_latent_mask(Rng& rng, int t, int h, int w) {
  const auto m = test::random_mask_sequence(rng, 4 * t, 4 * h, 4 * w, 0.05);
  return codec::Codec{}.latentize_mask(m);
}

}  // namespace

TEST_CASE("a fresh adapter produces an exactly zero residual") {
  Rng rng(1);
  MaskAdapter<float> a(AdapterConfig{}, 192, 4, 16, 16);
  a.init(rng);
  for (int k = 0; k < 5; ++k) {
    const auto dz = a.adapt(random_latent_mask(rng, 4, 16, 16));
    CHECK(dz.channels == 192);
    for (float v : dz.data) CHECK(v == 0.0f);
  }
}

TEST_CASE("an all-zero mask through zero biases gives zero") {
  Rng rng(2);
  MaskAdapter<float> a(AdapterConfig{}, 12, 2, 4, 4);
  a.init(rng);
  for (auto* p : a.parameters())
    if (p->name.find(".bias") == std::string::npos) nn::fill_normal(p->value, rng, 1.0);
  const std::vector<float> zero(2 * 4 * 4, 0.0f);
  CHECK(a.forward(zero, false).cwiseAbs().maxCoeff() == 0.0f);
  std::vector<float> one(2 * 4 * 4, 0.0f);
  one[5] = 0.5f;
  CHECK(a.forward(one, false).cwiseAbs().maxCoeff() > 0.0f);
}

TEST_CASE("conv3d is a same-padded local and shift-equivariant operator") {
  Rng rng(3);
  Conv3d<double> c("c", 1, 2, 3, 5, 6, 6);
  c.init_he(rng);
  auto delta = [](int t, int y, int x) {
    nn::Mat<double> m = nn::Mat<double>::Zero(5 * 6 * 6, 1);
    m((t * 6 + y) * 6 + x, 0) = 1.0;
    return m;
  };
  const auto a = c.forward(delta(2, 2, 2), false), b = c.forward(delta(2, 3, 3), false);
  CHECK(a.rows() == 5 * 6 * 6);
  for (int t = 0; t < 5; ++t)
    for (int y = 0; y < 6; ++y)
      for (int x = 0; x < 6; ++x) {
        const int n = (t * 6 + y) * 6 + x;
        const bool near = std::abs(t - 2) <= 1 && std::abs(y - 2) <= 1 && std::abs(x - 2) <= 1;
        if (!near) CHECK(a.row(n).cwiseAbs().maxCoeff() == 0.0);
        if (y + 1 < 6 && x + 1 < 6) {
          const int m = (t * 6 + y + 1) * 6 + x + 1;
          CHECK((a.row(n) - b.row(m)).cwiseAbs().maxCoeff() <= 1e-15);
        }
      }
  // A corner input: taps falling outside the grid are dropped, not wrapped.
  const auto corner = c.forward(delta(0, 0, 0), false);
  CHECK(corner.row((4 * 6 + 5) * 6 + 5).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("adapter gradients follow the residual") {
  Rng rng(4);
  MaskAdapter<double> a(AdapterConfig{4, 3, "silu"}, 3, 2, 3, 3);
  a.init(rng);
  for (auto* p : a.parameters()) nn::fill_normal(p->value, rng, 0.5);
  std::vector<float> mask(18);
  for (auto& v : mask) v = static_cast<float>(rng.uniform(-0.5, 0.5));
  nn::Mat<double> g(18, 3);
  nn::fill_normal(g, rng, 1.0);
  auto loss = [&]() { return (a.forward(mask, false).array() * g.array()).sum(); };
  for (auto* p : a.parameters()) p->zero_grad();
  a.forward(mask, true);
  a.backward(g);
  for (auto* p : a.parameters()) {
    const double h = 1e-5;
    double& x = p->value.data()[0];
    const double orig = x;
    x = orig + h;
    const double lp = loss();
    x = orig - h;
    const double lm = loss();
    x = orig;
    const double num = (lp - lm) / (2 * h);
    CHECK(p->grad.data()[0] == doctest::Approx(num).epsilon(1e-6));
  }
}

TEST_CASE("injection arithmetic") {
  codec::LatentGrid z(1, 1, 1, 2), dz(1, 1, 1, 2);
  z.data = {1.0f, -3.0f};
  dz.data = {4.0f, 2.0f};
  CHECK(inject(z, dz, 0.0) == z);
  codec::LatentGrid neg = z;
  for (auto& v : neg.data) v = -v;
  for (float v : inject(z, neg, 1.0).data) CHECK(v == 0.0f);
  const auto half = inject(z, dz, 0.5);
  CHECK(half.data == std::vector<float>{3.0f, -2.0f});
  CHECK_THROWS_AS(inject(z, dz, 1.5), RangeError);
  CHECK_THROWS_AS(inject(z, codec::LatentGrid(2, 1, 1, 2), 0.5), DimensionError);
}

TEST_CASE("adapter config parsing is strict") {
  AdapterConfig c;
  CHECK(AdapterConfig::from_json(c.to_json()).hidden == c.hidden);
  auto j = c.to_json();
  j["hiden"] = 8;
  CHECK_THROWS_AS(AdapterConfig::from_json(j), FormatError);
  j = c.to_json();
  j["activation"] = "relu";
  CHECK_THROWS(AdapterConfig::from_json(j));
  Rng rng(1);
  MaskAdapter<float> a(c, 12, 2, 4, 4);
  a.init(rng);
  CHECK_THROWS_AS(a.forward(std::vector<float>(5), false), DimensionError);
}
