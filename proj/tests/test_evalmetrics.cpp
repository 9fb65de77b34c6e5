#include <doctest.h>

#include <cmath>

#include "comogen/error.hpp"
#include "comogen/evalmetrics.hpp"
#include "comogen/synthworld.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace comogen;
using namespace comogen::metrics;

namespace {

MaskFrame rect(int h, int w, int y0, int x0, int y1, int x1) {
  MaskFrame m(h, w);
  for (int y = y0; y < y1; ++y)
    for (int x = x0; x < x1; ++x) m.at(y, x) = 1;
  return m;
}

}  // namespace

TEST_CASE("jaccard on hand-counted cases") {
  const MaskFrame a = rect(4, 4, 0, 0, 4, 2);
  CHECK(jaccard(a, a) == 1.0);
  CHECK(jaccard(rect(4, 4, 0, 0, 1, 1), rect(4, 4, 3, 3, 4, 4)) == 0.0);
  CHECK(jaccard(a, rect(4, 4, 0, 0, 4, 3)) == doctest::Approx(8.0 / 12.0).epsilon(1e-15));
  CHECK(jaccard(MaskFrame(4, 4), MaskFrame(4, 4)) == 1.0);
  CHECK_THROWS_AS(jaccard(MaskFrame(4, 4), MaskFrame(4, 5)), DimensionError);
}

TEST_CASE("contour F on hand cases") {
  const MaskFrame a = rect(8, 8, 2, 2, 6, 6);
  for (int tol : {0, 1, 3}) CHECK(contour_f(a, a, tol) == 1.0);
  MaskFrame p(8, 8), q(8, 8);
  p.at(0, 0) = 1;
  q.at(7, 7) = 1;
  CHECK(contour_f(p, q, 0) == 0.0);
  // Shifted by one pixel: every boundary pixel is within tolerance 1.
  CHECK(contour_f(a, rect(8, 8, 2, 3, 6, 7), 1) == 1.0);
  CHECK(contour_f(a, rect(8, 8, 2, 3, 6, 7), 0) < 1.0);
  CHECK_THROWS_AS(contour_f(a, a, -1), RangeError);
}

TEST_CASE("boundary pixels include those on the frame edge") {
  MaskFrame full(3, 3);
  for (auto& v : full.data) v = 1;
  const MaskFrame b = boundary(full);
  CHECK(b.count() == 8);
  CHECK(b.at(1, 1) == 0);
}

TEST_CASE("J and F agree with brute-force oracles on 200 random masks") {
  Rng rng(12345);
  for (int i = 0; i < 200; ++i) {
    const int h = rng.uniform_int(1, 16), w = rng.uniform_int(1, 16);
    const MaskFrame a = oracle::random_mask(rng, h, w), b = oracle::random_mask(rng, h, w);
    const int tol = rng.uniform_int(0, 2);
    CHECK(jaccard(a, b) == oracle::jaccard(a, b));
    CHECK(std::abs(contour_f(a, b, tol) - oracle::contour_f(a, b, tol)) <= 1e-9);
    const double combined = 0.5 * (oracle::jaccard(a, b) + oracle::contour_f(a, b, tol));
    CHECK(std::abs(metrics::jf(a, b, tol) - combined) <= 1e-9);
  }
}

TEST_CASE("J&F of a half-overlap case is the mean of the two oracles") {
  const MaskFrame a = rect(10, 10, 2, 0, 8, 6), b = rect(10, 10, 2, 3, 8, 9);
  const double expect = 0.5 * (oracle::jaccard(a, b) + oracle::contour_f(a, b, 1));
  CHECK(metrics::jf(a, b, 1) == doctest::Approx(expect).epsilon(1e-12));
  CHECK(metrics::jf(a, a, 1) == 1.0);
}

TEST_CASE("sequence scores average over frames") {
  Rng rng(3);
  const auto p = test::random_mask_sequence(rng, 4, 8, 8), g = test::random_mask_sequence(rng, 4, 8, 8);
  double j = 0, f = 0;
  for (int t = 0; t < 4; ++t) {
    j += oracle::jaccard(p.frame(t), g.frame(t));
    f += oracle::contour_f(p.frame(t), g.frame(t), 1);
  }
  const auto s = sequence_jf(p, g, 1);
  CHECK(s.j == doctest::Approx(j / 4).epsilon(1e-12));
  CHECK(s.f == doctest::Approx(f / 4).epsilon(1e-12));
  CHECK(s.jf == doctest::Approx(0.5 * (j + f) / 4).epsilon(1e-12));
  CHECK(mean_iou(p, g) == doctest::Approx(j / 4).epsilon(1e-12));
}

TEST_CASE("color extraction recovers rendered masks and tolerates small noise") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto tr = world::simulate_scene(seed, 3, 8, 64, 64);
    const auto r = world::render(tr);
    const Rgb c = world::palette()[tr.objects[tr.subject_index].color_id];
    CHECK(extract_subject_masks(r.video, c) == r.mask);

    Rng rng(seed);
    VideoTensor noisy = r.video;
    // Per-channel offset of at most 14 keeps the RGB distance below 25.
    for (auto& v : noisy.data) {
      const int d = rng.uniform_int(-14, 14);
      v = static_cast<std::uint8_t>(std::clamp(static_cast<int>(v) + d, 0, 255));
    }
    CHECK(extract_subject_masks(noisy, c, 50.0) == r.mask);
  }
  VideoTensor bg(2, 8, 8);
  for (std::size_t i = 0; i < bg.data.size(); i += 3) {
    bg.data[i] = world::background_color()[0];
    bg.data[i + 1] = world::background_color()[1];
    bg.data[i + 2] = world::background_color()[2];
  }
  CHECK(extract_subject_masks(bg, world::palette()[0]).data == std::vector<std::uint8_t>(2 * 8 * 8, 0));
}

TEST_CASE("PSNR and SSIM closed forms") {
  Rng rng(1);
  const VideoTensor a = test::random_video(rng, 2, 16, 16);
  CHECK(std::isinf(psnr(a, a)));
  CHECK(ssim(a, a) == doctest::Approx(1.0).epsilon(1e-12));

  std::vector<std::uint8_t> z(400, 0), o = z;
  o[5] = 255;
  CHECK(psnr(z, o) == doctest::Approx(10.0 * std::log10(400.0)).epsilon(1e-12));

  VideoTensor black(1, 16, 16), white(1, 16, 16);
  std::fill(white.data.begin(), white.data.end(), 255);
  const double c1 = (0.01 * 255) * (0.01 * 255);
  CHECK(ssim(black, white) == doctest::Approx(c1 / (255.0 * 255.0 + c1)).epsilon(1e-12));
  CHECK(ssim(black, white) == doctest::Approx(9.99900009999e-05).epsilon(1e-6));
}

TEST_CASE("report averages cap infinite PSNR and serialize it as a string") {
  MetricReport r;
  r.samples.push_back({"a", 1, 1, 1, kPsnrIdentical, 1, 1});
  r.samples.push_back({"b", 0, 0, 0, 20.0, 0.5, 0});
  r.finalize();
  CHECK(r.mean.psnr == doctest::Approx((kPsnrCap + 20.0) / 2));
  CHECK(r.mean.jf == 0.5);
  const auto j = r.to_json();
  CHECK(j.dump().find("\"inf\"") != std::string::npos);
}
