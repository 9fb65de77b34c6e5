#include <doctest.h>

#include "comogen/error.hpp"
#include "comogen/latentcodec.hpp"
#include "test_util.hpp"

using namespace comogen;
using namespace comogen::codec;

TEST_CASE("shape arithmetic for the default video") {
  Codec c;
  const auto z = c.encode_video(VideoTensor(16, 64, 64));
  CHECK(z.channels == 192);
  CHECK(z.frames == 4);
  CHECK(z.height == 16);
  CHECK(z.width == 16);
  CHECK(c.channels() == 192);
}

TEST_CASE("an all-zero video encodes to -1 everywhere") {
  const auto z = Codec{}.encode_video(VideoTensor(8, 16, 16));
  for (float v : z.data) CHECK(v == -1.0f);
}

TEST_CASE("round trip is byte exact on 50 random videos") {
  Rng rng(99);
  for (int i = 0; i < 50; ++i) {
    Codec c{rng.uniform_int(1, 4)};
    const int t = 4 * rng.uniform_int(1, 3), h = c.patch * rng.uniform_int(1, 4), w = c.patch * rng.uniform_int(1, 4);
    const VideoTensor v = test::random_video(rng, t, h, w);
    CHECK(c.decode_video(c.encode_video(v)) == v);
  }
}

TEST_CASE("channel layout follows the documented folding") {
  Rng rng(5);
  Codec c;
  const VideoTensor v = test::random_video(rng, 8, 8, 8);
  const auto z = c.encode_video(v);
  for (int dt = 0; dt < 4; ++dt)
    for (int dy = 0; dy < 4; ++dy)
      for (int dx = 0; dx < 4; ++dx)
        for (int ch = 0; ch < 3; ++ch) {
          const int channel = ((dt * 4 + dy) * 4 + dx) * 3 + ch;
          CHECK(z.at(channel, 1, 1, 0) == pixel_to_latent(v.pixel(4 + dt, 4 + dy, dx)[ch]));
        }
}

TEST_CASE("decode clamps out-of-range latents") {
  LatentGrid z(12, 1, 1, 1);
  z.data[0] = 5.0f;
  z.data[1] = -5.0f;
  const auto v = Codec{1}.decode_video(z);
  CHECK(v.data[0] == 255);
  CHECK(v.data[1] == 0);
  for (int u = 0; u < 256; ++u) CHECK(latent_to_pixel(pixel_to_latent(static_cast<std::uint8_t>(u))) == u);
}

TEST_CASE("first-frame slice repeats the first frame over one window") {
  Rng rng(8);
  Codec c;
  const VideoTensor v = test::random_video(rng, 8, 16, 16);
  const auto z = c.encode_first_frame(v);
  CHECK(z.frames == 1);
  VideoTensor rep(4, 16, 16);
  for (int f = 0; f < 4; ++f) std::copy_n(v.data.begin(), v.frame_size(), rep.data.begin() + f * v.frame_size());
  CHECK(z == c.encode_video(rep));
}

TEST_CASE("shapes not divisible by the factors are rejected") {
  Codec c;
  CHECK_THROWS_AS(c.encode_video(VideoTensor(6, 16, 16)), DimensionError);
  CHECK_THROWS_AS(c.encode_video(VideoTensor(8, 15, 16)), DimensionError);
  CHECK_THROWS_AS(c.latentize_mask(MaskSequence(8, 16, 14)), DimensionError);
}

TEST_CASE("mask latentization uses temporal OR and zero mean") {
  Codec c;
  MaskSequence m(4, 4, 4);
  m.at(2, 1, 1) = 1;
  auto lm = c.latentize_mask(m);
  CHECK(lm.raw.size() == 1);
  CHECK(lm.raw[0] == 1);

  const auto empty = c.latentize_mask(MaskSequence(8, 16, 16));
  for (auto v : empty.raw) CHECK(v == 0);
  for (auto v : empty.normalized) CHECK(v == 0.0f);

  MaskSequence half(8, 16, 16);
  for (int f = 0; f < 8; ++f)
    for (int y = 0; y < 16; ++y)
      for (int x = 0; x < 8; ++x) half.at(f, y, x) = 1;
  lm = c.latentize_mask(half);
  CHECK(lm.area_fraction() == 0.5);
  for (int t = 0; t < 2; ++t)
    for (int y = 0; y < 4; ++y)
      for (int x = 0; x < 4; ++x) {
        CHECK(lm.raw[lm.index(t, y, x)] == (x < 2 ? 1 : 0));
        CHECK(lm.normalized[lm.index(t, y, x)] == (x < 2 ? 0.5f : -0.5f));
      }
}
