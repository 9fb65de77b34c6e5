#include <doctest.h>

#include <cmath>
#include <fstream>
#include <numbers>
#include <set>

#include "comogen/error.hpp"
#include "comogen/evalmetrics.hpp"
#include "comogen/synthworld.hpp"
#include "test_util.hpp"

using namespace comogen;
using namespace comogen::world;

namespace {

SceneTrace hand_scene(std::vector<ObjectSpec> objs, std::vector<BodyState> start, int frames) {
  return simulate_from(objs, start, frames, 64, 64);
}

}  // namespace

TEST_CASE("free disc moves by its velocity every frame") {
  ObjectSpec disc{Shape::disc, 0, 5.0, 25.0};
  const auto tr = hand_scene({disc}, {{{20.0, 32.0}, {2.0, 0.0}}}, 6);
  for (int f = 0; f + 1 < 6; ++f) {
    CHECK(tr.states[f + 1][0].position.x - tr.states[f][0].position.x == 2.0);
    CHECK(tr.states[f + 1][0].position.y == tr.states[f][0].position.y);
  }
  CHECK(tr.events.empty());
}

TEST_CASE("equal-mass head-on collision exchanges velocities") {
  ObjectSpec a{Shape::disc, 0, 5.0, 25.0}, b{Shape::disc, 1, 5.0, 25.0};
  const auto tr = hand_scene({a, b}, {{{20.0, 32.0}, {1.5, 0.0}}, {{44.0, 32.0}, {-1.5, 0.0}}}, 12);
  REQUIRE(!tr.events.empty());
  const auto& ev = tr.events.front();
  CHECK(ev.other == 1);
  const int after = ev.frame + 1;
  CHECK(tr.states[after][0].velocity.x == doctest::Approx(-1.5).epsilon(1e-12));
  CHECK(tr.states[after][1].velocity.x == doctest::Approx(1.5).epsilon(1e-12));
  CHECK(std::abs(tr.states[after][0].velocity.y) < 1e-12);
}

TEST_CASE("positions stay inside the arena and free flight is exact") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto tr = simulate_scene(seed, 3, 32, 64, 64);
    for (int f = 0; f < tr.frames; ++f)
      for (std::size_t i = 0; i < tr.objects.size(); ++i) {
        const auto& s = tr.states[f][i];
        const double r = tr.objects[i].radius;
        CHECK(s.position.x >= r - 1e-9);
        CHECK(s.position.y >= r - 1e-9);
        CHECK(s.position.x <= tr.width - r + 1e-9);
        CHECK(s.position.y <= tr.height - r + 1e-9);
      }
    std::set<int> event_frames;
    for (const auto& ev : tr.events) event_frames.insert(ev.frame);
    for (int f = 0; f + 1 < tr.frames; ++f)
      for (int i = 0; i < static_cast<int>(tr.objects.size()); ++i) {
        if (event_frames.count(f)) continue;
        const auto& s0 = tr.states[f][i];
        const auto& s1 = tr.states[f + 1][i];
        CHECK(s1.position.x == s0.position.x + s0.velocity.x);
        CHECK(s1.position.y == s0.position.y + s0.velocity.y);
      }
  }
}

TEST_CASE("seed 7 with three objects: momentum change equals the summed wall impulses") {
  const auto tr = simulate_scene(7, 3, 32, 64, 64);
  double ix = 0.0, iy = 0.0;
  for (const auto& ev : tr.events) {
    ix += ev.impulse_a.x;
    iy += ev.impulse_a.y;
    if (ev.other >= 0) {
      ix += ev.impulse_b.x;
      iy += ev.impulse_b.y;
      CHECK(ev.impulse_a.x == -ev.impulse_b.x);
      CHECK(ev.impulse_a.y == -ev.impulse_b.y);
    }
  }
  const Vec2 p0 = tr.momentum(0), p1 = tr.momentum(31);
  CHECK(std::abs(p1.x - p0.x - ix) <= 1e-6 * std::max(1.0, std::abs(p0.x)));
  CHECK(std::abs(p1.y - p0.y - iy) <= 1e-6 * std::max(1.0, std::abs(p0.y)));
  const bool walls = std::any_of(tr.events.begin(), tr.events.end(), [](const auto& e) { return e.other < 0; });
  if (!walls) {
    CHECK(std::abs(p1.x - p0.x) <= 1e-6 * std::max(1.0, std::abs(p0.x)));
    CHECK(std::abs(p1.y - p0.y) <= 1e-6 * std::max(1.0, std::abs(p0.y)));
  }
}

TEST_CASE("pair collisions conserve momentum and energy on 100 scenes") {
  int pairs = 0;
  for (std::uint64_t seed = 100; seed < 200; ++seed) {
    const auto tr = simulate_scene(seed, 2 + static_cast<int>(seed % 3), 16, 64, 64);
    for (const auto& ev : tr.events) {
      CHECK(test::rel_err(ev.energy_after, ev.energy_before) <= 1e-6);
      if (ev.other < 0) continue;
      ++pairs;
      for (int k = 0; k < 2; ++k) {
        const double scale = std::max(1.0, std::abs(ev.momentum_before[k]));
        CHECK(std::abs(ev.momentum_after[k] - ev.momentum_before[k]) <= 1e-6 * scale);
      }
    }
    CHECK(test::rel_err(tr.kinetic_energy(tr.frames - 1), tr.kinetic_energy(0)) <= 1e-6);
  }
  CHECK(pairs > 0);
}

TEST_CASE("the subject is fast and other objects slow") {
  WorldConfig cfg;
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    const auto tr = simulate_scene(seed, 3, 16, 64, 64, cfg);
    for (std::size_t i = 0; i < tr.objects.size(); ++i) {
      const auto& v = tr.states[0][i].velocity;
      const double speed = std::hypot(v.x, v.y);
      if (static_cast<int>(i) == tr.subject_index) {
        CHECK(speed >= cfg.subject_min_speed - 1e-9);
        CHECK(speed <= cfg.subject_max_speed + 1e-9);
      } else {
        CHECK(speed <= cfg.other_max_speed + 1e-9);
      }
    }
  }
}

TEST_CASE("an impossible placement is reported") {
  WorldConfig cfg;
  cfg.min_radius = cfg.max_radius = 20.0;
  cfg.placement_attempts = 50;
  CHECK_THROWS_AS(simulate_scene(3, 4, 8, 64, 64, cfg), UnsatisfiableScene);
}

TEST_CASE("rendered disc area is close to pi r^2") {
  ObjectSpec disc{Shape::disc, 2, 6.0, 36.0};
  const auto tr = hand_scene({disc}, {{{30.0, 30.0}, {1.0, 0.5}}}, 8);
  const auto r = render(tr);
  const double area = std::numbers::pi * 36.0, perimeter = 2.0 * std::numbers::pi * 6.0;
  for (int f = 0; f < 8; ++f) CHECK(std::abs(static_cast<double>(r.mask.frame(f).count()) - area) <= perimeter);
}

TEST_CASE("the subject is drawn on top of overlapping objects") {
  ObjectSpec subject{Shape::square, 0, 7.0, 49.0}, other{Shape::disc, 3, 7.0, 49.0};
  SceneTrace tr;
  tr.objects = {subject, other};
  tr.states = {{{{30.0, 30.0}, {0.0, 0.0}}, {{36.0, 30.0}, {0.0, 0.0}}}};
  tr.frames = 1;
  tr.width = tr.height = 64;
  tr.subject_index = 0;
  const auto r = render(tr);
  const Rgb sc = palette()[0];
  int overlap = 0;
  for (int y = 0; y < 64; ++y)
    for (int x = 0; x < 64; ++x) {
      if (!r.mask.at(0, y, x)) continue;
      const std::uint8_t* p = r.video.pixel(0, y, x);
      CHECK(Rgb{p[0], p[1], p[2]} == sc);
      overlap += std::hypot(x + 0.5 - 36.0, y + 0.5 - 30.0) < 7.0;
    }
  CHECK(overlap > 0);
}

TEST_CASE("frames use only flat palette colors") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto tr = simulate_scene(seed, 4, 8, 64, 64);
    const auto r = render(tr);
    for (int f = 0; f < 4; ++f) {
      std::set<Rgb> colors;
      for (int y = 0; y < 64; ++y)
        for (int x = 0; x < 64; ++x) {
          const std::uint8_t* p = r.video.pixel(f, y, x);
          colors.insert({p[0], p[1], p[2]});
        }
      CHECK(colors.size() <= tr.objects.size() + 1);
      for (const auto& c : colors)
        CHECK((c == background_color() || std::find(palette().begin(), palette().end(), c) != palette().end()));
    }
    CHECK(metrics::extract_subject_masks(r.video, palette()[tr.objects[tr.subject_index].color_id]) == r.mask);
  }
}

TEST_CASE("captions name the subject color then shape") {
  SceneTrace tr = simulate_scene(1, 2, 8, 64, 64);
  tr.objects[tr.subject_index].shape = Shape::disc;
  tr.objects[tr.subject_index].color_id = 0;
  Caption c = make_caption(tr);
  CHECK(c.token_ids == std::vector<int>{vocab::token("red"), vocab::token("disc"), 0, 0, 0, 0, 0, 0});
  CHECK(c.subject_token_pos == 0);
  CHECK(std::string(color_name(0)) == "red");

  const int blue = vocab::token("blue");
  tr.objects[tr.subject_index].shape = Shape::square;
  tr.objects[tr.subject_index].color_id = blue - vocab::kFirstColor;
  c = make_caption(tr);
  CHECK(c.token_ids == std::vector<int>{blue, vocab::token("square"), 0, 0, 0, 0, 0, 0});
}

TEST_CASE("caption vocabulary round trip on 100 scenes") {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const auto c = make_caption(simulate_scene(seed, 2 + static_cast<int>(seed % 3), 8, 64, 64));
    CHECK(tokenize(detokenize(c)) == c);
  }
  CHECK_THROWS_AS(tokenize("purple disc"), VocabularyError);
}

TEST_CASE("dataset generation is deterministic and self-consistent") {
  test::TempDir a, b;
  DatasetConfig cfg;
  cfg.train_samples = 3;
  cfg.val_samples = 1;
  cfg.seed = 1;
  const auto sa = generate_dataset(cfg, a.path);
  generate_dataset(cfg, b.path);
  CHECK(sa.samples.size() == 4);
  CHECK(test::tree_digest(a.path) == test::tree_digest(b.path));

  const auto manifest = test::read_json(a.path / "manifest.json");
  CHECK(manifest.at("samples").size() == 4);
  const auto all = load_dataset(a.path);
  CHECK(all.size() == 4);
  for (const auto& s : all) {
    CHECK(s.mask.frames == s.video.frames);
    CHECK(s.mask.height == s.video.height);
    CHECK(s.mask.width == s.video.width);
  }
  CHECK(load_dataset(a.path, "val").size() == 1);
  CHECK(sample_seed(1, "val", 0) != sample_seed(1, "train", 0));
}

TEST_CASE("incomplete samples are rejected on load") {
  test::TempDir d;
  DatasetConfig cfg;
  cfg.train_samples = 1;
  cfg.val_samples = 1;
  const auto s = generate_dataset(cfg, d.path);
  std::filesystem::remove(d.path / s.samples[0].dir / "done.marker");
  CHECK_THROWS_AS(load_dataset(d.path), FormatError);
}
