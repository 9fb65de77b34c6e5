#pragma once

// Brute-force reference computations used by the unit tests and the
// acceptance runner. Written directly from the metric definitions, without
// reusing any library code path.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <vector>

#include "comogen/rng.hpp"
#include "comogen/video.hpp"

namespace oracle {

using comogen::MaskFrame;

inline bool on(const MaskFrame& m, int y, int x) {
  return y >= 0 && y < m.height && x >= 0 && x < m.width && m.data[static_cast<std::size_t>(y) * m.width + x] != 0;
}

inline double jaccard(const MaskFrame& a, const MaskFrame& b) {
  long inter = 0, uni = 0;
  for (int y = 0; y < a.height; ++y)
    for (int x = 0; x < a.width; ++x) {
      inter += on(a, y, x) && on(b, y, x);
      uni += on(a, y, x) || on(b, y, x);
    }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / uni;
}

struct Point {
  int y, x;
};

// Pixels of the mask touching the outside through a 4-neighbour. Pixels
// beyond the frame edge count as outside.
inline std::vector<Point> boundary_points(const MaskFrame& m) {
  std::vector<Point> out;
  for (int y = 0; y < m.height; ++y)
    for (int x = 0; x < m.width; ++x) {
      if (!on(m, y, x)) continue;
      if (!on(m, y - 1, x) || !on(m, y + 1, x) || !on(m, y, x - 1) || !on(m, y, x + 1)) out.push_back({y, x});
    }
  return out;
}

// Fraction of `from` points with a `to` point at Chebyshev distance <= tol,
// by exhaustive pairwise search.
inline double matched(const std::vector<Point>& from, const std::vector<Point>& to, int tol) {
  if (from.empty()) return 0.0;
  long hit = 0;
  for (const auto& p : from) {
    int best = 1 << 30;
    for (const auto& q : to) best = std::min(best, std::max(std::abs(p.y - q.y), std::abs(p.x - q.x)));
    hit += best <= tol;
  }
  return static_cast<double>(hit) / from.size();
}

inline double contour_f(const MaskFrame& pred, const MaskFrame& gt, int tol) {
  const auto bp = boundary_points(pred), bg = boundary_points(gt);
  if (bp.empty() && bg.empty()) return 1.0;
  if (bp.empty() || bg.empty()) return 0.0;
  const double p = matched(bp, bg, tol), r = matched(bg, bp, tol);
  return p + r > 0.0 ? 2.0 * p * r / (p + r) : 0.0;
}

// Random blob-ish mask: a union of a few rectangles and discs, or sparse
// noise, so both compact and ragged boundaries occur.
inline MaskFrame random_mask(comogen::Rng& rng, int h, int w) {
  MaskFrame m(h, w);
  const int kind = rng.uniform_int(0, 3);
  if (kind == 0) {
    for (auto& v : m.data) v = rng.uniform() < 0.3 ? 1 : 0;
    return m;
  }
  const int parts = rng.uniform_int(0, 3);
  for (int k = 0; k < parts; ++k) {
    const double cy = rng.uniform(0, h), cx = rng.uniform(0, w), r = rng.uniform(0.5, std::max(h, w) / 2.0);
    const bool disc = rng.uniform() < 0.5;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const double dy = y + 0.5 - cy, dx = x + 0.5 - cx;
        const bool in = disc ? dx * dx + dy * dy <= r * r : std::abs(dx) <= r && std::abs(dy) <= r * 0.6;
        if (in) m.data[static_cast<std::size_t>(y) * w + x] = 1;
      }
  }
  return m;
}

}  // namespace oracle
