#include "comogen/evalmetrics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>

#include "comogen/error.hpp"

namespace comogen::metrics {

void check_same_shape(const MaskFrame& a, const MaskFrame& b) {
  if (a.height != b.height || a.width != b.width || a.data.size() != b.data.size())
    throw DimensionError("mask shapes differ: " + std::to_string(a.height) + "x" + std::to_string(a.width) + " vs " +
                         std::to_string(b.height) + "x" + std::to_string(b.width));
}

double jaccard(const MaskFrame& pred, const MaskFrame& gt) {
  check_same_shape(pred, gt);
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < pred.data.size(); ++i) {
    const bool p = pred.data[i] != 0, g = gt.data[i] != 0;
    inter += p && g;
    uni += p || g;
  }
  if (uni == 0) return 1.0;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

MaskFrame boundary(const MaskFrame& m) {
  MaskFrame b(m.height, m.width);
  auto inside = [&](int y, int x) { return y >= 0 && y < m.height && x >= 0 && x < m.width && m.at(y, x) != 0; };
  for (int y = 0; y < m.height; ++y)
    for (int x = 0; x < m.width; ++x)
      if (inside(y, x) && (!inside(y - 1, x) || !inside(y + 1, x) || !inside(y, x - 1) || !inside(y, x + 1)))
        b.at(y, x) = 1;
  return b;
}

namespace {

// Chebyshev dilation by `r` via separable running max.
MaskFrame dilate(const MaskFrame& m, int r) {
  if (r <= 0) return m;
  MaskFrame rows(m.height, m.width), out(m.height, m.width);
  for (int y = 0; y < m.height; ++y)
    for (int x = 0; x < m.width; ++x) {
      std::uint8_t v = 0;
      for (int k = std::max(0, x - r); k <= std::min(m.width - 1, x + r) && !v; ++k) v = m.at(y, k);
      rows.at(y, x) = v;
    }
  for (int y = 0; y < m.height; ++y)
    for (int x = 0; x < m.width; ++x) {
      std::uint8_t v = 0;
      for (int k = std::max(0, y - r); k <= std::min(m.height - 1, y + r) && !v; ++k) v = rows.at(k, x);
      out.at(y, x) = v;
    }
  return out;
}

double matched_fraction(const MaskFrame& from, const MaskFrame& to_dilated) {
  std::size_t total = 0, hit = 0;
  for (std::size_t i = 0; i < from.data.size(); ++i) {
    if (!from.data[i]) continue;
    ++total;
    hit += to_dilated.data[i] != 0;
  }
  return total == 0 ? 0.0 : static_cast<double>(hit) / static_cast<double>(total);
}

}  // namespace

ContourScore contour_score(const MaskFrame& pred, const MaskFrame& gt, int tolerance) {
  check_same_shape(pred, gt);
  if (tolerance < 0) throw RangeError("contour tolerance must be >= 0");
  const MaskFrame bp = boundary(pred), bg = boundary(gt);
  const std::size_t np = bp.count(), ng = bg.count();
  ContourScore s;
  if (np == 0 && ng == 0) return {1.0, 1.0, 1.0};
  if (np == 0 || ng == 0) return s;
  s.precision = matched_fraction(bp, dilate(bg, tolerance));
  s.recall = matched_fraction(bg, dilate(bp, tolerance));
  s.f = s.precision + s.recall > 0.0 ? 2.0 * s.precision * s.recall / (s.precision + s.recall) : 0.0;
  return s;
}

double contour_f(const MaskFrame& pred, const MaskFrame& gt, int tolerance) {
  return contour_score(pred, gt, tolerance).f;
}

double jf(const MaskFrame& pred, const MaskFrame& gt, int tolerance) {
  return 0.5 * (jaccard(pred, gt) + contour_f(pred, gt, tolerance));
}

SequenceScore sequence_jf(const MaskSequence& pred, const MaskSequence& gt, int tolerance) {
  if (pred.frames != gt.frames || pred.height != gt.height || pred.width != gt.width)
    throw DimensionError("mask sequences differ in shape");
  SequenceScore s;
  if (pred.frames == 0) return s;
  for (int f = 0; f < pred.frames; ++f) {
    const MaskFrame a = pred.frame(f), b = gt.frame(f);
    s.j += jaccard(a, b);
    s.f += contour_f(a, b, tolerance);
  }
  s.j /= pred.frames;
  s.f /= pred.frames;
  s.jf = 0.5 * (s.j + s.f);
  return s;
}

double mean_iou(const MaskSequence& pred, const MaskSequence& gt) {
  if (pred.frames != gt.frames || pred.height != gt.height || pred.width != gt.width)
    throw DimensionError("mask sequences differ in shape");
  double sum = 0.0;
  for (int f = 0; f < pred.frames; ++f) sum += jaccard(pred.frame(f), gt.frame(f));
  return pred.frames ? sum / pred.frames : 0.0;
}

MaskSequence extract_subject_masks(const VideoTensor& video, Rgb color, double threshold) {
  MaskSequence m(video.frames, video.height, video.width);
  const double t2 = threshold * threshold;
  for (int f = 0; f < video.frames; ++f)
    for (int y = 0; y < video.height; ++y)
      for (int x = 0; x < video.width; ++x) {
        const std::uint8_t* p = video.pixel(f, y, x);
        double d2 = 0.0;
        for (int c = 0; c < 3; ++c) {
          const double d = static_cast<double>(p[c]) - color[c];
          d2 += d * d;
        }
        m.at(f, y, x) = d2 < t2 ? 1 : 0;
      }
  return m;
}

double psnr(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b) {
  if (a.size() != b.size()) throw DimensionError("psnr: buffers differ in size");
  if (a.empty()) throw DimensionError("psnr: empty buffers");
  double se = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - b[i];
    se += d * d;
  }
  if (se == 0.0) return kPsnrIdentical;
  const double mse = se / static_cast<double>(a.size());
  return 10.0 * std::log10(255.0 * 255.0 / mse);
}

double psnr(const VideoTensor& a, const VideoTensor& b) {
  if (a.frames != b.frames || a.height != b.height || a.width != b.width) throw DimensionError("psnr: video shapes differ");
  return psnr(std::span<const std::uint8_t>(a.data), std::span<const std::uint8_t>(b.data));
}

double ssim_plane(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b, int height, int width, int stride,
                  int offset, int window) {
  if (a.size() != b.size()) throw DimensionError("ssim: buffers differ in size");
  if (window < 1 || window > height || window > width) throw DimensionError("ssim: window larger than the frame");
  constexpr double kL = 255.0;
  const double c1 = (0.01 * kL) * (0.01 * kL);
  const double c2 = (0.03 * kL) * (0.03 * kL);
  const double n = static_cast<double>(window) * window;
  double total = 0.0;
  int count = 0;
  auto at = [&](std::span<const std::uint8_t> s, int y, int x) {
    return static_cast<double>(s[(static_cast<std::size_t>(y) * width + x) * stride + offset]);
  };
  for (int y0 = 0; y0 + window <= height; ++y0)
    for (int x0 = 0; x0 + window <= width; ++x0) {
      double sa = 0, sb = 0, saa = 0, sbb = 0, sab = 0;
      for (int y = y0; y < y0 + window; ++y)
        for (int x = x0; x < x0 + window; ++x) {
          const double va = at(a, y, x), vb = at(b, y, x);
          sa += va;
          sb += vb;
          saa += va * va;
          sbb += vb * vb;
          sab += va * vb;
        }
      const double ma = sa / n, mb = sb / n;
      // Population moments over the window.
      const double va = std::max(0.0, saa / n - ma * ma);
      const double vb = std::max(0.0, sbb / n - mb * mb);
      const double cov = sab / n - ma * mb;
      total += ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
      ++count;
    }
  return std::clamp(total / count, 0.0, 1.0);
}

double ssim_frame(const VideoTensor& a, const VideoTensor& b, int frame, int window) {
  if (a.height != b.height || a.width != b.width) throw DimensionError("ssim: frame shapes differ");
  const std::span<const std::uint8_t> fa(a.data.data() + a.index(frame, 0, 0), a.frame_size());
  const std::span<const std::uint8_t> fb(b.data.data() + b.index(frame, 0, 0), b.frame_size());
  double s = 0.0;
  for (int c = 0; c < 3; ++c) s += ssim_plane(fa, fb, a.height, a.width, 3, c, window);
  return s / 3.0;
}

double ssim(const VideoTensor& a, const VideoTensor& b, int window) {
  if (a.frames != b.frames || a.height != b.height || a.width != b.width) throw DimensionError("ssim: video shapes differ");
  double s = 0.0;
  for (int f = 0; f < a.frames; ++f) s += ssim_frame(a, b, f, window);
  return a.frames ? s / a.frames : 0.0;
}

void MetricReport::finalize() {
  mean = SampleMetrics{"mean"};
  if (samples.empty()) return;
  for (const auto& s : samples) {
    mean.j += s.j;
    mean.f += s.f;
    mean.jf += s.jf;
    mean.psnr += std::isinf(s.psnr) ? kPsnrCap : s.psnr;
    mean.ssim += s.ssim;
    mean.mask_iou += s.mask_iou;
  }
  const double n = static_cast<double>(samples.size());
  mean.j /= n;
  mean.f /= n;
  mean.jf /= n;
  mean.psnr /= n;
  mean.ssim /= n;
  mean.mask_iou /= n;
}

namespace {

nlohmann::json psnr_json(double v) {
  if (std::isinf(v)) return "inf";
  return v;
}

nlohmann::json sample_json(const SampleMetrics& s) {
  return {{"id", s.id},   {"J", s.j},   {"F", s.f}, {"J&F", s.jf}, {"PSNR", psnr_json(s.psnr)},
          {"SSIM", s.ssim}, {"mask_iou", s.mask_iou}};
}

}  // namespace

nlohmann::json MetricReport::to_json() const {
  nlohmann::json per = nlohmann::json::array();
  for (const auto& s : samples) per.push_back(sample_json(s));
  return {{"samples", per}, {"mean", sample_json(mean)}, {"config", config}};
}

std::string MetricReport::table() const {
  std::ostringstream out;
  out << std::left << std::setw(14) << "sample" << std::right << std::setw(9) << "SSIM" << std::setw(9) << "PSNR"
      << std::setw(9) << "J" << std::setw(9) << "F" << std::setw(9) << "J&F" << std::setw(10) << "maskIoU" << '\n';
  auto row = [&](const SampleMetrics& s) {
    out << std::left << std::setw(14) << s.id << std::right << std::fixed << std::setprecision(4) << std::setw(9)
        << s.ssim << std::setprecision(2) << std::setw(9) << (std::isinf(s.psnr) ? kPsnrCap : s.psnr)
        << std::setprecision(4) << std::setw(9) << s.j << std::setw(9) << s.f << std::setw(9) << s.jf
        << std::setw(10) << s.mask_iou << '\n';
  };
  for (const auto& s : samples) row(s);
  row(mean);
  return out.str();
}

}  // namespace comogen::metrics
