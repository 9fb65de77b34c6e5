#pragma once

#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "comogen/video.hpp"

namespace comogen::metrics {

// |pred & gt| / |pred | gt|; two empty masks score 1.
double jaccard(const MaskFrame& pred, const MaskFrame& gt);

// Boundary pixels: mask pixels with a 4-neighbour outside the mask (pixels
// beyond the frame border count as outside).
MaskFrame boundary(const MaskFrame& m);

struct ContourScore {
  double precision = 0.0;
  double recall = 0.0;
  double f = 0.0;
};

// Boundary F-measure with a Chebyshev matching tolerance in pixels.
ContourScore contour_score(const MaskFrame& pred, const MaskFrame& gt, int tolerance = 1);
double contour_f(const MaskFrame& pred, const MaskFrame& gt, int tolerance = 1);
double jf(const MaskFrame& pred, const MaskFrame& gt, int tolerance = 1);

struct SequenceScore {
  double j = 0.0;
  double f = 0.0;
  double jf = 0.0;
};

// Frame-averaged J, F and J&F over two aligned sequences.
SequenceScore sequence_jf(const MaskSequence& pred, const MaskSequence& gt, int tolerance = 1);
// Mean per-frame J.
double mean_iou(const MaskSequence& pred, const MaskSequence& gt);

// 1 where the Euclidean RGB distance to `color` is below `threshold`.
MaskSequence extract_subject_masks(const VideoTensor& video, Rgb color, double threshold = 50.0);

inline constexpr double kPsnrIdentical = std::numeric_limits<double>::infinity();
// Value substituted for +inf when PSNR is averaged.
inline constexpr double kPsnrCap = 100.0;

// PSNR (MAX = 255) over two equally sized byte buffers; +inf when equal.
double psnr(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b);
double psnr(const VideoTensor& a, const VideoTensor& b);

// SSIM with a uniform 7x7 window and k1 = 0.01, k2 = 0.03 on one plane.
double ssim_plane(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b, int height, int width,
                  int stride = 1, int offset = 0, int window = 7);
// Channel-averaged SSIM of one RGB frame pair (frame f of each video).
double ssim_frame(const VideoTensor& a, const VideoTensor& b, int frame, int window = 7);
// Frame-averaged SSIM.
double ssim(const VideoTensor& a, const VideoTensor& b, int window = 7);

struct SampleMetrics {
  std::string id;
  double j = 0.0;
  double f = 0.0;
  double jf = 0.0;
  double psnr = 0.0;
  double ssim = 0.0;
  double mask_iou = 0.0;
};

struct MetricReport {
  std::vector<SampleMetrics> samples;
  SampleMetrics mean;
  nlohmann::json config;

  void finalize();
  nlohmann::json to_json() const;
  std::string table() const;
};

void check_same_shape(const MaskFrame& a, const MaskFrame& b);

}  // namespace comogen::metrics
