#pragma once

#include <functional>
#include <string>
#include <vector>

#include "comogen/evalmetrics.hpp"
#include "comogen/pipeline.hpp"
#include "comogen/synthworld.hpp"

namespace comogen::harness {

struct ScoreOptions {
  double color_threshold = 50.0;
  int tolerance = 1;
};

// Metrics of one generated video against its reference sample. The
// subject mask is extracted from the generated video by color; J/F compare
// it with the reference mask, mask_iou with the control mask.
metrics::SampleMetrics score_sample(const VideoTensor& generated, const VideoTensor& reference,
                                    const MaskSequence& reference_mask, const MaskSequence& control, Rgb subject,
                                    const ScoreOptions& opt, const std::string& id);

using VideoSink = std::function<void(std::size_t, const VideoTensor&)>;

// Generates one video per sample (noise seed derived from seed and index)
// conditioned on the sample's own mask and scores it.
metrics::MetricReport evaluate_pipeline(Pipeline& p, const std::vector<world::Sample>& samples,
                                        const GenerateOptions& base, std::uint64_t seed, const ScoreOptions& opt,
                                        const VideoSink& sink = {});

// Dataset-format metadata for a generated sample.
nlohmann::json generated_meta(const world::Sample& ref, const GenerateOptions& opt, bool mask_used);

// Per-frame rigid motion of a first-frame mask: rotation about the mask
// centroid (degrees, turning +x toward +y), then translation in pixels.
struct RigidTransform {
  double dx = 0.0;
  double dy = 0.0;
  double angle_deg = 0.0;
};

std::vector<RigidTransform> parse_transforms(const nlohmann::json& j);

// Frame f is `first` moved by transforms[f] (nearest-pixel resampling).
MaskSequence rigid_mask_sequence(const MaskFrame& first, std::span<const RigidTransform> transforms);

}  // namespace comogen::harness
