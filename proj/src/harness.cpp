#include "comogen/harness.hpp"

#include <cmath>
#include <numbers>

#include "comogen/error.hpp"

namespace comogen::harness {

metrics::SampleMetrics score_sample(const VideoTensor& generated, const VideoTensor& reference,
                                    const MaskSequence& reference_mask, const MaskSequence& control, Rgb subject,
                                    const ScoreOptions& opt, const std::string& id) {
  metrics::SampleMetrics m;
  m.id = id;
  const MaskSequence extracted = metrics::extract_subject_masks(generated, subject, opt.color_threshold);
  const auto s = metrics::sequence_jf(extracted, reference_mask, opt.tolerance);
  m.j = s.j;
  m.f = s.f;
  m.jf = s.jf;
  m.psnr = metrics::psnr(generated, reference);
  m.ssim = metrics::ssim(generated, reference);
  m.mask_iou = metrics::mean_iou(extracted, control);
  return m;
}

metrics::MetricReport evaluate_pipeline(Pipeline& p, const std::vector<world::Sample>& samples,
                                        const GenerateOptions& base, std::uint64_t seed, const ScoreOptions& opt,
                                        const VideoSink& sink) {
  metrics::MetricReport report;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    GenerateOptions go = base;
    go.noise_seed = Rng::derive(seed, i);
    const VideoTensor v = p.generate_video(s.video, s.caption, &s.mask, go);
    report.samples.push_back(score_sample(v, s.video, s.mask, s.mask, s.subject_color, opt, s.dir));
    if (sink) sink(i, v);
  }
  report.finalize();
  return report;
}

nlohmann::json generated_meta(const world::Sample& ref, const GenerateOptions& opt, bool mask_used) {
  nlohmann::json objects = nlohmann::json::array();
  for (const auto& o : ref.objects)
    objects.push_back({{"shape", world::shape_name(o.shape)},
                       {"color_id", o.color_id},
                       {"radius", o.radius},
                       {"mass", o.mass}});
  return {{"seed", ref.seed},
          {"T", ref.video.frames},
          {"H", ref.video.height},
          {"W", ref.video.width},
          {"objects", objects},
          {"subject_index", ref.subject_index},
          {"caption", ref.caption.token_ids},
          {"subject_token_pos", ref.caption.subject_token_pos},
          {"reference", ref.dir},
          {"generation",
           {{"steps", opt.steps},
            {"schedule", flow::schedule_name(opt.schedule)},
            {"skip_layers", std::vector<int>(opt.skip_layers.begin(), opt.skip_layers.end())},
            {"noise_seed", opt.noise_seed},
            {"mask_conditioning", mask_used && opt.use_mask}}}};
}

std::vector<RigidTransform> parse_transforms(const nlohmann::json& j) {
  if (!j.is_array() || j.empty()) throw FormatError("transforms must be a non-empty JSON array");
  std::vector<RigidTransform> out;
  for (const auto& e : j) {
    RigidTransform t;
    for (const auto& [key, value] : e.items()) {
      if (key == "dx")
        t.dx = value.get<double>();
      else if (key == "dy")
        t.dy = value.get<double>();
      else if (key == "angle_deg")
        t.angle_deg = value.get<double>();
      else
        throw FormatError("unknown transform key '" + key + "'");
    }
    out.push_back(t);
  }
  return out;
}

MaskSequence rigid_mask_sequence(const MaskFrame& first, std::span<const RigidTransform> transforms) {
  if (transforms.empty()) throw RangeError("at least one transform is required");
  const int h = first.height, w = first.width;
  double cx = 0.0, cy = 0.0, n = 0.0;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      if (first.at(y, x)) {
        cx += x + 0.5;
        cy += y + 0.5;
        n += 1.0;
      }
  if (n > 0.0) {
    cx /= n;
    cy /= n;
  }
  MaskSequence out(static_cast<int>(transforms.size()), h, w);
  for (std::size_t f = 0; f < transforms.size(); ++f) {
    const auto& t = transforms[f];
    const double a = t.angle_deg * std::numbers::pi / 180.0;
    const double c = std::cos(a), s = std::sin(a);
    MaskFrame m(h, w);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        // Inverse map of the output pixel centre back into the first frame.
        const double px = x + 0.5 - cx - t.dx, py = y + 0.5 - cy - t.dy;
        const double sx = c * px + s * py + cx, sy = -s * px + c * py + cy;
        const int ix = static_cast<int>(std::floor(sx)), iy = static_cast<int>(std::floor(sy));
        if (ix >= 0 && ix < w && iy >= 0 && iy < h && first.at(iy, ix)) m.data[static_cast<std::size_t>(y) * w + x] = 1;
      }
    out.set_frame(static_cast<int>(f), m);
  }
  return out;
}

}  // namespace comogen::harness
