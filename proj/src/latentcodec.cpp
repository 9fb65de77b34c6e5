#include "comogen/latentcodec.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "comogen/error.hpp"

namespace comogen::codec {

double LatentMask::area_fraction() const {
  if (raw.empty()) return 0.0;
  return static_cast<double>(std::accumulate(raw.begin(), raw.end(), std::size_t{0})) / static_cast<double>(raw.size());
}

std::uint8_t latent_to_pixel(float v) {
  if (!std::isfinite(v)) return v > 0 ? 255 : 0;
  const float p = std::round((v + 1.0f) * 127.5f);
  return static_cast<std::uint8_t>(std::clamp(p, 0.0f, 255.0f));
}

void Codec::check_video_shape(int frames, int height, int width) const {
  if (patch < 1) throw DimensionError("codec patch size must be >= 1");
  if (frames <= 0 || frames % kTemporalFactor != 0)
    throw DimensionError("temporal axis T=" + std::to_string(frames) + " is not a positive multiple of 4");
  if (height <= 0 || height % patch != 0)
    throw DimensionError("height axis H=" + std::to_string(height) + " is not a positive multiple of patch " +
                         std::to_string(patch));
  if (width <= 0 || width % patch != 0)
    throw DimensionError("width axis W=" + std::to_string(width) + " is not a positive multiple of patch " +
                         std::to_string(patch));
}

LatentGrid Codec::encode_video(const VideoTensor& video) const {
  check_video_shape(video.frames, video.height, video.width);
  const int p = patch;
  LatentGrid z(channels(), video.frames / kTemporalFactor, video.height / p, video.width / p);
  for (int t = 0; t < z.frames; ++t)
    for (int y = 0; y < z.height; ++y)
      for (int x = 0; x < z.width; ++x)
        for (int dt = 0; dt < kTemporalFactor; ++dt)
          for (int dy = 0; dy < p; ++dy)
            for (int dx = 0; dx < p; ++dx) {
              const std::uint8_t* px = video.pixel(t * kTemporalFactor + dt, y * p + dy, x * p + dx);
              const int base = ((dt * p + dy) * p + dx) * 3;
              for (int c = 0; c < 3; ++c) z.at(base + c, t, y, x) = pixel_to_latent(px[c]);
            }
  return z;
}

VideoTensor Codec::decode_video(const LatentGrid& z) const {
  if (z.channels != channels())
    throw DimensionError("channel axis C=" + std::to_string(z.channels) + " does not match codec C=" +
                         std::to_string(channels()));
  if (z.frames <= 0 || z.height <= 0 || z.width <= 0) throw DimensionError("latent has an empty axis");
  if (z.data.size() != static_cast<std::size_t>(z.channels) * z.frames * z.height * z.width)
    throw DimensionError("latent buffer size disagrees with its shape");
  const int p = patch;
  VideoTensor v(z.frames * kTemporalFactor, z.height * p, z.width * p);
  for (int t = 0; t < z.frames; ++t)
    for (int y = 0; y < z.height; ++y)
      for (int x = 0; x < z.width; ++x)
        for (int dt = 0; dt < kTemporalFactor; ++dt)
          for (int dy = 0; dy < p; ++dy)
            for (int dx = 0; dx < p; ++dx) {
              std::uint8_t* px = v.pixel(t * kTemporalFactor + dt, y * p + dy, x * p + dx);
              const int base = ((dt * p + dy) * p + dx) * 3;
              for (int c = 0; c < 3; ++c) px[c] = latent_to_pixel(z.at(base + c, t, y, x));
            }
  return v;
}

LatentGrid Codec::encode_first_frame(const VideoTensor& video) const {
  if (video.frames < 1) throw DimensionError("first-frame conditioning needs at least one frame");
  VideoTensor window(kTemporalFactor, video.height, video.width);
  for (int dt = 0; dt < kTemporalFactor; ++dt)
    std::copy_n(video.data.begin(), video.frame_size(), window.data.begin() + static_cast<std::ptrdiff_t>(dt * video.frame_size()));
  return encode_video(window);
}

LatentMask Codec::latentize_mask(const MaskSequence& mask) const {
  check_video_shape(mask.frames, mask.height, mask.width);
  const int p = patch;
  LatentMask out;
  out.frames = mask.frames / kTemporalFactor;
  out.height = mask.height / p;
  out.width = mask.width / p;
  out.raw.assign(static_cast<std::size_t>(out.frames) * out.height * out.width, 0);
  for (std::size_t i = 0; i < mask.data.size(); ++i)
    if (mask.data[i] > 1) throw RangeError("mask contains a non-binary value");
  for (int t = 0; t < out.frames; ++t)
    for (int y = 0; y < out.height; ++y)
      for (int x = 0; x < out.width; ++x) {
        std::uint8_t any = 0;
        for (int dt = 0; dt < kTemporalFactor && !any; ++dt)
          for (int dy = 0; dy < p && !any; ++dy)
            for (int dx = 0; dx < p; ++dx)
              if (mask.at(t * kTemporalFactor + dt, y * p + dy, x * p + dx)) {
                any = 1;
                break;
              }
        out.raw[out.index(t, y, x)] = any;
      }
  const double mean = out.area_fraction();
  out.normalized.resize(out.raw.size());
  std::transform(out.raw.begin(), out.raw.end(), out.normalized.begin(),
                 [mean](std::uint8_t v) { return static_cast<float>(static_cast<double>(v) - mean); });
  return out;
}

}  // namespace comogen::codec
