#pragma once

#include <cstddef>
#include <vector>

#include "comogen/video.hpp"

namespace comogen::codec {

inline constexpr int kTemporalFactor = 4;

// C x T' x H' x W' real latent, channel-major. For spatial patch p the codec
// produces C = 3 * p * p * 4 channels with T' = T/4, H' = H/p, W' = W/p.
struct LatentGrid {
  int channels = 0;
  int frames = 0;
  int height = 0;
  int width = 0;
  std::vector<float> data;

  LatentGrid() = default;
  LatentGrid(int c, int t, int h, int w, float fill = 0.0f)
      : channels(c), frames(t), height(h), width(w), data(static_cast<std::size_t>(c) * t * h * w, fill) {}

  int tokens() const { return frames * height * width; }
  std::size_t size() const { return data.size(); }
  std::size_t index(int c, int t, int y, int x) const {
    return ((static_cast<std::size_t>(c) * frames + t) * height + y) * width + x;
  }
  float& at(int c, int t, int y, int x) { return data[index(c, t, y, x)]; }
  float at(int c, int t, int y, int x) const { return data[index(c, t, y, x)]; }
  bool same_shape(const LatentGrid& o) const {
    return channels == o.channels && frames == o.frames && height == o.height && width == o.width;
  }

  bool operator==(const LatentGrid&) const = default;
};

// 1 x T' x H' x W' mask at latent resolution.
struct LatentMask {
  int frames = 0;
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> raw;
  std::vector<float> normalized;

  std::size_t index(int t, int y, int x) const {
    return (static_cast<std::size_t>(t) * height + y) * width + x;
  }
  double area_fraction() const;
};

struct Codec {
  int patch = 4;

  int channels() const { return 3 * patch * patch * kTemporalFactor; }

  // Scales bytes to [-1, 1] and folds 4 x p x p space-time blocks into
  // channels. Channel index = ((dt * p + dy) * p + dx) * 3 + rgb.
  LatentGrid encode_video(const VideoTensor& video) const;
  // Inverse of encode_video; out-of-range latents are clamped to [0, 255].
  VideoTensor decode_video(const LatentGrid& latent) const;
  // Encodes a single image repeated over one temporal window: the
  // first-frame conditioning slice (C x 1 x H' x W').
  LatentGrid encode_first_frame(const VideoTensor& video) const;

  // Spatial max-pool by p and temporal OR over windows of 4, then zero-mean.
  LatentMask latentize_mask(const MaskSequence& mask) const;

  void check_video_shape(int frames, int height, int width) const;
};

inline float pixel_to_latent(std::uint8_t v) { return static_cast<float>(v) / 127.5f - 1.0f; }
std::uint8_t latent_to_pixel(float v);

}  // namespace comogen::codec
