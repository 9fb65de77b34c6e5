#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <vector>

namespace comogen {

using Rgb = std::array<std::uint8_t, 3>;

// T x H x W x 3 sequence of 8-bit RGB frames, frame-major then row-major.
struct VideoTensor {
  int frames = 0;
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> data;

  VideoTensor() = default;
  VideoTensor(int t, int h, int w)
      : frames(t), height(h), width(w), data(static_cast<std::size_t>(t) * h * w * 3, 0) {}

  std::size_t frame_size() const { return static_cast<std::size_t>(height) * width * 3; }
  std::size_t index(int f, int y, int x) const {
    return ((static_cast<std::size_t>(f) * height + y) * width + x) * 3;
  }
  std::uint8_t* pixel(int f, int y, int x) { return data.data() + index(f, y, x); }
  const std::uint8_t* pixel(int f, int y, int x) const { return data.data() + index(f, y, x); }

  bool operator==(const VideoTensor&) const = default;
};

// Single binary frame, values 0 or 1, row-major.
struct MaskFrame {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> data;

  MaskFrame() = default;
  MaskFrame(int h, int w) : height(h), width(w), data(static_cast<std::size_t>(h) * w, 0) {}

  std::uint8_t& at(int y, int x) { return data[static_cast<std::size_t>(y) * width + x]; }
  std::uint8_t at(int y, int x) const { return data[static_cast<std::size_t>(y) * width + x]; }
  std::size_t count() const;

  bool operator==(const MaskFrame&) const = default;
};

// T x H x W binary subject occupancy aligned with a VideoTensor. In memory
// values are 0/1; the on-disk byte format uses 0/255.
struct MaskSequence {
  int frames = 0;
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> data;

  MaskSequence() = default;
  MaskSequence(int t, int h, int w)
      : frames(t), height(h), width(w), data(static_cast<std::size_t>(t) * h * w, 0) {}

  std::size_t index(int f, int y, int x) const {
    return (static_cast<std::size_t>(f) * height + y) * width + x;
  }
  std::uint8_t& at(int f, int y, int x) { return data[index(f, y, x)]; }
  std::uint8_t at(int f, int y, int x) const { return data[index(f, y, x)]; }

  MaskFrame frame(int f) const;
  void set_frame(int f, const MaskFrame& m);

  bool operator==(const MaskSequence&) const = default;
};

// Extracts one frame of a video as a standalone single-frame video.
VideoTensor video_frame(const VideoTensor& v, int f);

}  // namespace comogen
