#include "comogen/video.hpp"

#include <algorithm>
#include <numeric>

namespace comogen {

std::size_t MaskFrame::count() const {
  return static_cast<std::size_t>(std::count_if(data.begin(), data.end(), [](std::uint8_t v) { return v != 0; }));
}

MaskFrame MaskSequence::frame(int f) const {
  MaskFrame m(height, width);
  const auto begin = data.begin() + static_cast<std::ptrdiff_t>(index(f, 0, 0));
  std::copy(begin, begin + static_cast<std::ptrdiff_t>(m.data.size()), m.data.begin());
  return m;
}

void MaskSequence::set_frame(int f, const MaskFrame& m) {
  std::copy(m.data.begin(), m.data.end(), data.begin() + static_cast<std::ptrdiff_t>(index(f, 0, 0)));
}

VideoTensor video_frame(const VideoTensor& v, int f) {
  VideoTensor out(1, v.height, v.width);
  const auto begin = v.data.begin() + static_cast<std::ptrdiff_t>(v.index(f, 0, 0));
  std::copy(begin, begin + static_cast<std::ptrdiff_t>(v.frame_size()), out.data.begin());
  return out;
}

}  // namespace comogen
