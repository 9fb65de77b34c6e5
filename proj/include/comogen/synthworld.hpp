#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "comogen/video.hpp"

namespace comogen::world {

enum class Shape : int { disc = 0, square = 1 };

inline constexpr int kPaletteSize = 6;

// Mutually distant flat colors (pairwise RGB distance >= 100, and >= 100
// from the background) so subjects can be recovered by thresholding.
const std::array<Rgb, kPaletteSize>& palette();
Rgb background_color();
const char* color_name(int color_id);
const char* shape_name(Shape s);

struct ObjectSpec {
  Shape shape = Shape::disc;
  int color_id = 0;
  // Collision radius. Squares are drawn inscribed in this circle.
  double radius = 6.0;
  double mass = 1.0;
};

struct Vec2 {
  double x = 0.0;
  double y = 0.0;
};

struct BodyState {
  Vec2 position;
  Vec2 velocity;
};

// Impulse applied at one collision. For wall contacts `other` is -1 and only
// `impulse_a` is meaningful; for pair contacts impulse_b == -impulse_a.
struct CollisionEvent {
  int frame = 0;       // interval [frame, frame + 1) in which it occurred
  double time = 0.0;   // absolute time
  int a = 0;
  int other = -1;
  Vec2 impulse_a;
  Vec2 impulse_b;
  double momentum_before[2] = {0.0, 0.0};
  double momentum_after[2] = {0.0, 0.0};
  double energy_before = 0.0;
  double energy_after = 0.0;
};

struct SceneTrace {
  std::vector<ObjectSpec> objects;
  // states[f][i]
  std::vector<std::vector<BodyState>> states;
  std::vector<CollisionEvent> events;
  int subject_index = 0;
  int frames = 0;
  int width = 0;
  int height = 0;
  std::uint64_t seed = 0;

  Vec2 momentum(int f) const;
  double kinetic_energy(int f) const;
};

struct WorldConfig {
  int frames = 16;
  int width = 64;
  int height = 64;
  int min_objects = 2;
  int max_objects = 4;
  double min_radius = 5.0;
  double max_radius = 8.0;
  double subject_min_speed = 1.5;
  double subject_max_speed = 2.5;
  double other_max_speed = 0.4;
  // Max angular deviation (radians) of the subject's launch direction from
  // the bearing to a randomly chosen target object.
  double aim_jitter = 0.35;
  int placement_attempts = 200;
  int text_length = 8;
};

// Simulates one scene. n_objects and the frame count come from the
// arguments; everything else from cfg. Throws UnsatisfiableScene when no
// non-overlapping placement is found within the attempt bound.
SceneTrace simulate_scene(std::uint64_t seed, int n_objects, int frames, int width, int height,
                          const WorldConfig& cfg = {});

// Event-driven simulation from explicit initial states.
SceneTrace simulate_from(const std::vector<ObjectSpec>& objects, const std::vector<BodyState>& initial, int frames,
                         int width, int height, int subject = 0);

struct Rendered {
  VideoTensor video;
  MaskSequence mask;
};

Rendered render(const SceneTrace& trace);

// Closed vocabulary: pad, then color words, then shape words.
namespace vocab {
inline constexpr int kPad = 0;
inline constexpr int kFirstColor = 1;
inline constexpr int kFirstShape = kFirstColor + kPaletteSize;
inline constexpr int kSize = kFirstShape + 2;
int color_token(int color_id);
int shape_token(Shape s);
std::string word(int token);
int token(const std::string& word);
}  // namespace vocab

struct Caption {
  std::vector<int> token_ids;
  int subject_token_pos = 0;

  bool operator==(const Caption&) const = default;
};

Caption make_caption(const SceneTrace& trace, int text_length = 8);
std::string detokenize(const Caption& c);
Caption tokenize(const std::string& text, int text_length = 8);

struct DatasetConfig {
  int train_samples = 500;
  int val_samples = 50;
  std::uint64_t seed = 1;
  WorldConfig world;
};

struct SampleInfo {
  std::string dir;  // relative to the dataset root
  std::string split;
  std::uint64_t seed = 0;
};

struct DatasetSummary {
  std::vector<SampleInfo> samples;
  std::uintmax_t bytes = 0;
};

// Seed of sample `index` within `split`. Validation seeds are the first
// val_samples seeds of their own stream.
std::uint64_t sample_seed(std::uint64_t dataset_seed, const std::string& split, int index);

// Writes <out>/<split>/<index>/{meta.json, video.rgb24, mask.gray8,
// done.marker} and a top-level manifest.json written last.
DatasetSummary generate_dataset(const DatasetConfig& cfg, const std::filesystem::path& out);

struct Sample {
  std::uint64_t seed = 0;
  std::string split;
  std::string dir;
  VideoTensor video;
  MaskSequence mask;
  Caption caption;
  int subject_index = 0;
  Rgb subject_color{};
  std::vector<ObjectSpec> objects;
};

// Loads a dataset; throws FormatError on a missing manifest, missing
// completion marker, or inconsistent shapes.
std::vector<Sample> load_dataset(const std::filesystem::path& root,
                                 const std::optional<std::string>& split = std::nullopt);
Sample load_sample(const std::filesystem::path& sample_dir);

// Raw byte IO shared with other file formats.
void write_sample_files(const std::filesystem::path& dir, const VideoTensor& video,
                        const MaskSequence& mask, const std::string& meta_json);
VideoTensor read_video(const std::filesystem::path& file, int t, int h, int w);
MaskSequence read_mask(const std::filesystem::path& file, int t, int h, int w);

}  // namespace comogen::world
