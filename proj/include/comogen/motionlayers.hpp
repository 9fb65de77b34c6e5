#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "comogen/evalmetrics.hpp"
#include "comogen/mmdit.hpp"
#include "comogen/pipeline.hpp"

namespace comogen::motion {

enum class SelectionRule { fixed_k, largest_gap };

SelectionRule parse_rule(const std::string& name);
std::string rule_name(SelectionRule r);

struct LayerRanking {
  std::vector<double> scores;
  std::vector<double> dispersion;  // std of per-sample scores
  std::vector<int> selected;       // ascending layer indices
  SelectionRule rule = SelectionRule::largest_gap;
  // Set when the gap rule found no separation and fell back to fixed k.
  bool tie_fallback = false;
  int samples = 0;

  // Layers ordered by descending score; equal scores by ascending index.
  std::vector<int> order() const;
  nlohmann::json to_json() const;
  static LayerRanking from_json(const nlohmann::json& j);
  std::string table() const;
};

// Streaming form of the layer attention score. Each call to add() takes
// the attention record of one sampling run (all layers and steps) and the
// binary latent mask of that sample.
class ScoreAccumulator {
 public:
  explicit ScoreAccumulator(int layers);

  void add(const mmdit::AttentionRecord& rec, int subject_token_pos, std::span<const std::uint8_t> mask);

  int layers() const { return layers_; }
  int samples() const { return samples_; }
  std::vector<double> scores() const;
  std::vector<double> dispersion() const;

 private:
  int layers_;
  int samples_ = 0;
  std::vector<double> inside_;  // summed in-mask mass per layer
  std::vector<double> terms_;   // (frame, step, sample) terms per layer
  std::vector<std::vector<double>> per_sample_;
};

// Scores over a set of runs; masks[i] pairs with records[i].
std::vector<double> attention_score(std::span<const mmdit::AttentionRecord> records,
                                    std::span<const int> subject_token_pos,
                                    std::span<const std::vector<std::uint8_t>> masks);

struct Selection {
  std::vector<int> layers;
  bool tie_fallback = false;
};

// fixed_k: top k by score. largest_gap: cut the descending order at its
// largest consecutive difference, considering only cuts that leave at least
// min_group layers on each side, and keep the upper group. Equal scores
// everywhere fall back to the top default_k.
Selection select_motion_layers(std::span<const double> scores, SelectionRule rule, int k, int min_group = 1);

// The n lowest-scoring layers, n = max(needed, L - |selected|).
std::vector<int> non_motion_pool(const LayerRanking& ranking, int needed);

struct SkipOptions {
  int n_skip = 3;
  std::uint64_t seed = 0;
  int steps = 20;
  bool use_mask = true;
  double color_threshold = 50.0;
  int tolerance = 1;
};

struct SkipTriplet {
  std::string id;
  std::vector<int> motion_skipped;
  std::vector<int> non_motion_skipped;
  metrics::SequenceScore motion;      // skip Motion Layers vs full
  metrics::SequenceScore non_motion;  // skip Non-Motion Layers vs full
};

struct SkipReport {
  std::vector<SkipTriplet> samples;
  metrics::SequenceScore motion_mean;
  metrics::SequenceScore non_motion_mean;

  nlohmann::json to_json() const;
  std::string table() const;
};

// Called with (sample index, full, skip-motion, skip-non-motion videos).
using TripletSink = std::function<void(std::size_t, const VideoTensor&, const VideoTensor&, const VideoTensor&)>;

SkipReport skip_ablation(Pipeline& p, const std::vector<world::Sample>& eval, const LayerRanking& ranking,
                         const SkipOptions& opt, const TripletSink& sink = {});

enum class MaskSource { generated, reference };
MaskSource parse_mask_source(const std::string& name);

struct RankOptions {
  int steps = 20;
  std::uint64_t seed = 0;
  SelectionRule rule = SelectionRule::largest_gap;
  int k = 6;
  int min_group = 3;
  MaskSource mask_source = MaskSource::generated;
  double color_threshold = 50.0;
  bool use_mask = true;
};

// Samples each example with attention recording and ranks the layers.
LayerRanking rank_layers(Pipeline& p, const std::vector<world::Sample>& eval, const RankOptions& opt,
                         const std::function<void(std::size_t)>& progress = {});

}  // namespace comogen::motion
