#pragma once

#include <filesystem>
#include <optional>
#include <set>

#include <json.hpp>

#include "comogen/checkpoint.hpp"
#include "comogen/flowmatch.hpp"
#include "comogen/latentcodec.hpp"
#include "comogen/maskadapter.hpp"
#include "comogen/mmdit.hpp"
#include "comogen/synthworld.hpp"

namespace comogen {

struct LoraConfig {
  int rank = 8;
  double alpha = 16.0;

  nlohmann::json to_json() const { return {{"rank", rank}, {"alpha", alpha}}; }
};

struct GenerateOptions {
  int steps = 20;
  flow::InjectionSchedule schedule = flow::InjectionSchedule::cosine;
  std::set<int> skip_layers;
  std::uint64_t noise_seed = 0;
  // Apply the adapter residual (when an adapter is attached and a mask given).
  bool use_mask = true;
  mmdit::AttentionRecord* record = nullptr;
};

// Backbone, optional mask adapter and the codec used around them.
class Pipeline {
 public:
  Pipeline(const codec::Codec& codec, const mmdit::ModelConfig& model_cfg);

  codec::Codec codec;
  mmdit::Mmdit<float> model;
  std::optional<adapter::MaskAdapter<float>> mask_adapter;

  void add_adapter(const adapter::AdapterConfig& cfg, Rng& rng);

  // Zero latent when no adapter is attached.
  codec::LatentGrid residual(const codec::LatentMask& mask);

  codec::LatentGrid generate_latent(const codec::LatentGrid& first_frame, const world::Caption& caption,
                                    const codec::LatentMask* mask, const GenerateOptions& opt);
  VideoTensor generate_video(const VideoTensor& first_frame_image, const world::Caption& caption,
                             const MaskSequence* mask, const GenerateOptions& opt);

  // Namespaces "base/", "adapter/", "lora/" in one checkpoint directory.
  void save(const std::filesystem::path& dir, const nlohmann::json& extra = nlohmann::json::object());
  static Pipeline load(const std::filesystem::path& dir);
  static Pipeline from_checkpoint(const ckpt::Checkpoint& c);
  std::string base_hash();

  nlohmann::json describe() const;
};

// Model config whose latent grid matches a codec applied to T x H x W video.
mmdit::ModelConfig model_config_for(const codec::Codec& codec, mmdit::ModelConfig base, int frames, int height, int width);

}  // namespace comogen
