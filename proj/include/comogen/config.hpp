#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include <json.hpp>

#include "comogen/flowmatch.hpp"
#include "comogen/latentcodec.hpp"
#include "comogen/loratrain.hpp"
#include "comogen/maskadapter.hpp"
#include "comogen/mmdit.hpp"
#include "comogen/motionlayers.hpp"
#include "comogen/pipeline.hpp"
#include "comogen/synthworld.hpp"

namespace comogen {

struct FlowSection {
  int steps = 20;
  flow::InjectionSchedule schedule = flow::InjectionSchedule::cosine;
};

struct EvalSection {
  int samples = 20;       // scenes for ablations and metric reports
  int rank_samples = 50;  // scenes for layer ranking
  int n_skip = 3;
  motion::SelectionRule rule = motion::SelectionRule::largest_gap;
  int k = 6;
  int min_group = 3;
  motion::MaskSource mask_source = motion::MaskSource::generated;
  double color_threshold = 50.0;
  int tolerance = 1;
};

struct PathsSection {
  std::string data;
  std::string base_checkpoint;
  std::string ranking;
  std::string checkpoint;
};

// Every tunable of a run. Sections mirror the modules.
struct RunConfig {
  world::WorldConfig world;
  int train_samples = 500;
  int val_samples = 50;
  codec::Codec codec;
  mmdit::ModelConfig model;
  FlowSection flow;
  adapter::AdapterConfig adapter;
  LoraConfig lora;
  train::TrainConfig train;
  EvalSection eval;
  PathsSection paths;
  std::uint64_t seed = 1;

  // Resolved model config (latent grid derived from world and codec).
  mmdit::ModelConfig model_config() const;
  world::DatasetConfig dataset_config() const;
  train::TrainConfig train_config() const;

  // Independent sub-seeds.
  std::uint64_t init_seed() const { return Rng::derive(seed, 11); }
  std::uint64_t noise_seed() const { return Rng::derive(seed, 12); }

  void validate() const;
  nlohmann::json to_json() const;
  // Missing keys keep their defaults; unknown keys throw FormatError.
  static RunConfig from_json(const nlohmann::json& j);
};

// Loads a config file (or defaults when path is empty) and applies the
// COMOGEN_SEED environment override.
RunConfig load_config(const std::optional<std::filesystem::path>& path);

// Writes config.json (the resolved config) into dir.
void echo_config(const RunConfig& cfg, const std::filesystem::path& dir);

}  // namespace comogen
