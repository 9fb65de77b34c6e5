#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace comogen::cli {

namespace fs = std::filesystem;

struct GenDataArgs {
  std::optional<fs::path> config;
  fs::path out;
  bool force = false;
};

struct TrainArgs {
  std::optional<fs::path> config;
  fs::path data;
  fs::path out;
  std::optional<fs::path> base;
  std::optional<fs::path> ranking;
};

struct RankArgs {
  std::optional<fs::path> config;
  fs::path ckpt;
  fs::path data;
  fs::path out;
};

struct SkipArgs {
  std::optional<fs::path> config;
  fs::path ckpt;
  fs::path ranking;
  fs::path data;
  fs::path out;
};

struct SampleArgs {
  std::optional<fs::path> config;
  fs::path ckpt;
  fs::path first_frame;
  fs::path mask;
  std::optional<int> steps;
  fs::path out;
  bool no_cosine = false;
  bool no_mask = false;
  std::vector<int> skip;
  std::optional<std::string> caption;
  std::optional<fs::path> transforms;
  std::optional<unsigned long long> seed;
};

struct EvalArgs {
  std::optional<fs::path> config;
  fs::path gen;
  fs::path ref;
  fs::path out;
};

struct AblateArgs {
  std::optional<fs::path> config;
  fs::path out;
};

int gen_data(const GenDataArgs& a);
int train(const TrainArgs& a);
int rank_layers(const RankArgs& a);
int skip_ablate(const SkipArgs& a);
int sample(const SampleArgs& a);
int eval(const EvalArgs& a);
int ablate(const AblateArgs& a);

// Records a failure marker in dir (when it exists or can be created).
void mark_failed(const fs::path& dir, const std::string& message);

}  // namespace comogen::cli
