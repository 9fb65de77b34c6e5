#pragma once

#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "comogen/flowmatch.hpp"
#include "comogen/pipeline.hpp"

namespace comogen::train {

using nn::Mat;

struct AdamWConfig {
  double lr = 5e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

// Decoupled weight decay Adam. Only parameters flagged trainable are updated.
class AdamW {
 public:
  explicit AdamW(const AdamWConfig& cfg) : cfg_(cfg) {}

  void step(const nn::ParamList<float>& params);
  long steps() const { return t_; }
  const AdamWConfig& config() const { return cfg_; }
  void set_lr(double lr) { cfg_.lr = lr; }

 private:
  struct Moments {
    Mat<float> m;
    Mat<float> v;
  };
  AdamWConfig cfg_;
  long t_ = 0;
  std::map<const nn::Param<float>*, Moments> state_;
};

// L2 norm over the gradients of trainable parameters.
double grad_norm(const nn::ParamList<float>& params);

// Rescales gradients so their joint norm is at most max_norm. Returns the
// norm before clipping.
double clip_grad_norm(const nn::ParamList<float>& params, double max_norm);

void zero_grad(const nn::ParamList<float>& params);

struct TrainConfig {
  double lr = 5e-5;
  int batch_size = 2;
  int stage1_epochs = 1;
  int stage2_epochs = 2;
  std::uint64_t seed = 0;
  double clip_norm = 1.0;
  double weight_decay = 0.01;
  flow::TrainingWeighting weighting = flow::TrainingWeighting::constant;
  // Validation examples drawn from the start of the validation split.
  int val_samples = 50;
  // Base-model pretraining, run when no base checkpoint is supplied.
  int base_steps = 3000;
  double base_lr = 2e-3;
  int base_batch_size = 2;
  int base_warmup = 200;
  int log_every = 25;

  void validate() const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

// One dataset sample in model space.
struct Example {
  nn::Mat<float> x0_tokens;
  nn::Mat<float> cond_tokens;
  codec::LatentMask mask;
  std::vector<int> tokens;
};

std::vector<Example> prepare_examples(const codec::Codec& codec, const std::vector<world::Sample>& samples,
                                      int limit = -1);

enum class Stage { base = 0, adapter = 1, joint = 2 };

struct StepLoss {
  double loss = 0.0;
  double grad_norm = 0.0;
};

// Rectified-flow example loss machinery shared by all stages.
class FlowTrainer {
 public:
  FlowTrainer(Pipeline& pipeline, flow::TrainingWeighting weighting) : p_(pipeline), weighting_(weighting) {}

  // Forward and backward of one example at (t, eps); accumulates gradients
  // into trainable parameters. use_adapter routes the residual through the
  // mask adapter. Returns the example's mean squared error.
  double accumulate(const Example& ex, double t, const nn::Mat<float>& eps, bool use_adapter, double grad_scale);

  // Loss without gradients.
  double evaluate(const Example& ex, double t, const nn::Mat<float>& eps, bool use_adapter);

  // Standard normal noise in token layout.
  static nn::Mat<float> noise(int rows, int cols, Rng& rng);

  // Mean validation loss with per-example (t, eps) fixed by seed.
  double validation_loss(const std::vector<Example>& val, std::uint64_t seed, bool use_adapter);

 private:
  nn::Mat<float> model_input(const Example& ex, double t, const nn::Mat<float>& eps, bool use_adapter,
                             bool cache, double& w);
  Pipeline& p_;
  flow::TrainingWeighting weighting_;
};

struct ParamReport {
  std::size_t base = 0;
  std::size_t adapter = 0;
  std::size_t lora = 0;
  double inference_extra_pct = 0.0;
  double training_extra_pct = 0.0;
  double lora_pct = 0.0;

  nlohmann::json to_json() const;
  std::string table() const;
};

ParamReport param_report(Pipeline& p);
ParamReport param_report(std::size_t base, std::size_t adapter, std::size_t lora);

// Rows of the loss curve; val_loss is NaN when not evaluated at that step.
struct LossRow {
  long step = 0;
  int stage = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
};

class LossLog {
 public:
  explicit LossLog(const std::filesystem::path& csv);
  void add(const LossRow& row);
  const std::vector<LossRow>& rows() const { return rows_; }

 private:
  std::ofstream out_;
  std::vector<LossRow> rows_;
};

struct TrainSummary {
  double init_val_loss = 0.0;
  double final_val_loss = 0.0;
  std::vector<double> epoch_val_loss;
  std::string base_hash_before;
  std::string base_hash_after;
  std::filesystem::path final_checkpoint;
  long steps = 0;

  nlohmann::json to_json() const;
};

using ProgressFn = std::function<void(const std::string&)>;

// Pretrains the base backbone from its current initialization. Writes a
// checkpoint to out_dir and appends stage-0 rows to the log.
void pretrain_base(Pipeline& p, const std::vector<Example>& train, const std::vector<Example>& val,
                   const TrainConfig& cfg, LossLog& log, const std::filesystem::path& out_dir,
                   const ProgressFn& progress = {});

// Two-stage recipe on a pipeline with adapter and LoRA already attached:
// adapter only, then adapter and LoRA. The backbone stays frozen. A
// checkpoint is written under ckpt_root at every epoch boundary.
TrainSummary train_adapter_lora(Pipeline& p, const std::vector<Example>& train, const std::vector<Example>& val,
                                const TrainConfig& cfg, LossLog& log, const std::filesystem::path& ckpt_root,
                                const nlohmann::json& extra_meta = nlohmann::json::object(),
                                const ProgressFn& progress = {});

}  // namespace comogen::train
