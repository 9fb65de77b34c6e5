#include "comogen/loratrain.hpp"

#include <cmath>
#include <cstdio>
#include <iomanip>
#include <limits>
#include <numeric>
#include <sstream>

#include "comogen/error.hpp"

namespace comogen::train {

using json = nlohmann::json;

void AdamW::step(const nn::ParamList<float>& params) {
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  const float b1 = static_cast<float>(cfg_.beta1);
  const float b2 = static_cast<float>(cfg_.beta2);
  const float step = static_cast<float>(cfg_.lr / bc1);
  const float inv_bc2 = static_cast<float>(1.0 / bc2);
  const float eps = static_cast<float>(cfg_.eps);
  const float decay = static_cast<float>(1.0 - cfg_.lr * cfg_.weight_decay);
  for (auto* p : params) {
    if (!p->trainable) continue;
    auto& s = state_[p];
    if (s.m.size() == 0) {
      s.m = Mat<float>::Zero(p->value.rows(), p->value.cols());
      s.v = Mat<float>::Zero(p->value.rows(), p->value.cols());
    }
    s.m = b1 * s.m + (1.0f - b1) * p->grad;
    s.v = b2 * s.v + (1.0f - b2) * p->grad.cwiseAbs2();
    p->value *= decay;
    p->value.array() -= step * s.m.array() / ((s.v.array() * inv_bc2).sqrt() + eps);
  }
}

double grad_norm(const nn::ParamList<float>& params) {
  double sq = 0.0;
  for (const auto* p : params)
    if (p->trainable) sq += p->grad.template cast<double>().squaredNorm();
  return std::sqrt(sq);
}

double clip_grad_norm(const nn::ParamList<float>& params, double max_norm) {
  const double norm = grad_norm(params);
  if (max_norm > 0.0 && norm > max_norm) {
    const float s = static_cast<float>(max_norm / (norm + 1e-12));
    for (auto* p : params)
      if (p->trainable) p->grad *= s;
  }
  return norm;
}

void zero_grad(const nn::ParamList<float>& params) {
  for (auto* p : params) p->zero_grad();
}

void TrainConfig::validate() const {
  if (!(lr > 0.0) || !(base_lr > 0.0)) throw RangeError("learning rates must be positive");
  if (batch_size < 1 || base_batch_size < 1) throw RangeError("batch size must be >= 1");
  if (stage1_epochs < 0 || stage2_epochs < 0) throw RangeError("epoch counts must be >= 0");
  if (base_steps < 0 || base_warmup < 0) throw RangeError("base step counts must be >= 0");
  if (val_samples < 1) throw RangeError("at least one validation example is required");
  if (clip_norm < 0.0 || weight_decay < 0.0) throw RangeError("clip norm and weight decay must be >= 0");
  if (log_every < 1) throw RangeError("log_every must be >= 1");
}

json TrainConfig::to_json() const {
  return {{"optimizer", "adamw"},
          {"learning_rate", lr},
          {"batch_size", batch_size},
          {"stage1_epochs", stage1_epochs},
          {"stage2_epochs", stage2_epochs},
          {"seed", seed},
          {"clip_norm", clip_norm},
          {"weight_decay", weight_decay},
          {"weighting", weighting == flow::TrainingWeighting::constant ? "constant" : "cosine"},
          {"val_samples", val_samples},
          {"base_steps", base_steps},
          {"base_learning_rate", base_lr},
          {"base_batch_size", base_batch_size},
          {"base_warmup", base_warmup},
          {"log_every", log_every}};
}

TrainConfig TrainConfig::from_json(const json& j) {
  TrainConfig c;
  for (const auto& [key, value] : j.items()) {
    if (key == "optimizer") {
      if (value.get<std::string>() != "adamw") throw RangeError("only the adamw optimizer is available");
    } else if (key == "learning_rate") {
      c.lr = value;
    } else if (key == "batch_size") {
      c.batch_size = value;
    } else if (key == "stage1_epochs") {
      c.stage1_epochs = value;
    } else if (key == "stage2_epochs") {
      c.stage2_epochs = value;
    } else if (key == "seed") {
      c.seed = value;
    } else if (key == "clip_norm") {
      c.clip_norm = value;
    } else if (key == "weight_decay") {
      c.weight_decay = value;
    } else if (key == "weighting") {
      c.weighting = flow::parse_training_weighting(value);
    } else if (key == "val_samples") {
      c.val_samples = value;
    } else if (key == "base_steps") {
      c.base_steps = value;
    } else if (key == "base_learning_rate") {
      c.base_lr = value;
    } else if (key == "base_batch_size") {
      c.base_batch_size = value;
    } else if (key == "base_warmup") {
      c.base_warmup = value;
    } else if (key == "log_every") {
      c.log_every = value;
    } else {
      throw FormatError("unknown key train." + key);
    }
  }
  c.validate();
  return c;
}

std::vector<Example> prepare_examples(const codec::Codec& codec, const std::vector<world::Sample>& samples,
                                      int limit) {
  const std::size_t n = limit < 0 ? samples.size() : std::min(samples.size(), static_cast<std::size_t>(limit));
  std::vector<Example> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& s = samples[i];
    Example e;
    e.x0_tokens = mmdit::to_tokens<float>(codec.encode_video(s.video));
    e.cond_tokens = mmdit::to_tokens<float>(codec.encode_first_frame(s.video));
    e.mask = codec.latentize_mask(s.mask);
    e.tokens = s.caption.token_ids;
    out.push_back(std::move(e));
  }
  return out;
}

Mat<float> FlowTrainer::noise(int rows, int cols, Rng& rng) {
  Mat<float> m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<float>(rng.normal());
  return m;
}

Mat<float> FlowTrainer::model_input(const Example& ex, double t, const Mat<float>& eps, bool use_adapter,
                                    bool cache, double& w) {
  if (eps.rows() != ex.x0_tokens.rows() || eps.cols() != ex.x0_tokens.cols())
    throw DimensionError("noise shape does not match the example");
  if (!(t >= 0.0 && t <= 1.0)) throw RangeError("timestep must lie in [0, 1]");
  const float tf = static_cast<float>(t);
  Mat<float> x = (1.0f - tf) * ex.x0_tokens + tf * eps;
  w = 0.0;
  if (use_adapter) {
    if (!p_.mask_adapter) throw Error("training with the residual requires a mask adapter");
    w = flow::training_weight(t, weighting_);
    const Mat<float> dz = p_.mask_adapter->forward(ex.mask.normalized, cache);
    x.noalias() += static_cast<float>(w) * dz;
  }
  return x;
}

double FlowTrainer::accumulate(const Example& ex, double t, const Mat<float>& eps, bool use_adapter,
                               double grad_scale) {
  double w = 0.0;
  const Mat<float> x = model_input(ex, t, eps, use_adapter, true, w);
  mmdit::ForwardOptions fo;
  fo.cache = true;
  const Mat<float> v = p_.model.forward(x, ex.cond_tokens, ex.tokens, t, fo);
  const Mat<float> diff = v - (ex.x0_tokens - eps);
  const double loss = diff.template cast<double>().squaredNorm() / static_cast<double>(diff.size());
  if (!std::isfinite(loss)) return loss;
  const float g = static_cast<float>(2.0 * grad_scale / static_cast<double>(diff.size()));
  const Mat<float> dlatent = p_.model.backward(g * diff);
  if (use_adapter) p_.mask_adapter->backward(static_cast<float>(w) * dlatent);
  return loss;
}

double FlowTrainer::evaluate(const Example& ex, double t, const Mat<float>& eps, bool use_adapter) {
  double w = 0.0;
  const Mat<float> x = model_input(ex, t, eps, use_adapter, false, w);
  const Mat<float> v = p_.model.forward(x, ex.cond_tokens, ex.tokens, t, {});
  const Mat<float> diff = v - (ex.x0_tokens - eps);
  return diff.template cast<double>().squaredNorm() / static_cast<double>(diff.size());
}

double FlowTrainer::validation_loss(const std::vector<Example>& val, std::uint64_t seed, bool use_adapter) {
  if (val.empty()) throw Error("validation set is empty");
  double sum = 0.0;
  for (std::size_t i = 0; i < val.size(); ++i) {
    Rng rng(Rng::derive(seed, i));
    const double t = rng.uniform();
    const Mat<float> eps = noise(static_cast<int>(val[i].x0_tokens.rows()), static_cast<int>(val[i].x0_tokens.cols()), rng);
    sum += evaluate(val[i], t, eps, use_adapter);
  }
  return sum / static_cast<double>(val.size());
}

json ParamReport::to_json() const {
  return {{"base_params", base},
          {"adapter_params", adapter},
          {"lora_params", lora},
          {"inference_extra_pct", inference_extra_pct},
          {"training_extra_pct", training_extra_pct},
          {"lora_extra_pct", lora_pct}};
}

std::string ParamReport::table() const {
  std::ostringstream os;
  os << std::left << std::setw(22) << "component" << std::right << std::setw(12) << "params" << std::setw(12)
     << "extra %" << "\n";
  os << std::left << std::setw(22) << "base" << std::right << std::setw(12) << base << std::setw(12) << "-" << "\n";
  os << std::fixed << std::setprecision(4);
  os << std::left << std::setw(22) << "adapter (inference)" << std::right << std::setw(12) << adapter
     << std::setw(12) << inference_extra_pct << "\n";
  os << std::left << std::setw(22) << "lora" << std::right << std::setw(12) << lora << std::setw(12) << lora_pct
     << "\n";
  os << std::left << std::setw(22) << "adapter + lora (train)" << std::right << std::setw(12) << adapter + lora
     << std::setw(12) << training_extra_pct << "\n";
  return os.str();
}

ParamReport param_report(Pipeline& p) {
  return param_report(p.model.base_parameter_count(), p.mask_adapter ? p.mask_adapter->parameter_count() : 0,
                      p.model.lora_parameter_count());
}

ParamReport param_report(std::size_t base_count, std::size_t adapter_count, std::size_t lora_count) {
  if (base_count == 0) throw RangeError("param_report: empty base model");
  ParamReport r;
  r.base = base_count;
  r.adapter = adapter_count;
  r.lora = lora_count;
  const double base = static_cast<double>(r.base);
  r.inference_extra_pct = static_cast<double>(r.adapter) / base * 100.0;
  r.lora_pct = static_cast<double>(r.lora) / base * 100.0;
  r.training_extra_pct = r.inference_extra_pct + r.lora_pct;
  return r;
}

LossLog::LossLog(const std::filesystem::path& csv) : out_(csv) {
  if (!out_) throw Error("cannot write " + csv.string());
  out_ << "step,stage,train_loss,val_loss\n";
}

void LossLog::add(const LossRow& row) {
  rows_.push_back(row);
  auto field = [](double v) {
    if (std::isnan(v)) return std::string();
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.8g", v);
    return std::string(buf);
  };
  out_ << row.step << ',' << row.stage << ',' << field(row.train_loss) << ',' << field(row.val_loss) << '\n';
  out_.flush();
}

json TrainSummary::to_json() const {
  return {{"init_val_loss", init_val_loss},
          {"final_val_loss", final_val_loss},
          {"val_loss_ratio", final_val_loss / init_val_loss},
          {"epoch_val_loss", epoch_val_loss},
          {"base_sha256_before", base_hash_before},
          {"base_sha256_after", base_hash_after},
          {"base_unchanged", base_hash_before == base_hash_after},
          {"final_checkpoint", final_checkpoint.string()},
          {"steps", steps}};
}

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::vector<std::size_t> shuffled(std::size_t n, Rng& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  for (std::size_t i = n; i > 1; --i) std::swap(idx[i - 1], idx[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(i) - 1))]);
  return idx;
}

// One optimizer step over a batch. Returns the mean example loss.
double batch_step(FlowTrainer& ft, const std::vector<Example>& data, std::span<const std::size_t> batch,
                  bool use_adapter, Rng& rng, const nn::ParamList<float>& trainable, AdamW& opt, double clip,
                  long step) {
  zero_grad(trainable);
  double loss = 0.0;
  const double scale = 1.0 / static_cast<double>(batch.size());
  for (std::size_t i : batch) {
    const Example& ex = data[i];
    const double t = rng.uniform();
    const Mat<float> eps = FlowTrainer::noise(static_cast<int>(ex.x0_tokens.rows()), static_cast<int>(ex.x0_tokens.cols()), rng);
    const double l = ft.accumulate(ex, t, eps, use_adapter, scale);
    if (!std::isfinite(l)) throw NumericError("non-finite training loss at step " + std::to_string(step), step);
    loss += l * scale;
  }
  const double norm = clip_grad_norm(trainable, clip);
  if (!std::isfinite(norm)) throw NumericError("non-finite gradient norm at step " + std::to_string(step), step);
  opt.step(trainable);
  return loss;
}

void report(const ProgressFn& progress, const std::string& msg) {
  if (progress) progress(msg);
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

}  // namespace

void pretrain_base(Pipeline& p, const std::vector<Example>& train, const std::vector<Example>& val,
                   const TrainConfig& cfg, LossLog& log, const std::filesystem::path& out_dir,
                   const ProgressFn& progress) {
  cfg.validate();
  if (train.empty()) throw Error("training set is empty");
  p.model.set_base_trainable(true);
  p.model.set_lora_trainable(false);
  auto params = p.model.base_parameters();
  AdamWConfig oc;
  oc.lr = cfg.base_lr;
  oc.weight_decay = cfg.weight_decay;
  AdamW opt(oc);
  FlowTrainer ft(p, cfg.weighting);
  Rng rng(Rng::derive(cfg.seed, 100));
  const std::uint64_t val_seed = Rng::derive(cfg.seed, 7);
  std::vector<std::size_t> order;
  std::size_t cursor = 0;
  double running = 0.0;
  for (long step = 1; step <= cfg.base_steps; ++step) {
    std::vector<std::size_t> batch;
    while (static_cast<int>(batch.size()) < cfg.base_batch_size) {
      if (cursor == order.size()) {
        order = shuffled(train.size(), rng);
        cursor = 0;
      }
      batch.push_back(order[cursor++]);
    }
    if (cfg.base_warmup > 0 && step <= cfg.base_warmup)
      opt.set_lr(oc.lr * static_cast<double>(step) / static_cast<double>(cfg.base_warmup));
    const double loss = batch_step(ft, train, batch, false, rng, params, opt, cfg.clip_norm, step);
    running = step == 1 ? loss : 0.98 * running + 0.02 * loss;
    double vloss = kNaN;
    if (step == cfg.base_steps) vloss = ft.validation_loss(val, val_seed, false);
    log.add({step, 0, loss, vloss});
    if (step % cfg.log_every == 0 || step == cfg.base_steps)
      report(progress, "stage 0 step " + std::to_string(step) + "/" + std::to_string(cfg.base_steps) +
                           " loss " + fmt(running) + (std::isnan(vloss) ? "" : " val " + fmt(vloss)));
  }
  p.model.clear_cache();
  p.model.set_base_trainable(false);
  json meta = {{"stage", 0}, {"train", cfg.to_json()}, {"learning_rate", cfg.base_lr}};
  p.save(out_dir, meta);
}

TrainSummary train_adapter_lora(Pipeline& p, const std::vector<Example>& train, const std::vector<Example>& val,
                                const TrainConfig& cfg, LossLog& log, const std::filesystem::path& ckpt_root,
                                const json& extra_meta, const ProgressFn& progress) {
  cfg.validate();
  if (train.empty()) throw Error("training set is empty");
  if (!p.mask_adapter) throw Error("adapter training requires an attached mask adapter");
  TrainSummary summary;
  p.model.set_base_trainable(false);
  summary.base_hash_before = p.base_hash();

  FlowTrainer ft(p, cfg.weighting);
  const std::uint64_t val_seed = Rng::derive(cfg.seed, 7);
  Rng rng(Rng::derive(cfg.seed, 200));
  AdamWConfig oc;
  oc.lr = cfg.lr;
  oc.weight_decay = cfg.weight_decay;
  AdamW opt(oc);

  p.mask_adapter->set_trainable(true);
  p.model.set_lora_trainable(false);
  summary.init_val_loss = ft.validation_loss(val, val_seed, true);
  log.add({0, 1, kNaN, summary.init_val_loss});
  report(progress, "initial validation loss " + fmt(summary.init_val_loss));

  long step = 0;
  const int total_epochs = cfg.stage1_epochs + cfg.stage2_epochs;
  for (int epoch = 0; epoch < total_epochs; ++epoch) {
    const int stage = epoch < cfg.stage1_epochs ? 1 : 2;
    const int stage_epoch = stage == 1 ? epoch + 1 : epoch - cfg.stage1_epochs + 1;
    p.model.set_lora_trainable(stage == 2);
    nn::ParamList<float> params = p.mask_adapter->parameters();
    for (auto* q : p.model.lora_parameters()) params.push_back(q);

    const auto order = shuffled(train.size(), rng);
    double running = 0.0;
    int in_epoch = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      ++step;
      double loss = 0.0;
      try {
        loss = batch_step(ft, train, std::span<const std::size_t>(order.data() + start, end - start), true, rng,
                          params, opt, cfg.clip_norm, step);
      } catch (const NumericError&) {
        p.model.clear_cache();
        throw;
      }
      ++in_epoch;
      running = in_epoch == 1 ? loss : 0.98 * running + 0.02 * loss;
      const bool last = end == order.size();
      double vloss = kNaN;
      if (last) vloss = ft.validation_loss(val, val_seed, true);
      log.add({step, stage, loss, vloss});
      if (step % cfg.log_every == 0 || last)
        report(progress, "stage " + std::to_string(stage) + " epoch " + std::to_string(stage_epoch) + " step " +
                             std::to_string(step) + " loss " + fmt(running) +
                             (std::isnan(vloss) ? "" : " val " + fmt(vloss)));
      if (last) summary.epoch_val_loss.push_back(vloss);
    }
    p.model.clear_cache();
    json meta = extra_meta;
    meta["stage"] = stage;
    meta["epoch"] = stage_epoch;
    meta["learning_rate"] = cfg.lr;
    meta["train"] = cfg.to_json();
    meta["val_loss"] = summary.epoch_val_loss.back();
    const auto dir = ckpt_root / ("stage" + std::to_string(stage) + "_epoch" + std::to_string(stage_epoch));
    p.save(dir, meta);
    summary.final_checkpoint = dir;
  }
  p.mask_adapter->set_trainable(false);
  p.model.set_lora_trainable(false);
  summary.steps = step;
  summary.final_val_loss = summary.epoch_val_loss.empty() ? summary.init_val_loss : summary.epoch_val_loss.back();
  summary.base_hash_after = p.base_hash();
  return summary;
}

}  // namespace comogen::train
