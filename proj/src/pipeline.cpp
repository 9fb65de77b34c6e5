#include "comogen/pipeline.hpp"

#include "comogen/error.hpp"

namespace comogen {

mmdit::ModelConfig model_config_for(const codec::Codec& codec, mmdit::ModelConfig base, int frames, int height,
                                    int width) {
  codec.check_video_shape(frames, height, width);
  base.latent_frames = frames / codec::kTemporalFactor;
  base.latent_height = height / codec.patch;
  base.latent_width = width / codec.patch;
  base.channels = codec.channels();
  return base;
}

Pipeline::Pipeline(const codec::Codec& c, const mmdit::ModelConfig& model_cfg) : codec(c), model(model_cfg) {
  if (model_cfg.channels != c.channels()) throw DimensionError("model channel count does not match the codec");
}

void Pipeline::add_adapter(const adapter::AdapterConfig& cfg, Rng& rng) {
  const auto& m = model.config();
  mask_adapter.emplace(cfg, m.channels, m.latent_frames, m.latent_height, m.latent_width);
  mask_adapter->init(rng);
}

codec::LatentGrid Pipeline::residual(const codec::LatentMask& mask) {
  const auto& m = model.config();
  if (!mask_adapter) return codec::LatentGrid(m.channels, m.latent_frames, m.latent_height, m.latent_width);
  return mask_adapter->adapt(mask);
}

codec::LatentGrid Pipeline::generate_latent(const codec::LatentGrid& first_frame, const world::Caption& caption,
                                            const codec::LatentMask* mask, const GenerateOptions& opt) {
  const auto& m = model.config();
  const codec::LatentGrid eps = flow::gaussian_latent(m.channels, m.latent_frames, m.latent_height, m.latent_width,
                                                      opt.noise_seed);
  std::optional<codec::LatentGrid> dz;
  if (mask && opt.use_mask && mask_adapter) dz = residual(*mask);
  const nn::Mat<float> cond = mmdit::to_tokens<float>(first_frame);
  mmdit::ForwardOptions fo;
  fo.skip_layers = opt.skip_layers;
  fo.record = opt.record;
  auto velocity = [&](const codec::LatentGrid& z, double t, int step) {
    if (opt.record) opt.record->step = step;
    const nn::Mat<float> out = model.forward(mmdit::to_tokens<float>(z), cond, caption.token_ids, t, fo);
    return mmdit::from_tokens<float>(out, z);
  };
  const auto weights = flow::schedule_weights(opt.steps, opt.schedule);
  return flow::integrate(velocity, eps, dz ? &*dz : nullptr, opt.steps, weights);
}

VideoTensor Pipeline::generate_video(const VideoTensor& first_frame_image, const world::Caption& caption,
                                     const MaskSequence* mask, const GenerateOptions& opt) {
  const codec::LatentGrid cond = codec.encode_first_frame(first_frame_image);
  std::optional<codec::LatentMask> lm;
  if (mask) lm = codec.latentize_mask(*mask);
  return codec.decode_video(generate_latent(cond, caption, lm ? &*lm : nullptr, opt));
}

nlohmann::json Pipeline::describe() const {
  nlohmann::json j = {{"codec", {{"patch", codec.patch}, {"temporal_factor", codec::kTemporalFactor}}},
                      {"model", model.config().to_json()}};
  if (mask_adapter) j["adapter"] = mask_adapter->config().to_json();
  if (!model.lora_layers().empty()) {
    j["lora"] = {{"rank", model.lora_rank()},
                 {"alpha", model.lora_alpha()},
                 {"layers", std::vector<int>(model.lora_layers().begin(), model.lora_layers().end())}};
  }
  return j;
}

void Pipeline::save(const std::filesystem::path& dir, const nlohmann::json& extra) {
  ckpt::Checkpoint c;
  c.meta = extra;
  c.meta["pipeline"] = describe();
  ckpt::append(c, "base", model.base_parameters());
  if (mask_adapter) ckpt::append(c, "adapter", mask_adapter->parameters());
  if (!model.lora_layers().empty()) ckpt::append(c, "lora", model.lora_parameters());
  c.meta["base_sha256"] = base_hash();
  ckpt::save(dir, c);
}

Pipeline Pipeline::from_checkpoint(const ckpt::Checkpoint& c) {
  if (!c.meta.contains("pipeline")) throw FormatError("checkpoint lacks the pipeline description");
  const auto& p = c.meta.at("pipeline");
  codec::Codec cd;
  cd.patch = p.at("codec").at("patch");
  Pipeline out(cd, mmdit::ModelConfig::from_json(p.at("model")));
  Rng rng(0);
  if (p.contains("lora")) {
    const auto layers = p.at("lora").at("layers").get<std::vector<int>>();
    out.model.attach_lora({layers.begin(), layers.end()}, p.at("lora").at("rank"), p.at("lora").at("alpha"), rng);
  }
  ckpt::restore(c, "base", out.model.base_parameters());
  if (p.contains("lora")) ckpt::restore(c, "lora", out.model.lora_parameters());
  if (p.contains("adapter")) {
    out.add_adapter(adapter::AdapterConfig::from_json(p.at("adapter")), rng);
    ckpt::restore(c, "adapter", out.mask_adapter->parameters());
  }
  return out;
}

Pipeline Pipeline::load(const std::filesystem::path& dir) { return from_checkpoint(ckpt::load(dir)); }

std::string Pipeline::base_hash() { return ckpt::hash_parameters(model.base_parameters()); }

}  // namespace comogen
