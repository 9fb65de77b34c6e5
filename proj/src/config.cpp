#include "comogen/config.hpp"

#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>

#include "comogen/error.hpp"

namespace comogen {

using json = nlohmann::json;

namespace {

using Setter = std::function<void(const json&)>;

// Applies each key of `j` through its setter; unknown keys are an error.
void apply(const json& j, const std::string& section, const std::map<std::string, Setter>& setters) {
  if (!j.is_object()) throw FormatError("config section '" + section + "' must be an object");
  for (const auto& [key, value] : j.items()) {
    auto it = setters.find(key);
    if (it == setters.end()) throw FormatError("unknown config key " + section + "." + key);
    try {
      it->second(value);
    } catch (const json::exception& e) {
      throw FormatError("bad value for " + section + "." + key + ": " + e.what());
    }
  }
}

template <typename T>
Setter set(T& field) {
  return [&field](const json& v) { field = v.get<T>(); };
}

json world_json(const RunConfig& c) {
  const auto& w = c.world;
  return {{"frames", w.frames},
          {"width", w.width},
          {"height", w.height},
          {"min_objects", w.min_objects},
          {"max_objects", w.max_objects},
          {"min_radius", w.min_radius},
          {"max_radius", w.max_radius},
          {"subject_min_speed", w.subject_min_speed},
          {"subject_max_speed", w.subject_max_speed},
          {"other_max_speed", w.other_max_speed},
          {"aim_jitter", w.aim_jitter},
          {"placement_attempts", w.placement_attempts},
          {"text_length", w.text_length},
          {"train_samples", c.train_samples},
          {"val_samples", c.val_samples}};
}

}  // namespace

mmdit::ModelConfig RunConfig::model_config() const {
  mmdit::ModelConfig m = model;
  m.text_length = world.text_length;
  m.vocab_size = world::vocab::kSize;
  return model_config_for(codec, m, world.frames, world.height, world.width);
}

world::DatasetConfig RunConfig::dataset_config() const {
  world::DatasetConfig d;
  d.train_samples = train_samples;
  d.val_samples = val_samples;
  d.seed = seed;
  d.world = world;
  return d;
}

train::TrainConfig RunConfig::train_config() const {
  train::TrainConfig t = train;
  t.seed = Rng::derive(seed, 13);
  return t;
}

void RunConfig::validate() const {
  if (train_samples < 1 || val_samples < 1) throw RangeError("dataset splits must be non-empty");
  if (world.min_objects < 2 || world.max_objects < world.min_objects)
    throw RangeError("world needs at least two objects and min_objects <= max_objects");
  if (codec.patch < 1) throw RangeError("codec patch must be >= 1");
  codec.check_video_shape(world.frames, world.height, world.width);
  model_config().validate();
  if (flow.steps < 2) throw RangeError("flow.steps must be >= 2");
  adapter.validate();
  if (lora.rank < 1) throw RangeError("lora.rank must be >= 1");
  train.validate();
  if (train.val_samples > val_samples) throw RangeError("train.val_samples exceeds the validation split");
  if (eval.samples < 1 || eval.rank_samples < 1) throw RangeError("eval sample counts must be >= 1");
  if (eval.samples > val_samples || eval.rank_samples > val_samples)
    throw RangeError("eval sample counts exceed the validation split");
  if (eval.n_skip < 1) throw RangeError("eval.n_skip must be >= 1");
  if (eval.k < 1 || eval.k > model.depth) throw RangeError("eval.k must lie in [1, depth]");
  if (eval.tolerance < 0) throw RangeError("eval.tolerance must be >= 0");
  if (!(eval.color_threshold > 0.0)) throw RangeError("eval.color_threshold must be positive");
}

json RunConfig::to_json() const {
  json m = model.to_json();
  for (const char* derived : {"text_length", "vocab_size", "latent_frames", "latent_height", "latent_width", "channels"})
    m.erase(derived);
  return {{"world", world_json(*this)},
          {"codec", {{"patch", codec.patch}}},
          {"model", m},
          {"flow", {{"steps", flow.steps}, {"schedule", flow::schedule_name(flow.schedule)}}},
          {"adapter", adapter.to_json()},
          {"lora", lora.to_json()},
          {"train", [&] {
             json t = train.to_json();
             t.erase("seed");
             return t;
           }()},
          {"eval",
           {{"samples", eval.samples},
            {"rank_samples", eval.rank_samples},
            {"n_skip", eval.n_skip},
            {"rule", motion::rule_name(eval.rule)},
            {"k", eval.k},
            {"min_group", eval.min_group},
            {"mask_source", eval.mask_source == motion::MaskSource::generated ? "generated" : "reference"},
            {"color_threshold", eval.color_threshold},
            {"tolerance", eval.tolerance}}},
          {"paths",
           {{"data", paths.data},
            {"base_checkpoint", paths.base_checkpoint},
            {"ranking", paths.ranking},
            {"checkpoint", paths.checkpoint}}},
          {"seed", seed}};
}

RunConfig RunConfig::from_json(const json& j) {
  RunConfig c;
  auto& w = c.world;
  auto& m = c.model;
  auto& e = c.eval;
  const std::map<std::string, Setter> top = {
      {"world",
       [&](const json& v) {
         apply(v, "world",
               {{"frames", set(w.frames)},
                {"width", set(w.width)},
                {"height", set(w.height)},
                {"min_objects", set(w.min_objects)},
                {"max_objects", set(w.max_objects)},
                {"min_radius", set(w.min_radius)},
                {"max_radius", set(w.max_radius)},
                {"subject_min_speed", set(w.subject_min_speed)},
                {"subject_max_speed", set(w.subject_max_speed)},
                {"other_max_speed", set(w.other_max_speed)},
                {"aim_jitter", set(w.aim_jitter)},
                {"placement_attempts", set(w.placement_attempts)},
                {"text_length", set(w.text_length)},
                {"train_samples", set(c.train_samples)},
                {"val_samples", set(c.val_samples)}});
       }},
      {"codec", [&](const json& v) { apply(v, "codec", {{"patch", set(c.codec.patch)}}); }},
      {"model",
       [&](const json& v) {
         apply(v, "model",
               {{"depth", set(m.depth)},
                {"width", set(m.width)},
                {"heads", set(m.heads)},
                {"mlp_ratio", set(m.mlp_ratio)},
                {"time_features", set(m.time_features)},
                {"sigma_data", set(m.sigma_data)}});
       }},
      {"flow",
       [&](const json& v) {
         apply(v, "flow",
               {{"steps", set(c.flow.steps)},
                {"schedule", [&](const json& s) { c.flow.schedule = flow::parse_schedule(s.get<std::string>()); }}});
       }},
      {"adapter", [&](const json& v) { c.adapter = adapter::AdapterConfig::from_json(v); }},
      {"lora", [&](const json& v) { apply(v, "lora", {{"rank", set(c.lora.rank)}, {"alpha", set(c.lora.alpha)}}); }},
      {"train",
       [&](const json& v) {
         if (!v.is_object()) throw FormatError("config section 'train' must be an object");
         json merged = c.train.to_json();
         for (const auto& [key, value] : v.items()) {
           if (!merged.contains(key) || key == "seed") throw FormatError("unknown config key train." + key);
           merged[key] = value;
         }
         c.train = train::TrainConfig::from_json(merged);
       }},
      {"eval",
       [&](const json& v) {
         apply(v, "eval",
               {{"samples", set(e.samples)},
                {"rank_samples", set(e.rank_samples)},
                {"n_skip", set(e.n_skip)},
                {"rule", [&](const json& s) { e.rule = motion::parse_rule(s.get<std::string>()); }},
                {"k", set(e.k)},
                {"min_group", set(e.min_group)},
                {"mask_source",
                 [&](const json& s) { e.mask_source = motion::parse_mask_source(s.get<std::string>()); }},
                {"color_threshold", set(e.color_threshold)},
                {"tolerance", set(e.tolerance)}});
       }},
      {"paths",
       [&](const json& v) {
         apply(v, "paths",
               {{"data", set(c.paths.data)},
                {"base_checkpoint", set(c.paths.base_checkpoint)},
                {"ranking", set(c.paths.ranking)},
                {"checkpoint", set(c.paths.checkpoint)}});
       }},
      {"seed", set(c.seed)}};
  apply(j, "config", top);
  c.validate();
  return c;
}

RunConfig load_config(const std::optional<std::filesystem::path>& path) {
  json j = json::object();
  if (path && !path->empty()) {
    std::ifstream in(*path);
    if (!in) throw Error("cannot open config " + path->string());
    try {
      j = json::parse(in);
    } catch (const json::parse_error& e) {
      throw FormatError("config " + path->string() + " is not valid JSON: " + e.what());
    }
  }
  if (const char* env = std::getenv("COMOGEN_SEED"); env && *env) {
    char* end = nullptr;
    const unsigned long long v = std::strtoull(env, &end, 10);
    if (*end != '\0') throw FormatError(std::string("COMOGEN_SEED is not an unsigned integer: ") + env);
    j["seed"] = v;
  }
  return RunConfig::from_json(j);
}

void echo_config(const RunConfig& cfg, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::ofstream out(dir / "config.json");
  if (!out) throw Error("cannot write " + (dir / "config.json").string());
  out << cfg.to_json().dump(2) << "\n";
}

}  // namespace comogen
