#include <doctest.h>

#include <cmath>
#include <sstream>

#include "comogen/checkpoint.hpp"
#include "comogen/error.hpp"
#include "comogen/loratrain.hpp"
#include "test_util.hpp"
#include "tiny.hpp"

using namespace comogen;
using namespace comogen::train;

namespace {

// Reference AdamW on one scalar, in double.
struct ScalarAdamW {
  double lr, b1 = 0.9, b2 = 0.999, eps = 1e-8, wd;
  double m = 0.0, v = 0.0;
  int t = 0;
  double step(double x, double g) {
    ++t;
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g * g;
    const double mh = m / (1 - std::pow(b1, t)), vh = v / (1 - std::pow(b2, t));
    return x * (1 - lr * wd) - lr * mh / (std::sqrt(vh) + eps);
  }
};

// Sums the element counts of manifest tensors whose name starts with ns/.
std::size_t manifest_count(const nlohmann::json& manifest, const std::string& ns) {
  std::size_t n = 0;
  for (const auto& t : manifest.at("tensors")) {
    const std::string name = t.at("name");
    if (name.rfind(ns + "/", 0) != 0) continue;
    std::size_t c = 1;
    for (const auto& s : t.at("shape")) c *= s.get<std::size_t>();
    n += c;
  }
  return n;
}

struct Conditioned {
  test::TempDir dir;
  std::vector<world::Sample> samples;
  Pipeline p = tiny::pipeline(3);

  Conditioned() {
    samples = tiny::dataset(dir.path / "data", 4, 2);
    Rng rng(5);
    // Zero-gated fresh blocks pass no gradient into the attention layers.
    for (auto* q : p.model.base_parameters()) nn::fill_normal(q->value, rng, 0.1);
    p.add_adapter(adapter::AdapterConfig{}, rng);
    p.model.attach_lora({1, 2}, 4, 4.0, rng);
  }
};

}  // namespace

TEST_CASE("AdamW matches a scalar reference") {
  nn::Param<float> a("a", 1, 2), frozen("f", 1, 1);
  a.value << 1.0f, -2.0f;
  frozen.value << 3.0f;
  frozen.trainable = false;
  AdamWConfig cfg;
  cfg.lr = 0.1;
  AdamW opt(cfg);
  ScalarAdamW r0{0.1, 0.9, 0.999, 1e-8, 0.01}, r1{0.1, 0.9, 0.999, 1e-8, 0.01};
  double x0 = 1.0, x1 = -2.0;
  const double grads[3][2] = {{0.5, -1.0}, {-0.5, 0.25}, {2.0, 0.0}};
  for (const auto& g : grads) {
    a.grad << static_cast<float>(g[0]), static_cast<float>(g[1]);
    frozen.grad << 1.0f;
    opt.step({&a, &frozen});
    x0 = r0.step(x0, g[0]);
    x1 = r1.step(x1, g[1]);
    CHECK(a.value(0, 0) == doctest::Approx(x0).epsilon(1e-6));
    CHECK(a.value(0, 1) == doctest::Approx(x1).epsilon(1e-6));
  }
  CHECK(frozen.value(0, 0) == 3.0f);
  CHECK(opt.steps() == 3);
}

TEST_CASE("gradient clipping") {
  nn::Param<float> a("a", 1, 2), b("b", 1, 1);
  a.grad << 3.0f, 0.0f;
  b.grad << 4.0f;
  CHECK(grad_norm({&a, &b}) == doctest::Approx(5.0));
  CHECK(clip_grad_norm({&a, &b}, 1.0) == doctest::Approx(5.0));
  CHECK(a.grad(0, 0) == doctest::Approx(0.6));
  CHECK(b.grad(0, 0) == doctest::Approx(0.8));
  CHECK(clip_grad_norm({&a, &b}, 10.0) == doctest::Approx(1.0));
  CHECK(b.grad(0, 0) == doctest::Approx(0.8));
  zero_grad({&a, &b});
  CHECK(grad_norm({&a, &b}) == 0.0);
}

TEST_CASE("train config parsing is strict") {
  TrainConfig c;
  CHECK(c.lr == 5e-5);
  const auto back = TrainConfig::from_json(c.to_json());
  CHECK(back.to_json() == c.to_json());
  auto j = c.to_json();
  j["lr"] = 1e-3;
  CHECK_THROWS_AS(TrainConfig::from_json(j), FormatError);
  c.batch_size = 0;
  CHECK_THROWS(c.validate());
}

TEST_CASE("fresh adapter and LoRA do not change sampling") {
  test::TempDir d;
  const auto samples = tiny::dataset(d.path, 0, 1);
  auto base = tiny::pipeline(7);
  auto cond = tiny::pipeline(7);
  Rng rng(8);
  cond.add_adapter(adapter::AdapterConfig{}, rng);
  cond.model.attach_lora({0, 3}, 4, 8.0, rng);
  const auto& s = samples[0];
  const auto first = cond.codec.encode_first_frame(s.video);
  const auto mask = cond.codec.latentize_mask(s.mask);
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    GenerateOptions go;
    go.steps = 4;
    go.noise_seed = seed;
    const auto a = base.generate_latent(first, s.caption, nullptr, go);
    const auto b = cond.generate_latent(first, s.caption, &mask, go);
    double worst = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(double(a.data[i]) - b.data[i]));
    CHECK(worst <= 1e-6);
  }
}

TEST_CASE("parameter percentages") {
  const auto r = param_report(100000, 1000, 500);
  CHECK(r.inference_extra_pct == 1.0);
  CHECK(r.lora_pct == 0.5);
  CHECK(r.training_extra_pct == 1.5);
  CHECK_THROWS_AS(param_report(0, 1, 1), RangeError);
}

TEST_CASE("parameter accounting matches the checkpoint manifest") {
  Conditioned c;
  const auto r = param_report(c.p);
  c.p.save(c.dir.path / "ck");
  const auto manifest = test::read_json(c.dir.path / "ck" / "manifest.json");
  CHECK(r.base == manifest_count(manifest, "base"));
  CHECK(r.adapter == manifest_count(manifest, "adapter"));
  CHECK(r.lora == manifest_count(manifest, "lora"));
  CHECK(r.lora == 2u * 8u * (16u * 4u + 4u * 16u));
  CHECK(r.inference_extra_pct == doctest::Approx(100.0 * r.adapter / r.base));
  CHECK(r.training_extra_pct == r.inference_extra_pct + r.lora_pct);
  const auto j = r.to_json();
  CHECK(j.at("base_params").get<std::size_t>() == r.base);
  CHECK(r.table().find(std::to_string(r.base)) != std::string::npos);
}

TEST_CASE("two-stage training keeps the backbone frozen") {
  Conditioned c;
  const auto train_ex = prepare_examples(c.p.codec, world::load_dataset(c.dir.path / "data", "train"));
  const auto val_ex = prepare_examples(c.p.codec, world::load_dataset(c.dir.path / "data", "val"));
  TrainConfig cfg;
  cfg.val_samples = 2;
  cfg.log_every = 1;
  cfg.seed = 9;
  LossLog log(c.dir.path / "loss.csv");
  std::vector<nn::Mat<float>> lora_init;
  for (auto* q : c.p.model.lora_parameters()) lora_init.push_back(q->value);
  const auto summary = train_adapter_lora(c.p, train_ex, val_ex, cfg, log, c.dir.path / "ckpts");

  for (auto* q : c.p.model.base_parameters()) {
    CHECK(!q->trainable);
    CHECK(q->grad.cwiseAbs().maxCoeff() == 0.0f);
  }

  CHECK(summary.base_hash_before == summary.base_hash_after);
  CHECK(summary.base_hash_before.size() == 64);
  CHECK(summary.epoch_val_loss.size() == 3);
  CHECK(summary.steps == 3 * 2);
  CHECK(std::isfinite(summary.init_val_loss));
  CHECK(summary.final_val_loss == summary.epoch_val_loss.back());

  for (const char* name : {"stage1_epoch1", "stage2_epoch1", "stage2_epoch2"}) {
    const auto dir = c.dir.path / "ckpts" / name;
    REQUIRE(std::filesystem::exists(dir / "manifest.json"));
    const auto m = test::read_json(dir / "manifest.json");
    CHECK(m.at("learning_rate").get<double>() == 5e-5);
    CHECK(m.at("base_sha256") == summary.base_hash_before);
    // Hash recomputed from the stored tensors alone.
    auto reloaded = Pipeline::load(dir);
    CHECK(reloaded.base_hash() == summary.base_hash_before);
  }

  // LoRA up-projections stay at zero through stage 1 and move in stage 2.
  auto up_max = [](Pipeline& p) {
    double m = 0.0;
    for (auto* q : p.model.lora_parameters())
      if (q->name.find("up") != std::string::npos) m = std::max(m, double(q->value.cwiseAbs().maxCoeff()));
    return m;
  };
  auto s1 = Pipeline::load(c.dir.path / "ckpts" / "stage1_epoch1");
  auto s2 = Pipeline::load(c.dir.path / "ckpts" / "stage2_epoch2");
  CHECK(up_max(s1) == 0.0);
  const auto s1_lora = s1.model.lora_parameters();
  REQUIRE(s1_lora.size() == lora_init.size());
  for (std::size_t i = 0; i < lora_init.size(); ++i) CHECK((s1_lora[i]->value.array() == lora_init[i].array()).all());
  CHECK(up_max(s2) > 0.0);
  CHECK(s1.describe() == c.p.describe());

  std::istringstream csv(test::read_file(c.dir.path / "loss.csv"));
  std::string line;
  std::getline(csv, line);
  CHECK(line == "step,stage,train_loss,val_loss");
  std::set<int> stages;
  while (std::getline(csv, line)) stages.insert(std::stoi(line.substr(line.find(',') + 1)));
  CHECK(stages == std::set<int>{1, 2});
}

TEST_CASE("training without an adapter is rejected") {
  test::TempDir d;
  auto p = tiny::pipeline();
  const auto ex = prepare_examples(p.codec, tiny::dataset(d.path / "data", 2, 1));
  LossLog log(d.path / "loss.csv");
  CHECK_THROWS(train_adapter_lora(p, ex, ex, TrainConfig{}, log, d.path / "ck"));
}
