#include <iostream>

#include <CLI11.hpp>

#include "commands.hpp"
#include "comogen/error.hpp"

namespace cli = comogen::cli;

namespace {

template <class Args>
void add_config(CLI::App* sub, Args& a) {
  sub->add_option_function<std::string>(
         "--config", [&a](const std::string& p) { a.config = p; }, "run configuration (JSON)")
      ->check(CLI::ExistingFile);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"comogen: mask-conditioned video generation on a synthetic physics world"};
  app.require_subcommand(1);

  cli::GenDataArgs gen;
  auto* s_gen = app.add_subcommand("gen-data", "generate the synthetic dataset");
  add_config(s_gen, gen);
  s_gen->add_option("--out", gen.out, "dataset directory")->required();
  s_gen->add_flag("--force", gen.force, "overwrite an existing dataset");

  cli::TrainArgs tr;
  auto* s_train = app.add_subcommand("train", "train the mask adapter and motion-layer LoRA");
  add_config(s_train, tr);
  s_train->add_option("--data", tr.data, "dataset directory")->required()->check(CLI::ExistingDirectory);
  s_train->add_option("--out", tr.out, "output directory")->required();
  s_train->add_option_function<std::string>(
      "--base", [&tr](const std::string& p) { tr.base = p; }, "pretrained base checkpoint (pretrains when absent)");
  s_train->add_option_function<std::string>(
      "--ranking", [&tr](const std::string& p) { tr.ranking = p; }, "layer ranking JSON (ranks when absent)");

  cli::RankArgs rk;
  auto* s_rank = app.add_subcommand("rank-layers", "score every layer by subject-token attention");
  add_config(s_rank, rk);
  s_rank->add_option("--ckpt", rk.ckpt, "checkpoint directory")->required()->check(CLI::ExistingDirectory);
  s_rank->add_option("--data", rk.data, "dataset directory")->required()->check(CLI::ExistingDirectory);
  s_rank->add_option("--out", rk.out, "output directory")->required();

  cli::SkipArgs sk;
  auto* s_skip = app.add_subcommand("skip-ablate", "compare skipping motion and non-motion layers");
  add_config(s_skip, sk);
  s_skip->add_option("--ckpt", sk.ckpt, "checkpoint directory")->required()->check(CLI::ExistingDirectory);
  s_skip->add_option("--ranking", sk.ranking, "layer ranking JSON")->required()->check(CLI::ExistingFile);
  s_skip->add_option("--data", sk.data, "dataset directory")->required()->check(CLI::ExistingDirectory);
  s_skip->add_option("--out", sk.out, "output directory")->required();

  cli::SampleArgs sm;
  auto* s_sample = app.add_subcommand("sample", "generate one video");
  add_config(s_sample, sm);
  s_sample->add_option("--ckpt", sm.ckpt, "checkpoint directory")->required()->check(CLI::ExistingDirectory);
  s_sample->add_option("--first-frame", sm.first_frame, "sample directory or single-frame .rgb24 file")
      ->required()
      ->check(CLI::ExistingPath);
  s_sample->add_option("--mask", sm.mask, "sample directory or .gray8 mask file")->required()->check(CLI::ExistingPath);
  s_sample->add_option_function<int>("--steps", [&sm](int s) { sm.steps = s; }, "sampling steps");
  s_sample->add_option("--out", sm.out, "output directory")->required();
  s_sample->add_flag("--no-cosine", sm.no_cosine, "constant injection weight at every step");
  s_sample->add_flag("--no-mask", sm.no_mask, "disable mask conditioning");
  s_sample->add_option("--skip", sm.skip, "layers to bypass, comma separated")->delimiter(',');
  s_sample->add_option_function<std::string>(
      "--caption", [&sm](const std::string& c) { sm.caption = c; }, "caption text, e.g. \"red circle\"");
  s_sample->add_option_function<std::string>(
                "--transforms", [&sm](const std::string& p) { sm.transforms = p; },
                "JSON list of per-frame {dx, dy, angle_deg} applied to the first mask frame")
      ->check(CLI::ExistingFile);
  s_sample->add_option_function<unsigned long long>(
      "--seed", [&sm](unsigned long long s) { sm.seed = s; }, "noise seed");

  cli::EvalArgs ev;
  auto* s_eval = app.add_subcommand("eval", "score generated samples against references");
  add_config(s_eval, ev);
  s_eval->add_option("--gen", ev.gen, "generated samples")->required()->check(CLI::ExistingDirectory);
  s_eval->add_option("--ref", ev.ref, "reference dataset")->required()->check(CLI::ExistingDirectory);
  s_eval->add_option("--out", ev.out, "output directory")->required();

  cli::AblateArgs ab;
  auto* s_ablate = app.add_subcommand("ablate", "three-row ablation of the training recipe");
  add_config(s_ablate, ab);
  s_ablate->add_option("--out", ab.out, "output directory")->required();

  CLI11_PARSE(app, argc, argv);

  std::filesystem::path out;
  try {
    if (*s_gen) return out = gen.out, cli::gen_data(gen);
    if (*s_train) return out = tr.out, cli::train(tr);
    if (*s_rank) return out = rk.out, cli::rank_layers(rk);
    if (*s_skip) return out = sk.out, cli::skip_ablate(sk);
    if (*s_sample) return out = sm.out, cli::sample(sm);
    if (*s_eval) return out = ev.out, cli::eval(ev);
    if (*s_ablate) return out = ab.out, cli::ablate(ab);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << std::endl;
    if (!out.empty()) cli::mark_failed(out, e.what());
    return 1;
  }
  return 2;
}
