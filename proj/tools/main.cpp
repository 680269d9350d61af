#include <CLI11.hpp>

#include <iostream>

#include "fsvos/cli.hpp"
#include "fsvos/errors.hpp"

int main(int argc, char** argv) {
  using namespace fsvos;
  CLI::App app{"Few-shot video object segmentation on synthetic shapes"};
  app.require_subcommand(1);

  std::string config_path;
  std::string output_dir;
  const auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("-c,--config", config_path, "JSON run config (defaults when omitted)");
    cmd->add_option("-o,--output-dir", output_dir, "Override output_dir");
  };

  auto* gen = app.add_subcommand("gen-data", "Render the synthetic dataset to disk");
  add_common(gen);

  auto* train = app.add_subcommand("train-image", "Phase-1 episodic training on base classes");
  add_common(train);
  int iterations = -1;
  std::string resume;
  train->add_option("--iterations", iterations, "Total iterations (Adam only)");
  train->add_option("--resume", resume, "Continue from this checkpoint");

  auto* rel = app.add_subcommand("relearn", "Phase-2 relearning on one clip");
  add_common(rel);
  cli::RelearnOptions ropts;
  std::string ckpt;
  std::vector<double> lambdas;
  int max_iterations = -2;
  rel->add_option("--checkpoint", ckpt, "Phase-1 checkpoint");
  rel->add_option("--clip", ropts.clip, "Clip index");
  rel->add_option("--lambda", lambdas, "Loss weights L_t L_f L_p")->expected(3);
  rel->add_option("--max-iterations", max_iterations, "Cap on optimizer steps");

  auto* ev = app.add_subcommand("eval", "Score clips and write overlays");
  add_common(ev);
  std::string mode = "naive";
  cli::EvalOptions eopts;
  ev->add_option("--checkpoint", ckpt, "Checkpoint to evaluate");
  ev->add_option("--mode", mode, "naive or relearned")->check(CLI::IsMember({"naive", "relearned"}));
  ev->add_option("--clips", eopts.clips, "Clip indices (default all)");

  auto* abl = app.add_subcommand("ablate", "Loss on/off relearning table");
  add_common(abl);
  abl->add_option("--checkpoint", ckpt, "Phase-1 checkpoint (trained when omitted)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? cli::kExitOk : cli::kExitConfig;
  }

  try {
    RunConfig cfg = config_path.empty() ? parse_run_config(nlohmann::json::object()) : load_run_config(config_path);
    if (!output_dir.empty()) cfg.output_dir = output_dir;

    if (*gen) {
      cli::gen_data(cfg, std::cout);
    } else if (*train) {
      cli::TrainOptions topts;
      if (iterations >= 0) topts.iterations = iterations;
      topts.resume = resume;
      cli::train_image(cfg, topts, std::cout);
    } else if (*rel) {
      if (!lambdas.empty()) cfg.phase2.weights = {lambdas[0], lambdas[1], lambdas[2]};
      if (max_iterations != -2) cfg.phase2.max_iterations = max_iterations;
      cfg.validate();
      ropts.checkpoint = ckpt;
      cli::relearn_clip(cfg, ropts, std::cout);
    } else if (*ev) {
      eopts.checkpoint = ckpt;
      eopts.mode = mode == "naive" ? cli::EvalMode::kNaive : cli::EvalMode::kRelearned;
      cli::eval(cfg, eopts, std::cout);
    } else if (*abl) {
      cli::ablate(cfg, ckpt, std::cout);
    }
  } catch (...) {
    return cli::exit_code_for_current_exception(std::cerr);
  }
  return cli::kExitOk;
}
