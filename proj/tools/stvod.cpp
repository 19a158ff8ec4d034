// Command-line entry point: generate, train, eval, gradcheck.

#include <CLI11.hpp>
#include <chrono>
#include <cstdio>
#include <iostream>

#include "stvod/gradcheck_suite.hpp"
#include "stvod/pipeline.hpp"

namespace {

constexpr int kOk = 0;
constexpr int kUsage = 1;
constexpr int kNumerical = 2;

stvod::RunConfig config_from(const std::string& path) {
  stvod::RunConfig config = path.empty() ? stvod::RunConfig{} : stvod::load_config(path);
  stvod::apply_env_overrides(config);
  config.validate();
  return config;
}

int gradcheck(const std::string& config_path) {
  const stvod::RunConfig config = config_from(config_path);
  const auto start = std::chrono::steady_clock::now();
  auto checks = stvod::op_checks();
  for (auto& c : stvod::composite_checks(config)) checks.push_back(std::move(c));
  const auto reports = stvod::run_checks(checks, stvod::GradCheckOptions{});
  bool ok = true;
  for (const auto& r : reports) {
    std::cout << r.summary() << "\n";
    ok &= r.passed;
  }
  const double seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  std::printf("%zu checks, %s, %.1f s\n", reports.size(), ok ? "all passed" : "FAILED", seconds);
  return ok ? kOk : kNumerical;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Spatio-temporal transformer video object detection on synthetic clips"};
  app.require_subcommand(1);

  std::string config_path, out, data, stage = "both", checkpoint, init, mode = "auto", split = "val";
  bool freeze = false, overlays = false;
  double overlay_threshold = 0.5;

  auto* gen = app.add_subcommand("generate", "write a synthetic train/val dataset");
  gen->add_option("--config", config_path, "config file (key = value)");
  gen->add_option("--out", out, "output directory")->required();

  auto* tr = app.add_subcommand("train", "train the spatial and/or temporal stage");
  tr->add_option("--config", config_path, "config file")->required();
  tr->add_option("--data", data, "dataset directory (from generate)")->required();
  tr->add_option("--out", out, "output directory")->required();
  tr->add_option("--stage", stage, "spatial, temporal or both")
      ->check(CLI::IsMember({"spatial", "temporal", "both"}));
  tr->add_flag("--freeze-spatial", freeze, "keep spatial parameters fixed in the temporal stage");
  tr->add_option("--init", init, "checkpoint directory to warm-start from");

  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint");
  ev->add_option("--checkpoint", checkpoint, "checkpoint directory")->required();
  ev->add_option("--data", data, "dataset directory")->required();
  ev->add_option("--out", out, "output directory (default: <checkpoint>/eval)");
  ev->add_option("--config", config_path, "refuse unless this config matches the checkpoint");
  ev->add_option("--mode", mode, "auto, spatial or temporal")
      ->check(CLI::IsMember({"auto", "spatial", "temporal"}));
  ev->add_option("--split", split, "dataset split to evaluate (train or val)");
  ev->add_flag("--overlays", overlays, "write PPM overlays of drawn detections");
  ev->add_option("--overlay-threshold", overlay_threshold, "minimum score of drawn boxes");

  auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient suite");
  gc->add_option("--config", config_path, "config file (loss weights)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*gen) {
      const auto config = config_from(config_path);
      stvod::run_generate(config, out);
      std::cout << "wrote " << config.data.train_clips << " train and " << config.data.val_clips
                << " val clips to " << out << "\n";
    } else if (*tr) {
      const auto config = config_from(config_path);
      const auto s = stvod::run_train(config, data, out, stage, freeze, init);
      std::cout << "trained " << s.spatial_steps << " spatial and " << s.temporal_steps
                << " temporal steps; last loss " << s.last_loss << "\n";
    } else if (*ev) {
      stvod::EvalOptions options;
      options.overlays = overlays;
      options.overlay_threshold = overlay_threshold;
      options.mode = mode;
      options.split = split;
      options.config = config_path;
      const std::string dest = out.empty() ? checkpoint + "/eval" : out;
      const auto result = stvod::run_eval(checkpoint, data, dest, options);
      if (result.result.map) {
        std::printf("mAP@0.5 = %.4f\n", *result.result.map);
      } else {
        std::printf("mAP@0.5 undefined (no ground truth)\n");
      }
    } else if (*gc) {
      return gradcheck(config_path);
    }
  } catch (const stvod::NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return kNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  }
  return kOk;
}
