// Command-line front end: train / probe / analyze / sweep / export, driven by
// a JSON experiment config. Exit codes: 0 success, 1 training missed its
// target, 2 validation error, 3 probe divergence, 4 provenance mismatch.

#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "losskern/config.hpp"
#include "losskern/pipeline.hpp"

namespace {

int run(int argc, char** argv) {
  CLI::App app{"loss-kernel probes: train models, sample loss matrices, estimate kernels"};
  app.require_subcommand(1);

  std::string config_path;
  std::string checkpoint;
  std::string tag = "loss_matrix";
  std::vector<std::string> matrices;
  std::string input, output, format = "csv";

  CLI::App* train = app.add_subcommand("train", "train the configured model, write checkpoints");
  train->add_option("--config", config_path, "experiment config (JSON)")
      ->required()
      ->check(CLI::ExistingFile);

  CLI::App* probe = app.add_subcommand("probe", "sample a loss matrix around a checkpoint");
  probe->add_option("--config", config_path, "experiment config (JSON)")
      ->required()
      ->check(CLI::ExistingFile);
  probe->add_option("--checkpoint", checkpoint,
                    "checkpoint to probe (default: <output_dir>/checkpoint_final.ckpt)");
  probe->add_option("--tag", tag, "output file stem (default: loss_matrix)");

  CLI::App* analyze =
      app.add_subcommand("analyze", "estimate kernels and metric reports from loss matrices");
  analyze->add_option("--config", config_path, "experiment config (JSON)")
      ->required()
      ->check(CLI::ExistingFile);
  analyze->add_option("matrices", matrices, "loss-matrix files")
      ->required()
      ->check(CLI::ExistingFile);

  CLI::App* sweep =
      app.add_subcommand("sweep", "probe across the configured gamma or checkpoint list");
  sweep->add_option("--config", config_path, "experiment config (JSON)")
      ->required()
      ->check(CLI::ExistingFile);

  CLI::App* exp = app.add_subcommand("export", "convert a binary artifact to text");
  exp->add_option("--input", input, "kernel or loss-matrix file")
      ->required()
      ->check(CLI::ExistingFile);
  exp->add_option("--format", format, "csv or edge-list")
      ->check(CLI::IsMember({"csv", "edge-list"}));
  exp->add_option("--output", output, "destination text file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : losskern::kExitValidation;
  }

  if (train->parsed()) {
    losskern::ExperimentConfig cfg = losskern::load_config(config_path);
    losskern::TrainOutcome out = losskern::cmd_train(cfg, std::cout);
    return out.reached ? losskern::kExitOk : losskern::kExitTrainMiss;
  }
  if (probe->parsed()) {
    losskern::ExperimentConfig cfg = losskern::load_config(config_path);
    if (checkpoint.empty())
      checkpoint =
          (std::filesystem::path(cfg.output_dir) / "checkpoint_final.ckpt").string();
    losskern::cmd_probe(cfg, checkpoint, std::cout, tag);
    return losskern::kExitOk;
  }
  if (analyze->parsed()) {
    losskern::ExperimentConfig cfg = losskern::load_config(config_path);
    losskern::cmd_analyze(cfg, matrices, std::cout);
    return losskern::kExitOk;
  }
  if (sweep->parsed()) {
    losskern::ExperimentConfig cfg = losskern::load_config(config_path);
    losskern::cmd_sweep(cfg, std::cout);
    return losskern::kExitOk;
  }
  losskern::cmd_export(input, format, output);
  return losskern::kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const losskern::DivergenceError& e) {
    std::cerr << "divergence: " << e.what() << "\n";
    return losskern::kExitDivergence;
  } catch (const losskern::ProvenanceError& e) {
    std::cerr << "provenance: " << e.what() << "\n";
    return losskern::kExitProvenance;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return losskern::kExitValidation;
  }
}
