#include <cstdint>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "blockcal/errors.hpp"
#include "blockcal/pipeline.hpp"

int main(int argc, char** argv) {
  CLI::App app{"block composite likelihood calibration pipeline"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir = "out";
  std::uint64_t seed = 0;
  std::size_t threads = 0;
  app.fallthrough();  // accept the global options after the subcommand name too

  auto* config_opt = app.add_option("--config", config_path, "pipeline config JSON file");
  auto* seed_opt = app.add_option("--seed", seed, "override the config seed");
  auto* threads_opt = app.add_option("--threads", threads, "worker thread cap");
  app.add_option("--out", out_dir, "artifact directory");

  auto* c_tess = app.add_subcommand("tessellate", "partition the grid into blocks");
  auto* c_emul = app.add_subcommand("emulate", "fit the model-output emulator");
  auto* c_cal = app.add_subcommand("calibrate", "sample the composite posterior");
  bool resume = false;
  c_cal->add_flag("--resume", resume, "extend a persisted chain to the configured length");
  auto* c_adj = app.add_subcommand("adjust", "sandwich-adjust the posterior chain");
  auto* c_exp = app.add_subcommand("experiment", "run the synthetic-truth experiment");
  auto* c_rep = app.add_subcommand("report", "summarize persisted chains");
  auto* c_ora = app.add_subcommand("oracle", "dense-likelihood posterior grid");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    nlohmann::json j;
    j["error"] = "usage";
    j["message"] = e.what();
    std::cerr << j.dump() << "\n";
    return 2;
  }

  try {
    if (config_opt->count() == 0) throw blockcal::ConfigError("--config is required");
    blockcal::PipelineConfig cfg = blockcal::load_pipeline_config(config_path);
    if (seed_opt->count() > 0) cfg.seed = seed;
    if (threads_opt->count() > 0) cfg.threads = threads;
    blockcal::validate_pipeline_config(cfg);

    if (*c_tess) {
      blockcal::cmd_tessellate(cfg, out_dir);
    } else if (*c_emul) {
      blockcal::cmd_emulate(cfg, out_dir);
    } else if (*c_cal) {
      blockcal::cmd_calibrate(cfg, out_dir, resume);
    } else if (*c_adj) {
      blockcal::cmd_adjust(cfg, out_dir);
    } else if (*c_exp) {
      blockcal::cmd_experiment(cfg, out_dir);
    } else if (*c_rep) {
      blockcal::cmd_report(cfg, out_dir);
    } else if (*c_ora) {
      blockcal::cmd_oracle(cfg, out_dir);
    }
    return 0;
  } catch (const std::exception& e) {
    std::cerr << blockcal::error_json(e);
    return 1;
  }
}
