// Command-line front end. Everything goes through the C API so this file
// doubles as its reference consumer.
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mcpm/mcpm_c.h"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 1;
constexpr int kExitRuntime = 2;

int exit_code(mcpm_rc rc) {
  switch (rc) {
    case MCPM_OK: return kExitOk;
    case MCPM_ERR_CONFIG: return kExitConfig;
    default: return kExitRuntime;
  }
}

int fail(mcpm_rc rc) {
  std::fprintf(stderr, "mcpm: %s\n", mcpm_last_error());
  return exit_code(rc);
}

using ConfigPtr = std::unique_ptr<mcpm_config, decltype(&mcpm_config_free)>;
using SweepPtr = std::unique_ptr<mcpm_sweep_spec, decltype(&mcpm_sweep_free)>;

// load + apply the shared --seed/--mode overrides; null on failure
ConfigPtr load_config(const std::string& path, const std::optional<uint64_t>& seed,
                      const std::string& mode) {
  ConfigPtr cfg(mcpm_config_load(path.c_str()), &mcpm_config_free);
  if (!cfg) return cfg;
  if (seed && mcpm_config_set_seed(cfg.get(), *seed) != MCPM_OK) cfg.reset();
  if (cfg && !mode.empty() && mcpm_config_set_mode(cfg.get(), mode.c_str()) != MCPM_OK)
    cfg.reset();
  return cfg;
}

// --out wins; otherwise the config's out_dir; empty means neither was given
std::string pick_out_dir(const ConfigPtr& cfg, const std::string& out_flag) {
  if (!out_flag.empty()) return out_flag;
  const char* dir = mcpm_config_out_dir(cfg.get());
  return dir ? dir : "";
}

void print_method(const char* name, const mcpm_method_result& m) {
  if (!m.ran) return;
  std::printf("%s: miou %.4f  dice %.4f  hausdorff %.4f%s\n", name, m.miou, m.dice, m.hausdorff,
              m.diverged ? "  [diverged]" : "");
  if (!std::isnan(m.mean_weight_clean))
    std::printf("%s: mean weight clean %.4f  corrupted %.4f\n", name, m.mean_weight_clean,
                m.mean_weight_corrupted);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Segmentation training under corrupted pixel labels"};
  app.set_version_flag("--version", []() { return std::string(mcpm_version()); });
  app.require_subcommand(1);

  std::string config_path, data_dir, out_dir, model_path, mode;
  std::optional<uint64_t> seed;
  int index = 0;

  CLI::App* generate = app.add_subcommand("generate", "Synthesize a dataset container");
  generate->add_option("--config", config_path, "Experiment config (JSON)")->required();
  generate->add_option("--out", out_dir, "Dataset directory (default: config out_dir)");
  generate->add_option("--seed", seed, "Master seed; overrides the config's seeds");

  CLI::App* train = app.add_subcommand("train", "Train on a generated dataset");
  train->add_option("--config", config_path, "Experiment config (JSON)")->required();
  train->add_option("--data", data_dir, "Dataset directory from `generate`")->required();
  train->add_option("--out", out_dir, "Run directory (default: config out_dir)");
  train->add_option("--seed", seed, "Master seed; overrides the config's seeds");
  train->add_option("--mode", mode, "mcpm | baseline | both (overrides the config)");

  CLI::App* evaluate = app.add_subcommand("evaluate", "Score a saved model on the test split");
  evaluate->add_option("--model", model_path, "Checkpoint (.mpck)")->required();
  evaluate->add_option("--data", data_dir, "Dataset directory")->required();
  evaluate->add_option("--out", out_dir, "Directory for metrics.csv and summary.json")->required();

  CLI::App* sweep = app.add_subcommand("sweep", "Train across corruption levels");
  sweep->add_option("--config", config_path, "Sweep spec (JSON)")->required();
  sweep->add_option("--out", out_dir, "Sweep output directory")->required();
  sweep->add_option("--seed", seed, "Replace the spec's seed list with this one seed");

  CLI::App* weights = app.add_subcommand("weights", "Dump one sample's mask-weight view");
  weights->add_option("--model", model_path, "Checkpoint with mask parameters")->required();
  weights->add_option("--data", data_dir, "Dataset directory")->required();
  weights->add_option("--index", index, "Training-sample index")->capture_default_str();
  weights->add_option("--out", out_dir, "Directory for the .mptd dumps")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  if (generate->parsed() || train->parsed()) {
    ConfigPtr cfg = load_config(config_path, seed, mode);
    if (!cfg) return fail(MCPM_ERR_CONFIG);
    std::string out = pick_out_dir(cfg, out_dir);
    if (out.empty()) {
      std::fprintf(stderr, "mcpm: no output directory; pass --out or set out_dir in the config\n");
      return kExitConfig;
    }
    if (generate->parsed()) {
      mcpm_rc rc = mcpm_run_generate(cfg.get(), out.c_str());
      if (rc != MCPM_OK) return fail(rc);
      std::printf("dataset written to %s\n", out.c_str());
      return kExitOk;
    }
    mcpm_train_result result;
    mcpm_rc rc = mcpm_run_train(cfg.get(), data_dir.c_str(), out.c_str(), &result);
    if (rc != MCPM_OK && result.mcpm.ran + result.baseline.ran == 0) return fail(rc);
    print_method("mcpm", result.mcpm);
    print_method("baseline", result.baseline);
    if (rc != MCPM_OK) return fail(rc);  // diverged: outputs exist, exit nonzero
    std::printf("run written to %s\n", out.c_str());
    return kExitOk;
  }

  if (evaluate->parsed()) {
    double miou = 0, dice = 0, hausdorff = 0;
    mcpm_rc rc = mcpm_run_evaluate(model_path.c_str(), data_dir.c_str(), out_dir.c_str(), &miou,
                                   &dice, &hausdorff);
    if (rc != MCPM_OK) return fail(rc);
    std::printf("miou %.4f  dice %.4f  hausdorff %.4f\n", miou, dice, hausdorff);
    return kExitOk;
  }

  if (sweep->parsed()) {
    SweepPtr spec(mcpm_sweep_load(config_path.c_str()), &mcpm_sweep_free);
    if (!spec) return fail(MCPM_ERR_CONFIG);
    if (seed) {
      uint64_t one = *seed;
      if (mcpm_sweep_set_seeds(spec.get(), &one, 1) != MCPM_OK) return fail(MCPM_ERR_CONFIG);
    }
    mcpm_rc rc = mcpm_run_sweep(spec.get(), out_dir.c_str());
    if (rc != MCPM_OK) return fail(rc);
    std::printf("sweep report written to %s/sweep_report.csv\n", out_dir.c_str());
    return kExitOk;
  }

  // weights
  mcpm_weights_result result;
  mcpm_rc rc =
      mcpm_run_weights(model_path.c_str(), data_dir.c_str(), index, out_dir.c_str(), &result);
  if (rc != MCPM_OK) return fail(rc);
  if (result.band_pixels > 0)
    std::printf("sample %d: mean weight inside band %.6f, outside %.6f (%llu band pixels)\n",
                index, result.mean_inside, result.mean_outside,
                static_cast<unsigned long long>(result.band_pixels));
  else
    std::printf("sample %d: no corrupted pixels; mean weight inside band n/a, outside %.6f\n",
                index, result.mean_outside);
  return kExitOk;
}
