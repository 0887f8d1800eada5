#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mcpm/datasynth.hpp"
#include "mcpm/metrics.hpp"
#include "mcpm/trainer.hpp"

namespace mcpm {

enum class RunMode { kMcpm, kBaseline, kBoth };

/// One experiment: how to make the data, how to corrupt it, how to train,
/// and which method(s) to run. Parsed from a JSON document; every field is
/// optional with the defaults below, unknown keys are rejected with a
/// path diagnostic.
struct ExperimentConfig {
  SyntheticSpec synth;
  CorruptionSpec corruption;
  TrainConfig train;
  RunMode mode = RunMode::kBoth;
  std::string out_dir;  // output directory when the caller gives none

  // fold the clean meta split into the baseline's training data; off by
  // default so the baseline sees exactly the corrupted training set
  bool baseline_uses_meta = false;

  // top-level seed; when set it derives synth, corruption and train seeds
  std::optional<uint64_t> seed;
};

/// Overwrite the three section seeds from one master seed.
void apply_seed(ExperimentConfig& cfg, uint64_t seed);

/// Parse and validate. `source` names the document in diagnostics (a file
/// path or a label like "inline"). A top-level "seed" key is applied via
/// apply_seed as the last step.
ExperimentConfig parse_experiment_config(const std::string& json_text, const std::string& source);
ExperimentConfig load_experiment_config(const std::string& path);

/// The exact resolved configuration, every default spelled out. Reparsing
/// the string reproduces the config; written into every output directory.
std::string experiment_config_json(const ExperimentConfig& cfg);

/// Corruption-level sweep: the base experiment is repeated for every
/// (r, seed) cell. The clean data for a seed is generated once and shared
/// across that seed's r cells, so rows differ only in the corruption level.
/// Overrides patch the base document (RFC 7386 merge) for matching cells;
/// an override with no r (or no seed) applies to every r (or seed). The
/// synthetic section is fixed per seed, so r-specific patches to it have
/// no effect by construction.
struct SweepOverride {
  std::optional<double> r;
  std::optional<uint64_t> seed;
  std::string patch_json;
};

struct SweepSpec {
  ExperimentConfig base;
  std::string base_json;  // canonical base document, the merge target
  std::vector<double> r_values{0.0, 0.2, 0.4, 0.6, 0.8};
  std::vector<uint64_t> seeds{0};
  std::vector<SweepOverride> overrides;
};

SweepSpec parse_sweep_spec(const std::string& json_text, const std::string& source);
SweepSpec load_sweep_spec(const std::string& path);

/// The resolved configuration of one sweep cell: base + matching overrides,
/// corruption.r forced to the cell's r, all seeds derived from the cell's
/// seed.
ExperimentConfig cell_config(const SweepSpec& spec, double r, uint64_t seed);

/// Generate the three splits, corrupt the training labels per the config,
/// and write the dataset container plus the resolved config echo.
void run_generate(const ExperimentConfig& cfg, const std::string& out_dir);

struct MethodOutcome {
  bool ran = false;
  bool diverged = false;
  MetricReport test;        // final parameters on the test split
  WeightStats weights{};    // mask weight means by corruption band; mcpm only
  double wall_seconds = 0;  // time spent inside the fit call
};

struct TrainOutcome {
  MethodOutcome mcpm;
  MethodOutcome baseline;
};

/// Train the configured method(s) on an in-memory bundle. Per method writes
/// <out>/<method>/history.csv, final_metrics.json and model.mpck (plus
/// periodic checkpoints when configured), and the config echo at the root.
/// Divergence is reported in the outcome, with partial history on disk.
TrainOutcome train_bundle(const ExperimentConfig& cfg, const DatasetBundle& bundle,
                          const std::string& out_dir);

/// Same, loading the dataset container from disk.
TrainOutcome run_train(const ExperimentConfig& cfg, const std::string& data_dir,
                       const std::string& out_dir);

/// Evaluate a saved model on the dataset's test split; writes metrics.csv
/// (per sample plus a mean row) and summary.json.
MetricReport run_evaluate(const std::string& model_path, const std::string& data_dir,
                          const std::string& out_dir);

struct WeightsSummary {
  bool corrupted = false;    // the sample's corruption flag
  double mean_inside = 0.0;  // mask weight over corruption-band pixels; nan if no band
  double mean_outside = 0.0;
  size_t band_pixels = 0;
};

/// Dump the mask net's view of one training sample: weight, loss,
/// prediction, label and clean-label maps as .mptd files plus summary.json.
/// The model must carry mask parameters.
WeightsSummary run_weights(const std::string& model_path, const std::string& data_dir, int index,
                           const std::string& out_dir);

struct ReportRow {
  std::string method;  // "mcpm" | "baseline"
  double r = 0.0;
  uint64_t seed = 0;
  double miou = 0.0;
  double dice = 0.0;
  double hausdorff = 0.0;
  std::string status;       // "ok", "diverged" or "error(...)"
  double wall_seconds = 0;  // volatile; kept out of the deterministic report
};

/// Run every sweep cell, one row per (method, r, seed). Writes
/// sweep_report.csv (deterministic) and sweep_timing.csv (wall times,
/// volatile) plus per-cell outputs under <out>/cells/. A failing cell gets
/// an error status and the sweep continues.
std::vector<ReportRow> run_sweep(const SweepSpec& spec, const std::string& out_dir);

/// The deterministic report: method,r,seed,miou,dice,hausdorff,status.
std::string sweep_report_csv(const std::vector<ReportRow>& rows);

}  // namespace mcpm
