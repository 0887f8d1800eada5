#include "mcpm/mcpm_c.h"

#include <cmath>
#include <cstring>
#include <limits>
#include <string>

#include "mcpm/experiment.hpp"

using namespace mcpm;

struct mcpm_config {
  ExperimentConfig cfg;
};

struct mcpm_sweep_spec {
  SweepSpec spec;
};

namespace {

thread_local std::string g_last_error;

mcpm_rc rc_of(const Error& e) {
  return e.kind() == ErrorKind::kConfig ? MCPM_ERR_CONFIG : MCPM_ERR_RUNTIME;
}

// run `fn` translating exceptions into codes + the thread-local message
template <typename Fn>
mcpm_rc guarded(Fn&& fn) {
  g_last_error.clear();
  try {
    return fn();
  } catch (const Error& e) {
    g_last_error = e.what();
    return rc_of(e);
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return MCPM_ERR_RUNTIME;
  } catch (...) {
    g_last_error = "unknown failure";
    return MCPM_ERR_RUNTIME;
  }
}

template <typename Fn>
auto* guarded_ptr(Fn&& fn) {
  g_last_error.clear();
  using Ptr = decltype(fn());
  try {
    return fn();
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return static_cast<Ptr>(nullptr);
  } catch (...) {
    g_last_error = "unknown failure";
    return static_cast<Ptr>(nullptr);
  }
}

mcpm_rc require(bool ok, const char* message) {
  if (ok) return MCPM_OK;
  g_last_error = message;
  return MCPM_ERR_CONFIG;
}

constexpr double kNan = std::numeric_limits<double>::quiet_NaN();

mcpm_method_result method_result(const MethodOutcome& m) {
  mcpm_method_result r;
  r.ran = m.ran ? 1 : 0;
  r.diverged = m.diverged ? 1 : 0;
  r.miou = m.ran ? m.test.miou : kNan;
  r.dice = m.ran ? m.test.dice : kNan;
  r.hausdorff = m.ran ? m.test.hausdorff : kNan;
  r.mean_weight_clean = m.ran ? m.weights.mean_clean : kNan;
  r.mean_weight_corrupted = m.ran ? m.weights.mean_corrupted : kNan;
  return r;
}

}  // namespace

extern "C" {

const char* mcpm_version(void) { return "0.1.0"; }

const char* mcpm_last_error(void) { return g_last_error.c_str(); }

void mcpm_string_free(char* s) { delete[] s; }

mcpm_config* mcpm_config_load(const char* path) {
  return guarded_ptr([&]() -> mcpm_config* {
    if (!path) throw config_error("mcpm_config_load: null path");
    return new mcpm_config{load_experiment_config(path)};
  });
}

mcpm_config* mcpm_config_parse(const char* json_text, const char* source_name) {
  return guarded_ptr([&]() -> mcpm_config* {
    if (!json_text) throw config_error("mcpm_config_parse: null text");
    return new mcpm_config{
        parse_experiment_config(json_text, source_name ? source_name : "inline")};
  });
}

void mcpm_config_free(mcpm_config* cfg) { delete cfg; }

mcpm_rc mcpm_config_set_seed(mcpm_config* cfg, uint64_t seed) {
  if (mcpm_rc rc = require(cfg != nullptr, "mcpm_config_set_seed: null config")) return rc;
  apply_seed(cfg->cfg, seed);
  return MCPM_OK;
}

mcpm_rc mcpm_config_set_mode(mcpm_config* cfg, const char* mode) {
  if (mcpm_rc rc = require(cfg && mode, "mcpm_config_set_mode: null argument")) return rc;
  const std::string m(mode);
  if (m == "mcpm")
    cfg->cfg.mode = RunMode::kMcpm;
  else if (m == "baseline")
    cfg->cfg.mode = RunMode::kBaseline;
  else if (m == "both")
    cfg->cfg.mode = RunMode::kBoth;
  else
    return require(false, "mcpm_config_set_mode: expected \"mcpm\", \"baseline\" or \"both\"");
  return MCPM_OK;
}

const char* mcpm_config_out_dir(const mcpm_config* cfg) {
  g_last_error.clear();
  if (!cfg) {
    g_last_error = "mcpm_config_out_dir: null config";
    return nullptr;
  }
  return cfg->cfg.out_dir.c_str();
}

char* mcpm_config_to_json(const mcpm_config* cfg) {
  return guarded_ptr([&]() -> char* {
    if (!cfg) throw config_error("mcpm_config_to_json: null config");
    std::string text = experiment_config_json(cfg->cfg);
    char* out = new char[text.size() + 1];
    std::memcpy(out, text.c_str(), text.size() + 1);
    return out;
  });
}

mcpm_rc mcpm_run_generate(const mcpm_config* cfg, const char* out_dir) {
  return guarded([&]() -> mcpm_rc {
    if (!cfg || !out_dir) throw config_error("mcpm_run_generate: null argument");
    run_generate(cfg->cfg, out_dir);
    return MCPM_OK;
  });
}

mcpm_rc mcpm_run_train(const mcpm_config* cfg, const char* data_dir, const char* out_dir,
                       mcpm_train_result* result) {
  return guarded([&]() -> mcpm_rc {
    if (!cfg || !data_dir || !out_dir) throw config_error("mcpm_run_train: null argument");
    TrainOutcome out = run_train(cfg->cfg, data_dir, out_dir);
    if (result) {
      result->mcpm = method_result(out.mcpm);
      result->baseline = method_result(out.baseline);
    }
    if (out.mcpm.diverged || out.baseline.diverged) {
      g_last_error = "training diverged; partial outputs written to ";
      g_last_error += out_dir;
      return MCPM_ERR_RUNTIME;
    }
    return MCPM_OK;
  });
}

mcpm_rc mcpm_run_evaluate(const char* model_path, const char* data_dir, const char* out_dir,
                          double* miou, double* dice, double* hausdorff) {
  return guarded([&]() -> mcpm_rc {
    if (!model_path || !data_dir || !out_dir)
      throw config_error("mcpm_run_evaluate: null argument");
    MetricReport rep = run_evaluate(model_path, data_dir, out_dir);
    if (miou) *miou = rep.miou;
    if (dice) *dice = rep.dice;
    if (hausdorff) *hausdorff = rep.hausdorff;
    return MCPM_OK;
  });
}

mcpm_rc mcpm_run_weights(const char* model_path, const char* data_dir, int index,
                         const char* out_dir, mcpm_weights_result* result) {
  return guarded([&]() -> mcpm_rc {
    if (!model_path || !data_dir || !out_dir) throw config_error("mcpm_run_weights: null argument");
    WeightsSummary sum = run_weights(model_path, data_dir, index, out_dir);
    if (result) {
      result->corrupted = sum.corrupted ? 1 : 0;
      result->band_pixels = sum.band_pixels;
      result->mean_inside = sum.mean_inside;
      result->mean_outside = sum.mean_outside;
    }
    return MCPM_OK;
  });
}

mcpm_sweep_spec* mcpm_sweep_load(const char* path) {
  return guarded_ptr([&]() -> mcpm_sweep_spec* {
    if (!path) throw config_error("mcpm_sweep_load: null path");
    return new mcpm_sweep_spec{load_sweep_spec(path)};
  });
}

mcpm_sweep_spec* mcpm_sweep_parse(const char* json_text, const char* source_name) {
  return guarded_ptr([&]() -> mcpm_sweep_spec* {
    if (!json_text) throw config_error("mcpm_sweep_parse: null text");
    return new mcpm_sweep_spec{
        parse_sweep_spec(json_text, source_name ? source_name : "inline")};
  });
}

void mcpm_sweep_free(mcpm_sweep_spec* spec) { delete spec; }

mcpm_rc mcpm_sweep_set_seeds(mcpm_sweep_spec* spec, const uint64_t* seeds, size_t count) {
  if (mcpm_rc rc = require(spec && (seeds || count == 0), "mcpm_sweep_set_seeds: null argument"))
    return rc;
  if (mcpm_rc rc = require(count > 0, "mcpm_sweep_set_seeds: empty seed list")) return rc;
  spec->spec.seeds.assign(seeds, seeds + count);
  return MCPM_OK;
}

mcpm_rc mcpm_run_sweep(const mcpm_sweep_spec* spec, const char* out_dir) {
  return guarded([&]() -> mcpm_rc {
    if (!spec || !out_dir) throw config_error("mcpm_run_sweep: null argument");
    run_sweep(spec->spec, out_dir);
    return MCPM_OK;
  });
}

}  // extern "C"
