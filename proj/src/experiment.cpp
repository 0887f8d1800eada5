#include "mcpm/experiment.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include <json.hpp>

#include "mcpm/checkpoint.hpp"
#include "mcpm/networks.hpp"
#include "mcpm/rng.hpp"
#include "mcpm/tensor.hpp"

namespace mcpm {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// ---------------------------------------------------------------------------
// schema helpers: every getter carries the document name and the key path so
// a bad config points at the exact offending entry

[[noreturn]] void fail_at(const std::string& source, const std::string& path,
                          const std::string& what) {
  throw config_error(source + ": " + path + ": " + what);
}

std::string type_name(const json& j) {
  if (j.is_null()) return "null";
  if (j.is_boolean()) return "a boolean";
  if (j.is_string()) return "a string";
  if (j.is_array()) return "an array";
  if (j.is_object()) return "an object";
  return "a number";
}

const json& expect_object(const json& j, const std::string& source, const std::string& path,
                          std::initializer_list<const char*> allowed) {
  if (!j.is_object()) fail_at(source, path, "expected an object, got " + type_name(j));
  for (const auto& [key, value] : j.items()) {
    bool known = false;
    for (const char* a : allowed)
      if (key == a) {
        known = true;
        break;
      }
    if (!known) fail_at(source, path + "." + key, "unknown key");
  }
  return j;
}

void read_double(const json& j, const std::string& source, const std::string& path,
                 const char* key, double& out) {
  if (!j.contains(key)) return;
  const json& v = j.at(key);
  if (!v.is_number()) fail_at(source, path + "." + key, "expected a number, got " + type_name(v));
  out = v.get<double>();
}

void read_int(const json& j, const std::string& source, const std::string& path, const char* key,
              int& out) {
  if (!j.contains(key)) return;
  const json& v = j.at(key);
  if (!v.is_number_integer())
    fail_at(source, path + "." + key, "expected an integer, got " + type_name(v));
  out = v.get<int>();
}

void read_u64(const json& j, const std::string& source, const std::string& path, const char* key,
              uint64_t& out) {
  if (!j.contains(key)) return;
  const json& v = j.at(key);
  if (!v.is_number_unsigned() && !v.is_number_integer())
    fail_at(source, path + "." + key, "expected an integer, got " + type_name(v));
  if (v.is_number_integer() && !v.is_number_unsigned() && v.get<int64_t>() < 0)
    fail_at(source, path + "." + key, "expected a non-negative integer");
  out = v.get<uint64_t>();
}

void read_bool(const json& j, const std::string& source, const std::string& path, const char* key,
               bool& out) {
  if (!j.contains(key)) return;
  const json& v = j.at(key);
  if (!v.is_boolean()) fail_at(source, path + "." + key, "expected a boolean, got " + type_name(v));
  out = v.get<bool>();
}

void read_string(const json& j, const std::string& source, const std::string& path,
                 const char* key, std::string& out) {
  if (!j.contains(key)) return;
  const json& v = j.at(key);
  if (!v.is_string()) fail_at(source, path + "." + key, "expected a string, got " + type_name(v));
  out = v.get<std::string>();
}

json parse_document(const std::string& text, const std::string& source) {
  json j = json::parse(text, nullptr, false);
  if (j.is_discarded()) throw config_error(source + ": not valid JSON");
  return j;
}

// ---------------------------------------------------------------------------
// section parsers

void parse_synth(const json& j, const std::string& source, const std::string& path,
                 SyntheticSpec& s) {
  expect_object(j, source, path,
                {"train_count", "meta_count", "test_count", "h", "w", "blobs_lo", "blobs_hi",
                 "radius_lo", "radius_hi", "fg_mean", "bg_mean", "noise_sigma", "seed"});
  read_int(j, source, path, "train_count", s.train_count);
  read_int(j, source, path, "meta_count", s.meta_count);
  read_int(j, source, path, "test_count", s.test_count);
  read_int(j, source, path, "h", s.h);
  read_int(j, source, path, "w", s.w);
  read_int(j, source, path, "blobs_lo", s.blobs_lo);
  read_int(j, source, path, "blobs_hi", s.blobs_hi);
  read_double(j, source, path, "radius_lo", s.radius_lo);
  read_double(j, source, path, "radius_hi", s.radius_hi);
  read_double(j, source, path, "fg_mean", s.fg_mean);
  read_double(j, source, path, "bg_mean", s.bg_mean);
  read_double(j, source, path, "noise_sigma", s.noise_sigma);
  read_u64(j, source, path, "seed", s.seed);
}

void parse_corruption(const json& j, const std::string& source, const std::string& path,
                      CorruptionSpec& c) {
  expect_object(j, source, path, {"r", "kind", "radius_lo", "radius_hi", "elastic", "seed"});
  read_double(j, source, path, "r", c.r);
  if (j.contains("kind")) {
    std::string kind;
    read_string(j, source, path, "kind", kind);
    if (kind == "dilation")
      c.kind = CorruptionKind::kDilation;
    else if (kind == "elastic")
      c.kind = CorruptionKind::kElastic;
    else
      fail_at(source, path + ".kind", "expected \"dilation\" or \"elastic\", got \"" + kind + "\"");
  }
  read_int(j, source, path, "radius_lo", c.radius_lo);
  read_int(j, source, path, "radius_hi", c.radius_hi);
  if (j.contains("elastic")) {
    const json& e = j.at("elastic");
    const std::string epath = path + ".elastic";
    expect_object(e, source, epath,
                  {"grid_spacing", "displacement_sigma", "rotation_max", "translation_max",
                   "dilation_lo", "dilation_hi"});
    read_int(e, source, epath, "grid_spacing", c.elastic.grid_spacing);
    read_double(e, source, epath, "displacement_sigma", c.elastic.displacement_sigma);
    read_double(e, source, epath, "rotation_max", c.elastic.rotation_max);
    read_double(e, source, epath, "translation_max", c.elastic.translation_max);
    read_int(e, source, epath, "dilation_lo", c.elastic.dilation_lo);
    read_int(e, source, epath, "dilation_hi", c.elastic.dilation_hi);
  }
  read_u64(j, source, path, "seed", c.seed);
  if (!(c.r >= 0.0 && c.r <= 1.0)) fail_at(source, path + ".r", "must lie in [0,1]");
}

void parse_train(const json& j, const std::string& source, const std::string& path,
                 TrainConfig& t) {
  expect_object(j, source, path,
                {"seg", "mask", "alpha", "beta", "decay_epochs", "decay_factor", "epochs",
                 "batch_size", "meta_batch_size", "seed", "baseline_optimizer",
                 "checkpoint_every"});
  if (j.contains("seg")) {
    const json& s = j.at("seg");
    const std::string spath = path + ".seg";
    expect_object(s, source, spath, {"in_channels", "out_channels", "depth", "base_channels"});
    read_int(s, source, spath, "in_channels", t.seg.in_channels);
    read_int(s, source, spath, "out_channels", t.seg.out_channels);
    read_int(s, source, spath, "depth", t.seg.depth);
    read_int(s, source, spath, "base_channels", t.seg.base_channels);
  }
  if (j.contains("mask")) {
    const json& m = j.at("mask");
    const std::string mpath = path + ".mask";
    expect_object(m, source, mpath, {"hidden_channels", "normalize_input"});
    read_int(m, source, mpath, "hidden_channels", t.mask.hidden_channels);
    read_bool(m, source, mpath, "normalize_input", t.mask.normalize_input);
  }
  read_double(j, source, path, "alpha", t.alpha);
  read_double(j, source, path, "beta", t.beta);
  if (j.contains("decay_epochs")) {
    const json& d = j.at("decay_epochs");
    if (!d.is_array())
      fail_at(source, path + ".decay_epochs", "expected an array, got " + type_name(d));
    t.decay_epochs.clear();
    for (size_t i = 0; i < d.size(); ++i) {
      if (!d[i].is_number_integer())
        fail_at(source, path + ".decay_epochs[" + std::to_string(i) + "]", "expected an integer");
      t.decay_epochs.push_back(d[i].get<int>());
    }
  }
  read_double(j, source, path, "decay_factor", t.decay_factor);
  read_int(j, source, path, "epochs", t.epochs);
  read_int(j, source, path, "batch_size", t.batch_size);
  read_int(j, source, path, "meta_batch_size", t.meta_batch_size);
  read_u64(j, source, path, "seed", t.seed);
  if (j.contains("baseline_optimizer")) {
    std::string opt;
    read_string(j, source, path, "baseline_optimizer", opt);
    if (opt == "sgd")
      t.baseline_optimizer = BaselineOptimizer::kSgd;
    else if (opt == "adam")
      t.baseline_optimizer = BaselineOptimizer::kAdam;
    else
      fail_at(source, path + ".baseline_optimizer",
              "expected \"sgd\" or \"adam\", got \"" + opt + "\"");
  }
  read_int(j, source, path, "checkpoint_every", t.checkpoint_every);
}

ExperimentConfig parse_experiment_json(const json& j, const std::string& source,
                                       const std::string& path) {
  expect_object(j, source, path,
                {"seed", "mode", "out_dir", "baseline_uses_meta", "synthetic", "corruption",
                 "train"});
  ExperimentConfig cfg;
  if (j.contains("mode")) {
    std::string mode;
    read_string(j, source, path, "mode", mode);
    if (mode == "mcpm")
      cfg.mode = RunMode::kMcpm;
    else if (mode == "baseline")
      cfg.mode = RunMode::kBaseline;
    else if (mode == "both")
      cfg.mode = RunMode::kBoth;
    else
      fail_at(source, path + ".mode",
              "expected \"mcpm\", \"baseline\" or \"both\", got \"" + mode + "\"");
  }
  read_string(j, source, path, "out_dir", cfg.out_dir);
  read_bool(j, source, path, "baseline_uses_meta", cfg.baseline_uses_meta);
  if (j.contains("synthetic")) parse_synth(j.at("synthetic"), source, path + ".synthetic", cfg.synth);
  if (j.contains("corruption"))
    parse_corruption(j.at("corruption"), source, path + ".corruption", cfg.corruption);
  if (j.contains("train")) parse_train(j.at("train"), source, path + ".train", cfg.train);
  if (j.contains("seed")) {
    uint64_t s = 0;
    read_u64(j, source, path, "seed", s);
    cfg.seed = s;
    apply_seed(cfg, s);
  }
  return cfg;
}

// ---------------------------------------------------------------------------
// serialization of the resolved config

json synth_json(const SyntheticSpec& s) {
  return json{{"train_count", s.train_count},
              {"meta_count", s.meta_count},
              {"test_count", s.test_count},
              {"h", s.h},
              {"w", s.w},
              {"blobs_lo", s.blobs_lo},
              {"blobs_hi", s.blobs_hi},
              {"radius_lo", s.radius_lo},
              {"radius_hi", s.radius_hi},
              {"fg_mean", s.fg_mean},
              {"bg_mean", s.bg_mean},
              {"noise_sigma", s.noise_sigma},
              {"seed", s.seed}};
}

json corruption_json(const CorruptionSpec& c) {
  return json{{"r", c.r},
              {"kind", c.kind == CorruptionKind::kDilation ? "dilation" : "elastic"},
              {"radius_lo", c.radius_lo},
              {"radius_hi", c.radius_hi},
              {"elastic",
               {{"grid_spacing", c.elastic.grid_spacing},
                {"displacement_sigma", c.elastic.displacement_sigma},
                {"rotation_max", c.elastic.rotation_max},
                {"translation_max", c.elastic.translation_max},
                {"dilation_lo", c.elastic.dilation_lo},
                {"dilation_hi", c.elastic.dilation_hi}}},
              {"seed", c.seed}};
}

json train_json(const TrainConfig& t) {
  return json{{"seg",
               {{"in_channels", t.seg.in_channels},
                {"out_channels", t.seg.out_channels},
                {"depth", t.seg.depth},
                {"base_channels", t.seg.base_channels}}},
              {"mask",
               {{"hidden_channels", t.mask.hidden_channels},
                {"normalize_input", t.mask.normalize_input}}},
              {"alpha", t.alpha},
              {"beta", t.beta},
              {"decay_epochs", t.decay_epochs},
              {"decay_factor", t.decay_factor},
              {"epochs", t.epochs},
              {"batch_size", t.batch_size},
              {"meta_batch_size", t.meta_batch_size},
              {"seed", t.seed},
              {"baseline_optimizer",
               t.baseline_optimizer == BaselineOptimizer::kSgd ? "sgd" : "adam"},
              {"checkpoint_every", t.checkpoint_every}};
}

const char* mode_name(RunMode m) {
  switch (m) {
    case RunMode::kMcpm: return "mcpm";
    case RunMode::kBaseline: return "baseline";
    default: return "both";
  }
}

json experiment_json(const ExperimentConfig& cfg) {
  json j{{"mode", mode_name(cfg.mode)},
         {"out_dir", cfg.out_dir},
         {"baseline_uses_meta", cfg.baseline_uses_meta},
         {"synthetic", synth_json(cfg.synth)},
         {"corruption", corruption_json(cfg.corruption)},
         {"train", train_json(cfg.train)}};
  if (cfg.seed) j["seed"] = *cfg.seed;
  return j;
}

std::string read_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw config_error(path + ": cannot open");
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw runtime_error(path + ": cannot open for writing");
  os << text;
  os.flush();
  if (!os) throw runtime_error(path + ": write failed");
}

void write_config_echo(const ExperimentConfig& cfg, const std::string& out_dir) {
  fs::create_directories(out_dir);
  write_file((fs::path(out_dir) / "config.json").string(), experiment_config_json(cfg));
}

// json cannot carry nan; report it as null
json finite_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

}  // namespace

void apply_seed(ExperimentConfig& cfg, uint64_t seed) {
  cfg.seed = seed;
  cfg.synth.seed = derive_seed(seed, "synth");
  cfg.corruption.seed = derive_seed(seed, "corruption");
  cfg.train.seed = derive_seed(seed, "train");
}

ExperimentConfig parse_experiment_config(const std::string& json_text, const std::string& source) {
  return parse_experiment_json(parse_document(json_text, source), source, "$");
}

ExperimentConfig load_experiment_config(const std::string& path) {
  return parse_experiment_config(read_file(path), path);
}

std::string experiment_config_json(const ExperimentConfig& cfg) {
  return experiment_json(cfg).dump(2) + "\n";
}

SweepSpec parse_sweep_spec(const std::string& json_text, const std::string& source) {
  json j = parse_document(json_text, source);
  expect_object(j, source, "$", {"base", "r_values", "seeds", "overrides"});
  SweepSpec spec;
  if (j.contains("base")) {
    spec.base = parse_experiment_json(j.at("base"), source, "$.base");
    spec.base_json = j.at("base").dump();
  } else {
    spec.base_json = "{}";
  }
  if (j.contains("r_values")) {
    const json& rv = j.at("r_values");
    if (!rv.is_array()) fail_at(source, "$.r_values", "expected an array, got " + type_name(rv));
    spec.r_values.clear();
    for (size_t i = 0; i < rv.size(); ++i) {
      if (!rv[i].is_number())
        fail_at(source, "$.r_values[" + std::to_string(i) + "]", "expected a number");
      spec.r_values.push_back(rv[i].get<double>());
    }
  }
  for (size_t i = 0; i < spec.r_values.size(); ++i)
    if (!(spec.r_values[i] >= 0.0 && spec.r_values[i] <= 1.0))
      fail_at(source, "$.r_values[" + std::to_string(i) + "]", "must lie in [0,1]");
  if (spec.r_values.empty()) fail_at(source, "$.r_values", "must not be empty");
  if (j.contains("seeds")) {
    const json& sv = j.at("seeds");
    if (!sv.is_array()) fail_at(source, "$.seeds", "expected an array, got " + type_name(sv));
    spec.seeds.clear();
    for (size_t i = 0; i < sv.size(); ++i) {
      if (!sv[i].is_number_integer())
        fail_at(source, "$.seeds[" + std::to_string(i) + "]", "expected an integer");
      spec.seeds.push_back(sv[i].get<uint64_t>());
    }
  }
  if (spec.seeds.empty()) fail_at(source, "$.seeds", "must not be empty");
  if (j.contains("overrides")) {
    const json& ov = j.at("overrides");
    if (!ov.is_array()) fail_at(source, "$.overrides", "expected an array, got " + type_name(ov));
    for (size_t i = 0; i < ov.size(); ++i) {
      const std::string path = "$.overrides[" + std::to_string(i) + "]";
      expect_object(ov[i], source, path, {"r", "seed", "patch"});
      SweepOverride o;
      if (ov[i].contains("r")) {
        if (!ov[i].at("r").is_number()) fail_at(source, path + ".r", "expected a number");
        o.r = ov[i].at("r").get<double>();
      }
      if (ov[i].contains("seed")) {
        uint64_t s = 0;
        read_u64(ov[i], source, path, "seed", s);
        o.seed = s;
      }
      if (!ov[i].contains("patch")) fail_at(source, path, "missing \"patch\"");
      if (!ov[i].at("patch").is_object()) fail_at(source, path + ".patch", "expected an object");
      o.patch_json = ov[i].at("patch").dump();
      // the patched document must still satisfy the schema for every cell,
      // so validate the wildcard application once here
      json probe = parse_document(spec.base_json, source);
      probe.merge_patch(ov[i].at("patch"));
      parse_experiment_json(probe, source, path + ".patch");
      spec.overrides.push_back(std::move(o));
    }
  }
  return spec;
}

SweepSpec load_sweep_spec(const std::string& path) {
  return parse_sweep_spec(read_file(path), path);
}

namespace {

// overrides matching this cell merged over the base; r < 0 selects only
// r-wildcard overrides (used for the per-seed clean data config)
ExperimentConfig merged_cell(const SweepSpec& spec, double r, uint64_t seed,
                             const std::string& label) {
  json j = parse_document(spec.base_json, label);
  for (const SweepOverride& o : spec.overrides) {
    if (o.r && (r < 0.0 || *o.r != r)) continue;
    if (o.seed && *o.seed != seed) continue;
    j.merge_patch(parse_document(o.patch_json, label));
  }
  return parse_experiment_json(j, label, "$");
}

}  // namespace

ExperimentConfig cell_config(const SweepSpec& spec, double r, uint64_t seed) {
  ExperimentConfig cfg = merged_cell(spec, r, seed, "sweep cell");
  cfg.corruption.r = r;
  apply_seed(cfg, seed);
  return cfg;
}

void run_generate(const ExperimentConfig& cfg, const std::string& out_dir) {
  if (out_dir.empty()) throw config_error("generate: no output directory");
  DatasetBundle bundle = generate(cfg.synth);
  if (cfg.corruption.r > 0.0) bundle.train = corrupt(bundle.train, cfg.corruption);
  save_bundle(out_dir, bundle, cfg.synth, &cfg.corruption);
  write_config_echo(cfg, out_dir);
}

namespace {

void write_final_metrics(const std::string& dir, const char* method, const MethodOutcome& m,
                         int epochs_run, bool with_weights) {
  json j{{"method", method},
         {"diverged", m.diverged},
         {"epochs_run", epochs_run},
         {"test",
          {{"miou", finite_or_null(m.test.miou)},
           {"dice", finite_or_null(m.test.dice)},
           {"hausdorff", finite_or_null(m.test.hausdorff)}}}};
  if (with_weights)
    j["weights"] = json{{"mean_clean", finite_or_null(m.weights.mean_clean)},
                        {"mean_corrupted", finite_or_null(m.weights.mean_corrupted)}};
  write_file((fs::path(dir) / "final_metrics.json").string(), j.dump(2) + "\n");
}

void save_model(const std::string& path, const TrainConfig& cfg, const SegParams& w,
                const MaskParams* theta, int epochs_run) {
  Checkpoint ckpt;
  ckpt.seg_config = cfg.seg;
  ckpt.seg = w;
  if (theta) {
    ckpt.has_mask = true;
    ckpt.mask_config = cfg.mask;
    ckpt.mask = *theta;
  }
  ckpt.extra = "{\"epochs_run\":" + std::to_string(epochs_run) + "}";
  save_checkpoint(path, ckpt);
}

}  // namespace

TrainOutcome train_bundle(const ExperimentConfig& cfg, const DatasetBundle& bundle,
                          const std::string& out_dir) {
  if (out_dir.empty()) throw config_error("train: no output directory");
  write_config_echo(cfg, out_dir);
  TrainOutcome out;

  if (cfg.mode == RunMode::kMcpm || cfg.mode == RunMode::kBoth) {
    const fs::path dir = fs::path(out_dir) / "mcpm";
    fs::create_directories(dir);
    TrainConfig tc = cfg.train;
    if (tc.checkpoint_every > 0) tc.checkpoint_dir = (dir / "checkpoints").string();
    auto started = std::chrono::steady_clock::now();
    FitResult res = fit(tc, bundle.train, bundle.meta, bundle.test);
    out.mcpm.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    res.history.write_csv((dir / "history.csv").string());
    out.mcpm.ran = true;
    out.mcpm.diverged = res.diverged;
    out.mcpm.test = evaluate(tc.seg, res.w, bundle.test);
    out.mcpm.weights = weight_stats(tc, res.w, res.theta, bundle.train);
    int epochs_run = static_cast<int>(res.history.records.size());
    write_final_metrics(dir.string(), "mcpm", out.mcpm, epochs_run, true);
    save_model((dir / "model.mpck").string(), tc, res.w, &res.theta, epochs_run);
  }

  if (cfg.mode == RunMode::kBaseline || cfg.mode == RunMode::kBoth) {
    const fs::path dir = fs::path(out_dir) / "baseline";
    fs::create_directories(dir);
    TrainConfig tc = cfg.train;
    if (tc.checkpoint_every > 0) tc.checkpoint_dir = (dir / "checkpoints").string();
    Dataset train = bundle.train;
    if (cfg.baseline_uses_meta)
      train.samples.insert(train.samples.end(), bundle.meta.samples.begin(),
                           bundle.meta.samples.end());
    auto started = std::chrono::steady_clock::now();
    BaselineResult res = baseline_fit(tc, train, bundle.test);
    out.baseline.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    res.history.write_csv((dir / "history.csv").string());
    out.baseline.ran = true;
    out.baseline.diverged = res.diverged;
    out.baseline.test = evaluate(tc.seg, res.w, bundle.test);
    out.baseline.weights.mean_clean = std::numeric_limits<double>::quiet_NaN();
    out.baseline.weights.mean_corrupted = std::numeric_limits<double>::quiet_NaN();
    int epochs_run = static_cast<int>(res.history.records.size());
    write_final_metrics(dir.string(), "baseline", out.baseline, epochs_run, false);
    save_model((dir / "model.mpck").string(), tc, res.w, nullptr, epochs_run);
  }
  return out;
}

TrainOutcome run_train(const ExperimentConfig& cfg, const std::string& data_dir,
                       const std::string& out_dir) {
  return train_bundle(cfg, load_bundle(data_dir), out_dir);
}

MetricReport run_evaluate(const std::string& model_path, const std::string& data_dir,
                          const std::string& out_dir) {
  if (out_dir.empty()) throw config_error("evaluate: no output directory");
  Checkpoint ckpt = load_checkpoint(model_path);
  DatasetBundle bundle = load_bundle(data_dir);
  MetricReport report = evaluate(ckpt.seg_config, ckpt.seg, bundle.test);
  fs::create_directories(out_dir);
  write_metric_csv((fs::path(out_dir) / "metrics.csv").string(), report);
  json j{{"model", model_path},
         {"samples", bundle.test.samples.size()},
         {"miou", finite_or_null(report.miou)},
         {"dice", finite_or_null(report.dice)},
         {"hausdorff", finite_or_null(report.hausdorff)}};
  write_file((fs::path(out_dir) / "summary.json").string(), j.dump(2) + "\n");
  return report;
}

WeightsSummary run_weights(const std::string& model_path, const std::string& data_dir, int index,
                           const std::string& out_dir) {
  if (out_dir.empty()) throw config_error("weights: no output directory");
  Checkpoint ckpt = load_checkpoint(model_path);
  if (!ckpt.has_mask)
    throw config_error(model_path + ": no mask parameters; train with mode mcpm");
  DatasetBundle bundle = load_bundle(data_dir);
  const auto& samples = bundle.train.samples;
  if (index < 0 || static_cast<size_t>(index) >= samples.size())
    throw config_error("weights: index " + std::to_string(index) + " out of range, train split has " +
                       std::to_string(samples.size()) + " samples");
  const Sample& s = samples[static_cast<size_t>(index)];

  Tensor pred = seg_forward(ckpt.seg_config, ckpt.seg, s.image);
  Tensor loss = pixel_loss(pred, s.label);
  Tensor weight = mask_forward(ckpt.mask_config, ckpt.mask, loss);

  fs::create_directories(out_dir);
  const fs::path dir(out_dir);
  write_mptd((dir / "weight.mptd").string(), weight);
  write_mptd((dir / "loss.mptd").string(), loss);
  write_mptd((dir / "prediction.mptd").string(), pred);
  write_mptd((dir / "label.mptd").string(), s.label);
  write_mptd((dir / "clean_label.mptd").string(), s.clean_label);

  WeightsSummary sum;
  sum.corrupted = s.corrupted;
  double in_acc = 0.0, out_acc = 0.0;
  size_t in_n = 0, out_n = 0;
  for (size_t j = 0; j < weight.data.size(); ++j) {
    if (s.corruption_band.data[j] != 0.0) {
      in_acc += weight.data[j];
      ++in_n;
    } else {
      out_acc += weight.data[j];
      ++out_n;
    }
  }
  sum.band_pixels = in_n;
  sum.mean_inside = in_n ? in_acc / static_cast<double>(in_n)
                         : std::numeric_limits<double>::quiet_NaN();
  sum.mean_outside = out_n ? out_acc / static_cast<double>(out_n)
                           : std::numeric_limits<double>::quiet_NaN();
  json j{{"index", index},
         {"corrupted", sum.corrupted},
         {"band_pixels", sum.band_pixels},
         {"mean_inside", finite_or_null(sum.mean_inside)},
         {"mean_outside", finite_or_null(sum.mean_outside)}};
  write_file((dir / "summary.json").string(), j.dump(2) + "\n");
  return sum;
}

std::string sweep_report_csv(const std::vector<ReportRow>& rows) {
  std::string csv = "method,r,seed,miou,dice,hausdorff,status\n";
  for (const ReportRow& row : rows) {
    csv += row.method + "," + format_compact(row.r) + "," + std::to_string(row.seed) + "," +
           format_compact(row.miou) + "," + format_compact(row.dice) + "," +
           format_compact(row.hausdorff) + "," + row.status + "\n";
  }
  return csv;
}

namespace {

std::string sanitize_status(const std::string& message) {
  std::string out = "error(";
  for (char c : message) out += (c == ',' || c == '\n' || c == '\r') ? ' ' : c;
  out += ")";
  return out;
}

ReportRow make_row(const char* method, double r, uint64_t seed, const MethodOutcome& m) {
  ReportRow row;
  row.method = method;
  row.r = r;
  row.seed = seed;
  row.miou = m.test.miou;
  row.dice = m.test.dice;
  row.hausdorff = m.test.hausdorff;
  row.status = m.diverged ? "diverged" : "ok";
  row.wall_seconds = m.wall_seconds;
  return row;
}

}  // namespace

std::vector<ReportRow> run_sweep(const SweepSpec& spec, const std::string& out_dir) {
  if (out_dir.empty()) throw config_error("sweep: no output directory");
  fs::create_directories(out_dir);
  std::vector<ReportRow> rows;

  for (uint64_t seed : spec.seeds) {
    // one clean dataset per seed, shared by every r cell
    ExperimentConfig seed_cfg = merged_cell(spec, -1.0, seed, "sweep seed config");
    apply_seed(seed_cfg, seed);
    DatasetBundle clean = generate(seed_cfg.synth);

    for (double r : spec.r_values) {
      ExperimentConfig cfg = cell_config(spec, r, seed);
      const fs::path cell_dir =
          fs::path(out_dir) / "cells" / ("s" + std::to_string(seed) + "_r" + format_compact(r));

      DatasetBundle bundle = clean;
      auto started = std::chrono::steady_clock::now();
      bool mcpm_wanted = cfg.mode != RunMode::kBaseline;
      bool baseline_wanted = cfg.mode != RunMode::kMcpm;
      try {
        if (r > 0.0) bundle.train = corrupt(bundle.train, cfg.corruption);
        TrainOutcome out = train_bundle(cfg, bundle, cell_dir.string());
        if (out.mcpm.ran) rows.push_back(make_row("mcpm", r, seed, out.mcpm));
        if (out.baseline.ran) rows.push_back(make_row("baseline", r, seed, out.baseline));
      } catch (const std::exception& e) {
        // record the failure for every method this cell should have produced
        double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
        const double nan = std::numeric_limits<double>::quiet_NaN();
        for (const char* method : {"mcpm", "baseline"}) {
          if ((method[0] == 'm') ? !mcpm_wanted : !baseline_wanted) continue;
          ReportRow row;
          row.method = method;
          row.r = r;
          row.seed = seed;
          row.miou = row.dice = row.hausdorff = nan;
          row.status = sanitize_status(e.what());
          row.wall_seconds = wall;
          rows.push_back(row);
        }
      }
    }
  }

  write_file((fs::path(out_dir) / "sweep_report.csv").string(), sweep_report_csv(rows));
  std::string timing = "method,r,seed,wall_seconds\n";
  for (const ReportRow& row : rows)
    timing += row.method + "," + format_compact(row.r) + "," + std::to_string(row.seed) + "," +
              format_compact(row.wall_seconds) + "\n";
  write_file((fs::path(out_dir) / "sweep_timing.csv").string(), timing);
  return rows;
}

}  // namespace mcpm
