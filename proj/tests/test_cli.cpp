// Drives the installed binary as a subprocess and checks exit codes and
// output files. CLI_BIN_PATH is injected by the build.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::path("cli_test_tmp") / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string str() const { return path.string(); }
};

struct RunResult {
  int exit_code = -1;
  std::string out;
  std::string err;
};

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

RunResult run_cli(const std::string& args) {
  static int counter = 0;
  fs::create_directories("cli_test_tmp");
  const fs::path out_file = fs::path("cli_test_tmp") / ("stdout_" + std::to_string(counter));
  const fs::path err_file = fs::path("cli_test_tmp") / ("stderr_" + std::to_string(counter));
  ++counter;
  const std::string cmd = std::string(CLI_BIN_PATH) + " " + args + " >" + out_file.string() +
                          " 2>" + err_file.string();
  const int status = std::system(cmd.c_str());
  RunResult r;
  r.exit_code = (status >= 0 && WIFEXITED(status)) ? WEXITSTATUS(status) : -1;
  r.out = slurp(out_file);
  r.err = slurp(err_file);
  fs::remove(out_file);
  fs::remove(err_file);
  return r;
}

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream os(p, std::ios::binary);
  os << text;
  REQUIRE(os.good());
}

const char* kTinyConfig = R"({
  "seed": 3,
  "mode": "both",
  "synthetic": {"train_count": 4, "meta_count": 2, "test_count": 2,
                 "h": 8, "w": 8, "blobs_lo": 1, "blobs_hi": 1,
                 "radius_lo": 1.5, "radius_hi": 2.5},
  "corruption": {"r": 0.5, "kind": "dilation", "radius_lo": 1, "radius_hi": 2},
  "train": {"seg": {"depth": 1, "base_channels": 2},
             "mask": {"hidden_channels": 2},
             "alpha": 0.1, "beta": 0.001, "epochs": 1,
             "batch_size": 2, "meta_batch_size": 2}
})";

}  // namespace

TEST_CASE("help and version exit zero") {
  CHECK(run_cli("--help").exit_code == 0);
  CHECK(run_cli("--version").exit_code == 0);
  RunResult help = run_cli("--help");
  CHECK(help.out.find("generate") != std::string::npos);
  CHECK(help.out.find("sweep") != std::string::npos);
}

TEST_CASE("usage errors exit one") {
  CHECK(run_cli("").exit_code == 1);
  CHECK(run_cli("frobnicate").exit_code == 1);
  CHECK(run_cli("train").exit_code == 1);          // missing required flags
  CHECK(run_cli("generate --bogus x").exit_code == 1);

  TempDir dir("usage");
  write_file(dir.path / "bad.json", "{\"train\": {\"alhpa\": 1}}");
  RunResult r = run_cli("generate --config " + (dir.path / "bad.json").string() + " --out " +
                        (dir.path / "d").string());
  CHECK(r.exit_code == 1);
  CHECK(r.err.find("$.train.alhpa") != std::string::npos);

  RunResult missing = run_cli("generate --config " + (dir.path / "nope.json").string() +
                              " --out " + (dir.path / "d").string());
  CHECK(missing.exit_code == 1);
}

TEST_CASE("end to end generate train evaluate weights") {
  TempDir dir("e2e");
  write_file(dir.path / "cfg.json", kTinyConfig);
  const std::string cfg = (dir.path / "cfg.json").string();
  const std::string data = (dir.path / "data").string();
  const std::string run = (dir.path / "run").string();

  RunResult gen = run_cli("generate --config " + cfg + " --out " + data);
  CHECK(gen.exit_code == 0);
  CHECK(fs::exists(dir.path / "data" / "manifest.json"));

  RunResult train = run_cli("train --config " + cfg + " --data " + data + " --out " + run);
  CHECK(train.exit_code == 0);
  CHECK(train.out.find("mcpm") != std::string::npos);
  CHECK(train.out.find("baseline") != std::string::npos);
  CHECK(train.out.find("miou") != std::string::npos);
  CHECK(fs::exists(dir.path / "run" / "mcpm" / "model.mpck"));
  CHECK(fs::exists(dir.path / "run" / "baseline" / "history.csv"));

  // same seed, fresh output dir: byte identical history
  const std::string run2 = (dir.path / "run2").string();
  CHECK(run_cli("train --config " + cfg + " --data " + data + " --out " + run2).exit_code == 0);
  CHECK(slurp(dir.path / "run" / "mcpm" / "history.csv") ==
        slurp(dir.path / "run2" / "mcpm" / "history.csv"));

  // a different --seed changes the run
  const std::string run3 = (dir.path / "run3").string();
  CHECK(run_cli("train --config " + cfg + " --data " + data + " --out " + run3 + " --seed 77")
            .exit_code == 0);
  CHECK(slurp(dir.path / "run" / "mcpm" / "history.csv") !=
        slurp(dir.path / "run3" / "mcpm" / "history.csv"));

  const std::string model = (dir.path / "run" / "mcpm" / "model.mpck").string();
  RunResult eval = run_cli("evaluate --model " + model + " --data " + data + " --out " +
                           (dir.path / "eval").string());
  CHECK(eval.exit_code == 0);
  CHECK(eval.out.find("miou") != std::string::npos);
  CHECK(fs::exists(dir.path / "eval" / "metrics.csv"));

  RunResult weights = run_cli("weights --model " + model + " --data " + data + " --index 0 --out " +
                              (dir.path / "w").string());
  CHECK(weights.exit_code == 0);
  CHECK(fs::exists(dir.path / "w" / "weight.mptd"));

  RunResult oob = run_cli("weights --model " + model + " --data " + data +
                          " --index 99 --out " + (dir.path / "w2").string());
  CHECK(oob.exit_code == 1);
  CHECK(oob.err.find("out of range") != std::string::npos);

  // baseline checkpoints carry no mask net
  const std::string bmodel = (dir.path / "run" / "baseline" / "model.mpck").string();
  RunResult bw = run_cli("weights --model " + bmodel + " --data " + data + " --out " +
                         (dir.path / "w3").string());
  CHECK(bw.exit_code == 1);
  CHECK(bw.err.find("mask") != std::string::npos);
}

TEST_CASE("train mode flag and divergence exit code") {
  TempDir dir("mode");
  std::string text(kTinyConfig);
  write_file(dir.path / "cfg.json", text);
  const std::string cfg = (dir.path / "cfg.json").string();
  const std::string data = (dir.path / "data").string();
  REQUIRE(run_cli("generate --config " + cfg + " --out " + data).exit_code == 0);

  RunResult base_only = run_cli("train --config " + cfg + " --data " + data + " --out " +
                                (dir.path / "b").string() + " --mode baseline");
  CHECK(base_only.exit_code == 0);
  CHECK(!fs::exists(dir.path / "b" / "mcpm"));
  CHECK(fs::exists(dir.path / "b" / "baseline" / "model.mpck"));

  CHECK(run_cli("train --config " + cfg + " --data " + data + " --out " +
                (dir.path / "m").string() + " --mode warp")
            .exit_code == 1);

  std::string hot(kTinyConfig);
  hot.replace(hot.find("\"alpha\": 0.1"), 12, "\"alpha\": 1e308");
  write_file(dir.path / "hot.json", hot);
  RunResult div = run_cli("train --config " + (dir.path / "hot.json").string() + " --data " +
                          data + " --out " + (dir.path / "d").string() + " --mode mcpm");
  CHECK(div.exit_code == 2);
  CHECK(div.err.find("diverged") != std::string::npos);
  CHECK(fs::exists(dir.path / "d" / "mcpm" / "history.csv"));
}

TEST_CASE("sweep command writes a report") {
  TempDir dir("sweep");
  std::string spec = std::string("{\"base\": ") + kTinyConfig +
                     ", \"r_values\": [0, 0.5], \"seeds\": [1]}";
  write_file(dir.path / "sweep.json", spec);

  RunResult r = run_cli("sweep --config " + (dir.path / "sweep.json").string() + " --out " +
                        (dir.path / "out").string());
  CHECK(r.exit_code == 0);
  CHECK(r.out.find("sweep_report.csv") != std::string::npos);
  const std::string report = slurp(dir.path / "out" / "sweep_report.csv");
  CHECK(report.rfind("method,r,seed,miou,dice,hausdorff,status\n", 0) == 0);
  CHECK(std::count(report.begin(), report.end(), '\n') == 5);

  // --seed narrows the sweep to a single replacement seed
  RunResult r2 = run_cli("sweep --config " + (dir.path / "sweep.json").string() + " --out " +
                         (dir.path / "out2").string() + " --seed 8");
  CHECK(r2.exit_code == 0);
  const std::string report2 = slurp(dir.path / "out2" / "sweep_report.csv");
  CHECK(report2.find(",8,") != std::string::npos);
  CHECK(report2.find(",1,") == std::string::npos);
}
