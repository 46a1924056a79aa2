#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "gatewire/calibration.hpp"
#include "gatewire/checkpoint.hpp"
#include "gatewire/cli.hpp"
#include "gatewire/dataset.hpp"
#include "gatewire/harness.hpp"
#include "gatewire/training.hpp"

using namespace gatewire;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string out, err;
};

Run cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void write(const fs::path& p, const std::string& text) {
  std::ofstream f(p, std::ios::binary);
  f << text;
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / ("gatewire_cli_" + name)) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string operator/(const std::string& f) const { return (path / f).string(); }
};

// A small config so the tests train in well under a second.
std::string small_config(const std::string& dataset, const std::string& extra = "") {
  return R"({"seed": 4, "dataset": ")" + dataset + R"(", "train": {"epochs": 3, "lr_init": 0.01)" + extra + "}}";
}

std::vector<std::string> gen_small(const std::string& out) {
  return {"gen", "--out", out, "--seed", "2", "--per-class", "60"};
}

}  // namespace

TEST_CASE("gen writes the default dataset") {
  TempDir d("gen");
  auto r = cli({"gen", "--out", d / "a.csv", "--seed", "7"});
  REQUIRE(r.code == 0);
  const auto text = slurp(d / "a.csv");
  CHECK(std::count(text.begin(), text.end(), '\n') == 1 + 6 * 584);
  REQUIRE(cli({"gen", "--out", d / "b.csv", "--seed", "7"}).code == 0);
  CHECK(slurp(d / "b.csv") == text);
  REQUIRE(cli({"gen", "--out", d / "c.csv", "--seed", "8"}).code == 0);
  CHECK(slurp(d / "c.csv") != text);

  write(d / "spec.json", R"({"num_classes": 4, "per_class_count": 10, "dim": 8})");
  REQUIRE(cli({"gen", "--spec", d / "spec.json", "--out", d / "s.csv"}).code == 0);
  CHECK(load_csv(d / "s.csv").size() == 40);
}

TEST_CASE("gen validation errors exit with 2 and name the field") {
  TempDir d("genbad");
  auto r = cli({"gen", "--out", d / "a.csv", "--easy-fraction", "1.5"});
  CHECK(r.code == 2);
  CHECK(r.err.find("easy_fraction") != std::string::npos);
  CHECK_FALSE(fs::exists(d / "a.csv"));
  write(d / "spec.json", R"({"num_classes": 4, "colour": 1})");
  CHECK(cli({"gen", "--spec", d / "spec.json", "--out", d / "a.csv"}).code == 2);
  CHECK(cli({"gen"}).code == 2);
  CHECK(cli({"frobnicate"}).code == 2);
  write(d / "blocker", "");
  CHECK(cli({"gen", "--out", d / "blocker/y.csv"}).code == 1);
}

TEST_CASE("seed falls back to GATEWIRE_SEED") {
  TempDir d("env");
  REQUIRE(cli({"gen", "--out", d / "a.csv", "--seed", "31"}).code == 0);
  ::setenv("GATEWIRE_SEED", "31", 1);
  REQUIRE(cli({"gen", "--out", d / "b.csv"}).code == 0);
  ::setenv("GATEWIRE_SEED", "x", 1);
  CHECK(cli({"gen", "--out", d / "c.csv"}).code == 2);
  ::unsetenv("GATEWIRE_SEED");
  CHECK(slurp(d / "a.csv") == slurp(d / "b.csv"));
}

TEST_CASE("train, sweep, calibrate, info") {
  TempDir d("pipeline");
  REQUIRE(cli(gen_small(d / "data.csv")).code == 0);
  const auto data_before = slurp(d / "data.csv");
  write(d / "cfg.json", small_config(d / "data.csv"));

  auto t = cli({"train", "--config", d / "cfg.json", "--out", d / "m.ckpt"});
  REQUIRE_MESSAGE(t.code == 0, t.err);
  CHECK(t.out.find("final val_acc_main") != std::string::npos);
  const auto ckpt = slurp(d / "m.ckpt");
  REQUIRE(cli({"train", "--config", d / "cfg.json", "--out", d / "m2.ckpt"}).code == 0);
  CHECK(slurp(d / "m2.ckpt") == ckpt);
  CHECK(slurp(d / "data.csv") == data_before);
  const auto log = TrainLog::from_csv(slurp(d / "m.log.csv"));
  CHECK(log.rows.size() == 3);
  CHECK(TrainLog::from_csv(log.to_csv()) == log);

  SUBCASE("sweep") {
    auto s = cli({"sweep", "--checkpoint", d / "m.ckpt", "--data", d / "m.test.csv", "--out", d / "s.csv"});
    REQUIRE_MESSAGE(s.code == 0, s.err);
    const auto rows = parse_sweep_csv(slurp(d / "s.csv"));
    REQUIRE(rows.size() == default_theta_grid().size());
    for (std::size_t i = 1; i < rows.size(); ++i) CHECK(rows[i].avg_params >= rows[i - 1].avg_params);
    CHECK(rows.front().early_exit_fraction == 1.0);
    CHECK(rows.back().theta == 1.0);
    REQUIRE(cli({"sweep", "--checkpoint", d / "m.ckpt", "--data", d / "m.test.csv", "--out", d / "s2.csv"}).code ==
            0);
    CHECK(slurp(d / "s2.csv") == slurp(d / "s.csv"));
    CHECK(fs::exists(d / "s.baselines.csv"));

    auto custom = cli({"sweep", "--checkpoint", d / "m.ckpt", "--data", d / "m.test.csv", "--thetas", "0,0.9,1.1",
                       "--out", d / "s3.csv"});
    REQUIRE(custom.code == 0);
    CHECK(parse_sweep_csv(slurp(d / "s3.csv")).size() == 3);
    CHECK(cli({"sweep", "--checkpoint", d / "m.ckpt", "--data", d / "m.test.csv", "--thetas", "0,abc", "--out",
               d / "s4.csv"})
              .code == 2);
  }

  SUBCASE("calibrate") {
    auto p = cli({"calibrate", "--checkpoint", d / "m.ckpt", "--data", d / "m.test.csv", "--head", "side0", "--bins",
                  "paper", "--out", d / "rel.csv"});
    REQUIRE_MESSAGE(p.code == 0, p.err);
    const auto bins = parse_reliability_csv(slurp(d / "rel.csv"));
    CHECK(bins.size() == 8);
    const auto report = nlohmann::json::parse(slurp(d / "rel.json"));
    CHECK(std::abs(ece(bins) - report.at("ece").get<double>()) < 1e-12);

    auto f = cli({"calibrate", "--checkpoint", d / "m.ckpt", "--data", d / "m.test.csv", "--head", "main", "--bins",
                  "full", "--out", d / "full.csv", "--report", d / "full_report.json"});
    REQUIRE(f.code == 0);
    CHECK(parse_reliability_csv(slurp(d / "full.csv")).size() == 10);
    CHECK(nlohmann::json::parse(slurp(d / "full_report.json")).at("total_n").get<std::size_t>() ==
          load_csv(d / "m.test.csv").size());
    CHECK(cli({"calibrate", "--checkpoint", d / "m.ckpt", "--data", d / "m.test.csv", "--head", "side7", "--out",
               d / "x.csv"})
              .code != 0);
  }

  SUBCASE("info") {
    auto i = cli({"info", "--checkpoint", d / "m.ckpt"});
    REQUIRE(i.code == 0);
    auto model = load_checkpoint(d / "m.ckpt");
    CHECK(i.out.find("exit main: " + std::to_string(model.param_count(ExitPoint::main()))) != std::string::npos);
    CHECK(i.out.find("exit side0: " + std::to_string(model.param_count(ExitPoint::side(0)))) != std::string::npos);
  }
}

TEST_CASE("train errors") {
  TempDir d("trainerr");
  write(d / "cfg.json", small_config(d / "missing.csv"));
  auto r = cli({"train", "--config", d / "cfg.json", "--out", d / "m.ckpt"});
  CHECK(r.code == 1);
  CHECK(r.err.find(d / "missing.csv") != std::string::npos);

  write(d / "bad.json", R"({"seed": 1, "trian": {}})");
  CHECK(cli({"train", "--config", d / "bad.json", "--out", d / "m.ckpt"}).code == 2);
  write(d / "alpha.json", R"({"train": {"alpha": -1}})");
  CHECK(cli({"train", "--config", d / "alpha.json", "--out", d / "m.ckpt"}).code == 2);
  write(d / "broken.json", "{not json");
  CHECK(cli({"train", "--config", d / "broken.json", "--out", d / "m.ckpt"}).code == 2);
  CHECK(cli({"train", "--config", d / "nope.json", "--out", d / "m.ckpt"}).code == 1);
  CHECK(cli({"sweep", "--checkpoint", d / "nope.ckpt", "--data", d / "x.csv", "--out", d / "s.csv"}).code == 1);
}

TEST_CASE("frozen training keeps the logged MainNet accuracy constant") {
  TempDir d("frozen");
  REQUIRE(cli(gen_small(d / "data.csv")).code == 0);
  write(d / "cfg.json", small_config(d / "data.csv", R"(, "mode": "frozen")"));
  REQUIRE(cli({"train", "--config", d / "cfg.json", "--out", d / "m.ckpt"}).code == 0);
  const auto log = TrainLog::from_csv(slurp(d / "m.log.csv"));
  for (const auto& row : log.rows) CHECK(row.val_acc_main == log.rows.front().val_acc_main);

  // Flags override the file.
  REQUIRE(cli({"train", "--config", d / "cfg.json", "--out", d / "j.ckpt", "--mode", "joint", "--epochs", "2"}).code ==
          0);
  CHECK(TrainLog::from_csv(slurp(d / "j.log.csv")).rows.size() == 2);
}

TEST_CASE("compare") {
  TempDir d("compare");
  write(d / "cfg.json", R"({"synthetic": {"per_class_count": 60}, "train": {"epochs": 2, "alpha": 0.0}})");
  auto r = cli({"compare", "--config", d / "cfg.json", "--out", d / "c.json", "--seed", "3"});
  REQUIRE_MESSAGE(r.code == 0, r.err);
  auto j = nlohmann::json::parse(slurp(d / "c.json"));
  CHECK(j.at("with_sidenet") == j.at("without_sidenet"));
  CHECK(j.contains("ensemble"));
  CHECK(j.at("seeds") == nlohmann::json::array({3}));

  write(d / "cfg2.json", R"({"synthetic": {"per_class_count": 60}, "train": {"epochs": 2}})");
  REQUIRE(cli({"compare", "--config", d / "cfg2.json", "--out", d / "c2.json", "--seeds", "3"}).code == 0);
  auto k = nlohmann::json::parse(slurp(d / "c2.json"));
  REQUIRE(k.at("per_seed").size() == 3);
  double mean = 0;
  for (const auto& row : k.at("per_seed")) mean += row.at("without_sidenet").get<double>() / 3;
  CHECK(k.at("without_sidenet").get<double>() == doctest::Approx(mean).epsilon(1e-14));
  CHECK(k.contains("stddev"));
}

#ifdef GATEWIRE_CLI_PATH
TEST_CASE("process exit codes") {
  TempDir d("proc");
  auto status = [](const std::string& cmd) {
    const int s = std::system((cmd + " >/dev/null 2>&1").c_str());
    return WIFEXITED(s) ? WEXITSTATUS(s) : -1;
  };
  const std::string exe = GATEWIRE_CLI_PATH;
  CHECK(status(exe + " gen --out " + (d / "a.csv") + " --per-class 5") == 0);
  CHECK(status(exe + " gen --out " + (d / "a.csv") + " --easy-fraction 1.5") == 2);
  write(d / "cfg.json", small_config(d / "missing.csv"));
  CHECK(status(exe + " train --config " + (d / "cfg.json") + " --out " + (d / "m.ckpt")) == 1);
  CHECK(status(exe + " --help") == 0);
}
#endif
