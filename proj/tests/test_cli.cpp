#include "clipstrike/core.hpp"
#include "clipstrike/image_io.hpp"
#include "support.hpp"

#include <doctest.h>
#include <json.hpp>

#include <fstream>
#include <sstream>
#include <sys/wait.h>

using namespace clipstrike;
using clipstrike::testing::TempDir;
namespace fs = std::filesystem;

namespace {

const std::string kFixture = std::string(CLIPSTRIKE_SOURCE_DIR) + "/configs/fixture.toml";

struct Result {
  int code;
  std::string err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

Result run(const TempDir& dir, const std::string& args) {
  const fs::path err = dir.path / "stderr.txt";
  const std::string command = "cd '" + dir.path.string() + "' && '" + CLIPSTRIKE_CLI_PATH + "' " + args +
                              " > /dev/null 2> '" + err.string() + "'";
  const int status = std::system(command.c_str());
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(err)};
}

// Short schedule so each invocation stays within a few seconds.
const std::string kQuick = "--config " + kFixture + " --set train.max_steps=6 --set train.epochs=1";

}  // namespace

TEST_CASE("cli exit codes for user errors") {
  TempDir dir("clipstrike_cli_errors");
  const Result missing = run(dir, "train --config /no/such/run.toml");
  CHECK(missing.code == 1);
  CHECK(missing.err.find("/no/such/run.toml") != std::string::npos);
  CHECK(run(dir, "train --no-such-flag").code == 1);
  CHECK(run(dir, "").code == 1);
  CHECK(run(dir, "evaluate --config " + kFixture).code == 1);
  CHECK(run(dir, "train --config " + kFixture + " --set train.epochs=0").code == 1);
  CHECK(run(dir, "train --config " + kFixture + " --set train.colour=1").code == 1);
  CHECK(run(dir, "evaluate --config " + kFixture + " --checkpoint missing.ckpt").code == 1);
  CHECK(run(dir, "--help").code == 0);
}

TEST_CASE("cli train, evaluate, attack and export") {
  TempDir dir("clipstrike_cli_flow");
  REQUIRE(run(dir, "train " + kQuick + " --run-id t").code == 0);
  const fs::path run_dir = dir.path / "runs" / "t";
  CHECK(fs::exists(run_dir / "train_log.csv"));
  const fs::path ckpt = run_dir / "gen_step_6.ckpt";
  CHECK(fs::exists(ckpt));
  const std::string snapshot = slurp(run_dir / "config_snapshot.toml");
  const auto summary = nlohmann::json::parse(slurp(run_dir / "train_summary.json"));
  CHECK(summary["config_hash"] == hex64(fnv1a(snapshot)));

  const Result again = run(dir, "train " + kQuick + " --run-id t");
  CHECK(again.code == 1);
  CHECK(again.err.find("--force") != std::string::npos);
  CHECK(run(dir, "train " + kQuick + " --run-id t --force").code == 0);
  CHECK(slurp(run_dir / "config_snapshot.toml") == snapshot);

  REQUIRE(run(dir, "evaluate " + kQuick + " --run-id e --checkpoint " + ckpt.string()).code == 0);
  const std::string eval_snapshot = slurp(dir.path / "runs" / "e" / "config_snapshot.toml");
  const auto report = nlohmann::json::parse(slurp(dir.path / "runs" / "e" / "report.json"));
  CHECK(report["config_hash"] == hex64(fnv1a(eval_snapshot)));
  REQUIRE(report["rows"].size() == 2);
  CHECK(report["rows"][0]["box"] == "white");
  CHECK(report["rows"][1]["box"] == "black");
  CHECK(report["rows"][1]["status"] == "ok");
  CHECK(fs::exists(dir.path / "runs" / "e" / "report.csv"));

  CHECK(run(dir, "evaluate " + kQuick + " --run-id e2 --victims fixture-cnn-b --out custom/r.json --checkpoint " +
                     ckpt.string())
            .code == 0);
  const auto custom = nlohmann::json::parse(slurp(dir.path / "custom" / "r.json"));
  CHECK(custom["rows"].size() == 1);
  CHECK(fs::exists(dir.path / "custom" / "r.csv"));

  const Result eps = run(dir, "evaluate " + kQuick + " --run-id e3 --set generator.epsilon=0.05 --checkpoint " +
                                  ckpt.string());
  CHECK(eps.code == 1);
  CHECK(eps.err.find("epsilon") != std::string::npos);

  REQUIRE(run(dir, "attack " + kQuick + " --run-id a --checkpoint " + ckpt.string()).code == 0);
  CHECK(fs::exists(dir.path / "runs" / "a" / "adversarial" / "test" / "fixture-test-0031.png"));

  REQUIRE(run(dir, "export-images " + kQuick + " --run-id x --count 3 --checkpoint " + ckpt.string()).code == 0);
  const Tensor<Real> grid = read_image(dir.path / "runs" / "x" / "images" / "grid.png");
  CHECK(grid.h() == 3 * 32 + 4 * 2);
  CHECK(grid.w() == 3 * 32 + 4 * 2);
}

TEST_CASE("cli baseline and prompt ablation") {
  TempDir dir("clipstrike_cli_extras");
  REQUIRE(run(dir, "baseline " + kQuick + " --run-id b --kind fgsm --victims fixture-cnn").code == 0);
  const auto report = nlohmann::json::parse(slurp(dir.path / "runs" / "b" / "baseline_fgsm.json"));
  CHECK(report["rows"][0]["attack"] == "fgsm(eps=0.03)");
  CHECK(report["rows"][0]["fooling_rate"].get<double>() > 0.0);

  REQUIRE(run(dir, "ablate-prompts " + kQuick +
                       " --run-id p --template 'a photo of a {label}' --template 'a {label}' --set train.max_steps=2")
              .code == 0);
  std::ifstream csv(dir.path / "runs" / "p" / "ablation.csv");
  std::vector<std::string> rows;
  for (std::string line; std::getline(csv, line);) rows.push_back(line);
  REQUIRE(rows.size() == 3);
  CHECK(rows[0] == "template,hamming_score,config_hash");
  const auto score = [](const std::string& row) {
    const auto end = row.rfind(',');
    const auto start = row.rfind(',', end - 1);
    return std::stod(row.substr(start + 1, end - start - 1));
  };
  CHECK(score(rows[1]) <= score(rows[2]));
}
