#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "devlang/cli.hpp"
#include "devlang/errors.hpp"

using namespace devlang;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out, err;
};

Result run(std::vector<std::string> args) {
  args.insert(args.begin(), "devlang");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("devlang_cli_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

// A tiny synthetic setup that trains in well under a second.
const std::vector<std::string> kTiny = {"--set", "task.synth_train=8", "--set", "task.synth_dev=4",
                                        "--set", "task.synth_test=4",  "--set", "policy.budget=3",
                                        "--set", "model.hidden_size=6", "--set", "model.embedding_size=4"};

std::vector<std::string> with_tiny(std::vector<std::string> args) {
  args.insert(args.end(), kTiny.begin(), kTiny.end());
  return args;
}

}  // namespace

TEST_CASE("exit code mapping") {
  CHECK(exit_code_for(ConfigError("x")) == kExitConfig);
  CHECK(exit_code_for(DataError("x")) == kExitData);
  CHECK(exit_code_for(TrainingError("x")) == kExitTraining);
  CHECK(exit_code_for(ModelError("x")) == kExitTraining);
  CHECK(exit_code_for(PhaseOneAborted("x")) == kExitPhaseOne);
  CHECK(exit_code_for(IoError("x")) == kExitFailure);
}

TEST_CASE("command line errors") {
  CHECK(run({}).code == kExitConfig);
  CHECK(run({"frobnicate"}).code == kExitConfig);
  CHECK(run({"train"}).code == kExitConfig);  // --language is required
  CHECK(run({"--help"}).code == kExitOk);
  const auto r = run({"gradcheck", "lstm"});
  CHECK(r.code == kExitConfig);
  CHECK(r.err.find("lstm") != std::string::npos);
}

TEST_CASE("unknown override key") {
  const auto r = run({"run-experiment", "--set", "policy.patiense=3"});
  CHECK(r.code == kExitConfig);
  CHECK(r.err.find("policy.patiense") != std::string::npos);
  CHECK(run({"run-experiment", "--set", "dev-languages.names="}).code == kExitConfig);
}

TEST_CASE("replicate-tables reproduces the published summaries") {
  const auto dir = scratch("replicate");
  const auto r = run({"replicate-tables", "--out", dir.string()});
  CHECK(r.code == kExitOk);
  CHECK(r.err.find("deviation") == std::string::npos);
  CHECK(r.out.find("74.9") != std::string::npos);
  CHECK(r.out.find("german-2") != std::string::npos);
  CHECK(fs::exists(dir / "replicate" / "morph" / "scatter.csv"));

  const auto missing = run({"replicate-tables", "--out", dir.string(), "--norm", (dir / "none.csv").string()});
  CHECK(missing.code == kExitData);
  CHECK(missing.err.find("none.csv") != std::string::npos);
  fs::remove_all(dir);
}

TEST_CASE("gradcheck subcommand") {
  const auto r = run({"gradcheck", "hard-monotonic", "--probes", "10"});
  CHECK(r.code == kExitOk);
  CHECK(r.out.find("PASS") != std::string::npos);
}

TEST_CASE("missing dataset file is a data error naming the path") {
  const auto dir = scratch("missing");
  std::ofstream(dir / "datasets.json") << R"({"x": {"train": "x.train", "dev": "x.dev", "test": "x.test"}})";
  std::ofstream(dir / "exp.ini") << "[task]\nkind = norm\nmanifest = datasets.json\n";
  const auto r = run({"train", "--config", (dir / "exp.ini").string(), "--language", "x", "--out", dir.string()});
  CHECK(r.code == kExitData);
  CHECK(r.err.find("x.train") != std::string::npos);
  fs::remove_all(dir);
}

TEST_CASE("synth-data and train") {
  const auto dir = scratch("train");
  auto r = run(with_tiny({"synth-data", "--out", dir.string()}));
  CHECK(r.code == kExitOk);
  CHECK(fs::exists(dir / "synthetic" / "datasets.json"));

  r = run(with_tiny({"train", "--language", "synth-00", "--target-epoch", "2", "--out", dir.string()}));
  CHECK(r.code == kExitOk);
  CHECK(r.out.find("devlang epoch 2") != std::string::npos);
  CHECK(fs::exists(dir / "train" / "synth-00" / "record.json"));
  CHECK(fs::exists(dir / "train" / "synth-00" / "devlang.ckpt"));

  CHECK(run(with_tiny({"train", "--language", "klingon", "--out", dir.string()})).code == kExitConfig);
  CHECK(run(with_tiny({"train", "--language", "synth-00", "--target-epoch", "0"})).code == kExitConfig);
  fs::remove_all(dir);
}

TEST_CASE("run-experiment prints the summary") {
  const auto dir = scratch("experiment");
  const auto r = run(with_tiny({"run-experiment", "--out", dir.string(), "--workers", "2"}));
  CHECK(r.code == kExitOk);
  CHECK(r.out.find("synthetic") != std::string::npos);
  CHECK(fs::exists(dir / "manifest.json"));
  CHECK(fs::exists(dir / "report.json"));
  fs::remove_all(dir);
}
