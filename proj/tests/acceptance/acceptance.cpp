// Acceptance gate: one [PASS]/[FAIL] line per criterion, nonzero exit on any failure.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "devlang/cli.hpp"
#include "devlang/config.hpp"
#include "devlang/data.hpp"
#include "devlang/errors.hpp"
#include "devlang/gradcheck.hpp"
#include "devlang/models.hpp"
#include "devlang/numkernel.hpp"
#include "devlang/orchestrator.hpp"
#include "devlang/report.hpp"
#include "devlang/rng.hpp"
#include "devlang/stopping.hpp"

using namespace devlang;
namespace fs = std::filesystem;

namespace {

const fs::path kFixtures = DEVLANG_FIXTURE_DIR;

struct Verdict {
  bool pass = true;
  std::vector<std::string> notes;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      notes.push_back(what);
    }
  }
};

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("devlang_acceptance_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

// ---- 1: table replication ------------------------------------------------------

struct RawRow {
  std::string language;
  double devset, devlang;
};

// Plain reading of the fixture, kept apart from the library's ingestion.
std::vector<RawRow> raw_rows(const fs::path& path) {
  std::ifstream in(path);
  std::string line;
  std::getline(in, line);
  std::vector<RawRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream s(line);
    for (std::string cell; std::getline(s, cell, ',');) f.push_back(cell);
    rows.push_back({f.at(0), std::stod(f.at(1)), std::stod(f.at(3))});
  }
  bool percent = false;
  for (const auto& r : rows) percent = percent || r.devset > 1 || r.devlang > 1;
  if (percent)
    for (auto& r : rows) r.devset /= 100, r.devlang /= 100;
  return rows;
}

struct OracleSummary {
  int better = 0, equal = 0, worse = 0;
  double devset = 0, devlang = 0, delta = 0, max_delta = 0;
  std::string max_language;
};

OracleSummary oracle_summary(const std::vector<RawRow>& rows) {
  OracleSummary s;
  for (const auto& r : rows) {
    if (r.devlang > r.devset) ++s.better;
    else if (r.devlang < r.devset) ++s.worse;
    else ++s.equal;
    s.devset += r.devset;
    s.devlang += r.devlang;
    if (std::abs(r.devlang - r.devset) > std::abs(s.max_delta)) {
      s.max_delta = r.devlang - r.devset;
      s.max_language = r.language;
    }
  }
  s.devset /= static_cast<double>(rows.size());
  s.devlang /= static_cast<double>(rows.size());
  s.delta = s.devlang - s.devset;
  return s;
}

std::string one_decimal(double fraction, bool sign) {
  char buf[32];
  std::snprintf(buf, sizeof buf, sign ? "%+.1f" : "%.1f", 100.0 * fraction);
  std::string s = buf;
  if (s == "+0.0" || s == "-0.0") s = "0.0";
  return s;
}

Verdict criterion_1() {
  Verdict v;
  const auto start = std::chrono::steady_clock::now();
  struct Exact {
    const char* name;
    int better, equal, worse;
    const char *devset, *devlang, *delta, *max_delta;
  };
  for (const auto& t : {Exact{"norm", 0, 2, 8, "74.9", "74.2", "-0.7", "-2.4"},
                        Exact{"transl", 2, 3, 0, "21.8", "22.3", "+0.5", "+1.3"}}) {
    const auto path = kFixtures / (std::string(t.name) + ".csv");
    const auto o = oracle_summary(raw_rows(path));
    const auto lib = summarize(ingest_fixture(path));
    auto both = [&](const std::string& what, const std::string& oracle, const std::string& library,
                    const std::string& published) {
      v.require(oracle == published && library == published,
                fmt::format("{} {}: oracle {}, library {}, published {}", t.name, what, oracle, library, published));
    };
    v.require(o.better == t.better && o.equal == t.equal && o.worse == t.worse,
              fmt::format("{} oracle counts ({},{},{})", t.name, o.better, o.equal, o.worse));
    v.require(lib.counts == OutcomeCounts{t.better, t.equal, t.worse}, fmt::format("{} library counts", t.name));
    both("DevSet", one_decimal(o.devset, false), format_percent(lib.mean_devset), t.devset);
    both("DevLang", one_decimal(o.devlang, false), format_percent(lib.mean_devlang), t.devlang);
    both("delta", one_decimal(o.delta, true), format_signed_percent(lib.mean_delta), t.delta);
    both("max delta", one_decimal(o.max_delta, true), format_signed_percent(lib.max_delta), t.max_delta);
  }

  const auto morph_path = kFixtures / "morph.csv";
  const auto o = oracle_summary(raw_rows(morph_path));
  const auto lib = summarize(ingest_fixture(morph_path));
  v.require(o.better == 23 && o.equal == 8 && o.worse == 72,
            fmt::format("morph oracle counts ({},{},{})", o.better, o.equal, o.worse));
  v.require(lib.counts == OutcomeCounts{23, 8, 72}, "morph library counts");
  v.require(std::abs(100 * o.devset - 51.3) <= 0.1 + 1e-9 && std::abs(100 * lib.mean_devset - 51.3) <= 0.1 + 1e-9,
            fmt::format("morph DevSet mean {:.3f}", 100 * o.devset));
  v.require(std::abs(100 * o.devlang - 50.0) <= 0.1 + 1e-9 && std::abs(100 * lib.mean_devlang - 50.0) <= 0.1 + 1e-9,
            fmt::format("morph DevLang mean {:.3f}", 100 * o.devlang));
  v.require(one_decimal(o.max_delta, true) == "-18.0" && format_signed_percent(lib.max_delta) == "-18.0",
            "morph max delta");
  v.require(o.max_language == "azeri" && lib.max_delta_language == "azeri", "morph max delta language");

  // The command itself, end to end.
  const auto dir = scratch("replicate");
  const std::string out_dir = dir.string();
  const char* argv[] = {"devlang", "replicate-tables", "--out", out_dir.c_str()};
  std::ostringstream out, err;
  const int code = run_cli(4, argv, out, err);
  v.require(code == kExitOk, fmt::format("replicate-tables exit {}: {}", code, err.str()));
  fs::remove_all(dir);

  const double elapsed = seconds_since(start);
  v.require(elapsed < 1.0, fmt::format("took {:.2f} s", elapsed));
  v.notes.push_back(fmt::format("{:.3f} s", elapsed));
  return v;
}

// ---- 2: worked example with a stub trainer -----------------------------------------

class PeakRun final : public LanguageRun {
 public:
  explicit PeakRun(int peak) : peak_(peak) {}
  double train_epoch(int epoch) override {
    epoch_ = epoch;
    return 1.0;
  }
  double dev_accuracy() override { return std::max(0.0, 0.5 - 0.01 * std::abs(epoch_ - peak_)); }
  void keep(CheckpointSlot slot, int epoch) override { kept_[static_cast<int>(slot)] = epoch; }
  double test_accuracy(CheckpointSlot slot) override { return kept_[static_cast<int>(slot)] / 100.0; }
  std::optional<fs::path> save(CheckpointSlot, const fs::path&) override { return std::nullopt; }

 private:
  int peak_;
  int epoch_ = 0;
  int kept_[2] = {0, 0};
};

class PeakFactory final : public RunFactory {
 public:
  std::unique_ptr<LanguageRun> start(const std::string& language, std::uint64_t) const override {
    static const std::map<std::string, int> peaks = {{"dev-1", 14}, {"dev-2", 18}, {"held-out", 19}};
    return std::make_unique<PeakRun>(peaks.at(language));
  }
};

Verdict criterion_2() {
  Verdict v;
  ExperimentConfig config;
  config.languages = {"dev-1", "dev-2", "held-out"};
  config.dev_languages = {"dev-1", "dev-2"};
  config.policy = StoppingPolicy(BestOfBudget{30});
  const PeakFactory factory;

  const auto p1 = run_phase_one(config, factory);
  v.require(p1.best_epochs.at("dev-1") == 14 && p1.best_epochs.at("dev-2") == 18,
            fmt::format("phase one epochs {} and {}", p1.best_epochs.at("dev-1"), p1.best_epochs.at("dev-2")));
  const auto targets = compute_target_epochs(p1, config);
  v.require(targets.at("held-out").epoch == 16, fmt::format("target {}", targets.at("held-out").epoch));

  const auto records = run_phase_two(config, factory, targets);
  const auto& r = records.at(2);
  v.require(!r.failed, "phase two failed: " + r.error);
  v.require(r.devset_epoch == 19, fmt::format("DevSet epoch {}", r.devset_epoch));
  v.require(r.devlang_epoch == 16, fmt::format("DevLang epoch {}", r.devlang_epoch));
  v.require(std::abs(r.devset_test_accuracy - 0.19) < 1e-12 && std::abs(r.devlang_test_accuracy - 0.16) < 1e-12,
            "test accuracies do not come from epochs 19 and 16");
  const auto summary = summarize(std::vector<LanguageResult>{to_language_result(r)});
  v.require(summary.counts == OutcomeCounts{0, 0, 1}, "outcome is not DevLang < DevSet");
  return v;
}

// ---- 3: scatter -------------------------------------------------------------------

Verdict criterion_3() {
  Verdict v;
  const auto points = scatter_points(ingest_fixture(kFixtures / "morph.csv"));
  v.require(points.size() == 103, fmt::format("{} points", points.size()));
  bool found = false;
  for (const auto& p : points)
    if (p.language == "azeri") {
      found = true;
      v.require(std::abs(p.epoch_delta - 107.0) <= 1e-12 && std::abs(p.accuracy_delta + 0.18) <= 1e-12,
                fmt::format("azeri at ({}, {})", p.epoch_delta, p.accuracy_delta));
    }
  v.require(found, "no azeri point");
  return v;
}

// ---- 4: gradients -------------------------------------------------------------------

Verdict criterion_4() {
  Verdict v;
  const auto start = std::chrono::steady_clock::now();
  for (auto kind : {ModelKind::AttentionSeq2Seq, ModelKind::PointerGenerator, ModelKind::HardMonotonic}) {
    const auto report = check_architecture(kind, 50, 1);
    v.require(report.probes == 50 && report.max_relative_error <= kGradcheckTolerance,
              fmt::format("{} max relative error {:.2e}", to_string(kind), report.max_relative_error));
    v.notes.push_back(fmt::format("{} {:.1e}", to_string(kind), report.max_relative_error));
  }

  ParameterStore store(3, 0.5);
  const auto w = store.add("w", 6, 4);
  const auto b = store.add("b", 6, 1);
  const Vec x = (Vec(4) << 0.4, -0.9, 1.3, 0.05).finished();
  const int target = 4;
  auto loss = [&] { return cross_entropy(softmax(linear_forward(x, store[w].value, store[b].value.col(0))), target); };
  auto backprop = [&] {
    store.zero_grad();
    const Vec probs = softmax(linear_forward(x, store[w].value, store[b].value.col(0)));
    linear_backward(x, store[w].value, softmax_cross_entropy_grad(probs, target), store[w].grad, store[b].grad.col(0));
  };
  const auto linear = gradient_check(store, loss, backprop, 50, 1);
  v.require(linear.max_relative_error <= 1e-6,
            fmt::format("linear+cross-entropy max relative error {:.2e}", linear.max_relative_error));
  v.notes.push_back(fmt::format("linear {:.1e}", linear.max_relative_error));

  const double elapsed = seconds_since(start);
  v.require(elapsed < 30.0, fmt::format("took {:.1f} s", elapsed));
  v.notes.push_back(fmt::format("{:.2f} s", elapsed));
  return v;
}

// ---- 5: mixture and monotonicity ------------------------------------------------------

Verdict criterion_5() {
  Verdict v;
  const auto start = std::chrono::steady_clock::now();
  Rng rng(2024);
  int bad_sum = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const int vocab = 2 + static_cast<int>(rng.below(30));
    const int n = 1 + static_cast<int>(rng.below(12));
    Vec scores(vocab), att(n);
    for (auto& s : scores) s = rng.uniform(-8, 8);
    for (auto& s : att) s = rng.uniform(-8, 8);
    std::vector<int> src(static_cast<std::size_t>(n));
    for (auto& s : src) s = static_cast<int>(rng.below(static_cast<std::uint64_t>(vocab)));
    const Vec p = pg_mixture(rng.canonical(), softmax(scores), AttentionResult{softmax(att), Vec::Zero(1)}, src);
    if (!(std::abs(p.sum() - 1.0) <= 1e-6 && p.minCoeff() >= 0.0)) ++bad_sum;
  }
  v.require(bad_sum == 0, fmt::format("{} mixtures off by more than 1e-6", bad_sum));

  std::vector<TransductionExample> train(1);
  train[0].id = "x:1";
  train[0].source = split_characters("abcdefgh");
  train[0].targets = {split_characters("hgfedcba")};
  int bad_path = 0;
  for (int m = 0; m < 20; ++m) {
    ModelConfig c;
    c.kind = ModelKind::HardMonotonic;
    c.hidden_size = 6;
    c.embedding_size = 4;
    c.init_scale = 2.0;  // large weights spread the actions
    c.seed = 500 + static_cast<std::uint64_t>(m);
    auto model = make_model(c, train);
    const auto& hm = dynamic_cast<const HardMonotonic&>(*model);
    for (int k = 0; k < 50; ++k) {
      std::vector<int> src(1 + rng.below(10));
      for (auto& s : src) s = Vocabulary::kReserved + static_cast<int>(rng.below(8));
      const auto max_len = TransductionModel::default_max_len(src.size());
      const auto d = hm.decode_with_trace(src, max_len);
      bool ok = d.actions.size() == d.positions.size() && d.output.size() <= max_len;
      std::size_t steps = 0;
      for (std::size_t t = 0; ok && t < d.actions.size(); ++t) {
        ok = d.positions[t] == steps && d.positions[t] <= src.size() && (t == 0 || d.positions[t] >= d.positions[t - 1]);
        if (d.actions[t] == hm.step_action()) ++steps;
      }
      if (!ok) ++bad_path;
    }
  }
  v.require(bad_path == 0, fmt::format("{} of 1000 decodes broke monotone bounded attention", bad_path));

  const double elapsed = seconds_since(start);
  v.require(elapsed < 10.0, fmt::format("took {:.1f} s", elapsed));
  v.notes.push_back(fmt::format("{:.2f} s", elapsed));
  return v;
}

// ---- 6: overfitting -------------------------------------------------------------------

Verdict criterion_6() {
  Verdict v;
  SynthOptions o;
  o.seed = 6;
  o.language_count = 2;
  o.train_size = 20;
  o.dev_size = 1;
  o.test_size = 1;
  const auto train = synth_task(o).front().train;

  for (auto kind : {ModelKind::AttentionSeq2Seq, ModelKind::PointerGenerator, ModelKind::HardMonotonic}) {
    const auto start = std::chrono::steady_clock::now();
    ModelConfig c;
    c.kind = kind;
    c.hidden_size = 32;
    c.embedding_size = 16;
    c.seed = 17;
    auto model = make_model(c, train);
    std::vector<EncodedExample> encoded;
    for (const auto& ex : train) encoded.push_back(model->encode_example(ex));
    AdamConfig adam;
    adam.step_size = 0.01;
    int reached = 0;
    double accuracy = 0.0;
    for (int e = 1; e <= 500; ++e) {
      train_epoch(*model, encoded, adam, splitmix64(17 ^ static_cast<std::uint64_t>(e)));
      accuracy = evaluate_accuracy(*model, train);
      if (accuracy == 1.0) {
        reached = e;
        break;
      }
    }
    const double elapsed = seconds_since(start);
    v.require(reached > 0, fmt::format("{} reached {:.0f}% in 500 epochs", to_string(kind), 100 * accuracy));
    v.require(elapsed < 120.0, fmt::format("{} took {:.1f} s", to_string(kind), elapsed));
    v.notes.push_back(fmt::format("{} epoch {} ({:.1f} s)", to_string(kind), reached, elapsed));
  }
  return v;
}

// ---- 7 and 8: the synthetic experiment ------------------------------------------------

// Run seed stored in a model checkpoint's parameter container.
std::uint64_t checkpoint_seed(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  char header[12];
  in.read(header, 12);  // magic, version, kind length
  std::uint32_t kind_length = 0;
  for (int i = 0; i < 4; ++i) kind_length |= static_cast<std::uint32_t>(static_cast<unsigned char>(header[8 + i])) << (8 * i);
  in.seekg(12 + kind_length + 16);  // kind, two vocabulary hashes
  return read_parameters(in).seed();
}

ExperimentConfig synthetic_config(const fs::path& out) {
  const std::vector<std::string> overrides = {"output.dir=" + out.string()};
  auto c = parse_config("", overrides);
  return c;
}

Verdict criterion_7(const fs::path& dir) {
  Verdict v;
  const auto start = std::chrono::steady_clock::now();
  const auto config = synthetic_config(dir);
  v.require(config.languages.size() == 4 && config.synth.train_size == 100 && config.synth.dev_size == 50 &&
                config.synth.test_size == 50 && config.policy.describe() == "best-of-budget(30)",
            "default synthetic configuration differs from 4 x 100/50/50 with best-of-budget 30");
  const auto outcome = run_experiment(config);
  for (const auto& r : outcome.records) {
    if (r.failed) {
      v.require(false, r.language + " failed: " + r.error);
      continue;
    }
    const int n = r.trace.last_epoch();
    v.require(n >= r.devlang_epoch, fmt::format("{} trace {} shorter than DevLang epoch {}", r.language, n,
                                                r.devlang_epoch));
    if (n >= r.devlang_epoch && r.devset_epoch >= 1)
      v.require(r.trace.at_epoch(r.devset_epoch).dev_accuracy >= r.trace.at_epoch(r.devlang_epoch).dev_accuracy,
                fmt::format("{} DevLang epoch has higher dev accuracy", r.language));
    v.require(r.devset_checkpoint && r.devlang_checkpoint, r.language + " lacks a checkpoint");
    if (r.devset_checkpoint && r.devlang_checkpoint) {
      const auto a = checkpoint_seed(*r.devset_checkpoint);
      const auto b = checkpoint_seed(*r.devlang_checkpoint);
      v.require(a == b && a == r.seed, fmt::format("{} checkpoint seeds {} / {} / run {}", r.language, a, b, r.seed));
    }
  }
  const double elapsed = seconds_since(start);
  v.require(elapsed < 300.0, fmt::format("took {:.1f} s", elapsed));
  v.notes.push_back(fmt::format("{:.1f} s", elapsed));
  return v;
}

Verdict criterion_8(const fs::path& first, const fs::path& second) {
  Verdict v;
  run_experiment(synthetic_config(second));
  for (const char* name : {"report.csv", "report.json"}) {
    const auto a = slurp(first / name);
    v.require(!a.empty(), std::string(name) + " missing");
    v.require(a == slurp(second / name), std::string(name) + " differs between runs");
  }
  return v;
}

// ---- 9: stopping rules against enumeration ---------------------------------------------

// Best epoch straight from the definition: the first epoch no other epoch beats.
int enumerate_best(const std::vector<double>& acc) {
  for (std::size_t e = 0; e < acc.size(); ++e) {
    bool beaten = false;
    for (double other : acc) beaten = beaten || other > acc[e];
    if (!beaten) return static_cast<int>(e) + 1;
  }
  return -1;
}

// Stop after epoch `e` when at least `min_epochs` are done and no epoch in
// (e - window, e] set a new running maximum.
bool enumerate_patience_stop(const std::vector<double>& acc, int e, int min_epochs, int window) {
  if (e < min_epochs) return false;
  for (int k = std::max(2, e - window + 1); k <= e; ++k) {
    bool record = true;
    for (int j = 1; j < k; ++j) record = record && acc[static_cast<std::size_t>(k - 1)] > acc[static_cast<std::size_t>(j - 1)];
    if (record) return false;
  }
  return true;
}

Verdict criterion_9() {
  Verdict v;
  Rng rng(99);
  int mismatches = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const int n = 1 + static_cast<int>(rng.below(150));
    std::vector<double> acc(static_cast<std::size_t>(n));
    const int levels = 2 + static_cast<int>(rng.below(20));
    for (auto& a : acc) a = static_cast<double>(rng.below(static_cast<std::uint64_t>(levels))) / (levels - 1);
    const auto trace = TrainingTrace::from_accuracies(acc);
    if (select_best_epoch(trace) != enumerate_best(acc)) ++mismatches;

    const int window = 1 + static_cast<int>(rng.below(30));
    const int min_epochs = window + static_cast<int>(rng.below(60));
    for (int probe = 0; probe < 5; ++probe) {
      const int e = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(n)));
      const bool stop = patience_budget(trace.prefix(e), min_epochs, window) == StopDecision::Stop;
      if (stop != enumerate_patience_stop(acc, e, min_epochs, window)) ++mismatches;
    }

    std::vector<int> epochs(1 + rng.below(10));
    long long sum = 0;
    for (auto& x : epochs) {
      x = 1 + static_cast<int>(rng.below(500));
      sum += x;
    }
    // Half away from zero on positive integers: floor((2 * sum + n) / (2 * n)).
    const long long count = static_cast<long long>(epochs.size());
    const long long expected = std::max(1LL, (2 * sum + count) / (2 * count));
    if (devlang_epoch(epochs) != expected) ++mismatches;
  }
  v.require(mismatches == 0, fmt::format("{} mismatches", mismatches));
  return v;
}

}  // namespace

int main() {
  int failures = 0;
  auto report = [&](int number, const std::string& title, const std::function<Verdict()>& check) {
    Verdict v;
    try {
      v = check();
    } catch (const std::exception& e) {
      v.pass = false;
      v.notes.push_back(std::string("exception: ") + e.what());
    }
    std::string notes;
    for (const auto& n : v.notes) notes += (notes.empty() ? "" : "; ") + n;
    std::cout << fmt::format("[{}] {} {}{}\n", v.pass ? "PASS" : "FAIL", number, title,
                             notes.empty() ? "" : " (" + notes + ")")
              << std::flush;
    if (!v.pass) ++failures;
  };

  const auto first = scratch("experiment-1");
  const auto second = scratch("experiment-2");
  report(1, "table replication", criterion_1);
  report(2, "worked example with stub trainer", criterion_2);
  report(3, "scatter fidelity", criterion_3);
  report(4, "gradient correctness", criterion_4);
  report(5, "mixture sums and monotone attention", criterion_5);
  report(6, "overfit sanity", criterion_6);
  report(7, "protocol invariants", [&] { return criterion_7(first); });
  report(8, "determinism", [&] { return criterion_8(first, second); });
  report(9, "stopping rules against enumeration", criterion_9);
  fs::remove_all(first);
  fs::remove_all(second);
  return failures == 0 ? 0 : 1;
}
