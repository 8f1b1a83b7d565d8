#include "devlang/cli.hpp"

#include <cmath>
#include <fstream>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "devlang/config.hpp"
#include "devlang/errors.hpp"
#include "devlang/gradcheck.hpp"
#include "devlang/orchestrator.hpp"
#include "devlang/report.hpp"
#include "devlang/rng.hpp"

#ifndef DEVLANG_FIXTURE_DIR
#define DEVLANG_FIXTURE_DIR "fixtures"
#endif

namespace devlang {

namespace fs = std::filesystem;

int exit_code_for(const std::exception& error) {
  if (dynamic_cast<const ConfigError*>(&error)) return kExitConfig;
  if (dynamic_cast<const DataError*>(&error)) return kExitData;
  if (dynamic_cast<const TrainingError*>(&error) || dynamic_cast<const ModelError*>(&error)) return kExitTraining;
  if (dynamic_cast<const PhaseOneAborted*>(&error)) return kExitPhaseOne;
  return kExitFailure;
}

namespace {

struct Common {
  std::string config;
  std::vector<std::string> overrides;
  std::optional<int> workers;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  bool verbose = false;
};

void add_common(CLI::App& cmd, Common& c) {
  cmd.add_option("--config", c.config, "Experiment config file (INI)");
  cmd.add_option("--set", c.overrides, "Override section.key=value (repeatable)")->allow_extra_args(false);
  cmd.add_option("--workers", c.workers, "Parallel language runs")->check(CLI::PositiveNumber);
  cmd.add_option("--seed", c.seed, "Base seed");
  cmd.add_option("--out", c.out, "Output directory");
  cmd.add_flag("-v,--verbose", c.verbose, "Progress messages on stderr");
}

ExperimentConfig resolve_config(const Common& c, const char* seed_key = "seeds.base") {
  std::vector<std::string> overrides = c.overrides;
  if (c.workers) overrides.push_back(fmt::format("output.workers={}", *c.workers));
  if (c.seed) overrides.push_back(fmt::format("{}={}", seed_key, *c.seed));
  if (c.out) overrides.push_back(fmt::format("output.dir={}", *c.out));
  if (c.config.empty()) return parse_config("", overrides);
  return load_config(c.config, overrides);
}

ProgressFn progress_to(std::ostream& err, bool verbose) {
  if (!verbose) return {};
  return [&err](const std::string& message) { err << message << '\n'; };
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError(fmt::format("cannot write '{}'", path.string()));
  out << text;
}

int cmd_train(const Common& c, const std::string& language, std::optional<int> target_epoch, std::ostream& out,
              std::ostream& err) {
  const auto config = resolve_config(c);
  if (std::find(config.languages.begin(), config.languages.end(), language) == config.languages.end())
    throw ConfigError(fmt::format("language '{}' is not in the configured language list", language));
  if (target_epoch && *target_epoch < 1) throw ConfigError("--target-epoch must be >= 1");
  const ModelRunFactory factory(config, load_datasets(config));

  TargetEpoch target;
  target.epoch = target_epoch.value_or(0);
  target.mean = target.epoch;
  const auto dir = config.output_dir / "train" / language;
  const auto seed = derive_run_seed(config.base_seed, Phase::MainTraining, language);
  if (c.verbose) err << fmt::format("training {} with seed {}\n", language, seed);
  const auto record = run_language(factory, language, seed, config.policy, target, dir);
  write_text(dir / "record.json", record_to_json(record));

  out << fmt::format("{}: devset epoch {} test {}", language, record.devset_epoch,
                     format_percent(record.devset_test_accuracy));
  if (target_epoch)
    out << fmt::format(", devlang epoch {} test {}", record.devlang_epoch, format_percent(record.devlang_test_accuracy));
  out << fmt::format(" ({} epochs)\n", record.trace.size());
  return kExitOk;
}

int cmd_run_experiment(const Common& c, std::ostream& out, std::ostream& err) {
  const auto config = resolve_config(c);
  const auto outcome = run_experiment(config, progress_to(err, c.verbose));
  const std::vector<std::pair<std::string, SummaryTable>> columns = {
      {std::string(to_string(config.task)), outcome.summary}};
  out << render_summary_columns(columns);
  for (const auto& r : outcome.records)
    if (r.failed) out << fmt::format("failed: {}: {}\n", r.language, r.error);
  return kExitOk;
}

struct Published {
  OutcomeCounts counts;
  std::string devset, devlang, delta, max_delta;
};

std::vector<std::string> compare_display(const std::string& name, const SummaryTable& s, const Published& p) {
  std::vector<std::string> problems;
  auto check = [&](const std::string& what, const std::string& got, const std::string& want) {
    if (got != want) problems.push_back(fmt::format("{} {}: got {}, published {}", name, what, got, want));
  };
  if (!(s.counts == p.counts))
    problems.push_back(fmt::format("{} counts: got ({},{},{}), published ({},{},{})", name, s.counts.devlang_better,
                                   s.counts.equal, s.counts.devlang_worse, p.counts.devlang_better, p.counts.equal,
                                   p.counts.devlang_worse));
  check("DevSet", format_percent(s.mean_devset), p.devset);
  check("DevLang", format_percent(s.mean_devlang), p.devlang);
  check("delta", format_signed_percent(s.mean_delta), p.delta);
  check("max delta", format_signed_percent(s.max_delta), p.max_delta);
  return problems;
}

constexpr std::size_t kMorphRows = 103;

int cmd_replicate_tables(const Common& c, const std::string& norm, const std::string& transl,
                         const std::string& morph, std::ostream& out, std::ostream& err) {
  const fs::path root = fs::path(c.out.value_or("out")) / "replicate";
  std::vector<std::pair<std::string, SummaryTable>> columns;
  std::vector<std::string> problems;

  auto process = [&](const std::string& name, const std::string& path) {
    const auto results = ingest_fixture(path);
    const auto summary = summarize(results);
    write_report(root / name, summary, results);
    columns.emplace_back(name, summary);
    return std::make_pair(results.size(), summary);
  };

  const auto [norm_rows, norm_summary] = process("norm", norm);
  for (auto& p : compare_display("norm", norm_summary, {{0, 2, 8}, "74.9", "74.2", "-0.7", "-2.4"}))
    problems.push_back(std::move(p));
  const auto [transl_rows, transl_summary] = process("transl", transl);
  for (auto& p : compare_display("transl", transl_summary, {{2, 3, 0}, "21.8", "22.3", "+0.5", "+1.3"}))
    problems.push_back(std::move(p));

  const auto [morph_rows, morph_summary] = process("morph", morph);
  if (morph_rows != kMorphRows) {
    err << fmt::format("warning: morph fixture has {} rows, expected {}\n", morph_rows, kMorphRows);
  } else {
    // Published morph means are only reproducible to within a tenth.
    std::vector<std::string> notes;
    if (!(morph_summary.counts == OutcomeCounts{23, 8, 72})) notes.push_back("counts differ from (23,8,72)");
    if (std::abs(100.0 * morph_summary.mean_devset - 51.3) > 0.1 + 1e-9) notes.push_back("DevSet mean not 51.3±0.1");
    if (std::abs(100.0 * morph_summary.mean_devlang - 50.0) > 0.1 + 1e-9) notes.push_back("DevLang mean not 50.0±0.1");
    if (format_signed_percent(morph_summary.max_delta) != "-18.0") notes.push_back("max delta not -18.0");
    for (const auto& n : notes) err << "warning: morph " << n << '\n';
  }

  out << render_summary_columns(columns);
  out << fmt::format("max delta languages: norm {}, transl {}, morph {}\n", norm_summary.max_delta_language,
                     transl_summary.max_delta_language, morph_summary.max_delta_language);
  if (!problems.empty()) {
    for (const auto& p : problems) err << "deviation: " << p << '\n';
    return kExitFailure;
  }
  return kExitOk;
}

int cmd_gradcheck(const std::string& architecture, std::size_t probes, std::uint64_t seed, std::ostream& out) {
  const auto kind = parse_model_kind(architecture);
  const auto report = check_architecture(kind, probes, seed);
  for (const auto& [name, error] : report.per_parameter)
    out << fmt::format("  {:<24} {:.3e}  {}\n", name, error, error <= kGradcheckTolerance ? "ok" : "FAIL");
  const bool pass = report.max_relative_error <= kGradcheckTolerance;
  out << fmt::format("{}: {} probes, max relative error {:.3e} (tolerance {:.0e}) {}\n", architecture, report.probes,
                     report.max_relative_error, kGradcheckTolerance, pass ? "PASS" : "FAIL");
  return pass ? kExitOk : kExitFailure;
}

int cmd_synth_data(const Common& c, std::ostream& out) {
  auto config = resolve_config(c, "task.synth_seed");
  if (config.task != TaskKind::Synthetic) throw ConfigError("synth-data needs task.kind = synthetic");
  const auto dir = config.output_dir / "synthetic";
  const auto manifest = write_synthetic_datasets(synth_task(config.synth), dir);
  out << manifest.string() << '\n';
  return kExitOk;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"DevSet early stopping versus DevLang epoch selection", "devlang"};
  app.require_subcommand(1);

  Common train_opts, exp_opts, rep_opts, synth_opts;
  std::string language;
  std::optional<int> target_epoch;
  auto* train = app.add_subcommand("train", "Train one language (DevSet policy, optional DevLang target)");
  add_common(*train, train_opts);
  train->add_option("--language", language, "Language to train")->required();
  train->add_option("--target-epoch", target_epoch, "Also keep the checkpoint from this epoch");

  auto* experiment = app.add_subcommand("run-experiment", "Both training phases and the report");
  add_common(*experiment, exp_opts);

  const std::string fixtures = DEVLANG_FIXTURE_DIR;
  std::string norm = fixtures + "/norm.csv", transl = fixtures + "/transl.csv", morph = fixtures + "/morph.csv";
  auto* replicate = app.add_subcommand("replicate-tables", "Summaries from per-language result fixtures");
  add_common(*replicate, rep_opts);
  replicate->add_option("--norm", norm, "Normalization fixture CSV")->capture_default_str();
  replicate->add_option("--transl", transl, "Transliteration fixture CSV")->capture_default_str();
  replicate->add_option("--morph", morph, "Morphology fixture CSV")->capture_default_str();

  std::string architecture;
  std::size_t probes = 50;
  std::uint64_t gc_seed = 1;
  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference check of one architecture");
  gradcheck->add_option("architecture", architecture, "attention-seq2seq | pointer-generator | hard-monotonic")
      ->required();
  gradcheck->add_option("--probes", probes, "Probed coordinates")->capture_default_str();
  gradcheck->add_option("--seed", gc_seed, "Seed")->capture_default_str();

  auto* synth = app.add_subcommand("synth-data", "Write synthetic datasets and their manifest");
  add_common(*synth, synth_opts);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*train) return cmd_train(train_opts, language, target_epoch, out, err);
    if (*experiment) return cmd_run_experiment(exp_opts, out, err);
    if (*replicate) return cmd_replicate_tables(rep_opts, norm, transl, morph, out, err);
    if (*gradcheck) return cmd_gradcheck(architecture, probes, gc_seed, out);
    if (*synth) return cmd_synth_data(synth_opts, out);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return exit_code_for(e);
  }
  return kExitConfig;
}

}  // namespace devlang
