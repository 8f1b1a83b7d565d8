#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "devlang/config.hpp"
#include "devlang/data.hpp"
#include "devlang/models.hpp"
#include "devlang/report.hpp"
#include "devlang/stopping.hpp"

namespace devlang {

enum class CheckpointSlot { DevSet, DevLang };

std::string_view to_string(CheckpointSlot slot);

// One training run for one language. Epochs are driven in order from 1.
class LanguageRun {
 public:
  virtual ~LanguageRun() = default;
  // Returns the mean training loss of the epoch.
  virtual double train_epoch(int epoch) = 0;
  virtual double dev_accuracy() = 0;
  // Snapshot of the current parameters into `slot`.
  virtual void keep(CheckpointSlot slot, int epoch) = 0;
  virtual double test_accuracy(CheckpointSlot slot) = 0;
  // Writes the slot's checkpoint under `dir`; nullopt when the run has nothing to persist.
  virtual std::optional<std::filesystem::path> save(CheckpointSlot slot, const std::filesystem::path& dir) = 0;
};

// Must be safe to call from several worker threads at once.
class RunFactory {
 public:
  virtual ~RunFactory() = default;
  virtual std::unique_ptr<LanguageRun> start(const std::string& language, std::uint64_t seed) const = 0;
};

struct PhaseOneResult {
  std::map<std::string, int> best_epochs;
  std::map<std::string, TrainingTrace> traces;
};

struct TargetEpoch {
  int epoch = 1;              // 0: no DevLang checkpoint
  double mean = 0.0;          // before rounding
  std::vector<int> sources;   // the development-language epochs averaged
};

struct RunRecord {
  std::string language;
  std::uint64_t seed = 0;
  TrainingTrace trace;
  int policy_stop = 0;  // epoch at which the original policy stopped
  int devset_epoch = 0;
  int devlang_epoch = 0;
  double devlang_mean = 0.0;
  std::optional<std::filesystem::path> devset_checkpoint;
  std::optional<std::filesystem::path> devlang_checkpoint;
  double devset_test_accuracy = 0.0;
  double devlang_test_accuracy = 0.0;
  bool failed = false;
  std::string error;
};

using ProgressFn = std::function<void(const std::string& message)>;

// Runs every development language under the task policy. Any failure aborts
// with PhaseOneAborted; nothing is written to disk.
PhaseOneResult run_phase_one(const ExperimentConfig& config, const RunFactory& factory,
                             const ProgressFn& progress = {});

// Leave-one-out mean over development-language best epochs for each language.
std::map<std::string, TargetEpoch> compute_target_epochs(const PhaseOneResult& phase_one,
                                                         const ExperimentConfig& config);

// One run covering both the policy stop and `target`. DevSet keeps the
// earliest best epoch up to the policy stop; DevLang keeps epoch `target`.
// A target epoch of 0 runs the policy alone. Checkpoints are written under
// `run_dir` when it is non-empty.
RunRecord run_language(const RunFactory& factory, const std::string& language, std::uint64_t seed,
                       const StoppingPolicy& policy, const TargetEpoch& target,
                       const std::filesystem::path& run_dir = {});

// Failures are recorded per language and do not stop the others.
std::vector<RunRecord> run_phase_two(const ExperimentConfig& config, const RunFactory& factory,
                                     const std::map<std::string, TargetEpoch>& targets,
                                     const std::filesystem::path& runs_dir = {}, const ProgressFn& progress = {});

LanguageResult to_language_result(const RunRecord& record);

struct ExperimentOutcome {
  PhaseOneResult phase_one;
  std::map<std::string, TargetEpoch> targets;
  std::vector<RunRecord> records;
  std::vector<LanguageResult> results;  // successful records only
  SummaryTable summary;
  std::filesystem::path manifest;
};

// Phase one, targets, phase two and the report, all under config.output_dir,
// finished by manifest.json listing every artifact with its SHA-256. An
// aborted experiment still writes a manifest marked incomplete, then rethrows.
ExperimentOutcome run_experiment(const ExperimentConfig& config, const RunFactory& factory,
                                 const ProgressFn& progress = {});
ExperimentOutcome run_experiment(const ExperimentConfig& config, const ProgressFn& progress = {});

// Datasets for config.languages, in that order. Unequal train sizes are a DataError.
std::vector<SplitDataset> load_datasets(const ExperimentConfig& config);

// Real model training: one fresh model per run, seeded from the run seed.
class ModelRunFactory final : public RunFactory {
 public:
  ModelRunFactory(const ExperimentConfig& config, std::vector<SplitDataset> datasets);
  std::unique_ptr<LanguageRun> start(const std::string& language, std::uint64_t seed) const override;

 private:
  ModelConfig model_;
  AdamConfig optimizer_;
  std::map<std::string, SplitDataset> datasets_;
};

std::string record_to_json(const RunRecord& record);
std::string sha256_hex(const std::filesystem::path& file);

// Runs `jobs` on up to `workers` threads; job i writes only its own slot.
void parallel_for(std::size_t count, int workers, const std::function<void(std::size_t)>& job);

}  // namespace devlang
