#pragma once

// Stopping regimes and the development-language epoch rule. Everything here
// is a pure function of its arguments.

#include <map>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace devlang {

struct EpochRecord {
  int epoch = 0;  // 1-based
  double dev_accuracy = 0.0;
  double train_loss = 0.0;
};

class TrainingTrace {
 public:
  TrainingTrace() = default;
  // Accuracies for epochs 1..n.
  static TrainingTrace from_accuracies(std::span<const double> accuracies);

  // Appends the next epoch; accuracy must lie in [0, 1].
  void append(double dev_accuracy, double train_loss = 0.0);

  std::size_t size() const { return records_.size(); }
  bool empty() const { return records_.empty(); }
  int last_epoch() const { return static_cast<int>(records_.size()); }
  const EpochRecord& at_epoch(int epoch) const;
  std::span<const EpochRecord> records() const { return records_; }
  // First `epochs` records.
  TrainingTrace prefix(int epochs) const;

 private:
  std::vector<EpochRecord> records_;
};

struct BestOfBudget {
  int budget = 50;
};

struct Patience {
  int min_epochs = 300;
  int window = 100;
};

struct FixedEpoch {
  int epoch = 1;
};

enum class Rounding { HalfAwayFromZero, HalfToEven, Floor, Ceil };

std::string_view to_string(Rounding rounding);
Rounding parse_rounding(std::string_view text);

class StoppingPolicy {
 public:
  using Kind = std::variant<BestOfBudget, Patience, FixedEpoch>;

  explicit StoppingPolicy(Kind kind, int max_epochs = 0);

  const Kind& kind() const { return kind_; }
  // Hard cap on epochs (0 = none); only meaningful for patience.
  int max_epochs() const { return max_epochs_; }

  // Decision after the last epoch in `trace`.
  bool should_stop(const TrainingTrace& trace) const;
  std::string describe() const;

 private:
  Kind kind_;
  int max_epochs_;
};

enum class StopDecision { Continue, Stop };

// Epoch of maximum dev accuracy, earliest on ties. Trace must be non-empty.
int select_best_epoch(const TrainingTrace& trace);

// Epochs whose dev accuracy strictly exceeds every earlier epoch's. Epoch 1
// establishes the running best and is not itself an improvement.
std::vector<int> improvement_epochs(const TrainingTrace& trace);

// Continue while fewer than `min_epochs` are done, or while the running best
// improved at some epoch in (e - window, e].
StopDecision patience_budget(const TrainingTrace& trace, int min_epochs = 300, int window = 100);

double mean_epoch(std::span<const int> best_epochs);
int round_epoch(double mean, Rounding rounding = Rounding::HalfAwayFromZero);

// Mean of the best epochs rounded to an integer, at least 1.
int devlang_epoch(std::span<const int> best_epochs, Rounding rounding = Rounding::HalfAwayFromZero);

// Development-language epochs with `target` left out when it is one of them.
std::vector<int> loo_best_epochs(const std::map<std::string, int>& best_by_language, const std::string& target);

}  // namespace devlang
