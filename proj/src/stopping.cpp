#include "devlang/stopping.hpp"

#include <cmath>
#include <numeric>

#include <fmt/format.h>

#include "devlang/errors.hpp"

namespace devlang {

TrainingTrace TrainingTrace::from_accuracies(std::span<const double> accuracies) {
  TrainingTrace t;
  for (double a : accuracies) t.append(a);
  return t;
}

void TrainingTrace::append(double dev_accuracy, double train_loss) {
  if (!(dev_accuracy >= 0.0 && dev_accuracy <= 1.0))
    throw TrainingError(fmt::format("dev accuracy {} outside [0, 1]", dev_accuracy));
  records_.push_back({static_cast<int>(records_.size()) + 1, dev_accuracy, train_loss});
}

const EpochRecord& TrainingTrace::at_epoch(int epoch) const {
  if (epoch < 1 || epoch > last_epoch())
    throw ConfigError(fmt::format("epoch {} outside trace of length {}", epoch, size()));
  return records_[static_cast<std::size_t>(epoch - 1)];
}

TrainingTrace TrainingTrace::prefix(int epochs) const {
  TrainingTrace t;
  const auto n = std::min<std::size_t>(records_.size(), static_cast<std::size_t>(std::max(epochs, 0)));
  t.records_.assign(records_.begin(), records_.begin() + static_cast<std::ptrdiff_t>(n));
  return t;
}

std::string_view to_string(Rounding rounding) {
  switch (rounding) {
    case Rounding::HalfAwayFromZero: return "half-away-from-zero";
    case Rounding::HalfToEven: return "half-to-even";
    case Rounding::Floor: return "floor";
    case Rounding::Ceil: return "ceil";
  }
  return "?";
}

Rounding parse_rounding(std::string_view text) {
  if (text == "half-away-from-zero") return Rounding::HalfAwayFromZero;
  if (text == "half-to-even") return Rounding::HalfToEven;
  if (text == "floor") return Rounding::Floor;
  if (text == "ceil") return Rounding::Ceil;
  throw ConfigError(fmt::format("unknown rounding '{}'", text));
}

StoppingPolicy::StoppingPolicy(Kind kind, int max_epochs) : kind_(kind), max_epochs_(max_epochs) {
  if (max_epochs_ < 0) throw ConfigError("max_epochs must be >= 0");
  std::visit(
      [](const auto& k) {
        using T = std::decay_t<decltype(k)>;
        if constexpr (std::is_same_v<T, BestOfBudget>) {
          if (k.budget < 1) throw ConfigError("best-of-budget needs budget >= 1");
        } else if constexpr (std::is_same_v<T, Patience>) {
          if (k.window < 1 || k.min_epochs < k.window)
            throw ConfigError("patience needs min_epochs >= window >= 1");
        } else {
          if (k.epoch < 1) throw ConfigError("fixed-epoch needs epoch >= 1");
        }
      },
      kind_);
}

bool StoppingPolicy::should_stop(const TrainingTrace& trace) const {
  if (trace.empty()) return false;
  const int e = trace.last_epoch();
  if (max_epochs_ > 0 && e >= max_epochs_) return true;
  return std::visit(
      [&](const auto& k) {
        using T = std::decay_t<decltype(k)>;
        if constexpr (std::is_same_v<T, BestOfBudget>) return e >= k.budget;
        else if constexpr (std::is_same_v<T, Patience>)
          return patience_budget(trace, k.min_epochs, k.window) == StopDecision::Stop;
        else return e >= k.epoch;
      },
      kind_);
}

std::string StoppingPolicy::describe() const {
  std::string s = std::visit(
      [](const auto& k) -> std::string {
        using T = std::decay_t<decltype(k)>;
        if constexpr (std::is_same_v<T, BestOfBudget>) return fmt::format("best-of-budget({})", k.budget);
        else if constexpr (std::is_same_v<T, Patience>)
          return fmt::format("patience(min_epochs={}, window={})", k.min_epochs, k.window);
        else return fmt::format("fixed-epoch({})", k.epoch);
      },
      kind_);
  if (max_epochs_ > 0) s += fmt::format(" capped at {}", max_epochs_);
  return s;
}

int select_best_epoch(const TrainingTrace& trace) {
  if (trace.empty()) throw ConfigError("select_best_epoch on an empty trace");
  const auto records = trace.records();
  std::size_t best = 0;
  for (std::size_t i = 1; i < records.size(); ++i)
    if (records[i].dev_accuracy > records[best].dev_accuracy) best = i;
  return records[best].epoch;
}

std::vector<int> improvement_epochs(const TrainingTrace& trace) {
  std::vector<int> out;
  const auto records = trace.records();
  if (records.empty()) return out;
  double best = records.front().dev_accuracy;
  for (std::size_t i = 1; i < records.size(); ++i) {
    if (records[i].dev_accuracy > best) {
      best = records[i].dev_accuracy;
      out.push_back(records[i].epoch);
    }
  }
  return out;
}

StopDecision patience_budget(const TrainingTrace& trace, int min_epochs, int window) {
  const int e = trace.last_epoch();
  if (e < min_epochs) return StopDecision::Continue;
  const auto improvements = improvement_epochs(trace);
  if (!improvements.empty() && improvements.back() > e - window) return StopDecision::Continue;
  return StopDecision::Stop;
}

double mean_epoch(std::span<const int> best_epochs) {
  if (best_epochs.empty()) throw ConfigError("mean of an empty epoch list");
  const double sum = std::accumulate(best_epochs.begin(), best_epochs.end(), 0.0);
  return sum / static_cast<double>(best_epochs.size());
}

int round_epoch(double mean, Rounding rounding) {
  double r = 0.0;
  switch (rounding) {
    case Rounding::HalfAwayFromZero: r = std::round(mean); break;
    case Rounding::HalfToEven: r = std::nearbyint(mean); break;  // default FE_TONEAREST
    case Rounding::Floor: r = std::floor(mean); break;
    case Rounding::Ceil: r = std::ceil(mean); break;
  }
  return std::max(1, static_cast<int>(r));
}

int devlang_epoch(std::span<const int> best_epochs, Rounding rounding) {
  return round_epoch(mean_epoch(best_epochs), rounding);
}

std::vector<int> loo_best_epochs(const std::map<std::string, int>& best_by_language, const std::string& target) {
  if (best_by_language.empty()) throw ConfigError("no development-language epochs");
  std::vector<int> out;
  for (const auto& [language, epoch] : best_by_language)
    if (language != target) out.push_back(epoch);
  if (out.empty())
    throw ConfigError(fmt::format("leaving out '{}' leaves no development languages", target));
  return out;
}

}  // namespace devlang
