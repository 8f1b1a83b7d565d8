#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace devlang {

// Epochs may be fractional when ingested from published per-language tables.
struct LanguageResult {
  std::string language;
  double devset_accuracy = 0.0;
  double devset_epoch = 0.0;
  double devlang_accuracy = 0.0;
  double devlang_epoch = 0.0;
};

struct OutcomeCounts {
  int devlang_better = 0;  // DevLang > DevSet
  int equal = 0;
  int devlang_worse = 0;  // DevLang < DevSet
  int total() const { return devlang_better + equal + devlang_worse; }
  bool operator==(const OutcomeCounts&) const = default;
};

struct SummaryTable {
  OutcomeCounts counts;
  double mean_devset = 0.0;
  double mean_devlang = 0.0;
  double mean_delta = 0.0;  // mean_devlang - mean_devset
  double max_delta = 0.0;   // signed DevLang - DevSet of largest magnitude
  std::string max_delta_language;
  std::size_t languages = 0;
};

struct ScatterPoint {
  std::string language;
  double epoch_delta = 0.0;     // DevLang - DevSet
  double accuracy_delta = 0.0;  // DevLang - DevSet
};

// Exact comparison of accuracies.
OutcomeCounts count_outcomes(std::span<const LanguageResult> results);
SummaryTable summarize(std::span<const LanguageResult> results);
std::vector<ScatterPoint> scatter_points(std::span<const LanguageResult> results);

inline constexpr const char* kResultCsvHeader = "language,devset_acc,devset_epoch,devlang_acc,devlang_epoch";

// Per-language CSV with the header above. When any accuracy exceeds 1 the
// whole file is read as percentages and divided by 100.
std::vector<LanguageResult> ingest_fixture(const std::filesystem::path& path);

enum class ReportFormat { Csv, Json, Markdown };

std::string render(const SummaryTable& summary, std::span<const LanguageResult> results, ReportFormat format);
std::string render_scatter(std::span<const LanguageResult> results);

// Writes report.csv, report.json, report.md and scatter.csv; returns their paths.
std::vector<std::filesystem::path> write_report(const std::filesystem::path& dir, const SummaryTable& summary,
                                                std::span<const LanguageResult> results);

// Display helpers: accuracy fractions as percentages with one decimal.
std::string format_percent(double fraction);
std::string format_signed_percent(double fraction);

// Console table with one column per task, rows labelled
// DevLang>DevSet, DevLang=DevSet, DevLang<DevSet, DevSet, DevLang, Δ, max Δ.
std::string render_summary_columns(std::span<const std::pair<std::string, SummaryTable>> columns);

}  // namespace devlang
