#include "devlang/report.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include <fmt/format.h>
#include <json.hpp>

#include "devlang/errors.hpp"

namespace devlang {

OutcomeCounts count_outcomes(std::span<const LanguageResult> results) {
  OutcomeCounts c;
  for (const auto& r : results) {
    if (r.devlang_accuracy > r.devset_accuracy) ++c.devlang_better;
    else if (r.devlang_accuracy == r.devset_accuracy) ++c.equal;
    else ++c.devlang_worse;
  }
  return c;
}

SummaryTable summarize(std::span<const LanguageResult> results) {
  if (results.empty()) throw DataError("cannot summarize zero languages");
  // Canonical order makes every floating-point sum independent of input order.
  std::vector<LanguageResult> sorted(results.begin(), results.end());
  std::sort(sorted.begin(), sorted.end(), [](const LanguageResult& a, const LanguageResult& b) {
    return std::tie(a.language, a.devset_accuracy, a.devlang_accuracy, a.devset_epoch, a.devlang_epoch) <
           std::tie(b.language, b.devset_accuracy, b.devlang_accuracy, b.devset_epoch, b.devlang_epoch);
  });

  SummaryTable s;
  s.counts = count_outcomes(sorted);
  s.languages = sorted.size();
  double devset = 0.0, devlang = 0.0;
  double largest = -1.0;
  for (const auto& r : sorted) {
    devset += r.devset_accuracy;
    devlang += r.devlang_accuracy;
    const double delta = r.devlang_accuracy - r.devset_accuracy;
    if (std::abs(delta) > largest) {
      largest = std::abs(delta);
      s.max_delta = delta;
      s.max_delta_language = r.language;
    }
  }
  const auto n = static_cast<double>(sorted.size());
  s.mean_devset = devset / n;
  s.mean_devlang = devlang / n;
  s.mean_delta = s.mean_devlang - s.mean_devset;
  return s;
}

std::vector<ScatterPoint> scatter_points(std::span<const LanguageResult> results) {
  std::vector<ScatterPoint> out;
  out.reserve(results.size());
  for (const auto& r : results)
    out.push_back({r.language, r.devlang_epoch - r.devset_epoch, r.devlang_accuracy - r.devset_accuracy});
  return out;
}

namespace {

double parse_number(const std::string& field, const std::filesystem::path& path, std::size_t row,
                    std::string_view column) {
  double v = 0.0;
  const char* end = field.data() + field.size();
  auto [ptr, ec] = std::from_chars(field.data(), end, v);
  if (ec != std::errc() || ptr != end || !std::isfinite(v))
    throw DataError(fmt::format("{}: row {}: bad {} value '{}'", path.string(), row, column, field));
  return v;
}

}  // namespace

std::vector<LanguageResult> ingest_fixture(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError(fmt::format("cannot open fixture '{}'", path.string()));
  std::vector<LanguageResult> out;
  std::string line;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    ++row;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    if (row == 1 && line == kResultCsvHeader) continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    for (std::string f; std::getline(ss, f, ',');) fields.push_back(f);
    if (fields.size() != 5 || fields[0].empty())
      throw DataError(fmt::format("{}: row {}: expected 5 comma-separated fields", path.string(), row));
    LanguageResult r;
    r.language = fields[0];
    r.devset_accuracy = parse_number(fields[1], path, row, "devset_acc");
    r.devset_epoch = parse_number(fields[2], path, row, "devset_epoch");
    r.devlang_accuracy = parse_number(fields[3], path, row, "devlang_acc");
    r.devlang_epoch = parse_number(fields[4], path, row, "devlang_epoch");
    if (r.devset_accuracy < 0 || r.devlang_accuracy < 0)
      throw DataError(fmt::format("{}: row {}: negative accuracy", path.string(), row));
    out.push_back(std::move(r));
  }
  if (out.empty()) throw DataError(fmt::format("fixture '{}' has no rows", path.string()));
  const bool percent = std::any_of(out.begin(), out.end(), [](const LanguageResult& r) {
    return r.devset_accuracy > 1.0 || r.devlang_accuracy > 1.0;
  });
  if (percent) {
    for (auto& r : out) {
      r.devset_accuracy /= 100.0;
      r.devlang_accuracy /= 100.0;
    }
  }
  for (const auto& r : out)
    if (r.devset_accuracy > 1.0 || r.devlang_accuracy > 1.0)
      throw DataError(fmt::format("{}: accuracy above 100% for '{}'", path.string(), r.language));
  return out;
}

std::string format_percent(double fraction) { return fmt::format("{:.1f}", 100.0 * fraction); }

std::string format_signed_percent(double fraction) {
  const std::string s = fmt::format("{:+.1f}", 100.0 * fraction);
  return (s == "+0.0" || s == "-0.0") ? "0.0" : s;
}

namespace {

std::string render_csv(std::span<const LanguageResult> results) {
  std::string out = std::string(kResultCsvHeader) + "\n";
  for (const auto& r : results)
    out += fmt::format("{},{},{},{},{}\n", r.language, r.devset_accuracy, r.devset_epoch, r.devlang_accuracy,
                       r.devlang_epoch);
  return out;
}

std::string render_json(const SummaryTable& s, std::span<const LanguageResult> results) {
  nlohmann::ordered_json doc;
  doc["summary"] = {
      {"languages", s.languages},
      {"counts",
       {{"devlang_better", s.counts.devlang_better},
        {"equal", s.counts.equal},
        {"devlang_worse", s.counts.devlang_worse}}},
      {"mean_devset", s.mean_devset},
      {"mean_devlang", s.mean_devlang},
      {"mean_delta", s.mean_delta},
      {"max_delta", s.max_delta},
      {"max_delta_language", s.max_delta_language},
  };
  auto rows = nlohmann::ordered_json::array();
  for (const auto& r : results)
    rows.push_back({{"language", r.language},
                    {"devset_acc", r.devset_accuracy},
                    {"devset_epoch", r.devset_epoch},
                    {"devlang_acc", r.devlang_accuracy},
                    {"devlang_epoch", r.devlang_epoch}});
  doc["languages"] = rows;
  return doc.dump(2) + "\n";
}

std::string render_markdown(const SummaryTable& s, std::span<const LanguageResult> results) {
  std::string out = "| | value |\n|---|---|\n";
  out += fmt::format("| DevLang>DevSet | {} |\n", s.counts.devlang_better);
  out += fmt::format("| DevLang=DevSet | {} |\n", s.counts.equal);
  out += fmt::format("| DevLang<DevSet | {} |\n", s.counts.devlang_worse);
  out += fmt::format("| DevSet | {} |\n", format_percent(s.mean_devset));
  out += fmt::format("| DevLang | {} |\n", format_percent(s.mean_devlang));
  out += fmt::format("| Δ | {} |\n", format_signed_percent(s.mean_delta));
  out += fmt::format("| max Δ | {} ({}) |\n", format_signed_percent(s.max_delta), s.max_delta_language);
  out += "\n| Language | DevSet | DevLang |\n|---|---|---|\n";
  for (const auto& r : results)
    out += fmt::format("| {} | {} ({}) | {} ({}) |\n", r.language, format_percent(r.devset_accuracy),
                       r.devset_epoch, format_percent(r.devlang_accuracy), r.devlang_epoch);
  return out;
}

void write_file(const std::filesystem::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError(fmt::format("cannot write '{}'", path.string()));
  out << content;
  if (!out) throw IoError(fmt::format("failed writing '{}'", path.string()));
}

}  // namespace

std::string render(const SummaryTable& summary, std::span<const LanguageResult> results, ReportFormat format) {
  switch (format) {
    case ReportFormat::Csv: return render_csv(results);
    case ReportFormat::Json: return render_json(summary, results);
    case ReportFormat::Markdown: return render_markdown(summary, results);
  }
  return {};
}

std::string render_scatter(std::span<const LanguageResult> results) {
  std::string out = "language,epoch_delta,accuracy_delta\n";
  for (const auto& p : scatter_points(results)) out += fmt::format("{},{},{}\n", p.language, p.epoch_delta, p.accuracy_delta);
  return out;
}

std::vector<std::filesystem::path> write_report(const std::filesystem::path& dir, const SummaryTable& summary,
                                                std::span<const LanguageResult> results) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError(fmt::format("cannot create '{}': {}", dir.string(), ec.message()));
  std::vector<std::filesystem::path> paths = {dir / "report.csv", dir / "report.json", dir / "report.md",
                                              dir / "scatter.csv"};
  write_file(paths[0], render(summary, results, ReportFormat::Csv));
  write_file(paths[1], render(summary, results, ReportFormat::Json));
  write_file(paths[2], render(summary, results, ReportFormat::Markdown));
  write_file(paths[3], render_scatter(results));
  return paths;
}

std::string render_summary_columns(std::span<const std::pair<std::string, SummaryTable>> columns) {
  const std::vector<std::string> labels = {"DevLang>DevSet", "DevLang=DevSet", "DevLang<DevSet", "DevSet",
                                           "DevLang",        "Δ",              "max Δ"};
  std::vector<std::vector<std::string>> cells(labels.size());
  for (const auto& [name, s] : columns) {
    cells[0].push_back(std::to_string(s.counts.devlang_better));
    cells[1].push_back(std::to_string(s.counts.equal));
    cells[2].push_back(std::to_string(s.counts.devlang_worse));
    cells[3].push_back(format_percent(s.mean_devset));
    cells[4].push_back(format_percent(s.mean_devlang));
    cells[5].push_back(format_signed_percent(s.mean_delta));
    cells[6].push_back(format_signed_percent(s.max_delta));
  }
  std::string out = fmt::format("{:<16}", "");
  for (const auto& [name, s] : columns) out += fmt::format("{:>10}", name);
  out += "\n";
  for (std::size_t i = 0; i < labels.size(); ++i) {
    out += fmt::format("{:<16}", labels[i]);
    for (const auto& c : cells[i]) out += fmt::format("{:>10}", c);
    out += "\n";
  }
  return out;
}

}  // namespace devlang
