#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace devlang {

using Symbols = std::vector<std::string>;

// Splits UTF-8 text into code points. Invalid bytes pass through as
// single-byte symbols.
Symbols split_characters(std::string_view text);
std::string join_symbols(std::span<const std::string> symbols);

struct TransductionExample {
  std::string id;
  Symbols source;
  std::vector<Symbols> targets;  // at least one reference
  Symbols features;
};

// True when `prediction` equals any reference exactly.
bool matches_any_reference(const TransductionExample& example, std::span<const std::string> prediction);

enum class TaskKind { Norm, Morph, Transl, Synthetic };

std::string_view to_string(TaskKind task);
TaskKind parse_task_kind(std::string_view text);

struct SplitDataset {
  std::string language;
  std::string task;
  std::vector<TransductionExample> train;
  std::vector<TransductionExample> dev;
  std::vector<TransductionExample> test;
};

// One file per split. Blank lines are skipped; anything else malformed is a
// DataError naming the file and line.
std::vector<TransductionExample> load_norm(const std::filesystem::path& path);
std::vector<TransductionExample> load_sigmorphon(const std::filesystem::path& path);
std::vector<TransductionExample> load_translit(const std::filesystem::path& path);
std::vector<TransductionExample> load_examples(TaskKind task, const std::filesystem::path& path);

struct SplitPaths {
  std::filesystem::path train;
  std::filesystem::path dev;
  std::filesystem::path test;
};

// JSON object: {"<language>": {"train": p, "dev": p, "test": p}, ...}.
// Relative paths resolve against the manifest's directory.
std::map<std::string, SplitPaths> load_dataset_manifest(const std::filesystem::path& path);
void write_dataset_manifest(const std::filesystem::path& path, const std::map<std::string, SplitPaths>& entries);

SplitDataset load_split(TaskKind task, const std::string& language, const SplitPaths& paths);

class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kBos = 1;
  static constexpr int kEos = 2;
  static constexpr int kUnk = 3;
  static constexpr int kReserved = 4;

  Vocabulary();
  // Reserved symbols first, then `symbols` in the given order (duplicates ignored).
  explicit Vocabulary(std::span<const std::string> symbols);

  int size() const { return static_cast<int>(symbols_.size()); }
  int index(std::string_view symbol) const;  // kUnk when absent
  bool contains(std::string_view symbol) const;
  const std::string& symbol(int index) const;

  std::vector<int> encode(std::span<const std::string> symbols) const;
  Symbols decode(std::span<const int> indices) const;

  std::span<const std::string> symbols() const { return symbols_; }
  std::uint64_t hash() const;

 private:
  std::vector<std::string> symbols_;
  std::unordered_map<std::string, int> index_;
};

enum class VocabSide { Source, Target, Both, Features };

// Observed symbols of the given side, sorted bytewise after the reserved ones.
Vocabulary build_vocab(std::span<const TransductionExample> examples, VocabSide side);

struct SynthOptions {
  std::uint64_t seed = 1;
  int language_count = 4;
  int train_size = 100;
  int dev_size = 50;
  int test_size = 50;
  int rule_complexity = 3;
};

// Rule system of one synthetic language, exposed for inspection and tests.
struct SynthRules {
  std::vector<std::string> alphabet;
  std::map<std::string, std::string> substitutions;  // single character -> single character
  std::map<std::string, int> suffix_class;           // final character -> suffix rule index
  std::vector<std::string> suffixes;
  bool operator==(const SynthRules&) const = default;
};

SynthRules synth_rules(std::uint64_t seed, int language_index, int rule_complexity);
Symbols apply_synth_rules(const SynthRules& rules, std::span<const std::string> source, Symbols* features);

std::vector<SplitDataset> synth_task(const SynthOptions& options);
std::string synth_language_name(int index);

// Writes each synthetic language as three MORPH-format files plus a manifest.
std::filesystem::path write_synthetic_datasets(const std::vector<SplitDataset>& datasets,
                                               const std::filesystem::path& dir);

}  // namespace devlang
