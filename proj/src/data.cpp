#include "devlang/data.hpp"

#include <algorithm>
#include <fstream>
#include <set>

#include <fmt/format.h>
#include <json.hpp>

#include "devlang/errors.hpp"
#include "devlang/rng.hpp"

namespace devlang {

Symbols split_characters(std::string_view text) {
  Symbols out;
  std::size_t i = 0;
  while (i < text.size()) {
    const auto lead = static_cast<unsigned char>(text[i]);
    std::size_t len = 1;
    if (lead >= 0xf0 && lead < 0xf8) len = 4;
    else if (lead >= 0xe0) len = 3;
    else if (lead >= 0xc0) len = 2;
    if (len > 1) {
      bool ok = i + len <= text.size();
      for (std::size_t k = 1; ok && k < len; ++k)
        ok = (static_cast<unsigned char>(text[i + k]) & 0xc0) == 0x80;
      if (!ok) len = 1;
    }
    out.emplace_back(text.substr(i, len));
    i += len;
  }
  return out;
}

std::string join_symbols(std::span<const std::string> symbols) {
  std::string s;
  for (const auto& sym : symbols) s += sym;
  return s;
}

bool matches_any_reference(const TransductionExample& example, std::span<const std::string> prediction) {
  return std::any_of(example.targets.begin(), example.targets.end(), [&](const Symbols& ref) {
    return std::equal(ref.begin(), ref.end(), prediction.begin(), prediction.end());
  });
}

std::string_view to_string(TaskKind task) {
  switch (task) {
    case TaskKind::Norm: return "norm";
    case TaskKind::Morph: return "morph";
    case TaskKind::Transl: return "transl";
    case TaskKind::Synthetic: return "synthetic";
  }
  return "?";
}

TaskKind parse_task_kind(std::string_view text) {
  if (text == "norm") return TaskKind::Norm;
  if (text == "morph") return TaskKind::Morph;
  if (text == "transl") return TaskKind::Transl;
  if (text == "synthetic") return TaskKind::Synthetic;
  throw ConfigError(fmt::format("unknown task '{}' (expected norm, morph, transl or synthetic)", text));
}

// ---- loaders --------------------------------------------------------------

namespace {

std::vector<std::string> split_fields(std::string_view line, char sep) {
  std::vector<std::string> fields;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(sep, start);
    fields.emplace_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return fields;
}

struct Line {
  std::size_t number;
  std::vector<std::string> fields;
};

// Reads non-blank lines as tab-separated fields; strips a trailing CR.
std::vector<Line> read_tsv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError(fmt::format("cannot open dataset file '{}'", path.string()));
  std::vector<Line> lines;
  std::string raw;
  std::size_t number = 0;
  while (std::getline(in, raw)) {
    ++number;
    if (!raw.empty() && raw.back() == '\r') raw.pop_back();
    if (raw.find_first_not_of(" \t") == std::string::npos) continue;
    lines.push_back({number, split_fields(raw, '\t')});
  }
  if (lines.empty()) throw DataError(fmt::format("dataset file '{}' is empty", path.string()));
  return lines;
}

[[noreturn]] void malformed(const std::filesystem::path& path, std::size_t line, std::string_view why) {
  throw DataError(fmt::format("{}:{}: {}", path.string(), line, why));
}

std::string example_id(const std::filesystem::path& path, std::size_t line) {
  return fmt::format("{}:{}", path.filename().string(), line);
}

std::vector<TransductionExample> load_pairs(const std::filesystem::path& path) {
  std::vector<TransductionExample> out;
  for (const auto& line : read_tsv(path)) {
    if (line.fields.size() != 2) malformed(path, line.number, "expected 2 tab-separated fields");
    if (line.fields[0].empty() || line.fields[1].empty()) malformed(path, line.number, "empty field");
    TransductionExample ex;
    ex.id = example_id(path, line.number);
    ex.source = split_characters(line.fields[0]);
    ex.targets.push_back(split_characters(line.fields[1]));
    out.push_back(std::move(ex));
  }
  return out;
}

}  // namespace

std::vector<TransductionExample> load_norm(const std::filesystem::path& path) { return load_pairs(path); }

std::vector<TransductionExample> load_sigmorphon(const std::filesystem::path& path) {
  std::vector<TransductionExample> out;
  for (const auto& line : read_tsv(path)) {
    if (line.fields.size() != 3) malformed(path, line.number, "expected lemma, form and feature bundle");
    for (const auto& f : line.fields)
      if (f.empty()) malformed(path, line.number, "missing field");
    TransductionExample ex;
    ex.id = example_id(path, line.number);
    ex.source = split_characters(line.fields[0]);
    ex.targets.push_back(split_characters(line.fields[1]));
    for (auto& tag : split_fields(line.fields[2], ';')) {
      if (tag.empty()) malformed(path, line.number, "empty feature tag");
      ex.features.push_back(std::move(tag));
    }
    out.push_back(std::move(ex));
  }
  return out;
}

std::vector<TransductionExample> load_translit(const std::filesystem::path& path) {
  std::vector<TransductionExample> out;
  std::string previous_source;
  for (const auto& line : read_tsv(path)) {
    if (line.fields.size() != 2) malformed(path, line.number, "expected 2 tab-separated fields");
    if (line.fields[0].empty() || line.fields[1].empty()) malformed(path, line.number, "empty field");
    if (!out.empty() && line.fields[0] == previous_source) {
      out.back().targets.push_back(split_characters(line.fields[1]));
      continue;
    }
    TransductionExample ex;
    ex.id = example_id(path, line.number);
    ex.source = split_characters(line.fields[0]);
    ex.targets.push_back(split_characters(line.fields[1]));
    previous_source = line.fields[0];
    out.push_back(std::move(ex));
  }
  return out;
}

std::vector<TransductionExample> load_examples(TaskKind task, const std::filesystem::path& path) {
  switch (task) {
    case TaskKind::Norm: return load_norm(path);
    case TaskKind::Transl: return load_translit(path);
    case TaskKind::Morph:
    case TaskKind::Synthetic: return load_sigmorphon(path);
  }
  throw ConfigError("unhandled task kind");
}

std::map<std::string, SplitPaths> load_dataset_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError(fmt::format("cannot open dataset manifest '{}'", path.string()));
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(fmt::format("{}: {}", path.string(), e.what()));
  }
  if (!doc.is_object()) throw DataError(fmt::format("{}: expected a JSON object", path.string()));
  const auto base = path.parent_path();
  std::map<std::string, SplitPaths> out;
  for (const auto& [language, entry] : doc.items()) {
    SplitPaths p;
    for (auto [key, target] : {std::pair{"train", &p.train}, {"dev", &p.dev}, {"test", &p.test}}) {
      if (!entry.contains(key) || !entry[key].is_string())
        throw DataError(fmt::format("{}: language '{}' lacks a '{}' path", path.string(), language, key));
      std::filesystem::path split = entry[key].get<std::string>();
      *target = split.is_absolute() ? split : base / split;
    }
    out.emplace(language, std::move(p));
  }
  return out;
}

void write_dataset_manifest(const std::filesystem::path& path, const std::map<std::string, SplitPaths>& entries) {
  nlohmann::json doc = nlohmann::json::object();
  for (const auto& [language, p] : entries)
    doc[language] = {{"train", p.train.generic_string()}, {"dev", p.dev.generic_string()}, {"test", p.test.generic_string()}};
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError(fmt::format("cannot write '{}'", path.string()));
  out << doc.dump(2) << '\n';
}

SplitDataset load_split(TaskKind task, const std::string& language, const SplitPaths& paths) {
  SplitDataset d;
  d.language = language;
  d.task = std::string(to_string(task));
  d.train = load_examples(task, paths.train);
  d.dev = load_examples(task, paths.dev);
  d.test = load_examples(task, paths.test);
  return d;
}

// ---- vocabulary -----------------------------------------------------------

Vocabulary::Vocabulary() : symbols_{"<pad>", "<s>", "</s>", "<unk>"} {
  for (int i = 0; i < kReserved; ++i) index_.emplace(symbols_[i], i);
}

Vocabulary::Vocabulary(std::span<const std::string> symbols) : Vocabulary() {
  for (const auto& s : symbols) {
    if (index_.contains(s)) continue;
    index_.emplace(s, static_cast<int>(symbols_.size()));
    symbols_.push_back(s);
  }
}

int Vocabulary::index(std::string_view symbol) const {
  auto it = index_.find(std::string(symbol));
  return it == index_.end() ? kUnk : it->second;
}

bool Vocabulary::contains(std::string_view symbol) const { return index_.contains(std::string(symbol)); }

const std::string& Vocabulary::symbol(int index) const {
  if (index < 0 || index >= size()) throw DataError(fmt::format("symbol index {} out of range", index));
  return symbols_[static_cast<std::size_t>(index)];
}

std::vector<int> Vocabulary::encode(std::span<const std::string> symbols) const {
  std::vector<int> out;
  out.reserve(symbols.size());
  for (const auto& s : symbols) out.push_back(index(s));
  return out;
}

Symbols Vocabulary::decode(std::span<const int> indices) const {
  Symbols out;
  out.reserve(indices.size());
  for (int i : indices) out.push_back(symbol(i));
  return out;
}

std::uint64_t Vocabulary::hash() const {
  std::uint64_t h = fnv1a64("");
  for (const auto& s : symbols_) {
    h = fnv1a64(s, h);
    h = fnv1a64(std::string_view("\0", 1), h);
  }
  return h;
}

Vocabulary build_vocab(std::span<const TransductionExample> examples, VocabSide side) {
  std::set<std::string> seen;
  for (const auto& ex : examples) {
    if (side == VocabSide::Source || side == VocabSide::Both) seen.insert(ex.source.begin(), ex.source.end());
    if (side == VocabSide::Target || side == VocabSide::Both)
      for (const auto& t : ex.targets) seen.insert(t.begin(), t.end());
    if (side == VocabSide::Features) seen.insert(ex.features.begin(), ex.features.end());
  }
  const std::vector<std::string> sorted(seen.begin(), seen.end());
  return Vocabulary(sorted);
}

// ---- synthetic tasks ------------------------------------------------------

namespace {

std::string letter(std::uint64_t i) { return std::string(1, static_cast<char>('a' + i)); }

std::uint64_t language_seed(std::uint64_t seed, int language_index, std::uint64_t salt) {
  return splitmix64(splitmix64(seed) ^ (static_cast<std::uint64_t>(language_index) + 1) * 0x9e3779b97f4a7c15ULL ^ salt);
}

}  // namespace

std::string synth_language_name(int index) { return fmt::format("synth-{:02d}", index); }

SynthRules synth_rules(std::uint64_t seed, int language_index, int rule_complexity) {
  Rng rng(language_seed(seed, language_index, 0x52554c4553ULL));
  SynthRules r;
  std::vector<std::string> letters;
  for (int i = 0; i < 26; ++i) letters.push_back(letter(static_cast<std::uint64_t>(i)));
  rng.shuffle(std::span(letters));
  const std::size_t alphabet_size = 8 + rng.below(5);
  r.alphabet.assign(letters.begin(), letters.begin() + static_cast<std::ptrdiff_t>(alphabet_size));
  std::sort(r.alphabet.begin(), r.alphabet.end());

  const auto rules = static_cast<std::size_t>(std::clamp(rule_complexity, 0, static_cast<int>(alphabet_size) / 2));
  std::vector<std::string> order = r.alphabet;
  rng.shuffle(std::span(order));
  for (std::size_t k = 0; k < rules; ++k) {
    std::string to = r.alphabet[rng.below(alphabet_size)];
    while (to == order[k]) to = r.alphabet[rng.below(alphabet_size)];
    r.substitutions.emplace(order[k], to);
  }
  rng.shuffle(std::span(order));
  for (std::size_t k = 0; k < rules; ++k) {
    std::string suffix;
    const std::size_t len = 1 + rng.below(2);
    for (std::size_t i = 0; i < len; ++i) suffix += r.alphabet[rng.below(alphabet_size)];
    r.suffix_class.emplace(order[k], static_cast<int>(k));
    r.suffixes.push_back(std::move(suffix));
  }
  return r;
}

Symbols apply_synth_rules(const SynthRules& rules, std::span<const std::string> source, Symbols* features) {
  Symbols out;
  for (const auto& c : source) {
    auto it = rules.substitutions.find(c);
    out.push_back(it == rules.substitutions.end() ? c : it->second);
  }
  int suffix = -1;
  if (!source.empty()) {
    auto it = rules.suffix_class.find(source.back());
    if (it != rules.suffix_class.end()) suffix = it->second;
  }
  if (suffix >= 0) {
    for (auto& s : split_characters(rules.suffixes[static_cast<std::size_t>(suffix)])) out.push_back(std::move(s));
  }
  if (features) *features = {"V", fmt::format("K{}", suffix + 1)};
  return out;
}

std::vector<SplitDataset> synth_task(const SynthOptions& o) {
  if (o.train_size < 1 || o.dev_size < 1 || o.test_size < 1)
    throw ConfigError("synthetic split sizes must be >= 1");
  if (o.language_count < 2) throw ConfigError("synthetic task needs at least 2 languages");

  std::vector<SplitDataset> out;
  std::vector<SynthRules> systems;
  for (int lang = 0; lang < o.language_count; ++lang) {
    SynthRules rules = synth_rules(o.seed, lang, o.rule_complexity);
    for (std::uint64_t bump = 1; std::find(systems.begin(), systems.end(), rules) != systems.end(); ++bump)
      rules = synth_rules(o.seed ^ (bump << 40), lang, o.rule_complexity);
    systems.push_back(rules);

    Rng rng(language_seed(o.seed, lang, 0x5354524eULL));
    const auto total = static_cast<std::size_t>(o.train_size + o.dev_size + o.test_size);
    std::set<std::string> seen;
    std::vector<Symbols> sources;
    while (sources.size() < total) {
      Symbols s;
      const std::size_t len = 3 + rng.below(5);
      for (std::size_t i = 0; i < len; ++i) s.push_back(rules.alphabet[rng.below(rules.alphabet.size())]);
      if (seen.insert(join_symbols(s)).second) sources.push_back(std::move(s));
    }

    SplitDataset d;
    d.language = synth_language_name(lang);
    d.task = "synthetic";
    for (std::size_t i = 0; i < total; ++i) {
      TransductionExample ex;
      ex.source = sources[i];
      ex.targets.push_back(apply_synth_rules(rules, ex.source, &ex.features));
      auto& split = i < static_cast<std::size_t>(o.train_size) ? d.train
                    : i < static_cast<std::size_t>(o.train_size + o.dev_size) ? d.dev
                                                                             : d.test;
      ex.id = fmt::format("{}:{}", d.language, i);
      split.push_back(std::move(ex));
    }
    out.push_back(std::move(d));
  }
  return out;
}

std::filesystem::path write_synthetic_datasets(const std::vector<SplitDataset>& datasets,
                                               const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::map<std::string, SplitPaths> manifest;
  auto write_split = [&](const std::string& name, const std::vector<TransductionExample>& split) {
    std::ofstream out(dir / name, std::ios::trunc);
    if (!out) throw IoError(fmt::format("cannot write '{}'", (dir / name).string()));
    for (const auto& ex : split) {
      std::string tags;
      for (const auto& f : ex.features) tags += (tags.empty() ? "" : ";") + f;
      out << join_symbols(ex.source) << '\t' << join_symbols(ex.targets.front()) << '\t' << tags << '\n';
    }
    return std::filesystem::path(name);
  };
  for (const auto& d : datasets) {
    SplitPaths p;
    p.train = write_split(d.language + ".train.tsv", d.train);
    p.dev = write_split(d.language + ".dev.tsv", d.dev);
    p.test = write_split(d.language + ".test.tsv", d.test);
    manifest.emplace(d.language, p);
  }
  const auto manifest_path = dir / "datasets.json";
  write_dataset_manifest(manifest_path, manifest);
  return manifest_path;
}

}  // namespace devlang
