#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <functional>
#include <set>

#include "devlang/data.hpp"
#include "devlang/errors.hpp"

using namespace devlang;
namespace fs = std::filesystem;

namespace {

class TempDir {
 public:
  TempDir() : path_(fs::temp_directory_path() / ("devlang_data_" + std::to_string(counter_++))) {
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  fs::path write(const std::string& name, const std::string& text) const {
    std::ofstream(path_ / name, std::ios::binary) << text;
    return path_ / name;
  }
  const fs::path& path() const { return path_; }

 private:
  static inline int counter_ = 0;
  fs::path path_;
};

Symbols chars(const std::string& s) { return split_characters(s); }

std::string error_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const DataError& e) {
    return e.what();
  }
  return {};
}

}  // namespace

TEST_CASE("split_characters handles UTF-8") {
  CHECK(split_characters("vnd") == Symbols{"v", "n", "d"});
  CHECK(split_characters("ßüe") == Symbols{"ß", "ü", "e"});
  CHECK(split_characters("").empty());
  CHECK(join_symbols(split_characters("ſchön")) == "ſchön");
  // A stray continuation byte survives as its own symbol.
  CHECK(split_characters("a\x80") == Symbols{"a", "\x80"});
}

TEST_CASE("load_norm") {
  TempDir dir;
  const auto ds = load_norm(dir.write("n.tsv", "vnd\tund\n\nyhr\tihr\r\nwz\twas\n"));
  REQUIRE(ds.size() == 3);
  CHECK(ds[0].source == chars("vnd"));
  CHECK(ds[0].targets == std::vector<Symbols>{chars("und")});
  CHECK(ds[1].targets.front() == chars("ihr"));
  CHECK(ds[0].id.find(":1") != std::string::npos);

  CHECK(error_of([&] { load_norm(dir.write("empty.tsv", "")); }).find("empty") != std::string::npos);
  const auto msg = error_of([&] { load_norm(dir.write("bad.tsv", "ab\tcd\nno tab here\n")); });
  CHECK(msg.find("bad.tsv:2") != std::string::npos);
  CHECK(error_of([&] { load_norm(dir.path() / "missing.tsv"); }).find("missing.tsv") != std::string::npos);
}

TEST_CASE("load_sigmorphon") {
  TempDir dir;
  const auto ds = load_sigmorphon(dir.write("m.tsv", "run\tran\tV;PST\nrun\tran\tV;PST\ncat\tcats\tN\n"));
  REQUIRE(ds.size() == 3);  // duplicates kept
  CHECK(ds[0].source == chars("run"));
  CHECK(ds[0].targets.front() == chars("ran"));
  CHECK(ds[0].features == Symbols{"V", "PST"});
  CHECK(ds[2].features == Symbols{"N"});
  const auto msg = error_of([&] { load_sigmorphon(dir.write("bad.tsv", "run\tran\tV\nwalk\twalked\n")); });
  CHECK(msg.find("bad.tsv:2") != std::string::npos);
}

TEST_CASE("load_translit merges consecutive sources") {
  TempDir dir;
  const auto ds = load_translit(dir.write("t.tsv", "X\tA\nX\tB\nY\tC\n"));
  REQUIRE(ds.size() == 2);
  CHECK(ds[0].targets == std::vector<Symbols>{chars("A"), chars("B")});
  CHECK(ds[1].targets.size() == 1);
  CHECK(matches_any_reference(ds[0], chars("B")));
  CHECK(matches_any_reference(ds[0], chars("A")));
  CHECK_FALSE(matches_any_reference(ds[0], chars("C")));
  CHECK(error_of([&] { load_translit(dir.write("bad.tsv", "X\tA\n\tB\n")); }).find("bad.tsv:2") != std::string::npos);
}

TEST_CASE("task kinds") {
  for (auto t : {TaskKind::Norm, TaskKind::Morph, TaskKind::Transl, TaskKind::Synthetic})
    CHECK(parse_task_kind(to_string(t)) == t);
  CHECK_THROWS_AS(parse_task_kind("pos"), ConfigError);
}

TEST_CASE("vocabulary") {
  std::vector<TransductionExample> xs(2);
  xs[0].source = chars("ab");
  xs[0].targets = {chars("x")};
  xs[1].source = chars("ba");
  xs[1].targets = {chars("y")};
  xs[1].features = {"V"};
  const auto v = build_vocab(xs, VocabSide::Source);
  CHECK(v.size() == 6);
  CHECK(v.index("a") == 4);
  CHECK(v.index("b") == 5);
  CHECK(v.symbol(Vocabulary::kPad) == "<pad>");
  CHECK(v.index("z") == Vocabulary::kUnk);
  CHECK(v.decode(v.encode(chars("ab"))) == chars("ab"));
  CHECK_THROWS_AS(v.symbol(99), DataError);

  const auto both = build_vocab(xs, VocabSide::Both);
  CHECK(both.size() == 8);
  CHECK(both.index("x") == 6);
  const auto feats = build_vocab(xs, VocabSide::Features);
  CHECK(feats.size() == 5);
  CHECK_FALSE(feats.contains("a"));
  CHECK(both.hash() != v.hash());
  CHECK(both.hash() == build_vocab(xs, VocabSide::Both).hash());
}

TEST_CASE("dataset manifest resolves relative paths") {
  TempDir dir;
  dir.write("a.train", "ab\tba\tV\n");
  dir.write("a.dev", "ab\tba\tV\n");
  dir.write("a.test", "ab\tba\tV\n");
  const auto path = dir.write("datasets.json", R"({"lang-a": {"train": "a.train", "dev": "a.dev", "test": "a.test"}})");
  const auto m = load_dataset_manifest(path);
  REQUIRE(m.contains("lang-a"));
  CHECK(m.at("lang-a").train == dir.path() / "a.train");
  const auto split = load_split(TaskKind::Morph, "lang-a", m.at("lang-a"));
  CHECK(split.train.size() == 1);
  CHECK(split.language == "lang-a");

  const auto bad = dir.write("bad.json", R"({"x": {"train": "a.train"}})");
  CHECK_THROWS_AS(load_dataset_manifest(bad), DataError);
}

TEST_CASE("synthetic tasks are deterministic and distinct") {
  SynthOptions o;
  o.seed = 3;
  o.language_count = 4;
  o.train_size = 30;
  o.dev_size = 10;
  o.test_size = 10;
  const auto a = synth_task(o);
  const auto b = synth_task(o);
  REQUIRE(a.size() == 4);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].language == synth_language_name(static_cast<int>(i)));
    CHECK(a[i].train.size() == 30);
    CHECK(a[i].dev.size() == 10);
    CHECK(a[i].test.size() == 10);
    for (std::size_t k = 0; k < a[i].train.size(); ++k) {
      CHECK(a[i].train[k].source == b[i].train[k].source);
      CHECK(a[i].train[k].targets == b[i].train[k].targets);
    }
    // No source is reused across splits.
    std::set<Symbols> seen;
    for (const auto* split : {&a[i].train, &a[i].dev, &a[i].test})
      for (const auto& ex : *split) CHECK(seen.insert(ex.source).second);
  }
  for (int i = 0; i < 4; ++i)
    for (int j = i + 1; j < 4; ++j) CHECK_FALSE(synth_rules(3, i, 3) == synth_rules(3, j, 3));

  o.seed = 4;
  CHECK(synth_task(o)[0].train[0].source != a[0].train[0].source);
}

TEST_CASE("synthetic rules rewrite and tag") {
  const auto rules = synth_rules(1, 0, 3);
  CHECK(rules.alphabet.size() >= 8);
  Symbols features;
  const Symbols src = {rules.alphabet[0], rules.alphabet[1], rules.alphabet[2]};
  const auto out = apply_synth_rules(rules, src, &features);
  CHECK_FALSE(out.empty());
  CHECK(features.size() == 2);
  CHECK(apply_synth_rules(rules, src, nullptr) == out);
}

TEST_CASE("synthetic datasets round-trip through disk") {
  TempDir dir;
  SynthOptions o;
  o.language_count = 2;
  o.train_size = 12;
  o.dev_size = 5;
  o.test_size = 5;
  const auto data = synth_task(o);
  const auto manifest = write_synthetic_datasets(data, dir.path());
  const auto m = load_dataset_manifest(manifest);
  REQUIRE(m.size() == 2);
  const auto back = load_split(TaskKind::Synthetic, data[1].language, m.at(data[1].language));
  REQUIRE(back.train.size() == data[1].train.size());
  for (std::size_t k = 0; k < back.train.size(); ++k) {
    CHECK(back.train[k].source == data[1].train[k].source);
    CHECK(back.train[k].targets == data[1].train[k].targets);
    CHECK(back.train[k].features == data[1].train[k].features);
  }
}
