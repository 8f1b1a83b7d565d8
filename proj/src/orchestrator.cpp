#include "devlang/orchestrator.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <fstream>
#include <mutex>
#include <thread>

#include <fmt/format.h>
#include <json.hpp>
#include <openssl/evp.h>

#include "devlang/errors.hpp"
#include "devlang/rng.hpp"

namespace devlang {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

std::string_view to_string(CheckpointSlot slot) {
  return slot == CheckpointSlot::DevSet ? "devset" : "devlang";
}

void parallel_for(std::size_t count, int workers, const std::function<void(std::size_t)>& job) {
  const auto threads = std::min<std::size_t>(count, static_cast<std::size_t>(std::max(workers, 1)));
  if (threads <= 1) {
    for (std::size_t i = 0; i < count; ++i) job(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < threads; ++t) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < count; i = next++) {
        try {
          job(i);
        } catch (...) {
          std::lock_guard lock(failure_mutex);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (failure) std::rethrow_exception(failure);
}

namespace {

class SerialProgress {
 public:
  explicit SerialProgress(const ProgressFn& fn) : fn_(fn) {}
  void operator()(const std::string& message) const {
    if (!fn_) return;
    std::lock_guard lock(mutex_);
    fn_(message);
  }

 private:
  const ProgressFn& fn_;
  mutable std::mutex mutex_;
};

}  // namespace

PhaseOneResult run_phase_one(const ExperimentConfig& config, const RunFactory& factory, const ProgressFn& progress) {
  const auto& langs = config.dev_languages;
  if (langs.empty()) throw ConfigError("development-language subset is empty");
  std::vector<TrainingTrace> traces(langs.size());
  std::vector<std::string> errors(langs.size());
  SerialProgress report(progress);

  parallel_for(langs.size(), config.workers, [&](std::size_t i) {
    try {
      const auto seed = derive_run_seed(config.base_seed, Phase::SelectStoppingPoint, langs[i]);
      auto run = factory.start(langs[i], seed);
      TrainingTrace& trace = traces[i];
      for (int e = 1;; ++e) {
        const double loss = run->train_epoch(e);
        trace.append(run->dev_accuracy(), loss);
        if (config.policy.should_stop(trace)) break;
      }
      // The run (and any snapshot it holds) is discarded here.
      report(fmt::format("phase one: {} best epoch {} of {}", langs[i], select_best_epoch(trace), trace.size()));
    } catch (const std::exception& e) {
      errors[i] = e.what();
    }
  });

  for (std::size_t i = 0; i < langs.size(); ++i)
    if (!errors[i].empty())
      throw PhaseOneAborted(fmt::format("phase one failed for development language '{}': {}", langs[i], errors[i]));

  PhaseOneResult result;
  for (std::size_t i = 0; i < langs.size(); ++i) {
    result.best_epochs[langs[i]] = select_best_epoch(traces[i]);
    result.traces[langs[i]] = std::move(traces[i]);
  }
  return result;
}

std::map<std::string, TargetEpoch> compute_target_epochs(const PhaseOneResult& phase_one,
                                                         const ExperimentConfig& config) {
  std::map<std::string, TargetEpoch> out;
  for (const auto& language : config.languages) {
    TargetEpoch t;
    t.sources = loo_best_epochs(phase_one.best_epochs, language);
    t.mean = mean_epoch(t.sources);
    t.epoch = round_epoch(t.mean, config.rounding);
    out[language] = std::move(t);
  }
  return out;
}

RunRecord run_language(const RunFactory& factory, const std::string& language, std::uint64_t seed,
                       const StoppingPolicy& policy, const TargetEpoch& target, const fs::path& run_dir) {
  RunRecord r;
  r.language = language;
  r.seed = seed;
  r.devlang_epoch = target.epoch;
  r.devlang_mean = target.mean;

  auto run = factory.start(language, seed);
  double best = -1.0;
  for (int e = 1;; ++e) {
    const double loss = run->train_epoch(e);
    const double acc = run->dev_accuracy();
    r.trace.append(acc, loss);
    if (r.policy_stop == 0) {
      // Strict improvement keeps the earliest maximum.
      if (acc > best) {
        best = acc;
        r.devset_epoch = e;
        run->keep(CheckpointSlot::DevSet, e);
      }
      if (policy.should_stop(r.trace)) r.policy_stop = e;
    }
    if (e == target.epoch) run->keep(CheckpointSlot::DevLang, e);
    if (r.policy_stop != 0 && e >= target.epoch) break;
  }

  const bool has_target = target.epoch > 0;
  r.devset_test_accuracy = run->test_accuracy(CheckpointSlot::DevSet);
  if (has_target) r.devlang_test_accuracy = run->test_accuracy(CheckpointSlot::DevLang);
  if (!run_dir.empty()) {
    std::error_code ec;
    fs::create_directories(run_dir, ec);
    if (ec) throw IoError(fmt::format("cannot create '{}': {}", run_dir.string(), ec.message()));
    r.devset_checkpoint = run->save(CheckpointSlot::DevSet, run_dir);
    if (has_target) r.devlang_checkpoint = run->save(CheckpointSlot::DevLang, run_dir);
  }
  return r;
}

std::vector<RunRecord> run_phase_two(const ExperimentConfig& config, const RunFactory& factory,
                                     const std::map<std::string, TargetEpoch>& targets, const fs::path& runs_dir,
                                     const ProgressFn& progress) {
  const auto& langs = config.languages;
  std::vector<RunRecord> records(langs.size());
  SerialProgress report(progress);

  parallel_for(langs.size(), config.workers, [&](std::size_t i) {
    const auto& language = langs[i];
    const auto seed = derive_run_seed(config.base_seed, Phase::MainTraining, language);
    try {
      auto it = targets.find(language);
      if (it == targets.end()) throw ConfigError(fmt::format("no target epoch for '{}'", language));
      records[i] = run_language(factory, language, seed, config.policy, it->second,
                                runs_dir.empty() ? fs::path() : runs_dir / language);
      report(fmt::format("phase two: {} devset epoch {} ({:.4f}) devlang epoch {} ({:.4f})", language,
                         records[i].devset_epoch, records[i].devset_test_accuracy, records[i].devlang_epoch,
                         records[i].devlang_test_accuracy));
    } catch (const std::exception& e) {
      records[i] = RunRecord{};
      records[i].language = language;
      records[i].seed = seed;
      records[i].failed = true;
      records[i].error = e.what();
      report(fmt::format("phase two: {} failed: {}", language, e.what()));
    }
  });
  return records;
}

LanguageResult to_language_result(const RunRecord& record) {
  return {record.language, record.devset_test_accuracy, static_cast<double>(record.devset_epoch),
          record.devlang_test_accuracy, static_cast<double>(record.devlang_epoch)};
}

namespace {

json trace_json(const TrainingTrace& trace) {
  auto rows = json::array();
  for (const auto& r : trace.records())
    rows.push_back({{"epoch", r.epoch}, {"dev_accuracy", r.dev_accuracy}, {"train_loss", r.train_loss}});
  return rows;
}

json record_json(const RunRecord& r) {
  auto name = [](const std::optional<fs::path>& p) -> json {
    return p ? json(p->filename().generic_string()) : json(nullptr);
  };
  json j;
  j["language"] = r.language;
  j["seed"] = r.seed;
  j["failed"] = r.failed;
  if (r.failed) {
    j["error"] = r.error;
    return j;
  }
  j["policy_stop"] = r.policy_stop;
  j["devset_epoch"] = r.devset_epoch;
  j["devlang_epoch"] = r.devlang_epoch;
  j["devlang_mean"] = r.devlang_mean;
  j["devset_checkpoint"] = name(r.devset_checkpoint);
  j["devlang_checkpoint"] = name(r.devlang_checkpoint);
  j["devset_test_accuracy"] = r.devset_test_accuracy;
  j["devlang_test_accuracy"] = r.devlang_test_accuracy;
  j["trace"] = trace_json(r.trace);
  return j;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError(fmt::format("cannot write '{}'", path.string()));
  out << text;
  if (!out) throw IoError(fmt::format("failed writing '{}'", path.string()));
}

class ArtifactLog {
 public:
  explicit ArtifactLog(fs::path root) : root_(std::move(root)) {}

  void add(const fs::path& path) { files_.push_back(path); }

  void write_text(const fs::path& relative, const std::string& text) {
    std::error_code ec;
    fs::create_directories((root_ / relative).parent_path(), ec);
    devlang::write_text(root_ / relative, text);
    add(root_ / relative);
  }

  fs::path write_manifest(bool complete, const std::vector<std::string>& failed, const std::string& error) {
    std::vector<std::pair<std::string, fs::path>> entries;
    for (const auto& f : files_) entries.emplace_back(fs::relative(f, root_).generic_string(), f);
    std::sort(entries.begin(), entries.end());
    json doc;
    doc["complete"] = complete;
    if (!error.empty()) doc["error"] = error;
    doc["failed_languages"] = failed;
    auto artifacts = json::array();
    for (const auto& [rel, full] : entries)
      artifacts.push_back({{"path", rel}, {"bytes", fs::file_size(full)}, {"sha256", sha256_hex(full)}});
    doc["artifacts"] = artifacts;
    const auto path = root_ / "manifest.json";
    devlang::write_text(path, doc.dump(2) + "\n");
    return path;
  }

 private:
  fs::path root_;
  std::vector<fs::path> files_;
};

}  // namespace

std::string record_to_json(const RunRecord& record) { return record_json(record).dump(2) + "\n"; }

std::string sha256_hex(const fs::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw IoError(fmt::format("cannot read '{}'", file.string()));
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), &EVP_MD_CTX_free);
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1) throw IoError("sha256 init failed");
  char buffer[1 << 16];
  while (in) {
    in.read(buffer, sizeof buffer);
    if (in.gcount() > 0) EVP_DigestUpdate(ctx.get(), buffer, static_cast<std::size_t>(in.gcount()));
  }
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int length = 0;
  EVP_DigestFinal_ex(ctx.get(), digest, &length);
  std::string hex;
  for (unsigned int i = 0; i < length; ++i) hex += fmt::format("{:02x}", digest[i]);
  return hex;
}

ExperimentOutcome run_experiment(const ExperimentConfig& config, const RunFactory& factory,
                                 const ProgressFn& progress) {
  config.validate();
  const fs::path& root = config.output_dir;
  std::error_code ec;
  fs::create_directories(root / "runs", ec);
  if (ec) throw IoError(fmt::format("cannot create '{}': {}", root.string(), ec.message()));

  ArtifactLog log(root);
  log.write_text("config.txt", describe_config(config));

  ExperimentOutcome out;
  try {
    out.phase_one = run_phase_one(config, factory, progress);
  } catch (const std::exception& e) {
    log.write_manifest(false, {}, e.what());
    throw;
  }
  json p1;
  p1["best_epochs"] = out.phase_one.best_epochs;
  for (const auto& [language, trace] : out.phase_one.traces) p1["traces"][language] = trace_json(trace);
  log.write_text("phase_one.json", p1.dump(2) + "\n");

  out.targets = compute_target_epochs(out.phase_one, config);
  json targets;
  for (const auto& [language, t] : out.targets)
    targets[language] = {{"epoch", t.epoch}, {"mean", t.mean}, {"sources", t.sources}};
  log.write_text("target_epochs.json", targets.dump(2) + "\n");

  out.records = run_phase_two(config, factory, out.targets, root / "runs", progress);
  std::vector<std::string> failed;
  for (const auto& r : out.records) {
    log.write_text(fs::path("runs") / r.language / "record.json", record_to_json(r));
    if (r.failed) {
      failed.push_back(r.language);
      continue;
    }
    if (r.devset_checkpoint) log.add(*r.devset_checkpoint);
    if (r.devlang_checkpoint) log.add(*r.devlang_checkpoint);
    out.results.push_back(to_language_result(r));
  }
  if (out.results.empty()) {
    const std::string why = "every language failed in the main training phase";
    out.manifest = log.write_manifest(false, failed, why);
    throw TrainingError(why);
  }
  out.summary = summarize(out.results);
  for (const auto& p : write_report(root, out.summary, out.results)) log.add(p);
  out.manifest = log.write_manifest(true, failed, "");
  return out;
}

std::vector<SplitDataset> load_datasets(const ExperimentConfig& config) {
  std::vector<SplitDataset> out;
  if (config.task == TaskKind::Synthetic) {
    auto all = synth_task(config.synth);
    for (const auto& language : config.languages) {
      auto it = std::find_if(all.begin(), all.end(), [&](const SplitDataset& d) { return d.language == language; });
      if (it == all.end()) throw ConfigError(fmt::format("unknown synthetic language '{}'", language));
      out.push_back(std::move(*it));
    }
  } else {
    const auto manifest = load_dataset_manifest(config.dataset_manifest);
    for (const auto& language : config.languages) {
      auto it = manifest.find(language);
      if (it == manifest.end())
        throw DataError(fmt::format("language '{}' missing from dataset manifest '{}'", language,
                                    config.dataset_manifest.string()));
      out.push_back(load_split(config.task, language, it->second));
    }
  }
  for (const auto& d : out) {
    if (d.train.empty() || d.dev.empty() || d.test.empty())
      throw DataError(fmt::format("language '{}' has an empty split", d.language));
    if (d.train.size() != out.front().train.size())
      throw DataError(fmt::format("train sets differ in size: '{}' has {}, '{}' has {}", out.front().language,
                                  out.front().train.size(), d.language, d.train.size()));
  }
  return out;
}

namespace {

class ModelRun final : public LanguageRun {
 public:
  ModelRun(const ModelConfig& config, const AdamConfig& optimizer, const SplitDataset& data, std::uint64_t seed)
      : optimizer_(optimizer), data_(data), seed_(seed) {
    ModelConfig c = config;
    c.seed = seed;
    model_ = make_model(c, data.train);
    for (const auto& ex : data.train) train_.push_back(model_->encode_example(ex));
  }

  double train_epoch(int epoch) override {
    return devlang::train_epoch(*model_, train_, optimizer_, splitmix64(seed_ ^ static_cast<std::uint64_t>(epoch)));
  }

  double dev_accuracy() override { return evaluate_accuracy(*model_, data_.dev); }

  void keep(CheckpointSlot slot, int) override { slot_values(slot) = model_->store().snapshot_values(); }

  double test_accuracy(CheckpointSlot slot) override {
    const auto current = model_->store().snapshot_values();
    model_->store().restore_values(stored(slot));
    const double acc = evaluate_accuracy(*model_, data_.test);
    model_->store().restore_values(current);
    return acc;
  }

  std::optional<fs::path> save(CheckpointSlot slot, const fs::path& dir) override {
    const auto path = dir / fmt::format("{}.ckpt", to_string(slot));
    save_model(path, *model_, stored(slot));
    return path;
  }

 private:
  std::vector<Mat>& slot_values(CheckpointSlot slot) {
    return slot == CheckpointSlot::DevSet ? devset_ : devlang_;
  }
  const std::vector<Mat>& stored(CheckpointSlot slot) {
    auto& v = slot_values(slot);
    if (v.empty()) throw TrainingError(fmt::format("no {} checkpoint was kept", to_string(slot)));
    return v;
  }

  AdamConfig optimizer_;
  const SplitDataset& data_;
  std::uint64_t seed_;
  std::unique_ptr<TransductionModel> model_;
  std::vector<EncodedExample> train_;
  std::vector<Mat> devset_;
  std::vector<Mat> devlang_;
};

}  // namespace

ModelRunFactory::ModelRunFactory(const ExperimentConfig& config, std::vector<SplitDataset> datasets)
    : model_(config.model), optimizer_(config.optimizer) {
  for (auto& d : datasets) datasets_.emplace(d.language, std::move(d));
}

std::unique_ptr<LanguageRun> ModelRunFactory::start(const std::string& language, std::uint64_t seed) const {
  auto it = datasets_.find(language);
  if (it == datasets_.end()) throw ConfigError(fmt::format("no dataset loaded for '{}'", language));
  return std::make_unique<ModelRun>(model_, optimizer_, it->second, seed);
}

ExperimentOutcome run_experiment(const ExperimentConfig& config, const ProgressFn& progress) {
  const ModelRunFactory factory(config, load_datasets(config));
  return run_experiment(config, factory, progress);
}

}  // namespace devlang
