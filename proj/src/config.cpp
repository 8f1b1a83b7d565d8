#include "devlang/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <fmt/format.h>

#include "devlang/errors.hpp"

namespace devlang {

namespace pt = boost::property_tree;

bool ExperimentConfig::is_dev_language(const std::string& language) const {
  return std::find(dev_languages.begin(), dev_languages.end(), language) != dev_languages.end();
}

void ExperimentConfig::validate() const {
  if (languages.empty()) throw ConfigError("no languages configured");
  if (dev_languages.empty()) throw ConfigError("development-language subset is empty");
  std::set<std::string> seen;
  for (const auto& l : languages)
    if (!seen.insert(l).second) throw ConfigError(fmt::format("language '{}' listed twice", l));
  std::set<std::string> dev_seen;
  for (const auto& d : dev_languages) {
    if (!seen.contains(d)) throw ConfigError(fmt::format("development language '{}' is not in the language list", d));
    if (!dev_seen.insert(d).second) throw ConfigError(fmt::format("development language '{}' listed twice", d));
  }
  if (workers < 1) throw ConfigError("output.workers must be >= 1");
  if (optimizer.step_size < 0) throw ConfigError("model.learning_rate must be >= 0");
}

StoppingPolicy default_policy(TaskKind task) {
  switch (task) {
    case TaskKind::Norm: return StoppingPolicy(BestOfBudget{50});
    case TaskKind::Morph: return StoppingPolicy(Patience{300, 100});
    case TaskKind::Transl: return StoppingPolicy(BestOfBudget{20});
    case TaskKind::Synthetic: return StoppingPolicy(BestOfBudget{30});
  }
  return StoppingPolicy(BestOfBudget{30});
}

ModelKind default_architecture(TaskKind task) {
  switch (task) {
    case TaskKind::Morph: return ModelKind::PointerGenerator;
    case TaskKind::Transl: return ModelKind::HardMonotonic;
    default: return ModelKind::AttentionSeq2Seq;
  }
}

namespace {

const std::map<std::string, std::set<std::string>>& allowed_keys() {
  static const std::map<std::string, std::set<std::string>> keys = {
      {"task",
       {"kind", "manifest", "synth_seed", "synth_languages", "synth_train", "synth_dev", "synth_test",
        "synth_complexity"}},
      {"languages", {"names"}},
      {"dev-languages", {"names"}},
      {"policy", {"kind", "budget", "min_epochs", "window", "epoch", "max_epochs", "rounding"}},
      {"model",
       {"architecture", "hidden_size", "embedding_size", "bidirectional", "init_scale", "learning_rate", "beta1",
        "beta2", "epsilon"}},
      {"seeds", {"base"}},
      {"output", {"dir", "workers"}},
  };
  return keys;
}

void check_key(const std::string& section, const std::string& key) {
  const auto& keys = allowed_keys();
  auto it = keys.find(section);
  if (it == keys.end()) throw ConfigError(fmt::format("unknown config section '{}'", section));
  if (!it->second.contains(key)) throw ConfigError(fmt::format("unknown config key '{}.{}'", section, key));
}

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  for (std::string item; std::getline(ss, item, ',');) {
    auto t = trim(item);
    if (!t.empty()) out.push_back(std::move(t));
  }
  return out;
}

class Sections {
 public:
  explicit Sections(pt::ptree tree) : tree_(std::move(tree)) {}

  std::optional<std::string> text(const std::string& section, const std::string& key) const {
    auto s = tree_.get_child_optional(section);
    if (!s) return std::nullopt;
    auto v = s->get_optional<std::string>(pt::ptree::path_type(key, '\0'));
    if (!v) return std::nullopt;
    return trim(*v);
  }

  template <typename T>
  T number(const std::string& section, const std::string& key, T fallback) const {
    auto v = text(section, key);
    if (!v) return fallback;
    T out{};
    const char* end = v->data() + v->size();
    auto [ptr, ec] = std::from_chars(v->data(), end, out);
    if (ec != std::errc() || ptr != end)
      throw ConfigError(fmt::format("config key '{}.{}' has invalid value '{}'", section, key, *v));
    return out;
  }

  bool flag(const std::string& section, const std::string& key, bool fallback) const {
    auto v = text(section, key);
    if (!v) return fallback;
    if (*v == "true" || *v == "1" || *v == "yes") return true;
    if (*v == "false" || *v == "0" || *v == "no") return false;
    throw ConfigError(fmt::format("config key '{}.{}' expects true/false, got '{}'", section, key, *v));
  }

 private:
  pt::ptree tree_;
};

}  // namespace

ExperimentConfig parse_config(std::string_view text, std::span<const std::string> overrides,
                              const std::filesystem::path& base_dir) {
  pt::ptree tree;
  try {
    std::istringstream in{std::string(text)};
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(fmt::format("config parse error: {}", e.what()));
  }
  for (const auto& [section, entries] : tree) {
    if (entries.empty() && !entries.data().empty())
      throw ConfigError(fmt::format("config key '{}' appears outside a section", section));
    for (const auto& [key, value] : entries) check_key(section, key);
  }
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    const auto dot = o.find('.');
    if (eq == std::string::npos || dot == std::string::npos || dot > eq)
      throw ConfigError(fmt::format("override '{}' is not of the form section.key=value", o));
    const std::string section = trim(std::string_view(o).substr(0, dot));
    const std::string key = trim(std::string_view(o).substr(dot + 1, eq - dot - 1));
    check_key(section, key);
    auto& child = tree.get_child_optional(section) ? tree.get_child(section)
                                                   : tree.add_child(section, pt::ptree());
    child.put(pt::ptree::path_type(key, '\0'), o.substr(eq + 1));
  }
  const Sections s(std::move(tree));

  ExperimentConfig c;
  c.task = parse_task_kind(s.text("task", "kind").value_or("synthetic"));

  c.synth.seed = s.number<std::uint64_t>("task", "synth_seed", 1);
  c.synth.language_count = s.number<int>("task", "synth_languages", 4);
  c.synth.train_size = s.number<int>("task", "synth_train", 100);
  c.synth.dev_size = s.number<int>("task", "synth_dev", 50);
  c.synth.test_size = s.number<int>("task", "synth_test", 50);
  c.synth.rule_complexity = s.number<int>("task", "synth_complexity", 3);

  std::vector<std::string> available;
  if (c.task == TaskKind::Synthetic) {
    if (c.synth.language_count < 2) throw ConfigError("task.synth_languages must be >= 2");
    for (int i = 0; i < c.synth.language_count; ++i) available.push_back(synth_language_name(i));
  } else {
    auto manifest = s.text("task", "manifest");
    if (!manifest || manifest->empty()) throw ConfigError("task.manifest is required for real datasets");
    c.dataset_manifest = std::filesystem::path(*manifest);
    if (c.dataset_manifest.is_relative() && !base_dir.empty()) c.dataset_manifest = base_dir / c.dataset_manifest;
  }

  if (auto names = s.text("languages", "names")) {
    c.languages = split_list(*names);
    if (c.task == TaskKind::Synthetic)
      for (const auto& l : c.languages)
        if (std::find(available.begin(), available.end(), l) == available.end())
          throw ConfigError(fmt::format("language '{}' is not produced by the synthetic generator", l));
  } else if (c.task == TaskKind::Synthetic) {
    c.languages = available;
  } else {
    for (const auto& [language, paths] : load_dataset_manifest(c.dataset_manifest)) c.languages.push_back(language);
  }

  const auto dev = s.text("dev-languages", "names");
  if (!dev || *dev == "all") c.dev_languages = c.languages;
  else c.dev_languages = split_list(*dev);

  // Keys given without policy.kind refine the task's default policy.
  const auto fallback = default_policy(c.task).kind();
  BestOfBudget budget = std::holds_alternative<BestOfBudget>(fallback) ? std::get<BestOfBudget>(fallback) : BestOfBudget{};
  Patience patience = std::holds_alternative<Patience>(fallback) ? std::get<Patience>(fallback) : Patience{};
  const std::string policy = s.text("policy", "kind").value_or(std::holds_alternative<Patience>(fallback)
                                                                   ? "patience"
                                                                   : "best-of-budget");
  const int max_epochs = s.number<int>("policy", "max_epochs", 0);
  if (policy == "best-of-budget") {
    c.policy = StoppingPolicy(BestOfBudget{s.number<int>("policy", "budget", budget.budget)}, max_epochs);
  } else if (policy == "patience") {
    c.policy = StoppingPolicy(Patience{s.number<int>("policy", "min_epochs", patience.min_epochs),
                                       s.number<int>("policy", "window", patience.window)},
                              max_epochs);
  } else if (policy == "fixed-epoch") {
    c.policy = StoppingPolicy(FixedEpoch{s.number<int>("policy", "epoch", 1)}, max_epochs);
  } else {
    throw ConfigError(fmt::format("unknown policy kind '{}'", policy));
  }
  c.rounding = parse_rounding(s.text("policy", "rounding").value_or("half-away-from-zero"));

  const auto arch = s.text("model", "architecture");
  c.model.kind = arch ? parse_model_kind(*arch) : default_architecture(c.task);
  c.model.hidden_size = s.number<int>("model", "hidden_size", 64);
  c.model.embedding_size = s.number<int>("model", "embedding_size", 32);
  c.model.bidirectional = s.flag("model", "bidirectional", true);
  c.model.init_scale = s.number<double>("model", "init_scale", 0.1);
  c.optimizer.step_size = s.number<double>("model", "learning_rate", 1e-3);
  c.optimizer.beta1 = s.number<double>("model", "beta1", 0.9);
  c.optimizer.beta2 = s.number<double>("model", "beta2", 0.999);
  c.optimizer.epsilon = s.number<double>("model", "epsilon", 1e-8);
  if (c.model.hidden_size < 1 || c.model.embedding_size < 1)
    throw ConfigError("model.hidden_size and model.embedding_size must be >= 1");

  c.base_seed = s.number<std::uint64_t>("seeds", "base", 1);
  c.output_dir = s.text("output", "dir").value_or("out");
  c.workers = s.number<int>("output", "workers", 1);

  c.validate();
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path, std::span<const std::string> overrides) {
  std::ifstream in(path);
  if (!in) throw ConfigError(fmt::format("cannot open config file '{}'", path.string()));
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_config(buffer.str(), overrides, path.parent_path());
}

std::string describe_config(const ExperimentConfig& c) {
  auto join = [](const std::vector<std::string>& v) {
    std::string s;
    for (const auto& x : v) s += (s.empty() ? "" : ",") + x;
    return s;
  };
  std::string out;
  out += fmt::format("task.kind={}\n", to_string(c.task));
  if (c.task == TaskKind::Synthetic) {
    out += fmt::format("task.synth_seed={}\ntask.synth_languages={}\ntask.synth_train={}\ntask.synth_dev={}\n",
                       c.synth.seed, c.synth.language_count, c.synth.train_size, c.synth.dev_size);
    out += fmt::format("task.synth_test={}\ntask.synth_complexity={}\n", c.synth.test_size, c.synth.rule_complexity);
  } else {
    out += fmt::format("task.manifest={}\n", c.dataset_manifest.generic_string());
  }
  out += fmt::format("languages.names={}\ndev-languages.names={}\n", join(c.languages), join(c.dev_languages));
  out += fmt::format("policy={}\npolicy.rounding={}\n", c.policy.describe(), to_string(c.rounding));
  out += fmt::format("model.architecture={}\nmodel.hidden_size={}\nmodel.embedding_size={}\n",
                     to_string(c.model.kind), c.model.hidden_size, c.model.embedding_size);
  out += fmt::format("model.bidirectional={}\nmodel.init_scale={}\nmodel.learning_rate={}\n", c.model.bidirectional,
                     c.model.init_scale, c.optimizer.step_size);
  out += fmt::format("model.beta1={}\nmodel.beta2={}\nmodel.epsilon={}\n", c.optimizer.beta1, c.optimizer.beta2,
                     c.optimizer.epsilon);
  out += fmt::format("seeds.base={}\n", c.base_seed);
  return out;
}

}  // namespace devlang
