#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "devlang/data.hpp"
#include "devlang/models.hpp"
#include "devlang/numkernel.hpp"
#include "devlang/stopping.hpp"

namespace devlang {

// Experiment description read from an INI-style file:
//
//   [task]          kind, manifest, synth_seed, synth_languages, synth_train,
//                   synth_dev, synth_test, synth_complexity
//   [languages]     names (comma-separated; default: every language)
//   [dev-languages] names (comma-separated or "all"; default: all)
//   [policy]        kind (best-of-budget | patience | fixed-epoch), budget,
//                   min_epochs, window, epoch, max_epochs, rounding
//   [model]         architecture, hidden_size, embedding_size, bidirectional,
//                   init_scale, learning_rate, beta1, beta2, epsilon
//   [seeds]         base
//   [output]        dir, workers
struct ExperimentConfig {
  TaskKind task = TaskKind::Synthetic;
  std::filesystem::path dataset_manifest;  // real tasks only
  SynthOptions synth;                      // synthetic task only
  std::vector<std::string> languages;
  std::vector<std::string> dev_languages;
  StoppingPolicy policy{BestOfBudget{30}};
  Rounding rounding = Rounding::HalfAwayFromZero;
  ModelConfig model;
  AdamConfig optimizer;
  std::uint64_t base_seed = 1;
  std::filesystem::path output_dir = "out";
  int workers = 1;

  bool is_dev_language(const std::string& language) const;
  // Structural checks: non-empty dev subset contained in the language list.
  void validate() const;
};

StoppingPolicy default_policy(TaskKind task);
ModelKind default_architecture(TaskKind task);

// `overrides` are "section.key=value" strings applied before validation.
// Unknown sections or keys are ConfigErrors naming the key. Relative manifest
// paths resolve against `base_dir`.
ExperimentConfig parse_config(std::string_view text, std::span<const std::string> overrides,
                              const std::filesystem::path& base_dir = {});
ExperimentConfig load_config(const std::filesystem::path& path, std::span<const std::string> overrides = {});

// Canonical key=value dump of the resolved configuration.
std::string describe_config(const ExperimentConfig& config);

}  // namespace devlang
