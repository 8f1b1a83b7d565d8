#include "devlang/gradcheck.hpp"

#include <algorithm>

namespace devlang {

GradientCheckReport check_architecture(ModelKind kind, std::size_t probes, std::uint64_t seed) {
  auto ex = [](std::string id, std::string src, std::string tgt, Symbols feats) {
    TransductionExample e;
    e.id = std::move(id);
    e.source = split_characters(src);
    e.targets = {split_characters(tgt)};
    e.features = std::move(feats);
    return e;
  };
  // Copies, substitutions, deletions and insertions all appear.
  const std::vector<TransductionExample> examples = {
      ex("g:1", "abca", "abda", {"V", "PST"}),
      ex("g:2", "cab", "bcabe", {"N"}),
      ex("g:3", "dd", "a", {"V", "PL"}),
  };

  ModelConfig config;
  config.kind = kind;
  config.hidden_size = 5;
  config.embedding_size = 4;
  config.init_scale = 0.5;
  config.seed = seed;
  auto model = make_model(config, examples);

  std::vector<EncodedExample> encoded;
  for (const auto& e : examples) encoded.push_back(model->encode_example(e));

  auto loss = [&] {
    double total = 0.0;
    for (const auto& e : encoded) total += model->loss(e);
    return total;
  };
  auto backprop = [&] {
    model->store().zero_grad();
    for (const auto& e : encoded) model->loss_and_gradient(e);
  };
  return gradient_check(model->store(), loss, backprop, probes, seed ^ 0x9e3779b97f4a7c15ULL);
}

}  // namespace devlang
