#include <fmt/format.h>

#include "devlang/errors.hpp"
#include "devlang/models.hpp"

namespace devlang {

struct PointerGenerator::Forward {
  struct Step {
    int input = 0;
    int target = 0;
    LstmCache lstm;
    AdditiveAttention::Step attention;
    Vec combine_input;  // [h; context]
    Vec combined;
    Vec vocab;
    Vec gate_input;  // [h; context; embedding(input)]
    double p_gen = 0.0;
    Vec mixture;
  };

  std::vector<int> source;
  EncodedSource encoded;
  EncodedSource feature_states;
  Vec feature_summary;
  AdditiveAttention::Keys keys;
  std::vector<Step> steps;
  std::vector<int> output;
  double loss = 0.0;
};

PointerGenerator::PointerGenerator(const ModelConfig& config, Vocabulary chars, Vocabulary features)
    : TransductionModel(config, std::move(chars), std::move(features)) {
  const int h = config_.hidden_size;
  const int e = config_.embedding_size;
  const int v = chars_.size();
  encoder_ = RecurrentEncoder(store_, "enc", v, e, h, config_.bidirectional);
  feature_encoder_ = RecurrentEncoder(store_, "feat", features_.size(), e, h, false);
  target_embedding_ = store_.add("dec.embedding", e, v);
  decoder_ = add_lstm(store_, "dec.lstm", e + 2 * h, h);
  attention_ = AdditiveAttention(store_, "attn", h, h, h);
  combine_weight_ = store_.add("out.combine.weight", h, 2 * h);
  combine_bias_ = store_.add("out.combine.bias", h, 1);
  vocab_weight_ = store_.add("out.vocab.weight", v, h);
  vocab_bias_ = store_.add("out.vocab.bias", v, 1);
  gate_weight_ = store_.add("pg.gate.weight", 1, 2 * h + e);
  gate_bias_ = store_.add("pg.gate.bias", 1, 1);
}

PointerGenerator::Forward PointerGenerator::forward(const EncodedExample& example, const std::vector<int>* forced,
                                                    std::size_t max_len) const {
  Forward f;
  f.source = example.source;
  try {
    f.encoded = encoder_.encode(example.source, store_);
  } catch (const DataError& e) {
    throw DataError(fmt::format("example '{}': {}", example.id, e.what()));
  }
  const int h = config_.hidden_size;
  const Eigen::Index e = config_.embedding_size;
  f.feature_summary = Vec::Zero(h);
  if (!example.features.empty()) {
    f.feature_states = feature_encoder_.run(example.features, store_);
    f.feature_summary = f.feature_states.states.back();
  }
  f.keys = attention_.project(f.encoded, store_);

  Vec hidden = Vec::Zero(h), cell = Vec::Zero(h), context = Vec::Zero(h);
  int input = Vocabulary::kBos;
  const Mat& table = store_[target_embedding_].value;
  const std::size_t steps = forced ? forced->size() + 1 : max_len + 1;
  for (std::size_t t = 0; t < steps; ++t) {
    if (!forced && f.output.size() >= max_len) break;
    Forward::Step s;
    s.input = input;
    Vec x(e + 2 * h);
    x << table.col(input), context, f.feature_summary;
    s.lstm = lstm_step(x, hidden, cell, decoder_, store_);
    s.attention = attention_.attend(s.lstm.hidden, f.encoded, f.keys, store_);
    s.combine_input.resize(2 * h);
    s.combine_input << s.lstm.hidden, s.attention.result.context;
    s.combined = linear_forward(s.combine_input, store_[combine_weight_].value, store_[combine_bias_].value.col(0))
                     .array()
                     .tanh();
    s.vocab = softmax(linear_forward(s.combined, store_[vocab_weight_].value, store_[vocab_bias_].value.col(0)));
    s.gate_input.resize(2 * h + e);
    s.gate_input << s.lstm.hidden, s.attention.result.context, table.col(input);
    s.p_gen = sigmoid(store_[gate_weight_].value.row(0).dot(s.gate_input) + store_[gate_bias_].value(0, 0));
    s.mixture = pg_mixture(s.p_gen, s.vocab, s.attention.result, f.source);

    int next = 0;
    if (forced) {
      next = t < forced->size() ? (*forced)[t] : Vocabulary::kEos;
      s.target = next;
      f.loss += cross_entropy(s.mixture, next);
    } else {
      next = static_cast<int>(argmax(s.mixture));
      s.target = next;
    }
    hidden = s.lstm.hidden;
    cell = s.lstm.cell;
    context = s.attention.result.context;
    input = next;
    f.steps.push_back(std::move(s));
    if (!forced) {
      if (next == Vocabulary::kEos) break;
      f.output.push_back(next);
    }
  }
  return f;
}

void PointerGenerator::backward(const Forward& f) {
  const int h = config_.hidden_size;
  const Eigen::Index e = config_.embedding_size;
  const std::size_t n = f.encoded.states.size();
  std::vector<Vec> d_states(n, Vec::Zero(h));
  std::vector<Vec> d_keys(n, Vec::Zero(h));
  Vec dh_next = Vec::Zero(h), dc_next = Vec::Zero(h), d_context_next = Vec::Zero(h);
  Vec d_feature = Vec::Zero(h);
  auto& embedding_grad = store_[target_embedding_].grad;

  for (std::size_t t = f.steps.size(); t-- > 0;) {
    const auto& s = f.steps[t];
    const int y = s.target;
    const double prob = s.mixture[y];
    Vec d_logits = Vec::Zero(s.vocab.size());
    double d_gate = 0.0;
    Vec d_weights = Vec::Zero(static_cast<Eigen::Index>(n));
    if (prob >= kProbabilityFloor) {
      const double d_prob = -1.0 / prob;
      Vec d_vocab = Vec::Zero(s.vocab.size());
      d_vocab[y] = s.p_gen * d_prob;
      d_logits = softmax_backward(s.vocab, d_vocab);
      double copy_mass = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        if (f.source[i] != y) continue;
        const auto k = static_cast<Eigen::Index>(i);
        copy_mass += s.attention.result.weights[k];
        d_weights[k] = (1.0 - s.p_gen) * d_prob;
      }
      const double d_p_gen = (s.vocab[y] - copy_mass) * d_prob;
      d_gate = d_p_gen * s.p_gen * (1.0 - s.p_gen);
    }

    store_[gate_weight_].grad.row(0) += d_gate * s.gate_input.transpose();
    store_[gate_bias_].grad(0, 0) += d_gate;
    const Vec d_gate_input = d_gate * store_[gate_weight_].value.row(0).transpose();

    const Vec d_combined = linear_backward(s.combined, store_[vocab_weight_].value, d_logits,
                                           store_[vocab_weight_].grad, store_[vocab_bias_].grad.col(0));
    const Vec d_pre = d_combined.cwiseProduct((1.0 - s.combined.array().square()).matrix());
    const Vec d_combine_input = linear_backward(s.combine_input, store_[combine_weight_].value, d_pre,
                                                store_[combine_weight_].grad, store_[combine_bias_].grad.col(0));

    Vec dh = d_combine_input.head(h) + d_gate_input.head(h) + dh_next;
    const Vec d_context = d_combine_input.tail(h) + d_gate_input.segment(h, h) + d_context_next;
    dh += attention_.backward(s.attention, f.encoded, d_context, &d_weights, d_states, d_keys, store_);
    auto g = lstm_step_backward(s.lstm, dh, dc_next, decoder_, store_);
    embedding_grad.col(s.input) += g.d_input.head(e) + d_gate_input.tail(e);
    d_context_next = g.d_input.segment(e, h);
    d_feature += g.d_input.tail(h);
    dh_next = std::move(g.d_prev_hidden);
    dc_next = std::move(g.d_prev_cell);
  }
  attention_.backward_keys(f.encoded, d_keys, d_states, store_);
  encoder_.backward(f.encoded, d_states, store_);
  if (!f.feature_states.states.empty()) {
    std::vector<Vec> d_feature_states(f.feature_states.states.size(), Vec::Zero(h));
    d_feature_states.back() = d_feature;
    feature_encoder_.backward(f.feature_states, d_feature_states, store_);
  }
}

double PointerGenerator::loss(const EncodedExample& example) const {
  return forward(example, &example.target, 0).loss;
}

double PointerGenerator::loss_and_gradient(const EncodedExample& example) {
  const auto f = forward(example, &example.target, 0);
  backward(f);
  return f.loss;
}

std::vector<int> PointerGenerator::decode(const EncodedExample& example, std::size_t max_len) const {
  if (max_len == 0) return {};
  return forward(example, nullptr, max_len).output;
}

std::vector<Vec> PointerGenerator::output_distributions(const EncodedExample& example) const {
  std::vector<Vec> out;
  for (auto& s : forward(example, &example.target, 0).steps) out.push_back(std::move(s.mixture));
  return out;
}

std::vector<double> PointerGenerator::generation_probabilities(const EncodedExample& example) const {
  std::vector<double> out;
  for (const auto& s : forward(example, &example.target, 0).steps) out.push_back(s.p_gen);
  return out;
}

}  // namespace devlang
