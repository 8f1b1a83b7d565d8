#include <limits>

#include <fmt/format.h>

#include "devlang/errors.hpp"
#include "devlang/models.hpp"

namespace devlang {

struct HardMonotonic::Forward {
  struct Step {
    int input = 0;
    int action = 0;
    std::size_t position = 0;
    LstmCache lstm;
    Vec output_input;  // [h; state at position]
    Vec probs;
  };

  EncodedSource encoded;
  std::vector<Step> steps;
  double loss = 0.0;
};

HardMonotonic::HardMonotonic(const ModelConfig& config, Vocabulary chars, Vocabulary features)
    : TransductionModel(config, std::move(chars), std::move(features)) {
  const int h = config_.hidden_size;
  const int e = config_.embedding_size;
  encoder_ = RecurrentEncoder(store_, "enc", chars_.size(), e, h, config_.bidirectional);
  action_embedding_ = store_.add("dec.action_embedding", e, action_count());
  decoder_ = add_lstm(store_, "dec.lstm", e + h, h);
  output_weight_ = store_.add("out.action.weight", action_count(), 2 * h);
  output_bias_ = store_.add("out.action.bias", action_count(), 1);
}

std::vector<int> HardMonotonic::oracle_actions(std::span<const int> source, std::span<const int> target,
                                               int step_action) {
  const std::size_t n = source.size();
  const std::size_t m = target.size();
  // lcs[i][j]: longest common subsequence of source[i:] and target[j:].
  std::vector<std::size_t> lcs((n + 1) * (m + 1), 0);
  auto at = [&](std::size_t i, std::size_t j) -> std::size_t& { return lcs[i * (m + 1) + j]; };
  for (std::size_t i = n; i-- > 0;)
    for (std::size_t j = m; j-- > 0;)
      at(i, j) = source[i] == target[j] ? at(i + 1, j + 1) + 1 : std::max(at(i + 1, j), at(i, j + 1));

  std::vector<std::ptrdiff_t> aligned(m, -1);
  for (std::size_t i = 0, j = 0; i < n && j < m;) {
    if (source[i] == target[j] && at(i, j) == at(i + 1, j + 1) + 1) {
      aligned[j] = static_cast<std::ptrdiff_t>(i);
      ++i;
      ++j;
    } else if (at(i + 1, j) >= at(i, j + 1)) {
      ++i;
    } else {
      ++j;
    }
  }

  std::vector<int> actions;
  std::ptrdiff_t position = 0;
  for (std::size_t j = 0; j < m; ++j) {
    for (; aligned[j] >= 0 && position < aligned[j]; ++position) actions.push_back(step_action);
    actions.push_back(target[j]);
  }
  actions.push_back(Vocabulary::kEos);
  return actions;
}

namespace {

constexpr double kMasked = -std::numeric_limits<double>::infinity();

}  // namespace

HardMonotonic::Forward HardMonotonic::forward(std::span<const int> source, std::span<const int> actions,
                                              const std::string& id) const {
  Forward f;
  if (source.empty()) throw DataError(fmt::format("example '{}': empty source cannot be aligned", id));
  f.encoded = encoder_.encode(source, store_, true);
  const std::size_t last = f.encoded.length;  // sentinel position
  const int h = config_.hidden_size;
  const Eigen::Index e = config_.embedding_size;
  const Mat& table = store_[action_embedding_].value;

  Vec hidden = Vec::Zero(h), cell = Vec::Zero(h);
  int input = Vocabulary::kBos;
  std::size_t position = 0;
  for (int action : actions) {
    if (action < 0 || action >= action_count())
      throw DataError(fmt::format("example '{}': action {} outside the action space", id, action));
    if (action == step_action() && position == last)
      throw DataError(fmt::format("example '{}': oracle steps past the end of the source", id));
    Forward::Step s;
    s.input = input;
    s.action = action;
    s.position = position;
    Vec x(e + h);
    x << table.col(input), f.encoded.states[position];
    s.lstm = lstm_step(x, hidden, cell, decoder_, store_);
    s.output_input.resize(2 * h);
    s.output_input << s.lstm.hidden, f.encoded.states[position];
    Vec logits = linear_forward(s.output_input, store_[output_weight_].value, store_[output_bias_].value.col(0));
    if (position == last) logits[step_action()] = kMasked;
    s.probs = softmax(logits);
    f.loss += cross_entropy(s.probs, action);
    hidden = s.lstm.hidden;
    cell = s.lstm.cell;
    input = action;
    if (action == step_action()) ++position;
    f.steps.push_back(std::move(s));
  }
  return f;
}

void HardMonotonic::backward(const Forward& f) {
  const int h = config_.hidden_size;
  const Eigen::Index e = config_.embedding_size;
  std::vector<Vec> d_states(f.encoded.states.size(), Vec::Zero(h));
  Vec dh_next = Vec::Zero(h), dc_next = Vec::Zero(h);
  for (std::size_t k = f.steps.size(); k-- > 0;) {
    const auto& s = f.steps[k];
    const Vec d_logits = softmax_cross_entropy_grad(s.probs, s.action);
    const Vec d_out = linear_backward(s.output_input, store_[output_weight_].value, d_logits,
                                      store_[output_weight_].grad, store_[output_bias_].grad.col(0));
    d_states[s.position] += d_out.tail(h);
    auto g = lstm_step_backward(s.lstm, d_out.head(h) + dh_next, dc_next, decoder_, store_);
    store_[action_embedding_].grad.col(s.input) += g.d_input.head(e);
    d_states[s.position] += g.d_input.tail(h);
    dh_next = std::move(g.d_prev_hidden);
    dc_next = std::move(g.d_prev_cell);
  }
  encoder_.backward(f.encoded, d_states, store_);
}

double HardMonotonic::action_loss(std::span<const int> source, std::span<const int> actions) const {
  return forward(source, actions, "<actions>").loss;
}

std::vector<Vec> HardMonotonic::action_distributions(std::span<const int> source, std::span<const int> actions) const {
  std::vector<Vec> out;
  for (auto& s : forward(source, actions, "<actions>").steps) out.push_back(std::move(s.probs));
  return out;
}

double HardMonotonic::loss(const EncodedExample& example) const {
  const auto actions = oracle_actions(example.source, example.target, step_action());
  return forward(example.source, actions, example.id).loss;
}

double HardMonotonic::loss_and_gradient(const EncodedExample& example) {
  const auto actions = oracle_actions(example.source, example.target, step_action());
  const auto f = forward(example.source, actions, example.id);
  backward(f);
  return f.loss;
}

HardMonotonicDecode HardMonotonic::decode_with_trace(std::span<const int> source, std::size_t max_len) const {
  HardMonotonicDecode out;
  const auto encoded = encoder_.encode(source, store_, true);
  const std::size_t last = encoded.length;
  const int h = config_.hidden_size;
  const Eigen::Index e = config_.embedding_size;
  const Mat& table = store_[action_embedding_].value;
  Vec hidden = Vec::Zero(h), cell = Vec::Zero(h);
  int input = Vocabulary::kBos;
  std::size_t position = 0;
  while (true) {
    if (out.output.size() >= max_len) {
      out.truncated = true;
      break;
    }
    Vec x(e + h);
    x << table.col(input), encoded.states[position];
    const auto lstm = lstm_step(x, hidden, cell, decoder_, store_);
    Vec z(2 * h);
    z << lstm.hidden, encoded.states[position];
    Vec logits = linear_forward(z, store_[output_weight_].value, store_[output_bias_].value.col(0));
    if (position == last) logits[step_action()] = kMasked;
    const int action = static_cast<int>(argmax(softmax(logits)));
    out.actions.push_back(action);
    out.positions.push_back(position);
    if (action == Vocabulary::kEos) break;
    if (action == step_action()) ++position;
    else out.output.push_back(action);
    hidden = lstm.hidden;
    cell = lstm.cell;
    input = action;
  }
  return out;
}

std::vector<int> HardMonotonic::decode(const EncodedExample& example, std::size_t max_len) const {
  if (max_len == 0) return {};
  return decode_with_trace(example.source, max_len).output;
}

}  // namespace devlang
