#include <fmt/format.h>

#include "devlang/errors.hpp"
#include "devlang/models.hpp"

namespace devlang {

struct AttentionSeq2Seq::Forward {
  struct Step {
    int input = 0;
    int target = 0;
    LstmCache lstm;
    AdditiveAttention::Step attention;
    Vec combine_input;  // [h; context]
    Vec combined;       // tanh(W_c [h; context] + b_c)
    Vec probs;
  };

  EncodedSource encoded;
  AdditiveAttention::Keys keys;
  std::vector<Step> steps;
  double loss = 0.0;
};

AttentionSeq2Seq::AttentionSeq2Seq(const ModelConfig& config, Vocabulary chars, Vocabulary features)
    : TransductionModel(config, std::move(chars), std::move(features)) {
  const int h = config_.hidden_size;
  const int e = config_.embedding_size;
  const int v = chars_.size();
  encoder_ = RecurrentEncoder(store_, "enc", v, e, h, config_.bidirectional);
  target_embedding_ = store_.add("dec.embedding", e, v);
  decoder_ = add_lstm(store_, "dec.lstm", e + h, h);
  attention_ = AdditiveAttention(store_, "attn", h, h, h);
  combine_weight_ = store_.add("out.combine.weight", h, 2 * h);
  combine_bias_ = store_.add("out.combine.bias", h, 1);
  vocab_weight_ = store_.add("out.vocab.weight", v, h);
  vocab_bias_ = store_.add("out.vocab.bias", v, 1);
}

EncodedSource AttentionSeq2Seq::encode(std::span<const int> source) const { return encoder_.encode(source, store_); }

namespace {

// One decoder step shared by teacher forcing and greedy decoding.
template <typename StepT>
StepT decoder_step(const ParameterStore& store, ParamId embedding, const LstmParams& lstm,
                   const AdditiveAttention& attention, const EncodedSource& encoded,
                   const AdditiveAttention::Keys& keys, ParamId cw, ParamId cb, ParamId vw, ParamId vb, int input,
                   const Vec& h, const Vec& c, const Vec& prev_context) {
  StepT s;
  s.input = input;
  const auto& table = store[embedding].value;
  const Eigen::Index e = table.rows();
  Vec x(e + prev_context.size());
  x << table.col(input), prev_context;
  s.lstm = lstm_step(x, h, c, lstm, store);
  s.attention = attention.attend(s.lstm.hidden, encoded, keys, store);
  s.combine_input.resize(2 * h.size());
  s.combine_input << s.lstm.hidden, s.attention.result.context;
  s.combined = linear_forward(s.combine_input, store[cw].value, store[cb].value.col(0)).array().tanh();
  s.probs = softmax(linear_forward(s.combined, store[vw].value, store[vb].value.col(0)));
  return s;
}

}  // namespace

AttentionSeq2Seq::Forward AttentionSeq2Seq::forward(const EncodedExample& example) const {
  Forward f;
  try {
    f.encoded = encoder_.encode(example.source, store_);
  } catch (const DataError& e) {
    throw DataError(fmt::format("example '{}': {}", example.id, e.what()));
  }
  f.keys = attention_.project(f.encoded, store_);
  const int h = config_.hidden_size;
  Vec hidden = Vec::Zero(h), cell = Vec::Zero(h), context = Vec::Zero(h);
  int input = Vocabulary::kBos;
  for (std::size_t t = 0; t <= example.target.size(); ++t) {
    const int target = t < example.target.size() ? example.target[t] : Vocabulary::kEos;
    auto s = decoder_step<Forward::Step>(store_, target_embedding_, decoder_, attention_, f.encoded, f.keys,
                                         combine_weight_, combine_bias_, vocab_weight_, vocab_bias_, input, hidden,
                                         cell, context);
    s.target = target;
    f.loss += cross_entropy(s.probs, target);
    hidden = s.lstm.hidden;
    cell = s.lstm.cell;
    context = s.attention.result.context;
    input = target;
    f.steps.push_back(std::move(s));
  }
  return f;
}

void AttentionSeq2Seq::backward(const Forward& f) {
  const int h = config_.hidden_size;
  const Eigen::Index e = config_.embedding_size;
  const std::size_t n = f.encoded.states.size();
  std::vector<Vec> d_states(n, Vec::Zero(h));
  std::vector<Vec> d_keys(n, Vec::Zero(h));
  Vec dh_next = Vec::Zero(h), dc_next = Vec::Zero(h), d_context_next = Vec::Zero(h);

  for (std::size_t t = f.steps.size(); t-- > 0;) {
    const auto& s = f.steps[t];
    const Vec d_logits = softmax_cross_entropy_grad(s.probs, s.target);
    const Vec d_combined = linear_backward(s.combined, store_[vocab_weight_].value, d_logits,
                                           store_[vocab_weight_].grad, store_[vocab_bias_].grad.col(0));
    const Vec d_pre = d_combined.cwiseProduct((1.0 - s.combined.array().square()).matrix());
    const Vec d_combine_input = linear_backward(s.combine_input, store_[combine_weight_].value, d_pre,
                                                store_[combine_weight_].grad, store_[combine_bias_].grad.col(0));
    Vec dh = d_combine_input.head(h) + dh_next;
    const Vec d_context = d_combine_input.tail(h) + d_context_next;
    dh += attention_.backward(s.attention, f.encoded, d_context, nullptr, d_states, d_keys, store_);
    auto g = lstm_step_backward(s.lstm, dh, dc_next, decoder_, store_);
    store_[target_embedding_].grad.col(s.input) += g.d_input.head(e);
    d_context_next = g.d_input.tail(h);
    dh_next = std::move(g.d_prev_hidden);
    dc_next = std::move(g.d_prev_cell);
  }
  attention_.backward_keys(f.encoded, d_keys, d_states, store_);
  encoder_.backward(f.encoded, d_states, store_);
}

double AttentionSeq2Seq::loss(const EncodedExample& example) const { return forward(example).loss; }

double AttentionSeq2Seq::loss_and_gradient(const EncodedExample& example) {
  const auto f = forward(example);
  backward(f);
  return f.loss;
}

std::vector<int> AttentionSeq2Seq::decode(const EncodedExample& example, std::size_t max_len) const {
  std::vector<int> out;
  if (max_len == 0) return out;
  const auto encoded = encoder_.encode(example.source, store_);
  const auto keys = attention_.project(encoded, store_);
  const int h = config_.hidden_size;
  Vec hidden = Vec::Zero(h), cell = Vec::Zero(h), context = Vec::Zero(h);
  int input = Vocabulary::kBos;
  while (out.size() < max_len) {
    auto s = decoder_step<Forward::Step>(store_, target_embedding_, decoder_, attention_, encoded, keys,
                                         combine_weight_, combine_bias_, vocab_weight_, vocab_bias_, input, hidden,
                                         cell, context);
    const int next = static_cast<int>(argmax(s.probs));
    if (next == Vocabulary::kEos) break;
    out.push_back(next);
    hidden = s.lstm.hidden;
    cell = s.lstm.cell;
    context = s.attention.result.context;
    input = next;
  }
  return out;
}

}  // namespace devlang
