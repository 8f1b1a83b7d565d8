#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include <fmt/format.h>

#include "devlang/errors.hpp"
#include "devlang/models.hpp"

namespace devlang {

std::string_view to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::AttentionSeq2Seq: return "attention-seq2seq";
    case ModelKind::PointerGenerator: return "pointer-generator";
    case ModelKind::HardMonotonic: return "hard-monotonic";
  }
  return "?";
}

ModelKind parse_model_kind(std::string_view text) {
  if (text == "attention-seq2seq") return ModelKind::AttentionSeq2Seq;
  if (text == "pointer-generator") return ModelKind::PointerGenerator;
  if (text == "hard-monotonic") return ModelKind::HardMonotonic;
  throw ConfigError(fmt::format(
      "unknown architecture '{}' (expected attention-seq2seq, pointer-generator or hard-monotonic)", text));
}

Eigen::Index argmax(const Vec& values) {
  Eigen::Index best = 0;
  for (Eigen::Index i = 1; i < values.size(); ++i)
    if (values[i] > values[best]) best = i;
  return best;
}

// ---- encoder --------------------------------------------------------------

RecurrentEncoder::RecurrentEncoder(ParameterStore& store, const std::string& prefix, int vocab_size,
                                   int embedding_size, int hidden_size, bool bidirectional)
    : hidden_size_(hidden_size), bidirectional_(bidirectional) {
  embedding_ = store.add(prefix + ".embedding", embedding_size, vocab_size);
  forward_ = add_lstm(store, prefix + ".fwd", embedding_size, hidden_size);
  if (bidirectional_) backward_ = add_lstm(store, prefix + ".bwd", embedding_size, hidden_size);
}

EncodedSource RecurrentEncoder::encode(std::span<const int> symbols, const ParameterStore& store,
                                       bool eos_sentinel) const {
  if (symbols.empty()) throw DataError("cannot encode an empty source sequence");
  return run(symbols, store, eos_sentinel);
}

EncodedSource RecurrentEncoder::run(std::span<const int> symbols, const ParameterStore& store,
                                    bool eos_sentinel) const {
  EncodedSource out;
  out.symbols.assign(symbols.begin(), symbols.end());
  out.length = symbols.size();
  if (eos_sentinel) {
    out.symbols.push_back(Vocabulary::kEos);
    out.sentinels = 1;
  }
  const std::size_t n = out.symbols.size();
  const Mat& table = store[embedding_].value;
  for (int s : out.symbols)
    if (s < 0 || s >= table.cols()) throw DataError(fmt::format("symbol index {} outside encoder vocabulary", s));

  Vec h = Vec::Zero(hidden_size_);
  Vec c = Vec::Zero(hidden_size_);
  out.forward_steps.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    out.forward_steps.push_back(lstm_step(table.col(out.symbols[i]), h, c, forward_, store));
    h = out.forward_steps.back().hidden;
    c = out.forward_steps.back().cell;
    out.states.push_back(h);
  }
  if (bidirectional_) {
    h.setZero();
    c.setZero();
    out.backward_steps.reserve(n);
    for (std::size_t k = 0; k < n; ++k) {
      const std::size_t i = n - 1 - k;
      out.backward_steps.push_back(lstm_step(table.col(out.symbols[i]), h, c, backward_, store));
      h = out.backward_steps.back().hidden;
      c = out.backward_steps.back().cell;
      out.states[i] += h;
    }
  }
  return out;
}

void RecurrentEncoder::backward(const EncodedSource& encoded, std::span<const Vec> d_states,
                                ParameterStore& store) const {
  const std::size_t n = encoded.symbols.size();
  auto& table_grad = store[embedding_].grad;
  Vec dh = Vec::Zero(hidden_size_);
  Vec dc = Vec::Zero(hidden_size_);
  for (std::size_t k = n; k-- > 0;) {
    auto g = lstm_step_backward(encoded.forward_steps[k], d_states[k] + dh, dc, forward_, store);
    table_grad.col(encoded.symbols[k]) += g.d_input;
    dh = std::move(g.d_prev_hidden);
    dc = std::move(g.d_prev_cell);
  }
  if (!bidirectional_) return;
  dh.setZero();
  dc.setZero();
  // Processing step k consumed position n-1-k; unwind from the last step.
  for (std::size_t k = n; k-- > 0;) {
    const std::size_t i = n - 1 - k;
    auto g = lstm_step_backward(encoded.backward_steps[k], d_states[i] + dh, dc, backward_, store);
    table_grad.col(encoded.symbols[i]) += g.d_input;
    dh = std::move(g.d_prev_hidden);
    dc = std::move(g.d_prev_cell);
  }
}

// ---- attention ------------------------------------------------------------

AdditiveAttention::AdditiveAttention(ParameterStore& store, const std::string& prefix, int query_size,
                                     int key_size, int attention_size) {
  query_ = store.add(prefix + ".query", attention_size, query_size);
  key_ = store.add(prefix + ".key", attention_size, key_size);
  bias_ = store.add(prefix + ".bias", attention_size, 1);
  score_ = store.add(prefix + ".score", attention_size, 1);
}

AdditiveAttention::Keys AdditiveAttention::project(const EncodedSource& encoded, const ParameterStore& store) const {
  Keys keys;
  keys.projected.reserve(encoded.states.size());
  for (const auto& s : encoded.states) keys.projected.push_back(linear_forward(s, store[key_].value, store[bias_].value.col(0)));
  return keys;
}

AdditiveAttention::Step AdditiveAttention::attend(const Vec& query, const EncodedSource& encoded, const Keys& keys,
                                                  const ParameterStore& store) const {
  const std::size_t n = encoded.states.size();
  if (n == 0) throw ConfigError("attention over zero encoded positions");
  const Mat& wq = store[query_].value;
  if (wq.cols() != query.size())
    throw ConfigError(fmt::format("attention query has size {}, expected {}", query.size(), wq.cols()));
  Step step;
  step.query = query;
  const Vec q = wq * query;
  const auto v = store[score_].value.col(0);
  Vec scores(static_cast<Eigen::Index>(n));
  step.activations.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    step.activations.push_back((q + keys.projected[i]).array().tanh().matrix());
    scores[static_cast<Eigen::Index>(i)] = v.dot(step.activations.back());
  }
  step.result.weights = softmax(scores);
  step.result.context = Vec::Zero(encoded.states.front().size());
  for (std::size_t i = 0; i < n; ++i)
    step.result.context += step.result.weights[static_cast<Eigen::Index>(i)] * encoded.states[i];
  return step;
}

Vec AdditiveAttention::backward(const Step& step, const EncodedSource& encoded, const Vec& d_context,
                                const Vec* d_weights_extra, std::vector<Vec>& d_states, std::vector<Vec>& d_keys,
                                ParameterStore& store) const {
  const std::size_t n = encoded.states.size();
  const Vec& alpha = step.result.weights;
  Vec d_alpha(static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) {
    const auto k = static_cast<Eigen::Index>(i);
    d_alpha[k] = d_context.dot(encoded.states[i]);
    d_states[i] += alpha[k] * d_context;
  }
  if (d_weights_extra) d_alpha += *d_weights_extra;
  const Vec d_scores = softmax_backward(alpha, d_alpha);

  const auto v = store[score_].value.col(0);
  auto dv = store[score_].grad.col(0);
  Vec dq = Vec::Zero(v.size());
  for (std::size_t i = 0; i < n; ++i) {
    const double ds = d_scores[static_cast<Eigen::Index>(i)];
    const Vec& a = step.activations[i];
    dv += ds * a;
    Vec dpre = ds * v.cwiseProduct((1.0 - a.array().square()).matrix());
    dq += dpre;
    d_keys[i] += dpre;
  }
  store[query_].grad.noalias() += dq * step.query.transpose();
  return store[query_].value.transpose() * dq;
}

void AdditiveAttention::backward_keys(const EncodedSource& encoded, std::span<const Vec> d_keys,
                                      std::vector<Vec>& d_states, ParameterStore& store) const {
  for (std::size_t i = 0; i < encoded.states.size(); ++i)
    d_states[i] += linear_backward(encoded.states[i], store[key_].value, d_keys[i], store[key_].grad,
                                   store[bias_].grad.col(0));
}

AttentionResult soft_attention(const Vec& decoder_state, const EncodedSource& encoded,
                               const AdditiveAttention& attention, const ParameterStore& store) {
  const auto keys = attention.project(encoded, store);
  return attention.attend(decoder_state, encoded, keys, store).result;
}

Vec pg_mixture(double p_gen, const Vec& vocab_dist, const AttentionResult& attention, std::span<const int> source) {
  if (!(p_gen >= 0.0 && p_gen <= 1.0)) throw ModelError(fmt::format("p_gen {} outside [0, 1]", p_gen));
  if (static_cast<std::size_t>(attention.weights.size()) != source.size())
    throw ModelError(fmt::format("attention has {} weights for {} source symbols", attention.weights.size(),
                                 source.size()));
  Vec out = p_gen * vocab_dist;
  for (std::size_t i = 0; i < source.size(); ++i) {
    const int w = source[i];
    if (w < 0 || w >= out.size()) throw ModelError(fmt::format("source symbol {} outside output vocabulary", w));
    out[w] += (1.0 - p_gen) * attention.weights[static_cast<Eigen::Index>(i)];
  }
  return out;
}

// ---- model contract -------------------------------------------------------

TransductionModel::TransductionModel(const ModelConfig& config, Vocabulary chars, Vocabulary features)
    : config_(config),
      chars_(std::move(chars)),
      features_(std::move(features)),
      store_(config.seed, config.init_scale) {
  if (config.hidden_size < 1 || config.embedding_size < 1)
    throw ConfigError("hidden and embedding sizes must be positive");
}

EncodedExample TransductionModel::encode_example(const TransductionExample& example) const {
  EncodedExample e;
  e.id = example.id;
  e.source = chars_.encode(example.source);
  if (!example.targets.empty()) e.target = chars_.encode(example.targets.front());
  for (const auto& f : example.features) {
    const int idx = features_.index(f);
    if (idx == Vocabulary::kUnk && !features_.contains(f)) ++unknown_features_;
    e.features.push_back(idx);
  }
  return e;
}

std::unique_ptr<TransductionModel> make_model(const ModelConfig& config, Vocabulary chars, Vocabulary features) {
  switch (config.kind) {
    case ModelKind::AttentionSeq2Seq: return std::make_unique<AttentionSeq2Seq>(config, std::move(chars), std::move(features));
    case ModelKind::PointerGenerator: return std::make_unique<PointerGenerator>(config, std::move(chars), std::move(features));
    case ModelKind::HardMonotonic: return std::make_unique<HardMonotonic>(config, std::move(chars), std::move(features));
  }
  throw ConfigError("unhandled model kind");
}

std::unique_ptr<TransductionModel> make_model(const ModelConfig& config, std::span<const TransductionExample> train) {
  if (train.empty()) throw DataError("cannot build vocabularies from an empty training set");
  return make_model(config, build_vocab(train, VocabSide::Both), build_vocab(train, VocabSide::Features));
}

Symbols greedy_decode(const TransductionModel& model, const TransductionExample& example) {
  return greedy_decode(model, example, TransductionModel::default_max_len(example.source.size()));
}

Symbols greedy_decode(const TransductionModel& model, const TransductionExample& example, std::size_t max_len) {
  if (max_len == 0) return {};
  const auto encoded = model.encode_example(example);
  return model.chars().decode(model.decode(encoded, max_len));
}

double train_epoch(TransductionModel& model, std::span<const EncodedExample> train, const AdamConfig& optimizer,
                   std::uint64_t epoch_seed) {
  if (train.empty()) throw DataError("empty training set");
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(epoch_seed);
  rng.shuffle(std::span(order));
  double total = 0.0;
  for (std::size_t i : order) {
    model.store().zero_grad();
    const double loss = model.loss_and_gradient(train[i]);
    if (!std::isfinite(loss)) throw TrainingError(fmt::format("non-finite loss on example '{}'", train[i].id));
    adam_update(model.store(), optimizer);
    total += loss;
  }
  return total / static_cast<double>(train.size());
}

double evaluate_accuracy(const TransductionModel& model, std::span<const TransductionExample> dataset) {
  if (dataset.empty()) throw DataError("cannot evaluate accuracy on an empty dataset");
  std::size_t correct = 0;
  for (const auto& ex : dataset)
    if (matches_any_reference(ex, greedy_decode(model, ex))) ++correct;
  return static_cast<double>(correct) / static_cast<double>(dataset.size());
}

// ---- checkpoints ----------------------------------------------------------

namespace {

constexpr char kModelMagic[4] = {'D', 'L', 'M', 'C'};

void put_le(std::ostream& out, std::uint64_t v, int bytes) {
  for (int i = 0; i < bytes; ++i) out.put(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint64_t get_le(std::istream& in, int bytes) {
  std::uint64_t v = 0;
  for (int i = 0; i < bytes; ++i) {
    const int c = in.get();
    if (c == std::char_traits<char>::eof()) throw DataError("truncated model checkpoint");
    v |= static_cast<std::uint64_t>(c & 0xff) << (8 * i);
  }
  return v;
}

}  // namespace

void save_model(const std::filesystem::path& path, const TransductionModel& model) {
  save_model(path, model, model.store().snapshot_values());
}

void save_model(const std::filesystem::path& path, const TransductionModel& model, std::span<const Mat> values) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError(fmt::format("cannot open '{}' for writing", path.string()));
  out.write(kModelMagic, 4);
  put_le(out, kModelFormatVersion, 4);
  const auto kind = to_string(model.kind());
  put_le(out, kind.size(), 4);
  out.write(kind.data(), static_cast<std::streamsize>(kind.size()));
  put_le(out, model.chars().hash(), 8);
  put_le(out, model.features().hash(), 8);
  // Copy with the requested values so the container stays self-describing.
  ParameterStore copy(model.store().seed());
  const auto params = model.store().parameters();
  for (std::size_t i = 0; i < params.size(); ++i) copy.add_value(params[i].name, values[i]);
  write_parameters(out, copy);
  if (!out) throw IoError(fmt::format("failed writing '{}'", path.string()));
}

void load_model_values(const std::filesystem::path& path, TransductionModel& model) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(fmt::format("cannot open model checkpoint '{}'", path.string()));
  char magic[4] = {};
  in.read(magic, 4);
  if (!in || !std::equal(magic, magic + 4, kModelMagic)) throw DataError(fmt::format("'{}' is not a model checkpoint", path.string()));
  if (get_le(in, 4) != kModelFormatVersion) throw DataError("unsupported model checkpoint version");
  std::string kind(get_le(in, 4), '\0');
  in.read(kind.data(), static_cast<std::streamsize>(kind.size()));
  if (parse_model_kind(kind) != model.kind())
    throw ModelError(fmt::format("checkpoint holds a {} model, expected {}", kind, to_string(model.kind())));
  if (get_le(in, 8) != model.chars().hash() || get_le(in, 8) != model.features().hash())
    throw ModelError("checkpoint vocabulary does not match the model");
  model.store().assign_values(read_parameters(in));
}

}  // namespace devlang
