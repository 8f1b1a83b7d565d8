#pragma once

// Three character-level transduction architectures behind one contract:
//   attention-seq2seq  LSTM encoder-decoder with additive soft attention
//   pointer-generator  the same plus a feature encoder and a copy mechanism
//   hard-monotonic     STEP/WRITE decoder attending to one source position

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "devlang/data.hpp"
#include "devlang/numkernel.hpp"

namespace devlang {

enum class ModelKind { AttentionSeq2Seq, PointerGenerator, HardMonotonic };

std::string_view to_string(ModelKind kind);
ModelKind parse_model_kind(std::string_view text);

struct ModelConfig {
  ModelKind kind = ModelKind::AttentionSeq2Seq;
  int hidden_size = 64;
  int embedding_size = 32;
  bool bidirectional = true;
  double init_scale = 0.1;
  std::uint64_t seed = 0;
};

// Indices into the model's vocabularies; `target` is the first reference.
struct EncodedExample {
  std::string id;
  std::vector<int> source;
  std::vector<int> features;
  std::vector<int> target;
};

struct EncodedSource {
  std::vector<Vec> states;
  std::vector<int> symbols;
  std::size_t length = 0;     // source symbols, excluding sentinels
  std::size_t sentinels = 0;  // trailing end-of-sequence positions

  // Forward caches for backpropagation.
  std::vector<LstmCache> forward_steps;
  std::vector<LstmCache> backward_steps;  // in processing order (last position first)
};

// Single-layer recurrent encoder; bidirectional states are summed.
class RecurrentEncoder {
 public:
  RecurrentEncoder() = default;
  RecurrentEncoder(ParameterStore& store, const std::string& prefix, int vocab_size, int embedding_size,
                   int hidden_size, bool bidirectional);

  // Empty input is a DataError.
  EncodedSource encode(std::span<const int> symbols, const ParameterStore& store,
                       bool eos_sentinel = false) const;
  // Like encode but accepts empty input (no states).
  EncodedSource run(std::span<const int> symbols, const ParameterStore& store, bool eos_sentinel = false) const;

  void backward(const EncodedSource& encoded, std::span<const Vec> d_states, ParameterStore& store) const;

  int hidden_size() const { return hidden_size_; }
  bool bidirectional() const { return bidirectional_; }

 private:
  ParamId embedding_;
  LstmParams forward_;
  LstmParams backward_;
  int hidden_size_ = 0;
  bool bidirectional_ = true;
};

struct AttentionResult {
  Vec weights;
  Vec context;
};

// score_i = v . tanh(W_q q + W_k s_i + b)
class AdditiveAttention {
 public:
  AdditiveAttention() = default;
  AdditiveAttention(ParameterStore& store, const std::string& prefix, int query_size, int key_size,
                    int attention_size);

  struct Keys {
    std::vector<Vec> projected;  // W_k s_i + b
  };

  struct Step {
    AttentionResult result;
    Vec query;
    std::vector<Vec> activations;  // tanh terms per position
  };

  Keys project(const EncodedSource& encoded, const ParameterStore& store) const;
  Step attend(const Vec& query, const EncodedSource& encoded, const Keys& keys, const ParameterStore& store) const;

  // Accumulates parameter gradients, adds into d_states / d_keys, returns dL/dquery.
  // `d_weights_extra` carries gradient reaching the weights other than through the context.
  Vec backward(const Step& step, const EncodedSource& encoded, const Vec& d_context, const Vec* d_weights_extra,
               std::vector<Vec>& d_states, std::vector<Vec>& d_keys, ParameterStore& store) const;
  void backward_keys(const EncodedSource& encoded, std::span<const Vec> d_keys, std::vector<Vec>& d_states,
                     ParameterStore& store) const;

 private:
  ParamId query_;
  ParamId key_;
  ParamId bias_;
  ParamId score_;
};

AttentionResult soft_attention(const Vec& decoder_state, const EncodedSource& encoded,
                               const AdditiveAttention& attention, const ParameterStore& store);

// P(w) = p_gen * vocab(w) + (1 - p_gen) * sum of attention on source positions holding w.
Vec pg_mixture(double p_gen, const Vec& vocab_dist, const AttentionResult& attention, std::span<const int> source);

class TransductionModel {
 public:
  TransductionModel(const ModelConfig& config, Vocabulary chars, Vocabulary features);
  virtual ~TransductionModel() = default;
  TransductionModel(const TransductionModel&) = delete;
  TransductionModel& operator=(const TransductionModel&) = delete;

  ModelKind kind() const { return config_.kind; }
  const ModelConfig& config() const { return config_; }
  ParameterStore& store() { return store_; }
  const ParameterStore& store() const { return store_; }
  const Vocabulary& chars() const { return chars_; }
  const Vocabulary& features() const { return features_; }

  // Maps symbols to indices; unknown feature tags become UNK and are counted.
  EncodedExample encode_example(const TransductionExample& example) const;
  std::size_t unknown_feature_count() const { return unknown_features_; }

  // Summed per-step cross-entropy of the target (followed by end-of-sequence).
  virtual double loss(const EncodedExample& example) const = 0;
  // Same value; adds gradients into the store (callers zero them).
  virtual double loss_and_gradient(const EncodedExample& example) = 0;
  // Greedy output indices, excluding the end symbol.
  virtual std::vector<int> decode(const EncodedExample& example, std::size_t max_len) const = 0;

  static std::size_t default_max_len(std::size_t source_length) { return 2 * source_length + 8; }

 protected:
  ModelConfig config_;
  Vocabulary chars_;
  Vocabulary features_;
  ParameterStore store_;
  mutable std::size_t unknown_features_ = 0;
};

class AttentionSeq2Seq final : public TransductionModel {
 public:
  AttentionSeq2Seq(const ModelConfig& config, Vocabulary chars, Vocabulary features);

  double loss(const EncodedExample& example) const override;
  double loss_and_gradient(const EncodedExample& example) override;
  std::vector<int> decode(const EncodedExample& example, std::size_t max_len) const override;

  EncodedSource encode(std::span<const int> source) const;
  const AdditiveAttention& attention() const { return attention_; }

 private:
  struct Forward;
  Forward forward(const EncodedExample& example) const;
  void backward(const Forward& fwd);

  RecurrentEncoder encoder_;
  ParamId target_embedding_;
  LstmParams decoder_;
  AdditiveAttention attention_;
  ParamId combine_weight_;
  ParamId combine_bias_;
  ParamId vocab_weight_;
  ParamId vocab_bias_;
};

class PointerGenerator final : public TransductionModel {
 public:
  PointerGenerator(const ModelConfig& config, Vocabulary chars, Vocabulary features);

  double loss(const EncodedExample& example) const override;
  double loss_and_gradient(const EncodedExample& example) override;
  std::vector<int> decode(const EncodedExample& example, std::size_t max_len) const override;

  // Teacher-forced output distributions, one per target step (including end).
  std::vector<Vec> output_distributions(const EncodedExample& example) const;
  // Teacher-forced generation probabilities, one per target step.
  std::vector<double> generation_probabilities(const EncodedExample& example) const;

 private:
  struct Forward;
  Forward forward(const EncodedExample& example, const std::vector<int>* forced, std::size_t max_len) const;
  void backward(const Forward& fwd);

  RecurrentEncoder encoder_;
  RecurrentEncoder feature_encoder_;
  ParamId target_embedding_;
  LstmParams decoder_;
  AdditiveAttention attention_;
  ParamId combine_weight_;
  ParamId combine_bias_;
  ParamId vocab_weight_;
  ParamId vocab_bias_;
  ParamId gate_weight_;
  ParamId gate_bias_;
};

struct HardMonotonicDecode {
  std::vector<int> output;
  std::vector<int> actions;
  std::vector<std::size_t> positions;  // attended source index before each action
  bool truncated = false;
};

class HardMonotonic final : public TransductionModel {
 public:
  HardMonotonic(const ModelConfig& config, Vocabulary chars, Vocabulary features);

  // Action indices: WRITE(c) is c's vocabulary index, end is Vocabulary::kEos,
  // STEP is step_action().
  int step_action() const { return chars_.size(); }
  int action_count() const { return chars_.size() + 1; }

  // Longest-common-subsequence alignment: aligned target symbols are written
  // after stepping to their source position, others at the current position.
  static std::vector<int> oracle_actions(std::span<const int> source, std::span<const int> target, int step_action);

  double loss(const EncodedExample& example) const override;
  double loss_and_gradient(const EncodedExample& example) override;
  std::vector<int> decode(const EncodedExample& example, std::size_t max_len) const override;
  HardMonotonicDecode decode_with_trace(std::span<const int> source, std::size_t max_len) const;

  double action_loss(std::span<const int> source, std::span<const int> actions) const;
  // Teacher-forced action distributions, one per action.
  std::vector<Vec> action_distributions(std::span<const int> source, std::span<const int> actions) const;

 private:
  struct Forward;
  Forward forward(std::span<const int> source, std::span<const int> actions, const std::string& id) const;
  void backward(const Forward& fwd);

  RecurrentEncoder encoder_;
  ParamId action_embedding_;
  LstmParams decoder_;
  ParamId output_weight_;
  ParamId output_bias_;
};

std::unique_ptr<TransductionModel> make_model(const ModelConfig& config, Vocabulary chars, Vocabulary features);

// Builds the shared character vocabulary (both sides) and the feature vocabulary.
std::unique_ptr<TransductionModel> make_model(const ModelConfig& config,
                                              std::span<const TransductionExample> train);

Symbols greedy_decode(const TransductionModel& model, const TransductionExample& example);
Symbols greedy_decode(const TransductionModel& model, const TransductionExample& example, std::size_t max_len);

// One seeded shuffled pass with one optimizer update per example; returns the
// mean per-example loss (measured before each update).
double train_epoch(TransductionModel& model, std::span<const EncodedExample> train, const AdamConfig& optimizer,
                   std::uint64_t epoch_seed);

double evaluate_accuracy(const TransductionModel& model, std::span<const TransductionExample> dataset);

// Index of the largest entry, lowest index on ties.
Eigen::Index argmax(const Vec& values);

inline constexpr std::uint32_t kModelFormatVersion = 1;

// Model checkpoint: header (kind, vocabulary hashes) + parameter container.
void save_model(const std::filesystem::path& path, const TransductionModel& model);
void save_model(const std::filesystem::path& path, const TransductionModel& model, std::span<const Mat> values);
void load_model_values(const std::filesystem::path& path, TransductionModel& model);

}  // namespace devlang
