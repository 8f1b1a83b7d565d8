#pragma once

// Dense 64-bit kernel with hand-written backward passes for every layer the
// three transduction models use.

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "devlang/rng.hpp"

namespace devlang {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

struct AdamConfig;

struct ParamId {
  std::size_t index = 0;
};

struct Parameter {
  std::string name;
  Mat value;
  Mat grad;
  // Adaptive-moment buffers, same shape as value.
  Mat first_moment;
  Mat second_moment;
};

class ParameterStore {
 public:
  explicit ParameterStore(std::uint64_t seed = 0, double init_scale = 0.1);

  // Adds a parameter drawn uniformly from [-init_scale, init_scale].
  ParamId add(std::string name, Eigen::Index rows, Eigen::Index cols);
  ParamId add_value(std::string name, Mat value);

  Parameter& operator[](ParamId id) { return params_[id.index]; }
  const Parameter& operator[](ParamId id) const { return params_[id.index]; }

  std::optional<ParamId> find(std::string_view name) const;
  Parameter& at(std::string_view name);
  const Parameter& at(std::string_view name) const;

  std::span<Parameter> parameters() { return params_; }
  std::span<const Parameter> parameters() const { return params_; }
  std::size_t size() const { return params_.size(); }
  std::size_t scalar_count() const;

  std::uint64_t seed() const { return seed_; }
  std::uint64_t optimizer_steps() const { return optimizer_steps_; }

  void zero_grad();

  // Copies of values only; used for in-memory checkpoints.
  std::vector<Mat> snapshot_values() const;
  void restore_values(std::span<const Mat> values);
  // Replaces values from a store with identical names and shapes.
  void assign_values(const ParameterStore& other);

 private:
  friend void adam_update(ParameterStore&, const AdamConfig&);

  std::vector<Parameter> params_;
  std::map<std::string, std::size_t, std::less<>> index_;
  std::uint64_t seed_;
  double init_scale_;
  Rng rng_;
  std::uint64_t optimizer_steps_ = 0;
};

// ---- linear ---------------------------------------------------------------

Vec linear_forward(const Vec& input, const Mat& weight, const Eigen::Ref<const Vec>& bias);

// Accumulates into d_weight/d_bias and returns d_input.
Vec linear_backward(const Vec& input, const Mat& weight, const Vec& d_output, Mat& d_weight,
                    Eigen::Ref<Vec> d_bias);

// ---- LSTM -----------------------------------------------------------------

// Gates stacked as [input; forget; candidate; output] in a single
// (4H x (I + H)) weight applied to [x; h_prev].
struct LstmParams {
  ParamId weight;
  ParamId bias;
  Eigen::Index input_size = 0;
  Eigen::Index hidden_size = 0;
};

LstmParams add_lstm(ParameterStore& store, const std::string& prefix, Eigen::Index input_size,
                    Eigen::Index hidden_size);

struct LstmCache {
  Vec input;
  Vec prev_hidden;
  Vec prev_cell;
  Vec in_gate;
  Vec forget_gate;
  Vec candidate;
  Vec out_gate;
  Vec cell;
  Vec cell_tanh;
  Vec hidden;
};

LstmCache lstm_step(const Vec& input, const Vec& prev_hidden, const Vec& prev_cell, const Mat& weight,
                    const Eigen::Ref<const Vec>& bias);
LstmCache lstm_step(const Vec& input, const Vec& prev_hidden, const Vec& prev_cell,
                    const LstmParams& params, const ParameterStore& store);

struct LstmStepGradients {
  Vec d_input;
  Vec d_prev_hidden;
  Vec d_prev_cell;
};

LstmStepGradients lstm_step_backward(const LstmCache& cache, const Vec& d_hidden, const Vec& d_cell,
                                     const LstmParams& params, ParameterStore& store);

double sigmoid(double x);

// ---- softmax / loss -------------------------------------------------------

Vec softmax(const Vec& scores);
// Jacobian-vector product of softmax: returns dL/dscores given dL/dprobs.
Vec softmax_backward(const Vec& probs, const Vec& d_probs);

inline constexpr double kProbabilityFloor = 1e-12;

double cross_entropy(const Vec& predicted, Eigen::Index target_index, double floor = kProbabilityFloor);

// dL/dscores for cross_entropy(softmax(scores)); zero when the floor is active.
Vec softmax_cross_entropy_grad(const Vec& probs, Eigen::Index target_index,
                               double floor = kProbabilityFloor);

// ---- optimizer ------------------------------------------------------------

struct AdamConfig {
  double step_size = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

void adam_update(ParameterStore& store, const AdamConfig& config);

// ---- gradient check -------------------------------------------------------

struct GradientCheckReport {
  double max_relative_error = 0.0;
  std::size_t probes = 0;
  // Worst error per probed parameter, in store order.
  std::vector<std::pair<std::string, double>> per_parameter;
};

// Probes cycle over parameters in store order with a random coordinate each;
// `backprop` must zero and fill the gradients of `store`. Values and gradients
// are restored before returning.
GradientCheckReport gradient_check(ParameterStore& store, const std::function<double()>& loss,
                                   const std::function<void()>& backprop, std::size_t probes,
                                   std::uint64_t seed, double step = 1e-5);

// |a - n| / max(|a|, |n|, floor). Central differences at step 1e-5 carry
// roughly 1e-10 of roundoff, so smaller gradients are compared absolutely.
inline constexpr double kRelativeErrorFloor = 1e-6;
double relative_error(double analytic, double numeric);

// ---- checkpoint container -------------------------------------------------

inline constexpr std::uint32_t kParameterFormatVersion = 1;

void write_parameters(std::ostream& out, const ParameterStore& store);
ParameterStore read_parameters(std::istream& in);

void save_parameters(const std::filesystem::path& path, const ParameterStore& store);
ParameterStore load_parameters(const std::filesystem::path& path);

}  // namespace devlang
