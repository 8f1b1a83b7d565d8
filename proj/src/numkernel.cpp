#include "devlang/numkernel.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>

#include <fmt/format.h>

#include "devlang/errors.hpp"

namespace devlang {

// ---- ParameterStore -------------------------------------------------------

ParameterStore::ParameterStore(std::uint64_t seed, double init_scale)
    : seed_(seed), init_scale_(init_scale), rng_(seed) {}

ParamId ParameterStore::add(std::string name, Eigen::Index rows, Eigen::Index cols) {
  Mat value(rows, cols);
  // Column-major fill order keeps initialization reproducible.
  for (Eigen::Index j = 0; j < cols; ++j)
    for (Eigen::Index i = 0; i < rows; ++i) value(i, j) = rng_.uniform(-init_scale_, init_scale_);
  return add_value(std::move(name), std::move(value));
}

ParamId ParameterStore::add_value(std::string name, Mat value) {
  if (index_.contains(name)) throw ConfigError(fmt::format("duplicate parameter name '{}'", name));
  Parameter p;
  p.name = name;
  p.grad = Mat::Zero(value.rows(), value.cols());
  p.first_moment = Mat::Zero(value.rows(), value.cols());
  p.second_moment = Mat::Zero(value.rows(), value.cols());
  p.value = std::move(value);
  const std::size_t id = params_.size();
  params_.push_back(std::move(p));
  index_.emplace(std::move(name), id);
  return ParamId{id};
}

std::optional<ParamId> ParameterStore::find(std::string_view name) const {
  auto it = index_.find(name);
  if (it == index_.end()) return std::nullopt;
  return ParamId{it->second};
}

Parameter& ParameterStore::at(std::string_view name) {
  auto id = find(name);
  if (!id) throw ConfigError(fmt::format("unknown parameter '{}'", name));
  return params_[id->index];
}

const Parameter& ParameterStore::at(std::string_view name) const {
  auto id = find(name);
  if (!id) throw ConfigError(fmt::format("unknown parameter '{}'", name));
  return params_[id->index];
}

std::size_t ParameterStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += static_cast<std::size_t>(p.value.size());
  return n;
}

void ParameterStore::zero_grad() {
  for (auto& p : params_) p.grad.setZero();
}

std::vector<Mat> ParameterStore::snapshot_values() const {
  std::vector<Mat> out;
  out.reserve(params_.size());
  for (const auto& p : params_) out.push_back(p.value);
  return out;
}

void ParameterStore::restore_values(std::span<const Mat> values) {
  if (values.size() != params_.size()) throw ModelError("snapshot does not match parameter store");
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (values[i].rows() != params_[i].value.rows() || values[i].cols() != params_[i].value.cols())
      throw ModelError(fmt::format("snapshot shape mismatch for '{}'", params_[i].name));
    params_[i].value = values[i];
  }
}

void ParameterStore::assign_values(const ParameterStore& other) {
  if (other.size() != size())
    throw ModelError(fmt::format("parameter count mismatch: expected {}, got {}", size(), other.size()));
  for (auto& p : params_) {
    auto id = other.find(p.name);
    if (!id) throw ModelError(fmt::format("checkpoint lacks parameter '{}'", p.name));
    const Mat& v = other[*id].value;
    if (v.rows() != p.value.rows() || v.cols() != p.value.cols())
      throw ModelError(fmt::format("shape mismatch for '{}': expected {}x{}, got {}x{}", p.name,
                                   p.value.rows(), p.value.cols(), v.rows(), v.cols()));
    p.value = v;
  }
}

// ---- linear ---------------------------------------------------------------

Vec linear_forward(const Vec& input, const Mat& weight, const Eigen::Ref<const Vec>& bias) {
  if (weight.cols() != input.size() || weight.rows() != bias.size())
    throw ConfigError(fmt::format("linear: weight {}x{} incompatible with input {} / bias {}",
                                  weight.rows(), weight.cols(), input.size(), bias.size()));
  return weight * input + bias;
}

Vec linear_backward(const Vec& input, const Mat& weight, const Vec& d_output, Mat& d_weight,
                    Eigen::Ref<Vec> d_bias) {
  d_weight.noalias() += d_output * input.transpose();
  d_bias += d_output;
  return weight.transpose() * d_output;
}

// ---- LSTM -----------------------------------------------------------------

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

LstmParams add_lstm(ParameterStore& store, const std::string& prefix, Eigen::Index input_size,
                    Eigen::Index hidden_size) {
  LstmParams p;
  p.weight = store.add(prefix + ".weight", 4 * hidden_size, input_size + hidden_size);
  p.bias = store.add(prefix + ".bias", 4 * hidden_size, 1);
  p.input_size = input_size;
  p.hidden_size = hidden_size;
  return p;
}

LstmCache lstm_step(const Vec& input, const Vec& prev_hidden, const Vec& prev_cell, const Mat& weight,
                    const Eigen::Ref<const Vec>& bias) {
  const Eigen::Index hidden = prev_hidden.size();
  if (prev_cell.size() != hidden || weight.rows() != 4 * hidden || bias.size() != 4 * hidden ||
      weight.cols() != input.size() + hidden)
    throw ConfigError(fmt::format("lstm_step: weight {}x{} incompatible with input {} / hidden {}",
                                  weight.rows(), weight.cols(), input.size(), hidden));
  LstmCache c;
  c.input = input;
  c.prev_hidden = prev_hidden;
  c.prev_cell = prev_cell;
  Vec pre = bias;
  pre.noalias() += weight.leftCols(input.size()) * input;
  pre.noalias() += weight.rightCols(hidden) * prev_hidden;
  auto logistic = [](double v) { return sigmoid(v); };
  c.in_gate = pre.segment(0, hidden).unaryExpr(logistic);
  c.forget_gate = pre.segment(hidden, hidden).unaryExpr(logistic);
  c.candidate = pre.segment(2 * hidden, hidden).array().tanh();
  c.out_gate = pre.segment(3 * hidden, hidden).unaryExpr(logistic);
  c.cell = c.forget_gate.cwiseProduct(prev_cell) + c.in_gate.cwiseProduct(c.candidate);
  c.cell_tanh = c.cell.array().tanh();
  c.hidden = c.out_gate.cwiseProduct(c.cell_tanh);
  return c;
}

LstmCache lstm_step(const Vec& input, const Vec& prev_hidden, const Vec& prev_cell,
                    const LstmParams& params, const ParameterStore& store) {
  return lstm_step(input, prev_hidden, prev_cell, store[params.weight].value,
                   store[params.bias].value.col(0));
}

LstmStepGradients lstm_step_backward(const LstmCache& c, const Vec& d_hidden, const Vec& d_cell,
                                     const LstmParams& params, ParameterStore& store) {
  const Eigen::Index hidden = c.hidden.size();
  const Eigen::Index in = c.input.size();
  auto& weight = store[params.weight];
  auto& bias = store[params.bias];

  const Vec d_out = d_hidden.cwiseProduct(c.cell_tanh);
  const Vec dc = d_cell + d_hidden.cwiseProduct(c.out_gate).cwiseProduct(
                              (1.0 - c.cell_tanh.array().square()).matrix());

  Vec dz(4 * hidden);
  dz.segment(0, hidden) = dc.cwiseProduct(c.candidate).cwiseProduct(
      c.in_gate.cwiseProduct((1.0 - c.in_gate.array()).matrix()));
  dz.segment(hidden, hidden) = dc.cwiseProduct(c.prev_cell).cwiseProduct(
      c.forget_gate.cwiseProduct((1.0 - c.forget_gate.array()).matrix()));
  dz.segment(2 * hidden, hidden) =
      dc.cwiseProduct(c.in_gate).cwiseProduct((1.0 - c.candidate.array().square()).matrix());
  dz.segment(3 * hidden, hidden) =
      d_out.cwiseProduct(c.out_gate.cwiseProduct((1.0 - c.out_gate.array()).matrix()));

  weight.grad.leftCols(in).noalias() += dz * c.input.transpose();
  weight.grad.rightCols(hidden).noalias() += dz * c.prev_hidden.transpose();
  bias.grad.col(0) += dz;

  LstmStepGradients g;
  g.d_input.noalias() = weight.value.leftCols(in).transpose() * dz;
  g.d_prev_hidden.noalias() = weight.value.rightCols(hidden).transpose() * dz;
  g.d_prev_cell = dc.cwiseProduct(c.forget_gate);
  return g;
}

// ---- softmax / loss -------------------------------------------------------

Vec softmax(const Vec& scores) {
  if (scores.size() == 0) throw ConfigError("softmax of an empty vector");
  const double top = scores.maxCoeff();
  Vec e = (scores.array() - top).exp();
  return e / e.sum();
}

Vec softmax_backward(const Vec& probs, const Vec& d_probs) {
  const double inner = probs.dot(d_probs);
  return probs.cwiseProduct((d_probs.array() - inner).matrix());
}

double cross_entropy(const Vec& predicted, Eigen::Index target_index, double floor) {
  if (target_index < 0 || target_index >= predicted.size())
    throw DataError(fmt::format("cross_entropy: target index {} outside [0, {})", target_index,
                                predicted.size()));
  return -std::log(std::max(predicted[target_index], floor));
}

Vec softmax_cross_entropy_grad(const Vec& probs, Eigen::Index target_index, double floor) {
  if (probs[target_index] < floor) return Vec::Zero(probs.size());
  Vec d = probs;
  d[target_index] -= 1.0;
  return d;
}

// ---- optimizer ------------------------------------------------------------

void adam_update(ParameterStore& store, const AdamConfig& config) {
  for (const auto& p : store.params_) {
    if (!p.grad.allFinite()) throw TrainingError(fmt::format("non-finite gradient in parameter '{}'", p.name));
  }
  const std::uint64_t t = ++store.optimizer_steps_;
  const double correction1 = 1.0 - std::pow(config.beta1, static_cast<double>(t));
  const double correction2 = 1.0 - std::pow(config.beta2, static_cast<double>(t));
  for (auto& p : store.params_) {
    p.first_moment = config.beta1 * p.first_moment + (1.0 - config.beta1) * p.grad;
    p.second_moment =
        config.beta2 * p.second_moment + (1.0 - config.beta2) * p.grad.cwiseProduct(p.grad);
    p.value.array() -= config.step_size * (p.first_moment.array() / correction1) /
                       ((p.second_moment.array() / correction2).sqrt() + config.epsilon);
    if (!p.value.allFinite())
      throw TrainingError(fmt::format("non-finite value in parameter '{}' after update", p.name));
  }
}

// ---- gradient check -------------------------------------------------------

double relative_error(double analytic, double numeric) {
  const double scale = std::max({std::abs(analytic), std::abs(numeric), kRelativeErrorFloor});
  return std::abs(analytic - numeric) / scale;
}

GradientCheckReport gradient_check(ParameterStore& store, const std::function<double()>& loss,
                                   const std::function<void()>& backprop, std::size_t probes,
                                   std::uint64_t seed, double step) {
  std::vector<Mat> saved_grads;
  for (const auto& p : store.parameters()) saved_grads.push_back(p.grad);

  backprop();
  std::vector<Mat> analytic;
  for (const auto& p : store.parameters()) analytic.push_back(p.grad);

  GradientCheckReport report;
  std::vector<double> worst(store.size(), -1.0);
  Rng rng(seed);
  auto params = store.parameters();
  for (std::size_t k = 0; k < probes && !params.empty(); ++k) {
    const std::size_t pi = k % params.size();
    auto& p = params[pi];
    const auto coord = static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(p.value.size())));
    const double original = p.value.data()[coord];
    p.value.data()[coord] = original + step;
    const double plus = loss();
    p.value.data()[coord] = original - step;
    const double minus = loss();
    p.value.data()[coord] = original;
    const double numeric = (plus - minus) / (2.0 * step);
    const double err = relative_error(analytic[pi].data()[coord], numeric);
    worst[pi] = std::max(worst[pi], err);
    report.max_relative_error = std::max(report.max_relative_error, err);
    ++report.probes;
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (worst[i] >= 0.0) report.per_parameter.emplace_back(params[i].name, worst[i]);
    params[i].grad = saved_grads[i];
  }
  return report;
}

// ---- checkpoint container -------------------------------------------------

namespace {

constexpr std::array<char, 4> kMagic = {'D', 'L', 'P', 'S'};

void put_u32(std::ostream& out, std::uint32_t v) {
  std::array<char, 4> b{};
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  out.write(b.data(), b.size());
}

void put_u64(std::ostream& out, std::uint64_t v) {
  std::array<char, 8> b{};
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  out.write(b.data(), b.size());
}

std::uint64_t get_le(std::istream& in, int bytes) {
  std::array<unsigned char, 8> b{};
  in.read(reinterpret_cast<char*>(b.data()), bytes);
  if (!in) throw DataError("truncated parameter container");
  std::uint64_t v = 0;
  for (int i = 0; i < bytes; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

}  // namespace

void write_parameters(std::ostream& out, const ParameterStore& store) {
  out.write(kMagic.data(), kMagic.size());
  put_u32(out, kParameterFormatVersion);
  put_u64(out, store.seed());
  put_u32(out, static_cast<std::uint32_t>(store.size()));
  for (const auto& p : store.parameters()) {
    put_u32(out, static_cast<std::uint32_t>(p.name.size()));
    out.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    put_u64(out, static_cast<std::uint64_t>(p.value.rows()));
    put_u64(out, static_cast<std::uint64_t>(p.value.cols()));
    // Column-major raw values.
    for (Eigen::Index i = 0; i < p.value.size(); ++i) put_u64(out, std::bit_cast<std::uint64_t>(p.value.data()[i]));
  }
  if (!out) throw IoError("failed writing parameter container");
}

ParameterStore read_parameters(std::istream& in) {
  std::array<char, 4> magic{};
  in.read(magic.data(), magic.size());
  if (!in || magic != kMagic) throw DataError("not a parameter container (bad magic)");
  const auto version = static_cast<std::uint32_t>(get_le(in, 4));
  if (version != kParameterFormatVersion)
    throw DataError(fmt::format("unsupported parameter container version {}", version));
  ParameterStore store(get_le(in, 8));
  const auto count = static_cast<std::uint32_t>(get_le(in, 4));
  for (std::uint32_t k = 0; k < count; ++k) {
    const auto name_len = static_cast<std::uint32_t>(get_le(in, 4));
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    const auto rows = static_cast<Eigen::Index>(get_le(in, 8));
    const auto cols = static_cast<Eigen::Index>(get_le(in, 8));
    Mat value(rows, cols);
    for (Eigen::Index i = 0; i < value.size(); ++i) value.data()[i] = std::bit_cast<double>(get_le(in, 8));
    store.add_value(std::move(name), std::move(value));
  }
  return store;
}

void save_parameters(const std::filesystem::path& path, const ParameterStore& store) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError(fmt::format("cannot open '{}' for writing", path.string()));
  write_parameters(out, store);
}

ParameterStore load_parameters(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(fmt::format("cannot open checkpoint '{}'", path.string()));
  return read_parameters(in);
}

}  // namespace devlang
