#pragma once

// Dense-network numerical core: small MLPs with analytic gradients, Adam,
// and a diagonal-Gaussian action head. Everything runs in double precision.
// Forward/backward are pure functions over parameter snapshots; updates are
// applied between rollout phases by a single writer.

#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "rtw/rng.hpp"

namespace rtw {

using Eigen::MatrixXd;
using Eigen::VectorXd;

enum class Activation { kTanh, kRelu };

inline std::string activation_name(Activation a) {
  return a == Activation::kTanh ? "tanh" : "relu";
}

inline Activation activation_from_name(const std::string& name) {
  if (name == "tanh") return Activation::kTanh;
  if (name == "relu") return Activation::kRelu;
  throw std::invalid_argument("unknown activation: " + name);
}

constexpr double kLogStdMin = -20.0;
constexpr double kLogStdMax = 2.0;

// Gradient (or Adam moment) holder shaped like MlpParams.
struct MlpGrads {
  std::vector<MatrixXd> weights;
  std::vector<VectorXd> biases;
  VectorXd log_std;

  void set_zero() {
    for (auto& w : weights) w.setZero();
    for (auto& b : biases) b.setZero();
    log_std.setZero();
  }

  bool is_finite() const {
    for (const auto& w : weights)
      if (!w.allFinite()) return false;
    for (const auto& b : biases)
      if (!b.allFinite()) return false;
    return log_std.size() == 0 || log_std.allFinite();
  }
};

// Fully-connected network parameters. weights[l] has shape (out_l, in_l) and
// the shapes chain: cols(weights[l+1]) == rows(weights[l]). Hidden layers
// apply the per-layer activation; the output layer is linear. log_std is a
// state-independent vector used only by policy heads (empty otherwise).
struct MlpParams {
  std::vector<int> layer_sizes;
  std::vector<MatrixXd> weights;
  std::vector<VectorXd> biases;
  std::vector<Activation> activations;  // one per hidden layer
  VectorXd log_std;

  int num_layers() const { return static_cast<int>(weights.size()); }
  int input_dim() const { return layer_sizes.front(); }
  int output_dim() const { return layer_sizes.back(); }

  bool is_finite() const {
    for (const auto& w : weights)
      if (!w.allFinite()) return false;
    for (const auto& b : biases)
      if (!b.allFinite()) return false;
    return log_std.size() == 0 || log_std.allFinite();
  }

  MlpGrads zero_grads() const {
    MlpGrads g;
    for (const auto& w : weights) g.weights.push_back(MatrixXd::Zero(w.rows(), w.cols()));
    for (const auto& b : biases) g.biases.push_back(VectorXd::Zero(b.size()));
    g.log_std = VectorXd::Zero(log_std.size());
    return g;
  }
};

namespace detail {

inline void check_shapes(const MlpParams& p) {
  if (p.layer_sizes.size() < 2)
    throw std::invalid_argument("MlpParams: need at least input and output layers");
  if (p.weights.size() != p.layer_sizes.size() - 1 || p.biases.size() != p.weights.size())
    throw std::invalid_argument("MlpParams: layer count mismatch");
  for (std::size_t l = 0; l < p.weights.size(); ++l) {
    if (p.weights[l].rows() != p.layer_sizes[l + 1] || p.weights[l].cols() != p.layer_sizes[l])
      throw std::invalid_argument(
          "MlpParams: weight shape mismatch at layer " + std::to_string(l) + ": expected " +
          std::to_string(p.layer_sizes[l + 1]) + "x" + std::to_string(p.layer_sizes[l]) +
          ", actual " + std::to_string(p.weights[l].rows()) + "x" +
          std::to_string(p.weights[l].cols()));
    if (p.biases[l].size() != p.layer_sizes[l + 1])
      throw std::invalid_argument("MlpParams: bias size mismatch at layer " + std::to_string(l));
  }
}

inline MatrixXd apply_activation(const MatrixXd& z, Activation act) {
  if (act == Activation::kTanh) return z.array().tanh();
  return z.array().max(0.0);
}

// Derivative expressed through the post-activation value.
inline MatrixXd activation_grad(const MatrixXd& a, Activation act) {
  if (act == Activation::kTanh) return 1.0 - a.array().square();
  return (a.array() > 0.0).cast<double>();
}

}  // namespace detail

// Orthogonal initialization: Q factor of a Gaussian matrix, sign-fixed by the
// diagonal of R, scaled by `gain`. Biases start at zero.
inline MatrixXd orthogonal_matrix(int rows, int cols, double gain, Rng& rng) {
  const int big = std::max(rows, cols), small = std::min(rows, cols);
  MatrixXd a(big, small);
  for (int i = 0; i < big; ++i)
    for (int j = 0; j < small; ++j) a(i, j) = rng.normal();
  Eigen::HouseholderQR<MatrixXd> qr(a);
  MatrixXd q = qr.householderQ() * MatrixXd::Identity(big, small);
  MatrixXd r = qr.matrixQR().topRows(small).triangularView<Eigen::Upper>();
  for (int j = 0; j < small; ++j)
    if (r(j, j) < 0) q.col(j) = -q.col(j);
  MatrixXd w = (rows >= cols) ? q : MatrixXd(q.transpose());
  return gain * w;
}

// Builds an MLP with orthogonal-scaled initialization: gain sqrt(2) on hidden
// layers, `output_gain` on the last layer (0.01 for policy heads, 1.0 for
// value heads). `policy_head` attaches a zero-initialized log_std vector.
inline MlpParams make_mlp(const std::vector<int>& layer_sizes, Activation activation, Rng& rng,
                          double output_gain = 1.0, bool policy_head = false) {
  if (layer_sizes.size() < 2)
    throw std::invalid_argument("make_mlp: need at least input and output sizes");
  for (int s : layer_sizes)
    if (s <= 0) throw std::invalid_argument("make_mlp: layer sizes must be positive");
  MlpParams p;
  p.layer_sizes = layer_sizes;
  const std::size_t n_affine = layer_sizes.size() - 1;
  for (std::size_t l = 0; l < n_affine; ++l) {
    const bool last = (l == n_affine - 1);
    const double gain = last ? output_gain : std::sqrt(2.0);
    p.weights.push_back(orthogonal_matrix(layer_sizes[l + 1], layer_sizes[l], gain, rng));
    p.biases.push_back(VectorXd::Zero(layer_sizes[l + 1]));
    if (!last) p.activations.push_back(activation);
  }
  if (policy_head) p.log_std = VectorXd::Zero(layer_sizes.back());
  return p;
}

// Post-activation outputs per layer, for reuse by the backward pass.
// activations[0] is the input batch; activations[L] the (linear) output.
struct ForwardCache {
  std::vector<MatrixXd> activations;
  const MatrixXd& output() const { return activations.back(); }
};

// Batched forward pass: rows of `input` are samples.
inline ForwardCache mlp_forward_cached(const MlpParams& params, const MatrixXd& input) {
  detail::check_shapes(params);
  if (input.cols() != params.input_dim())
    throw std::invalid_argument("mlp_forward: input size mismatch: expected " +
                                std::to_string(params.input_dim()) + ", actual " +
                                std::to_string(input.cols()));
  ForwardCache cache;
  cache.activations.reserve(params.num_layers() + 1);
  cache.activations.push_back(input);
  for (int l = 0; l < params.num_layers(); ++l) {
    MatrixXd z = cache.activations.back() * params.weights[l].transpose();
    z.rowwise() += params.biases[l].transpose();
    if (l + 1 < params.num_layers())
      cache.activations.push_back(detail::apply_activation(z, params.activations[l]));
    else
      cache.activations.push_back(std::move(z));
  }
  return cache;
}

inline MatrixXd mlp_forward_batch(const MlpParams& params, const MatrixXd& input) {
  return mlp_forward_cached(params, input).output();
}

inline VectorXd mlp_forward(const MlpParams& params, const VectorXd& input) {
  if (input.size() != params.input_dim())
    throw std::invalid_argument("mlp_forward: input size mismatch: expected " +
                                std::to_string(params.input_dim()) + ", actual " +
                                std::to_string(input.size()));
  return mlp_forward_batch(params, input.transpose()).row(0).transpose();
}

// Analytic gradients of sum_i output_i . output_grads_i with respect to every
// parameter, accumulated into `grads` (log_std is untouched; it does not feed
// the network). Returns the gradient with respect to the input batch.
inline MatrixXd mlp_backward_batch(const MlpParams& params, const ForwardCache& cache,
                                   const MatrixXd& output_grads, MlpGrads& grads) {
  if (output_grads.cols() != params.output_dim() ||
      output_grads.rows() != cache.activations.front().rows())
    throw std::invalid_argument("mlp_backward: output_grad shape mismatch: expected " +
                                std::to_string(cache.activations.front().rows()) + "x" +
                                std::to_string(params.output_dim()));
  MatrixXd delta = output_grads;
  for (int l = params.num_layers() - 1; l >= 0; --l) {
    if (l < params.num_layers() - 1)
      delta = delta.cwiseProduct(detail::activation_grad(cache.activations[l + 1],
                                                         params.activations[l]));
    grads.weights[l].noalias() += delta.transpose() * cache.activations[l];
    grads.biases[l].noalias() += delta.colwise().sum().transpose();
    if (l > 0) delta = delta * params.weights[l];
  }
  return delta * params.weights[0];
}

inline MlpGrads mlp_backward(const MlpParams& params, const VectorXd& input,
                             const VectorXd& output_grad) {
  if (output_grad.size() != params.output_dim())
    throw std::invalid_argument("mlp_backward: output_grad size mismatch: expected " +
                                std::to_string(params.output_dim()) + ", actual " +
                                std::to_string(output_grad.size()));
  ForwardCache cache = mlp_forward_cached(params, input.transpose());
  MlpGrads grads = params.zero_grads();
  mlp_backward_batch(params, cache, output_grad.transpose(), grads);
  return grads;
}

struct AdamState {
  double learning_rate = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  long step_count = 0;
  MlpGrads first_moment;
  MlpGrads second_moment;
};

inline AdamState make_adam(const MlpParams& params, double learning_rate) {
  AdamState adam;
  adam.learning_rate = learning_rate;
  adam.first_moment = params.zero_grads();
  adam.second_moment = params.zero_grads();
  return adam;
}

namespace detail {

template <typename T>
void adam_apply(T& param, T& m, T& v, const T& g, const AdamState& a, double bc1, double bc2) {
  m = a.beta1 * m + (1.0 - a.beta1) * g;
  v = a.beta2 * v.array().matrix() + (1.0 - a.beta2) * g.array().square().matrix();
  param.array() -=
      a.learning_rate * (m.array() / bc1) / ((v.array() / bc2).sqrt() + a.epsilon);
}

}  // namespace detail

// Standard Adam update with bias correction. Throws on non-finite gradients
// so training aborts with a diagnostic instead of corrupting parameters.
inline void adam_step(AdamState& adam, MlpParams& params, const MlpGrads& grads) {
  if (!grads.is_finite())
    throw std::runtime_error("adam_step: non-finite gradient, aborting update");
  adam.step_count += 1;
  const double bc1 = 1.0 - std::pow(adam.beta1, adam.step_count);
  const double bc2 = 1.0 - std::pow(adam.beta2, adam.step_count);
  for (std::size_t l = 0; l < params.weights.size(); ++l) {
    detail::adam_apply(params.weights[l], adam.first_moment.weights[l],
                       adam.second_moment.weights[l], grads.weights[l], adam, bc1, bc2);
    detail::adam_apply(params.biases[l], adam.first_moment.biases[l],
                       adam.second_moment.biases[l], grads.biases[l], adam, bc1, bc2);
  }
  if (params.log_std.size() > 0) {
    detail::adam_apply(params.log_std, adam.first_moment.log_std, adam.second_moment.log_std,
                       grads.log_std, adam, bc1, bc2);
    params.log_std = params.log_std.cwiseMax(kLogStdMin).cwiseMin(kLogStdMax);
  }
  if (!params.is_finite())
    throw std::runtime_error("adam_step: parameters became non-finite");
}

// -- diagonal Gaussian action head -- //

struct GaussianAction {
  VectorXd mean;
  VectorXd log_std;
  VectorXd sample;
  double log_prob = 0.0;
};

inline double gaussian_log_prob(const VectorXd& mean, const VectorXd& log_std,
                                const VectorXd& x) {
  if (mean.size() != log_std.size() || mean.size() != x.size())
    throw std::invalid_argument("gaussian_log_prob: size mismatch");
  double lp = 0.0;
  for (int k = 0; k < mean.size(); ++k) {
    const double ls = std::clamp(log_std[k], kLogStdMin, kLogStdMax);
    const double z = (x[k] - mean[k]) / std::exp(ls);
    lp += -0.5 * z * z - ls - 0.5 * std::log(2.0 * M_PI);
  }
  return lp;
}

inline double gaussian_entropy(const VectorXd& log_std) {
  double h = 0.0;
  for (int k = 0; k < log_std.size(); ++k)
    h += std::clamp(log_std[k], kLogStdMin, kLogStdMax) + 0.5 * std::log(2.0 * M_PI * M_E);
  return h;
}

inline GaussianAction gaussian_sample(const VectorXd& mean, const VectorXd& log_std, Rng& rng) {
  if (mean.size() != log_std.size())
    throw std::invalid_argument("gaussian_sample: size mismatch");
  GaussianAction a;
  a.mean = mean;
  a.log_std = log_std.cwiseMax(kLogStdMin).cwiseMin(kLogStdMax);
  a.sample.resize(mean.size());
  for (int k = 0; k < mean.size(); ++k)
    a.sample[k] = mean[k] + std::exp(a.log_std[k]) * rng.normal();
  a.log_prob = gaussian_log_prob(a.mean, a.log_std, a.sample);
  return a;
}

// -- parameter checkpoint (JSON) -- //

inline nlohmann::json matrix_to_json(const MatrixXd& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (int i = 0; i < m.rows(); ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (int j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline MatrixXd matrix_from_json(const nlohmann::json& j) {
  const int rows = static_cast<int>(j.size());
  const int cols = rows > 0 ? static_cast<int>(j[0].size()) : 0;
  MatrixXd m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int c = 0; c < cols; ++c) m(i, c) = j[i][c].get<double>();
  return m;
}

inline nlohmann::json vector_to_json(const VectorXd& v) {
  nlohmann::json out = nlohmann::json::array();
  for (int i = 0; i < v.size(); ++i) out.push_back(v[i]);
  return out;
}

inline VectorXd vector_from_json(const nlohmann::json& j) {
  VectorXd v(j.size());
  for (std::size_t i = 0; i < j.size(); ++i) v[static_cast<int>(i)] = j[i].get<double>();
  return v;
}

inline nlohmann::json grads_to_json(const MlpGrads& g) {
  nlohmann::json j;
  j["weights"] = nlohmann::json::array();
  for (const auto& w : g.weights) j["weights"].push_back(matrix_to_json(w));
  j["biases"] = nlohmann::json::array();
  for (const auto& b : g.biases) j["biases"].push_back(vector_to_json(b));
  j["log_std"] = vector_to_json(g.log_std);
  return j;
}

inline MlpGrads grads_from_json(const nlohmann::json& j) {
  MlpGrads g;
  for (const auto& w : j.at("weights")) g.weights.push_back(matrix_from_json(w));
  for (const auto& b : j.at("biases")) g.biases.push_back(vector_from_json(b));
  g.log_std = vector_from_json(j.at("log_std"));
  return g;
}

inline nlohmann::json params_to_json(const MlpParams& p, const AdamState* adam = nullptr) {
  nlohmann::json j;
  j["layer_sizes"] = p.layer_sizes;
  nlohmann::json acts = nlohmann::json::array();
  for (Activation a : p.activations) acts.push_back(activation_name(a));
  j["activation"] = std::move(acts);
  j["weights"] = nlohmann::json::array();
  for (const auto& w : p.weights) j["weights"].push_back(matrix_to_json(w));
  j["biases"] = nlohmann::json::array();
  for (const auto& b : p.biases) j["biases"].push_back(vector_to_json(b));
  j["log_std"] = vector_to_json(p.log_std);
  if (adam) {
    j["adam"] = {{"moments",
                  {{"first", grads_to_json(adam->first_moment)},
                   {"second", grads_to_json(adam->second_moment)}}},
                 {"step_count", adam->step_count},
                 {"hyperparameters",
                  {{"learning_rate", adam->learning_rate},
                   {"beta1", adam->beta1},
                   {"beta2", adam->beta2},
                   {"epsilon", adam->epsilon}}}};
  }
  return j;
}

inline MlpParams params_from_json(const nlohmann::json& j, AdamState* adam = nullptr) {
  MlpParams p;
  p.layer_sizes = j.at("layer_sizes").get<std::vector<int>>();
  for (const auto& a : j.at("activation"))
    p.activations.push_back(activation_from_name(a.get<std::string>()));
  for (const auto& w : j.at("weights")) p.weights.push_back(matrix_from_json(w));
  for (const auto& b : j.at("biases")) p.biases.push_back(vector_from_json(b));
  p.log_std = vector_from_json(j.at("log_std"));
  detail::check_shapes(p);
  if (adam && j.contains("adam")) {
    const auto& ja = j.at("adam");
    adam->first_moment = grads_from_json(ja.at("moments").at("first"));
    adam->second_moment = grads_from_json(ja.at("moments").at("second"));
    adam->step_count = ja.at("step_count").get<long>();
    const auto& jh = ja.at("hyperparameters");
    adam->learning_rate = jh.at("learning_rate").get<double>();
    adam->beta1 = jh.at("beta1").get<double>();
    adam->beta2 = jh.at("beta2").get<double>();
    adam->epsilon = jh.at("epsilon").get<double>();
  }
  return p;
}

}  // namespace rtw
