#include "rtw/nn.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "rtw/rng.hpp"

namespace {

using rtw::Activation;
using rtw::MatrixXd;
using rtw::MlpGrads;
using rtw::MlpParams;
using rtw::Rng;
using rtw::VectorXd;

// Independent straight-line forward evaluation: plain nested loops over
// std::vector, sharing no code with the Eigen path it checks.
std::vector<double> naive_forward(const MlpParams& p, const std::vector<double>& input) {
  std::vector<double> a = input;
  for (int l = 0; l < p.num_layers(); ++l) {
    const int out = static_cast<int>(p.weights[l].rows());
    const int in = static_cast<int>(p.weights[l].cols());
    std::vector<double> z(out, 0.0);
    for (int i = 0; i < out; ++i) {
      double acc = p.biases[l][i];
      for (int j = 0; j < in; ++j) acc += p.weights[l](i, j) * a[j];
      z[i] = acc;
    }
    if (l + 1 < p.num_layers()) {
      for (int i = 0; i < out; ++i)
        z[i] = p.activations[l] == Activation::kTanh ? std::tanh(z[i]) : std::max(0.0, z[i]);
    }
    a = std::move(z);
  }
  return a;
}

double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({1e-6, std::abs(a), std::abs(b)});
}

// Central finite difference of f(params) = output . output_grad w.r.t. one
// parameter slot, by mutating the slot in a copy.
double fd_param(const MlpParams& params, const VectorXd& input, const VectorXd& output_grad,
                int layer, bool is_bias, int r, int c, double h = 1e-5) {
  MlpParams plus = params, minus = params;
  if (is_bias) {
    plus.biases[layer][r] += h;
    minus.biases[layer][r] -= h;
  } else {
    plus.weights[layer](r, c) += h;
    minus.weights[layer](r, c) -= h;
  }
  const double fp = rtw::mlp_forward(plus, input).dot(output_grad);
  const double fm = rtw::mlp_forward(minus, input).dot(output_grad);
  return (fp - fm) / (2.0 * h);
}

double max_fd_rel_err(const MlpParams& params, const VectorXd& input,
                      const VectorXd& output_grad) {
  const MlpGrads grads = rtw::mlp_backward(params, input, output_grad);
  double worst = 0.0;
  for (int l = 0; l < params.num_layers(); ++l) {
    for (int i = 0; i < params.weights[l].rows(); ++i)
      for (int j = 0; j < params.weights[l].cols(); ++j)
        worst = std::max(worst, rel_err(grads.weights[l](i, j),
                                        fd_param(params, input, output_grad, l, false, i, j)));
    for (int i = 0; i < params.biases[l].size(); ++i)
      worst = std::max(
          worst, rel_err(grads.biases[l][i], fd_param(params, input, output_grad, l, true, i, 0)));
  }
  return worst;
}

VectorXd random_vector(int n, Rng& rng) {
  VectorXd v(n);
  for (int i = 0; i < n; ++i) v[i] = rng.normal();
  return v;
}

TEST(MlpForward, ZeroWeightsGiveOutputBias) {
  Rng rng(1);
  MlpParams p = rtw::make_mlp({3, 5, 2}, Activation::kTanh, rng);
  for (auto& w : p.weights) w.setZero();
  p.biases[0].setConstant(0.7);
  p.biases[1] << 1.5, -2.5;
  VectorXd out = rtw::mlp_forward(p, random_vector(3, rng));
  EXPECT_DOUBLE_EQ(out[0], 1.5);
  EXPECT_DOUBLE_EQ(out[1], -2.5);
}

TEST(MlpForward, IdentitySingleLayer) {
  MlpParams p;
  p.layer_sizes = {4, 4};
  p.weights.push_back(MatrixXd::Identity(4, 4));
  p.biases.push_back(VectorXd::Zero(4));
  Rng rng(2);
  VectorXd x = random_vector(4, rng);
  VectorXd y = rtw::mlp_forward(p, x);
  EXPECT_TRUE(y.isApprox(x));
}

TEST(MlpForward, MatchesNaiveEvaluation) {
  Rng rng(3);
  MlpParams p = rtw::make_mlp({4, 8, 2}, Activation::kTanh, rng);
  VectorXd x = random_vector(4, rng);
  std::vector<double> xin(x.data(), x.data() + x.size());
  std::vector<double> expect = naive_forward(p, xin);
  VectorXd got = rtw::mlp_forward(p, x);
  ASSERT_EQ(expect.size(), 2u);
  EXPECT_NEAR(got[0], expect[0], 1e-12);
  EXPECT_NEAR(got[1], expect[1], 1e-12);
}

TEST(MlpForward, BatchMatchesSingle) {
  Rng rng(4);
  MlpParams p = rtw::make_mlp({5, 16, 3}, Activation::kTanh, rng);
  MatrixXd batch(7, 5);
  for (int i = 0; i < 7; ++i) batch.row(i) = random_vector(5, rng).transpose();
  MatrixXd out = rtw::mlp_forward_batch(p, batch);
  for (int i = 0; i < 7; ++i) {
    VectorXd single = rtw::mlp_forward(p, batch.row(i).transpose());
    EXPECT_TRUE(out.row(i).transpose().isApprox(single, 1e-14));
  }
}

TEST(MlpForward, DeterministicAcrossCalls) {
  Rng rng(5);
  MlpParams p = rtw::make_mlp({6, 12, 12, 2}, Activation::kTanh, rng);
  VectorXd x = random_vector(6, rng);
  VectorXd a = rtw::mlp_forward(p, x);
  VectorXd b = rtw::mlp_forward(p, x);
  for (int i = 0; i < a.size(); ++i) EXPECT_EQ(a[i], b[i]);
}

TEST(MlpForward, DimensionMismatchNamesSizes) {
  Rng rng(6);
  MlpParams p = rtw::make_mlp({4, 8, 2}, Activation::kTanh, rng);
  try {
    rtw::mlp_forward(p, VectorXd::Zero(5));
    FAIL() << "expected exception";
  } catch (const std::invalid_argument& e) {
    std::string msg = e.what();
    EXPECT_NE(msg.find("4"), std::string::npos);
    EXPECT_NE(msg.find("5"), std::string::npos);
  }
}

TEST(MlpBackward, ZeroUpstreamGradGivesZeroGrads) {
  Rng rng(7);
  MlpParams p = rtw::make_mlp({4, 6, 3}, Activation::kTanh, rng);
  MlpGrads g = rtw::mlp_backward(p, random_vector(4, rng), VectorXd::Zero(3));
  for (const auto& w : g.weights) EXPECT_EQ(w.cwiseAbs().maxCoeff(), 0.0);
  for (const auto& b : g.biases) EXPECT_EQ(b.cwiseAbs().maxCoeff(), 0.0);
}

TEST(MlpBackward, SingleLinearLayerClosedForm) {
  MlpParams p;
  p.layer_sizes = {3, 2};
  Rng rng(8);
  p.weights.push_back(rtw::orthogonal_matrix(2, 3, 1.0, rng));
  p.biases.push_back(random_vector(2, rng));
  VectorXd x = random_vector(3, rng);
  VectorXd og = random_vector(2, rng);
  MlpGrads g = rtw::mlp_backward(p, x, og);
  EXPECT_TRUE(g.biases[0].isApprox(og, 1e-14));
  EXPECT_TRUE(g.weights[0].isApprox(og * x.transpose(), 1e-14));
}

TEST(MlpBackward, FiniteDifferenceOracle) {
  Rng rng(9);
  MlpParams p = rtw::make_mlp({6, 16, 16, 3}, Activation::kTanh, rng);
  VectorXd x = random_vector(6, rng);
  VectorXd og = random_vector(3, rng);
  EXPECT_LT(max_fd_rel_err(p, x, og), 1e-4);
}

TEST(MlpBackward, FiniteDifferenceOracleRelu) {
  Rng rng(10);
  MlpParams p = rtw::make_mlp({5, 12, 2}, Activation::kRelu, rng);
  VectorXd x = random_vector(5, rng);
  VectorXd og = random_vector(2, rng);
  EXPECT_LT(max_fd_rel_err(p, x, og), 1e-4);
}

TEST(MlpBackward, BatchAccumulatesPerSampleGrads) {
  Rng rng(11);
  MlpParams p = rtw::make_mlp({4, 8, 2}, Activation::kTanh, rng);
  MatrixXd inputs(3, 4), ogs(3, 2);
  for (int i = 0; i < 3; ++i) {
    inputs.row(i) = random_vector(4, rng).transpose();
    ogs.row(i) = random_vector(2, rng).transpose();
  }
  rtw::ForwardCache cache = rtw::mlp_forward_cached(p, inputs);
  MlpGrads batch = p.zero_grads();
  rtw::mlp_backward_batch(p, cache, ogs, batch);

  MlpGrads sum = p.zero_grads();
  for (int i = 0; i < 3; ++i) {
    MlpGrads gi = rtw::mlp_backward(p, inputs.row(i).transpose(), ogs.row(i).transpose());
    for (std::size_t l = 0; l < sum.weights.size(); ++l) {
      sum.weights[l] += gi.weights[l];
      sum.biases[l] += gi.biases[l];
    }
  }
  for (std::size_t l = 0; l < sum.weights.size(); ++l) {
    EXPECT_TRUE(batch.weights[l].isApprox(sum.weights[l], 1e-12));
    EXPECT_TRUE(batch.biases[l].isApprox(sum.biases[l], 1e-12));
  }
}

TEST(Adam, ZeroGradLeavesParamsUnchanged) {
  Rng rng(12);
  MlpParams p = rtw::make_mlp({3, 4, 2}, Activation::kTanh, rng);
  MlpParams before = p;
  rtw::AdamState adam = rtw::make_adam(p, 1e-3);
  rtw::adam_step(adam, p, p.zero_grads());
  for (std::size_t l = 0; l < p.weights.size(); ++l)
    EXPECT_TRUE(p.weights[l].isApprox(before.weights[l], 0.0));
  EXPECT_EQ(adam.step_count, 1);
}

// Hand oracle for Adam on one scalar parameter with constant gradient g:
//   m_t = (1-b1) sum b1^i g,  v_t = (1-b2) sum b2^i g^2, with bias correction
//   step_t = lr * mhat / (sqrt(vhat) + eps).
double hand_adam_step(double g, double lr, double b1, double b2, double eps, int t) {
  double m = 0.0, v = 0.0;
  double delta = 0.0;
  for (int i = 1; i <= t; ++i) {
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g * g;
    delta = lr * (m / (1 - std::pow(b1, i))) / (std::sqrt(v / (1 - std::pow(b2, i))) + eps);
  }
  return delta;
}

TEST(Adam, FirstStepIsSignStep) {
  MlpParams p;
  p.layer_sizes = {1, 1};
  p.weights.push_back(MatrixXd::Constant(1, 1, 0.5));
  p.biases.push_back(VectorXd::Zero(1));
  rtw::AdamState adam = rtw::make_adam(p, 0.01);
  MlpGrads g = p.zero_grads();
  g.weights[0](0, 0) = 3.7;
  rtw::adam_step(adam, p, g);
  const double expect = 0.5 - hand_adam_step(3.7, 0.01, adam.beta1, adam.beta2, adam.epsilon, 1);
  EXPECT_NEAR(p.weights[0](0, 0), expect, 1e-15);
  EXPECT_NEAR(0.5 - p.weights[0](0, 0), 0.01, 1e-5);  // approx lr (sign step)
}

TEST(Adam, TwoConstantStepsMatchHandOracle) {
  MlpParams p;
  p.layer_sizes = {1, 1};
  p.weights.push_back(MatrixXd::Constant(1, 1, 1.0));
  p.biases.push_back(VectorXd::Zero(1));
  rtw::AdamState adam = rtw::make_adam(p, 0.05);
  MlpGrads g = p.zero_grads();
  g.weights[0](0, 0) = -2.0;
  rtw::adam_step(adam, p, g);
  rtw::adam_step(adam, p, g);
  double expect = 1.0;
  double m = 0.0, v = 0.0;
  for (int t = 1; t <= 2; ++t) {
    m = adam.beta1 * m + (1 - adam.beta1) * -2.0;
    v = adam.beta2 * v + (1 - adam.beta2) * 4.0;
    expect -= 0.05 * (m / (1 - std::pow(adam.beta1, t))) /
              (std::sqrt(v / (1 - std::pow(adam.beta2, t))) + adam.epsilon);
  }
  EXPECT_NEAR(p.weights[0](0, 0), expect, 1e-15);
  EXPECT_EQ(adam.step_count, 2);
}

TEST(Adam, NonFiniteGradThrows) {
  Rng rng(13);
  MlpParams p = rtw::make_mlp({2, 2}, Activation::kTanh, rng);
  rtw::AdamState adam = rtw::make_adam(p, 1e-3);
  MlpGrads g = p.zero_grads();
  g.weights[0](0, 0) = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(rtw::adam_step(adam, p, g), std::runtime_error);
}

TEST(Adam, PreservesFiniteness) {
  Rng rng(14);
  MlpParams p = rtw::make_mlp({4, 8, 2}, Activation::kTanh, rng, 0.01, true);
  rtw::AdamState adam = rtw::make_adam(p, 0.1);
  for (int step = 0; step < 50; ++step) {
    MlpGrads g = p.zero_grads();
    for (auto& w : g.weights)
      for (int i = 0; i < w.size(); ++i) w.data()[i] = rng.normal() * 10.0;
    for (auto& b : g.biases)
      for (int i = 0; i < b.size(); ++i) b[i] = rng.normal() * 10.0;
    for (int i = 0; i < g.log_std.size(); ++i) g.log_std[i] = rng.normal();
    rtw::adam_step(adam, p, g);
    ASSERT_TRUE(p.is_finite());
  }
}

TEST(Gaussian, ClampedLogStdCollapsesToMean) {
  Rng rng(15);
  VectorXd mean(2);
  mean << 0.3, -1.2;
  VectorXd log_std = VectorXd::Constant(2, -1e9);  // clamped to -20
  rtw::GaussianAction a = rtw::gaussian_sample(mean, log_std, rng);
  EXPECT_NEAR(a.sample[0], 0.3, 1e-6);
  EXPECT_NEAR(a.sample[1], -1.2, 1e-6);
  EXPECT_EQ(a.log_std[0], rtw::kLogStdMin);
}

TEST(Gaussian, StandardNormalDensityAtMode) {
  VectorXd zero1 = VectorXd::Zero(1);
  double lp = rtw::gaussian_log_prob(zero1, zero1, zero1);
  EXPECT_NEAR(lp, -0.5 * std::log(2.0 * M_PI), 1e-15);
}

TEST(Gaussian, LogProbMatchesPerDimensionOracle) {
  Rng rng(16);
  VectorXd mean = random_vector(3, rng);
  VectorXd log_std = 0.3 * random_vector(3, rng);
  rtw::GaussianAction a = rtw::gaussian_sample(mean, log_std, rng);
  double expect = 0.0;
  for (int k = 0; k < 3; ++k) {
    const double sigma = std::exp(log_std[k]);
    const double d = a.sample[k] - mean[k];
    expect += std::log(1.0 / (sigma * std::sqrt(2.0 * M_PI)) *
                       std::exp(-d * d / (2.0 * sigma * sigma)));
  }
  EXPECT_NEAR(a.log_prob, expect, 1e-10);
}

TEST(Gaussian, EntropyClosedForm) {
  VectorXd log_std(2);
  log_std << 0.0, 1.0;
  const double unit = 0.5 * std::log(2.0 * M_PI * M_E);
  EXPECT_NEAR(rtw::gaussian_entropy(log_std), (0.0 + unit) + (1.0 + unit), 1e-12);
}

// Invariant from the module contract: 100 random networks, max relative
// error between analytic and central finite-difference gradients < 1e-4.
// Smaller sweep here; the full 100-network version runs in the acceptance
// suite.
TEST(MlpBackward, RandomNetworkSweep) {
  Rng rng(17);
  for (int trial = 0; trial < 20; ++trial) {
    const int hidden_layers = 1 + static_cast<int>(rng.uniform_int(3));
    std::vector<int> sizes;
    sizes.push_back(2 + static_cast<int>(rng.uniform_int(6)));
    for (int l = 0; l < hidden_layers; ++l)
      sizes.push_back(2 + static_cast<int>(rng.uniform_int(31)));
    sizes.push_back(1 + static_cast<int>(rng.uniform_int(4)));
    MlpParams p = rtw::make_mlp(sizes, Activation::kTanh, rng);
    VectorXd x = random_vector(sizes.front(), rng);
    VectorXd og = random_vector(sizes.back(), rng);
    ASSERT_LT(max_fd_rel_err(p, x, og), 1e-4) << "trial " << trial;
  }
}

TEST(Checkpoint, ParamsRoundTripExactly) {
  Rng rng(18);
  MlpParams p = rtw::make_mlp({5, 16, 3}, Activation::kTanh, rng, 0.01, true);
  rtw::AdamState adam = rtw::make_adam(p, 3e-4);
  MlpGrads g = p.zero_grads();
  for (auto& w : g.weights)
    for (int i = 0; i < w.size(); ++i) w.data()[i] = rng.normal();
  for (auto& b : g.biases)
    for (int i = 0; i < b.size(); ++i) b[i] = rng.normal();
  rtw::adam_step(adam, p, g);

  nlohmann::json j = rtw::params_to_json(p, &adam);
  std::string text = j.dump();
  rtw::AdamState adam2 = rtw::make_adam(p, 0.0);
  MlpParams q = rtw::params_from_json(nlohmann::json::parse(text), &adam2);

  ASSERT_EQ(q.layer_sizes, p.layer_sizes);
  for (std::size_t l = 0; l < p.weights.size(); ++l) {
    EXPECT_TRUE((q.weights[l].array() == p.weights[l].array()).all());
    EXPECT_TRUE((q.biases[l].array() == p.biases[l].array()).all());
  }
  EXPECT_TRUE((q.log_std.array() == p.log_std.array()).all());
  EXPECT_EQ(adam2.step_count, adam.step_count);
  EXPECT_EQ(adam2.learning_rate, adam.learning_rate);
  EXPECT_TRUE(
      (adam2.first_moment.weights[0].array() == adam.first_moment.weights[0].array()).all());
}

}  // namespace
