#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "fedev/error.hpp"
#include "fedev/gradcheck.hpp"
#include "fedev/neural.hpp"

using namespace fedev;

namespace {

Matrix random_matrix(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Matrix m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j) {
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = n(rng);
  }
  return m;
}

// Policy whose outputs are the constants mu and log_sigma for every state.
GaussianPolicy constant_policy(std::size_t state_dim, double mu, double log_sigma) {
  Rng rng(1);
  GaussianPolicy p(state_dim, {4}, rng);
  p.set_flat(std::vector<double>(p.parameter_count(), 0.0));
  p.mu_head().layers()[0].bias(0) = mu;
  p.log_sigma_head().layers()[0].bias(0) = log_sigma;
  return p;
}

ErrorKind deserialize_error(std::span<const std::uint8_t> bytes, const Layout* expected = nullptr) {
  try {
    if (expected) deserialize(bytes, *expected);
    else deserialize(bytes);
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "deserialize accepted bad payload";
  return ErrorKind::IoError;
}

}  // namespace

TEST(Mlp, ZeroNetGivesZero) {
  Mlp net({5, 7, 3}, Activation::Identity);
  Rng rng(1);
  const Matrix out = net.forward(random_matrix(5, 4, rng));
  EXPECT_TRUE(out.isZero(0.0));
}

TEST(Mlp, SingleLayerIdentity) {
  Mlp net({3, 3}, Activation::Relu);
  net.layers()[0].weight.setIdentity();
  Matrix x(3, 1);
  x << -1.5, 0.0, 2.25;
  Matrix expected(3, 1);
  expected << 0.0, 0.0, 2.25;
  EXPECT_EQ(net.forward(x), expected);

  Mlp linear({3, 3}, Activation::Identity);
  linear.layers()[0].weight.setIdentity();
  EXPECT_EQ(linear.forward(x), x);
}

TEST(Mlp, MatchesHandRolledForward) {
  Rng rng(42);
  Mlp net({6, 9, 8, 2}, Activation::Identity, rng);
  // Biases are zero at init; give them values so the oracle covers them.
  for (auto& layer : net.layers()) layer.bias = random_matrix(layer.bias.size(), 1, rng);
  const Matrix x = random_matrix(6, 5, rng);
  const Matrix out = net.forward(x);
  for (Eigen::Index c = 0; c < x.cols(); ++c) {
    std::vector<double> a(x.col(c).data(), x.col(c).data() + x.rows());
    for (std::size_t l = 0; l < net.layers().size(); ++l) {
      const auto& L = net.layers()[l];
      std::vector<double> z(static_cast<std::size_t>(L.weight.rows()));
      for (Eigen::Index i = 0; i < L.weight.rows(); ++i) {
        double s = L.bias(i);
        for (Eigen::Index j = 0; j < L.weight.cols(); ++j) s += L.weight(i, j) * a[static_cast<std::size_t>(j)];
        z[static_cast<std::size_t>(i)] = (l + 1 < net.layers().size()) ? std::max(s, 0.0) : s;
      }
      a = z;
    }
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(out(static_cast<Eigen::Index>(i), c), a[i], 1e-12);
  }
}

TEST(Mlp, InitRangeAndSeedDeterminism) {
  Rng a(7), b(7);
  Mlp x({30, 128, 64, 1}, Activation::Identity, a);
  Mlp y({30, 128, 64, 1}, Activation::Identity, b);
  EXPECT_EQ(x.flat(), y.flat());
  for (const auto& layer : x.layers()) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(layer.weight.cols()));
    EXPECT_LE(layer.weight.maxCoeff(), bound);
    EXPECT_GE(layer.weight.minCoeff(), -bound);
    EXPECT_GT(layer.weight.maxCoeff(), 0.9 * bound);
    EXPECT_TRUE(layer.bias.isZero(0.0));
  }
}

TEST(Mlp, GradientsMatchFiniteDifferences) {
  Rng rng(3);
  Mlp net({5, 16, 12, 3}, Activation::Identity, rng);
  for (auto& layer : net.layers()) layer.bias = 0.1 * random_matrix(layer.bias.size(), 1, rng);
  const Vector x = random_matrix(5, 1, rng);
  const Vector up = random_matrix(3, 1, rng);
  const auto report = check_mlp_gradients("mlp", net, x, up);
  EXPECT_TRUE(report.passed) << report.worst << " " << report.max_rel_error;
  EXPECT_LT(report.max_rel_error, 1e-4);
  EXPECT_EQ(report.checked + report.kinks, net.parameter_count() + 5);
}

TEST(Mlp, RoundoffDominatedCoordinatesPass) {
  // Seed 5 trunk has gradients near 1e-8 where double differences are off by ~2e-4.
  const auto reports = gradient_suite(5, 1, NetworkShapes{});
  ASSERT_FALSE(reports.empty());
  for (const auto& r : reports) EXPECT_LT(r.max_rel_error, 1e-5) << r.network << " " << r.worst;
}

TEST(Mlp, InjectedFaultIsDetected) {
  Rng rng(3);
  Mlp net({4, 8, 1}, Activation::Identity, rng);
  GradCheckOptions opts;
  opts.inject_fault = true;
  const auto report = check_mlp_gradients("mlp", net, Vector::Ones(4), Vector::Ones(1), opts);
  EXPECT_FALSE(report.passed);
}

TEST(Mlp, ZeroUpstreamZeroGradient) {
  Rng rng(5);
  Mlp net({4, 8, 2}, Activation::Identity, rng);
  MlpCache cache;
  const Matrix x = random_matrix(4, 3, rng);
  net.forward(x, cache);
  std::vector<double> grad(net.parameter_count(), 0.0);
  const Matrix dx = net.backward(cache, Matrix::Zero(2, 3), grad);
  for (double g : grad) EXPECT_EQ(g, 0.0);
  EXPECT_TRUE(dx.isZero(0.0));
}

TEST(Mlp, LinearScalarGradient) {
  Mlp net({1, 1}, Activation::Identity);
  net.layers()[0].weight(0, 0) = 0.7;
  MlpCache cache;
  Matrix x(1, 1);
  x(0, 0) = 2.5;
  net.forward(x, cache);
  std::vector<double> grad(2, 0.0);
  const Matrix dx = net.backward(cache, Matrix::Ones(1, 1), grad);
  EXPECT_EQ(grad[0], 2.5);  // d(wx)/dw
  EXPECT_EQ(grad[1], 1.0);  // d/db
  EXPECT_EQ(dx(0, 0), 0.7);
}

TEST(Mlp, FlatRoundTripAndLayout) {
  Rng rng(9);
  Mlp net({3, 4, 2}, Activation::Identity, rng);
  const auto layout = net.layout("q.");
  ASSERT_EQ(layout.size(), 4u);
  EXPECT_EQ(layout[0].name, "q.l0.weight");
  EXPECT_EQ(layout[0].shape, (std::vector<std::uint64_t>{4, 3}));
  EXPECT_EQ(layout[3].name, "q.l1.bias");
  EXPECT_EQ(layout_size(layout), net.parameter_count());
  Mlp other({3, 4, 2}, Activation::Identity);
  other.set_params(net.params("q."), "q.");
  EXPECT_EQ(other.flat(), net.flat());
  EXPECT_THROW(other.set_params(net.params("q."), "v."), Error);
}

TEST(Policy, KappaZeroGivesClippedMean) {
  const auto p = constant_policy(3, 0.05, -1.0);
  Rng rng(1);
  const std::vector<double> s{0.1, 0.2, 0.3};
  EXPECT_DOUBLE_EQ(sample_action(p, s, rng, {-0.2, 0.2}, Squash::Clip, true).action, 0.05);
  const auto big = constant_policy(3, 0.9, -1.0);
  EXPECT_EQ(sample_action(big, s, rng, {-0.2, 0.2}, Squash::Clip, true).action, 0.2);
  const auto ps = evaluate_sample(-0.5, -1.0, 0.0, {-0.2, 0.2}, Squash::Clip);
  EXPECT_EQ(ps.action, -0.2);
  EXPECT_EQ(ps.raw, -0.5);
}

TEST(Policy, LogProbAtMean) {
  for (double ls : {-3.0, -0.5, 0.0, 1.2}) {
    const auto ps = evaluate_sample(0.01, ls, 0.0, {-0.2, 0.2}, Squash::Clip);
    EXPECT_NEAR(ps.log_prob, -std::log(std::exp(ls) * std::sqrt(2.0 * std::numbers::pi)), 1e-14);
  }
}

TEST(Policy, LogSigmaClampIsStable) {
  const auto p = constant_policy(2, 0.0, -50.0);
  Rng rng(2);
  const std::vector<double> s{1.0, -1.0};
  for (int i = 0; i < 100; ++i) {
    const auto d = sample_action(p, s, rng, {-0.2, 0.2}, Squash::Clip, false);
    EXPECT_TRUE(std::isfinite(d.action));
    EXPECT_TRUE(std::isfinite(d.log_prob));
  }
  const auto fwd = p.forward(Matrix::Ones(2, 1));
  EXPECT_EQ(fwd.log_sigma(0), kLogSigmaMin);
  const auto hi = constant_policy(2, 0.0, 10.0).forward(Matrix::Ones(2, 1));
  EXPECT_EQ(hi.log_sigma(0), kLogSigmaMax);
}

TEST(Policy, RawDrawStatistics) {
  const double mu = 0.03, sigma = 0.07;
  const auto p = constant_policy(2, mu, std::log(sigma));
  Rng rng(11);
  const std::vector<double> s{0.5, 0.5};
  const int n = 100000;
  double sum = 0, sum2 = 0;
  for (int i = 0; i < n; ++i) {
    const double a = sample_action(p, s, rng, {-1e9, 1e9}, Squash::Clip, false).action;
    sum += a;
    sum2 += a * a;
  }
  const double mean = sum / n;
  const double var = sum2 / n - mean * mean;
  EXPECT_LT(std::abs(mean - mu), 3.0 * sigma / std::sqrt(n));
  // sd of the sample variance of a normal is sigma^2 * sqrt(2 / (n - 1)).
  EXPECT_LT(std::abs(var - sigma * sigma), 3.0 * sigma * sigma * std::sqrt(2.0 / (n - 1)));
}

TEST(Policy, TanhDensityIntegratesToOne) {
  const ActionBounds b{-0.2, 0.2};
  double integral = 0.0;
  double prev_a = evaluate_sample(0.3, -0.4, -12.0, b, Squash::Tanh).action;
  for (double k = -12.0 + 1e-3; k <= 12.0; k += 1e-3) {
    const auto s = evaluate_sample(0.3, -0.4, k, b, Squash::Tanh);
    EXPECT_GE(s.action, b.lo);
    EXPECT_LE(s.action, b.hi);
    integral += std::exp(s.log_prob) * (s.action - prev_a);
    prev_a = s.action;
  }
  EXPECT_NEAR(integral, 1.0, 1e-3);
}

TEST(Policy, ParamsRoundTrip) {
  Rng a(4), b(5);
  GaussianPolicy p(10, {8, 8}, a), q(10, {8, 8}, b);
  EXPECT_NE(p.flat(), q.flat());
  q.set_params(p.params());
  EXPECT_EQ(p.flat(), q.flat());
  EXPECT_EQ(p.params().layout[0].name, "trunk.l0.weight");
}

TEST(Adam, ZeroGradientLeavesParams) {
  std::vector<double> x{1.0, -2.0, 3.0};
  const auto before = x;
  AdamState st(3);
  for (int i = 0; i < 10; ++i) adam_step(x, std::vector<double>(3, 0.0), st, 1e-2);
  EXPECT_EQ(x, before);
}

TEST(Adam, ConstantGradientStepApproachesLr) {
  std::vector<double> x{0.0, 0.0};
  const std::vector<double> g{0.3, -7.0};
  AdamState st(2);
  const double lr = 1e-3;
  for (int i = 0; i < 1000; ++i) adam_step(x, g, st, lr);
  const auto prev = x;
  adam_step(x, g, st, lr);
  EXPECT_NEAR(x[0] - prev[0], -lr, 1e-7);
  EXPECT_NEAR(x[1] - prev[1], lr, 1e-7);
}

TEST(Adam, Deterministic) {
  auto run = [] {
    Rng rng(21);
    std::normal_distribution<double> n;
    std::vector<double> x(50, 0.0);
    AdamState st(50);
    for (int k = 0; k < 200; ++k) {
      std::vector<double> g(50);
      for (double& v : g) v = n(rng);
      adam_step(x, g, st, 1e-2);
    }
    return x;
  };
  EXPECT_EQ(run(), run());
}

TEST(Adam, ShapeMismatch) {
  std::vector<double> x(3);
  AdamState st(3);
  EXPECT_THROW(adam_step(x, std::vector<double>(2), st, 1e-3), Error);
}

TEST(Polyak, Examples) {
  const Layout l{{"w", {3}}};
  ParamVector src(l, {1.0, -2.0, 0.5});
  ParamVector t = src;
  polyak_update(t, src, 0.005);
  EXPECT_EQ(t, src);

  ParamVector z = ParamVector::zeros(l);
  polyak_update(z, src, 1.0);
  EXPECT_EQ(z, src);

  ParamVector zero = ParamVector::zeros(l);
  polyak_update(zero, ParamVector(l, {1.0, 1.0, 1.0}), 0.005);
  for (double v : zero.values) EXPECT_DOUBLE_EQ(v, 0.005);

  EXPECT_THROW(polyak_update(zero, ParamVector::zeros({{"w", {2}}}), 0.5), Error);
}

TEST(Polyak, GeometricDecay) {
  const Layout l{{"w", {4}}};
  const ParamVector src(l, {1.0, 2.0, -3.0, 0.25});
  ParamVector t = ParamVector::zeros(l);
  const double zeta = 0.05;
  auto dist = [&] {
    double s = 0;
    for (std::size_t i = 0; i < 4; ++i) s += std::pow(t.values[i] - src.values[i], 2);
    return std::sqrt(s);
  };
  double prev = dist();
  for (int k = 0; k < 100; ++k) {
    polyak_update(t, src, zeta);
    const double cur = dist();
    EXPECT_NEAR(cur / prev, 1.0 - zeta, 1e-9);
    prev = cur;
  }
}

TEST(Payload, RoundTripBitwise) {
  Rng rng(13);
  GaussianPolicy p(30, {16, 16}, rng);
  const ParamVector v = p.params();
  const auto bytes = serialize(v);
  EXPECT_EQ(deserialize(bytes), v);
  EXPECT_EQ(deserialize(bytes, v.layout), v);
}

TEST(Payload, SpecialValuesSurvive) {
  const ParamVector v({{"a", {2, 2}}}, {-0.0, 5e-324, 1e308, -1.0 / 3.0});
  const ParamVector back = deserialize(serialize(v));
  ASSERT_EQ(back.values.size(), 4u);
  EXPECT_TRUE(std::signbit(back.values[0]));
  EXPECT_EQ(back, v);
}

TEST(Payload, TruncatedOrTrailing) {
  const ParamVector v({{"w", {3}}}, {1, 2, 3});
  auto bytes = serialize(v);
  for (std::size_t cut : {bytes.size() - 1, bytes.size() - 8, std::size_t{3}, std::size_t{0}}) {
    EXPECT_EQ(deserialize_error(std::span(bytes).first(cut)), ErrorKind::CorruptPayload) << cut;
  }
  bytes.push_back(0);
  EXPECT_EQ(deserialize_error(bytes), ErrorKind::CorruptPayload);
}

TEST(Payload, LayoutMismatch) {
  const ParamVector v({{"w", {3}}}, {1, 2, 3});
  const auto bytes = serialize(v);
  const Layout other{{"w", {1, 3}}};
  EXPECT_EQ(deserialize_error(bytes, &other), ErrorKind::LayoutMismatch);
  const Layout renamed{{"b", {3}}};
  EXPECT_EQ(deserialize_error(bytes, &renamed), ErrorKind::LayoutMismatch);
}

TEST(ParamVector, ConstructionChecks) {
  EXPECT_THROW(ParamVector({{"w", {3}}}, {1, 2}), Error);
  EXPECT_TRUE(ParamVector({{"w", {1}}}, {1}).all_finite());
  EXPECT_FALSE(ParamVector({{"w", {1}}}, {std::nan("")}).all_finite());
}
