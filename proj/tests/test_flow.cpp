#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "pcbf/flow.hpp"
#include "pcbf/wasserstein.hpp"

using namespace pcbf;

namespace {
nn::Mlp constant_field(int context_dim, double c) {
  auto p = nn::init_params({2 + context_dim, 1}, 0);
  p.weights[0].setZero();
  p.biases[0](0) = c;
  return p;
}
}  // namespace

TEST(LinearInterpolant, Examples) {
  EXPECT_EQ(flow::linear_interpolant(2, 5, 0), 2);
  EXPECT_EQ(flow::linear_interpolant(2, 5, 1), 5);
  EXPECT_EQ(flow::linear_interpolant(0, 4, 0.25), 1);
}

TEST(LinearInterpolant, BoundariesExactOnRandomInputs) {
  RngStream rng(1);
  for (int i = 0; i < 1000; ++i) {
    const double a = 100 * rng.normal(), b = 100 * rng.normal();
    EXPECT_EQ(flow::linear_interpolant(a, b, 0.0), a);
    EXPECT_EQ(flow::linear_interpolant(a, b, 1.0), b);
  }
}

TEST(LinearInterpolant, RejectsTimeOutsideUnitInterval) {
  EXPECT_THROW(flow::linear_interpolant(0, 1, -0.1), UsageError);
  EXPECT_THROW(flow::linear_interpolant(0, 1, 1.1), UsageError);
}

TEST(CfmTarget, Examples) {
  EXPECT_EQ(flow::cfm_target(0, 3), 3);
  EXPECT_EQ(flow::cfm_target(1.25, 1.25), 0);
  EXPECT_EQ(flow::cfm_target(-1, 2), 3);
}

TEST(EulerIntegrate, ConstantField) {
  auto f = [](double, double, std::span<const double>) { return 0.75; };
  for (int n : {1, 3, 10, 64}) EXPECT_DOUBLE_EQ(flow::euler_integrate(f, 1.0, {}, n), 1.75);
  auto zero = [](double, double, std::span<const double>) { return 0.0; };
  EXPECT_EQ(flow::euler_integrate(zero, -0.3, {}, 7), -0.3);
}

TEST(EulerIntegrate, LinearFieldClosedForm) {
  auto f = [](double, double z, std::span<const double>) { return z; };
  for (int n : {1, 2, 5, 10, 100}) {
    EXPECT_NEAR(flow::euler_integrate(f, 1.0, {}, n), std::pow(1.0 + 1.0 / n, n), 1e-12);
  }
}

TEST(EulerIntegrate, FirstOrderConvergence) {
  auto f = [](double, double z, std::span<const double>) { return z; };
  for (int n : {8, 16, 32, 64}) {
    const double e1 = std::abs(flow::euler_integrate(f, 1.0, {}, n) - std::exp(1.0));
    const double e2 = std::abs(flow::euler_integrate(f, 1.0, {}, 2 * n) - std::exp(1.0));
    EXPECT_GE(e1 / e2, 1.6);
    EXPECT_LE(e1 / e2, 2.4);
  }
}

TEST(EulerIntegrate, UsesLeftEndpoint) {
  // v(t) = t: left-endpoint Euler gives sum_{k<N} k/N^2 = (N-1)/(2N)
  auto f = [](double t, double, std::span<const double>) { return t; };
  EXPECT_DOUBLE_EQ(flow::euler_integrate(f, 0.0, {}, 4), 3.0 / 8.0);
}

TEST(EulerIntegrate, NonFiniteReportsStep) {
  auto f = [](double t, double, std::span<const double>) { return t >= 0.5 ? std::nan("") : 1.0; };
  try {
    flow::euler_integrate(f, 0.0, {}, 4);
    FAIL();
  } catch (const NumericError& e) {
    EXPECT_EQ(e.index(), 2);
  }
  EXPECT_THROW(flow::euler_integrate(f, 0.0, {}, 0), UsageError);
}

TEST(EulerIntegrate, BatchedNetworkMatchesScalar) {
  const auto net = nn::init_params({4, 8, 1}, 5);
  auto field = [&](double t, double z, std::span<const double> ctx) {
    const std::vector<double> in{z, t, ctx[0], ctx[1]};
    return nn::forward(net, in);
  };
  RngStream rng(3);
  nn::Vector x0(6);
  nn::Matrix ctx = nn::Matrix::Zero(6, 2);
  for (int i = 0; i < 6; ++i) {
    x0(i) = rng.normal();
    ctx(i, i % 2) = 1.0;
  }
  const nn::Vector z = flow::flow_map(net, x0, ctx, 10);
  for (int i = 0; i < 6; ++i) {
    const std::vector<double> c{ctx(i, 0), ctx(i, 1)};
    EXPECT_NEAR(z(i), flow::euler_integrate(field, x0(i), c, 10), 1e-12);
  }
}

TEST(SampleReturns, ZeroNetworkReturnsBaseNoise) {
  const auto net = constant_field(1, 0.0);
  const std::vector<double> ctx{1.0};
  RngStream a(9), b(9);
  const auto s = flow::sample_returns(net, ctx, 50, a, 10);
  for (double x : s) EXPECT_EQ(x, b.normal());
}

TEST(SampleReturns, Deterministic) {
  const auto net = nn::init_params({3, 6, 1}, 4);
  const std::vector<double> ctx{1.0};
  RngStream a(21), b(21);
  EXPECT_EQ(flow::sample_returns(net, ctx, 3, a, 10), flow::sample_returns(net, ctx, 3, b, 10));
}

TEST(SampleReturns, ConstantFieldShiftsNoise) {
  const double c = 1.3;
  const auto net = constant_field(1, c);
  const std::vector<double> ctx{1.0};
  RngStream a(5), b(5);
  const int n = 20000;
  const auto s = flow::sample_returns(net, ctx, n, a, 10);
  double mean = 0.0;
  for (double x : s) {
    EXPECT_NEAR(x, b.normal() + c, 1e-12);
    mean += x / n;
  }
  EXPECT_NEAR(mean, c, 4.0 / std::sqrt(n));
}

TEST(SampleReturns, ZeroFieldIsStandardNormal) {
  const auto net = constant_field(1, 0.0);
  const std::vector<double> ctx{1.0};
  RngStream rng(77);
  const int n = 100000;
  const Empirical e = make_empirical(flow::sample_returns(net, ctx, n, rng, 10));
  // standard normal CDF on a fine grid as a piecewise-linear law
  ContinuousCdf normal;
  for (int i = 0; i <= 4000; ++i) {
    const double x = -8.0 + 16.0 * i / 4000;
    normal.xs.push_back(x);
    normal.cdf.push_back(i == 0 ? 0.0 : i == 4000 ? 1.0 : 0.5 * std::erfc(-x / std::sqrt(2.0)));
  }
  EXPECT_LT(analysis::ks_statistic(e, normal), analysis::ks_critical_1pct(n));
}

TEST(SampleReturns, Errors) {
  const auto net = nn::init_params({3, 1}, 0);
  RngStream rng(0);
  const std::vector<double> ctx{1.0}, wide{1.0, 0.0};
  EXPECT_THROW(flow::sample_returns(net, ctx, 0, rng, 10), UsageError);
  EXPECT_THROW(flow::sample_returns(net, wide, 3, rng, 10), ShapeError);
}
