#pragma once

#include <cmath>
#include <concepts>
#include <span>
#include <string>
#include <vector>

#include "pcbf/error.hpp"
#include "pcbf/nn.hpp"
#include "pcbf/rng.hpp"

namespace pcbf::flow {

using nn::Matrix;
using nn::Vector;

struct FlowConfig {
  int nfe = 10;

  void validate() const {
    if (nfe < 1) throw ConfigError("nfe must be >= 1");
  }
};

inline void check_unit_time(double t, const char* who) {
  if (!(t >= 0.0 && t <= 1.0)) throw UsageError(std::string(who) + ": t must lie in [0, 1]");
}

/// (1 - t) x0 + t x1.
inline double linear_interpolant(double x0, double x1, double t) {
  check_unit_time(t, "linear_interpolant");
  return (1.0 - t) * x0 + t * x1;
}

/// Conditional flow-matching regression target for the linear path.
inline double cfm_target(double x0, double x1) { return x1 - x0; }

/// A scalar velocity field v(t, z | context).
template <class F>
concept VelocityField = requires(const F& f, double t, double z, std::span<const double> ctx) {
  { f(t, z, ctx) } -> std::convertible_to<double>;
};

/// Left-endpoint explicit Euler from t = 0 to t = 1 in `nfe` steps.
template <VelocityField F>
double euler_integrate(const F& field, double x0, std::span<const double> context, int nfe) {
  if (nfe < 1) throw UsageError("euler_integrate: nfe must be >= 1");
  const double h = 1.0 / nfe;
  double z = x0;
  for (int k = 0; k < nfe; ++k) {
    const double t = static_cast<double>(k) / nfe;
    const double v = field(t, z, context);
    if (!std::isfinite(v)) {
      throw NumericError("euler_integrate: non-finite velocity at step " + std::to_string(k), k);
    }
    z += h * v;
  }
  return z;
}

/// Rows `[z_i, t, context_i...]` for a batch evaluated at a common time.
inline Matrix make_inputs(const Vector& z, double t, const Matrix& context) {
  Matrix in(z.size(), 2 + context.cols());
  in.col(0) = z;
  in.col(1).setConstant(t);
  if (context.cols() > 0) in.rightCols(context.cols()) = context;
  return in;
}

/// Rows `[z_i, t_i, context_i...]` with per-row times.
inline Matrix make_inputs(const Vector& z, const Vector& t, const Matrix& context) {
  Matrix in(z.size(), 2 + context.cols());
  in.col(0) = z;
  in.col(1) = t;
  if (context.cols() > 0) in.rightCols(context.cols()) = context;
  return in;
}

/// Batched Euler integration of a network field on a grid of step 1/nfe,
/// taking `steps` steps (nfe steps reaches t = 1). Row i uses context row i.
inline Vector integrate_network(const nn::Mlp& net, const Vector& x0, const Matrix& context, int nfe,
                                int steps) {
  if (nfe < 1) throw UsageError("integrate_network: nfe must be >= 1");
  if (steps < 0 || steps > nfe) throw UsageError("integrate_network: steps must lie in [0, nfe]");
  const double h = 1.0 / nfe;
  Matrix in = make_inputs(x0, 0.0, context);
  Vector z = x0;
  for (int k = 0; k < steps; ++k) {
    in.col(0) = z;
    in.col(1).setConstant(static_cast<double>(k) / nfe);
    const Vector v = nn::forward_batch(net, in);
    if (!v.allFinite()) {
      throw NumericError("integrate_network: non-finite velocity at step " + std::to_string(k), k);
    }
    z += h * v;
  }
  return z;
}

/// The flow map psi^1(x0 | context) for a batch.
inline Vector flow_map(const nn::Mlp& net, const Vector& x0, const Matrix& context, int nfe) {
  return integrate_network(net, x0, context, nfe, nfe);
}

/// Draw n base noises X0 ~ N(0, 1) and push each through the learned flow.
inline std::vector<double> sample_returns(const nn::Mlp& net, std::span<const double> context, int n,
                                          RngStream& rng, int nfe) {
  if (n < 1) throw UsageError("sample_returns: n must be >= 1");
  if (static_cast<int>(context.size()) + 2 != net.input_dim()) {
    throw ShapeError("sample_returns: context width does not match network input");
  }
  Vector x0(n);
  for (int i = 0; i < n; ++i) x0(i) = rng.normal();
  Matrix ctx(n, static_cast<Eigen::Index>(context.size()));
  for (Eigen::Index j = 0; j < ctx.cols(); ++j) ctx.col(j).setConstant(context[j]);
  const Vector z = flow_map(net, x0, ctx, nfe);
  return std::vector<double>(z.data(), z.data() + z.size());
}

}  // namespace pcbf::flow
