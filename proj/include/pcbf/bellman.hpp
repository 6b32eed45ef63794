#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "pcbf/config.hpp"
#include "pcbf/envs.hpp"
#include "pcbf/error.hpp"
#include "pcbf/flow.hpp"
#include "pcbf/nn.hpp"
#include "pcbf/rng.hpp"

namespace pcbf::bellman {

using nn::Matrix;
using nn::Vector;

/// Everything computed for one transition of a coupled minibatch.
struct CoupledBatchItem {
  int state = 0;
  int next_state = 0;
  double x0 = 0.0;         // shared base noise
  double t = 0.0;
  double r = 0.0;
  double gamma_eff = 0.0;  // gamma * (1 - done)
  double lambda_eff = 0.0; // lambda * (1 - done)
  double x_prime = 0.0;    // target-flow successor return from the same x0
  double z_succ = 0.0;     // successor interpolant
  double z_curr = 0.0;     // current interpolant
  double c_t = 0.0;        // target-network successor velocity at z_succ
  double y = 0.0;          // sample-based Bellman velocity
  double c = 0.0;          // control variate
  double u = 0.0;          // regression target
};

inline double successor_path(double x0, double x_prime, double t) { return (1.0 - t) * x0 + t * x_prime; }

/// (1 - t) x0 + t (r + gamma_eff x'). Exact at t = 0 and t = 1.
inline double current_path(double x0, double x_prime, double r, double gamma_eff, double t) {
  return (1.0 - t) * x0 + t * (r + gamma_eff * x_prime);
}

/// The same path written around the successor interpolant:
/// t r + gamma_eff Z'_t + (1 - t)(1 - gamma_eff) x0.
inline double current_path_anchored(double x0, double x_prime, double r, double gamma_eff, double t) {
  return t * r + gamma_eff * successor_path(x0, x_prime, t) + (1.0 - t) * (1.0 - gamma_eff) * x0;
}

/// Y = r + gamma_eff x' - x0, the time derivative of the current path.
inline double bcfm_target(double r, double gamma_eff, double x_prime, double x0) {
  return r + gamma_eff * x_prime - x0;
}

/// C = c_t - (x' - x0).
inline double control_variate(double c_t, double x_prime, double x0) { return c_t - (x_prime - x0); }

/// u = Y + lambda_eff C.
inline double lambda_target(double y, double c, double lambda_eff) {
  if (!(lambda_eff >= 0.0 && lambda_eff <= 1.0)) throw ConfigError("lambda must lie in [0, 1]");
  return y + lambda_eff * c;
}

struct MaskedCoefficients {
  double gamma_eff;
  double lambda_eff;
};

inline MaskedCoefficients terminal_mask(double gamma, double lambda, bool done) {
  const double keep = done ? 0.0 : 1.0;
  return {gamma * keep, keep * lambda};
}

/// One-hot context rows for a list of states (terminal sentinel -> zeros).
inline Matrix context_rows(std::span<const int> states, int context_dim) {
  Matrix ctx = Matrix::Zero(static_cast<Eigen::Index>(states.size()), context_dim);
  for (std::size_t i = 0; i < states.size(); ++i) {
    if (states[i] >= 0 && states[i] < context_dim) ctx(static_cast<Eigen::Index>(i), states[i]) = 1.0;
  }
  return ctx;
}

/// Build path-coupled regression targets for a minibatch.
///
/// Per transition, draws x0 ~ N(0, 1) then t ~ U[0, 1); the successor return
/// x' is the target flow map applied to that same x0 under the successor
/// context. All outputs are plain numbers: nothing here depends on the online
/// network, so gradients cannot reach the target construction.
inline std::vector<CoupledBatchItem> build_coupled_batch(std::span<const envs::Transition> batch,
                                                         const nn::Mlp& target, int context_dim,
                                                         const TrainConfig& config, RngStream& rng) {
  if (batch.empty()) throw UsageError("build_coupled_batch: empty batch");
  if (target.input_dim() != 2 + context_dim) throw ShapeError("build_coupled_batch: target network width");
  const auto n = static_cast<Eigen::Index>(batch.size());
  std::vector<CoupledBatchItem> items(batch.size());
  Vector x0(n), t(n);
  std::vector<int> next(batch.size());
  for (Eigen::Index i = 0; i < n; ++i) {
    x0(i) = rng.normal();
    t(i) = rng.uniform();
    next[static_cast<std::size_t>(i)] = batch[static_cast<std::size_t>(i)].done ? envs::kTerminal
                                                                                 : batch[static_cast<std::size_t>(i)].next_state;
  }
  const Matrix next_ctx = context_rows(next, context_dim);
  const Vector x_prime = flow::flow_map(target, x0, next_ctx, config.nfe);
  Vector z_succ(n);
  for (Eigen::Index i = 0; i < n; ++i) z_succ(i) = successor_path(x0(i), x_prime(i), t(i));
  const Vector c_t = nn::forward_batch(target, flow::make_inputs(z_succ, t, next_ctx));

  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& tr = batch[static_cast<std::size_t>(i)];
    auto& it = items[static_cast<std::size_t>(i)];
    const auto mask = terminal_mask(config.gamma, config.lambda, tr.done);
    it.state = tr.state;
    it.next_state = next[static_cast<std::size_t>(i)];
    it.x0 = x0(i);
    it.t = t(i);
    it.r = tr.reward;
    it.gamma_eff = mask.gamma_eff;
    it.lambda_eff = mask.lambda_eff;
    it.x_prime = x_prime(i);
    it.z_succ = z_succ(i);
    it.z_curr = current_path(it.x0, it.x_prime, it.r, it.gamma_eff, it.t);
    it.c_t = c_t(i);
    it.y = bcfm_target(it.r, it.gamma_eff, it.x_prime, it.x0);
    it.c = control_variate(it.c_t, it.x_prime, it.x0);
    it.u = lambda_target(it.y, it.c, it.lambda_eff);
    if (!std::isfinite(it.u) || !std::isfinite(it.z_curr)) {
      throw NumericError("build_coupled_batch: non-finite target for transition " + std::to_string(i),
                         static_cast<long>(i));
    }
  }
  return items;
}

/// Online-network inputs `[z_curr, t, onehot(state)]` for a built batch.
inline Matrix current_inputs(std::span<const CoupledBatchItem> items, int context_dim) {
  const auto n = static_cast<Eigen::Index>(items.size());
  Vector z(n), t(n);
  std::vector<int> states(items.size());
  for (Eigen::Index i = 0; i < n; ++i) {
    z(i) = items[static_cast<std::size_t>(i)].z_curr;
    t(i) = items[static_cast<std::size_t>(i)].t;
    states[static_cast<std::size_t>(i)] = items[static_cast<std::size_t>(i)].state;
  }
  return flow::make_inputs(z, t, context_rows(states, context_dim));
}

}  // namespace pcbf::bellman
