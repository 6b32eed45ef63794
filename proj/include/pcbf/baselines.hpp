#pragma once

#include <cmath>
#include <map>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "pcbf/bellman.hpp"
#include "pcbf/config.hpp"
#include "pcbf/envs.hpp"
#include "pcbf/error.hpp"
#include "pcbf/flow.hpp"
#include "pcbf/nn.hpp"
#include "pcbf/trainer.hpp"

namespace pcbf::baselines {

using nn::Matrix;
using nn::Vector;

struct BcfmOnly {};
/// Self-consistency at the Bellman-inverse point without the gamma factor.
struct DcfmUnscaled {};
/// Self-consistency at the Bellman-inverse point scaled by gamma.
struct DcfmScaled {};
/// BCFM + dcfm_coef * unscaled DCFM.
struct VfCombined {
  double dcfm_coef = 0.0;
};
struct OracleCfm {};

using BaselineKind = std::variant<BcfmOnly, DcfmUnscaled, DcfmScaled, VfCombined, OracleCfm>;

inline std::string kind_name(const BaselineKind& k) {
  struct V {
    std::string operator()(BcfmOnly) const { return "bcfm"; }
    std::string operator()(DcfmUnscaled) const { return "dcfm_unscaled"; }
    std::string operator()(DcfmScaled) const { return "dcfm_scaled"; }
    std::string operator()(VfCombined) const { return "vf"; }
    std::string operator()(OracleCfm) const { return "oracle_cfm"; }
  };
  return std::visit(V{}, k);
}

/// v_k(t, (z_t - r) / gamma | s').
template <flow::VelocityField F>
double dcfm_target_unscaled(const F& target_field, double t, double z_t, double r, double gamma,
                            std::span<const double> succ_context) {
  if (gamma == 0.0) throw SingularError("dcfm target: the Bellman-inverse map is singular at gamma = 0");
  return target_field(t, (z_t - r) / gamma, succ_context);
}

/// gamma * v_k(t, (z_t - r) / gamma | s').
template <flow::VelocityField F>
double dcfm_target_scaled(const F& target_field, double t, double z_t, double r, double gamma,
                          std::span<const double> succ_context) {
  return gamma * dcfm_target_unscaled(target_field, t, z_t, r, gamma, succ_context);
}

/// Inverse of the Bellman affine map z -> r + gamma z.
inline double bellman_inverse(double z, double r, double gamma) {
  if (gamma == 0.0) throw SingularError("bellman_inverse: singular at gamma = 0");
  return (z - r) / gamma;
}

/// Which regression terms a baseline step uses.
struct StepWeights {
  double bcfm = 1.0;          // weight of BCFM on non-terminal items
  double dcfm = 0.0;          // weight of DCFM on non-terminal items
  bool scaled = false;        // multiply the DCFM target by gamma
};

inline StepWeights weights_for(const BaselineKind& kind) {
  if (std::holds_alternative<DcfmUnscaled>(kind)) return {0.0, 1.0, false};
  if (std::holds_alternative<DcfmScaled>(kind)) return {0.0, 1.0, true};
  if (const auto* vf = std::get_if<VfCombined>(&kind)) {
    if (!(vf->dcfm_coef >= 0.0) || !std::isfinite(vf->dcfm_coef)) {
      throw ConfigError("dcfm_coef must be finite and non-negative");
    }
    return {1.0, vf->dcfm_coef, false};
  }
  return {1.0, 0.0, false};
}

/// One bootstrapped baseline update.
///
/// Loss = mean_i [w_b,i (v_i - Y_i)^2 + w_d m_i (v_i - D_i)^2], with Y the
/// BCFM target at Z_t = (1 - t) X0 + t (R + gamma X'), D the DCFM target at
/// the Bellman-inverse point, and m_i = 1 on non-terminal items only. The
/// BCFM term is always kept on terminal items. Draws come from the same
/// batch builder as PCBF (with lambda = 0), so randomness is consumed
/// identically.
inline double baseline_train_step(trainer::TrainState& state, std::span<const envs::Transition> batch,
                                  int context_dim, const BaselineKind& kind, const TrainConfig& config,
                                  RngStream& rng) {
  const StepWeights w = weights_for(kind);
  TrainConfig bcfm_config = config;
  bcfm_config.lambda = 0.0;
  const auto items = bellman::build_coupled_batch(batch, state.target, context_dim, bcfm_config, rng);
  const auto n = static_cast<Eigen::Index>(items.size());
  const Matrix inputs = bellman::current_inputs(items, context_dim);

  Vector y(n), mask(n), bcfm_w(n), inv_z(n), t(n);
  std::vector<int> next(items.size());
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& it = items[static_cast<std::size_t>(i)];
    const bool live = it.gamma_eff != 0.0;
    y(i) = it.u;
    mask(i) = live ? 1.0 : 0.0;
    bcfm_w(i) = live ? w.bcfm : 1.0;
    inv_z(i) = live ? bellman_inverse(it.z_curr, it.r, it.gamma_eff) : 0.0;
    t(i) = it.t;
    next[static_cast<std::size_t>(i)] = it.next_state;
  }
  Vector d = Vector::Zero(n);
  if (w.dcfm != 0.0) {
    d = nn::forward_batch(state.target, flow::make_inputs(inv_z, t, bellman::context_rows(next, context_dim)));
    if (w.scaled) d *= config.gamma;
  }

  nn::ForwardCache cache;
  const Vector v = nn::forward_batch(state.online, inputs, &cache);
  const double b = static_cast<double>(n);
  const Vector resid = (v - y).cwiseProduct(bcfm_w.cwiseSqrt());
  const Vector dresid = (v - d).cwiseProduct(mask);
  const double loss = resid.squaredNorm() / b + w.dcfm * (dresid.squaredNorm() / b);
  if (!std::isfinite(loss)) throw NumericError("baseline_train_step: non-finite loss");
  const Vector dout = (2.0 / b) * (resid.cwiseProduct(bcfm_w.cwiseSqrt()) + w.dcfm * dresid);
  const nn::Gradients g = nn::backward(state.online, cache, dout);
  nn::adam_step(state.online, g, state.adam, config.lr);
  nn::polyak_update(state.target, state.online, config.tau);
  return loss;
}

/// VF-style update: BCFM + dcfm_coef * unscaled DCFM.
inline double vf_train_step(trainer::TrainState& state, std::span<const envs::Transition> batch, int context_dim,
                            double dcfm_coef, const TrainConfig& config, RngStream& rng) {
  return baseline_train_step(state, batch, context_dim, VfCombined{dcfm_coef}, config, rng);
}

/// Train a bootstrapped baseline on an offline dataset.
inline trainer::TrainResult train_baseline(std::span<const envs::Transition> dataset, int context_dim,
                                           const BaselineKind& kind, const trainer::EvalSpec& eval,
                                           const TrainConfig& config, const trainer::EvalHook& on_eval = {}) {
  config.validate();
  if (std::holds_alternative<OracleCfm>(kind)) {
    throw UsageError("train_baseline: OracleCfm trains on oracle samples; use oracle_cfm_train");
  }
  if (dataset.empty()) throw UsageError("train_baseline: empty dataset");
  weights_for(kind);
  trainer::StepFn step = [&](trainer::TrainState& s, RngStream& rng) {
    const auto batch = trainer::sample_minibatch(dataset, config.batch_size, rng);
    return baseline_train_step(s, batch, context_dim, kind, config, rng);
  };
  return trainer::run_training(trainer::init_train_state(context_dim, config), step, eval, config, on_eval);
}

/// Plain conditional flow matching onto Monte Carlo return samples: each
/// item picks a state uniformly, X1 uniformly from that state's samples,
/// and regresses v(t, (1 - t) X0 + t X1 | s) onto X1 - X0.
inline trainer::TrainResult oracle_cfm_train(const std::map<int, Empirical>& mc_samples, int context_dim,
                                             const trainer::EvalSpec& eval, const TrainConfig& config,
                                             const trainer::EvalHook& on_eval = {}) {
  config.validate();
  if (mc_samples.empty()) throw UsageError("oracle_cfm_train: no oracle samples");
  std::vector<int> states;
  for (const auto& [s, law] : mc_samples) {
    if (law.samples.empty()) throw UsageError("oracle_cfm_train: empty oracle for state " + std::to_string(s));
    if (s < 0 || s >= context_dim) throw ShapeError("oracle_cfm_train: state outside the context width");
    states.push_back(s);
  }
  trainer::StepFn step = [&](trainer::TrainState& st, RngStream& rng) {
    const auto n = static_cast<Eigen::Index>(config.batch_size);
    Vector z(n), t(n), target(n);
    std::vector<int> row_states(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) {
      const int s = states[rng.index(states.size())];
      const auto& samples = mc_samples.at(s).samples;
      const double x1 = samples[rng.index(samples.size())];
      const double x0 = rng.normal();
      t(i) = rng.uniform();
      z(i) = flow::linear_interpolant(x0, x1, t(i));
      target(i) = flow::cfm_target(x0, x1);
      row_states[static_cast<std::size_t>(i)] = s;
    }
    const Matrix inputs = flow::make_inputs(z, t, bellman::context_rows(row_states, context_dim));
    auto lg = nn::loss_and_grads(st.online, inputs, target);
    nn::adam_step(st.online, lg.grads, st.adam, config.lr);
    nn::polyak_update(st.target, st.online, config.tau);
    return lg.loss;
  };
  return trainer::run_training(trainer::init_train_state(context_dim, config), step, eval, config, on_eval);
}

}  // namespace pcbf::baselines
