#pragma once

#include <chrono>
#include <cmath>
#include <functional>
#include <limits>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "pcbf/bellman.hpp"
#include "pcbf/config.hpp"
#include "pcbf/envs.hpp"
#include "pcbf/error.hpp"
#include "pcbf/flow.hpp"
#include "pcbf/nn.hpp"
#include "pcbf/return_law.hpp"
#include "pcbf/rng.hpp"
#include "pcbf/wasserstein.hpp"

namespace pcbf::trainer {

using nn::Matrix;
using nn::Vector;

/// Online network, its lagged copy, and the optimizer state.
struct TrainState {
  nn::Mlp online;
  nn::Mlp target;
  nn::AdamState adam;
};

// Sub-stream keys derived from the run seed.
inline constexpr std::uint64_t kInitStream = 1;
inline constexpr std::uint64_t kTrainStream = 2;
inline constexpr std::uint64_t kEvalStream = 3;

inline TrainState init_train_state(int context_dim, const TrainConfig& config) {
  const auto sizes = config.layer_sizes(context_dim);
  TrainState s;
  s.online = nn::init_params(sizes, RngStream(config.seed).split(kInitStream).seed());
  s.target = s.online;
  s.adam = nn::AdamState::for_params(s.online);
  return s;
}

/// States to evaluate and their ground-truth return laws.
struct EvalSpec {
  int context_dim = 1;
  std::vector<int> states;
  std::vector<ReturnLaw> truths;
};

struct EvalRecord {
  long step = 0;
  std::vector<double> w1;  // one per EvalSpec state

  double mean_w1() const {
    double s = 0.0;
    for (double w : w1) s += w;
    return w1.empty() ? 0.0 : s / static_cast<double>(w1.size());
  }
};

struct MetricsLog {
  std::vector<int> eval_states;
  std::vector<double> losses;         // index k holds step k + 1
  std::vector<double> loss_std;       // rolling std; NaN until the window fills
  std::vector<EvalRecord> evals;
  std::vector<double> seconds_per_1k; // wall clock, excluded from the CSV

  const EvalRecord& final_eval() const {
    if (evals.empty()) throw UsageError("metrics log has no evaluations");
    return evals.back();
  }
};

/// Rolling sample standard deviation; element k covers losses[k .. k + window).
inline std::vector<double> loss_std(std::span<const double> losses, int window) {
  if (window < 2) throw UsageError("loss_std: window must be >= 2");
  if (static_cast<std::size_t>(window) > losses.size()) throw UsageError("loss_std: window larger than series");
  std::vector<double> out;
  out.reserve(losses.size() - static_cast<std::size_t>(window) + 1);
  for (std::size_t k = 0; k + static_cast<std::size_t>(window) <= losses.size(); ++k) {
    double mean = 0.0;
    for (int j = 0; j < window; ++j) mean += losses[k + j];
    mean /= window;
    double ss = 0.0;
    for (int j = 0; j < window; ++j) ss += (losses[k + j] - mean) * (losses[k + j] - mean);
    out.push_back(std::sqrt(ss / (window - 1)));
  }
  return out;
}

inline std::vector<double> loss_std(const MetricsLog& log, int window) { return loss_std(log.losses, window); }

/// W1 of the online flow against each ground-truth law.
inline EvalRecord evaluate(const nn::Mlp& net, const EvalSpec& spec, int n_samples, int nfe, RngStream& rng,
                           long step) {
  EvalRecord rec{step, {}};
  for (std::size_t k = 0; k < spec.states.size(); ++k) {
    std::vector<double> ctx(static_cast<std::size_t>(spec.context_dim), 0.0);
    ctx[static_cast<std::size_t>(spec.states[k])] = 1.0;
    auto samples = flow::sample_returns(net, ctx, n_samples, rng, nfe);
    rec.w1.push_back(analysis::wasserstein1(make_empirical(std::move(samples)), spec.truths[k]));
  }
  return rec;
}

/// Minibatch drawn uniformly with replacement.
inline std::vector<envs::Transition> sample_minibatch(std::span<const envs::Transition> data, int batch_size,
                                                      RngStream& rng) {
  std::vector<envs::Transition> batch;
  batch.reserve(static_cast<std::size_t>(batch_size));
  for (int i = 0; i < batch_size; ++i) batch.push_back(data[rng.index(data.size())]);
  return batch;
}

inline std::string describe(const bellman::CoupledBatchItem& it) {
  std::ostringstream os;
  os.precision(17);
  os << "state=" << it.state << " next=" << it.next_state << " x0=" << it.x0 << " t=" << it.t << " r=" << it.r
     << " gamma_eff=" << it.gamma_eff << " lambda_eff=" << it.lambda_eff << " x'=" << it.x_prime
     << " z_curr=" << it.z_curr << " c_t=" << it.c_t << " u=" << it.u;
  return os.str();
}

/// One PCBF update on a minibatch.
inline double train_step(TrainState& state, std::span<const envs::Transition> batch, int context_dim,
                         const TrainConfig& config, RngStream& rng) {
  const auto items = bellman::build_coupled_batch(batch, state.target, context_dim, config, rng);
  const Matrix inputs = bellman::current_inputs(items, context_dim);
  Vector targets(static_cast<Eigen::Index>(items.size()));
  for (std::size_t i = 0; i < items.size(); ++i) targets(static_cast<Eigen::Index>(i)) = items[i].u;

  auto lg = nn::loss_and_grads(state.online, inputs, targets);
  if (!std::isfinite(lg.loss)) {
    const Vector pred = nn::forward_batch(state.online, inputs);
    std::size_t bad = 0;
    for (std::size_t i = 0; i < items.size(); ++i) {
      if (!std::isfinite(pred(static_cast<Eigen::Index>(i)))) { bad = i; break; }
    }
    throw NumericError("train_step: non-finite loss; item " + std::to_string(bad) + ": " + describe(items[bad]),
                       static_cast<long>(bad));
  }
  nn::adam_step(state.online, lg.grads, state.adam, config.lr);
  nn::polyak_update(state.target, state.online, config.tau);
  return lg.loss;
}

/// A single optimisation step: consumes the training stream, returns the loss.
using StepFn = std::function<double(TrainState&, RngStream&)>;

/// Called after every evaluation with the step and current state (checkpointing).
using EvalHook = std::function<void(long, const TrainState&)>;

struct TrainResult {
  TrainState state;
  MetricsLog log;
};

/// Fixed-budget loop shared by PCBF and the baselines. Evaluates every
/// `eval_every` steps and after the final step, each time on a fresh stream
/// keyed by the step so evaluation never perturbs training randomness.
inline TrainResult run_training(TrainState state, const StepFn& step, const EvalSpec& eval,
                                const TrainConfig& config, const EvalHook& on_eval = {}) {
  config.validate();
  RngStream rng = RngStream(config.seed).split(kTrainStream);
  const RngStream eval_root = RngStream(config.seed).split(kEvalStream);
  MetricsLog log;
  log.eval_states = eval.states;
  log.losses.reserve(static_cast<std::size_t>(config.total_steps));
  auto clock_start = std::chrono::steady_clock::now();
  for (long k = 1; k <= config.total_steps; ++k) {
    const double loss = step(state, rng);
    if (!std::isfinite(loss)) throw NumericError("non-finite loss at step " + std::to_string(k), k);
    log.losses.push_back(loss);
    if (k % 1000 == 0) {
      const auto now = std::chrono::steady_clock::now();
      log.seconds_per_1k.push_back(std::chrono::duration<double>(now - clock_start).count());
      clock_start = now;
    }
    if (!eval.states.empty() && (k % config.eval_every == 0 || k == config.total_steps)) {
      RngStream er = eval_root.split(static_cast<std::uint64_t>(k));
      log.evals.push_back(evaluate(state.online, eval, config.eval_samples, config.nfe, er, k));
      if (on_eval) on_eval(k, state);
    }
  }
  log.loss_std.assign(log.losses.size(), std::numeric_limits<double>::quiet_NaN());
  if (log.losses.size() >= static_cast<std::size_t>(config.loss_window)) {
    const auto s = loss_std(log.losses, config.loss_window);
    std::copy(s.begin(), s.end(), log.loss_std.begin() + (config.loss_window - 1));
  }
  return {std::move(state), std::move(log)};
}

/// PCBF training on an offline dataset.
inline TrainResult train(std::span<const envs::Transition> dataset, int context_dim, const EvalSpec& eval,
                         const TrainConfig& config, const EvalHook& on_eval = {}) {
  config.validate();
  if (dataset.empty()) throw UsageError("train: empty dataset");
  StepFn step = [&](TrainState& s, RngStream& rng) {
    const auto batch = sample_minibatch(dataset, config.batch_size, rng);
    return train_step(s, batch, context_dim, config, rng);
  };
  return run_training(init_train_state(context_dim, config), step, eval, config, on_eval);
}

}  // namespace pcbf::trainer
