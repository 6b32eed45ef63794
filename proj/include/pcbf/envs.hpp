#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "pcbf/error.hpp"
#include "pcbf/return_law.hpp"
#include "pcbf/rng.hpp"

namespace pcbf::envs {

/// next_state value for transitions that end the episode.
inline constexpr int kTerminal = -1;

struct Transition {
  int state = 0;
  double reward = 0.0;
  int next_state = 0;
  bool done = false;

  bool operator==(const Transition&) const = default;
};

enum class EnvKind { SolitaireDice, Bernoulli, DiscreteMC };

struct MrpSpec {
  EnvKind kind = EnvKind::Bernoulli;
  int n_states = 21;  // DiscreteMC only
  double gamma_default = 0.5;

  static MrpSpec solitaire() { return {EnvKind::SolitaireDice, 1, 0.9}; }
  static MrpSpec bernoulli() { return {EnvKind::Bernoulli, 1, 0.5}; }
  static MrpSpec discrete_mc(int n = 21) { return {EnvKind::DiscreteMC, n, 0.95}; }

  void validate() const {
    if (kind == EnvKind::DiscreteMC && n_states < 3) throw ConfigError("DiscreteMC needs n_states >= 3");
  }

  /// Width of the one-hot state context fed to the network.
  int context_dim() const { return kind == EnvKind::DiscreteMC ? n_states : 1; }

  /// States episodes may start from; these are the states with non-trivial returns.
  std::vector<int> start_states() const {
    if (kind != EnvKind::DiscreteMC) return {0};
    std::vector<int> s;
    for (int i = 1; i + 1 < n_states; ++i) s.push_back(i);
    return s;
  }

  std::string id() const {
    switch (kind) {
      case EnvKind::SolitaireDice: return "solitaire";
      case EnvKind::Bernoulli: return "bernoulli";
      case EnvKind::DiscreteMC: return "discrete_mc" + std::to_string(n_states);
    }
    return "unknown";
  }

  /// Upper bound on a single reward; used for truncation bounds.
  double max_reward() const { return 1.0; }
};

inline std::string kind_name(EnvKind k) {
  switch (k) {
    case EnvKind::SolitaireDice: return "solitaire";
    case EnvKind::Bernoulli: return "bernoulli";
    case EnvKind::DiscreteMC: return "discrete_mc";
  }
  return "unknown";
}

inline EnvKind parse_kind(const std::string& s) {
  if (s == "solitaire") return EnvKind::SolitaireDice;
  if (s == "bernoulli") return EnvKind::Bernoulli;
  if (s == "discrete_mc") return EnvKind::DiscreteMC;
  throw ConfigError("unknown environment '" + s + "' (expected solitaire, bernoulli or discrete_mc)");
}

// ---------------------------------------------------------------------------
// Solitaire Dice: roll a fair die; a 1 ends the episode with reward 0,
// anything else pays 1 and continues.

inline Transition solitaire_sample_transition(RngStream& rng) {
  if (rng.index(6) == 0) return {0, 0.0, kTerminal, true};
  return {0, 1.0, 0, false};
}

/// Atoms (1 - g^k)/(1 - g) with mass (1/6)(5/6)^k, truncated at the first k
/// whose remaining tail mass is <= tail_eps; the tail is lumped onto the last atom.
inline Atoms solitaire_return_law(double gamma, double tail_eps = 1e-9) {
  if (!(gamma > 0.0 && gamma < 1.0)) throw ConfigError("solitaire_return_law: gamma must lie in (0, 1)");
  if (!(tail_eps > 0.0 && tail_eps <= 1e-3)) throw ConfigError("solitaire_return_law: tail_eps must lie in (0, 1e-3]");
  Atoms a;
  double mass = 1.0 / 6.0;
  double tail = 5.0 / 6.0;  // P(G > atom k)
  for (int k = 0;; ++k) {
    const double value = (1.0 - std::pow(gamma, k)) / (1.0 - gamma);
    if (!a.values.empty() && !(value > a.values.back())) {
      a.probs.back() += mass;  // discounted atoms merged in floating point
    } else {
      a.values.push_back(value);
      a.probs.push_back(mass);
    }
    if (tail <= tail_eps) {
      a.probs.back() += tail;
      break;
    }
    mass *= 5.0 / 6.0;
    tail *= 5.0 / 6.0;
  }
  double total = 0.0;
  for (double p : a.probs) total += p;
  for (double& p : a.probs) p /= total;
  return a;
}

// ---------------------------------------------------------------------------
// Bernoulli: single state, fair {0, 1} rewards, never terminates.

inline Transition bernoulli_sample_transition(RngStream& rng) {
  return {0, static_cast<double>(rng.index(2)), 0, false};
}

/// Unif[0, 2]; the exact return law at gamma = 1/2.
inline ContinuousCdf bernoulli_return_law() { return ContinuousCdf{{0.0, 2.0}, {0.0, 1.0}}; }

// ---------------------------------------------------------------------------
// Discrete Monte Carlo chain: nearest-neighbour walk in a multi-well
// potential with absorbing ends.

/// P(i, i±1) = 1/2 * p(i±1) / (p(i) + p(i±1)), p(i) = exp((n-1)/(4π) cos(4π(i-1)/(n-1))).
inline Eigen::MatrixXd discrete_mc_kernel(int n) {
  if (n < 3) throw ConfigError("discrete_mc_kernel: n must be >= 3");
  const double pi = std::numbers::pi;
  std::vector<double> pot(n);
  for (int i = 0; i < n; ++i) {
    pot[i] = std::exp((n - 1) / (4.0 * pi) * std::cos(4.0 * pi * (i - 1) / (n - 1)));
  }
  Eigen::MatrixXd k = Eigen::MatrixXd::Zero(n, n);
  k(0, 0) = 1.0;
  k(n - 1, n - 1) = 1.0;
  for (int i = 1; i + 1 < n; ++i) {
    const double down = 0.5 * pot[i - 1] / (pot[i] + pot[i - 1]);
    const double up = 0.5 * pot[i + 1] / (pot[i] + pot[i + 1]);
    k(i, i - 1) = down;
    k(i, i + 1) = up;
    k(i, i) = 1.0 - down - up;
  }
  return k;
}

/// Reward 1 when the next state is interior, 0 when it is absorbing (which ends the episode).
inline Transition discrete_mc_sample_transition(int state, const Eigen::MatrixXd& kernel, RngStream& rng) {
  const int n = static_cast<int>(kernel.rows());
  if (state <= 0 || state >= n - 1) {
    throw UsageError("discrete_mc_sample_transition: state " + std::to_string(state) + " is absorbing or out of range");
  }
  const double u = rng.uniform();
  int next = state + 1;
  if (u < kernel(state, state - 1)) {
    next = state - 1;
  } else if (u < kernel(state, state - 1) + kernel(state, state)) {
    next = state;
  }
  if (next == 0 || next == n - 1) return {state, 0.0, kTerminal, true};
  return {state, 1.0, next, false};
}

// ---------------------------------------------------------------------------

/// Uniform transition sampler over the three environments.
class Mrp {
 public:
  explicit Mrp(MrpSpec spec) : spec_(spec) {
    spec_.validate();
    if (spec_.kind == EnvKind::DiscreteMC) kernel_ = discrete_mc_kernel(spec_.n_states);
  }

  const MrpSpec& spec() const { return spec_; }
  const Eigen::MatrixXd& kernel() const { return kernel_; }

  Transition step(int state, RngStream& rng) const {
    switch (spec_.kind) {
      case EnvKind::SolitaireDice: return solitaire_sample_transition(rng);
      case EnvKind::Bernoulli: return bernoulli_sample_transition(rng);
      case EnvKind::DiscreteMC: return discrete_mc_sample_transition(state, kernel_, rng);
    }
    return {};
  }

  int initial_state(RngStream& rng) const {
    if (spec_.kind != EnvKind::DiscreteMC) return 0;
    return 1 + static_cast<int>(rng.index(static_cast<std::uint64_t>(spec_.n_states - 2)));
  }

 private:
  MrpSpec spec_;
  Eigen::MatrixXd kernel_;
};

/// One discounted return from `start`, truncated after horizon_cap steps.
inline double rollout_return(const Mrp& mrp, int start, double gamma, int horizon_cap, RngStream& rng) {
  double g = 0.0;
  double disc = 1.0;
  int s = start;
  for (int k = 0; k < horizon_cap; ++k) {
    const Transition tr = mrp.step(s, rng);
    g += disc * tr.reward;
    if (tr.done) break;
    disc *= gamma;
    s = tr.next_state;
  }
  return g;
}

/// Worst-case return mass lost by truncating at horizon_cap.
inline double truncation_tail_bound(const MrpSpec& spec, double gamma, int horizon_cap) {
  return spec.max_reward() * std::pow(gamma, horizon_cap) / (1.0 - gamma);
}

/// Sorted discounted returns of n_rollouts full episodes from start_state.
inline Empirical mc_return_oracle(const MrpSpec& spec, int start_state, double gamma, int n_rollouts,
                                  int horizon_cap, RngStream& rng) {
  if (n_rollouts < 1) throw UsageError("mc_return_oracle: n_rollouts must be >= 1");
  if (!(gamma > 0.0 && gamma < 1.0)) throw ConfigError("mc_return_oracle: gamma must lie in (0, 1)");
  const Mrp mrp(spec);
  std::vector<double> g(static_cast<std::size_t>(n_rollouts));
  for (auto& x : g) x = rollout_return(mrp, start_state, gamma, horizon_cap, rng);
  return make_empirical(std::move(g));
}

/// Offline dataset harvested from consecutive episodes. DiscreteMC restarts
/// uniformly over interior states after termination.
inline std::vector<Transition> generate_dataset(const MrpSpec& spec, int n_transitions, RngStream& rng) {
  if (n_transitions < 1) throw UsageError("generate_dataset: n_transitions must be >= 1");
  const Mrp mrp(spec);
  std::vector<Transition> data;
  data.reserve(static_cast<std::size_t>(n_transitions));
  int s = mrp.initial_state(rng);
  while (static_cast<int>(data.size()) < n_transitions) {
    const Transition tr = mrp.step(s, rng);
    data.push_back(tr);
    s = tr.done ? mrp.initial_state(rng) : tr.next_state;
  }
  return data;
}

/// One-hot encoding of a state; the terminal sentinel maps to all zeros.
inline std::vector<double> one_hot(const MrpSpec& spec, int state) {
  std::vector<double> v(static_cast<std::size_t>(spec.context_dim()), 0.0);
  if (state >= 0 && state < spec.context_dim()) v[static_cast<std::size_t>(state)] = 1.0;
  return v;
}

}  // namespace pcbf::envs
