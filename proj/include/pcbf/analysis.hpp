#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "pcbf/envs.hpp"
#include "pcbf/error.hpp"
#include "pcbf/flow.hpp"
#include "pcbf/nn.hpp"
#include "pcbf/return_law.hpp"
#include "pcbf/rng.hpp"
#include "pcbf/wasserstein.hpp"

namespace pcbf::analysis {

using nn::Matrix;
using nn::Vector;

// ---------------------------------------------------------------------------
// Coupled-interpolant algebra

/// Base noise that the current interpolant maps to x: (x - t(r + gamma x1')) / (1 - t).
inline double implied_noise(double x, double x1_prime, double r, double gamma, double t) {
  if (t == 1.0) throw SingularError("implied_noise: the inverse map is singular at t = 1");
  if (!(t >= 0.0 && t < 1.0)) throw UsageError("implied_noise: t must lie in [0, 1)");
  return (x - t * (r + gamma * x1_prime)) / (1.0 - t);
}

// ---------------------------------------------------------------------------
// One-step linear-Gaussian MRP
//
// Successor return Z1' = mu + sigma W, base noises X0' = V' and
// X0 = rho V' + sqrt(1 - rho^2) V with W, V, V' iid N(0, 1).

struct GaussianCase {
  double mu = 0.0;
  double sigma = 1.0;
  double gamma = 0.9;
  double rho = 1.0;
  double r = 0.0;

  void validate() const {
    if (!(sigma > 0.0)) throw ConfigError("GaussianCase: sigma must be positive");
    if (!(rho >= -1.0 && rho <= 1.0)) throw ConfigError("GaussianCase: rho must lie in [-1, 1]");
  }
};

/// Slope of the population successor velocity in z': (t s^2 - (1 - t)) / (t^2 s^2 + (1 - t)^2).
inline double gaussian_beta(double t, double sigma) {
  const double den = t * t * sigma * sigma + (1.0 - t) * (1.0 - t);
  if (den == 0.0) throw SingularError("gaussian_beta: zero denominator");
  return (t * sigma * sigma - (1.0 - t)) / den;
}

/// E[Z1' - X0' | Z'_t = z'] = mu + beta(t, sigma)(z' - t mu).
inline double gaussian_vstar_successor(double z_prime, double t, double mu, double sigma) {
  return mu + gaussian_beta(t, sigma) * (z_prime - t * mu);
}

/// Regression slope of the intrinsic control variate on the centred current interpolant.
inline double kappa(double t, double gamma, double sigma, double rho) {
  const double s2 = sigma * sigma;
  const double den = (t * t * s2 + (1.0 - t) * (1.0 - t)) * (gamma * t * gamma * t * s2 + (1.0 - t) * (1.0 - t));
  if (den == 0.0) throw SingularError("kappa: zero denominator");
  return t * (1.0 - t) * s2 * (rho - gamma) / den;
}

/// Variance-minimizing control-variate weight gamma (1 - t) + rho t.
inline double lambda_star(double t, double gamma, double rho) { return gamma * (1.0 - t) + rho * t; }

/// Var(u^lambda | t) = 1 + g^2 s^2 + s^2 / D_t (lambda^2 - 2 lambda lambda*(t)), D_t = t^2 s^2 + (1 - t)^2.
inline double target_variance(double lambda, double t, double gamma, double sigma, double rho) {
  const double s2 = sigma * sigma;
  const double d = t * t * s2 + (1.0 - t) * (1.0 - t);
  if (d == 0.0) throw SingularError("target_variance: D_t = 0");
  return 1.0 + gamma * gamma * s2 + s2 / d * (lambda * lambda - 2.0 * lambda * lambda_star(t, gamma, rho));
}

/// Joint draw of the Gaussian model at a fixed flow time.
struct GaussianDraw {
  double w, v, v_prime;
  double z1_prime;  // successor return
  double x0;        // current base noise
  double x0_prime;  // successor base noise
  double zt_prime;  // successor interpolant
  double zt;        // current interpolant
  double c;         // intrinsic control variate under the population successor field
};

inline GaussianDraw draw_gaussian(const GaussianCase& g, double t, RngStream& rng) {
  GaussianDraw d{};
  d.w = rng.normal();
  d.v = rng.normal();
  d.v_prime = rng.normal();
  d.z1_prime = g.mu + g.sigma * d.w;
  d.x0_prime = d.v_prime;
  d.x0 = g.rho * d.v_prime + std::sqrt(std::max(0.0, 1.0 - g.rho * g.rho)) * d.v;
  d.zt_prime = t * d.z1_prime + (1.0 - t) * d.x0_prime;
  d.zt = t * (g.r + g.gamma * d.z1_prime) + (1.0 - t) * d.x0;
  d.c = gaussian_vstar_successor(d.zt_prime, t, g.mu, g.sigma) - (d.z1_prime - d.x0_prime);
  return d;
}

struct KappaCheck {
  double slope = 0.0;
  double slope_se = 0.0;
  double kappa_exact = 0.0;
  double rel_error = 0.0;
};

using KappaFn = std::function<double(double, double, double, double)>;

/// Regress C on (Z_t - t(r + gamma mu)) through the origin and compare the
/// slope with the closed form. `kappa_fn` is injectable for fault tests.
inline KappaCheck verify_kappa_mc(const GaussianCase& g, double t, long n_samples, RngStream& rng,
                                  const KappaFn& kappa_fn = kappa) {
  g.validate();
  if (n_samples < 100'000) throw UsageError("verify_kappa_mc: needs at least 1e5 samples");
  std::vector<double> xs(static_cast<std::size_t>(n_samples)), cs(xs.size());
  const double centre = t * (g.r + g.gamma * g.mu);
  double sxx = 0.0, sxc = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const GaussianDraw d = draw_gaussian(g, t, rng);
    xs[i] = d.zt - centre;
    cs[i] = d.c;
    sxx += xs[i] * xs[i];
    sxc += xs[i] * cs[i];
  }
  if (!(sxx > 0.0)) throw NumericError("verify_kappa_mc: regressor has zero variance");
  KappaCheck out;
  out.slope = sxc / sxx;
  double sse = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double e = cs[i] - out.slope * xs[i];
    sse += e * e;
  }
  out.slope_se = std::sqrt(sse / static_cast<double>(n_samples - 1) / sxx);
  out.kappa_exact = kappa_fn(t, g.gamma, g.sigma, g.rho);
  out.rel_error = out.kappa_exact != 0.0 ? std::abs(out.slope - out.kappa_exact) / std::abs(out.kappa_exact)
                                         : std::abs(out.slope);
  return out;
}

/// Empirical Var(u^lambda) for each lambda from one shared set of draws.
inline std::vector<double> simulate_target_variance(const GaussianCase& g, double t, std::span<const double> lambdas,
                                                    long n_samples, RngStream& rng) {
  g.validate();
  const std::size_t k = lambdas.size();
  std::vector<double> sum(k, 0.0), sum2(k, 0.0);
  for (long i = 0; i < n_samples; ++i) {
    const GaussianDraw d = draw_gaussian(g, t, rng);
    const double y = (g.r + g.gamma * d.z1_prime) - d.x0;
    for (std::size_t j = 0; j < k; ++j) {
      const double u = y + lambdas[j] * d.c;
      sum[j] += u;
      sum2[j] += u * u;
    }
  }
  std::vector<double> var(k);
  const double n = static_cast<double>(n_samples);
  for (std::size_t j = 0; j < k; ++j) var[j] = (sum2[j] - sum[j] * sum[j] / n) / (n - 1.0);
  return var;
}

/// Silverman's rule-of-thumb bandwidth 1.06 sd n^(-1/5).
inline double silverman_bandwidth(std::span<const double> xs) {
  const double n = static_cast<double>(xs.size());
  const double mean = std::accumulate(xs.begin(), xs.end(), 0.0) / n;
  double ss = 0.0;
  for (double x : xs) ss += (x - mean) * (x - mean);
  return 1.06 * std::sqrt(ss / (n - 1.0)) * std::pow(n, -0.2);
}

/// Local-linear Gaussian-kernel estimate of E[Y | X = x0].
inline double local_linear_regression(std::span<const double> xs, std::span<const double> ys, double x0, double h) {
  double s0 = 0.0, s1 = 0.0, s2 = 0.0, t0 = 0.0, t1 = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double d = xs[i] - x0;
    const double u = d / h;
    if (std::abs(u) > 8.0) continue;
    const double k = std::exp(-0.5 * u * u);
    s0 += k;
    s1 += k * d;
    s2 += k * d * d;
    t0 += k * ys[i];
    t1 += k * d * ys[i];
  }
  const double den = s0 * s2 - s1 * s1;
  if (!(den > 0.0)) throw NumericError("local_linear_regression: degenerate design near query point");
  return (s2 * t0 - s1 * t1) / den;
}

struct CurvePoint {
  double x = 0.0;
  double estimate = 0.0;
  double exact = 0.0;
  double rel_error = 0.0;
};

struct CurveCheck {
  double bandwidth = 0.0;
  std::vector<CurvePoint> points;

  double max_rel_error() const {
    double m = 0.0;
    for (const auto& p : points) m = std::max(m, p.rel_error);
    return m;
  }
};

namespace detail {
inline CurveCheck fit_curve(const std::vector<double>& xs, const std::vector<double>& ys,
                            std::span<const double> grid, const std::function<double(double)>& exact) {
  CurveCheck out;
  out.bandwidth = silverman_bandwidth(xs);
  for (double x : grid) {
    CurvePoint p;
    p.x = x;
    p.estimate = local_linear_regression(xs, ys, x, out.bandwidth);
    p.exact = exact(x);
    p.rel_error = std::abs(p.estimate - p.exact) / std::abs(p.exact);
    out.points.push_back(p);
  }
  return out;
}
}  // namespace detail

/// Kernel-regression estimate of E[Z1' - X0' | Z'_t = z'] against gaussian_vstar_successor.
inline CurveCheck successor_velocity_check(const GaussianCase& g, double t, std::span<const double> grid,
                                           long n_samples, RngStream& rng) {
  std::vector<double> xs(static_cast<std::size_t>(n_samples)), ys(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const GaussianDraw d = draw_gaussian(g, t, rng);
    xs[i] = d.zt_prime;
    ys[i] = d.z1_prime - d.x0_prime;
  }
  return detail::fit_curve(xs, ys, grid,
                           [&](double z) { return gaussian_vstar_successor(z, t, g.mu, g.sigma); });
}

/// Closed-form posterior velocity of the current interpolant with independent
/// base noise: E[(r + gamma Z1') - X0 | X_t = x].
inline double gaussian_posterior_velocity(double x, double t, const GaussianCase& g) {
  const double gs2 = g.gamma * g.gamma * g.sigma * g.sigma;
  const double mean_v = g.r + g.gamma * g.mu;
  const double cov = t * gs2 - (1.0 - t);
  const double var = t * t * gs2 + (1.0 - t) * (1.0 - t);
  if (var == 0.0) throw SingularError("gaussian_posterior_velocity: degenerate interpolant");
  return mean_v + cov / var * (x - t * mean_v);
}

/// Kernel-regression estimate of the posterior velocity against its closed form.
/// The case's rho is ignored: the current path uses independent base noise here.
inline CurveCheck posterior_velocity_check(const GaussianCase& g, double t, std::span<const double> grid,
                                           long n_samples, RngStream& rng) {
  std::vector<double> xs(static_cast<std::size_t>(n_samples)), ys(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double z1 = g.mu + g.sigma * rng.normal();
    const double x0 = rng.normal();
    const double end = g.r + g.gamma * z1;
    xs[i] = (1.0 - t) * x0 + t * end;
    ys[i] = end - x0;
  }
  return detail::fit_curve(xs, ys, grid, [&](double x) { return gaussian_posterior_velocity(x, t, g); });
}

// ---------------------------------------------------------------------------
// Shared-noise Bellman contraction

/// Return generator G_s(xi) = a_s + b_s xi; the terminal sentinel returns 0.
struct AffineGenerator {
  std::vector<double> offset;
  std::vector<double> scale;

  double operator()(int state, double xi) const {
    if (state < 0) return 0.0;
    return offset[static_cast<std::size_t>(state)] + scale[static_cast<std::size_t>(state)] * xi;
  }

  static AffineGenerator random(int n_states, RngStream& rng, double spread = 2.0) {
    AffineGenerator g;
    for (int s = 0; s < n_states; ++s) {
      g.offset.push_back(spread * (2.0 * rng.uniform() - 1.0));
      g.scale.push_back(spread * (2.0 * rng.uniform() - 1.0));
    }
    return g;
  }

  AffineGenerator shifted(double c) const {
    AffineGenerator g = *this;
    for (double& a : g.offset) a += c;
    return g;
  }
};

struct ContractionResult {
  double d_before = 0.0;
  double d_after = 0.0;
  double ratio = 0.0;
};

inline double pth_mean_root(double sum_pow, double n, double p) { return std::pow(sum_pow / n, 1.0 / p); }

/// sup_s (E_xi |G_s(xi) - H_s(xi)|^p)^(1/p) over the given states.
inline double generator_distance(const AffineGenerator& g, const AffineGenerator& h, std::span<const int> states,
                                 double p, long n_seeds, RngStream& rng) {
  double d = 0.0;
  for (int s : states) {
    double acc = 0.0;
    for (long i = 0; i < n_seeds; ++i) {
      const double xi = rng.normal();
      acc += std::pow(std::abs(g(s, xi) - h(s, xi)), p);
    }
    d = std::max(d, pth_mean_root(acc, static_cast<double>(n_seeds), p));
  }
  return d;
}

/// D_p before and after one shared-coupling Bellman generator update: both
/// generators see the same transition, reward and successor seed.
inline ContractionResult contraction_check(const AffineGenerator& g, const AffineGenerator& h, const envs::Mrp& env,
                                           double gamma, double p, long n_seeds, RngStream& rng) {
  if (!(p >= 1.0)) throw UsageError("contraction_check: p must be >= 1");
  const auto states = env.spec().start_states();
  RngStream before_rng = rng.split(1);
  RngStream after_rng = rng.split(2);
  ContractionResult out;
  out.d_before = generator_distance(g, h, states, p, n_seeds, before_rng);
  for (int s : states) {
    double acc = 0.0;
    for (long i = 0; i < n_seeds; ++i) {
      const envs::Transition tr = env.step(s, after_rng);
      const double xi = after_rng.normal();
      const int next = tr.done ? envs::kTerminal : tr.next_state;
      const double tg = tr.reward + gamma * g(next, xi);
      const double th = tr.reward + gamma * h(next, xi);
      acc += std::pow(std::abs(tg - th), p);
    }
    out.d_after = std::max(out.d_after, pth_mean_root(acc, static_cast<double>(n_seeds), p));
  }
  out.ratio = out.d_before > 0.0 ? out.d_after / out.d_before : 0.0;
  return out;
}

struct InterpolantContraction {
  double gap = 0.0;    // sup_s (E|X_t^G - X_t^H|^p)^(1/p)
  double d_gh = 0.0;   // D_p(G, H)
  double bound = 0.0;  // t gamma D_p(G, H)
  double ratio = 0.0;  // gap / D_p(G, H)
};

/// Compare PCBF interpolants (1 - t) x0 + t (R + gamma Phi_{S'}(xi')) built
/// from G and H with shared x0, transition and xi'.
inline InterpolantContraction interpolant_contraction_check(const AffineGenerator& g, const AffineGenerator& h,
                                                            const envs::Mrp& env, double gamma, double p, double t,
                                                            long n_seeds, RngStream& rng) {
  if (!(p >= 1.0)) throw UsageError("interpolant_contraction_check: p must be >= 1");
  flow::check_unit_time(t, "interpolant_contraction_check");
  const auto states = env.spec().start_states();
  RngStream before_rng = rng.split(1);
  RngStream after_rng = rng.split(2);
  InterpolantContraction out;
  out.d_gh = generator_distance(g, h, states, p, n_seeds, before_rng);
  for (int s : states) {
    double acc = 0.0;
    for (long i = 0; i < n_seeds; ++i) {
      const envs::Transition tr = env.step(s, after_rng);
      const double x0 = after_rng.normal();
      const double xi = after_rng.normal();
      const int next = tr.done ? envs::kTerminal : tr.next_state;
      const double xg = (1.0 - t) * x0 + t * (tr.reward + gamma * g(next, xi));
      const double xh = (1.0 - t) * x0 + t * (tr.reward + gamma * h(next, xi));
      acc += std::pow(std::abs(xg - xh), p);
    }
    out.gap = std::max(out.gap, pth_mean_root(acc, static_cast<double>(n_seeds), p));
  }
  out.bound = t * gamma * out.d_gh;
  out.ratio = out.d_gh > 0.0 ? out.gap / out.d_gh : 0.0;
  return out;
}

// ---------------------------------------------------------------------------
// Sensitivity of the lambda-target to successor endpoint error

struct EulerSensitivity {
  double measured = 0.0;
  double bound = 0.0;
  bool holds = false;
};

/// Build u^lambda from the exact successor endpoint x' and from x' + delta,
/// with a successor field that is L_t-Lipschitz in z, and check
/// |u_hat - u| <= (|gamma - lambda| + lambda L_t t) |delta|.
template <class Field>
EulerSensitivity euler_sensitivity_check(const Field& field, double lipschitz, double delta, double lambda,
                                         double gamma, double t, double r, double x0, double x_prime) {
  if (!(lambda >= 0.0)) throw UsageError("euler_sensitivity_check: lambda must be >= 0");
  auto target = [&](double xp) {
    const double zt = (1.0 - t) * x0 + t * xp;
    return r + gamma * xp - x0 + lambda * (field(t, zt) - (xp - x0));
  };
  EulerSensitivity out;
  out.measured = std::abs(target(x_prime + delta) - target(x_prime));
  out.bound = (std::abs(gamma - lambda) + lambda * lipschitz * t) * std::abs(delta);
  // Slack covers rounding in the two target evaluations only.
  const double scale = std::abs(r) + std::abs(x0) + std::abs(x_prime) + std::abs(delta) + 1.0;
  out.holds = out.measured <= out.bound + 1e-12 * scale;
  return out;
}

// ---------------------------------------------------------------------------
// Corrected pathwise Bellman residual

enum class Coupling { Shared, Independent };

inline std::string coupling_name(Coupling c) { return c == Coupling::Shared ? "shared" : "independent"; }

struct ResidualCell {
  double t = 0.0;          // requested time
  int nfe = 0;
  double stop_time = 0.0;  // floor(t N) / N, the time actually integrated to
  double mean = 0.0;
  double ci95 = 0.0;       // half-width of the normal 95% interval
};

struct ResidualGrid {
  Coupling coupling = Coupling::Shared;
  std::vector<double> t_grid;
  std::vector<int> nfe_grid;
  std::vector<ResidualCell> cells;  // row-major over (t, nfe)

  const ResidualCell& at(std::size_t ti, std::size_t ni) const { return cells[ti * nfe_grid.size() + ni]; }
};

/// Number of 1/N Euler steps that stays at or before t.
inline int steps_before(double t, int nfe) {
  const int k = static_cast<int>(std::floor(t * nfe + 1e-9));
  return std::clamp(k, 0, nfe);
}

/// Mean |Z^s_t - (t R + g Z^{s'}_t + (1 - t)(1 - g) X0)| over non-terminal
/// transitions, with both paths integrated by Euler on a 1/N grid up to
/// floor(tN)/N. The current path uses `online` and the successor `target`;
/// under independent coupling the successor starts from a fresh X0'.
/// Cell c draws from rng.split(c) so both couplings share X0 and transitions.
inline ResidualGrid corrected_residual_sweep(const nn::Mlp& online, const nn::Mlp& target,
                                             std::span<const envs::Transition> transitions, int context_dim,
                                             double gamma, std::span<const double> t_grid,
                                             std::span<const int> nfe_grid, Coupling coupling, int n_samples,
                                             const RngStream& rng) {
  std::vector<envs::Transition> live;
  for (const auto& tr : transitions) {
    if (!tr.done) live.push_back(tr);
  }
  if (live.empty()) throw UsageError("corrected_residual_sweep: no non-terminal transitions");
  if (n_samples < 2) throw UsageError("corrected_residual_sweep: need at least 2 samples per cell");
  ResidualGrid grid;
  grid.coupling = coupling;
  grid.t_grid.assign(t_grid.begin(), t_grid.end());
  grid.nfe_grid.assign(nfe_grid.begin(), nfe_grid.end());
  std::uint64_t cell_id = 0;
  for (double t : t_grid) {
    flow::check_unit_time(t, "corrected_residual_sweep");
    for (int nfe : nfe_grid) {
      RngStream cell_rng = rng.split(cell_id);
      RngStream fresh_rng = rng.split(cell_id + 0x10000);
      ++cell_id;
      const auto n = static_cast<Eigen::Index>(n_samples);
      Vector x0(n), x0_succ(n), reward(n);
      Matrix ctx = Matrix::Zero(n, context_dim), ctx_next = Matrix::Zero(n, context_dim);
      for (Eigen::Index i = 0; i < n; ++i) {
        const auto& tr = live[cell_rng.index(live.size())];
        x0(i) = cell_rng.normal();
        x0_succ(i) = coupling == Coupling::Shared ? x0(i) : fresh_rng.normal();
        reward(i) = tr.reward;
        ctx(i, tr.state) = 1.0;
        ctx_next(i, tr.next_state) = 1.0;
      }
      const int steps = steps_before(t, nfe);
      const double stop = static_cast<double>(steps) / nfe;
      const Vector zs = flow::integrate_network(online, x0, ctx, nfe, steps);
      const Vector zn = flow::integrate_network(target, x0_succ, ctx_next, nfe, steps);
      double sum = 0.0, sum2 = 0.0;
      for (Eigen::Index i = 0; i < n; ++i) {
        const double anchor = stop * reward(i) + gamma * zn(i) + (1.0 - stop) * (1.0 - gamma) * x0(i);
        const double res = std::abs(zs(i) - anchor);
        sum += res;
        sum2 += res * res;
      }
      ResidualCell cell;
      cell.t = t;
      cell.nfe = nfe;
      cell.stop_time = stop;
      cell.mean = sum / n_samples;
      const double var = std::max(0.0, (sum2 - sum * sum / n_samples) / (n_samples - 1));
      cell.ci95 = 1.96 * std::sqrt(var / n_samples);
      grid.cells.push_back(cell);
    }
  }
  return grid;
}

// ---------------------------------------------------------------------------

/// Mean of m flow samples: the scalar score used to rank candidates.
inline double qhat_mean(const nn::Mlp& net, std::span<const double> context, int m_samples, RngStream& rng, int nfe) {
  const auto s = flow::sample_returns(net, context, m_samples, rng, nfe);
  return std::accumulate(s.begin(), s.end(), 0.0) / static_cast<double>(s.size());
}

}  // namespace pcbf::analysis
