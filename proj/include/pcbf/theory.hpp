#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "pcbf/analysis.hpp"
#include "pcbf/envs.hpp"
#include "pcbf/rng.hpp"

namespace pcbf::analysis {

struct TheoryConfig {
  std::uint64_t seed = 0;
  long kappa_samples = 1'000'000;
  long variance_samples = 1'000'000;
  long curve_samples = 1'000'000;
  long contraction_seeds = 100'000;
  int contraction_pairs = 20;
  int euler_cases = 50;
  bool negate_kappa = false;  // fault injection
};

struct CheckOutcome {
  std::string name;
  bool pass = false;
  nlohmann::json detail;
};

inline nlohmann::json to_json(const CheckOutcome& c) {
  return {{"name", c.name}, {"pass", c.pass}, {"detail", c.detail}};
}

/// kappa regression at (t, rho) in {0.3, 0.5, 0.7} x {0, 1}, gamma 0.9, sigma 1,
/// plus a zero-slope check at rho = gamma.
inline CheckOutcome kappa_suite(const TheoryConfig& cfg) {
  const RngStream root = RngStream(cfg.seed).split(0x4b41);
  KappaFn fn = kappa;
  if (cfg.negate_kappa) fn = [](double t, double g, double s, double r) { return -kappa(t, g, s, r); };
  CheckOutcome out{"gaussian_kappa", true, nlohmann::json::array()};
  std::uint64_t id = 0;
  for (double t : {0.3, 0.5, 0.7}) {
    for (double rho : {0.0, 1.0, 0.9}) {
      GaussianCase g{0.0, 1.0, 0.9, rho, 0.0};
      RngStream rng = root.split(id++);
      const KappaCheck k = verify_kappa_mc(g, t, cfg.kappa_samples, rng, fn);
      const bool zero_case = rho == g.gamma;
      const bool ok = zero_case ? std::abs(k.slope) <= 3.0 * k.slope_se : k.rel_error <= 0.10;
      out.pass = out.pass && ok;
      out.detail.push_back({{"t", t}, {"rho", rho}, {"slope", k.slope}, {"slope_se", k.slope_se},
                            {"kappa", k.kappa_exact}, {"rel_error", k.rel_error}, {"pass", ok}});
    }
  }
  return out;
}

/// Simulated Var(u^lambda) on a 0.05 lambda grid: argmin near lambda*, and the
/// closed form within 2% at every grid point.
inline CheckOutcome lambda_star_suite(const TheoryConfig& cfg) {
  const RngStream root = RngStream(cfg.seed).split(0x4c53);
  std::vector<double> grid;
  for (int i = 0; i <= 20; ++i) grid.push_back(0.05 * i);
  CheckOutcome out{"lambda_star", true, nlohmann::json::array()};
  std::uint64_t id = 0;
  for (double t : {0.25, 0.5, 0.75}) {
    for (double rho : {0.0, 1.0}) {
      GaussianCase g{0.0, 1.0, 0.9, rho, 0.0};
      RngStream rng = root.split(id++);
      const auto var = simulate_target_variance(g, t, grid, cfg.variance_samples, rng);
      std::size_t best = 0;
      double worst_rel = 0.0;
      for (std::size_t j = 0; j < grid.size(); ++j) {
        if (var[j] < var[best]) best = j;
        const double cf = target_variance(grid[j], t, g.gamma, g.sigma, g.rho);
        worst_rel = std::max(worst_rel, std::abs(var[j] - cf) / cf);
      }
      const double ls = lambda_star(t, g.gamma, g.rho);
      const bool ok = std::abs(grid[best] - ls) <= 0.05 + 1e-9 && worst_rel <= 0.02;
      out.pass = out.pass && ok;
      out.detail.push_back({{"t", t}, {"rho", rho}, {"argmin", grid[best]}, {"lambda_star", ls},
                            {"max_rel_error", worst_rel}, {"pass", ok}});
    }
  }
  return out;
}

/// Kernel-regression checks of the successor (2%) and current-path posterior (3%)
/// velocities on 9-point grids.
inline CheckOutcome posterior_velocity_suite(const TheoryConfig& cfg) {
  const RngStream root = RngStream(cfg.seed).split(0x5056);
  CheckOutcome out{"posterior_velocity", true, nlohmann::json::object()};
  auto grid_around = [](double mean, double sd, double width) {
    std::vector<double> g;
    for (int i = 0; i < 9; ++i) g.push_back(mean + sd * width * (-1.0 + 0.25 * i));
    return g;
  };
  {
    const GaussianCase g{1.0, 1.0, 0.9, 1.0, 0.0};
    const double t = 0.5;
    const auto grid = grid_around(t * g.mu, std::sqrt(t * t * g.sigma * g.sigma + (1 - t) * (1 - t)), 1.0);
    RngStream rng = root.split(1);
    const CurveCheck c = successor_velocity_check(g, t, grid, cfg.curve_samples, rng);
    const bool ok = c.max_rel_error() <= 0.02;
    out.pass = out.pass && ok;
    out.detail["successor"] = {{"bandwidth", c.bandwidth}, {"max_rel_error", c.max_rel_error()}, {"pass", ok}};
  }
  {
    const GaussianCase g{1.0, 1.0, 0.9, 0.0, 1.0};
    const double t = 0.5;
    const double mean = t * (g.r + g.gamma * g.mu);
    const double sd = std::sqrt(t * t * g.gamma * g.gamma * g.sigma * g.sigma + (1 - t) * (1 - t));
    RngStream rng = root.split(2);
    const CurveCheck c = posterior_velocity_check(g, t, grid_around(mean, sd, 1.5), cfg.curve_samples, rng);
    const bool ok = c.max_rel_error() <= 0.03;
    out.pass = out.pass && ok;
    out.detail["current"] = {{"bandwidth", c.bandwidth}, {"max_rel_error", c.max_rel_error()}, {"pass", ok}};
  }
  return out;
}

/// Shared-noise contraction on Solitaire and DiscreteMC, interpolant bound, and
/// the exact constant-offset case.
inline CheckOutcome contraction_suite(const TheoryConfig& cfg) {
  const RngStream root = RngStream(cfg.seed).split(0x434f);
  CheckOutcome out{"contraction", true, nlohmann::json::object()};
  double worst_ratio_slack = -1.0, worst_interp_slack = -1.0;
  std::uint64_t id = 0;
  for (const auto& spec : {envs::MrpSpec::solitaire(), envs::MrpSpec::discrete_mc(21)}) {
    const envs::Mrp env(spec);
    const double gamma = spec.gamma_default;
    for (int k = 0; k < cfg.contraction_pairs; ++k) {
      RngStream gen_rng = root.split(id++);
      const auto g = AffineGenerator::random(spec.n_states, gen_rng);
      const auto h = AffineGenerator::random(spec.n_states, gen_rng);
      for (double p : {1.0, 2.0}) {
        RngStream rng = root.split(id++);
        const ContractionResult c = contraction_check(g, h, env, gamma, p, cfg.contraction_seeds, rng);
        worst_ratio_slack = std::max(worst_ratio_slack, c.ratio - gamma);
        if (k < 4) {
          for (double t : {0.25, 0.5, 0.75}) {
            RngStream irng = root.split(id++);
            const auto ic = interpolant_contraction_check(g, h, env, gamma, p, t, cfg.contraction_seeds, irng);
            worst_interp_slack = std::max(worst_interp_slack, ic.ratio - t * gamma);
          }
        }
      }
    }
  }
  const bool ratio_ok = worst_ratio_slack <= 0.02;
  const bool interp_ok = worst_interp_slack <= 0.02;

  double worst_exact = 0.0;
  for (const auto& spec : {envs::MrpSpec::bernoulli(), envs::MrpSpec::discrete_mc(21)}) {
    const envs::Mrp env(spec);
    RngStream gen_rng = root.split(id++);
    const auto g = AffineGenerator::random(spec.context_dim(), gen_rng);
    const auto h = g.shifted(0.7);
    for (double p : {1.0, 2.0}) {
      RngStream rng = root.split(id++);
      const auto c = contraction_check(g, h, env, 0.9, p, 10'000, rng);
      worst_exact = std::max(worst_exact, std::abs(c.ratio - 0.9));
    }
  }
  const bool exact_ok = worst_exact <= 1e-12;
  out.pass = ratio_ok && interp_ok && exact_ok;
  out.detail = {{"max_ratio_minus_gamma", worst_ratio_slack},
                {"max_interpolant_ratio_minus_t_gamma", worst_interp_slack},
                {"constant_offset_max_abs_error", worst_exact},
                {"pass_ratio", ratio_ok},
                {"pass_interpolant", interp_ok},
                {"pass_constant_offset", exact_ok}};
  return out;
}

/// Euler-sensitivity inequality on random fields a sin(b z + phi) + c z, whose
/// Lipschitz constant is |a b| + |c|. Case 0 uses lambda = 0 and must attain
/// the bound gamma |delta|.
inline CheckOutcome euler_suite(const TheoryConfig& cfg) {
  RngStream rng = RngStream(cfg.seed).split(0x4555);
  CheckOutcome out{"euler_sensitivity", true, nlohmann::json::object()};
  int violations = 0;
  double lambda0_error = 0.0;
  for (int k = 0; k < cfg.euler_cases; ++k) {
    const double a = 2.0 * rng.normal(), b = 2.0 * rng.normal(), phi = rng.uniform() * 6.0, c = rng.normal();
    const double lip = std::abs(a * b) + std::abs(c);
    auto field = [=](double, double z) { return a * std::sin(b * z + phi) + c * z; };
    const double lambda = k == 0 ? 0.0 : 1.2 * rng.uniform();
    const double gamma = 0.05 + 0.9 * rng.uniform();
    const double t = rng.uniform();
    const double delta = rng.normal(), r = rng.normal(), x0 = rng.normal(), xp = 2.0 * rng.normal();
    const auto e = euler_sensitivity_check(field, lip, delta, lambda, gamma, t, r, x0, xp);
    if (!e.holds) ++violations;
    if (k == 0) lambda0_error = std::abs(e.measured - e.bound) / e.bound;
  }
  out.pass = violations == 0 && lambda0_error <= 1e-12;
  out.detail = {{"cases", cfg.euler_cases}, {"violations", violations}, {"lambda0_rel_gap", lambda0_error}};
  return out;
}

inline std::vector<CheckOutcome> run_theory_checks(const TheoryConfig& cfg) {
  return {kappa_suite(cfg), lambda_star_suite(cfg), posterior_velocity_suite(cfg), contraction_suite(cfg),
          euler_suite(cfg)};
}

}  // namespace pcbf::analysis
