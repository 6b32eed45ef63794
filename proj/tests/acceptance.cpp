// Acceptance run: one PASS/FAIL line per criterion on stdout, progress on stderr.

#include <cstdio>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "pcbf/cli.hpp"

using namespace pcbf;
namespace fs = std::filesystem;

namespace {

int failures = 0;

void report(int id, const std::string& name, bool pass, const std::string& detail) {
  std::printf("%s %02d %s: %s\n", pass ? "PASS" : "FAIL", id, name.c_str(), detail.c_str());
  std::fflush(stdout);
  if (!pass) ++failures;
}

void progress(const std::string& msg) { std::cerr << "  .. " << msg << std::endl; }

std::string num(double x, int digits = 4) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.*g", digits, x);
  return buf;
}

TrainConfig run_config(const envs::MrpSpec& spec, double lambda, long steps, std::uint64_t seed) {
  TrainConfig c;
  c.gamma = spec.gamma_default;
  c.lambda = lambda;
  c.total_steps = steps;
  c.eval_every = steps;
  c.eval_samples = 10'000;
  c.seed = seed;
  return c;
}

std::vector<envs::Transition> dataset(const envs::MrpSpec& spec, std::uint64_t seed) {
  RngStream rng = RngStream(seed).split(cli::kDataStream);
  return envs::generate_dataset(spec, 100'000, rng);
}

double last_quarter_mean(const std::vector<double>& xs) {
  double s = 0.0;
  int n = 0;
  for (std::size_t i = xs.size() * 3 / 4; i < xs.size(); ++i) {
    if (std::isnan(xs[i])) continue;
    s += xs[i];
    ++n;
  }
  return n ? s / n : std::numeric_limits<double>::quiet_NaN();
}

double batch_loss(const nn::Mlp& p, const nn::Matrix& in, const nn::Vector& y) {
  return (nn::forward_batch(p, in) - y).squaredNorm() / static_cast<double>(y.size());
}

// 1 --------------------------------------------------------------------------
void gradient_check() {
  RngStream rng(1);
  double worst = 0.0;
  for (int c = 0; c < 20; ++c) {
    const int in_dim = 2 + static_cast<int>(rng.index(4));
    auto p = nn::init_params({in_dim, 4 + static_cast<int>(rng.index(8)), 4 + static_cast<int>(rng.index(8)), 1},
                             100 + c);
    for (auto& b : p.biases) {
      for (Eigen::Index i = 0; i < b.size(); ++i) b(i) = 0.3 * rng.normal();
    }
    const int batch = 1 + static_cast<int>(rng.index(16));
    nn::Matrix in(batch, in_dim);
    nn::Vector y(batch);
    for (int i = 0; i < batch; ++i) {
      for (int j = 0; j < in_dim; ++j) in(i, j) = rng.normal();
      y(i) = rng.normal();
    }
    const auto lg = nn::loss_and_grads(p, in, y);
    const double h = 1e-5;
    auto check = [&](double& param, double analytic) {
      const double saved = param;
      param = saved + h;
      const double up = batch_loss(p, in, y);
      param = saved - h;
      const double down = batch_loss(p, in, y);
      param = saved;
      const double fd = (up - down) / (2.0 * h);
      worst = std::max(worst, std::abs(fd - analytic) / std::max({std::abs(fd), std::abs(analytic), 1e-8}));
    };
    for (std::size_t l = 0; l < p.num_layers(); ++l) {
      for (Eigen::Index i = 0; i < p.weights[l].rows(); ++i) {
        for (Eigen::Index j = 0; j < p.weights[l].cols(); ++j) check(p.weights[l](i, j), lg.grads.weights[l](i, j));
      }
      for (Eigen::Index j = 0; j < p.biases[l].size(); ++j) check(p.biases[l](j), lg.grads.biases[l](j));
    }
  }
  report(1, "gradient correctness", worst <= 1e-4, "max relative error " + num(worst) + " over 20 cases (<= 1e-4)");
}

// 2 --------------------------------------------------------------------------
void path_algebra() {
  RngStream rng(2);
  double worst_src = 0.0, worst_end = 0.0, worst_forms = 0.0;
  for (int i = 0; i < 10'000; ++i) {
    const double x0 = 3 * rng.normal(), xp = 5 * rng.normal(), r = rng.normal(), g = rng.uniform(),
                 t = rng.uniform();
    worst_src = std::max(worst_src, std::abs(bellman::current_path(x0, xp, r, g, 0.0) - x0));
    worst_end = std::max(worst_end, std::abs(bellman::current_path(x0, xp, r, g, 1.0) - (r + g * xp)));
    worst_forms = std::max(worst_forms, std::abs(bellman::current_path(x0, xp, r, g, t) -
                                                 bellman::current_path_anchored(x0, xp, r, g, t)));
  }
  const bool ok = worst_src == 0.0 && worst_end <= 1e-12 && worst_forms <= 1e-12;
  report(2, "path algebra", ok,
         "source gap " + num(worst_src) + ", endpoint gap " + num(worst_end) + ", two-form gap " + num(worst_forms) +
             " on 1e4 inputs (<= 1e-12)");
}

// 3 and 6 --------------------------------------------------------------------
void bernoulli_runs() {
  const auto spec = envs::MrpSpec::bernoulli();
  const std::vector<double> lambdas{0.0, 0.3, 0.6, 0.9};
  const std::vector<std::uint64_t> seeds{0, 1, 2};
  const long steps = 20'000;
  const trainer::EvalSpec eval{1, {0}, {envs::bernoulli_return_law()}};
  std::vector<std::vector<double>> w1(lambdas.size()), sd(lambdas.size());
  for (std::size_t li = 0; li < lambdas.size(); ++li) {
    for (auto seed : seeds) {
      const auto data = dataset(spec, seed);
      const auto res = trainer::train(data, 1, eval, run_config(spec, lambdas[li], steps, seed));
      w1[li].push_back(res.log.final_eval().mean_w1());
      sd[li].push_back(last_quarter_mean(res.log.loss_std));
      progress("bernoulli lambda " + num(lambdas[li]) + " seed " + std::to_string(seed) + ": W1 " +
               num(w1[li].back()) + ", late loss std " + num(sd[li].back()));
    }
  }
  bool ok3 = true;
  std::ostringstream d3;
  for (std::size_t li = 0; li < 2; ++li) {
    d3 << "lambda " << lambdas[li] << " W1";
    for (double w : w1[li]) {
      d3 << " " << num(w, 3);
      ok3 = ok3 && w <= 0.10;
    }
    d3 << "; ";
  }
  report(3, "bernoulli fidelity", ok3, d3.str() + "20k steps, threshold 0.10 per seed");

  std::vector<double> avg;
  for (const auto& s : sd) avg.push_back(std::accumulate(s.begin(), s.end(), 0.0) / s.size());
  bool ok6 = true;
  std::ostringstream d6;
  d6 << "seed-averaged late loss std";
  for (std::size_t li = 0; li < avg.size(); ++li) {
    d6 << " " << num(avg[li]) << " (lambda " << lambdas[li] << ")";
    if (li > 0) ok6 = ok6 && avg[li] <= 1.10 * avg[li - 1];
  }
  report(6, "variance reduction", ok6, d6.str() + "; each <= 1.1 x previous");
}

// 4 and 11 -------------------------------------------------------------------
void solitaire_runs() {
  const auto spec = envs::MrpSpec::solitaire();
  const auto data = dataset(spec, 0);
  const auto cfg = run_config(spec, 0.3, 20'000, 0);
  const trainer::EvalSpec eval{1, {0}, {envs::solitaire_return_law(cfg.gamma)}};
  const auto res = trainer::train(data, 1, eval, cfg);
  const double w = res.log.final_eval().mean_w1();
  report(4, "solitaire fidelity", w <= 0.5, "W1 " + num(w) + " vs analytic atoms at gamma 0.9, 20k steps (<= 0.5)");

  const std::vector<double> ts{0.25, 0.5, 0.75};
  const std::vector<int> ns{4, 8, 16, 32};
  const RngStream root = RngStream(0).split(cli::kResidualStream);
  const auto shared = analysis::corrected_residual_sweep(res.state.online, res.state.target, data, 1, cfg.gamma, ts, ns,
                                                         analysis::Coupling::Shared, 10'000, root);
  const auto indep = analysis::corrected_residual_sweep(res.state.online, res.state.target, data, 1, cfg.gamma, ts, ns,
                                                        analysis::Coupling::Independent, 10'000, root);
  int ordered = 0, separated = 0;
  double worst = -1e300;
  for (std::size_t i = 0; i < shared.cells.size(); ++i) {
    const auto& s = shared.cells[i];
    const auto& d = indep.cells[i];
    const bool sep = s.mean + s.ci95 < d.mean - d.ci95;
    const bool ord = s.mean <= d.mean;
    separated += sep;
    ordered += sep || ord;
    worst = std::max(worst, s.mean - d.mean);
  }
  const int cells = static_cast<int>(shared.cells.size());
  report(11, "corrected residual", ordered == cells,
         std::to_string(ordered) + "/" + std::to_string(cells) + " cells shared <= independent (" +
             std::to_string(separated) + " with disjoint 95% CIs), max shared - independent " + num(worst));
}

// 5 --------------------------------------------------------------------------
void discrete_mc_runs() {
  const auto spec = envs::MrpSpec::discrete_mc();
  const auto data = dataset(spec, 0);
  trainer::EvalSpec eval;
  eval.context_dim = spec.context_dim();
  for (int s : spec.start_states()) {
    RngStream rng = RngStream(0).split(cli::kOracleStream).split(static_cast<std::uint64_t>(s));
    eval.states.push_back(s);
    eval.truths.push_back(envs::mc_return_oracle(spec, s, spec.gamma_default, 10'000, 2000, rng));
  }
  const long steps = 50'000;
  bool ok = true;
  std::ostringstream d;
  double pcbf_mean = 0.0;
  const std::vector<double> lambdas{0.0, 0.3, 0.6, 0.9};
  for (double l : lambdas) {
    const auto res = trainer::train(data, eval.context_dim, eval, run_config(spec, l, steps, 0));
    const double w = res.log.final_eval().mean_w1();
    progress("discrete_mc lambda " + num(l) + ": mean W1 " + num(w));
    d << "lambda " << l << " " << num(w, 3) << "; ";
    ok = ok && w <= 1.0;
    pcbf_mean += w / static_cast<double>(lambdas.size());
  }
  const auto vf = baselines::train_baseline(data, eval.context_dim, baselines::VfCombined{1.0}, eval,
                                            run_config(spec, 0.0, steps, 0));
  const double wv = vf.log.final_eval().mean_w1();
  progress("discrete_mc vf dcfm_coef 1: mean W1 " + num(wv));
  const bool degraded = wv >= 2.0 * pcbf_mean;
  report(5, "discrete MC fidelity and robustness", ok && degraded,
         d.str() + "VF(dcfm_coef=1) " + num(wv, 3) + " vs 2 x PCBF average " + num(2 * pcbf_mean, 3) +
             " at 50k steps each");
}

// 7-10 -----------------------------------------------------------------------
void theory_checks() {
  analysis::TheoryConfig tc;
  const auto checks = analysis::run_theory_checks(tc);
  const std::vector<std::pair<int, std::string>> ids{{7, "gaussian_kappa"},
                                                     {8, "lambda_star"},
                                                     {9, "contraction"},
                                                     {10, "euler_sensitivity"}};
  for (const auto& [id, name] : ids) {
    for (const auto& c : checks) {
      if (c.name != name) continue;
      std::string detail = c.detail.dump();
      if (detail.size() > 400) detail = detail.substr(0, 400) + "...";
      report(id, name, c.pass, detail);
    }
  }
  for (const auto& c : checks) {
    if (c.name == "posterior_velocity") progress(std::string("posterior velocity check ") + (c.pass ? "passes" : "fails"));
  }
}

// 12 -------------------------------------------------------------------------
void oracle_sanity() {
  RngStream a(12);
  const auto sol = envs::mc_return_oracle(envs::MrpSpec::solitaire(), 0, 0.9, 1'000'000, 2000, a);
  const double w = analysis::wasserstein1(sol, envs::solitaire_return_law(0.9));
  RngStream b(13);
  const auto bern = envs::mc_return_oracle(envs::MrpSpec::bernoulli(), 0, 0.5, 100'000, 64, b);
  const double ks = analysis::ks_statistic(bern, envs::bernoulli_return_law());
  const double crit = analysis::ks_critical_1pct(bern.samples.size());
  report(12, "oracle sanity", w <= 0.02 && ks < crit,
         "solitaire W1 " + num(w) + " at 1e6 rollouts (<= 0.02); bernoulli KS " + num(ks) + " < " + num(crit));
}

// 13 -------------------------------------------------------------------------
void equivalence() {
  const fs::path root = fs::temp_directory_path() / "pcbf_acceptance_equivalence";
  fs::remove_all(root);
  cli::ExperimentConfig c;
  c.env = envs::MrpSpec::solitaire();
  c.train.gamma = 0.9;
  c.train.total_steps = 2000;
  c.train.eval_every = 500;
  c.train.eval_samples = 2000;
  c.seed = 7;
  c.out = (root / "pcbf").string();
  cli::cmd_gen_data(c);
  cli::cmd_train(c);
  cli::ExperimentConfig v = c;
  v.method = cli::Method::Vf;
  v.dcfm_coef = 0.0;
  v.dataset = (root / "pcbf" / "dataset.csv").string();
  v.out = (root / "vf").string();
  cli::cmd_train(v);
  const std::string a = io::read_file(root / "pcbf" / "metrics.csv");
  const std::string b = io::read_file(root / "vf" / "metrics.csv");
  report(13, "equivalence", a == b,
         std::string("pcbf lambda 0 vs vf dcfm_coef 0 metrics.csv ") + (a == b ? "byte-identical" : "differ") + " (" +
             std::to_string(a.size()) + " bytes, 2000 steps)");
  fs::remove_all(root);
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, void (*)()>> stages{
      {"gradients", gradient_check}, {"path algebra", path_algebra}, {"oracles", oracle_sanity},
      {"equivalence", equivalence},  {"theory", theory_checks},      {"solitaire", solitaire_runs},
      {"bernoulli", bernoulli_runs}, {"discrete MC", discrete_mc_runs}};
  for (const auto& [name, fn] : stages) {
    progress("stage: " + name);
    try {
      fn();
    } catch (const std::exception& e) {
      std::printf("FAIL stage %s threw: %s\n", name.c_str(), e.what());
      ++failures;
    }
  }
  std::printf("%s: %d failing criteria\n", failures ? "ACCEPTANCE FAILED" : "ACCEPTANCE PASSED", failures);
  return failures ? 1 : 0;
}
