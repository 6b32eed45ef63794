#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <map>
#include <mutex>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "pcbf/analysis.hpp"
#include "pcbf/baselines.hpp"
#include "pcbf/config.hpp"
#include "pcbf/envs.hpp"
#include "pcbf/io.hpp"
#include "pcbf/theory.hpp"
#include "pcbf/trainer.hpp"
#include "pcbf/wasserstein.hpp"

namespace pcbf::cli {

namespace fs = std::filesystem;
using json = nlohmann::json;

// Sub-streams of the master seed. Training uses the master seed directly
// (the trainer splits it further into init/train/eval streams).
inline constexpr std::uint64_t kDataStream = 0x10;
inline constexpr std::uint64_t kOracleStream = 0x11;
inline constexpr std::uint64_t kEvalCmdStream = 0x12;
inline constexpr std::uint64_t kResidualStream = 0x13;

enum class Method { Pcbf, Bcfm, DcfmUnscaled, DcfmScaled, Vf, OracleCfm };

inline std::string method_name(Method m) {
  switch (m) {
    case Method::Pcbf: return "pcbf";
    case Method::Bcfm: return "bcfm";
    case Method::DcfmUnscaled: return "dcfm_unscaled";
    case Method::DcfmScaled: return "dcfm_scaled";
    case Method::Vf: return "vf";
    case Method::OracleCfm: return "oracle_cfm";
  }
  return "unknown";
}

inline Method parse_method(const std::string& s) {
  for (Method m : {Method::Pcbf, Method::Bcfm, Method::DcfmUnscaled, Method::DcfmScaled, Method::Vf,
                   Method::OracleCfm}) {
    if (method_name(m) == s) return m;
  }
  throw ConfigError("unknown method '" + s + "'");
}

struct OracleConfig {
  int n_rollouts = 10'000;
  int horizon_cap = 0;  // 0: 64 for Bernoulli, 2000 otherwise
};

struct EvalConfig {
  std::string checkpoint;  // default <out>/checkpoint.json
  int n_samples = 10'000;
  int cdf_points = 512;
};

struct SweepConfig {
  std::vector<double> lambdas;
  std::vector<double> dcfm_coefs;
  int jobs = 1;
};

struct ResidualConfig {
  std::string checkpoint;  // default <out>/checkpoint.json
  std::vector<double> t_grid = {0.25, 0.5, 0.75};
  std::vector<int> nfe_grid = {4, 8, 16, 32};
  int n_samples = 10'000;
};

struct ExperimentConfig {
  envs::MrpSpec env = envs::MrpSpec::bernoulli();
  TrainConfig train;
  Method method = Method::Pcbf;
  double dcfm_coef = 0.0;
  int dataset_size = 100'000;
  std::string dataset;  // default <out>/dataset.csv
  OracleConfig oracle;
  std::vector<int> eval_states;  // empty: the env's start states
  SweepConfig sweep;
  std::vector<std::uint64_t> seeds = {0, 1, 2};
  std::uint64_t seed = 0;
  std::string out = "out";
  EvalConfig eval;
  ResidualConfig residual;
  analysis::TheoryConfig theory;

  int horizon_cap() const {
    if (oracle.horizon_cap > 0) return oracle.horizon_cap;
    return env.kind == envs::EnvKind::Bernoulli ? 64 : 2000;
  }

  std::vector<int> states() const { return eval_states.empty() ? env.start_states() : eval_states; }

  fs::path out_dir() const { return fs::path(out); }
  fs::path dataset_path() const { return dataset.empty() ? out_dir() / "dataset.csv" : fs::path(dataset); }
  fs::path cache_dir() const { return io::cache_dir(out_dir() / "cache"); }

  void validate() const {
    env.validate();
    train.validate();
    if (dataset_size < 1) throw ConfigError("dataset_size must be >= 1");
    if (oracle.n_rollouts < 1) throw ConfigError("oracle.n_rollouts must be >= 1");
    if (!(dcfm_coef >= 0.0)) throw ConfigError("dcfm_coef must be >= 0");
    for (int s : states()) {
      if (s < 0 || s >= env.context_dim()) throw ConfigError("eval state " + std::to_string(s) + " out of range");
    }
    if (std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size()) {
      throw ConfigError("seeds must be distinct");
    }
    for (double l : sweep.lambdas) {
      if (!(l >= 0.0 && l <= 1.0)) throw ConfigError("sweep lambdas must lie in [0, 1]");
    }
    for (double c : sweep.dcfm_coefs) {
      if (!(c >= 0.0)) throw ConfigError("sweep dcfm_coefs must be >= 0");
    }
    if (sweep.jobs < 1) throw ConfigError("sweep.jobs must be >= 1");
    if (eval.n_samples < 1 || eval.cdf_points < 2) throw ConfigError("eval.n_samples >= 1 and eval.cdf_points >= 2");
    if (residual.n_samples < 2) throw ConfigError("residual.n_samples must be >= 2");
    for (int n : residual.nfe_grid) {
      if (n < 1) throw ConfigError("residual.nfe_grid entries must be >= 1");
    }
  }
};

namespace detail {
inline void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
  for (const auto& [k, v] : j.items()) {
    if (!allowed.count(k)) throw ConfigError("unknown key '" + k + "' in " + where);
  }
}

template <class T>
void read(const json& j, const char* key, T& dst) {
  if (!j.contains(key)) return;
  try {
    dst = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad value for '") + key + "': " + e.what());
  }
}
}  // namespace detail

inline ExperimentConfig parse_config(const json& j) {
  using detail::read;
  detail::check_keys(j,
                     {"env", "train", "method", "dcfm_coef", "dataset_size", "dataset", "oracle", "eval_states",
                      "sweep", "seeds", "seed", "out", "eval", "residual", "theory"},
                     "config");
  ExperimentConfig c;
  if (j.contains("env")) {
    const json& e = j.at("env");
    detail::check_keys(e, {"kind", "n_states"}, "env");
    const auto kind = envs::parse_kind(e.value("kind", std::string("bernoulli")));
    if (kind == envs::EnvKind::SolitaireDice) c.env = envs::MrpSpec::solitaire();
    if (kind == envs::EnvKind::Bernoulli) c.env = envs::MrpSpec::bernoulli();
    if (kind == envs::EnvKind::DiscreteMC) c.env = envs::MrpSpec::discrete_mc(e.value("n_states", 21));
  }
  c.train.gamma = c.env.gamma_default;
  if (j.contains("train")) {
    const json& t = j.at("train");
    detail::check_keys(t,
                       {"gamma", "lambda", "tau", "lr", "batch_size", "total_steps", "nfe", "eval_every",
                        "loss_window", "hidden", "eval_samples"},
                       "train");
    read(t, "gamma", c.train.gamma);
    read(t, "lambda", c.train.lambda);
    read(t, "tau", c.train.tau);
    read(t, "lr", c.train.lr);
    read(t, "batch_size", c.train.batch_size);
    read(t, "total_steps", c.train.total_steps);
    read(t, "nfe", c.train.nfe);
    read(t, "eval_every", c.train.eval_every);
    read(t, "loss_window", c.train.loss_window);
    read(t, "hidden", c.train.hidden);
    read(t, "eval_samples", c.train.eval_samples);
  }
  if (j.contains("method")) c.method = parse_method(j.at("method").get<std::string>());
  read(j, "dcfm_coef", c.dcfm_coef);
  read(j, "dataset_size", c.dataset_size);
  read(j, "dataset", c.dataset);
  if (j.contains("oracle")) {
    detail::check_keys(j.at("oracle"), {"n_rollouts", "horizon_cap"}, "oracle");
    read(j.at("oracle"), "n_rollouts", c.oracle.n_rollouts);
    read(j.at("oracle"), "horizon_cap", c.oracle.horizon_cap);
  }
  read(j, "eval_states", c.eval_states);
  if (j.contains("sweep")) {
    detail::check_keys(j.at("sweep"), {"lambdas", "dcfm_coefs", "jobs"}, "sweep");
    read(j.at("sweep"), "lambdas", c.sweep.lambdas);
    read(j.at("sweep"), "dcfm_coefs", c.sweep.dcfm_coefs);
    read(j.at("sweep"), "jobs", c.sweep.jobs);
  }
  read(j, "seeds", c.seeds);
  read(j, "seed", c.seed);
  read(j, "out", c.out);
  if (j.contains("eval")) {
    detail::check_keys(j.at("eval"), {"checkpoint", "n_samples", "cdf_points"}, "eval");
    read(j.at("eval"), "checkpoint", c.eval.checkpoint);
    read(j.at("eval"), "n_samples", c.eval.n_samples);
    read(j.at("eval"), "cdf_points", c.eval.cdf_points);
  }
  if (j.contains("residual")) {
    detail::check_keys(j.at("residual"), {"checkpoint", "t_grid", "nfe_grid", "n_samples"}, "residual");
    read(j.at("residual"), "checkpoint", c.residual.checkpoint);
    read(j.at("residual"), "t_grid", c.residual.t_grid);
    read(j.at("residual"), "nfe_grid", c.residual.nfe_grid);
    read(j.at("residual"), "n_samples", c.residual.n_samples);
  }
  if (j.contains("theory")) {
    const json& t = j.at("theory");
    detail::check_keys(t,
                       {"kappa_samples", "variance_samples", "curve_samples", "contraction_seeds",
                        "contraction_pairs", "euler_cases", "fault"},
                       "theory");
    read(t, "kappa_samples", c.theory.kappa_samples);
    read(t, "variance_samples", c.theory.variance_samples);
    read(t, "curve_samples", c.theory.curve_samples);
    read(t, "contraction_seeds", c.theory.contraction_seeds);
    read(t, "contraction_pairs", c.theory.contraction_pairs);
    read(t, "euler_cases", c.theory.euler_cases);
    const std::string fault = t.value("fault", std::string("none"));
    if (fault != "none" && fault != "negate_kappa") throw ConfigError("unknown theory fault '" + fault + "'");
    c.theory.negate_kappa = fault == "negate_kappa";
  }
  return c;
}

inline ExperimentConfig load_config(const fs::path& path) {
  json j;
  try {
    j = json::parse(io::read_file(path));
  } catch (const json::parse_error& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return parse_config(j);
}

/// Fully resolved config, with every default spelled out.
inline json to_json(const ExperimentConfig& c) {
  json j;
  j["env"] = {{"kind", envs::kind_name(c.env.kind)}, {"n_states", c.env.n_states}};
  j["train"] = {{"gamma", c.train.gamma},
                {"lambda", c.train.lambda},
                {"tau", c.train.tau},
                {"lr", c.train.lr},
                {"batch_size", c.train.batch_size},
                {"total_steps", c.train.total_steps},
                {"nfe", c.train.nfe},
                {"eval_every", c.train.eval_every},
                {"loss_window", c.train.loss_window},
                {"hidden", c.train.hidden},
                {"eval_samples", c.train.eval_samples}};
  j["method"] = method_name(c.method);
  j["dcfm_coef"] = c.dcfm_coef;
  j["dataset_size"] = c.dataset_size;
  j["dataset"] = c.dataset_path().string();
  j["oracle"] = {{"n_rollouts", c.oracle.n_rollouts}, {"horizon_cap", c.horizon_cap()}};
  j["eval_states"] = c.states();
  j["sweep"] = {{"lambdas", c.sweep.lambdas}, {"dcfm_coefs", c.sweep.dcfm_coefs}, {"jobs", c.sweep.jobs}};
  j["seeds"] = c.seeds;
  j["seed"] = c.seed;
  j["out"] = c.out;
  j["eval"] = {{"checkpoint", c.eval.checkpoint}, {"n_samples", c.eval.n_samples}, {"cdf_points", c.eval.cdf_points}};
  j["residual"] = {{"checkpoint", c.residual.checkpoint},
                   {"t_grid", c.residual.t_grid},
                   {"nfe_grid", c.residual.nfe_grid},
                   {"n_samples", c.residual.n_samples}};
  j["theory"] = {{"kappa_samples", c.theory.kappa_samples},
                 {"variance_samples", c.theory.variance_samples},
                 {"curve_samples", c.theory.curve_samples},
                 {"contraction_seeds", c.theory.contraction_seeds},
                 {"contraction_pairs", c.theory.contraction_pairs},
                 {"euler_cases", c.theory.euler_cases},
                 {"fault", c.theory.negate_kappa ? "negate_kappa" : "none"}};
  return j;
}

inline void echo_config(const ExperimentConfig& c, const std::string& command) {
  json j = to_json(c);
  j["command"] = command;
  if (c.method != Method::Pcbf || command == "sweep") {
    j["notes"] = {"baselines sample t uniformly on [0, 1); the Value Flows time weighting is not reproduced"};
  }
  io::write_atomic(c.out_dir() / ("config." + command + ".json"), j.dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// Shared plumbing

inline io::OracleKey oracle_key(const ExperimentConfig& c, int state) {
  return {c.env.id(), state, c.train.gamma, c.oracle.n_rollouts, RngStream(c.seed).split(kOracleStream).seed(),
          c.horizon_cap()};
}

inline bool has_analytic_law(const ExperimentConfig& c) {
  return c.env.kind == envs::EnvKind::SolitaireDice || (c.env.kind == envs::EnvKind::Bernoulli && c.train.gamma == 0.5);
}

/// Ground truth for one state: analytic where available, else the cached MC oracle
/// (which must already exist; gen-data creates it).
inline ReturnLaw truth_law(const ExperimentConfig& c, int state) {
  if (c.env.kind == envs::EnvKind::SolitaireDice) return envs::solitaire_return_law(c.train.gamma);
  if (has_analytic_law(c)) return envs::bernoulli_return_law();
  return io::read_oracle_cache(c.cache_dir(), oracle_key(c, state));
}

inline trainer::EvalSpec eval_spec(const ExperimentConfig& c) {
  trainer::EvalSpec e;
  e.context_dim = c.env.context_dim();
  e.states = c.states();
  for (int s : e.states) e.truths.push_back(truth_law(c, s));
  return e;
}

inline std::vector<envs::Transition> load_dataset(const ExperimentConfig& c) {
  const fs::path p = c.dataset_path();
  if (!fs::exists(p)) throw IoError("dataset not found: " + p.string() + " (run gen-data first)");
  return io::read_dataset(p);
}

inline baselines::BaselineKind baseline_kind(Method m, double dcfm_coef) {
  switch (m) {
    case Method::Bcfm: return baselines::BcfmOnly{};
    case Method::DcfmUnscaled: return baselines::DcfmUnscaled{};
    case Method::DcfmScaled: return baselines::DcfmScaled{};
    case Method::Vf: return baselines::VfCombined{dcfm_coef};
    case Method::OracleCfm: return baselines::OracleCfm{};
    case Method::Pcbf: break;
  }
  throw UsageError("pcbf is not a baseline");
}

/// Train one configured method on `data`, checkpointing through `on_eval`.
inline trainer::TrainResult run_method(const ExperimentConfig& c, std::span<const envs::Transition> data,
                                       const trainer::EvalSpec& eval, const trainer::EvalHook& on_eval = {}) {
  TrainConfig tc = c.train;
  tc.seed = c.seed;
  const int ctx = c.env.context_dim();
  if (c.method == Method::Pcbf) return trainer::train(data, ctx, eval, tc, on_eval);
  if (c.method == Method::OracleCfm) {
    std::map<int, Empirical> mc;
    for (int s : c.env.start_states()) mc[s] = io::read_oracle_cache(c.cache_dir(), oracle_key(c, s));
    return baselines::oracle_cfm_train(mc, ctx, eval, tc, on_eval);
  }
  return baselines::train_baseline(data, ctx, baseline_kind(c.method, c.dcfm_coef), eval, tc, on_eval);
}

inline io::Checkpoint make_checkpoint(const ExperimentConfig& c, const trainer::TrainState& s, long step) {
  return {s.online, s.target, c.env.id(), c.env.context_dim(), c.train.gamma, c.train.nfe, step};
}

// ---------------------------------------------------------------------------
// Commands

struct GenDataResult {
  std::vector<envs::Transition> dataset;
  std::vector<fs::path> oracle_files;
};

inline GenDataResult cmd_gen_data(const ExperimentConfig& c) {
  c.validate();
  echo_config(c, "gen-data");
  GenDataResult r;
  RngStream rng = RngStream(c.seed).split(kDataStream);
  r.dataset = envs::generate_dataset(c.env, c.dataset_size, rng);
  io::write_dataset(c.dataset_path(), r.dataset);
  for (int s : c.env.start_states()) {
    const auto key = oracle_key(c, s);
    io::cached_mc_oracle(c.env, key, c.cache_dir());
    r.oracle_files.push_back(c.cache_dir() / key.filename());
  }
  return r;
}

/// Train and write metrics.csv, checkpoint.json and checkpoints/step_<k>.json.
/// A non-finite loss leaves diagnostic.json behind and rethrows.
inline trainer::TrainResult cmd_train(const ExperimentConfig& c) {
  c.validate();
  echo_config(c, "train");
  const auto data = c.method == Method::OracleCfm ? std::vector<envs::Transition>{} : load_dataset(c);
  const auto eval = eval_spec(c);
  auto hook = [&](long step, const trainer::TrainState& s) {
    io::save_checkpoint(c.out_dir() / "checkpoints" / ("step_" + std::to_string(step) + ".json"),
                        make_checkpoint(c, s, step));
  };
  try {
    auto result = run_method(c, data, eval, hook);
    io::write_metrics(c.out_dir() / "metrics.csv", result.log);
    io::save_checkpoint(c.out_dir() / "checkpoint.json", make_checkpoint(c, result.state, c.train.total_steps));
    return result;
  } catch (const NumericError& e) {
    json d = {{"error", e.what()}, {"index", e.index()}, {"method", method_name(c.method)}, {"seed", c.seed}};
    io::write_atomic(c.out_dir() / "diagnostic.json", d.dump(2) + "\n");
    throw;
  }
}

struct EvalReport {
  std::vector<int> states;
  std::vector<double> w1;
  double mean_w1() const {
    double s = 0.0;
    for (double w : w1) s += w;
    return w1.empty() ? 0.0 : s / static_cast<double>(w1.size());
  }
};

/// Per-state W1 of the checkpoint's online network plus a CDF dump on a grid
/// covering both supports (eval_w1.json, eval_cdf.csv).
inline EvalReport cmd_eval(const ExperimentConfig& c) {
  c.validate();
  echo_config(c, "eval");
  const fs::path ckpt_path = c.eval.checkpoint.empty() ? c.out_dir() / "checkpoint.json" : fs::path(c.eval.checkpoint);
  const io::Checkpoint ck = io::load_checkpoint(ckpt_path);
  if (ck.env != c.env.id()) throw ConfigError("checkpoint env '" + ck.env + "' does not match config env '" + c.env.id() + "'");
  const RngStream root = RngStream(c.seed).split(kEvalCmdStream);
  EvalReport rep;
  std::string cdf = "state,x,F_learned,F_truth\n";
  json per_state = json::array();
  for (int s : c.states()) {
    const ReturnLaw truth = truth_law(c, s);
    RngStream rng = root.split(static_cast<std::uint64_t>(s));
    const Empirical learned =
        make_empirical(flow::sample_returns(ck.online, envs::one_hot(c.env, s), c.eval.n_samples, rng, ck.nfe));
    const double w = analysis::wasserstein1(learned, truth);
    rep.states.push_back(s);
    rep.w1.push_back(w);
    per_state.push_back({{"state", s}, {"w1", w}});

    const auto tb = breakpoints(truth);
    const double lo = std::min(learned.samples.front(), tb.front());
    const double hi = std::max(learned.samples.back(), tb.back());
    std::vector<double> xs;
    for (int i = 0; i < c.eval.cdf_points; ++i) xs.push_back(lo + (hi - lo) * i / (c.eval.cdf_points - 1));
    xs.push_back(tb.back());
    std::sort(xs.begin(), xs.end());
    xs.erase(std::unique(xs.begin(), xs.end()), xs.end());
    for (double x : xs) {
      cdf += std::to_string(s) + "," + io::fmt(x) + "," + io::fmt(pcbf::cdf(learned, x)) + "," +
             io::fmt(pcbf::cdf(truth, x)) + "\n";
    }
  }
  json out = {{"env", c.env.id()},
              {"checkpoint", ckpt_path.string()},
              {"n_samples", c.eval.n_samples},
              {"states", per_state},
              {"mean_w1", rep.mean_w1()}};
  io::write_atomic(c.out_dir() / "eval_w1.json", out.dump(2) + "\n");
  io::write_atomic(c.out_dir() / "eval_cdf.csv", cdf);
  return rep;
}

struct SweepRow {
  std::string method;
  double coef = 0.0;
  std::string env;
  int state = 0;
  double w1 = 0.0;
  std::uint64_t seed = 0;
};

struct SweepResult {
  std::vector<SweepRow> rows;
  std::vector<std::string> failures;
};

inline std::string sweep_csv(std::span<const SweepRow> rows) {
  std::string out = "method,coefficient,env,state,W1,seed\n";
  for (const auto& r : rows) {
    out += r.method + "," + io::fmt(r.coef) + "," + r.env + "," + std::to_string(r.state) + "," + io::fmt(r.w1) + "," +
           std::to_string(r.seed) + "\n";
  }
  return out;
}

/// PCBF over sweep.lambdas and VF over sweep.dcfm_coefs, crossed with seeds.
/// Cells run on sweep.jobs threads with isolated output directories; a failed
/// cell yields NaN rows and an entry in sweep_failures.json.
inline SweepResult cmd_sweep(const ExperimentConfig& c) {
  c.validate();
  if (c.sweep.lambdas.empty() && c.sweep.dcfm_coefs.empty()) throw UsageError("sweep: both grids are empty");
  if (c.seeds.empty()) throw UsageError("sweep: no seeds");
  echo_config(c, "sweep");
  const auto data = load_dataset(c);
  const auto eval = eval_spec(c);

  struct Cell {
    Method method;
    double coef;
    std::uint64_t seed;
  };
  std::vector<Cell> cells;
  for (std::uint64_t seed : c.seeds) {
    for (double l : c.sweep.lambdas) cells.push_back({Method::Pcbf, l, seed});
    for (double k : c.sweep.dcfm_coefs) cells.push_back({Method::Vf, k, seed});
  }
  std::vector<std::vector<SweepRow>> cell_rows(cells.size());
  std::vector<std::string> cell_error(cells.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < cells.size(); i = next++) {
      const Cell& cell = cells[i];
      ExperimentConfig cc = c;
      cc.method = cell.method;
      cc.seed = cell.seed;
      if (cell.method == Method::Pcbf) cc.train.lambda = cell.coef;
      else cc.dcfm_coef = cell.coef;
      const std::string name = method_name(cell.method) + "_" + io::fmt(cell.coef) + "_seed" + std::to_string(cell.seed);
      std::vector<double> w1(eval.states.size(), std::numeric_limits<double>::quiet_NaN());
      try {
        const auto res = run_method(cc, data, eval);
        io::write_metrics(c.out_dir() / "cells" / name / "metrics.csv", res.log);
        w1 = res.log.final_eval().w1;
      } catch (const std::exception& e) {
        cell_error[i] = name + ": " + e.what();
      }
      for (std::size_t k = 0; k < eval.states.size(); ++k) {
        cell_rows[i].push_back({method_name(cell.method), cell.coef, c.env.id(), eval.states[k], w1[k], cell.seed});
      }
    }
  };
  const int jobs = std::min<int>(c.sweep.jobs, static_cast<int>(cells.size()));
  std::vector<std::thread> pool;
  for (int j = 1; j < jobs; ++j) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();

  SweepResult r;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    r.rows.insert(r.rows.end(), cell_rows[i].begin(), cell_rows[i].end());
    if (!cell_error[i].empty()) r.failures.push_back(cell_error[i]);
  }
  io::write_atomic(c.out_dir() / "sweep.csv", sweep_csv(r.rows));
  if (!r.failures.empty()) io::write_atomic(c.out_dir() / "sweep_failures.json", json(r.failures).dump(2) + "\n");
  return r;
}

struct TheoryReport {
  bool pass = false;
  std::vector<analysis::CheckOutcome> checks;
};

/// Runs every theory check and writes theory_report.json.
inline TheoryReport cmd_verify_theory(const ExperimentConfig& c) {
  c.validate();
  echo_config(c, "verify-theory");
  analysis::TheoryConfig tc = c.theory;
  tc.seed = c.seed;
  TheoryReport rep;
  rep.checks = analysis::run_theory_checks(tc);
  rep.pass = std::all_of(rep.checks.begin(), rep.checks.end(), [](const auto& k) { return k.pass; });
  json j = {{"pass", rep.pass}, {"seed", c.seed}, {"checks", json::array()}};
  for (const auto& k : rep.checks) j["checks"].push_back(analysis::to_json(k));
  io::write_atomic(c.out_dir() / "theory_report.json", j.dump(2) + "\n");
  return rep;
}

inline std::string residual_csv(const analysis::ResidualGrid& g) {
  std::string out = "t,nfe,stop_time,mean,ci95\n";
  for (const auto& cell : g.cells) {
    out += io::fmt(cell.t) + "," + std::to_string(cell.nfe) + "," + io::fmt(cell.stop_time) + "," + io::fmt(cell.mean) +
           "," + io::fmt(cell.ci95) + "\n";
  }
  return out;
}

struct ResidualResult {
  analysis::ResidualGrid shared;
  analysis::ResidualGrid independent;
};

/// Corrected residual for both couplings on a checkpoint; the two sweeps share
/// one RNG root so they see the same X0 and transitions.
inline ResidualResult cmd_residual(const ExperimentConfig& c) {
  c.validate();
  echo_config(c, "residual");
  const fs::path ckpt_path =
      c.residual.checkpoint.empty() ? c.out_dir() / "checkpoint.json" : fs::path(c.residual.checkpoint);
  const io::Checkpoint ck = io::load_checkpoint(ckpt_path);
  if (ck.env != c.env.id()) throw ConfigError("checkpoint env '" + ck.env + "' does not match config env '" + c.env.id() + "'");
  const auto data = load_dataset(c);
  const RngStream root = RngStream(c.seed).split(kResidualStream);
  ResidualResult r;
  r.shared = analysis::corrected_residual_sweep(ck.online, ck.target, data, ck.context_dim, ck.gamma, c.residual.t_grid,
                                                c.residual.nfe_grid, analysis::Coupling::Shared, c.residual.n_samples,
                                                root);
  r.independent = analysis::corrected_residual_sweep(ck.online, ck.target, data, ck.context_dim, ck.gamma,
                                                     c.residual.t_grid, c.residual.nfe_grid,
                                                     analysis::Coupling::Independent, c.residual.n_samples, root);
  io::write_atomic(c.out_dir() / "residual_shared.csv", residual_csv(r.shared));
  io::write_atomic(c.out_dir() / "residual_independent.csv", residual_csv(r.independent));
  return r;
}

}  // namespace pcbf::cli
