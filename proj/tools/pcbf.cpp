// pcbf: command-line driver for path-coupled Bellman flow experiments.

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "pcbf/cli.hpp"

namespace {

struct Common {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
};

pcbf::cli::ExperimentConfig resolve(const Common& c) {
  pcbf::cli::ExperimentConfig cfg =
      c.config.empty() ? pcbf::cli::ExperimentConfig{} : pcbf::cli::load_config(c.config);
  if (!c.out.empty()) cfg.out = c.out;
  if (c.seed) cfg.seed = *c.seed;
  return cfg;
}

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--config", c.config, "JSON experiment config")->check(CLI::ExistingFile);
  sub->add_option("--out", c.out, "output directory");
  sub->add_option("--seed", c.seed, "master seed (overrides the config)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Path-coupled Bellman flows: data generation, training, evaluation and checks"};
  app.require_subcommand(1);
  Common common;

  auto* gen = app.add_subcommand("gen-data", "write the offline dataset and Monte Carlo oracle caches");
  auto* train = app.add_subcommand("train", "train the configured method; writes metrics.csv and checkpoints");
  auto* eval = app.add_subcommand("eval", "per-state W1 and CDF dump for a checkpoint");
  auto* sweep = app.add_subcommand("sweep", "PCBF lambda grid and VF dcfm_coef grid across seeds");
  auto* theory = app.add_subcommand("verify-theory", "run the numerical theory checks");
  auto* resid = app.add_subcommand("residual", "corrected pathwise residual, shared vs independent noise");

  std::string checkpoint;
  eval->add_option("--checkpoint", checkpoint, "checkpoint JSON (default <out>/checkpoint.json)");
  resid->add_option("--checkpoint", checkpoint, "checkpoint JSON (default <out>/checkpoint.json)");
  for (auto* sub : {gen, train, eval, sweep, theory, resid}) add_common(sub, common);

  CLI11_PARSE(app, argc, argv);

  try {
    auto cfg = resolve(common);
    if (gen->parsed()) {
      const auto r = pcbf::cli::cmd_gen_data(cfg);
      std::cout << "wrote " << r.dataset.size() << " transitions to " << cfg.dataset_path().string() << " and "
                << r.oracle_files.size() << " oracle cache file(s) under " << cfg.cache_dir().string() << "\n";
    } else if (train->parsed()) {
      const auto r = pcbf::cli::cmd_train(cfg);
      if (!r.log.evals.empty()) std::cout << "final mean W1 " << r.log.final_eval().mean_w1() << "\n";
    } else if (eval->parsed()) {
      if (!checkpoint.empty()) cfg.eval.checkpoint = checkpoint;
      const auto r = pcbf::cli::cmd_eval(cfg);
      for (std::size_t k = 0; k < r.states.size(); ++k) std::cout << "state " << r.states[k] << " W1 " << r.w1[k] << "\n";
      std::cout << "mean W1 " << r.mean_w1() << "\n";
    } else if (sweep->parsed()) {
      const auto r = pcbf::cli::cmd_sweep(cfg);
      std::cout << r.rows.size() << " rows, " << r.failures.size() << " failed cell(s)\n";
      for (const auto& f : r.failures) std::cerr << "failed: " << f << "\n";
    } else if (theory->parsed()) {
      const auto r = pcbf::cli::cmd_verify_theory(cfg);
      for (const auto& k : r.checks) std::cout << (k.pass ? "PASS " : "FAIL ") << k.name << "\n";
      return r.pass ? 0 : 1;
    } else if (resid->parsed()) {
      if (!checkpoint.empty()) cfg.residual.checkpoint = checkpoint;
      const auto r = pcbf::cli::cmd_residual(cfg);
      std::cout << "t nfe shared independent\n";
      for (std::size_t i = 0; i < r.shared.cells.size(); ++i) {
        std::cout << r.shared.cells[i].t << " " << r.shared.cells[i].nfe << " " << r.shared.cells[i].mean << " "
                  << r.independent.cells[i].mean << "\n";
      }
    }
  } catch (const pcbf::NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 3;
  } catch (const pcbf::IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return 4;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
