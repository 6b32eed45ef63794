#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "pcbf/trainer.hpp"

using namespace pcbf;
using nn::Matrix;
using nn::Vector;

namespace {
TrainConfig small_config() {
  TrainConfig c;
  c.gamma = 0.5;
  c.batch_size = 16;
  c.total_steps = 30;
  c.eval_every = 10;
  c.eval_samples = 200;
  c.loss_window = 5;
  c.hidden = {8};
  c.seed = 3;
  return c;
}

std::vector<envs::Transition> bernoulli_data(int n) {
  RngStream rng(1);
  return envs::generate_dataset(envs::MrpSpec::bernoulli(), n, rng);
}

trainer::EvalSpec bernoulli_eval() { return {1, {0}, {envs::bernoulli_return_law()}}; }
}  // namespace

TEST(TrainStep, TerminalZeroRewardBatch) {
  auto cfg = small_config();
  auto state = trainer::init_train_state(1, cfg);
  const auto before = state.online;
  const std::vector<envs::Transition> batch(8, envs::Transition{0, 0.0, envs::kTerminal, true});
  RngStream rng(4), replay(4);
  const double loss = trainer::train_step(state, batch, 1, cfg, rng);
  double expect = 0.0;
  for (int i = 0; i < 8; ++i) {
    const double x0 = replay.normal(), t = replay.uniform();
    const std::vector<double> in{(1 - t) * x0, t, 1.0};
    const double v = nn::forward(before, in);
    expect += (v + x0) * (v + x0) / 8;
  }
  EXPECT_NEAR(loss, expect, 1e-12);
}

TEST(TrainStep, ZeroLearningRateKeepsParams) {
  auto cfg = small_config();
  cfg.lr = 0.0;
  auto state = trainer::init_train_state(1, cfg);
  const auto online = state.online;
  const auto data = bernoulli_data(64);
  RngStream rng(2);
  trainer::train_step(state, data, 1, cfg, rng);
  EXPECT_EQ(state.online, online);
  EXPECT_EQ(state.target, online);
}

TEST(TrainStep, Deterministic) {
  const auto cfg = small_config();
  const auto data = bernoulli_data(64);
  auto a = trainer::init_train_state(1, cfg), b = trainer::init_train_state(1, cfg);
  RngStream ra(9), rb(9);
  EXPECT_EQ(trainer::train_step(a, data, 1, cfg, ra), trainer::train_step(b, data, 1, cfg, rb));
  EXPECT_EQ(a.online, b.online);
  EXPECT_EQ(a.target, b.target);
}

TEST(TrainStep, TargetIsPolyakOfNewOnline) {
  auto cfg = small_config();
  cfg.tau = 0.1;
  auto state = trainer::init_train_state(1, cfg);
  const auto data = bernoulli_data(64);
  RngStream rng(1);
  trainer::train_step(state, data, 1, cfg, rng);  // make online and target differ
  const auto old_target = state.target;
  trainer::train_step(state, data, 1, cfg, rng);
  for (std::size_t l = 0; l < state.online.num_layers(); ++l) {
    const Matrix expect = cfg.tau * state.online.weights[l] + (1 - cfg.tau) * old_target.weights[l];
    EXPECT_LE((state.target.weights[l] - expect).cwiseAbs().maxCoeff(), 1e-15);
  }
}

TEST(TrainStep, GradientTreatsTargetsAsData) {
  const auto cfg = small_config();
  const auto data = bernoulli_data(64);
  auto state = trainer::init_train_state(1, cfg);
  RngStream warm(5);
  for (int i = 0; i < 3; ++i) trainer::train_step(state, data, 1, cfg, warm);

  // oracle: build u with a replayed stream, freeze as plain numbers, regress
  auto oracle = state;
  RngStream rng(6), replay(6);
  const std::vector<envs::Transition> batch(data.begin(), data.begin() + 16);
  const auto items = bellman::build_coupled_batch(batch, oracle.target, 1, cfg, replay);
  Matrix in(16, 3);
  Vector u(16);
  for (int i = 0; i < 16; ++i) {
    in.row(i) << items[static_cast<std::size_t>(i)].z_curr, items[static_cast<std::size_t>(i)].t, 1.0;
    u(i) = items[static_cast<std::size_t>(i)].u;
  }
  const auto lg = nn::loss_and_grads(oracle.online, in, u);
  nn::adam_step(oracle.online, lg.grads, oracle.adam, cfg.lr);
  nn::polyak_update(oracle.target, oracle.online, cfg.tau);

  const double loss = trainer::train_step(state, batch, 1, cfg, rng);
  EXPECT_EQ(loss, lg.loss);
  EXPECT_EQ(state.online, oracle.online);
  EXPECT_EQ(state.target, oracle.target);

  // perturbing u as data changes the loss
  Vector u2 = u;
  u2(0) += 1.0;
  EXPECT_NE(nn::loss_and_grads(oracle.online, in, u2).loss, nn::loss_and_grads(oracle.online, in, u).loss);
}

TEST(TrainStep, NonFiniteLossCarriesDiagnostic) {
  auto cfg = small_config();
  auto state = trainer::init_train_state(1, cfg);
  state.online.biases.back()(0) = std::numeric_limits<double>::infinity();
  const auto data = bernoulli_data(16);
  RngStream rng(0);
  try {
    trainer::train_step(state, data, 1, cfg, rng);
    FAIL();
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("x0="), std::string::npos);
    EXPECT_GE(e.index(), 0);
  }
}

TEST(TrainConfigValidate, RejectsBadValues) {
  auto c = small_config();
  c.total_steps = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = small_config();
  c.gamma = 1.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = small_config();
  c.lambda = 1.5;
  EXPECT_THROW(c.validate(), ConfigError);
  c = small_config();
  c.tau = 0.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = small_config();
  c.loss_window = 1;
  EXPECT_THROW(c.validate(), ConfigError);
  c = small_config();
  c.batch_size = 0;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Train, DeterministicLog) {
  const auto cfg = small_config();
  const auto data = bernoulli_data(500);
  const auto a = trainer::train(data, 1, bernoulli_eval(), cfg);
  const auto b = trainer::train(data, 1, bernoulli_eval(), cfg);
  EXPECT_EQ(a.log.losses, b.log.losses);
  ASSERT_EQ(a.log.evals.size(), b.log.evals.size());
  for (std::size_t i = 0; i < a.log.evals.size(); ++i) EXPECT_EQ(a.log.evals[i].w1, b.log.evals[i].w1);
  EXPECT_EQ(a.state.online, b.state.online);
}

TEST(Train, EvaluatesOnScheduleAndCallsHook) {
  auto cfg = small_config();
  cfg.total_steps = 25;
  std::vector<long> hooked;
  const auto res = trainer::train(bernoulli_data(200), 1, bernoulli_eval(), cfg,
                                  [&](long step, const trainer::TrainState&) { hooked.push_back(step); });
  ASSERT_EQ(res.log.evals.size(), 3u);
  EXPECT_EQ(res.log.evals[0].step, 10);
  EXPECT_EQ(res.log.evals[1].step, 20);
  EXPECT_EQ(res.log.evals[2].step, 25);
  EXPECT_EQ(hooked, (std::vector<long>{10, 20, 25}));
  EXPECT_EQ(res.log.losses.size(), 25u);
  for (double l : res.log.losses) EXPECT_TRUE(std::isfinite(l));
  for (std::size_t k = 0; k < 4; ++k) EXPECT_TRUE(std::isnan(res.log.loss_std[k]));
  for (std::size_t k = 4; k < 25; ++k) EXPECT_TRUE(std::isfinite(res.log.loss_std[k]));
}

TEST(Train, EmptyDatasetRejected) {
  EXPECT_THROW(trainer::train({}, 1, bernoulli_eval(), small_config()), UsageError);
}

TEST(LossStd, Examples) {
  const std::vector<double> flat(10, 3.0);
  for (double s : trainer::loss_std(flat, 4)) EXPECT_EQ(s, 0.0);
  const std::vector<double> two{0.0, 2.0};
  EXPECT_DOUBLE_EQ(trainer::loss_std(two, 2)[0], std::sqrt(2.0));
  const std::vector<double> alt{1, -1, 1, -1, 1, -1};
  for (double s : trainer::loss_std(alt, 4)) EXPECT_NEAR(s, std::sqrt(4.0 / 3.0), 1e-12);
}

TEST(LossStd, Errors) {
  const std::vector<double> s{1, 2, 3};
  EXPECT_THROW(trainer::loss_std(s, 1), UsageError);
  EXPECT_THROW(trainer::loss_std(s, 4), UsageError);
}
