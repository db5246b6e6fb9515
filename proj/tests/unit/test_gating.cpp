// Copyright 2026 The dirnet Authors.
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "dirnet/gating.hpp"
#include "dirnet/optim.hpp"
#include "gradcheck.hpp"

namespace dirnet {
namespace {

using testing::grad_check;
using TD = Tensor<double>;

ParamList<double> params_of(const GatePolicy<double>& p) {
  ParamList<double> out;
  p.collect(out, "gate");
  return out;
}

void zero_policy(GatePolicy<double>& p) {
  for (auto& e : params_of(p))
    for (auto& v : e.tensor.data()) v = 0;
}

TD feature(std::size_t width, Rng& rng) {
  TD f(Shape{1, width});
  for (auto& v : f.data()) v = uniform(rng, 0, 2);
  return f;
}

TEST(ThresholdGate, Examples) {
  EXPECT_EQ(threshold_gate(0.5, 0.4, 0, 2), GateAction::cont);
  EXPECT_EQ(threshold_gate(0.4, 0.4, 0, 2), GateAction::exit);
  EXPECT_EQ(threshold_gate(0.3, 0.4, 1, 2), GateAction::exit);
  EXPECT_EQ(threshold_gate(1e6, 0.4, 2, 2), GateAction::exit);
  Rng rng(41);
  for (int t = 0; t < 100; ++t) {
    double v = std::exp(uniform(rng, -12, 12));
    EXPECT_EQ(threshold_gate(v, 0.0, 0, 3), GateAction::cont);
    EXPECT_EQ(threshold_gate(v, 0.0, 3, 3), GateAction::exit);
  }
}

TEST(GatePolicy, RejectsNonPositiveTemperature) {
  Rng rng(42);
  EXPECT_THROW(GatePolicy<double>(8, rng, 0.0), std::invalid_argument);
  EXPECT_THROW(GatePolicy<double>(8, rng, -1.0), std::invalid_argument);
}

TEST(GateDecide, ZeroWeightsGiveEvenOdds) {
  Rng rng(43);
  GatePolicy<double> p(8, rng);
  zero_policy(p);
  for (double tau : {0.1, 1.0, 50.0}) {
    p.tau = tau;
    auto d = gate_decide(feature(8, rng), p, rng, GateMode::sample);
    EXPECT_EQ(d.probs[0], 0.5);
    EXPECT_EQ(d.probs[1], 0.5);
  }
}

TEST(GateDecide, ProbabilitiesSumToOneAndLogProbMatches) {
  Rng rng(44);
  GatePolicy<double> p(8, rng, 0.7);
  for (int t = 0; t < 50; ++t) {
    auto d = gate_decide(feature(8, rng), p, rng, GateMode::sample, 1);
    EXPECT_NEAR(d.probs[0] + d.probs[1], 1.0, 1e-12);
    EXPECT_NEAR(d.log_prob, std::log(d.probs[static_cast<int>(d.action)]), 1e-12);
    EXPECT_EQ(d.loop, 1);
    EXPECT_FALSE(d.forced);
  }
}

TEST(GateDecide, HighTemperatureApproachesEvenOdds) {
  Rng rng(45);
  GatePolicy<double> p(8, rng);
  for (auto& v : p.fc2.bias.data()) v = uniform(rng, -3, 3);
  auto f = feature(8, rng);
  double prev = 1.0;
  for (double tau : {1.0, 10.0, 100.0, 1e4}) {
    p.tau = tau;
    double gap = std::abs(gate_decide(f, p, rng, GateMode::argmax).probs[0] - 0.5);
    EXPECT_LE(gap, prev);
    prev = gap;
  }
  EXPECT_LT(prev, 1e-3);
}

TEST(GateDecide, ArgmaxInvariantToTemperature) {
  Rng rng(46);
  for (int t = 0; t < 50; ++t) {
    GatePolicy<double> p(8, rng);
    auto f = feature(8, rng);
    p.tau = 1.0;
    auto ref = gate_decide(f, p, rng, GateMode::argmax).action;
    for (double tau : {0.05, 0.5, 3.0, 40.0}) {
      p.tau = tau;
      EXPECT_EQ(gate_decide(f, p, rng, GateMode::argmax).action, ref);
    }
  }
}

TEST(GateDecide, SeededSamplingIsReproducible) {
  Rng init(47);
  GatePolicy<double> p(8, init);
  std::vector<TD> fs;
  for (int i = 0; i < 30; ++i) fs.push_back(feature(8, init));
  auto run = [&] {
    Rng rng(99);
    std::vector<GateAction> out;
    for (const auto& f : fs) out.push_back(gate_decide(f, p, rng, GateMode::sample).action);
    return out;
  };
  EXPECT_EQ(run(), run());
}

TEST(GateDecide, SampleFrequencyMatchesProbability) {
  Rng rng(48);
  GatePolicy<double> p(4, rng);
  zero_policy(p);
  p.fc2.bias[0] = 0.8;  // EXIT logit
  auto f = feature(4, rng);
  const double p_exit = 1.0 / (1.0 + std::exp(-0.8));
  int exits = 0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) exits += gate_decide(f, p, rng, GateMode::sample).action == GateAction::exit;
  EXPECT_NEAR(static_cast<double>(exits) / n, p_exit, 0.015);
}

TEST(GateDecide, RejectsNonFiniteFeature) {
  Rng rng(49);
  GatePolicy<double> p(4, rng);
  TD f(Shape{1, 4}, 0.0);
  f[2] = std::nan("");
  EXPECT_THROW(gate_decide(f, p, rng, GateMode::sample), std::domain_error);
  EXPECT_THROW(gate_decide(TD(Shape{2, 4}), p, rng, GateMode::sample), ShapeError);
}

TEST(Reward, Examples) {
  EXPECT_DOUBLE_EQ(reward(1.5, 0.5, 0, 0.3, 1.0), -2.0);
  EXPECT_NEAR(reward(0.3, 0.2, 2, 0.3, 10.0), -5.6, 1e-12);
  EXPECT_NEAR(reward(0.3, 0.2, 2, 0.3, 10.0, CostMode::marginal), -5.3, 1e-12);
  for (int l = 0; l < 5; ++l) EXPECT_GT(reward(0.4, 0.1, l, 0.2, 3.0), reward(0.4, 0.1, l + 1, 0.2, 3.0));
}

TEST(Trajectory, Validity) {
  auto step = [](GateAction a) {
    TrajectoryStep s;
    s.decision.action = a;
    return s;
  };
  Trajectory ok;
  ok.steps = {step(GateAction::cont), step(GateAction::cont), step(GateAction::exit)};
  EXPECT_TRUE(ok.valid(2));
  EXPECT_FALSE(ok.valid(1));
  Trajectory early;
  early.steps = {step(GateAction::exit), step(GateAction::exit)};
  EXPECT_FALSE(early.valid(3));
}

TEST(Trajectory, CsvDump) {
  Trajectory t;
  TrajectoryStep a, b;
  a.decision = {GateAction::cont, std::log(0.75), 0, {0.25, 0.75}, false};
  a.reward = -1.5;
  b.decision = {GateAction::exit, 0.0, 1, {1.0, 0.0}, true};
  b.reward = -1.5;
  t.steps = {a, b};
  std::ostringstream os;
  write_trajectories_csv(os, {t}, {17});
  std::istringstream is(os.str());
  std::string line;
  std::getline(is, line);
  EXPECT_EQ(line, "sample,loop,action,p_exit,p_continue,log_prob,forced,reward");
  std::getline(is, line);
  EXPECT_EQ(line.substr(0, 15), "17,0,CONTINUE,0");
  std::getline(is, line);
  EXPECT_EQ(line, "17,1,EXIT,1,0,0,1,-1.5");
  EXPECT_THROW(write_trajectories_csv(os, {t}, {}), std::invalid_argument);
}

TEST(PolicyGradient, LogProbGradientMatchesFiniteDifferences) {
  Rng rng(50);
  GatePolicy<double> p(6, rng, 0.6);
  TD f(Shape{5, 6});
  for (auto& v : f.data()) v = uniform(rng, 0.1, 2);
  std::vector<std::size_t> actions{0, 1, 1, 0, 1};
  std::vector<double> w{0.3, -1.2, 0.7, 2.0, -0.4};
  std::vector<TD> leaves;
  for (auto& e : params_of(p)) leaves.push_back(e.tensor);
  auto r = grad_check(leaves, [&] {
    return weighted_sum(select_cols(log_softmax_temperature(p.logits(f), 0.6), actions), w);
  });
  EXPECT_LT(r.max_rel, 1e-4);
}

TEST(PolicyGradient, RejectsEmptyBatch) {
  Rng rng(51);
  GatePolicy<double> p(4, rng);
  Optimizer<double> opt({{"gate", params_of(p), 1e-2}});
  RewardBaseline b;
  EXPECT_THROW(policy_gradient_update<double>({}, p, opt, b), std::invalid_argument);
}

TEST(PolicyGradient, RewardsAtBaselineLeaveWeightsUnchanged) {
  Rng rng(52);
  GatePolicy<double> p(4, rng);
  auto params = params_of(p);
  set_tracked(params, true);
  Optimizer<double> opt({{"gate", params, 1e-2}});
  RewardBaseline b;
  std::vector<std::vector<double>> before;
  for (const auto& e : params) before.emplace_back(e.tensor.data().begin(), e.tensor.data().end());
  std::vector<Trajectory> batch;
  for (int i = 0; i < 8; ++i) {
    Trajectory t;
    auto f = feature(4, rng);
    TrajectoryStep s;
    s.f.assign(f.data().begin(), f.data().end());
    s.decision = gate_decide(f, p, rng, GateMode::sample);
    s.reward = -2.0;
    t.steps.push_back(s);
    batch.push_back(t);
  }
  policy_gradient_update(batch, p, opt, b);
  EXPECT_EQ(b.value, -2.0);
  for (std::size_t k = 0; k < params.size(); ++k)
    for (std::size_t i = 0; i < before[k].size(); ++i) EXPECT_EQ(params[k].tensor[i], before[k][i]);
}

TEST(PolicyGradient, ForcedStepsCarryNoGradient) {
  Rng rng(53);
  GatePolicy<double> p(4, rng);
  auto params = params_of(p);
  set_tracked(params, true);
  Optimizer<double> opt({{"gate", params, 1e-2}});
  RewardBaseline b{0.0, true, 0.99};
  std::vector<std::vector<double>> before;
  for (const auto& e : params) before.emplace_back(e.tensor.data().begin(), e.tensor.data().end());
  Trajectory t;
  TrajectoryStep s;
  s.f = {1, 2, 3, 4};
  s.decision = {GateAction::exit, 0.0, 2, {1.0, 0.0}, true};
  s.reward = 5.0;
  t.steps.push_back(s);
  policy_gradient_update({t}, p, opt, b);
  for (std::size_t k = 0; k < params.size(); ++k)
    for (std::size_t i = 0; i < before[k].size(); ++i) EXPECT_EQ(params[k].tensor[i], before[k][i]);
  EXPECT_NEAR(b.value, 0.05, 1e-12);
}

// Scripted two-armed bandit on one fixed feature: EXIT pays +1, CONTINUE -1.
TEST(PolicyGradient, BanditConvergesToBetterArm) {
  Rng rng(54);
  GatePolicy<double> p(6, rng);
  auto params = params_of(p);
  set_tracked(params, true);
  Optimizer<double> opt({{"gate", params, 1e-2}});
  RewardBaseline b;
  auto f = feature(6, rng);
  const double start = gate_decide(f, p, rng, GateMode::argmax).probs[0];
  for (int it = 0; it < 200; ++it) {
    std::vector<Trajectory> batch;
    for (int k = 0; k < 16; ++k) {
      Trajectory t;
      TrajectoryStep s;
      s.f.assign(f.data().begin(), f.data().end());
      s.decision = gate_decide(f, p, rng, GateMode::sample);
      s.reward = s.decision.action == GateAction::exit ? 1.0 : -1.0;
      t.steps.push_back(s);
      batch.push_back(t);
    }
    policy_gradient_update(batch, p, opt, b);
  }
  const double end = gate_decide(f, p, rng, GateMode::argmax).probs[0];
  EXPECT_LT(start, 0.9);
  EXPECT_GT(end, 0.99);
}

}  // namespace
}  // namespace dirnet
