// Copyright 2026 The dirnet Authors.
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <set>

#include "dirnet/model.hpp"
#include "dirnet/training.hpp"
#include "gradcheck.hpp"

namespace dirnet {
namespace {

using TD = Tensor<double>;

TD random_image(std::size_t n, std::size_t h, Rng& rng) {
  TD x(Shape{n, 3, h, h});
  for (auto& v : x.data()) v = uniform01(rng);
  return x;
}

IR9Config small_config(int loop_point = 3, int l_max = 2) {
  IR9Config c;
  c.input_size = 32;
  c.base_channels = 4;
  c.loop_point = loop_point;
  c.l_max = l_max;
  c.fc_width = 16;
  return c;
}

TEST(IR9Config, ValidationRejectsBadValues) {
  IR9Config c;
  EXPECT_NO_THROW(c.validate());
  c.input_size = 48;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = IR9Config{};
  c.loop_point = 5;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = IR9Config{};
  c.l_max = -1;
  EXPECT_THROW(c.validate(), std::invalid_argument);
}

TEST(IR9, FeatureExtentPerLoopPoint) {
  Rng rng(1);
  for (int lp = 1; lp <= 4; ++lp) {
    IR9Config c;
    c.loop_point = lp;
    IR9<double> net(c, rng);
    net.set_mode(NormMode::eval);
    auto f = net.extract_features(random_image(2, 64, rng));
    EXPECT_EQ(f.dim(2), static_cast<std::size_t>(64 >> lp)) << "loop point " << lp;
    EXPECT_EQ(f.dim(1), static_cast<std::size_t>(c.fe_channels()));
  }
  IR9Config big;
  big.input_size = 224;
  EXPECT_EQ(big.fe_extent(), 28);
}

TEST(IR9, RejectsWrongInputSize) {
  Rng rng(2);
  IR9<double> net(IR9Config{}, rng);
  EXPECT_THROW(net.extract_features(random_image(2, 32, rng)), ShapeError);
}

TEST(IR9, EvalModeIsDeterministic) {
  Rng rng(3);
  IR9<double> net(small_config(), rng);
  net.set_mode(NormMode::eval);
  auto x = random_image(2, 32, rng);
  auto a = net.forward_loop(x, 2), b = net.forward_loop(x, 2);
  for (std::size_t l = 0; l < 3; ++l)
    for (std::size_t i = 0; i < a[l].latent.numel(); ++i) EXPECT_EQ(a[l].latent[i], b[l].latent[i]);
}

TEST(IR9, ApplyAttentionIsElementwiseProduct) {
  Rng rng(4);
  TD f(Shape{2, 3, 4, 4}), m(Shape{2, 3, 4, 4});
  for (auto& v : f.data()) v = uniform(rng, -2, 2);
  for (auto& v : m.data()) v = uniform01(rng);
  auto out = IR9<double>::apply_attention(f, m);
  for (std::size_t i = 0; i < f.numel(); ++i) EXPECT_DOUBLE_EQ(out[i], f[i] * m[i]);
  TD ones(Shape{2, 3, 4, 4}, 1.0), zeros(Shape{2, 3, 4, 4}, 0.0);
  auto id = IR9<double>::apply_attention(f, ones);
  auto z = IR9<double>::apply_attention(f, zeros);
  for (std::size_t i = 0; i < f.numel(); ++i) {
    EXPECT_EQ(id[i], f[i]);
    EXPECT_EQ(z[i], 0.0);
  }
  EXPECT_THROW(IR9<double>::apply_attention(f, TD(Shape{2, 3, 4, 2})), ShapeError);
}

TEST(IR9, LatentShapeForEveryLoopPoint) {
  Rng rng(5);
  for (int lp = 1; lp <= 4; ++lp) {
    IR9<double> net(small_config(lp, 1), rng);
    net.set_mode(NormMode::eval);
    auto outs = net.forward_loop(random_image(2, 32, rng), 1);
    ASSERT_EQ(outs.size(), 2u);
    EXPECT_EQ(outs[1].latent.shape(), (Shape{2, 32}));
  }
}

TEST(IR9, AttentionMatchesFeatureShapeAndRange) {
  Rng rng(6);
  for (int lp = 1; lp <= 4; ++lp) {
    IR9<double> net(small_config(lp, 1), rng);
    net.set_mode(NormMode::eval);
    auto x = random_image(2, 32, rng);
    auto f = net.extract_features(x);
    auto out = net.refine(f, 0);
    auto m = net.generate_attention(out.premap);
    EXPECT_EQ(m.shape(), f.shape()) << "loop point " << lp;
    for (double v : m.data()) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
  }
}

TEST(IR9, AttentionRangeOverManyRandomMaps) {
  Rng rng(7);
  IR9<double> net(small_config(3, 1), rng);
  std::size_t seen = 0;
  while (seen < 10000) {
    TD premap(Shape{4, 32, 1, 1});
    for (auto& v : premap.data()) v = uniform(rng, -20, 20);
    auto m = net.generate_attention(premap);
    for (double v : m.data()) {
      ASSERT_GE(v, 0.0);
      ASSERT_LE(v, 1.0);
    }
    seen += m.numel();
  }
}

TEST(IR9, ZeroFinalConvGivesHalfEverywhere) {
  Rng rng(8);
  IR9<double> net(small_config(), rng);
  for (auto& v : net.amg_out().weight.data()) v = 0;
  for (auto& v : net.amg_out().bias.data()) v = 0;
  TD premap(Shape{2, 32, 1, 1});
  for (auto& v : premap.data()) v = uniform(rng, -1, 1);
  auto m = net.generate_attention(premap);
  for (double v : m.data()) EXPECT_EQ(v, 0.5);
}

TEST(IR9, SingleLoopMatchesPlainForward) {
  Rng rng(9);
  IR9<double> net(small_config(), rng);
  net.set_mode(NormMode::eval);
  auto x = random_image(2, 32, rng);
  auto outs = net.forward_loop(x, 0);
  ASSERT_EQ(outs.size(), 1u);
  auto plain = net.refine(net.extract_features(x), 0);
  for (std::size_t i = 0; i < plain.latent.numel(); ++i) EXPECT_EQ(outs[0].latent[i], plain.latent[i]);
}

TEST(IR9, BankEntriesSelectDistinctStatistics) {
  Rng rng(10);
  IR9<double> net(small_config(), rng);
  net.set_mode(NormMode::eval);
  auto banks = net.refiner_banks();
  for (auto* b : banks)
    for (auto& v : b->at(1).running_mean.data()) v = 0.3;
  auto f = net.extract_features(random_image(2, 32, rng));
  auto a = net.refine(f, 0), b = net.refine(f, 1);
  bool differs = false;
  for (std::size_t i = 0; i < a.latent.numel(); ++i) differs |= a.latent[i] != b.latent[i];
  EXPECT_TRUE(differs);
  EXPECT_THROW(net.refine(f, 3), std::out_of_range);
}

TEST(IR9, OnesAttentionWithIdenticalBanksIsAFixedPoint) {
  Rng rng(11);
  IR9<double> net(small_config(), rng);
  net.set_mode(NormMode::eval);
  auto f = net.extract_features(random_image(2, 32, rng));
  TD ones(f.shape(), 1.0);
  auto l0 = net.refine(f, 0);
  for (std::size_t l = 1; l <= 2; ++l) {
    auto ll = net.refine(IR9<double>::apply_attention(f, ones), l);
    for (std::size_t i = 0; i < l0.latent.numel(); ++i) EXPECT_EQ(ll.latent[i], l0.latent[i]);
  }
}

TEST(IR9, RefinerWeightsSharedAcrossLoops) {
  Rng rng(12);
  IR9Config a = small_config(3, 1), b = small_config(3, 4);
  IR9<double> na(a, rng), nb(b, rng);
  auto count = [](const ParamList<double>& p, bool bn) {
    std::size_t n = 0;
    for (const auto& e : p)
      if ((e.name.find(".bn") != std::string::npos) == bn) n += e.tensor.numel();
    return n;
  };
  EXPECT_EQ(count(na.rf_params(), false), count(nb.rf_params(), false));
  EXPECT_LT(count(na.rf_params(), true), count(nb.rf_params(), true));
  // One conv weight object per refiner conv regardless of loops run.
  std::set<const double*> ptrs;
  for (const auto& e : nb.rf_params())
    if (e.name.find("conv") != std::string::npos) ptrs.insert(e.tensor.ptr());
  EXPECT_EQ(ptrs.size(), 4u);  // two phases x two convs
}

TEST(IR9, BankLengthTracksLMax) {
  Rng rng(13);
  IR9<double> net(small_config(3, 0), rng);
  for (auto* b : net.refiner_banks()) EXPECT_EQ(b->size(), 1u);
  net.set_l_max(2);
  for (auto* b : net.refiner_banks()) {
    ASSERT_EQ(b->size(), 3u);
    EXPECT_EQ(b->at(2).gamma[0], 1.0);
    EXPECT_EQ(b->at(2).running_var[0], 1.0);
  }
}

TEST(IR9, DirectUpsampleHasNoAmgParameters) {
  Rng rng(14);
  IR9Config c = small_config();
  c.amg_mode = AmgMode::direct_upsample;
  IR9<double> net(c, rng);
  EXPECT_TRUE(net.amg_params().empty());
  net.set_mode(NormMode::eval);
  auto x = random_image(2, 32, rng);
  auto f = net.extract_features(x);
  auto m = net.generate_attention(net.refine(f, 0).premap);
  EXPECT_EQ(m.shape(), f.shape());
  EXPECT_EQ(net.forward_loop(x, 2).size(), 3u);
}

TEST(IR9, NoneModeForcesSingleLoop) {
  Rng rng(15);
  IR9Config c = small_config();
  c.amg_mode = AmgMode::none;
  IR9<double> net(c, rng);
  net.set_mode(NormMode::eval);
  EXPECT_EQ(net.forward_loop(random_image(2, 32, rng), 2).size(), 1u);
  EXPECT_EQ(c.effective_l_max(), 0);
}

TEST(DIRNet, ParameterGroupsPartitionTheModel) {
  DIRNet<double> m(small_config(), 3);
  std::set<std::string> names;
  std::size_t total = 0;
  for (const auto& g : DIRNet<double>::group_names())
    for (const auto& p : m.group(g)) {
      EXPECT_TRUE(names.insert(p.name).second) << p.name;
      ++total;
    }
  EXPECT_EQ(total, m.parameters().size());
  EXPECT_EQ(m.network_parameters().size() + m.group("gate").size(), total);
}

TEST(DIRNet, GateFeatureDiffersBetweenLoops) {
  DIRNet<double> m(small_config(), 4);
  m.set_mode(NormMode::eval);
  Rng rng(16);
  auto outs = m.forward(random_image(2, 32, rng), 1);
  bool differs = false;
  for (std::size_t i = 0; i < outs[0].var.f.numel(); ++i) differs |= outs[0].var.f[i] != outs[1].var.f[i];
  EXPECT_TRUE(differs);
}

// Central differences through the full composed network: backbone with
// attention loops, pose decoding, variance losses and regularizer.
TEST(DIRNet, ComposedGradientMatchesFiniteDifferences) {
  DIRNet<double> m(small_config(3, 2), 17);
  m.set_mode(NormMode::train);
  Rng rng(18);
  auto x = random_image(3, 32, rng);
  TD gt2d(Shape{3, 42}), gt3d(Shape{3, 63});
  for (auto& v : gt2d.data()) v = uniform(rng, 8, 24);
  for (auto& v : gt3d.data()) v = uniform(rng, -0.5, 0.5);

  auto loss_fn = [&] {
    auto outs = m.forward(x, 2);
    std::vector<LoopLoss<double>> ll;
    for (const auto& o : outs) ll.push_back(loop_loss(o, gt2d, gt3d, RegularizerWeights{}, false));
    return total_loss(ll);
  };

  auto params = m.network_parameters();
  set_tracked(params, true);
  for (auto& p : params) p.tensor.zero_grad();
  {
    Tape<double> tape;
    TapeScope<double> scope(tape);
    auto loss = loss_fn();
    backward(loss);
  }
  // 20 weights spread over all tensors.
  std::size_t total = count_elements(params);
  double worst = 0;
  for (int k = 0; k < 20; ++k) {
    std::size_t flat = (static_cast<std::size_t>(k) * 7919 + 13) * total / (20 * 7919 + 13) % total;
    std::size_t t = 0;
    while (flat >= params[t].tensor.numel()) flat -= params[t++].tensor.numel();
    auto ten = params[t].tensor;
    double analytic = ten.grad()[flat];
    double orig = ten[flat], h = 1e-5, fp, fm;
    {
      NoGradScope<double> ng;
      ten[flat] = orig + h;
      fp = loss_fn().item();
      ten[flat] = orig - h;
      fm = loss_fn().item();
      ten[flat] = orig;
    }
    double num = (fp - fm) / (2 * h);
    double rel = testing::rel_error(analytic, num);
    worst = std::max(worst, rel);
    EXPECT_LT(rel, 1e-3) << params[t].name << "[" << flat << "] analytic " << analytic << " numeric " << num;
  }
  RecordProperty("max_rel_error", std::to_string(worst));
}

}  // namespace
}  // namespace dirnet
