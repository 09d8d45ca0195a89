#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "amine/backbone.hpp"
#include "amine/gradcheck.hpp"
#include "amine/ops.hpp"
#include "test_util.hpp"

namespace amine {
namespace {

using testing::random_map;

BackboneConfig small_config(bool msa = true) {
  BackboneConfig c;
  c.stage_channels = {3, 4, 5, 6};
  c.msa_reduced_channels = {3, 2};
  c.num_classes = 2;
  c.msa = msa;
  return c;
}

NetworkParams random_net(const BackboneConfig& cfg, Rng& rng) {
  NetworkParams p = NetworkParams::initialize(cfg, rng);
  for (auto& layer : p.stages) {
    for (double& b : layer.bias) b = rng.uniform(-0.1, 0.1);
  }
  for (double& w : p.branches.weights) w = rng.uniform(-1.0, 1.0);
  return p;
}

TEST(Backbone, DefaultStageShapes) {
  Rng rng(1);
  const NetworkParams p = NetworkParams::initialize(BackboneConfig{}, rng);
  const FeatureMap img = random_map({1, 64, 64, 1}, rng);
  const StageOutputs s = forward_stages(p, img);
  EXPECT_EQ(s.shallow.shape(), (Shape4{1, 16, 16, 32}));
  EXPECT_EQ(s.deep.shape(), (Shape4{1, 8, 8, 64}));
  const FeatureMap x = msa_aggregate(p, s.deep, s.shallow);
  EXPECT_EQ(x.shape(), (Shape4{1, 16, 16, 48}));
  EXPECT_EQ(BackboneConfig{}.feature_channels(), 48u);
  EXPECT_EQ(BackboneConfig{}.feature_stride(), 4u);
  EXPECT_EQ(p.branches.dim, 48u);
  EXPECT_EQ(p.branches.num_classes, 4u);
}

TEST(Backbone, ForwardMatchesStagesAndAggregate) {
  Rng rng(2);
  const NetworkParams p = random_net(small_config(), rng);
  const FeatureMap img = random_map({2, 16, 16, 1}, rng);
  const ForwardCache cache = forward(p, img);
  const StageOutputs s = forward_stages(p, img);
  const FeatureMap x = msa_aggregate(p, s.deep, s.shallow);
  ASSERT_EQ(cache.features.shape(), x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_EQ(cache.features.values()[i], x.values()[i]);
}

TEST(Backbone, IndivisibleInputNamesDivisor) {
  Rng rng(3);
  const NetworkParams p = NetworkParams::initialize(BackboneConfig{}, rng);
  try {
    forward_stages(p, FeatureMap({1, 60, 64, 1}));
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("divisible by 8"), std::string::npos) << e.what();
  }
}

TEST(Backbone, ZeroInputGivesZeroOutputs) {
  Rng rng(4);
  const NetworkParams p = NetworkParams::initialize(BackboneConfig{}, rng);
  const ForwardCache c = forward(p, FeatureMap({1, 32, 32, 1}));
  for (const auto& s : c.stage_outputs) {
    for (double v : s.values()) EXPECT_EQ(v, 0.0);
  }
  for (double v : c.features.values()) EXPECT_EQ(v, 0.0);
}

TEST(Backbone, BatchIndependence) {
  Rng rng(5);
  const NetworkParams p = random_net(small_config(), rng);
  const FeatureMap one = random_map({1, 16, 16, 1}, rng);
  FeatureMap two({2, 16, 16, 1});
  std::copy(one.values().begin(), one.values().end(), two.values().begin());
  std::copy(one.values().begin(), one.values().end(), two.values().begin() + one.size());
  const FeatureMap x1 = forward(p, one).features;
  const FeatureMap x2 = forward(p, two).features;
  for (std::size_t i = 0; i < x1.size(); ++i) {
    EXPECT_EQ(x2.values()[i], x1.values()[i]);
    EXPECT_EQ(x2.values()[x1.size() + i], x1.values()[i]);
  }
}

TEST(Msa, RejectsSpatialMismatch) {
  Rng rng(6);
  const NetworkParams p = random_net(small_config(), rng);
  EXPECT_THROW(msa_aggregate(p, FeatureMap({1, 4, 4, 6}), FeatureMap({1, 6, 8, 5})), ShapeError);
  EXPECT_THROW(msa_aggregate(p, FeatureMap({1, 4, 4, 6}), FeatureMap({2, 8, 8, 5})), ShapeError);
}

TEST(Msa, ZeroInputsGiveZeroOutput) {
  Rng rng(7);
  const NetworkParams p = random_net(small_config(), rng);
  const FeatureMap x = msa_aggregate(p, FeatureMap({1, 2, 2, 6}), FeatureMap({1, 4, 4, 5}));
  EXPECT_EQ(x.shape(), (Shape4{1, 4, 4, 5}));
  for (double v : x.values()) EXPECT_EQ(v, 0.0);
}

TEST(Msa, DeepStreamComesFirst) {
  NetworkParams p = NetworkParams::zeros(small_config());
  std::fill(p.reduce_deep.weights.begin(), p.reduce_deep.weights.end(), 1.0);
  std::fill(p.reduce_shallow.weights.begin(), p.reduce_shallow.weights.end(), 1.0);
  const FeatureMap deep({1, 2, 2, 6}, 1.0);  // each reduced channel = 6
  const FeatureMap shallow({1, 4, 4, 5}, -1.0);  // each reduced channel = -5
  const FeatureMap x = msa_aggregate(p, deep, shallow);
  for (std::size_t px = 0; px < 4; ++px) {
    for (std::size_t py = 0; py < 4; ++py) {
      for (std::size_t d = 0; d < 3; ++d) EXPECT_DOUBLE_EQ(x.at(0, px, py, d), 6.0);
      for (std::size_t d = 3; d < 5; ++d) EXPECT_DOUBLE_EQ(x.at(0, px, py, d), -5.0);
    }
  }
}

TEST(BranchLogits, Examples) {
  Rng rng(8);
  const FeatureMap x = random_map({3, 4, 4, 2}, rng);
  for (double v : branch_logits(x, std::vector<double>{0.0, 0.0})) EXPECT_EQ(v, 0.0);

  const FeatureMap c({1, 3, 3, 2}, 1.75);
  EXPECT_DOUBLE_EQ(branch_logits(c, std::vector<double>{0.0, 1.0})[0], 1.75);

  FeatureMap g({1, 1, 1, 2});
  g.values()[0] = 0.5;
  g.values()[1] = 0.2;
  EXPECT_NEAR(branch_logits(g, std::vector<double>{1.0, -1.0})[0], 0.3, 1e-15);

  EXPECT_THROW(branch_logits(g, std::vector<double>{1.0}), ShapeError);
}

TEST(ClassificationLoss, ZeroLogitsGiveLn2) {
  const FeatureMap x({2, 4, 4, 3}, 0.7);
  const FeatureMap masks = all_ones_masks(2, 4, 4, 3);
  LabelMatrix y(2, 3);
  y.at(0, 1) = 1;
  y.at(1, 2) = 1;
  const BranchParams b{3, 3, std::vector<double>(9, 0.0)};
  EXPECT_NEAR(classification_loss(x, masks, y, b), std::log(2.0), 1e-15);
}

TEST(ClassificationLoss, FullyErasedGivesLn2) {
  Rng rng(9);
  const FeatureMap x = random_map({2, 4, 4, 3}, rng);
  const FeatureMap masks({2, 4, 4, 2}, 0.0);
  BranchParams b{2, 3, testing::random_vector(6, rng)};
  for (int lab : {0, 1}) {
    LabelMatrix y(2, 2);
    std::fill(y.values.begin(), y.values.end(), lab);
    EXPECT_NEAR(classification_loss(x, masks, y, b), std::log(2.0), 1e-15);
  }
}

TEST(ClassificationLoss, SingleClassIsMeanBce) {
  Rng rng(10);
  const FeatureMap x = random_map({3, 2, 2, 2}, rng);
  const BranchParams b{1, 2, {0.7, -1.3}};
  LabelMatrix y(3, 1);
  y.at(1, 0) = 1;
  const auto logits = branch_logits(x, b.row(0));
  double expect = 0.0;
  for (std::size_t n = 0; n < 3; ++n) expect += sigmoid_bce(logits[n], y.at(n, 0)).loss / 3.0;
  EXPECT_NEAR(classification_loss(x, all_ones_masks(3, 2, 2, 1), y, b), expect, 1e-15);
}

TEST(ClassificationLoss, RejectsNonBinaryMask) {
  FeatureMap masks = all_ones_masks(1, 2, 2, 1);
  masks.values()[2] = 0.5;
  EXPECT_THROW(classification_loss(FeatureMap({1, 2, 2, 1}), masks, LabelMatrix(1, 1),
                                   BranchParams{1, 1, {1.0}}),
               std::invalid_argument);
}

TEST(Erasure, IdentityAndAnnihilation) {
  Rng rng(11);
  const FeatureMap x = random_map({2, 5, 4, 3}, rng);
  FeatureMap masks = all_ones_masks(2, 5, 4, 2);
  const FeatureMap same = erase_features(x, masks, 1);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_EQ(same.values()[i], x.values()[i]);

  LabelMatrix y(2, 2);
  y.at(0, 0) = 1;
  const BranchParams b{2, 3, testing::random_vector(6, rng)};
  const double plain = classification_loss(x, masks, y, b);
  const double again = classification_loss(x, all_ones_masks(2, 5, 4, 2), y, b);
  EXPECT_EQ(plain, again);

  for (std::size_t n = 0; n < 2; ++n) {
    for (std::size_t px = 0; px < 5; ++px) {
      for (std::size_t py = 0; py < 4; ++py) masks.at(n, px, py, 0) = rng.bernoulli(0.5) ? 1.0 : 0.0;
    }
  }
  const FeatureMap erased = erase_features(x, masks, 0);
  for (std::size_t n = 0; n < 2; ++n) {
    for (std::size_t px = 0; px < 5; ++px) {
      for (std::size_t py = 0; py < 4; ++py) {
        for (std::size_t d = 0; d < 3; ++d) {
          const double expect = masks.at(n, px, py, 0) == 0.0 ? 0.0 : x.at(n, px, py, d);
          EXPECT_EQ(erased.at(n, px, py, d), expect);
        }
      }
    }
  }
}

TEST(ClassificationLoss, ClassPermutationInvariant) {
  Rng rng(12);
  const std::size_t C = 3;
  const FeatureMap x = random_map({4, 3, 3, 2}, rng);
  FeatureMap masks(Shape4{4, 3, 3, C});
  for (double& v : masks.values()) v = rng.bernoulli(0.7) ? 1.0 : 0.0;
  LabelMatrix y(4, C);
  for (int& v : y.values) v = rng.bernoulli(0.5);
  const BranchParams b{C, 2, testing::random_vector(C * 2, rng)};

  const std::size_t perm[3] = {2, 0, 1};
  FeatureMap pm(masks.shape());
  LabelMatrix py(4, C);
  BranchParams pb{C, 2, std::vector<double>(C * 2)};
  for (std::size_t c = 0; c < C; ++c) {
    const std::size_t src = perm[c];
    for (std::size_t n = 0; n < 4; ++n) {
      py.at(n, c) = y.at(n, src);
      for (std::size_t px = 0; px < 3; ++px) {
        for (std::size_t q = 0; q < 3; ++q) pm.at(n, px, q, c) = masks.at(n, px, q, src);
      }
    }
    std::copy(b.row(src).begin(), b.row(src).end(), pb.row(c).begin());
  }
  EXPECT_NEAR(classification_loss(x, masks, y, b), classification_loss(x, pm, py, pb), 1e-14);
}

LossFn classification_objective(const NetworkParams& base, const FeatureMap& img,
                                const FeatureMap& masks, const LabelMatrix& y) {
  return [&base, &img, &masks, &y](std::span<const double> flat) {
    NetworkParams p = base;
    p.assign(flat);
    const ForwardCache cache = forward(p, img);
    const ClassificationResult r = classification_forward(cache.features, masks, y, p.branches);
    const BranchGrads bg = branch_backward(cache.features, masks, p.branches, r.d_logits);
    NetworkParams g = backbone_backward(p, cache, bg.d_features);
    g.branches = bg.d_branches;
    return LossAndGrad{r.loss, g.flatten()};
  };
}

TEST(ClassificationLoss, GradientMatchesFiniteDifferences) {
  for (bool msa : {true, false}) {
    Rng rng(msa ? 13 : 14);
    const NetworkParams p = random_net(small_config(msa), rng);
    const FeatureMap img = random_map({3, 16, 16, 1}, rng);
    const Shape4 fs = forward(p, img).features.shape();
    FeatureMap masks(Shape4{fs.n, fs.w, fs.h, 2});
    for (double& v : masks.values()) v = rng.bernoulli(0.8) ? 1.0 : 0.0;
    LabelMatrix y(3, 2);
    y.at(0, 0) = 1;
    y.at(1, 1) = 1;
    y.at(2, 0) = 1;
    y.at(2, 1) = 1;
    const auto flat = p.flatten();
    const GradCheckReport r =
        finite_diff_check(classification_objective(p, img, masks, y), flat, 1e-5, 1e-4);
    EXPECT_TRUE(r.passed) << "msa=" << msa << " err " << r.max_relative_error << " at "
                          << r.worst_index;
  }
}

TEST(ClassificationLoss, MasksReceiveNoGradient) {
  // Flipping a mask bit changes the loss, but the gradient is defined only
  // through X and w: a zeroed pixel contributes no feature gradient.
  Rng rng(15);
  const FeatureMap x = random_map({1, 3, 3, 2}, rng);
  FeatureMap masks = all_ones_masks(1, 3, 3, 1);
  masks.at(0, 1, 1, 0) = 0.0;
  LabelMatrix y(1, 1);
  y.at(0, 0) = 1;
  const BranchParams b{1, 2, {0.4, -0.9}};
  const ClassificationResult r = classification_forward(x, masks, y, b);
  const BranchGrads g = branch_backward(x, masks, b, r.d_logits);
  EXPECT_EQ(g.d_features.at(0, 1, 1, 0), 0.0);
  EXPECT_EQ(g.d_features.at(0, 1, 1, 1), 0.0);
  EXPECT_NE(g.d_features.at(0, 0, 0, 0), 0.0);
}

TEST(NetworkParams, FlattenAssignRoundTrip) {
  Rng rng(16);
  const NetworkParams p = random_net(small_config(), rng);
  NetworkParams q = NetworkParams::zeros(small_config());
  q.assign(p.flatten());
  EXPECT_EQ(q.flatten(), p.flatten());
  EXPECT_EQ(p.parameter_count(), p.flatten().size());
  EXPECT_THROW(q.assign(std::vector<double>(3)), ShapeError);

  NetworkParams r = p;
  r.add_scaled(p, -1.0);
  for (double v : r.flatten()) EXPECT_EQ(v, 0.0);
}

TEST(NetworkParams, InitializationBounds) {
  Rng rng(17);
  const NetworkParams p = NetworkParams::initialize(BackboneConfig{}, rng);
  for (const auto& layer : p.stages) {
    const double s = std::sqrt(6.0 / static_cast<double>(9 * layer.kernel.d_in));
    for (double w : layer.kernel.weights) EXPECT_LE(std::abs(w), s);
    for (double b : layer.bias) EXPECT_EQ(b, 0.0);
  }
  for (double w : p.branches.weights) EXPECT_EQ(w, 0.0);
}

TEST(BackboneConfig, Validation) {
  BackboneConfig c;
  c.stage_channels = {8};
  c.stage_strides = {1};
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = BackboneConfig{};
  c.num_classes = 0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = BackboneConfig{};
  c.msa_reduced_channels = {0, 4};
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = BackboneConfig{};
  c.stage_strides = {1, 2, 2};
  EXPECT_THROW(c.validate(), std::invalid_argument);
  EXPECT_NO_THROW(BackboneConfig{}.validate());
}

}  // namespace
}  // namespace amine
