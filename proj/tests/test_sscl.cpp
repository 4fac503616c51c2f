#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "oracles.hpp"
#include "real/sscl.hpp"

using namespace real;

namespace {

struct Nets {
  Mlp backbone;
  Projector projector;
  Predictor predictor;
};

Nets small_nets(std::uint64_t seed) {
  return {Mlp({4, 24, 12}, derive_seed(RngSeed{seed}, 0)),
          make_projector(12, 12, derive_seed(RngSeed{seed}, 1)),
          make_predictor(12, 12, derive_seed(RngSeed{seed}, 2))};
}

}  // namespace

TEST(Augmentation, RequiresSomePerturbation) {
  try {
    AugmentationPolicy(0.0, 0.0, RngSeed{1});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::parameter);
  }
  EXPECT_THROW(AugmentationPolicy(0.1, 1.0, RngSeed{1}), Error);
}

TEST(Augmentation, SameSeedSamePair) {
  const Matrix x = gaussian_matrix(6, 5, 1.0, RngSeed{2});
  AugmentationPolicy p1(0.3, 0.2, RngSeed{4});
  AugmentationPolicy p2(0.3, 0.2, RngSeed{4});
  const auto a = augment_two_views(p1, x);
  const auto b = augment_two_views(p2, x);
  EXPECT_EQ(a.first, b.first);
  EXPECT_EQ(a.second, b.second);
  EXPECT_NE(a.first, a.second);
}

TEST(Augmentation, JitterMagnitude) {
  const double sigma = 0.4;
  AugmentationPolicy p(sigma, 0.0, RngSeed{6});
  const Matrix x(100, 100);
  const Matrix v = p.apply(x);
  double mean_abs = 0.0;
  for (double d : v.values()) mean_abs += std::abs(d);
  mean_abs /= static_cast<double>(v.size());
  const double expected = std::sqrt(2.0 / std::numbers::pi) * sigma;
  EXPECT_LE(std::abs(mean_abs / expected - 1.0), 0.05);
}

TEST(Augmentation, MaskRate) {
  AugmentationPolicy p(0.0, 0.25, RngSeed{7});
  const Matrix v = p.apply(Matrix(100, 100, 1.0));
  double zeros = 0.0;
  for (double d : v.values()) zeros += d == 0.0;
  EXPECT_NEAR(zeros / static_cast<double>(v.size()), 0.25, 0.02);
}

TEST(NegativeCosine, KnownValues) {
  const Matrix a{{1, 0}, {0, 2}};
  EXPECT_DOUBLE_EQ(negative_cosine(a, a), -2.0);
  EXPECT_DOUBLE_EQ(negative_cosine(a, -1.0 * a), 2.0);
  EXPECT_DOUBLE_EQ(negative_cosine(Matrix{{1, 0}}, Matrix{{0, 3}}), 0.0);
}

TEST(NegativeCosine, ZeroRowReported) {
  try {
    negative_cosine(Matrix{{1, 0}, {1, 1}}, Matrix{{1, 0}, {0, 0}});
    FAIL();
  } catch (const LocatedError& e) {
    EXPECT_EQ(e.kind(), ErrorKind::degenerate_row);
    EXPECT_EQ(e.where(), 1u);
  }
}

TEST(NegativeCosine, BoundedByRowCount) {
  Rng rng(RngSeed{9});
  for (int t = 0; t < 50; ++t) {
    const std::size_t n = 1 + rng.below(20);
    const Matrix a = gaussian_matrix(n, 6, 1.0, RngSeed{100u + t});
    const Matrix b = gaussian_matrix(n, 6, 1.0, RngSeed{200u + t});
    const double l = negative_cosine(a, b);
    EXPECT_GE(l, -static_cast<double>(n) - 1e-12);
    EXPECT_LE(l, static_cast<double>(n) + 1e-12);
  }
}

TEST(SsclLoss, EqualBranchesGiveMinusN) {
  const Matrix z = gaussian_matrix(7, 4, 1.0, RngSeed{3});
  EXPECT_NEAR(sscl_loss_from_branches({z, z, z, z}), -7.0, 1e-12);
}

TEST(SsclLoss, SymmetricInViews) {
  const Nets n = small_nets(1);
  const Matrix x1 = gaussian_matrix(6, 4, 1.0, RngSeed{10});
  const Matrix x2 = gaussian_matrix(6, 4, 1.0, RngSeed{11});
  EXPECT_EQ(sscl_forward_loss(n.backbone, n.projector, n.predictor, x1, x2).loss,
            sscl_forward_loss(n.backbone, n.projector, n.predictor, x2, x1).loss);
}

TEST(SsclLoss, StopGradientTargetsGetNoGradient) {
  const Nets n = small_nets(2);
  const Matrix x1 = gaussian_matrix(5, 4, 1.0, RngSeed{12});
  const Matrix x2 = gaussian_matrix(5, 4, 1.0, RngSeed{13});
  const SsclEvaluation ev = sscl_forward_loss(n.backbone, n.projector, n.predictor, x1, x2);
  EXPECT_EQ(max_abs(ev.grads.proj1_target), 0.0);
  EXPECT_EQ(max_abs(ev.grads.proj2_target), 0.0);
}

TEST(SsclLoss, GradientsMatchStopGradientFiniteDifferences) {
  Nets n = small_nets(3);
  const Matrix x1 = gaussian_matrix(5, 4, 1.0, RngSeed{14});
  const Matrix x2 = gaussian_matrix(5, 4, 1.0, RngSeed{15});
  const SsclEvaluation ev = sscl_forward_loss(n.backbone, n.projector, n.predictor, x1, x2);
  // The projector outputs used as targets stay fixed while weights are perturbed.
  const Matrix t1 = ev.branches.proj1;
  const Matrix t2 = ev.branches.proj2;
  auto loss = [&] {
    const Matrix p1 = forward(n.predictor, forward(n.projector, forward(n.backbone, x1)));
    const Matrix p2 = forward(n.predictor, forward(n.projector, forward(n.backbone, x2)));
    return 0.5 * negative_cosine(t1, p2) + 0.5 * negative_cosine(t2, p1);
  };
  auto check = [&](Mlp& net, const std::vector<Matrix>& grads, const char* name) {
    for (std::size_t l = 0; l < net.layer_count(); ++l) {
      const Matrix numeric = oracle::finite_difference(net.mutable_weights()[l], loss);
      EXPECT_LE(oracle::gradient_rel_error(grads[l], numeric), 1e-4) << name << " layer " << l;
    }
  };
  check(n.backbone, ev.grads.backbone, "backbone");
  check(n.projector, ev.grads.projector, "projector");
  check(n.predictor, ev.grads.predictor, "predictor");
}

TEST(Pretrain, LossDecreasesAndStaysInRange) {
  const Matrix data = gaussian_matrix(64, 4, 1.0, RngSeed{20});
  const Nets n = small_nets(4);
  TrainConfig cfg;
  cfg.lr = 0.05;
  cfg.epochs = 20;
  cfg.batch_size = 16;
  cfg.seed = RngSeed{21};
  const SsclResult r = pretrain_sscl(n.backbone, n.projector, n.predictor, data,
                                     AugmentationPolicy(0.2, 0.1, RngSeed{22}), cfg);
  ASSERT_EQ(r.epoch_loss.size(), 20u);
  EXPECT_LT(r.epoch_loss.back(), r.epoch_loss.front());
  for (double l : r.epoch_loss) EXPECT_GE(l, -1.0);
  EXPECT_LT(r.epoch_loss.back(), 0.0);
  EXPECT_EQ(r.backbone.widths(), n.backbone.widths());
}

TEST(Pretrain, Deterministic) {
  const Matrix data = gaussian_matrix(32, 4, 1.0, RngSeed{20});
  const Nets n = small_nets(5);
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.batch_size = 8;
  auto run = [&] {
    return pretrain_sscl(n.backbone, n.projector, n.predictor, data,
                         AugmentationPolicy(0.2, 0.1, RngSeed{22}), cfg);
  };
  const SsclResult a = run();
  const SsclResult b = run();
  EXPECT_EQ(a.backbone.weights(), b.backbone.weights());
  EXPECT_EQ(a.epoch_loss, b.epoch_loss);
}
