// Copyright 2026 The udfup Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <gtest/gtest.h>

#include <algorithm>
#include <random>
#include <set>
#include <sstream>

#include "test_util.hpp"
#include "udfup/error.hpp"
#include "udfup/ldi.hpp"

namespace udfup {
namespace {

LdiArchitecture small_arch() {
  LdiArchitecture a;
  a.feature_dim = 8;
  a.extractor_hidden = {8, 8};
  a.encoder_hidden = {8};
  a.weight_hidden = {8};
  a.distance_hidden = {16, 8};
  a.k_neighbors = 4;
  a.patch_size = 16;
  a.interp_ratio = 2;
  return a;
}

Patch random_patch(std::size_t n, std::mt19937_64& rng) {
  const auto cloud = testing::random_cloud(n, rng, 3.0);
  return make_patch(std::vector<Vec3>(cloud.begin(), cloud.end()));
}

// Zero weights with a saturating output bias pin every weight to 0 or 1.
void stub_weights(LdiModel& m, double logit) {
  for (int l = 0; l < m.weight_head.num_layers(); ++l) {
    m.weight_head.mutable_weight(l).setZero();
    m.weight_head.mutable_bias(l).setZero();
  }
  m.weight_head.mutable_bias(m.weight_head.num_layers() - 1)[0] = logit;
}

TEST(PatchInterpolate, MidpointOfPair) {
  const Patch p = make_patch({Vec3(-1, 0, 0), Vec3(1, 0, 0)});
  const Patch out = patch_interpolate(p, 3);
  ASSERT_EQ(out.size(), 3u);
  EXPECT_EQ(out.points[2], Vec3::Zero());
  EXPECT_EQ(out.frame, p.frame);
}

TEST(PatchInterpolate, IdentityAtCurrentSize) {
  std::mt19937_64 rng(1);
  const Patch p = random_patch(10, rng);
  EXPECT_EQ(patch_interpolate(p, 10).points, p.points);
  EXPECT_THROW(patch_interpolate(p, 9), DataError);
  EXPECT_THROW(patch_interpolate(make_patch({Vec3(1, 1, 1)}), 2), DataError);
}

TEST(PatchInterpolate, InsertedPointsAreOriginalMidpoints) {
  std::mt19937_64 rng(2);
  const Patch p = random_patch(16, rng);
  const Patch out = patch_interpolate(p, 64);
  ASSERT_EQ(out.size(), 64u);
  std::set<std::array<double, 3>> mids;
  for (std::size_t i = 0; i < 16; ++i) {
    for (std::size_t j = 0; j < 16; ++j) {
      if (i == j) continue;
      const Vec3 m = 0.5 * (p.points[i] + p.points[j]);
      mids.insert({m.x(), m.y(), m.z()});
    }
  }
  std::set<std::array<double, 3>> unique;
  for (std::size_t i = 0; i < 64; ++i) {
    const auto& v = out.points[i];
    unique.insert({v.x(), v.y(), v.z()});
    if (i < 16) {
      EXPECT_EQ(v, p.points[i]);
    } else {
      EXPECT_TRUE(mids.count({v.x(), v.y(), v.z()})) << i;
      EXPECT_LE(v.norm(), 1.0 + 1e-12);
    }
  }
  EXPECT_EQ(unique.size(), 64u);
}

TEST(PatchInterpolate, GrowsBeyondOnePass) {
  const Patch p = make_patch({Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(0, 1, 0)});
  const Patch out = patch_interpolate(p, 12);
  EXPECT_EQ(out.size(), 12u);
}

TEST(BlendFeatures, DirectArithmetic) {
  Eigen::VectorXd w(2);
  w << 0.5, 0.5;
  Eigen::MatrixXd rel(2, 2), pf = Eigen::MatrixXd::Zero(2, 2);
  rel << 2, 0, 0, 2;
  EXPECT_EQ(blend_features(w, rel, pf), Eigen::Vector2d(1, 1));
  EXPECT_THROW(blend_features(w, rel, Eigen::MatrixXd::Zero(2, 3)), DataError);
}

class LdiForwardTest : public ::testing::Test {
 protected:
  void SetUp() override {
    model = LdiModel::create(small_arch(), 7);
    patch = random_patch(32, rng);
  }
  std::mt19937_64 rng{3};
  LdiModel model;
  Patch patch;
};

TEST_F(LdiForwardTest, WeightsOneGiveRelativeFeatureSum) {
  stub_weights(model, 1000.0);
  const Vec3 q(0.1, -0.2, 0.05);
  const auto r = ldi_forward(model, q, patch);
  Eigen::MatrixXd rel(3, 4);
  for (int d = 0; d < 4; ++d) rel.col(d) = patch.points[r.neighbors[d]] - q;
  const Eigen::MatrixXd fr = model.relative_encoder.forward(rel);
  for (double w : r.weights) EXPECT_EQ(w, 1.0);
  EXPECT_LT((r.query_feature - fr.rowwise().sum()).cwiseAbs().maxCoeff(), 1e-12);
}

TEST_F(LdiForwardTest, WeightsZeroGivePatchFeatureSum) {
  stub_weights(model, -1000.0);
  const Vec3 q(0.3, 0.2, -0.1);
  const auto r = ldi_forward(model, q, patch);
  Eigen::MatrixXd pts(3, 4);
  for (int d = 0; d < 4; ++d) pts.col(d) = patch.points[r.neighbors[d]];
  // Per-point features do not depend on the rest of the patch.
  const Eigen::MatrixXd f = model.feature_extractor.forward(pts);
  for (double w : r.weights) EXPECT_EQ(w, 0.0);
  EXPECT_LT((r.query_feature - f.rowwise().sum()).cwiseAbs().maxCoeff(), 1e-12);
}

TEST_F(LdiForwardTest, NeighborsAreNearestPatchPoints) {
  const Vec3 q = testing::random_vec(rng, 0.5);
  const auto r = ldi_forward(model, q, patch);
  const auto brute = testing::brute_knn(PointCloud(patch.points), q, 4);
  for (int d = 0; d < 4; ++d) EXPECT_EQ(r.neighbors[d], brute[d].index);
}

TEST_F(LdiForwardTest, InvariantsHoldOnRandomInputs) {
  for (int t = 0; t < 50; ++t) {
    Patch p = random_patch(8 + rng() % 40, rng);
    const Vec3 q = testing::random_vec(rng, 1.2);
    const auto r = ldi_forward(model, q, p);
    EXPECT_GE(r.distance, 0.0);
    EXPECT_TRUE(std::isfinite(r.distance));
    for (double w : r.weights) {
      EXPECT_GE(w, 0.0);
      EXPECT_LE(w, 1.0);
    }
    std::vector<std::size_t> perm(p.size());
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    Patch shuffled = p;
    for (std::size_t i = 0; i < perm.size(); ++i) shuffled.points[i] = p.points[perm[i]];
    EXPECT_EQ(ldi_forward(model, q, shuffled).distance, r.distance);
  }
}

TEST_F(LdiForwardTest, PatchSmallerThanKRejected) {
  const Patch tiny = make_patch({Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(0, 1, 0)});
  EXPECT_THROW(ldi_forward(model, Vec3::Zero(), tiny), DataError);
}

// Reverse sweep against central differences for parameters and queries,
// skipping stencils that change any discrete branch.
TEST_F(LdiForwardTest, BackwardMatchesFiniteDifferences) {
  constexpr double h = 1e-6;
  Eigen::Matrix3Xd q(3, 3);
  for (int j = 0; j < 3; ++j) q.col(j) = testing::random_vec(rng, 0.6);
  const Eigen::RowVectorXd cot = Eigen::RowVectorXd::Random(3);
  const LdiBatch base(model, patch, q);
  LdiGrads grads = LdiGrads::zeros_like(model);
  const Eigen::Matrix3Xd qbar = base.backward(cot, &grads);

  auto objective = [&](const LdiModel& m, const Eigen::Matrix3Xd& x,
                       bool* same) {
    const LdiBatch b(m, patch, x);
    *same = b.same_branch(base);
    return cot.dot(b.distances());
  };
  int checked = 0;
  for (int j = 0; j < 3; ++j) {
    for (int a = 0; a < 3; ++a) {
      Eigen::Matrix3Xd xp = q, xm = q;
      xp(a, j) += h;
      xm(a, j) -= h;
      bool s1 = false, s2 = false;
      const double fd = (objective(model, xp, &s1) - objective(model, xm, &s2)) / (2 * h);
      if (!s1 || !s2) continue;
      EXPECT_NEAR(qbar(a, j), fd, 1e-6 * std::max(1.0, std::abs(fd)));
      ++checked;
    }
  }
  std::vector<std::pair<Mlp LdiModel::*, MlpGrads LdiGrads::*>> nets{
      {&LdiModel::feature_extractor, &LdiGrads::feature_extractor},
      {&LdiModel::relative_encoder, &LdiGrads::relative_encoder},
      {&LdiModel::weight_head, &LdiGrads::weight_head},
      {&LdiModel::distance_head, &LdiGrads::distance_head}};
  for (const auto& [net, grad] : nets) {
    const Mlp& mlp = model.*net;
    for (int l = 0; l < mlp.num_layers(); ++l) {
      for (int i = 0; i < mlp.weight(l).size(); i += 3) {
        LdiModel p = model, m = model;
        (p.*net).mutable_weight(l).data()[i] += h;
        (m.*net).mutable_weight(l).data()[i] -= h;
        bool s1 = false, s2 = false;
        const double fd = (objective(p, q, &s1) - objective(m, q, &s2)) / (2 * h);
        if (!s1 || !s2) continue;
        EXPECT_NEAR((grads.*grad).weights[l].data()[i], fd,
                    1e-6 * std::max(1.0, std::abs(fd)));
        ++checked;
      }
      for (int i = 0; i < mlp.bias(l).size(); ++i) {
        LdiModel p = model, m = model;
        (p.*net).mutable_bias(l)[i] += h;
        (m.*net).mutable_bias(l)[i] -= h;
        bool s1 = false, s2 = false;
        const double fd = (objective(p, q, &s1) - objective(m, q, &s2)) / (2 * h);
        if (!s1 || !s2) continue;
        EXPECT_NEAR((grads.*grad).biases[l][i], fd,
                    1e-6 * std::max(1.0, std::abs(fd)));
        ++checked;
      }
    }
  }
  EXPECT_GT(checked, 200);
}

TEST(BuildTrainingSamples, ZeroNoiseQueriesAreSparsePoints) {
  std::mt19937_64 rng(4);
  const Patch sparse = random_patch(20, rng);
  Patch dense;
  dense.frame = sparse.frame;
  for (int i = 0; i < 100; ++i) dense.points.push_back(testing::random_vec(rng));
  const auto samples = build_training_samples(sparse, dense, 3, 0.0, 9);
  ASSERT_EQ(samples.size(), 60u);
  const SpatialIndex di{PointCloud(dense.points)};
  for (std::size_t i = 0; i < samples.size(); ++i) {
    EXPECT_EQ(samples[i].query, sparse.points[i / 3]);
    EXPECT_EQ(samples[i].gt_distance, nearest_point(di, samples[i].query).distance);
  }
}

TEST(BuildTrainingSamples, DenseSupersetGivesZeroTargets) {
  std::mt19937_64 rng(5);
  const Patch sparse = random_patch(20, rng);
  Patch dense = sparse;
  for (int i = 0; i < 50; ++i) dense.points.push_back(testing::random_vec(rng));
  for (const auto& s : build_training_samples(sparse, dense, 2, 0.0, 1, 40)) {
    EXPECT_EQ(s.gt_distance, 0.0);
    EXPECT_EQ(s.patch->size(), 40u);
  }
}

TEST(BuildTrainingSamples, OffsetSpreadMatchesSigma) {
  std::mt19937_64 rng(6);
  const Patch sparse = random_patch(64, rng);
  const double sigma = 0.05;
  const auto samples = build_training_samples(sparse, sparse, 240, sigma, 3);
  ASSERT_EQ(samples.size(), 64u * 240u);
  double ss = 0.0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    ss += (samples[i].query - sparse.points[i / 240]).squaredNorm();
  }
  const double std_est = std::sqrt(ss / (3.0 * samples.size()));
  EXPECT_NEAR(std_est, sigma, 0.1 * sigma);
  EXPECT_THROW(build_training_samples(Patch{}, sparse, 1, 0.1, 1), DataError);
}

TEST(LdiTrainStep, ExactModelHasZeroLossAndNoUpdate) {
  std::mt19937_64 rng(7);
  LdiModel model = LdiModel::create(small_arch(), 3);
  const auto patch = std::make_shared<const Patch>(random_patch(32, rng));
  std::vector<LdiSample> batch;
  for (int i = 0; i < 10; ++i) {
    const Vec3 q = testing::random_vec(rng, 0.5);
    batch.push_back({q, patch, ldi_forward(model, q, *patch).distance});
  }
  const LdiModel before = model;
  Adam adam;
  EXPECT_EQ(ldi_train_step(model, batch, adam), 0.0);
  EXPECT_EQ(model, before);
}

TEST(LdiTrainStep, ZeroModelLossIsTarget) {
  std::mt19937_64 rng(8);
  LdiModel model = LdiModel::create(small_arch(), 3);
  for (int l = 0; l < model.distance_head.num_layers(); ++l) {
    model.distance_head.mutable_weight(l).setZero();
  }
  const auto patch = std::make_shared<const Patch>(random_patch(32, rng));
  std::vector<LdiSample> batch;
  for (int i = 0; i < 5; ++i) batch.push_back({testing::random_vec(rng, 0.5), patch, 0.3});
  Adam adam;
  EXPECT_DOUBLE_EQ(ldi_train_step(model, batch, adam), 0.3);
  EXPECT_THROW(ldi_train_step(model, {}, adam), DataError);
}

TEST(LdiTraining, ShortRunReducesError) {
  std::mt19937_64 rng(9);
  SyntheticPatchOptions opt;
  opt.patch_size = 16;
  opt.dense_ratio = 8;
  std::vector<LdiSample> samples;
  for (int p = 0; p < 20; ++p) {
    const auto pair = synthetic_patch_pair(opt, rng);
    auto s = build_training_samples(pair.sparse, pair.dense, 4, 0.1, rng(), 32);
    samples.insert(samples.end(), s.begin(), s.end());
  }
  LdiModel model = LdiModel::create(small_arch(), 11);
  const double before = ldi_mae(model, samples);
  LdiTrainOptions to;
  to.steps = 300;
  to.queries_per_patch = 32;
  to.learning_rate = 3e-3;
  train_ldi(model, samples, to);
  EXPECT_LT(ldi_mae(model, samples), 0.5 * before);
}

TEST(SyntheticPatches, DenseCoversSparseInSharedFrame) {
  std::mt19937_64 rng(10);
  SyntheticPatchOptions opt;
  opt.patch_size = 32;
  for (int t = 0; t < 15; ++t) {
    const auto pair = synthetic_patch_pair(opt, rng);
    ASSERT_EQ(pair.sparse.size(), 32u);
    EXPECT_EQ(pair.sparse.frame, pair.dense.frame);
    const SpatialIndex dense{PointCloud(pair.dense.points)};
    double worst = 0.0;
    for (const auto& p : pair.sparse.points) {
      EXPECT_LE(p.norm(), 1.0 + 1e-12);
      worst = std::max(worst, nearest_point(dense, p).distance);
    }
    // Dense sampling is 16x: every sparse point has a close dense neighbor.
    EXPECT_LT(worst, 0.3);
  }
}

TEST(LdiInfer, TranslationInvariantScaleEquivariant) {
  std::mt19937_64 rng(12);
  const LdiModel model = LdiModel::create(small_arch(), 5);
  const auto cloud = testing::random_cloud(100, rng);
  const SpatialIndex index(cloud);
  for (int t = 0; t < 20; ++t) {
    const Vec3 q = testing::random_vec(rng, 0.8);
    const double d = ldi_infer(model, q, index);
    EXPECT_GE(d, 0.0);

    const Vec3 shift(3.25, -1.5, 0.75);
    const SpatialIndex moved(unapply(Normalization{shift, 1.0}, cloud));
    EXPECT_NEAR(ldi_infer(model, q + shift, moved), d, 1e-9 * std::max(1.0, d));

    // Powers of two scale without rounding.
    const SpatialIndex scaled(unapply(Normalization{Vec3::Zero(), 4.0}, cloud));
    EXPECT_EQ(ldi_infer(model, 4.0 * q, scaled), 4.0 * d);
    const double s = 2.7;
    const SpatialIndex scaled2(unapply(Normalization{Vec3::Zero(), s}, cloud));
    EXPECT_NEAR(ldi_infer(model, s * q, scaled2), s * d, 1e-9 * std::max(1.0, d));
  }
}

TEST(LdiInfer, GradientMatchesFiniteDifference) {
  std::mt19937_64 rng(13);
  const LdiModel model = LdiModel::create(small_arch(), 6);
  const auto cloud = testing::random_cloud(100, rng);
  const SpatialIndex index(cloud);
  int checked = 0;
  for (int t = 0; t < 20; ++t) {
    const Vec3 q = testing::random_vec(rng, 0.8);
    const auto r = ldi_infer_with_gradient(model, q, index);
    EXPECT_DOUBLE_EQ(r.distance, ldi_infer(model, q, index));
    const Patch patch = ldi_patch(model, index, q);
    // Differentiate with the patch held fixed.
    Eigen::Matrix3Xd x(3, 1);
    x.col(0) = patch.frame.to_local(q);
    const LdiBatch base(model, patch, x);
    for (int a = 0; a < 3; ++a) {
      constexpr double h = 1e-6;
      Eigen::Matrix3Xd xp = x, xm = x;
      xp(a, 0) += h / patch.frame.scale;
      xm(a, 0) -= h / patch.frame.scale;
      const LdiBatch bp(model, patch, xp), bm(model, patch, xm);
      if (!bp.same_branch(base) || !bm.same_branch(base)) continue;
      const double fd = (bp.distances()[0] - bm.distances()[0]) *
                        patch.frame.scale / (2 * h);
      EXPECT_NEAR(r.gradient[a], fd, 1e-6 * std::max(1.0, std::abs(fd)));
      ++checked;
    }
  }
  EXPECT_GT(checked, 30);
}

TEST(LdiCheckpoint, RoundTripBitExact) {
  const LdiModel model = LdiModel::create(small_arch(), 21);
  std::stringstream ss;
  write_ldi(ss, model);
  const LdiModel back = read_ldi(ss);
  EXPECT_EQ(back, model);
  std::stringstream bad("UDFUPLDI garbage");
  EXPECT_THROW(read_ldi(bad), DataError);
}

TEST(LdiArchitecture, Validation) {
  LdiArchitecture a = small_arch();
  a.k_neighbors = 32;
  EXPECT_THROW(a.validate(), UsageError);
  a = small_arch();
  a.interp_ratio = 0;
  EXPECT_THROW(LdiModel::create(a, 1), UsageError);
}

}  // namespace
}  // namespace udfup
