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

#pragma once

#include <cstdint>
#include <iosfwd>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "udfup/geometry.hpp"
#include "udfup/metrics.hpp"
#include "udfup/mlp.hpp"

namespace udfup {

// Widths of the four sub-networks. Patch features and relative features share
// `feature_dim` so they can be blended per neighbor.
struct LdiArchitecture {
  int feature_dim = 64;
  std::vector<int> extractor_hidden{32, 32};  // densely connected block
  std::vector<int> encoder_hidden{32};
  std::vector<int> weight_hidden{32};
  std::vector<int> distance_hidden{64, 32};
  int k_neighbors = 16;
  int patch_size = 256;
  // Interpolated patch size = patch_size * interp_ratio.
  int interp_ratio = 2;

  void validate() const;
};

// Local distance indicator: predicts the unsigned distance from a query to the
// surface underlying a normalized patch.
struct LdiModel {
  Mlp feature_extractor;  // patch point -> point feature
  Mlp relative_encoder;   // neighbor minus query -> relative feature
  Mlp weight_head;        // [relative | its max over neighbors] -> weight logit
  Mlp distance_head;      // [blended | pooled patch feature | query] -> pre-distance
  int k_neighbors = 16;
  int patch_size = 256;
  int interp_ratio = 2;

  static LdiModel create(const LdiArchitecture& arch, std::uint64_t seed);

  int feature_dim() const { return feature_extractor.output_dim(); }
  std::size_t interpolated_size() const {
    return static_cast<std::size_t>(patch_size) *
           static_cast<std::size_t>(interp_ratio);
  }

  friend bool operator==(const LdiModel&, const LdiModel&) = default;
};

struct LdiGrads {
  MlpGrads feature_extractor;
  MlpGrads relative_encoder;
  MlpGrads weight_head;
  MlpGrads distance_head;

  static LdiGrads zeros_like(const LdiModel& model);
  std::vector<std::span<const double>> blocks() const;
};

std::vector<std::span<double>> parameter_blocks(LdiModel& model);

// Midpoint interpolation: each point is joined with its 1st, 2nd, ...
// nearest neighbors until target_count points exist. Exact duplicates are
// skipped. The frame and source indices are carried over unchanged.
Patch patch_interpolate(const Patch& sparse_patch, std::size_t target_count);

// sum over the k columns of w * relative + (1 - w) * patch feature.
Eigen::VectorXd blend_features(const Eigen::VectorXd& weights,
                               const Eigen::MatrixXd& relative_features,
                               const Eigen::MatrixXd& patch_features);

// Query-independent half of the forward pass: per-point patch features and
// their global max-pool.
struct LdiPatchFeatures {
  Eigen::MatrixXd features;  // D x n
  Eigen::VectorXd pooled;
  std::vector<Eigen::Index> argmax;
  Tape tape;
};

std::shared_ptr<const LdiPatchFeatures> ldi_patch_features(
    const LdiModel& model, const Patch& patch);

// Forward pass for many queries sharing one patch (queries are columns in the
// patch's local frame). Holds everything needed for the reverse sweep.
class LdiBatch {
 public:
  LdiBatch(const LdiModel& model, const Patch& patch,
           const Eigen::Matrix3Xd& queries);
  // Reuses features computed earlier for the same model and patch.
  LdiBatch(const LdiModel& model, const Patch& patch,
           std::shared_ptr<const LdiPatchFeatures> patch_features,
           const Eigen::Matrix3Xd& queries);

  const Eigen::RowVectorXd& distances() const { return distance_; }
  // k x m attention weights, column j for query j.
  Eigen::MatrixXd weights() const;
  // k nearest patch indices of query j, ascending by distance.
  std::span<const std::size_t> neighbors(int j) const;
  // D x m blended query features.
  const Eigen::MatrixXd& query_features() const { return fq_; }

  // Reverse sweep for cotangent dbar on the distances. Returns the gradient
  // with respect to each query; accumulates parameter gradients when grads
  // is non-null.
  Eigen::Matrix3Xd backward(const Eigen::RowVectorXd& dbar,
                            LdiGrads* grads) const;

  // True when both passes took the same piecewise branch everywhere: same
  // neighbor sets, pooling winners, ReLU patterns and head signs. Finite
  // differences are only meaningful between such passes.
  bool same_branch(const LdiBatch& other) const;

 private:
  const LdiModel* model_;
  int k_ = 0;
  int m_ = 0;
  std::vector<std::size_t> nbr_;  // m * k
  std::shared_ptr<const LdiPatchFeatures> pf_;
  Tape tape_r_, tape_w_, tape_h_;
  Eigen::MatrixXd fr_;      // D x (k m) relative features
  std::vector<Eigen::Index> argmax_r_;  // D per query
  Eigen::RowVectorXd w_;    // k m
  Eigen::MatrixXd fq_;      // D x m
  Eigen::RowVectorXd pre_;  // signed head output
  Eigen::RowVectorXd distance_;
};

struct LdiForward {
  double distance = 0.0;
  std::vector<double> weights;         // one per neighbor, in [0, 1]
  std::vector<std::size_t> neighbors;  // patch indices of those neighbors
  Eigen::VectorXd query_feature;       // blended feature
};

LdiForward ldi_forward(const LdiModel& model, const Vec3& query,
                       const Patch& patch);

struct LdiSample {
  Vec3 query;                          // local frame of `patch`
  std::shared_ptr<const Patch> patch;  // sparse patch, interpolated
  double gt_distance = 0.0;
};

// Queries are the sparse points plus N(0, sigma_scale^2 I) offsets (local
// units); targets are nearest-dense-point distances. Both patches must be
// expressed in the same local frame. When interp_target exceeds the sparse
// size the attached patch is the interpolated one.
std::vector<LdiSample> build_training_samples(const Patch& sparse_patch,
                                              const Patch& dense_patch,
                                              int queries_per_point,
                                              double sigma_scale,
                                              std::uint64_t rng_seed,
                                              std::size_t interp_target = 0);

// One optimizer step on the mean absolute error. Returns the batch loss
// before the update. Throws DivergenceError on a non-finite loss.
double ldi_train_step(LdiModel& model, std::span<const LdiSample> batch,
                      Adam& optimizer);

// Mean absolute error without updating.
double ldi_mae(const LdiModel& model, std::span<const LdiSample> samples);

// Patch around a world query from the sparse cloud, prepared the same way as
// during training.
Patch ldi_patch(const LdiModel& model, const SpatialIndex& sparse_cloud_index,
                const Vec3& world_query, std::size_t patch_size = 0);

// World-units distance predicted for the world query. patch_size 0 uses the
// model's training patch size.
double ldi_infer(const LdiModel& model, const Vec3& world_query,
                 const SpatialIndex& sparse_cloud_index,
                 std::size_t patch_size = 0);

struct LdiInference {
  double distance = 0.0;  // world units
  Vec3 gradient = Vec3::Zero();
};

// Distance and its gradient with respect to the world query (patch membership
// held fixed).
LdiInference ldi_infer_with_gradient(const LdiModel& model,
                                     const Vec3& world_query,
                                     const SpatialIndex& sparse_cloud_index);

// Frozen-indicator evaluation against one cloud. A query is answered with the
// interpolated patch around its nearest cloud point; patches and their
// features are built on first use and kept. Not safe for concurrent use.
class LdiPatchCache {
 public:
  LdiPatchCache(const LdiModel& model,
                std::shared_ptr<const SpatialIndex> cloud_index,
                std::size_t patch_size = 0);

  // World-unit distances and their gradients with respect to the world
  // queries (columns). Either output may be null.
  void infer(const Eigen::Matrix3Xd& world_queries, Eigen::RowVectorXd* distances,
             Eigen::Matrix3Xd* gradients) const;

  std::size_t cached_patches() const;

 private:
  struct Entry {
    Patch patch;
    std::shared_ptr<const LdiPatchFeatures> features;
  };
  const Entry& entry(std::size_t index) const;

  const LdiModel* model_;
  std::shared_ptr<const SpatialIndex> index_;
  std::size_t patch_size_;
  mutable std::vector<std::unique_ptr<Entry>> entries_;
};

// Synthetic sparse/dense patch pairs drawn from analytic surfaces.
struct SyntheticPatchOptions {
  std::vector<OracleSurface::Kind> kinds{OracleSurface::Kind::kPlane,
                                         OracleSurface::Kind::kSphere,
                                         OracleSurface::Kind::kTorus};
  std::size_t patch_size = 256;
  // Dense samples per sparse sample.
  int dense_ratio = 16;
  // Std of Gaussian noise on sparse points, relative to the mean sparse
  // spacing.
  double noise = 0.0;
};

struct PatchPair {
  Patch sparse;
  Patch dense;  // in the sparse patch's frame
};

PatchPair synthetic_patch_pair(const SyntheticPatchOptions& options,
                               std::mt19937_64& rng);

// Pairs a sparse patch with a dense one given in world coordinates: the dense
// points within the sparse patch's extent are mapped into its frame.
PatchPair pair_patches(std::vector<Vec3> sparse_world,
                       const std::vector<Vec3>& dense_world);

struct LdiTrainOptions {
  int steps = 2000;
  int patches_per_step = 4;
  int queries_per_patch = 64;
  double learning_rate = 1e-3;
  // Cosine decay from learning_rate to learning_rate * final_lr_fraction.
  double final_lr_fraction = 1.0;
  std::uint64_t seed = 1;
  int log_every = 0;  // 0 disables progress lines
};

struct LdiTrainReport {
  std::vector<double> losses;
  double final_train_mae = 0.0;
};

LdiTrainReport train_ldi(LdiModel& model, std::span<const LdiSample> samples,
                         const LdiTrainOptions& options,
                         std::ostream* log = nullptr);

// Checkpoint: versioned header, patch metadata, then the four networks.
void write_ldi(std::ostream& out, const LdiModel& model);
LdiModel read_ldi(std::istream& in);

}  // namespace udfup
