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
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "udfup/error.hpp"
#include "udfup/geometry.hpp"
#include "udfup/ldi.hpp"
#include "udfup/mlp.hpp"

namespace udfup {

// Unsigned distance field evaluated in its own coordinate frame.
class DistanceField {
 public:
  virtual ~DistanceField() = default;
  // Values (1 x m) and gradients (3 x m) for query columns. Either output may
  // be null.
  virtual void evaluate(const Eigen::Matrix3Xd& queries, Eigen::RowVectorXd* values,
                        Eigen::Matrix3Xd* gradients) const = 0;

  double value(const Vec3& q) const;
  Vec3 gradient(const Vec3& q) const;
};

// |‖q - c‖ - r|, differentiable away from the center and the surface.
class SphereUdf final : public DistanceField {
 public:
  explicit SphereUdf(double radius = 1.0, Vec3 center = Vec3::Zero());
  void evaluate(const Eigen::Matrix3Xd& queries, Eigen::RowVectorXd* values,
                Eigen::Matrix3Xd* gradients) const override;

 private:
  double radius_;
  Vec3 center_;
};

struct FieldArchitecture {
  int width = 128;
  int layers = 8;
  // Additive skip from the output of residual_from to the output of
  // residual_to (hidden layers, 0-based). Disabled when from < 0.
  int residual_from = 1;
  int residual_to = 4;

  MlpSpec spec() const;
};

// Network output y; the field is |y|. Queries are in the normalized frame of
// the cloud the field was fitted to.
class FieldModel final : public DistanceField {
 public:
  FieldModel() = default;
  static FieldModel create(const FieldArchitecture& arch, std::uint64_t seed,
                           Normalization normalization = {});

  void evaluate(const Eigen::Matrix3Xd& queries, Eigen::RowVectorXd* values,
                Eigen::Matrix3Xd* gradients) const override;

  Mlp net;
  bool trained = false;
  // Maps world coordinates of the fitted cloud to the field frame.
  Normalization normalization;

  friend bool operator==(const FieldModel& a, const FieldModel& b) {
    return a.net == b.net && a.trained == b.trained &&
           a.normalization == b.normalization;
  }
};

void write_field(std::ostream& out, const FieldModel& model);
FieldModel read_field(std::istream& in);

struct LossWeights {
  double alpha = 1.0;
  double beta_start = 0.5;
  double beta_end = 0.0;
  double gamma = 0.1;
  int total_steps = 10000;

  double beta(int step) const;
};

enum class QuerySource : std::uint8_t { kNearSurface = 0, kGlobalUniform = 1 };

struct QueryBatch {
  std::vector<Vec3> queries;
  std::vector<QuerySource> sources;
  // Cloud point each query was generated from; -1 for global samples.
  std::vector<std::int64_t> origins;

  std::size_t size() const { return queries.size(); }
  void push_back(const Vec3& q, QuerySource s, std::int64_t origin);
  Eigen::Matrix3Xd matrix() const;
};

// Gaussian offsets around every cloud point with std sigma_fraction times the
// distance to the point's nn_rank-th neighbor, plus global_count samples
// uniform in the bounding box grown by 10% per side.
QueryBatch sample_training_queries(const SpatialIndex& index, int per_point,
                                   double sigma_fraction, int nn_rank,
                                   std::size_t global_count,
                                   std::uint64_t rng_seed);

struct PullResult {
  Vec3 projected;
  double distance = 0.0;
  Vec3 gradient;
};

inline constexpr double kDefaultGradientEpsilon = 1e-8;

// q' = q - g(q) grad g(q) / |grad g(q)|. Throws DataError("degenerate
// gradient") when the gradient norm is below epsilon.
PullResult pull_query(const DistanceField& field, const Vec3& q,
                      double gradient_epsilon = kDefaultGradientEpsilon);

struct PullBatch {
  Eigen::Matrix3Xd projected;  // only the kept columns
  std::vector<Eigen::Index> kept;
  std::size_t degenerate = 0;
};

PullBatch pull_batch(const DistanceField& field, const Eigen::Matrix3Xd& queries,
                     double gradient_epsilon = kDefaultGradientEpsilon);

struct LossTerms {
  double local = 0.0;
  double nearest_point = 0.0;
  double surface = 0.0;
  double shortest_path = 0.0;
  double total = 0.0;
  std::size_t skipped = 0;
};

// Everything the loss needs that stays fixed while fitting one cloud, all in
// the field frame.
class FieldLossContext {
 public:
  FieldLossContext(const LdiModel& ldi, PointCloud cloud,
                   std::size_t ldi_patch_size = 0);

  const PointCloud& cloud() const { return index_->cloud(); }
  const SpatialIndex& index() const { return *index_; }
  const LdiPatchCache& indicator() const { return cache_; }

 private:
  std::shared_ptr<const SpatialIndex> index_;
  LdiPatchCache cache_;
};

// Mean losses over the query batch (columns) with anchors = nearest cloud
// point of each original query, and the surface term over the cloud points
// in surface_batch. When grads is non-null the parameter gradient of the
// weighted total is accumulated into it.
LossTerms compute_losses(const FieldModel& model, const FieldLossContext& context,
                         const Eigen::Matrix3Xd& queries,
                         const Eigen::Matrix3Xd& anchors,
                         const Eigen::Matrix3Xd& surface_batch,
                         const LossWeights& weights, int step,
                         MlpGrads* grads = nullptr,
                         double gradient_epsilon = kDefaultGradientEpsilon);

struct FieldFitOptions {
  FieldArchitecture architecture;
  LossWeights weights;
  int max_steps = 10000;
  int batch_size = 256;
  int surface_batch = 512;
  int queries_per_point = 240;
  double sigma_fraction = 0.2;
  int nn_rank = 50;
  // Global samples as a fraction of the near-surface count.
  double global_fraction = 0.1;
  double learning_rate = 1e-3;
  // Stop when the moving-average total improves by less than this fraction
  // over early_stop_window steps; 0 disables.
  double early_stop_tolerance = 1e-3;
  int early_stop_window = 500;
  std::size_t ldi_patch_size = 0;
  std::uint64_t seed = 1;
};

struct FieldStepRecord {
  int step = 0;
  LossTerms losses;
  double beta = 0.0;
};

struct FieldFitReport {
  std::vector<FieldStepRecord> steps;
  std::size_t skipped_total = 0;
  bool early_stopped = false;
  std::uint64_t seed = 0;

  // One line per step: step=.. local=.. np=.. surf=.. sp=.. total=.. beta=..
  // skipped=..
  void write(std::ostream& out) const;
};

struct FieldFit {
  FieldModel model;
  FieldFitReport report;
};

// Fits a field to the world-space cloud; the cloud is normalized internally
// and the transform stored with the model. The indicator is only read.
// Throws DivergenceError on a non-finite loss; the exception carries the last
// finite model.
FieldFit fit_field(const PointCloud& cloud, const LdiModel& ldi,
                   const FieldFitOptions& options, std::ostream* log = nullptr,
                   int log_every = 0);

class FieldDivergence : public DivergenceError {
 public:
  FieldDivergence(const std::string& what, FieldModel last_good);
  const FieldModel& last_good() const { return last_good_; }

 private:
  FieldModel last_good_;
};

}  // namespace udfup
