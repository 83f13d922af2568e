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

#include "udfup/upsampler.hpp"

#include <cmath>
#include <numbers>
#include <ostream>
#include <random>

#include "udfup/error.hpp"

namespace udfup {
namespace {

Vec3 random_direction(std::mt19937_64& rng) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (;;) {
    const Vec3 v(gauss(rng), gauss(rng), gauss(rng));
    const double n = v.norm();
    if (n > 1e-12) return v / n;
  }
}

Vec3 draw_offset(std::mt19937_64& rng, double radius, OffsetLaw law) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  if (law == OffsetLaw::kBox) {
    const double x = 2.0 * unit(rng) - 1.0;
    const double y = 2.0 * unit(rng) - 1.0;
    const double z = 2.0 * unit(rng) - 1.0;
    return radius * Vec3(x, y, z);
  }
  const Vec3 dir = random_direction(rng);
  return dir * (unit(rng) * radius);
}

std::vector<double> nearest_other(const SpatialIndex& index) {
  const PointCloud& cloud = index.cloud();
  std::vector<double> out(cloud.size());
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    out[i] = index.knn(cloud[i], 2)[1].distance;
  }
  return out;
}

}  // namespace

std::size_t UpsampleRequest::output_count(std::size_t input_count) const {
  if (target_count > 0) return target_count;
  return static_cast<std::size_t>(
      std::llround(scale * static_cast<double>(input_count)));
}

void UpsampleRequest::validate() const {
  if (target_count == 0 && !(scale > 0.0 && std::isfinite(scale))) {
    throw UsageError("upsample: scale must be positive");
  }
  if (!(oversample_ratio >= 1.0) || !std::isfinite(oversample_ratio)) {
    throw UsageError("upsample: oversample ratio must be at least 1");
  }
  if (max_retries < 0 || pull_iterations < 1) {
    throw UsageError("upsample: bad retry or pull count");
  }
}

QueryBatch generate_inference_queries(const SpatialIndex& index, std::size_t count,
                                      std::uint64_t rng_seed, OffsetLaw law) {
  const PointCloud& cloud = index.cloud();
  if (cloud.size() < 2) {
    throw DataError("inference queries need at least two points");
  }
  const auto radius = nearest_other(index);
  const std::size_t used = std::min(count, cloud.size());
  for (std::size_t i = 0; i < used; ++i) {
    if (!(radius[i] > 0.0)) {
      throw DataError("inference queries: point " + std::to_string(i) +
                      " coincides with another point");
    }
  }
  std::mt19937_64 rng(rng_seed);
  QueryBatch out;
  out.queries.reserve(count);
  out.sources.reserve(count);
  out.origins.reserve(count);
  for (std::size_t j = 0; j < count; ++j) {
    const std::size_t s = j % cloud.size();
    out.push_back(cloud[s] + draw_offset(rng, radius[s], law), QuerySource::kNearSurface,
                  static_cast<std::int64_t>(s));
  }
  return out;
}

Projection project_batch(const DistanceField& field, const QueryBatch& batch,
                         int iterations, double gradient_epsilon) {
  if (iterations < 1) throw UsageError("project_batch: iterations must be >= 1");
  constexpr Eigen::Index kChunk = 4096;
  Projection out;
  std::vector<Vec3> pts;
  pts.reserve(batch.size());
  const auto total = static_cast<Eigen::Index>(batch.size());
  for (Eigen::Index lo = 0; lo < total; lo += kChunk) {
    const Eigen::Index n = std::min(kChunk, total - lo);
    Eigen::Matrix3Xd q(3, n);
    for (Eigen::Index j = 0; j < n; ++j) {
      q.col(j) = batch.queries[static_cast<std::size_t>(lo + j)];
    }
    std::vector<Eigen::Index> alive(static_cast<std::size_t>(n));
    for (Eigen::Index j = 0; j < n; ++j) alive[static_cast<std::size_t>(j)] = j;
    for (int it = 0; it < iterations; ++it) {
      const PullBatch pulled = pull_batch(field, q, gradient_epsilon);
      std::vector<Eigen::Index> next;
      next.reserve(pulled.kept.size());
      for (const auto j : pulled.kept) next.push_back(alive[static_cast<std::size_t>(j)]);
      alive = std::move(next);
      q = pulled.projected;
    }
    out.dropped += static_cast<std::size_t>(n) - alive.size();
    for (std::size_t i = 0; i < alive.size(); ++i) {
      pts.push_back(q.col(static_cast<Eigen::Index>(i)));
      out.kept.push_back(static_cast<std::size_t>(lo + alive[i]));
    }
  }
  if (pts.empty()) throw DataError("project_batch: every query has a degenerate gradient");
  out.points = PointCloud(std::move(pts));
  return out;
}

UpsampleResult upsample(const PointCloud& cloud, const DistanceField& field,
                        const Normalization& frame, const UpsampleRequest& request,
                        std::ostream* log) {
  request.validate();
  const std::size_t n = cloud.size();
  const std::size_t m = request.output_count(n);
  if (m == 0) throw UsageError("upsample: requested zero points");
  if (m < n && log) {
    *log << "warning: requested " << m << " points from " << n
         << " inputs; this downsamples\n";
  }
  const SpatialIndex index(apply(frame, cloud));
  const auto total = static_cast<std::size_t>(
      std::ceil(request.oversample_ratio * static_cast<double>(m)));
  QueryBatch queries = generate_inference_queries(index, total, request.seed, request.offsets);
  Projection proj = project_batch(field, queries, request.pull_iterations);

  UpsampleResult result;
  result.generated = total;
  std::vector<Vec3> pts(proj.points.begin(), proj.points.end());
  if (proj.dropped > 0 && request.max_retries > 0) {
    const auto radius = nearest_other(index);
    std::vector<bool> ok(total, false);
    for (auto k : proj.kept) ok[k] = true;
    std::vector<std::size_t> pending;
    for (std::size_t j = 0; j < total; ++j) {
      if (!ok[j]) pending.push_back(j);
    }
    std::mt19937_64 rng(request.seed ^ 0xa5a5a5a5a5a5a5a5ULL);
    for (int attempt = 0; attempt < request.max_retries && !pending.empty(); ++attempt) {
      QueryBatch retry;
      for (const auto j : pending) {
        const auto s = static_cast<std::size_t>(queries.origins[j]);
        retry.push_back(index.cloud()[s] + draw_offset(rng, radius[s], request.offsets),
                        QuerySource::kNearSurface, queries.origins[j]);
      }
      result.resampled += pending.size();
      std::vector<std::size_t> still;
      try {
        const Projection again = project_batch(field, retry, request.pull_iterations);
        std::vector<bool> got(retry.size(), false);
        for (std::size_t i = 0; i < again.kept.size(); ++i) {
          got[again.kept[i]] = true;
          pts.push_back(again.points[i]);
        }
        for (std::size_t i = 0; i < pending.size(); ++i) {
          if (!got[i]) still.push_back(pending[i]);
        }
      } catch (const DataError&) {
        still = pending;
      }
      pending = std::move(still);
    }
    result.dropped = pending.size();
  } else {
    result.dropped = proj.dropped;
  }
  if (pts.size() < m) {
    throw DataError("upsample: only " + std::to_string(pts.size()) +
                    " projected points for " + std::to_string(m) + " requested");
  }
  if (request.fps_seed_index >= pts.size()) {
    throw UsageError("upsample: FPS seed index out of range");
  }
  const PointCloud projected(std::move(pts));
  result.points = unapply(frame, fps_downsample(projected, m, request.fps_seed_index));
  result.projected = unapply(frame, projected);
  return result;
}

UpsampleResult upsample(const PointCloud& cloud, const FieldModel& model,
                        const UpsampleRequest& request, std::ostream* log) {
  if (!model.trained) throw UsageError("upsample: field has not been fitted");
  return upsample(cloud, model, model.normalization, request, log);
}

}  // namespace udfup
