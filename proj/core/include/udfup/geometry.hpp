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

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace udfup {

using Vec3 = Eigen::Vector3d;

// Ordered set of finite 3D points.
class PointCloud {
 public:
  PointCloud() = default;
  explicit PointCloud(std::vector<Vec3> points);

  std::size_t size() const { return points_.size(); }
  bool empty() const { return points_.empty(); }

  const Vec3& operator[](std::size_t i) const { return points_[i]; }
  std::span<const Vec3> points() const { return points_; }

  // Appends a point; throws DataError if any coordinate is not finite.
  void push_back(const Vec3& p);
  void reserve(std::size_t n) { points_.reserve(n); }

  auto begin() const { return points_.begin(); }
  auto end() const { return points_.end(); }

  friend bool operator==(const PointCloud& a, const PointCloud& b) {
    return a.points_ == b.points_;
  }

 private:
  std::vector<Vec3> points_;
};

struct Neighbor {
  std::size_t index = 0;
  double distance = 0.0;

  friend bool operator==(const Neighbor&, const Neighbor&) = default;
};

// Immutable kd-tree over a point cloud. The index keeps a shared reference
// to its cloud, so it stays valid independent of the caller's copy. Queries
// are const and safe to issue concurrently.
class SpatialIndex {
 public:
  explicit SpatialIndex(PointCloud cloud);
  explicit SpatialIndex(std::shared_ptr<const PointCloud> cloud);

  const PointCloud& cloud() const { return *cloud_; }
  std::size_t size() const { return cloud_->size(); }

  // The k nearest points ordered by (distance, index).
  std::vector<Neighbor> knn(const Vec3& query, std::size_t k) const;

 private:
  struct Node {
    // Leaf when left == 0 (the root is never a child).
    std::uint32_t begin = 0;
    std::uint32_t end = 0;
    std::uint32_t left = 0;
    std::uint32_t right = 0;
    int axis = 0;
    double split = 0.0;
    Eigen::Vector3d lo;
    Eigen::Vector3d hi;
  };

  std::uint32_t build(std::uint32_t begin, std::uint32_t end);

  std::shared_ptr<const PointCloud> cloud_;
  std::vector<std::uint32_t> order_;
  std::vector<Node> nodes_;
};

// Free-function surface used throughout the pipeline.
std::vector<Neighbor> knn_search(const SpatialIndex& index, const Vec3& query,
                                 std::size_t k);

struct NearestPoint {
  Vec3 point;
  std::size_t index = 0;
  double distance = 0.0;
};

NearestPoint nearest_point(const SpatialIndex& index, const Vec3& query);

// Greedy farthest point sampling. Returns the selected indices in selection
// order; the first is seed_index and ties go to the lowest index.
std::vector<std::size_t> fps_indices(std::span<const Vec3> points,
                                     std::size_t m, std::size_t seed_index = 0);

PointCloud fps_downsample(const PointCloud& cloud, std::size_t m,
                          std::size_t seed_index = 0);

// Similarity transform mapping world coordinates into a unit frame:
// local = (world - center) / scale.
struct Normalization {
  Vec3 center = Vec3::Zero();
  double scale = 1.0;

  Vec3 to_local(const Vec3& world) const { return (world - center) / scale; }
  Vec3 to_world(const Vec3& local) const { return local * scale + center; }

  friend bool operator==(const Normalization&, const Normalization&) = default;
};

// Centroid to the origin, farthest point to norm 1. Coincident points keep
// scale 1.
Normalization fit_normalization(std::span<const Vec3> points);

struct NormalizedCloud {
  PointCloud cloud;
  Normalization transform;
};

NormalizedCloud normalize_unit(const PointCloud& cloud);

PointCloud apply(const Normalization& t, const PointCloud& cloud);
PointCloud unapply(const Normalization& t, const PointCloud& cloud);

// A local neighborhood in a normalized frame together with the transform back
// to world coordinates.
struct Patch {
  std::vector<Vec3> points;
  Normalization frame;
  std::vector<std::size_t> source_indices;

  std::size_t size() const { return points.size(); }
};

// Builds a patch from world-space points, normalizing by their own centroid
// and extent.
Patch make_patch(std::vector<Vec3> world_points,
                 std::vector<std::size_t> source_indices = {});

Patch extract_patch(const SpatialIndex& index, const Vec3& center_point,
                    std::size_t patch_size);

// Bounding box helpers.
struct Aabb {
  Vec3 lo;
  Vec3 hi;
};

Aabb bounding_box(std::span<const Vec3> points);

}  // namespace udfup
