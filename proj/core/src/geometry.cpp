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

#include "udfup/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <queue>
#include <string>

#include "udfup/error.hpp"

namespace udfup {
namespace {

constexpr std::uint32_t kLeafSize = 8;

bool is_finite(const Vec3& p) { return p.allFinite(); }

double box_distance_sq(const Vec3& q, const Vec3& lo, const Vec3& hi) {
  double d2 = 0.0;
  for (int a = 0; a < 3; ++a) {
    double d = 0.0;
    if (q[a] < lo[a]) {
      d = lo[a] - q[a];
    } else if (q[a] > hi[a]) {
      d = q[a] - hi[a];
    }
    d2 += d * d;
  }
  return d2;
}

// Lexicographic (squared distance, index) so that equal distances resolve to
// the lower index.
struct Candidate {
  double d2;
  std::size_t index;
  bool operator<(const Candidate& o) const {
    return d2 < o.d2 || (d2 == o.d2 && index < o.index);
  }
};

}  // namespace

PointCloud::PointCloud(std::vector<Vec3> points) : points_(std::move(points)) {
  for (std::size_t i = 0; i < points_.size(); ++i) {
    if (!is_finite(points_[i])) {
      throw DataError("non-finite coordinate at point " + std::to_string(i));
    }
  }
}

void PointCloud::push_back(const Vec3& p) {
  if (!is_finite(p)) {
    throw DataError("non-finite coordinate at point " +
                    std::to_string(points_.size()));
  }
  points_.push_back(p);
}

SpatialIndex::SpatialIndex(PointCloud cloud)
    : SpatialIndex(std::make_shared<const PointCloud>(std::move(cloud))) {}

SpatialIndex::SpatialIndex(std::shared_ptr<const PointCloud> cloud)
    : cloud_(std::move(cloud)) {
  if (!cloud_ || cloud_->empty()) {
    throw DataError("cannot build a spatial index over an empty cloud");
  }
  if (cloud_->size() >= std::numeric_limits<std::uint32_t>::max()) {
    throw DataError("cloud too large for spatial index");
  }
  order_.resize(cloud_->size());
  for (std::uint32_t i = 0; i < order_.size(); ++i) order_[i] = i;
  nodes_.reserve(2 * cloud_->size() / kLeafSize + 1);
  build(0, static_cast<std::uint32_t>(order_.size()));
}

std::uint32_t SpatialIndex::build(std::uint32_t begin, std::uint32_t end) {
  const auto id = static_cast<std::uint32_t>(nodes_.size());
  nodes_.emplace_back();
  const auto& pts = cloud_->points();

  Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity());
  Vec3 hi = -lo;
  for (std::uint32_t i = begin; i < end; ++i) {
    lo = lo.cwiseMin(pts[order_[i]]);
    hi = hi.cwiseMax(pts[order_[i]]);
  }
  nodes_[id].begin = begin;
  nodes_[id].end = end;
  nodes_[id].lo = lo;
  nodes_[id].hi = hi;

  if (end - begin <= kLeafSize) return id;

  int axis = 0;
  (hi - lo).maxCoeff(&axis);
  if (hi[axis] == lo[axis]) return id;  // all coincident

  const std::uint32_t mid = begin + (end - begin) / 2;
  std::nth_element(order_.begin() + begin, order_.begin() + mid,
                   order_.begin() + end,
                   [&](std::uint32_t a, std::uint32_t b) {
                     return pts[a][axis] < pts[b][axis];
                   });
  nodes_[id].axis = axis;
  nodes_[id].split = pts[order_[mid]][axis];
  const std::uint32_t left = build(begin, mid);
  const std::uint32_t right = build(mid, end);
  nodes_[id].left = left;
  nodes_[id].right = right;
  return id;
}

std::vector<Neighbor> SpatialIndex::knn(const Vec3& query,
                                        std::size_t k) const {
  if (k == 0) throw DataError("knn: k must be positive");
  if (k > cloud_->size()) {
    throw DataError("knn: insufficient points (k=" + std::to_string(k) +
                    ", count=" + std::to_string(cloud_->size()) + ")");
  }
  if (!is_finite(query)) throw DataError("knn: non-finite query");

  const auto& pts = cloud_->points();
  std::priority_queue<Candidate> heap;  // max-heap: worst candidate on top

  // Explicit stack of (node, lower bound on squared distance).
  std::vector<std::pair<std::uint32_t, double>> stack;
  stack.reserve(64);
  stack.emplace_back(0, box_distance_sq(query, nodes_[0].lo, nodes_[0].hi));

  while (!stack.empty()) {
    const auto [id, bound] = stack.back();
    stack.pop_back();
    // Strict comparison: a node at exactly the current worst distance may
    // still hold a lower index.
    if (heap.size() == k && bound > heap.top().d2) continue;

    const Node& node = nodes_[id];
    if (node.left == 0) {
      for (std::uint32_t i = node.begin; i < node.end; ++i) {
        const std::size_t idx = order_[i];
        const Candidate c{(pts[idx] - query).squaredNorm(), idx};
        if (heap.size() < k) {
          heap.push(c);
        } else if (c < heap.top()) {
          heap.pop();
          heap.push(c);
        }
      }
      continue;
    }

    const Node& l = nodes_[node.left];
    const Node& r = nodes_[node.right];
    const double dl = box_distance_sq(query, l.lo, l.hi);
    const double dr = box_distance_sq(query, r.lo, r.hi);
    // Push the farther child first so the nearer one is explored next.
    if (dl <= dr) {
      stack.emplace_back(node.right, dr);
      stack.emplace_back(node.left, dl);
    } else {
      stack.emplace_back(node.left, dl);
      stack.emplace_back(node.right, dr);
    }
  }

  std::vector<Neighbor> out(heap.size());
  for (std::size_t i = out.size(); i-- > 0;) {
    out[i] = Neighbor{heap.top().index, std::sqrt(heap.top().d2)};
    heap.pop();
  }
  return out;
}

std::vector<Neighbor> knn_search(const SpatialIndex& index, const Vec3& query,
                                 std::size_t k) {
  return index.knn(query, k);
}

NearestPoint nearest_point(const SpatialIndex& index, const Vec3& query) {
  const Neighbor n = index.knn(query, 1).front();
  return NearestPoint{index.cloud()[n.index], n.index, n.distance};
}

std::vector<std::size_t> fps_indices(std::span<const Vec3> points,
                                     std::size_t m, std::size_t seed_index) {
  if (m == 0) throw DataError("fps: m must be positive");
  if (m > points.size()) {
    throw DataError("fps: requested " + std::to_string(m) + " of " +
                    std::to_string(points.size()) + " points");
  }
  if (seed_index >= points.size()) throw DataError("fps: seed out of range");

  std::vector<std::size_t> selected;
  selected.reserve(m);
  std::vector<double> min_d2(points.size(),
                             std::numeric_limits<double>::infinity());
  std::size_t current = seed_index;
  for (;;) {
    selected.push_back(current);
    if (selected.size() == m) break;
    min_d2[current] = -1.0;  // never re-selected
    const Vec3 c = points[current];
    std::size_t best = points.size();
    double best_d2 = -1.0;
    for (std::size_t i = 0; i < points.size(); ++i) {
      double& d = min_d2[i];
      if (d < 0.0) continue;
      d = std::min(d, (points[i] - c).squaredNorm());
      if (d > best_d2) {
        best_d2 = d;
        best = i;
      }
    }
    current = best;
  }
  return selected;
}

PointCloud fps_downsample(const PointCloud& cloud, std::size_t m,
                          std::size_t seed_index) {
  const auto idx = fps_indices(cloud.points(), m, seed_index);
  std::vector<Vec3> out;
  out.reserve(idx.size());
  for (auto i : idx) out.push_back(cloud[i]);
  return PointCloud(std::move(out));
}

Normalization fit_normalization(std::span<const Vec3> points) {
  if (points.empty()) throw DataError("cannot normalize an empty point set");
  Vec3 c = Vec3::Zero();
  for (const auto& p : points) c += p;
  c /= static_cast<double>(points.size());
  double r2 = 0.0;
  for (const auto& p : points) r2 = std::max(r2, (p - c).squaredNorm());
  const double r = std::sqrt(r2);
  return Normalization{c, r > 0.0 ? r : 1.0};
}

PointCloud apply(const Normalization& t, const PointCloud& cloud) {
  std::vector<Vec3> out;
  out.reserve(cloud.size());
  for (const auto& p : cloud) out.push_back(t.to_local(p));
  return PointCloud(std::move(out));
}

PointCloud unapply(const Normalization& t, const PointCloud& cloud) {
  std::vector<Vec3> out;
  out.reserve(cloud.size());
  for (const auto& p : cloud) out.push_back(t.to_world(p));
  return PointCloud(std::move(out));
}

NormalizedCloud normalize_unit(const PointCloud& cloud) {
  const Normalization t = fit_normalization(cloud.points());
  return NormalizedCloud{apply(t, cloud), t};
}

Patch make_patch(std::vector<Vec3> world_points,
                 std::vector<std::size_t> source_indices) {
  Patch patch;
  patch.frame = fit_normalization(world_points);
  for (auto& p : world_points) p = patch.frame.to_local(p);
  patch.points = std::move(world_points);
  patch.source_indices = std::move(source_indices);
  return patch;
}

Patch extract_patch(const SpatialIndex& index, const Vec3& center_point,
                    std::size_t patch_size) {
  const auto nn = index.knn(center_point, patch_size);
  std::vector<Vec3> pts;
  std::vector<std::size_t> src;
  pts.reserve(nn.size());
  src.reserve(nn.size());
  for (const auto& n : nn) {
    pts.push_back(index.cloud()[n.index]);
    src.push_back(n.index);
  }
  return make_patch(std::move(pts), std::move(src));
}

Aabb bounding_box(std::span<const Vec3> points) {
  if (points.empty()) throw DataError("bounding box of an empty point set");
  Aabb box{points.front(), points.front()};
  for (const auto& p : points) {
    box.lo = box.lo.cwiseMin(p);
    box.hi = box.hi.cwiseMax(p);
  }
  return box;
}

}  // namespace udfup
