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
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "udfup/geometry.hpp"

namespace udfup {

struct Triangle {
  Vec3 a, b, c;
};

// Closest point on a triangle (Voronoi-region walk; handles degenerate
// triangles by falling back to edges).
Vec3 closest_point_on_triangle(const Vec3& p, const Triangle& t);

struct SurfaceDistance {
  double distance = 0.0;
  Vec3 foot = Vec3::Zero();
  // The query sits on the medial axis; foot is one of several valid choices.
  bool ambiguous = false;
};

// Exact reference surface for evaluation and synthetic data.
class OracleSurface {
 public:
  enum class Kind : std::uint8_t { kSphere, kTorus, kPlane, kMesh };

  static OracleSurface sphere(double radius, const Vec3& center = Vec3::Zero());
  // Torus around the z axis through `center`.
  static OracleSurface torus(double major_radius, double minor_radius,
                             const Vec3& center = Vec3::Zero());
  // Points x with normal . x = offset.
  static OracleSurface plane(const Vec3& normal, double offset);
  static OracleSurface mesh(std::vector<Triangle> triangles);

  Kind kind() const { return kind_; }
  double radius() const { return r1_; }
  double minor_radius() const { return r2_; }
  const Vec3& center() const { return center_; }
  const std::vector<Triangle>& triangles() const { return triangles_; }

  SurfaceDistance udf(const Vec3& q) const;

  // Area-uniform samples. Planes are sampled over the square of half-width
  // `plane_extent` around the point closest to the origin; meshes by
  // triangle area.
  std::vector<Vec3> sample(std::size_t n, std::mt19937_64& rng,
                           double plane_extent = 1.0) const;

  // "sphere:R", "torus:R,r", "plane:nx,ny,nz,d"; mesh surfaces come from
  // files and are handled by the io layer.
  static OracleSurface parse(const std::string& spec);

 private:
  Kind kind_ = Kind::kSphere;
  Vec3 center_ = Vec3::Zero();  // plane: unit normal
  double r1_ = 1.0;             // sphere radius, torus major, plane offset
  double r2_ = 0.0;             // torus minor
  std::vector<Triangle> triangles_;
};

SurfaceDistance oracle_udf(const OracleSurface& surface, const Vec3& q);

// Symmetric mean of squared nearest-neighbor distances:
// 0.5 * (mean_a d(a, B)^2 + mean_b d(b, A)^2).
double chamfer(const PointCloud& a, const PointCloud& b);

// max(max_a d(a, B), max_b d(b, A)), unsquared.
double hausdorff(const PointCloud& a, const PointCloud& b);

// Mean exact unsigned distance from the points to the surface.
double p2f(const PointCloud& a, const OracleSurface& surface);

struct MetricsReport {
  double cd = 0.0;
  double hd = 0.0;
  double p2f_mean = 0.0;
  bool p2f_computed = false;
  std::size_t pred_count = 0;
  std::size_t ref_count = 0;

  // One "key=value" per line.
  std::string to_key_value() const;
  static std::string csv_header();
  std::string to_csv_row() const;
};

MetricsReport evaluate(const PointCloud& pred, const PointCloud& ref,
                       const std::optional<OracleSurface>& surface);

// Nearest-neighbor distance of every point to the rest of its own set.
std::vector<double> nn_distances(const PointCloud& cloud);

// Coefficient of variation (stddev / mean) of nearest-neighbor distances.
double nn_distance_cv(const PointCloud& cloud);

}  // namespace udfup
