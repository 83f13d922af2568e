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

#include "udfup/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <numeric>
#include <sstream>

#include "udfup/error.hpp"

namespace udfup {
namespace {

Vec3 closest_on_segment(const Vec3& p, const Vec3& a, const Vec3& b) {
  const Vec3 ab = b - a;
  const double len2 = ab.squaredNorm();
  if (len2 == 0.0) return a;
  const double t = std::clamp((p - a).dot(ab) / len2, 0.0, 1.0);
  return a + t * ab;
}

std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double parse_number(const std::string& s, const std::string& spec) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != s.size() || s.empty() || !std::isfinite(v)) {
    throw UsageError("bad number '" + s + "' in surface spec '" + spec + "'");
  }
  return v;
}

std::vector<double> parse_numbers(const std::string& body,
                                   const std::string& spec) {
  std::vector<double> out;
  std::stringstream ss(body);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_number(item, spec));
  return out;
}

}  // namespace

Vec3 closest_point_on_triangle(const Vec3& p, const Triangle& t) {
  const Vec3& a = t.a;
  const Vec3& b = t.b;
  const Vec3& c = t.c;
  const Vec3 ab = b - a, ac = c - a;
  if (ab.cross(ac).squaredNorm() == 0.0) {
    // Degenerate: closest point over the three edges.
    const Vec3 cands[3] = {closest_on_segment(p, a, b),
                           closest_on_segment(p, b, c),
                           closest_on_segment(p, c, a)};
    const Vec3* best = &cands[0];
    for (const auto& q : cands) {
      if ((q - p).squaredNorm() < (*best - p).squaredNorm()) best = &q;
    }
    return *best;
  }
  const Vec3 ap = p - a;
  const double d1 = ab.dot(ap), d2 = ac.dot(ap);
  if (d1 <= 0.0 && d2 <= 0.0) return a;

  const Vec3 bp = p - b;
  const double d3 = ab.dot(bp), d4 = ac.dot(bp);
  if (d3 >= 0.0 && d4 <= d3) return b;

  const double vc = d1 * d4 - d3 * d2;
  if (vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0) return a + d1 / (d1 - d3) * ab;

  const Vec3 cp = p - c;
  const double d5 = ab.dot(cp), d6 = ac.dot(cp);
  if (d6 >= 0.0 && d5 <= d6) return c;

  const double vb = d5 * d2 - d1 * d6;
  if (vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0) return a + d2 / (d2 - d6) * ac;

  const double va = d3 * d6 - d5 * d4;
  if (va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0) {
    return b + (d4 - d3) / ((d4 - d3) + (d5 - d6)) * (c - b);
  }
  const double denom = 1.0 / (va + vb + vc);
  return a + ab * (vb * denom) + ac * (vc * denom);
}

OracleSurface OracleSurface::sphere(double radius, const Vec3& center) {
  if (!(radius > 0.0) || !center.allFinite()) {
    throw UsageError("sphere radius must be positive");
  }
  OracleSurface s;
  s.kind_ = Kind::kSphere;
  s.r1_ = radius;
  s.center_ = center;
  return s;
}

OracleSurface OracleSurface::torus(double major_radius, double minor_radius,
                                   const Vec3& center) {
  if (!(minor_radius > 0.0) || !(major_radius > minor_radius)) {
    throw UsageError("torus requires major > minor > 0");
  }
  OracleSurface s;
  s.kind_ = Kind::kTorus;
  s.r1_ = major_radius;
  s.r2_ = minor_radius;
  s.center_ = center;
  return s;
}

OracleSurface OracleSurface::plane(const Vec3& normal, double offset) {
  const double n = normal.norm();
  if (!(n > 0.0) || !std::isfinite(offset)) {
    throw UsageError("plane normal must be non-zero");
  }
  OracleSurface s;
  s.kind_ = Kind::kPlane;
  s.center_ = normal / n;
  s.r1_ = offset / n;
  return s;
}

OracleSurface OracleSurface::mesh(std::vector<Triangle> triangles) {
  if (triangles.empty()) throw DataError("mesh surface has no triangles");
  OracleSurface s;
  s.kind_ = Kind::kMesh;
  s.triangles_ = std::move(triangles);
  return s;
}

SurfaceDistance OracleSurface::udf(const Vec3& q) const {
  if (!q.allFinite()) throw DataError("oracle_udf: non-finite query");
  SurfaceDistance out;
  switch (kind_) {
    case Kind::kSphere: {
      const Vec3 v = q - center_;
      const double n = v.norm();
      out.distance = std::abs(n - r1_);
      if (n == 0.0) {
        out.ambiguous = true;
        out.foot = center_ + r1_ * Vec3::UnitZ();
      } else {
        out.foot = center_ + r1_ * (v / n);
      }
      return out;
    }
    case Kind::kTorus: {
      const Vec3 v = q - center_;
      const double rho = std::hypot(v.x(), v.y());
      Vec3 radial = Vec3::UnitX();
      if (rho > 0.0) {
        radial = Vec3(v.x() / rho, v.y() / rho, 0.0);
      } else {
        out.ambiguous = true;
      }
      const Vec3 ring = r1_ * radial;
      const Vec3 w = v - ring;
      const double wn = w.norm();
      out.distance = std::abs(std::hypot(rho - r1_, v.z()) - r2_);
      if (wn == 0.0) {
        out.ambiguous = true;
        out.foot = center_ + ring + r2_ * radial;
      } else {
        out.foot = center_ + ring + r2_ * (w / wn);
      }
      return out;
    }
    case Kind::kPlane: {
      const double s = center_.dot(q) - r1_;
      out.distance = std::abs(s);
      out.foot = q - s * center_;
      return out;
    }
    case Kind::kMesh: {
      double best = std::numeric_limits<double>::infinity();
      for (const auto& t : triangles_) {
        const Vec3 c = closest_point_on_triangle(q, t);
        const double d2 = (c - q).squaredNorm();
        if (d2 < best) {
          best = d2;
          out.foot = c;
        }
      }
      out.distance = std::sqrt(best);
      return out;
    }
  }
  throw DataError("oracle_udf: unsupported surface kind");
}

std::vector<Vec3> OracleSurface::sample(std::size_t n, std::mt19937_64& rng,
                                        double plane_extent) const {
  std::vector<Vec3> out;
  out.reserve(n);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  switch (kind_) {
    case Kind::kSphere:
      while (out.size() < n) {
        const Vec3 g(gauss(rng), gauss(rng), gauss(rng));
        const double len = g.norm();
        if (len < 1e-12) continue;
        out.push_back(center_ + r1_ * g / len);
      }
      break;
    case Kind::kTorus: {
      constexpr double kTwoPi = 2.0 * std::numbers::pi;
      while (out.size() < n) {
        const double u = kTwoPi * unit(rng);
        const double v = kTwoPi * unit(rng);
        // Area element is proportional to (R + r cos v).
        if (unit(rng) * (r1_ + r2_) > r1_ + r2_ * std::cos(v)) continue;
        const double ring = r1_ + r2_ * std::cos(v);
        out.push_back(center_ + Vec3(ring * std::cos(u), ring * std::sin(u),
                                     r2_ * std::sin(v)));
      }
      break;
    }
    case Kind::kPlane: {
      const Vec3 helper =
          std::abs(center_.x()) < 0.9 ? Vec3::UnitX() : Vec3::UnitY();
      const Vec3 e1 = center_.cross(helper).normalized();
      const Vec3 e2 = center_.cross(e1);
      const Vec3 origin = r1_ * center_;
      std::uniform_real_distribution<double> side(-plane_extent, plane_extent);
      while (out.size() < n) {
        const double s = side(rng);
        const double t = side(rng);
        out.push_back(origin + s * e1 + t * e2);
      }
      break;
    }
    case Kind::kMesh: {
      std::vector<double> cumulative;
      double total = 0.0;
      for (const auto& t : triangles_) {
        total += 0.5 * (t.b - t.a).cross(t.c - t.a).norm();
        cumulative.push_back(total);
      }
      if (!(total > 0.0)) throw DataError("mesh surface has zero area");
      std::uniform_real_distribution<double> pick(0.0, total);
      while (out.size() < n) {
        const auto it =
            std::upper_bound(cumulative.begin(), cumulative.end(), pick(rng));
        const auto& t = triangles_[static_cast<std::size_t>(std::min<std::ptrdiff_t>(
            it - cumulative.begin(),
            static_cast<std::ptrdiff_t>(triangles_.size()) - 1))];
        const double r1 = std::sqrt(unit(rng));
        const double r2 = unit(rng);
        out.push_back((1 - r1) * t.a + r1 * (1 - r2) * t.b + r1 * r2 * t.c);
      }
      break;
    }
  }
  return out;
}

OracleSurface OracleSurface::parse(const std::string& spec) {
  const auto colon = spec.find(':');
  if (colon == std::string::npos) {
    throw UsageError("surface spec must look like kind:params, got '" + spec +
                     "'");
  }
  const std::string kind = spec.substr(0, colon);
  const auto v = parse_numbers(spec.substr(colon + 1), spec);
  if (kind == "sphere" && v.size() == 1) return sphere(v[0]);
  if (kind == "sphere" && v.size() == 4) {
    return sphere(v[0], Vec3(v[1], v[2], v[3]));
  }
  if (kind == "torus" && v.size() == 2) return torus(v[0], v[1]);
  if (kind == "plane" && v.size() == 4) {
    return plane(Vec3(v[0], v[1], v[2]), v[3]);
  }
  throw UsageError("unsupported surface spec '" + spec + "'");
}

SurfaceDistance oracle_udf(const OracleSurface& surface, const Vec3& q) {
  return surface.udf(q);
}

namespace {

void require_nonempty(const PointCloud& a, const PointCloud& b,
                      const char* what) {
  if (a.empty() || b.empty()) {
    throw DataError(std::string(what) + ": empty point cloud");
  }
}

}  // namespace

double chamfer(const PointCloud& a, const PointCloud& b) {
  require_nonempty(a, b, "chamfer");
  auto directed = [](const PointCloud& from, const PointCloud& to) {
    const SpatialIndex index(to);
    double sum = 0.0;
    for (const auto& p : from) {
      const double d = nearest_point(index, p).distance;
      sum += d * d;
    }
    return sum / static_cast<double>(from.size());
  };
  return 0.5 * (directed(a, b) + directed(b, a));
}

double hausdorff(const PointCloud& a, const PointCloud& b) {
  require_nonempty(a, b, "hausdorff");
  auto directed = [](const PointCloud& from, const PointCloud& to) {
    const SpatialIndex index(to);
    double worst = 0.0;
    for (const auto& p : from) {
      worst = std::max(worst, nearest_point(index, p).distance);
    }
    return worst;
  };
  return std::max(directed(a, b), directed(b, a));
}

double p2f(const PointCloud& a, const OracleSurface& surface) {
  if (a.empty()) throw DataError("p2f: empty point cloud");
  double sum = 0.0;
  for (const auto& p : a) sum += surface.udf(p).distance;
  return sum / static_cast<double>(a.size());
}

std::string MetricsReport::to_key_value() const {
  std::ostringstream out;
  out << "pred_count=" << pred_count << '\n'
      << "ref_count=" << ref_count << '\n'
      << "cd=" << fmt_double(cd) << '\n'
      << "hd=" << fmt_double(hd) << '\n'
      << "p2f_computed=" << (p2f_computed ? "true" : "false") << '\n';
  if (p2f_computed) out << "p2f=" << fmt_double(p2f_mean) << '\n';
  return out.str();
}

std::string MetricsReport::csv_header() {
  return "pred_count,ref_count,cd,hd,p2f,p2f_computed";
}

std::string MetricsReport::to_csv_row() const {
  std::ostringstream out;
  out << pred_count << ',' << ref_count << ',' << fmt_double(cd) << ','
      << fmt_double(hd) << ',' << (p2f_computed ? fmt_double(p2f_mean) : "")
      << ',' << (p2f_computed ? 1 : 0);
  return out.str();
}

MetricsReport evaluate(const PointCloud& pred, const PointCloud& ref,
                       const std::optional<OracleSurface>& surface) {
  MetricsReport r;
  r.cd = chamfer(pred, ref);
  r.hd = hausdorff(pred, ref);
  r.pred_count = pred.size();
  r.ref_count = ref.size();
  if (surface) {
    r.p2f_mean = p2f(pred, *surface);
    r.p2f_computed = true;
  }
  return r;
}

std::vector<double> nn_distances(const PointCloud& cloud) {
  if (cloud.size() < 2) throw DataError("nn distances need at least 2 points");
  const SpatialIndex index(cloud);
  std::vector<double> out;
  out.reserve(cloud.size());
  for (const auto& p : cloud) out.push_back(index.knn(p, 2)[1].distance);
  return out;
}

double nn_distance_cv(const PointCloud& cloud) {
  const auto d = nn_distances(cloud);
  const double n = static_cast<double>(d.size());
  const double mean = std::accumulate(d.begin(), d.end(), 0.0) / n;
  double var = 0.0;
  for (double x : d) var += (x - mean) * (x - mean);
  var /= n;
  return mean > 0.0 ? std::sqrt(var) / mean : 0.0;
}

}  // namespace udfup
