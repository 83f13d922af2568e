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

#include <filesystem>
#include <iosfwd>

#include <vector>

#include "udfup/geometry.hpp"
#include "udfup/metrics.hpp"

namespace udfup {

enum class PointFormat { kXyz, kPlyAscii, kPlyBinary };

// .xyz reads as XYZ; .ply as either PLY encoding (taken from the header).
// Writing a .ply path picks the binary encoding.
PointFormat format_for_path(const std::filesystem::path& path);

// One point per line, three decimal numbers, extra columns ignored. Blank
// lines and lines starting with '#' are skipped.
PointCloud read_xyz(std::istream& in);
// ascii or binary_little_endian; x, y, z of the vertex element must be float
// or double. Other properties and elements are skipped.
PointCloud read_ply(std::istream& in);
PointCloud read_point_cloud(const std::filesystem::path& path);

// Triangles of a PLY mesh (vertex element plus a face element with a
// vertex_indices list); polygons are split into fans.
std::vector<Triangle> read_ply_mesh(std::istream& in);
std::vector<Triangle> read_mesh(const std::filesystem::path& path);

// XYZ uses %.9g; binary PLY stores doubles; ASCII PLY uses %.17g.
void write_xyz(std::ostream& out, const PointCloud& cloud);
void write_ply(std::ostream& out, const PointCloud& cloud, bool binary);
void write_point_cloud(const PointCloud& cloud, const std::filesystem::path& path,
                       PointFormat format);
void write_point_cloud(const PointCloud& cloud, const std::filesystem::path& path);

}  // namespace udfup
