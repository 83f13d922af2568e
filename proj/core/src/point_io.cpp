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

#include "udfup/point_io.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "udfup/error.hpp"

namespace udfup {
namespace {

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

bool parse_double(std::string_view tok, double& out) {
  if (!tok.empty() && tok.front() == '+') tok.remove_prefix(1);
  const auto* end = tok.data() + tok.size();
  const auto r = std::from_chars(tok.data(), end, out);
  return r.ec == std::errc() && r.ptr == end;
}

std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    std::size_t j = i;
    while (j < line.size() && !std::isspace(static_cast<unsigned char>(line[j]))) ++j;
    if (j > i) out.push_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

enum class PlyType { kInt8, kUint8, kInt16, kUint16, kInt32, kUint32, kFloat32, kFloat64 };

std::size_t type_size(PlyType t) {
  switch (t) {
    case PlyType::kInt8:
    case PlyType::kUint8: return 1;
    case PlyType::kInt16:
    case PlyType::kUint16: return 2;
    case PlyType::kInt32:
    case PlyType::kUint32:
    case PlyType::kFloat32: return 4;
    case PlyType::kFloat64: return 8;
  }
  return 0;
}

bool parse_type(const std::string& s, PlyType& t) {
  static const std::array<std::pair<const char*, PlyType>, 16> table{{
      {"char", PlyType::kInt8},     {"int8", PlyType::kInt8},
      {"uchar", PlyType::kUint8},   {"uint8", PlyType::kUint8},
      {"short", PlyType::kInt16},   {"int16", PlyType::kInt16},
      {"ushort", PlyType::kUint16}, {"uint16", PlyType::kUint16},
      {"int", PlyType::kInt32},     {"int32", PlyType::kInt32},
      {"uint", PlyType::kUint32},   {"uint32", PlyType::kUint32},
      {"float", PlyType::kFloat32}, {"float32", PlyType::kFloat32},
      {"double", PlyType::kFloat64}, {"float64", PlyType::kFloat64},
  }};
  for (const auto& [name, type] : table) {
    if (s == name) {
      t = type;
      return true;
    }
  }
  return false;
}

struct PlyProperty {
  std::string name;
  PlyType type = PlyType::kFloat32;
  bool is_list = false;
  PlyType count_type = PlyType::kUint8;
};

struct PlyElement {
  std::string name;
  std::size_t count = 0;
  std::vector<PlyProperty> properties;
};

template <typename T>
T load_le(const unsigned char* p) {
  T v;
  std::memcpy(&v, p, sizeof v);
  if constexpr (std::endian::native == std::endian::big && sizeof(T) > 1) {
    auto* b = reinterpret_cast<unsigned char*>(&v);
    std::reverse(b, b + sizeof v);
  }
  return v;
}

double decode(PlyType t, const unsigned char* p) {
  switch (t) {
    case PlyType::kInt8: return static_cast<double>(static_cast<std::int8_t>(p[0]));
    case PlyType::kUint8: return static_cast<double>(p[0]);
    case PlyType::kInt16: return load_le<std::int16_t>(p);
    case PlyType::kUint16: return load_le<std::uint16_t>(p);
    case PlyType::kInt32: return load_le<std::int32_t>(p);
    case PlyType::kUint32: return load_le<std::uint32_t>(p);
    case PlyType::kFloat32: return static_cast<double>(load_le<float>(p));
    case PlyType::kFloat64: return load_le<double>(p);
  }
  return 0.0;
}

[[noreturn]] void ply_error(std::streamoff offset, const std::string& what) {
  throw DataError("ply: " + what + " (byte offset " + std::to_string(offset) + ")");
}

}  // namespace

PointFormat format_for_path(const std::filesystem::path& path) {
  const std::string ext = lower(path.extension().string());
  if (ext == ".xyz" || ext == ".txt") return PointFormat::kXyz;
  if (ext == ".ply") return PointFormat::kPlyBinary;
  throw UsageError("unsupported point cloud extension '" + ext + "' for " +
                   path.string());
}

PointCloud read_xyz(std::istream& in) {
  std::vector<Vec3> pts;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto toks = split_ws(line);
    if (toks.empty() || toks.front().front() == '#') continue;
    if (toks.size() < 3) {
      throw DataError("xyz: line " + std::to_string(lineno) +
                      ": expected three coordinates");
    }
    Vec3 p;
    for (int a = 0; a < 3; ++a) {
      if (!parse_double(toks[static_cast<std::size_t>(a)], p[a]) || !std::isfinite(p[a])) {
        throw DataError("xyz: line " + std::to_string(lineno) + ": bad number '" +
                        std::string(toks[static_cast<std::size_t>(a)]) + "'");
      }
    }
    pts.push_back(p);
  }
  if (pts.empty()) throw DataError("xyz: no points");
  return PointCloud(std::move(pts));
}

namespace {

struct PlyData {
  std::vector<Vec3> vertices;
  std::vector<std::array<std::size_t, 3>> triangles;
};

PlyData read_ply_data(std::istream& in, bool want_faces) {
  std::string line;
  auto next_line = [&]() {
    const std::streamoff at = in.tellg();
    if (!std::getline(in, line)) ply_error(at, "unexpected end of header");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    return at;
  };
  std::streamoff at = next_line();
  if (line != "ply") ply_error(at, "missing 'ply' magic");
  bool binary = false;
  bool have_format = false;
  std::vector<PlyElement> elements;
  for (;;) {
    at = next_line();
    const auto toks = split_ws(line);
    if (toks.empty()) continue;
    const std::string key(toks[0]);
    if (key == "end_header") break;
    if (key == "comment" || key == "obj_info") continue;
    if (key == "format") {
      if (toks.size() < 3) ply_error(at, "malformed format line");
      if (toks[1] == "ascii") {
        binary = false;
      } else if (toks[1] == "binary_little_endian") {
        binary = true;
      } else {
        ply_error(at, "unsupported encoding '" + std::string(toks[1]) + "'");
      }
      have_format = true;
    } else if (key == "element") {
      if (toks.size() != 3) ply_error(at, "malformed element line");
      PlyElement e;
      e.name = std::string(toks[1]);
      double count = 0;
      if (!parse_double(toks[2], count) || count < 0 || count != std::floor(count)) {
        ply_error(at, "bad element count");
      }
      e.count = static_cast<std::size_t>(count);
      elements.push_back(std::move(e));
    } else if (key == "property") {
      if (elements.empty()) ply_error(at, "property before any element");
      PlyProperty p;
      if (toks.size() == 5 && toks[1] == "list") {
        p.is_list = true;
        if (!parse_type(std::string(toks[2]), p.count_type) ||
            !parse_type(std::string(toks[3]), p.type)) {
          ply_error(at, "unknown list property type");
        }
        p.name = std::string(toks[4]);
      } else if (toks.size() == 3) {
        if (!parse_type(std::string(toks[1]), p.type)) {
          ply_error(at, "unknown property type '" + std::string(toks[1]) + "'");
        }
        p.name = std::string(toks[2]);
      } else {
        ply_error(at, "malformed property line");
      }
      elements.back().properties.push_back(std::move(p));
    } else {
      ply_error(at, "unknown header keyword '" + key + "'");
    }
  }
  if (!have_format) ply_error(0, "missing format line");
  const auto vit = std::find_if(elements.begin(), elements.end(),
                                [](const PlyElement& e) { return e.name == "vertex"; });
  if (vit == elements.end()) ply_error(0, "no vertex element");
  std::array<int, 3> slot{-1, -1, -1};
  for (std::size_t i = 0; i < vit->properties.size(); ++i) {
    const auto& p = vit->properties[i];
    const int axis = p.name == "x" ? 0 : p.name == "y" ? 1 : p.name == "z" ? 2 : -1;
    if (axis < 0) continue;
    if (p.is_list || (p.type != PlyType::kFloat32 && p.type != PlyType::kFloat64)) {
      ply_error(0, "vertex property " + p.name + " must be float or double");
    }
    slot[static_cast<std::size_t>(axis)] = static_cast<int>(i);
  }
  if (slot[0] < 0 || slot[1] < 0 || slot[2] < 0) ply_error(0, "vertex lacks x, y or z");

  auto is_index_list = [](const PlyProperty& p) {
    return p.is_list && (p.name == "vertex_indices" || p.name == "vertex_index");
  };
  PlyData data;
  std::vector<Vec3>& pts = data.vertices;
  pts.reserve(vit->count);
  std::vector<double> face;
  for (auto e = elements.begin(); e != elements.end(); ++e) {
    const bool is_vertex = e == vit;
    const bool is_face = e->name == "face";
    if (!want_faces && e > vit) break;
    for (std::size_t r = 0; r < e->count; ++r) {
      face.clear();
      const std::streamoff row_at = in.tellg();
      std::vector<double> values(e->properties.size(), 0.0);
      if (binary) {
        unsigned char buf[8];
        for (std::size_t i = 0; i < e->properties.size(); ++i) {
          const auto& p = e->properties[i];
          std::size_t n = 1;
          if (p.is_list) {
            if (!in.read(reinterpret_cast<char*>(buf), static_cast<std::streamsize>(type_size(p.count_type)))) {
              ply_error(row_at, "truncated " + e->name + " data");
            }
            const double c = decode(p.count_type, buf);
            if (c < 0) ply_error(row_at, "negative list length");
            n = static_cast<std::size_t>(c);
            if (want_faces && is_face && is_index_list(p)) {
              face.clear();
              for (std::size_t v = 0; v < n; ++v) {
                if (!in.read(reinterpret_cast<char*>(buf), static_cast<std::streamsize>(type_size(p.type)))) {
                  ply_error(row_at, "truncated face data");
                }
                face.push_back(decode(p.type, buf));
              }
            } else {
              in.ignore(static_cast<std::streamsize>(n * type_size(p.type)));
            }
            if (!in) ply_error(row_at, "truncated " + e->name + " data");
            continue;
          }
          if (!in.read(reinterpret_cast<char*>(buf), static_cast<std::streamsize>(type_size(p.type)))) {
            ply_error(row_at, "truncated " + e->name + " data");
          }
          values[i] = decode(p.type, buf);
        }
      } else {
        if (!std::getline(in, line)) ply_error(row_at, "truncated " + e->name + " data");
        const auto toks = split_ws(line);
        std::size_t t = 0;
        for (std::size_t i = 0; i < e->properties.size(); ++i) {
          const auto& p = e->properties[i];
          if (t >= toks.size()) ply_error(row_at, "short " + e->name + " row");
          if (p.is_list) {
            double c = 0;
            if (!parse_double(toks[t++], c) || c < 0) ply_error(row_at, "bad list length");
            const auto n = static_cast<std::size_t>(c);
            if (t + n > toks.size()) ply_error(row_at, "short " + e->name + " row");
            if (want_faces && is_face && is_index_list(p)) {
              face.clear();
              for (std::size_t v = 0; v < n; ++v) {
                double idx = 0;
                if (!parse_double(toks[t + v], idx)) ply_error(row_at, "bad face index");
                face.push_back(idx);
              }
            }
            t += n;
            continue;
          }
          if (!parse_double(toks[t++], values[i])) {
            ply_error(row_at, "bad number in " + e->name + " row");
          }
        }
      }
      if (is_vertex) {
        const Vec3 p(values[static_cast<std::size_t>(slot[0])],
                     values[static_cast<std::size_t>(slot[1])],
                     values[static_cast<std::size_t>(slot[2])]);
        if (!p.allFinite()) ply_error(row_at, "non-finite vertex");
        pts.push_back(p);
      }
      if (is_face && face.size() >= 3) {
        for (double idx : face) {
          if (idx < 0 || idx >= static_cast<double>(vit->count) || idx != std::floor(idx)) {
            ply_error(row_at, "face index out of range");
          }
        }
        // Polygons become triangle fans.
        for (std::size_t v = 1; v + 1 < face.size(); ++v) {
          data.triangles.push_back({static_cast<std::size_t>(face[0]),
                                    static_cast<std::size_t>(face[v]),
                                    static_cast<std::size_t>(face[v + 1])});
        }
      }
    }
  }
  if (pts.empty()) throw DataError("ply: no points");
  return data;
}

}  // namespace

PointCloud read_ply(std::istream& in) {
  return PointCloud(read_ply_data(in, false).vertices);
}

std::vector<Triangle> read_ply_mesh(std::istream& in) {
  PlyData data = read_ply_data(in, true);
  if (data.triangles.empty()) throw DataError("ply: mesh has no faces");
  std::vector<Triangle> tris;
  tris.reserve(data.triangles.size());
  for (const auto& t : data.triangles) {
    tris.push_back(Triangle{data.vertices[t[0]], data.vertices[t[1]], data.vertices[t[2]]});
  }
  return tris;
}

std::vector<Triangle> read_mesh(const std::filesystem::path& path) {
  if (lower(path.extension().string()) != ".ply") {
    throw UsageError("meshes must be PLY files: " + path.string());
  }
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  try {
    return read_ply_mesh(in);
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

PointCloud read_point_cloud(const std::filesystem::path& path) {
  const PointFormat fmt = format_for_path(path);
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  try {
    return fmt == PointFormat::kXyz ? read_xyz(in) : read_ply(in);
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

void write_xyz(std::ostream& out, const PointCloud& cloud) {
  if (cloud.empty()) throw DataError("refusing to write an empty point cloud");
  char buf[96];
  for (const auto& p : cloud) {
    std::snprintf(buf, sizeof buf, "%.9g %.9g %.9g\n", p.x(), p.y(), p.z());
    out << buf;
  }
}

void write_ply(std::ostream& out, const PointCloud& cloud, bool binary) {
  if (cloud.empty()) throw DataError("refusing to write an empty point cloud");
  out << "ply\nformat " << (binary ? "binary_little_endian" : "ascii")
      << " 1.0\nelement vertex " << cloud.size()
      << "\nproperty double x\nproperty double y\nproperty double z\nend_header\n";
  if (binary) {
    for (const auto& p : cloud) {
      for (int a = 0; a < 3; ++a) {
        double v = p[a];
        if constexpr (std::endian::native == std::endian::big) {
          auto* b = reinterpret_cast<unsigned char*>(&v);
          std::reverse(b, b + sizeof v);
        }
        out.write(reinterpret_cast<const char*>(&v), sizeof v);
      }
    }
  } else {
    char buf[96];
    for (const auto& p : cloud) {
      std::snprintf(buf, sizeof buf, "%.17g %.17g %.17g\n", p.x(), p.y(), p.z());
      out << buf;
    }
  }
}

void write_point_cloud(const PointCloud& cloud, const std::filesystem::path& path,
                       PointFormat format) {
  if (cloud.empty()) throw DataError("refusing to write an empty point cloud");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  if (format == PointFormat::kXyz) {
    write_xyz(out, cloud);
  } else {
    write_ply(out, cloud, format == PointFormat::kPlyBinary);
  }
  out.flush();
  if (!out) throw DataError("write failed for " + path.string());
}

void write_point_cloud(const PointCloud& cloud, const std::filesystem::path& path) {
  write_point_cloud(cloud, path, format_for_path(path));
}

}  // namespace udfup
