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

#include "udfup/config.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <istream>
#include <limits>
#include <ostream>
#include <variant>
#include <vector>

#include "udfup/error.hpp"

namespace udfup {
namespace {

using Member = std::variant<int RunConfig::*, double RunConfig::*,
                            std::uint64_t RunConfig::*>;

struct Key {
  const char* name;
  Member member;
  double lo;
  double hi;
};

constexpr double kInf = std::numeric_limits<double>::infinity();

const std::vector<Key>& keys() {
  static const std::vector<Key> table{
      {"patch_size", &RunConfig::patch_size, 2, 1 << 16},
      {"k_neighbors", &RunConfig::k_neighbors, 1, 1024},
      {"interp_ratio", &RunConfig::interp_ratio, 1, 16},
      {"ldi_feature_dim", &RunConfig::ldi_feature_dim, 1, 4096},
      {"ldi_steps", &RunConfig::ldi_steps, 0, 1e8},
      {"ldi_patches_per_step", &RunConfig::ldi_patches_per_step, 1, 1 << 16},
      {"ldi_queries_per_patch", &RunConfig::ldi_queries_per_patch, 1, 1 << 20},
      {"ldi_queries_per_point", &RunConfig::ldi_queries_per_point, 1, 1 << 16},
      {"ldi_query_sigma", &RunConfig::ldi_query_sigma, 0, 10},
      {"ldi_learning_rate", &RunConfig::ldi_learning_rate, 1e-12, 10},
      {"ldi_final_lr_fraction", &RunConfig::ldi_final_lr_fraction, 1e-6, 1},
      {"ldi_holdout_fraction", &RunConfig::ldi_holdout_fraction, 0, 0.9},
      {"ldi_seed", &RunConfig::ldi_seed, 0, kInf},
      {"synthetic_patches", &RunConfig::synthetic_patches, 1, 1e7},
      {"synthetic_dense_ratio", &RunConfig::synthetic_dense_ratio, 1, 1024},
      {"field_width", &RunConfig::field_width, 1, 1 << 14},
      {"field_layers", &RunConfig::field_layers, 2, 64},
      {"field_steps", &RunConfig::field_steps, 0, 1e8},
      {"field_batch_size", &RunConfig::field_batch_size, 1, 1 << 20},
      {"field_surface_batch", &RunConfig::field_surface_batch, 0, 1 << 24},
      {"queries_per_point", &RunConfig::queries_per_point, 1, 1 << 16},
      {"sigma_fraction", &RunConfig::sigma_fraction, 0, 10},
      {"nn_rank", &RunConfig::nn_rank, 1, 1 << 16},
      {"global_fraction", &RunConfig::global_fraction, 0, 10},
      {"alpha", &RunConfig::alpha, 0, 1e6},
      {"beta_start", &RunConfig::beta_start, 0, 1e6},
      {"beta_end", &RunConfig::beta_end, 0, 1e6},
      {"gamma", &RunConfig::gamma, 0, 1e6},
      {"field_learning_rate", &RunConfig::field_learning_rate, 1e-12, 10},
      {"early_stop_tolerance", &RunConfig::early_stop_tolerance, 0, 1},
      {"early_stop_window", &RunConfig::early_stop_window, 1, 1e8},
      {"field_seed", &RunConfig::field_seed, 0, kInf},
      {"oversample_ratio", &RunConfig::oversample_ratio, 1, 1000},
      {"max_retries", &RunConfig::max_retries, 0, 100},
      {"pull_iterations", &RunConfig::pull_iterations, 1, 100},
      {"upsample_seed", &RunConfig::upsample_seed, 0, kInf},
      {"fps_seed_index", &RunConfig::fps_seed_index, 0, kInf},
  };
  return table;
}

std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
  T v{};
  const char* end = text.data() + text.size();
  const auto r = std::from_chars(text.data(), end, v);
  if (r.ec != std::errc() || r.ptr != end) {
    throw UsageError("config: bad value '" + text + "' for " + key);
  }
  return v;
}

void check_range(const Key& k, double v) {
  if (!(v >= k.lo && v <= k.hi)) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "config: %s out of range [%g, %g]", k.name, k.lo,
                  k.hi);
    throw UsageError(buf);
  }
}

}  // namespace

void RunConfig::set(const std::string& key, const std::string& value) {
  if (key == "query_offsets") {
    if (value == "box") {
      query_offsets = OffsetLaw::kBox;
    } else if (value == "radial") {
      query_offsets = OffsetLaw::kRadial;
    } else {
      throw UsageError("config: query_offsets must be box or radial, got '" + value + "'");
    }
    return;
  }
  for (const auto& k : keys()) {
    if (key != k.name) continue;
    std::visit(
        [&](auto member) {
          using T = std::remove_reference_t<decltype(this->*member)>;
          const T v = parse_number<T>(key, value);
          check_range(k, static_cast<double>(v));
          this->*member = v;
        },
        k.member);
    return;
  }
  throw UsageError("config: unknown key '" + key + "'");
}

void RunConfig::validate() const {
  for (const auto& k : keys()) {
    std::visit([&](auto member) { check_range(k, static_cast<double>(this->*member)); },
               k.member);
  }
  if (k_neighbors > patch_size) {
    throw UsageError("config: k_neighbors exceeds patch_size");
  }
}

RunConfig RunConfig::parse(std::istream& in) {
  RunConfig c;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) {
      line.erase(hash);
    }
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw UsageError("config line " + std::to_string(lineno) + ": expected key = value");
    }
    try {
      c.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    } catch (const UsageError& e) {
      throw UsageError("config line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  c.validate();
  return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open config " + path.string());
  return parse(in);
}

void RunConfig::dump(std::ostream& out) const {
  char buf[160];
  for (const auto& k : keys()) {
    std::visit(
        [&](auto member) {
          const auto v = this->*member;
          if constexpr (std::is_same_v<decltype(v), const double>) {
            std::snprintf(buf, sizeof buf, "%s = %.17g\n", k.name, v);
          } else {
            std::snprintf(buf, sizeof buf, "%s = %s\n", k.name, std::to_string(v).c_str());
          }
        },
        k.member);
    out << buf;
  }
  out << "query_offsets = " << (query_offsets == OffsetLaw::kBox ? "box" : "radial") << '\n';
}

LdiArchitecture RunConfig::ldi_architecture() const {
  LdiArchitecture a;
  a.feature_dim = ldi_feature_dim;
  a.k_neighbors = k_neighbors;
  a.patch_size = patch_size;
  a.interp_ratio = interp_ratio;
  return a;
}

LdiTrainOptions RunConfig::ldi_train_options() const {
  LdiTrainOptions o;
  o.steps = ldi_steps;
  o.patches_per_step = ldi_patches_per_step;
  o.queries_per_patch = ldi_queries_per_patch;
  o.learning_rate = ldi_learning_rate;
  o.final_lr_fraction = ldi_final_lr_fraction;
  o.seed = ldi_seed;
  return o;
}

FieldFitOptions RunConfig::field_options() const {
  FieldFitOptions o;
  o.architecture.width = field_width;
  o.architecture.layers = field_layers;
  if (field_layers < 6) o.architecture.residual_from = -1;
  o.weights.alpha = alpha;
  o.weights.beta_start = beta_start;
  o.weights.beta_end = beta_end;
  o.weights.gamma = gamma;
  o.weights.total_steps = field_steps;
  o.max_steps = field_steps;
  o.batch_size = field_batch_size;
  o.surface_batch = field_surface_batch;
  o.queries_per_point = queries_per_point;
  o.sigma_fraction = sigma_fraction;
  o.nn_rank = nn_rank;
  o.global_fraction = global_fraction;
  o.learning_rate = field_learning_rate;
  o.early_stop_tolerance = early_stop_tolerance;
  o.early_stop_window = early_stop_window;
  o.seed = field_seed;
  return o;
}

UpsampleRequest RunConfig::upsample_request() const {
  UpsampleRequest r;
  r.oversample_ratio = oversample_ratio;
  r.max_retries = max_retries;
  r.pull_iterations = pull_iterations;
  r.offsets = query_offsets;
  r.seed = upsample_seed;
  r.fps_seed_index = static_cast<std::size_t>(fps_seed_index);
  return r;
}

bool is_synthetic_source(const std::string& spec) {
  return spec.rfind("synthetic:", 0) == 0 || spec == "synthetic";
}

SyntheticSource parse_synthetic_source(const std::string& spec,
                                       const RunConfig& config) {
  if (!is_synthetic_source(spec)) {
    throw UsageError("not a synthetic source: " + spec);
  }
  SyntheticSource src;
  src.patches = config.synthetic_patches;
  src.options.patch_size = static_cast<std::size_t>(config.patch_size);
  src.options.dense_ratio = config.synthetic_dense_ratio;
  const auto colon = spec.find(':');
  const std::string body = colon == std::string::npos ? "" : spec.substr(colon + 1);
  std::size_t pos = 0;
  while (pos < body.size()) {
    auto comma = body.find(',', pos);
    if (comma == std::string::npos) comma = body.size();
    const std::string item = trim(body.substr(pos, comma - pos));
    pos = comma + 1;
    if (item.empty()) continue;
    const auto eq = item.find('=');
    if (eq == std::string::npos) {
      throw UsageError("synthetic source: expected key=value, got '" + item + "'");
    }
    const std::string key = trim(item.substr(0, eq));
    const std::string value = trim(item.substr(eq + 1));
    if (key == "kinds") {
      src.options.kinds.clear();
      std::size_t p = 0;
      while (p <= value.size()) {
        auto plus = value.find('+', p);
        if (plus == std::string::npos) plus = value.size();
        const std::string kind = value.substr(p, plus - p);
        if (kind == "plane") {
          src.options.kinds.push_back(OracleSurface::Kind::kPlane);
        } else if (kind == "sphere") {
          src.options.kinds.push_back(OracleSurface::Kind::kSphere);
        } else if (kind == "torus") {
          src.options.kinds.push_back(OracleSurface::Kind::kTorus);
        } else {
          throw UsageError("synthetic source: unknown surface '" + kind + "'");
        }
        p = plus + 1;
      }
    } else if (key == "patches") {
      src.patches = parse_number<int>(key, value);
      if (src.patches < 1) throw UsageError("synthetic source: patches must be >= 1");
    } else if (key == "dense_ratio") {
      src.options.dense_ratio = parse_number<int>(key, value);
      if (src.options.dense_ratio < 1) {
        throw UsageError("synthetic source: dense_ratio must be >= 1");
      }
    } else if (key == "noise") {
      src.options.noise = parse_number<double>(key, value);
      if (!(src.options.noise >= 0.0)) {
        throw UsageError("synthetic source: noise must be >= 0");
      }
    } else {
      throw UsageError("synthetic source: unknown key '" + key + "'");
    }
  }
  return src;
}

}  // namespace udfup
