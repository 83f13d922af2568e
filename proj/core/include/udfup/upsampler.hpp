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

#include "udfup/field.hpp"
#include "udfup/geometry.hpp"

namespace udfup {

// How inference query offsets around a cloud point are drawn; d is the
// distance from the point to its nearest other point.
enum class OffsetLaw : std::uint8_t {
  kBox = 0,     // each coordinate uniform in [-d, d]
  kRadial = 1,  // uniform direction times a radius uniform in [0, d)
};

struct UpsampleRequest {
  // Output count: target_count when non-zero, otherwise round(scale * N).
  double scale = 4.0;
  std::size_t target_count = 0;
  double oversample_ratio = 3.0;
  std::uint64_t seed = 1;
  std::size_t fps_seed_index = 0;
  // Fresh offsets tried for a query whose pull is degenerate.
  int max_retries = 3;
  int pull_iterations = 1;
  OffsetLaw offsets = OffsetLaw::kBox;

  std::size_t output_count(std::size_t input_count) const;
  void validate() const;
};

// Offsets around the cloud points, assigned round-robin starting at point 0.
// Coordinates are those of the index.
QueryBatch generate_inference_queries(const SpatialIndex& index, std::size_t count,
                                      std::uint64_t rng_seed,
                                      OffsetLaw law = OffsetLaw::kBox);

struct Projection {
  PointCloud points;
  // Batch positions of the projected points.
  std::vector<std::size_t> kept;
  std::size_t dropped = 0;
};

// One pull per query (or `iterations`); degenerate queries are dropped.
// Throws DataError when every query is degenerate.
Projection project_batch(const DistanceField& field, const QueryBatch& batch,
                         int iterations = 1,
                         double gradient_epsilon = kDefaultGradientEpsilon);

struct UpsampleResult {
  PointCloud points;      // exactly the requested count, world coordinates
  PointCloud projected;   // oversampled set before FPS, world coordinates
  std::size_t generated = 0;
  std::size_t resampled = 0;
  std::size_t dropped = 0;
};

// Field evaluated in `frame` coordinates of the world cloud. Writes a warning
// to `log` when fewer points than the input are requested.
UpsampleResult upsample(const PointCloud& cloud, const DistanceField& field,
                        const Normalization& frame, const UpsampleRequest& request,
                        std::ostream* log = nullptr);

// Uses the fitted model and its stored normalization. The model must be
// trained.
UpsampleResult upsample(const PointCloud& cloud, const FieldModel& model,
                        const UpsampleRequest& request, std::ostream* log = nullptr);

}  // namespace udfup
