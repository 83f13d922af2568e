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
#include <filesystem>
#include <iosfwd>
#include <string>

#include "udfup/field.hpp"
#include "udfup/ldi.hpp"
#include "udfup/upsampler.hpp"

namespace udfup {

// Every tunable of the pipeline. Text form is one `key = value` per line with
// `#` comments; see RunConfig::dump for the key list.
struct RunConfig {
  // indicator
  int patch_size = 256;
  int k_neighbors = 16;
  int interp_ratio = 2;
  int ldi_feature_dim = 64;
  int ldi_steps = 8000;
  int ldi_patches_per_step = 4;
  int ldi_queries_per_patch = 64;
  int ldi_queries_per_point = 4;
  double ldi_query_sigma = 0.1;
  double ldi_learning_rate = 3e-3;
  double ldi_final_lr_fraction = 0.05;
  double ldi_holdout_fraction = 0.1;
  std::uint64_t ldi_seed = 1;
  // synthetic patches
  int synthetic_patches = 200;
  int synthetic_dense_ratio = 16;
  // field
  int field_width = 128;
  int field_layers = 8;
  int field_steps = 10000;
  int field_batch_size = 256;
  int field_surface_batch = 512;
  int queries_per_point = 240;
  double sigma_fraction = 0.2;
  int nn_rank = 50;
  double global_fraction = 0.1;
  double alpha = 1.0;
  double beta_start = 0.5;
  double beta_end = 0.0;
  double gamma = 0.1;
  double field_learning_rate = 1e-3;
  double early_stop_tolerance = 1e-3;
  int early_stop_window = 500;
  std::uint64_t field_seed = 1;
  // upsampling
  double oversample_ratio = 3.0;
  int max_retries = 3;
  int pull_iterations = 1;
  std::uint64_t upsample_seed = 1;
  std::uint64_t fps_seed_index = 0;
  OffsetLaw query_offsets = OffsetLaw::kBox;  // "box" or "radial"

  // Throws UsageError naming the key, with the line number when parsing.
  static RunConfig parse(std::istream& in);
  static RunConfig load(const std::filesystem::path& path);
  void set(const std::string& key, const std::string& value);
  void validate() const;
  // All keys, one per line, in a form parse() reads back exactly.
  void dump(std::ostream& out) const;

  LdiArchitecture ldi_architecture() const;
  LdiTrainOptions ldi_train_options() const;
  FieldFitOptions field_options() const;
  UpsampleRequest upsample_request() const;

  friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

// Parsed form of `synthetic:kinds=plane+sphere,patches=200,dense_ratio=16,noise=0`.
// Every field is optional; omitted ones come from the run config.
struct SyntheticSource {
  SyntheticPatchOptions options;
  int patches = 200;
};

bool is_synthetic_source(const std::string& spec);
SyntheticSource parse_synthetic_source(const std::string& spec,
                                       const RunConfig& config);

}  // namespace udfup
