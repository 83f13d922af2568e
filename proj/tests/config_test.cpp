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

#include <gtest/gtest.h>

#include <sstream>

#include "udfup/config.hpp"
#include "udfup/error.hpp"

namespace udfup {
namespace {

std::string error_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.what();
  }
  return {};
}

TEST(RunConfig, DefaultsFeedTheLibraryOptions) {
  const RunConfig c;
  EXPECT_NO_THROW(c.validate());
  const auto arch = c.ldi_architecture();
  EXPECT_EQ(arch.patch_size, 256u);
  EXPECT_EQ(arch.k_neighbors, 16u);
  EXPECT_EQ(arch.interp_ratio, 2);
  const auto f = c.field_options();
  EXPECT_EQ(f.architecture.width, 128);
  EXPECT_EQ(f.architecture.layers, 8);
  EXPECT_EQ(f.max_steps, 10000);
  EXPECT_EQ(f.queries_per_point, 240);
  EXPECT_DOUBLE_EQ(f.sigma_fraction, 0.2);
  EXPECT_EQ(f.nn_rank, 50);
  EXPECT_DOUBLE_EQ(f.weights.alpha, 1.0);
  EXPECT_DOUBLE_EQ(f.weights.beta_start, 0.5);
  EXPECT_DOUBLE_EQ(f.weights.beta_end, 0.0);
  EXPECT_DOUBLE_EQ(f.weights.gamma, 0.1);
  EXPECT_DOUBLE_EQ(f.learning_rate, 1e-3);
  EXPECT_EQ(f.batch_size, 256);
  const auto u = c.upsample_request();
  EXPECT_DOUBLE_EQ(u.oversample_ratio, 3.0);
  EXPECT_EQ(u.max_retries, 3);
  EXPECT_EQ(u.offsets, OffsetLaw::kBox);
}

TEST(RunConfig, ParsesCommentsAndWhitespace) {
  std::istringstream in(
      "# run\n"
      "  patch_size = 64   # smaller\n"
      "\n"
      "field_width=32\n"
      "sigma_fraction = 0.25\n"
      "field_seed = 18446744073709551615\n");
  const RunConfig c = RunConfig::parse(in);
  EXPECT_EQ(c.patch_size, 64);
  EXPECT_EQ(c.field_width, 32);
  EXPECT_DOUBLE_EQ(c.sigma_fraction, 0.25);
  EXPECT_EQ(c.field_seed, 18446744073709551615ull);
}

TEST(RunConfig, RejectsBadInputWithLineNumbers) {
  auto parse_error = [](const std::string& text) {
    std::istringstream in(text);
    return error_of([&] { RunConfig::parse(in); });
  };
  EXPECT_NE(parse_error("\nbogus_key = 1\n").find("line 2"), std::string::npos);
  EXPECT_NE(parse_error("\nbogus_key = 1\n").find("bogus_key"), std::string::npos);
  EXPECT_NE(parse_error("patch_size 64\n").find("line 1"), std::string::npos);
  EXPECT_NE(parse_error("field_width = 0\n").find("field_width"), std::string::npos);
  EXPECT_NE(parse_error("alpha = abc\n").find("alpha"), std::string::npos);
  EXPECT_NE(parse_error("patch_size = 12x\n").find("patch_size"), std::string::npos);
  EXPECT_NE(parse_error("patch_size = 2.5\n").find("patch_size"), std::string::npos);
  EXPECT_NE(parse_error("gamma = nan\n").find("gamma"), std::string::npos);
  // Cross-key rule.
  EXPECT_FALSE(parse_error("patch_size = 8\nk_neighbors = 16\n").empty());
  RunConfig c;
  EXPECT_THROW(c.set("oversample_ratio", "0.5"), UsageError);
  EXPECT_THROW(c.set("nope", "1"), UsageError);
  EXPECT_THROW(c.set("query_offsets", "sphere"), UsageError);
  c.set("query_offsets", "radial");
  EXPECT_EQ(c.upsample_request().offsets, OffsetLaw::kRadial);
}

TEST(RunConfig, DumpRoundTripsExactly) {
  RunConfig c;
  c.sigma_fraction = 0.1 + 0.2;
  c.ldi_query_sigma = 1.0 / 3.0;
  c.upsample_seed = 0xdeadbeefcafef00dull;
  c.field_layers = 5;
  c.query_offsets = OffsetLaw::kRadial;
  std::stringstream ss;
  c.dump(ss);
  const RunConfig back = RunConfig::parse(ss);
  EXPECT_EQ(back, c);
  EXPECT_EQ(back.field_options().architecture.residual_from, -1);
}

TEST(SyntheticSource, ParsesAllFields) {
  RunConfig c;
  c.patch_size = 64;
  EXPECT_TRUE(is_synthetic_source("synthetic"));
  EXPECT_FALSE(is_synthetic_source("/data/patches"));
  const auto dflt = parse_synthetic_source("synthetic", c);
  EXPECT_EQ(dflt.patches, 200);
  EXPECT_EQ(dflt.options.patch_size, 64u);
  EXPECT_EQ(dflt.options.kinds.size(), 3u);
  const auto s =
      parse_synthetic_source("synthetic:kinds=plane+torus,patches=12,dense_ratio=4,noise=0.01", c);
  ASSERT_EQ(s.options.kinds.size(), 2u);
  EXPECT_EQ(s.options.kinds[1], OracleSurface::Kind::kTorus);
  EXPECT_EQ(s.patches, 12);
  EXPECT_EQ(s.options.dense_ratio, 4);
  EXPECT_DOUBLE_EQ(s.options.noise, 0.01);
  EXPECT_THROW(parse_synthetic_source("synthetic:kinds=cube", c), UsageError);
  EXPECT_THROW(parse_synthetic_source("synthetic:patches=0", c), UsageError);
  EXPECT_THROW(parse_synthetic_source("synthetic:color=red", c), UsageError);
  EXPECT_THROW(parse_synthetic_source("synthetic:noise", c), UsageError);
}

}  // namespace
}  // namespace udfup
