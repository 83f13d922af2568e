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

#include "cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "udfup/config.hpp"
#include "udfup/error.hpp"
#include "udfup/field.hpp"
#include "udfup/ldi.hpp"
#include "udfup/metrics.hpp"
#include "udfup/point_io.hpp"
#include "udfup/runtime.hpp"
#include "udfup/upsampler.hpp"

namespace fs = std::filesystem;

namespace udfup::cli {
namespace {

struct Common {
  std::string config_path;
  std::string save_config;
  std::vector<std::string> overrides;
  bool verbose = false;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config_path, "key = value configuration file");
  cmd->add_option("--set", c.overrides, "override one config key (key=value)");
  cmd->add_option("--save-config", c.save_config, "write the effective configuration");
  cmd->add_flag("-v,--verbose", c.verbose, "progress lines on stderr");
}

RunConfig load_config(const Common& c) {
  RunConfig cfg = c.config_path.empty() ? RunConfig{} : RunConfig::load(c.config_path);
  for (const auto& kv : c.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw UsageError("--set expects key=value: " + kv);
    cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  cfg.validate();
  if (!c.save_config.empty()) {
    std::ofstream out(c.save_config);
    if (!out) throw DataError("cannot write " + c.save_config);
    cfg.dump(out);
  }
  return cfg;
}

template <typename Writer>
void write_file(const std::string& path, Writer&& write) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path);
  write(out);
  out.flush();
  if (!out) throw DataError("write failed for " + path);
}

LdiModel load_ldi(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  return read_ldi(in);
}

FieldModel load_field(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  return read_field(in);
}

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() &&
         s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

// <name>.sparse.(xyz|ply) paired with <name>.dense.(xyz|ply), world units.
std::vector<PatchPair> load_patch_dir(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw DataError("not a directory: " + dir.string());
  std::vector<fs::path> sparse;
  for (const auto& entry : fs::directory_iterator(dir)) {
    const std::string name = entry.path().filename().string();
    if (ends_with(name, ".sparse.xyz") || ends_with(name, ".sparse.ply")) {
      sparse.push_back(entry.path());
    }
  }
  std::sort(sparse.begin(), sparse.end());
  if (sparse.empty()) throw DataError("no *.sparse.xyz or *.sparse.ply files in " + dir.string());
  std::vector<PatchPair> pairs;
  for (const auto& s : sparse) {
    const std::string name = s.filename().string();
    const std::string stem = name.substr(0, name.size() - std::string(".sparse.xyz").size());
    std::optional<fs::path> dense;
    for (const char* ext : {".dense.xyz", ".dense.ply"}) {
      const fs::path cand = dir / (stem + ext);
      if (fs::exists(cand)) dense = cand;
    }
    if (!dense) throw DataError("no dense partner for " + s.string());
    const PointCloud sp = read_point_cloud(s);
    const PointCloud dp = read_point_cloud(*dense);
    pairs.push_back(pair_patches(std::vector<Vec3>(sp.begin(), sp.end()),
                                 std::vector<Vec3>(dp.begin(), dp.end())));
  }
  return pairs;
}

int train_ldi_cmd(const Common& common, const std::string& patches,
                  const std::string& out_path, std::ostream& out, std::ostream& err) {
  const RunConfig cfg = load_config(common);
  std::vector<PatchPair> pairs;
  if (is_synthetic_source(patches)) {
    const SyntheticSource src = parse_synthetic_source(patches, cfg);
    std::mt19937_64 rng(cfg.ldi_seed);
    for (int i = 0; i < src.patches; ++i) pairs.push_back(synthetic_patch_pair(src.options, rng));
  } else {
    pairs = load_patch_dir(patches);
  }
  std::size_t holdout = static_cast<std::size_t>(
      std::floor(cfg.ldi_holdout_fraction * static_cast<double>(pairs.size())));
  if (cfg.ldi_holdout_fraction > 0.0 && holdout == 0 && pairs.size() > 1) holdout = 1;
  const std::size_t train_count = pairs.size() - holdout;

  const LdiArchitecture arch = cfg.ldi_architecture();
  const auto interp = static_cast<std::size_t>(arch.patch_size) *
                      static_cast<std::size_t>(arch.interp_ratio);
  std::mt19937_64 sample_rng(cfg.ldi_seed + 1);
  std::vector<LdiSample> train, test;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    auto s = build_training_samples(pairs[i].sparse, pairs[i].dense,
                                    cfg.ldi_queries_per_point, cfg.ldi_query_sigma,
                                    sample_rng(), interp);
    auto& dst = i < train_count ? train : test;
    dst.insert(dst.end(), s.begin(), s.end());
  }
  LdiModel model = LdiModel::create(arch, cfg.ldi_seed);
  LdiTrainOptions opts = cfg.ldi_train_options();
  opts.log_every = common.verbose ? 500 : 0;
  const LdiTrainReport report = train_ldi(model, train, opts, common.verbose ? &err : nullptr);
  write_file(out_path, [&](std::ostream& o) { write_ldi(o, model); });
  char line[256];
  std::snprintf(line, sizeof line,
                "seed=%llu patches=%zu train_samples=%zu train_mae=%.6g",
                static_cast<unsigned long long>(cfg.ldi_seed), pairs.size(), train.size(),
                ldi_mae(model, train));
  out << line;
  if (!test.empty()) {
    std::snprintf(line, sizeof line, " heldout_samples=%zu heldout_mae=%.6g", test.size(),
                  ldi_mae(model, test));
    out << line;
  }
  out << " final_batch_mae=" << report.final_train_mae << '\n';
  return 0;
}

int fit_field_cmd(const Common& common, const std::string& input, const std::string& ldi_path,
                  const std::string& out_path, std::string report_path, std::ostream& out,
                  std::ostream& err) {
  const RunConfig cfg = load_config(common);
  const PointCloud cloud = read_point_cloud(input);
  const LdiModel ldi = load_ldi(ldi_path);
  if (report_path.empty()) report_path = out_path + ".report";
  FieldFit fit;
  try {
    fit = fit_field(cloud, ldi, cfg.field_options(), common.verbose ? &err : nullptr,
                    common.verbose ? 500 : 0);
  } catch (const FieldDivergence& e) {
    write_file(out_path, [&](std::ostream& o) { write_field(o, e.last_good()); });
    err << "last finite model written to " << out_path << '\n';
    throw;
  }
  write_file(out_path, [&](std::ostream& o) { write_field(o, fit.model); });
  write_file(report_path, [&](std::ostream& o) {
    o << "# seed=" << fit.report.seed << '\n';
    fit.report.write(o);
  });
  const double last = fit.report.steps.empty() ? 0.0 : fit.report.steps.back().losses.total;
  out << "seed=" << fit.report.seed << " steps=" << fit.report.steps.size()
      << " final_total=" << last << " skipped=" << fit.report.skipped_total
      << " early_stopped=" << (fit.report.early_stopped ? 1 : 0) << " report=" << report_path
      << '\n';
  return 0;
}

int upsample_cmd(const Common& common, const std::string& input, const std::string& field_path,
                 std::optional<double> scale, std::optional<std::size_t> count,
                 std::optional<double> oversample, const std::string& out_path,
                 std::ostream& out, std::ostream& err) {
  const RunConfig cfg = load_config(common);
  const PointCloud cloud = read_point_cloud(input);
  const FieldModel field = load_field(field_path);
  UpsampleRequest req = cfg.upsample_request();
  if (scale) req.scale = *scale;
  if (count) {
    if (*count == 0) throw UsageError("--count must be positive");
    req.target_count = *count;
  }
  if (oversample) req.oversample_ratio = *oversample;
  const UpsampleResult res = upsample(cloud, field, req, &err);
  write_point_cloud(res.points, out_path);
  out << "seed=" << req.seed << " points=" << res.points.size()
      << " generated=" << res.generated << " resampled=" << res.resampled
      << " dropped=" << res.dropped << '\n';
  return 0;
}

int evaluate_cmd(const std::string& pred_path, const std::string& ref_path,
                 const std::string& surface_spec, const std::string& out_path,
                 std::ostream& out) {
  const PointCloud pred = read_point_cloud(pred_path);
  const PointCloud ref = read_point_cloud(ref_path);
  std::optional<OracleSurface> surface;
  if (!surface_spec.empty()) {
    if (surface_spec.rfind("mesh:", 0) == 0) {
      surface = OracleSurface::mesh(read_mesh(surface_spec.substr(5)));
    } else {
      surface = OracleSurface::parse(surface_spec);
    }
  }
  const MetricsReport report = evaluate(pred, ref, surface);
  if (!out_path.empty()) {
    write_file(out_path, [&](std::ostream& o) {
      o << MetricsReport::csv_header() << '\n' << report.to_csv_row() << '\n';
    });
  }
  out << report.to_key_value();
  return 0;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  tune_allocator();
  CLI::App app{"Arbitrary-scale point cloud upsampling with a learned unsigned distance field",
               "udfup"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "udfup 0.1.0");

  Common common;
  std::string patches, ldi_out;
  auto* train = app.add_subcommand("train-ldi", "train the local distance indicator");
  train->add_option("--patches", patches, "patch directory or synthetic:spec")->required();
  train->add_option("--out", ldi_out, "indicator checkpoint")->required();
  add_common(train, common);

  std::string fit_input, fit_ldi, fit_out, fit_report;
  auto* fit = app.add_subcommand("fit-field", "fit a distance field to a sparse cloud");
  fit->add_option("--input", fit_input, "sparse cloud (.xyz or .ply)")->required();
  fit->add_option("--ldi", fit_ldi, "indicator checkpoint")->required();
  fit->add_option("--out", fit_out, "field checkpoint")->required();
  fit->add_option("--report", fit_report, "training report (default <out>.report)");
  add_common(fit, common);

  std::string up_input, up_field, up_out;
  std::optional<double> up_scale, up_oversample;
  std::optional<std::size_t> up_count;
  auto* up = app.add_subcommand("upsample", "project queries onto a fitted field");
  up->add_option("--input", up_input, "sparse cloud the field was fitted to")->required();
  up->add_option("--field", up_field, "field checkpoint")->required();
  auto* scale_opt = up->add_option("--scale", up_scale, "scale factor r (M = rN)");
  auto* count_opt = up->add_option("--count", up_count, "exact output count M");
  scale_opt->excludes(count_opt);
  up->add_option("--oversample", up_oversample, "queries per output point (>= 1)");
  up->add_option("--out", up_out, "output cloud (.xyz or .ply)")->required();
  add_common(up, common);

  std::string ev_pred, ev_ref, ev_surface, ev_out;
  auto* ev = app.add_subcommand("evaluate", "CD, HD and point-to-surface distance");
  ev->add_option("--pred", ev_pred, "predicted cloud")->required();
  ev->add_option("--ref", ev_ref, "reference cloud")->required();
  ev->add_option("--surface", ev_surface, "sphere:R | torus:R,r | plane:nx,ny,nz,d | mesh:path");
  ev->add_option("--out", ev_out, "CSV report");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForVersion& e) {
    out << e.what() << '\n';
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << '\n';
    if (!app.get_subcommands().empty()) {
      err << app.get_subcommands().front()->help();
    }
    return 1;
  }

  try {
    if (train->parsed()) return train_ldi_cmd(common, patches, ldi_out, out, err);
    if (fit->parsed()) {
      return fit_field_cmd(common, fit_input, fit_ldi, fit_out, fit_report, out, err);
    }
    if (up->parsed()) {
      if (!up_scale && !up_count) throw UsageError("upsample needs --scale or --count");
      return upsample_cmd(common, up_input, up_field, up_scale, up_count, up_oversample,
                          up_out, out, err);
    }
    if (ev->parsed()) return evaluate_cmd(ev_pred, ev_ref, ev_surface, ev_out, out);
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << '\n';
    return 1;
  } catch (const DivergenceError& e) {
    err << "training diverged: " << e.what() << '\n';
    return 3;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  }
  return 1;
}

}  // namespace udfup::cli
