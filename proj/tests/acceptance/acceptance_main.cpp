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

// End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
// exits non-zero when any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "test_util.hpp"
#include "udfup/field.hpp"
#include "udfup/geometry.hpp"
#include "udfup/ldi.hpp"
#include "udfup/metrics.hpp"
#include "udfup/mlp.hpp"
#include "udfup/point_io.hpp"
#include "udfup/runtime.hpp"
#include "udfup/upsampler.hpp"

namespace udfup {
namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

struct Outcome {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    pass = pass && ok;
    if (!detail.empty()) detail += "; ";
    detail += what + (ok ? "" : " [FAILED]");
  }
};

int failures = 0;

void report(int id, const std::string& name, const Outcome& o, double secs) {
  if (!o.pass) ++failures;
  std::printf("criterion %2d %s  %s (%.1f s): %s\n", id, o.pass ? "PASS" : "FAIL", name.c_str(),
              secs, o.detail.c_str());
  std::fflush(stdout);
}

std::string bytes_of(auto&& writer) {
  std::ostringstream s(std::ios::binary);
  writer(s);
  return s.str();
}

// ---------------------------------------------------------------- 1
Outcome gradients() {
  std::mt19937_64 rng(2026);
  constexpr double h = 1e-4;
  double worst_in = 0.0, worst_par = 0.0;
  int pairs = 0, skipped = 0;
  using testing::rel_err;
  using testing::same_pattern;
  while (pairs < 100) {
    Mlp m = Mlp::init(testing::random_spec(rng), rng());
    testing::randomize_biases(m, rng);
    const Eigen::VectorXd x = testing::random_vector(m.input_dim(), rng);
    const Eigen::VectorXd cot = testing::random_vector(m.output_dim(), rng);
    const auto base = forward(m, x);
    const Eigen::VectorXd gx = grad_input(base.tape, cot);
    const MlpGrads gp = grad_params(base.tape, cot);
    bool kink = false;
    double in_err = 0.0, par_err = 0.0;
    for (int i = 0; i < x.size() && !kink; ++i) {
      Eigen::VectorXd xp = x, xm = x;
      xp[i] += h;
      xm[i] -= h;
      const auto fp = forward(m, xp), fm = forward(m, xm);
      kink = !same_pattern(fp.tape, base.tape) || !same_pattern(fm.tape, base.tape);
      in_err = std::max(in_err, rel_err(gx[i], (cot.dot(fp.output) - cot.dot(fm.output)) / (2 * h)));
    }
    for (int l = 0; l < m.num_layers() && !kink; ++l) {
      const auto nw = m.weight(l).size();
      for (Eigen::Index j = 0; j < nw + m.bias(l).size() && !kink; ++j) {
        Mlp p = m, q = m;
        const bool w = j < nw;
        double& vp = w ? p.mutable_weight(l).data()[j] : p.mutable_bias(l)[j - nw];
        double& vq = w ? q.mutable_weight(l).data()[j] : q.mutable_bias(l)[j - nw];
        vp += h;
        vq -= h;
        const auto fp = forward(p, x), fq = forward(q, x);
        kink = !same_pattern(fp.tape, base.tape) || !same_pattern(fq.tape, base.tape);
        const double fd = (cot.dot(fp.output) - cot.dot(fq.output)) / (2 * h);
        par_err = std::max(par_err, rel_err(w ? gp.weights[l].data()[j] : gp.biases[l][j - nw], fd));
      }
    }
    if (kink) {
      ++skipped;
      continue;
    }
    worst_in = std::max(worst_in, in_err);
    worst_par = std::max(worst_par, par_err);
    ++pairs;
  }
  Outcome o;
  o.require(worst_in < 1e-5, fmt("input rel err %.2e < 1e-5", worst_in));
  o.require(worst_par < 1e-5, fmt("param rel err %.2e < 1e-5", worst_par));
  o.detail += fmt(" (%d pairs, %d redrawn at a ReLU kink)", pairs, skipped);
  return o;
}

// ---------------------------------------------------------------- 2
Outcome spatial() {
  std::mt19937_64 rng(7);
  std::uniform_int_distribution<std::size_t> size(1, 256), small(1, 64);
  double knn_err = 0.0, cd_err = 0.0, hd_err = 0.0;
  bool knn_index_ok = true, fps_ok = true;
  for (int t = 0; t < 100; ++t) {
    const PointCloud a = testing::random_cloud(size(rng), rng);
    const PointCloud b = testing::random_cloud(size(rng), rng, 2.0);
    const SpatialIndex index(a);
    for (int qi = 0; qi < 8; ++qi) {
      const Vec3 q = testing::random_vec(rng, 1.5);
      const std::size_t k = std::min<std::size_t>(a.size(), 1 + rng() % 16);
      const auto got = knn_search(index, q, k);
      const auto want = testing::brute_knn(a, q, k);
      for (std::size_t i = 0; i < k; ++i) {
        knn_err = std::max(knn_err, std::abs(got[i].distance - want[i].distance));
        knn_index_ok = knn_index_ok && got[i].index == want[i].index;
      }
    }
    const double cd_want = 0.5 * (testing::brute_directed_sq_mean(a, b) +
                                  testing::brute_directed_sq_mean(b, a));
    const double hd_want = std::max(testing::brute_directed_max(a, b),
                                    testing::brute_directed_max(b, a));
    cd_err = std::max(cd_err, std::abs(chamfer(a, b) - cd_want));
    hd_err = std::max(hd_err, std::abs(hausdorff(a, b) - hd_want));
    const PointCloud c = testing::random_cloud(small(rng), rng);
    const std::size_t m = 1 + rng() % c.size();
    const std::size_t seed = rng() % c.size();
    fps_ok = fps_ok && fps_indices(c.points(), m, seed) == testing::brute_fps(c, m, seed);
  }
  Outcome o;
  o.require(knn_err <= 1e-12 && knn_index_ok, fmt("knn max err %.1e", knn_err));
  o.require(cd_err <= 1e-12, fmt("chamfer max err %.1e", cd_err));
  o.require(hd_err <= 1e-12, fmt("hausdorff max err %.1e", hd_err));
  o.require(fps_ok, "fps identical to greedy brute force");
  return o;
}

// ---------------------------------------------------------------- 3
Outcome analytic_pull() {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> radius(0.5, 1.5);
  QueryBatch batch;
  for (const Vec3& d : testing::sphere_samples(20000, 1.0, rng)) {
    double r;
    do {
      r = radius(rng);
    } while (r == 0.5);
    batch.push_back(r * d, QuerySource::kNearSurface, -1);
  }
  const Projection p = project_batch(SphereUdf(1.0), batch);
  double worst = 0.0;
  for (const Vec3& q : p.points) worst = std::max(worst, std::abs(q.norm() - 1.0));
  Outcome o;
  o.require(p.dropped == 0 && p.points.size() == batch.size(),
            fmt("%zu of %zu projected", p.points.size(), batch.size()));
  o.require(worst < 1e-12, fmt("max | |q'| - 1 | = %.2e < 1e-12", worst));
  return o;
}

// ---------------------------------------------------------------- 4-6
constexpr int kLdiPatchSize = 64;

struct LdiRun {
  LdiModel model;
  std::size_t train_samples = 0;
  double heldout_mae = 0.0;
  double worst_weight_violation = 0.0;
  double worst_permutation_diff = 0.0;
  std::size_t checked_passes = 0;
};

LdiRun train_desk_ldi() {
  SyntheticPatchOptions opt;
  opt.patch_size = kLdiPatchSize;
  opt.kinds = {OracleSurface::Kind::kPlane, OracleSurface::Kind::kSphere};
  LdiArchitecture arch;
  arch.patch_size = kLdiPatchSize;
  std::mt19937_64 rng(1);
  std::vector<LdiSample> train, test;
  std::vector<std::shared_ptr<const Patch>> heldout_patches;
  for (int p = 0; p < 220; ++p) {
    const PatchPair pair = synthetic_patch_pair(opt, rng);
    auto s = build_training_samples(pair.sparse, pair.dense, 4, 0.1, rng(),
                                    2 * kLdiPatchSize);
    if (p >= 200) heldout_patches.push_back(s.front().patch);
    auto& dst = p < 200 ? train : test;
    dst.insert(dst.end(), s.begin(), s.end());
  }
  LdiRun run;
  run.train_samples = train.size();
  run.model = LdiModel::create(arch, 1);
  LdiTrainOptions to;
  to.steps = 8000;
  to.learning_rate = 3e-3;
  to.final_lr_fraction = 0.05;
  to.seed = 1;
  to.log_every = 2000;
  train_ldi(run.model, train, to, &std::cerr);
  run.heldout_mae = ldi_mae(run.model, test);

  // Every held-out forward pass, on the patch and on a shuffled copy.
  std::mt19937_64 perm_rng(11);
  for (const auto& patch : heldout_patches) {
    std::vector<Vec3> qs;
    for (const auto& s : test) {
      if (s.patch == patch) qs.push_back(s.query);
    }
    Eigen::Matrix3Xd q(3, static_cast<Eigen::Index>(qs.size()));
    for (std::size_t j = 0; j < qs.size(); ++j) q.col(static_cast<Eigen::Index>(j)) = qs[j];
    Patch shuffled = *patch;
    std::vector<std::size_t> order(shuffled.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), perm_rng);
    for (std::size_t i = 0; i < order.size(); ++i) shuffled.points[i] = patch->points[order[i]];
    shuffled.source_indices.clear();
    const LdiBatch a(run.model, *patch, q), b(run.model, shuffled, q);
    for (const LdiBatch* batch : {&a, &b}) {
      const Eigen::MatrixXd w = batch->weights();
      const double lo = w.minCoeff(), hi = w.maxCoeff();
      run.worst_weight_violation =
          std::max({run.worst_weight_violation, -lo, hi - 1.0, 0.0});
      ++run.checked_passes;
    }
    run.worst_permutation_diff = std::max(
        run.worst_permutation_diff, (a.distances() - b.distances()).cwiseAbs().maxCoeff());
  }
  return run;
}

FieldFitOptions desk_field_options() {
  FieldFitOptions o;
  o.max_steps = 10000;
  o.seed = 1;
  return o;
}

PointCloud sphere_input(std::size_t n, double noise, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<Vec3> pts = OracleSurface::sphere(1.0).sample(n, rng);
  std::normal_distribution<double> g(0.0, noise > 0.0 ? noise : 1.0);
  if (noise > 0.0) {
    for (auto& p : pts) p += Vec3(g(rng), g(rng), g(rng));
  }
  return PointCloud(std::move(pts));
}

struct FieldQuality {
  double input_mean = 0.0;  // mean field value at the input points
  double residual_mean = 0.0;
  double residual_p95 = 0.0;
  double reduced_fraction = 0.0;
  std::size_t projected = 0;
  std::size_t dropped = 0;
};

// Pulls 4096 inference queries once and scores them against the unit sphere.
FieldQuality sphere_quality(const FieldModel& model, const PointCloud& cloud) {
  const Normalization& t = model.normalization;
  FieldQuality fq;
  for (const Vec3& p : cloud) fq.input_mean += model.value(t.to_local(p)) * t.scale;
  fq.input_mean /= static_cast<double>(cloud.size());

  const SpatialIndex local(apply(t, cloud));
  const QueryBatch batch = generate_inference_queries(local, 4096, 99);
  const Projection proj = project_batch(model, batch);
  const OracleSurface sphere = OracleSurface::sphere(1.0);
  std::vector<double> res;
  std::size_t reduced = 0;
  for (std::size_t i = 0; i < proj.points.size(); ++i) {
    const Vec3 before = t.to_world(batch.queries[proj.kept[i]]);
    const Vec3 after = t.to_world(proj.points[i]);
    res.push_back(std::abs(after.norm() - 1.0));
    if (oracle_udf(sphere, after).distance < oracle_udf(sphere, before).distance) ++reduced;
  }
  fq.projected = proj.points.size();
  fq.dropped = proj.dropped;
  fq.reduced_fraction = static_cast<double>(reduced) / static_cast<double>(batch.size());
  fq.residual_mean = std::accumulate(res.begin(), res.end(), 0.0) / static_cast<double>(res.size());
  std::sort(res.begin(), res.end());
  fq.residual_p95 = res[std::min(res.size() - 1, res.size() * 95 / 100)];
  return fq;
}

struct ScaleRun {
  double scale = 0.0;
  UpsampleResult result;
  double cd_output = 0.0;
  double cd_baseline = 0.0;
  double seconds = 0.0;
};

struct PipelineRun {
  LdiRun ldi;
  double ldi_seconds = 0.0;
  PointCloud cloud;
  FieldFit fit;
  double fit_seconds = 0.0;
  FieldQuality quality;
  std::vector<ScaleRun> scales;
  std::string ldi_bytes, field_bytes, report_text;
  std::vector<std::string> output_bytes;
};

ScaleRun upsample_sphere(const PointCloud& cloud, const FieldModel& model, double scale) {
  ScaleRun s;
  s.scale = scale;
  const auto t0 = Clock::now();
  UpsampleRequest req;
  req.scale = scale;
  s.result = upsample(cloud, model, req, &std::cerr);
  s.seconds = seconds_since(t0);
  const std::size_t m = s.result.points.size();
  const OracleSurface sphere = OracleSurface::sphere(1.0);
  std::mt19937_64 ref_rng(1000 + static_cast<std::uint64_t>(scale));
  std::mt19937_64 alt_rng(2000 + static_cast<std::uint64_t>(scale));
  const PointCloud reference(sphere.sample(m, ref_rng));
  const PointCloud independent(sphere.sample(m, alt_rng));
  s.cd_output = chamfer(s.result.points, reference);
  s.cd_baseline = chamfer(independent, reference);
  return s;
}

PipelineRun run_pipeline() {
  PipelineRun run;
  auto t0 = Clock::now();
  run.ldi = train_desk_ldi();
  run.ldi_seconds = seconds_since(t0);
  run.ldi_bytes = bytes_of([&](std::ostream& o) { write_ldi(o, run.ldi.model); });

  run.cloud = sphere_input(512, 0.0, 5);
  t0 = Clock::now();
  run.fit = fit_field(run.cloud, run.ldi.model, desk_field_options(), &std::cerr, 1000);
  run.fit_seconds = seconds_since(t0);
  run.field_bytes = bytes_of([&](std::ostream& o) { write_field(o, run.fit.model); });
  run.report_text = bytes_of([&](std::ostream& o) { run.fit.report.write(o); });
  run.quality = sphere_quality(run.fit.model, run.cloud);

  for (double r : {4.0, 16.0}) {
    run.scales.push_back(upsample_sphere(run.cloud, run.fit.model, r));
    run.output_bytes.push_back(
        bytes_of([&](std::ostream& o) { write_ply(o, run.scales.back().result.points, true); }));
  }
  return run;
}

Outcome ldi_outcome(const PipelineRun& run) {
  Outcome o;
  o.require(run.ldi.train_samples >= 50000, fmt("%zu training samples", run.ldi.train_samples));
  o.require(run.ldi.heldout_mae < 0.02, fmt("held-out MAE %.5f < 0.02", run.ldi.heldout_mae));
  o.require(run.ldi.worst_weight_violation == 0.0,
            fmt("weights in [0,1] on %zu passes", run.ldi.checked_passes));
  o.require(run.ldi.worst_permutation_diff <= 1e-12,
            fmt("permutation diff %.1e", run.ldi.worst_permutation_diff));
  o.require(run.ldi_seconds < 600.0, fmt("%.0f s < 600 s", run.ldi_seconds));
  return o;
}

Outcome field_outcome(const PipelineRun& run) {
  const FieldQuality& q = run.quality;
  Outcome o;
  o.require(static_cast<int>(run.fit.report.steps.size()) <= 10000,
            fmt("%zu steps", run.fit.report.steps.size()));
  o.require(q.input_mean < 0.01, fmt("(a) mean |g| at inputs %.4f < 0.01", q.input_mean));
  o.require(q.residual_mean < 0.01 && q.residual_p95 < 0.03,
            fmt("(b) residual mean %.4f < 0.01, p95 %.4f < 0.03 over %zu (dropped %zu)",
                q.residual_mean, q.residual_p95, q.projected, q.dropped));
  o.require(q.reduced_fraction >= 0.9,
            fmt("(c) %.3f of queries closer after one pull", q.reduced_fraction));
  o.require(run.fit_seconds < 900.0, fmt("%.0f s < 900 s", run.fit_seconds));
  return o;
}

Outcome scale_outcome(const PipelineRun& run) {
  Outcome o;
  double secs = 0.0;
  for (const ScaleRun& s : run.scales) {
    o.require(s.cd_output <= 1.5 * s.cd_baseline,
              fmt("r=%g: CD %.3e <= 1.5 x %.3e (M=%zu)", s.scale, s.cd_output, s.cd_baseline,
                  s.result.points.size()));
    secs += s.seconds;
  }
  o.require(secs < 300.0, fmt("%.0f s < 300 s", secs));
  return o;
}

// ---------------------------------------------------------------- 7
void uniformity(Outcome& o, const std::string& label, const UpsampleResult& r) {
  const double after = nn_distance_cv(r.points), before = nn_distance_cv(r.projected);
  o.require(after <= before, fmt("%s CV %.3f <= %.3f", label.c_str(), after, before));
}

// ---------------------------------------------------------------- 9
Outcome exact_count(const LdiModel& ldi) {
  const PointCloud cloud = sphere_input(2048, 0.0, 17);
  FieldFitOptions opts = desk_field_options();
  opts.max_steps = 300;
  opts.queries_per_point = 16;
  const FieldFit fit = fit_field(cloud, ldi, opts);
  Outcome o;
  std::string counts;
  bool all = true;
  for (int r : {3, 4, 5, 7, 13, 16}) {
    UpsampleRequest req;
    req.scale = r;
    const auto res = upsample(cloud, fit.model, req);
    all = all && res.points.size() == static_cast<std::size_t>(r) * cloud.size();
    counts += fmt("%s%d->%zu", counts.empty() ? "" : " ", r, res.points.size());
  }
  o.require(all, "r*N points for " + counts);
  return o;
}

Outcome timed(Outcome (*fn)(), double limit, double* secs) {
  const auto t0 = Clock::now();
  Outcome o = fn();
  *secs = seconds_since(t0);
  o.require(*secs < limit, fmt("%.2f s < %g s", *secs, limit));
  return o;
}

int run_all() {
  tune_allocator();
  double secs = 0.0;
  Outcome o = timed(gradients, 10.0, &secs);
  report(1, "gradient correctness", o, secs);
  o = timed(spatial, 30.0, &secs);
  report(2, "spatial structures vs brute force", o, secs);
  o = timed(analytic_pull, 1.0, &secs);
  report(3, "analytic sphere pull", o, secs);

  const PipelineRun first = run_pipeline();
  report(4, "indicator desk training", ldi_outcome(first), first.ldi_seconds);
  report(5, "sphere field fit", field_outcome(first), first.fit_seconds);
  report(6, "arbitrary scale, one field", scale_outcome(first),
         first.scales[0].seconds + first.scales[1].seconds);

  auto t0 = Clock::now();
  o = Outcome{};
  for (const ScaleRun& s : first.scales) {
    uniformity(o, fmt("sphere r=%g", s.scale), s.result);
  }
  {
    std::mt19937_64 rng(23);
    const PointCloud torus(OracleSurface::torus(1.0, 0.35).sample(512, rng));
    const FieldFit fit = fit_field(torus, first.ldi.model, desk_field_options(), &std::cerr, 1000);
    UpsampleRequest req;
    req.scale = 4.0;
    uniformity(o, "torus r=4", upsample(torus, fit.model, req, &std::cerr));
  }
  report(7, "FPS uniformity", o, seconds_since(t0));

  t0 = Clock::now();
  {
    const PointCloud noisy = sphere_input(512, 0.01, 5);
    const FieldFit fit = fit_field(noisy, first.ldi.model, desk_field_options(), &std::cerr, 1000);
    const FieldQuality q = sphere_quality(fit.model, noisy);
    o = Outcome{};
    o.require(q.residual_mean < 0.02 && q.residual_p95 < 0.06,
              fmt("residual mean %.4f < 0.02, p95 %.4f < 0.06 (%zu steps)", q.residual_mean,
                  q.residual_p95, fit.report.steps.size()));
  }
  report(8, "noisy sphere fit", o, seconds_since(t0));

  t0 = Clock::now();
  o = exact_count(first.ldi.model);
  report(9, "exact output count", o, seconds_since(t0));

  t0 = Clock::now();
  const PipelineRun second = run_pipeline();
  o = Outcome{};
  o.require(first.ldi_bytes == second.ldi_bytes,
            fmt("indicator checkpoint (%zu bytes)", first.ldi_bytes.size()));
  o.require(first.field_bytes == second.field_bytes,
            fmt("field checkpoint (%zu bytes)", first.field_bytes.size()));
  o.require(first.output_bytes == second.output_bytes, "upsampled clouds r=4, r=16");
  o.require(first.report_text == second.report_text, "loss curves");
  report(10, "determinism of 4-6", o, seconds_since(t0));

  std::printf("%d of 10 criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}

}  // namespace
}  // namespace udfup

int main() { return udfup::run_all(); }
