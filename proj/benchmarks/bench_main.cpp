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

#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "udfup/field.hpp"
#include "udfup/geometry.hpp"
#include "udfup/ldi.hpp"
#include "udfup/metrics.hpp"
#include "udfup/mlp.hpp"
#include "udfup/upsampler.hpp"

namespace udfup {
namespace {

PointCloud sphere_cloud(std::size_t n, std::uint64_t seed = 1) {
  std::mt19937_64 rng(seed);
  return PointCloud(OracleSurface::sphere(1.0).sample(n, rng));
}

void BM_KnnQuery(benchmark::State& state) {
  const PointCloud cloud = sphere_cloud(static_cast<std::size_t>(state.range(0)));
  const SpatialIndex index(cloud);
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(-1.2, 1.2);
  for (auto _ : state) {
    const Vec3 q(u(rng), u(rng), u(rng));
    benchmark::DoNotOptimize(index.knn(q, 16));
  }
}
BENCHMARK(BM_KnnQuery)->Arg(2048)->Arg(32768);

void BM_IndexBuild(benchmark::State& state) {
  const PointCloud cloud = sphere_cloud(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) {
    SpatialIndex index(cloud);
    benchmark::DoNotOptimize(index);
  }
}
BENCHMARK(BM_IndexBuild)->Arg(2048)->Arg(32768);

void BM_Fps(benchmark::State& state) {
  const PointCloud cloud = sphere_cloud(static_cast<std::size_t>(state.range(0)));
  const auto m = static_cast<std::size_t>(state.range(0) / 3);
  for (auto _ : state) benchmark::DoNotOptimize(fps_indices(cloud.points(), m));
}
BENCHMARK(BM_Fps)->Arg(6144)->Arg(24576)->Unit(benchmark::kMillisecond);

void BM_Chamfer(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const PointCloud a = sphere_cloud(n, 1), b = sphere_cloud(n, 2);
  for (auto _ : state) benchmark::DoNotOptimize(chamfer(a, b));
}
BENCHMARK(BM_Chamfer)->Arg(8192)->Unit(benchmark::kMillisecond);

Mlp field_net(int width) {
  FieldArchitecture arch;
  arch.width = width;
  return Mlp::init(arch.spec(), 1);
}

Eigen::MatrixXd random_inputs(int rows, int cols) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> g(0.0, 0.5);
  Eigen::MatrixXd x(rows, cols);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = g(rng);
  return x;
}

void BM_FieldForward(benchmark::State& state) {
  const Mlp net = field_net(static_cast<int>(state.range(0)));
  const Eigen::MatrixXd x = random_inputs(3, 256);
  for (auto _ : state) benchmark::DoNotOptimize(net.forward(x));
  state.SetItemsProcessed(state.iterations() * x.cols());
}
BENCHMARK(BM_FieldForward)->Arg(64)->Arg(128);

void BM_FieldForwardBackward(benchmark::State& state) {
  const Mlp net = field_net(static_cast<int>(state.range(0)));
  const Eigen::MatrixXd x = random_inputs(3, 256);
  const Eigen::MatrixXd ybar = Eigen::MatrixXd::Ones(1, 256);
  for (auto _ : state) {
    Tape tape;
    net.forward(x, &tape);
    MlpGrads grads = MlpGrads::zeros_like(net);
    benchmark::DoNotOptimize(net.backward(tape, ybar, &grads));
  }
  state.SetItemsProcessed(state.iterations() * x.cols());
}
BENCHMARK(BM_FieldForwardBackward)->Arg(64)->Arg(128);

void BM_LdiBatch(benchmark::State& state) {
  LdiArchitecture arch;
  arch.patch_size = static_cast<int>(state.range(0));
  const LdiModel model = LdiModel::create(arch, 1);
  const PointCloud cloud = sphere_cloud(static_cast<std::size_t>(arch.patch_size));
  const Patch patch = patch_interpolate(make_patch(std::vector<Vec3>(cloud.begin(), cloud.end())),
                                        static_cast<std::size_t>(2 * arch.patch_size));
  const Eigen::MatrixXd q = random_inputs(3, 64) * 0.2;
  for (auto _ : state) {
    const LdiBatch batch(model, patch, q);
    benchmark::DoNotOptimize(batch.distances());
  }
  state.SetItemsProcessed(state.iterations() * q.cols());
}
BENCHMARK(BM_LdiBatch)->Arg(64)->Arg(256)->Unit(benchmark::kMillisecond);

void BM_SpherePull(benchmark::State& state) {
  const SphereUdf sphere(1.0);
  const PointCloud cloud = sphere_cloud(4096);
  QueryBatch batch;
  for (const Vec3& p : cloud) batch.push_back(1.1 * p, QuerySource::kNearSurface, -1);
  for (auto _ : state) benchmark::DoNotOptimize(project_batch(sphere, batch));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(batch.size()));
}
BENCHMARK(BM_SpherePull);

}  // namespace
}  // namespace udfup

BENCHMARK_MAIN();
