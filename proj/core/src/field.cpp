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

#include "udfup/field.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <istream>
#include <numeric>
#include <ostream>
#include <random>

#include "binary_io.hpp"

namespace udfup {
namespace {

constexpr char kFieldMagic[9] = "UDFUPFLD";
constexpr std::uint32_t kFieldVersion = 1;

double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

// One-sided slope of |v|, so the zero level keeps a usable direction.
double abs_slope(double v) { return v < 0.0 ? -1.0 : 1.0; }

}  // namespace

double DistanceField::value(const Vec3& q) const {
  Eigen::RowVectorXd v;
  evaluate(Eigen::Matrix3Xd(q), &v, nullptr);
  return v[0];
}

Vec3 DistanceField::gradient(const Vec3& q) const {
  Eigen::Matrix3Xd g;
  evaluate(Eigen::Matrix3Xd(q), nullptr, &g);
  return g.col(0);
}

SphereUdf::SphereUdf(double radius, Vec3 center)
    : radius_(radius), center_(std::move(center)) {
  if (!(radius > 0.0) || !std::isfinite(radius)) {
    throw UsageError("sphere field: radius must be positive");
  }
}

void SphereUdf::evaluate(const Eigen::Matrix3Xd& queries,
                         Eigen::RowVectorXd* values,
                         Eigen::Matrix3Xd* gradients) const {
  const Eigen::Index m = queries.cols();
  if (values) values->resize(m);
  if (gradients) gradients->resize(3, m);
  for (Eigen::Index j = 0; j < m; ++j) {
    const Vec3 d = queries.col(j) - center_;
    const double r = d.norm();
    if (values) (*values)[j] = std::abs(r - radius_);
    if (gradients) {
      gradients->col(j) =
          r > 0.0 ? Vec3(abs_slope(r - radius_) * d / r) : Vec3(Vec3::Zero());
    }
  }
}

MlpSpec FieldArchitecture::spec() const {
  if (width <= 0 || layers < 2) {
    throw UsageError("field: need positive width and at least two layers");
  }
  std::vector<int> widths(static_cast<std::size_t>(layers), width);
  widths.back() = 1;
  std::vector<Link> links;
  if (residual_from >= 0) {
    if (residual_to <= residual_from || residual_to >= layers - 1) {
      throw UsageError("field: residual link must join two hidden layers");
    }
    links.push_back({residual_from, residual_to, LinkKind::kAdd});
  }
  return MlpSpec::relu_stack(3, std::move(widths), std::move(links));
}

FieldModel FieldModel::create(const FieldArchitecture& arch, std::uint64_t seed,
                              Normalization normalization) {
  FieldModel m;
  m.net = Mlp::init(arch.spec(), seed);
  m.normalization = normalization;
  return m;
}

void FieldModel::evaluate(const Eigen::Matrix3Xd& queries,
                          Eigen::RowVectorXd* values,
                          Eigen::Matrix3Xd* gradients) const {
  Tape tape;
  const Eigen::MatrixXd y = net.forward(queries, gradients ? &tape : nullptr);
  if (values) *values = y.row(0).cwiseAbs();
  if (gradients) {
    Eigen::RowVectorXd s(y.cols());
    for (Eigen::Index j = 0; j < y.cols(); ++j) s[j] = abs_slope(y(0, j));
    *gradients = net.backward(tape, s);
  }
}

void write_field(std::ostream& out, const FieldModel& model) {
  detail::write_magic(out, kFieldMagic, kFieldVersion);
  detail::write_pod<std::uint8_t>(out, model.trained ? 1 : 0);
  detail::write_doubles(out, model.normalization.center.data(), 3);
  detail::write_pod<double>(out, model.normalization.scale);
  write_mlp(out, model.net);
}

FieldModel read_field(std::istream& in) {
  detail::expect_magic(in, kFieldMagic, kFieldVersion, "distance field");
  FieldModel m;
  const auto trained = detail::read_pod<std::uint8_t>(in);
  if (trained > 1) throw DataError("distance field: corrupt header");
  m.trained = trained == 1;
  detail::read_doubles(in, m.normalization.center.data(), 3);
  m.normalization.scale = detail::read_pod<double>(in);
  if (!m.normalization.center.allFinite() || !(m.normalization.scale > 0.0)) {
    throw DataError("distance field: corrupt normalization");
  }
  m.net = read_mlp(in);
  if (m.net.input_dim() != 3 || m.net.output_dim() != 1) {
    throw DataError("distance field: network must map 3 -> 1");
  }
  return m;
}

double LossWeights::beta(int step) const {
  if (total_steps <= 0) return beta_end;
  const double t =
      std::clamp(static_cast<double>(step) / total_steps, 0.0, 1.0);
  return beta_start + (beta_end - beta_start) * t;
}

void QueryBatch::push_back(const Vec3& q, QuerySource s, std::int64_t origin) {
  queries.push_back(q);
  sources.push_back(s);
  origins.push_back(origin);
}

Eigen::Matrix3Xd QueryBatch::matrix() const {
  Eigen::Matrix3Xd m(3, static_cast<Eigen::Index>(queries.size()));
  for (std::size_t j = 0; j < queries.size(); ++j) {
    m.col(static_cast<Eigen::Index>(j)) = queries[j];
  }
  return m;
}

QueryBatch sample_training_queries(const SpatialIndex& index, int per_point,
                                   double sigma_fraction, int nn_rank,
                                   std::size_t global_count,
                                   std::uint64_t rng_seed) {
  const PointCloud& cloud = index.cloud();
  if (per_point < 0 || nn_rank <= 0 || !(sigma_fraction >= 0.0) ||
      !std::isfinite(sigma_fraction)) {
    throw UsageError("sample_training_queries: bad parameters");
  }
  if (cloud.size() <= static_cast<std::size_t>(nn_rank)) {
    throw DataError("sample_training_queries: cloud has " +
                    std::to_string(cloud.size()) + " points, need more than " +
                    std::to_string(nn_rank));
  }
  std::mt19937_64 rng(rng_seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  QueryBatch out;
  const std::size_t total =
      cloud.size() * static_cast<std::size_t>(per_point) + global_count;
  out.queries.reserve(total);
  out.sources.reserve(total);
  out.origins.reserve(total);
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const Vec3& s = cloud[i];
    const auto nn = index.knn(s, static_cast<std::size_t>(nn_rank) + 1);
    const double sigma = sigma_fraction * nn.back().distance;
    for (int k = 0; k < per_point; ++k) {
      const Vec3 offset(gauss(rng), gauss(rng), gauss(rng));
      out.push_back(s + sigma * offset, QuerySource::kNearSurface,
                    static_cast<std::int64_t>(i));
    }
  }
  if (global_count > 0) {
    const Aabb box = bounding_box(cloud.points());
    const Vec3 pad = 0.1 * (box.hi - box.lo);
    const Vec3 lo = box.lo - pad;
    const Vec3 span = box.hi + pad - lo;
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (std::size_t k = 0; k < global_count; ++k) {
      const Vec3 u(unit(rng), unit(rng), unit(rng));
      out.push_back(lo + span.cwiseProduct(u), QuerySource::kGlobalUniform, -1);
    }
  }
  return out;
}

PullResult pull_query(const DistanceField& field, const Vec3& q,
                      double gradient_epsilon) {
  if (!q.allFinite()) throw DataError("pull_query: non-finite query");
  Eigen::RowVectorXd v;
  Eigen::Matrix3Xd g;
  field.evaluate(Eigen::Matrix3Xd(q), &v, &g);
  const double norm = g.col(0).norm();
  if (!(norm > gradient_epsilon)) throw DataError("degenerate gradient");
  return PullResult{q - v[0] * g.col(0) / norm, v[0], g.col(0)};
}

PullBatch pull_batch(const DistanceField& field, const Eigen::Matrix3Xd& queries,
                     double gradient_epsilon) {
  if (!queries.allFinite()) throw DataError("pull: non-finite query");
  Eigen::RowVectorXd v;
  Eigen::Matrix3Xd g;
  field.evaluate(queries, &v, &g);
  PullBatch out;
  out.kept.reserve(static_cast<std::size_t>(queries.cols()));
  for (Eigen::Index j = 0; j < queries.cols(); ++j) {
    if (g.col(j).norm() > gradient_epsilon) {
      out.kept.push_back(j);
    } else {
      ++out.degenerate;
    }
  }
  out.projected.resize(3, static_cast<Eigen::Index>(out.kept.size()));
  for (std::size_t i = 0; i < out.kept.size(); ++i) {
    const Eigen::Index j = out.kept[i];
    const Vec3 n = g.col(j) / g.col(j).norm();
    out.projected.col(static_cast<Eigen::Index>(i)) = queries.col(j) - v[j] * n;
  }
  return out;
}

FieldLossContext::FieldLossContext(const LdiModel& ldi, PointCloud cloud,
                                   std::size_t ldi_patch_size)
    : index_(std::make_shared<const SpatialIndex>(std::move(cloud))),
      cache_(ldi, index_, ldi_patch_size) {}

LossTerms compute_losses(const FieldModel& model, const FieldLossContext& context,
                         const Eigen::Matrix3Xd& queries,
                         const Eigen::Matrix3Xd& anchors,
                         const Eigen::Matrix3Xd& surface_batch,
                         const LossWeights& weights, int step, MlpGrads* grads,
                         double gradient_epsilon) {
  if (anchors.cols() != queries.cols()) {
    throw DataError("compute_losses: one anchor per query required");
  }
  const Mlp& net = model.net;
  const Eigen::Index m = queries.cols();
  LossTerms out;

  Tape tape;
  const Eigen::MatrixXd y = net.forward(queries, &tape);
  const Eigen::MatrixXd dy = net.backward(tape, Eigen::RowVectorXd::Ones(m));

  std::vector<Eigen::Index> valid;
  valid.reserve(static_cast<std::size_t>(m));
  for (Eigen::Index j = 0; j < m; ++j) {
    if (dy.col(j).norm() > gradient_epsilon) valid.push_back(j);
  }
  out.skipped = static_cast<std::size_t>(m) - valid.size();
  const auto nv = static_cast<Eigen::Index>(valid.size());

  // y * grad y / |grad y| equals |y| * grad|y| / |grad|y||.
  Eigen::Matrix3Xd normals(3, nv), projected(3, nv);
  for (Eigen::Index i = 0; i < nv; ++i) {
    const Eigen::Index j = valid[static_cast<std::size_t>(i)];
    normals.col(i) = dy.col(j) / dy.col(j).norm();
    projected.col(i) = queries.col(j) - y(0, j) * normals.col(i);
  }
  Eigen::RowVectorXd local;
  Eigen::Matrix3Xd local_grad;
  if (nv > 0) {
    context.indicator().infer(projected, &local, grads ? &local_grad : nullptr);
  }

  Eigen::Matrix3Xd to_anchor(3, nv);
  Eigen::RowVectorXd anchor_dist(nv);
  for (Eigen::Index i = 0; i < nv; ++i) {
    const Eigen::Index j = valid[static_cast<std::size_t>(i)];
    to_anchor.col(i) = projected.col(i) - anchors.col(j);
    anchor_dist[i] = to_anchor.col(i).norm();
    out.local += local[i];
    out.nearest_point += anchor_dist[i];
    out.shortest_path += std::abs(y(0, j));
  }
  if (nv > 0) {
    out.local /= static_cast<double>(nv);
    out.nearest_point /= static_cast<double>(nv);
    out.shortest_path /= static_cast<double>(nv);
  }

  Tape surf_tape;
  Eigen::MatrixXd ys;
  if (surface_batch.cols() > 0) {
    ys = net.forward(surface_batch, grads ? &surf_tape : nullptr);
    out.surface = ys.cwiseAbs().mean();
  }
  const double beta = weights.beta(step);
  out.total = out.local + weights.alpha * out.nearest_point +
              beta * out.surface + weights.gamma * out.shortest_path;
  if (!grads) return out;

  Eigen::RowVectorXd ybar = Eigen::RowVectorXd::Zero(m);
  Eigen::Matrix3Xd tangent = Eigen::Matrix3Xd::Zero(3, m);
  const double inv = nv > 0 ? 1.0 / static_cast<double>(nv) : 0.0;
  for (Eigen::Index i = 0; i < nv; ++i) {
    const Eigen::Index j = valid[static_cast<std::size_t>(i)];
    Vec3 a = local_grad.col(i);
    if (anchor_dist[i] > 0.0) a += weights.alpha * to_anchor.col(i) / anchor_dist[i];
    a *= inv;
    const Vec3 n = normals.col(i);
    const double an = a.dot(n);
    ybar[j] = -an + weights.gamma * sign(y(0, j)) * inv;
    tangent.col(j) = -(y(0, j) / dy.col(j).norm()) * (a - an * n);
  }
  net.forward_tangent(tape, tangent);
  net.backward_dual(tape, ybar, Eigen::RowVectorXd::Ones(m), grads);

  if (surface_batch.cols() > 0 && beta != 0.0) {
    Eigen::RowVectorXd sbar(ys.cols());
    const double scale = beta / static_cast<double>(ys.cols());
    for (Eigen::Index j = 0; j < ys.cols(); ++j) sbar[j] = scale * sign(ys(0, j));
    net.backward(surf_tape, sbar, grads);
  }
  return out;
}

void FieldFitReport::write(std::ostream& out) const {
  char line[320];
  for (const auto& r : steps) {
    std::snprintf(line, sizeof line,
                  "step=%d local=%.9g np=%.9g surf=%.9g sp=%.9g total=%.9g "
                  "beta=%.9g skipped=%zu\n",
                  r.step, r.losses.local, r.losses.nearest_point,
                  r.losses.surface, r.losses.shortest_path, r.losses.total,
                  r.beta, r.losses.skipped);
    out << line;
  }
}

FieldDivergence::FieldDivergence(const std::string& what, FieldModel last_good)
    : DivergenceError(what), last_good_(std::move(last_good)) {}

FieldFit fit_field(const PointCloud& cloud, const LdiModel& ldi,
                   const FieldFitOptions& options, std::ostream* log,
                   int log_every) {
  if (options.max_steps < 0 || options.batch_size <= 0 ||
      options.surface_batch < 0 || !(options.global_fraction >= 0.0) ||
      !(options.learning_rate > 0.0) || options.early_stop_window <= 0) {
    throw UsageError("fit_field: bad options");
  }
  const NormalizedCloud norm = normalize_unit(cloud);
  FieldFit fit;
  fit.model = FieldModel::create(options.architecture, options.seed, norm.transform);
  fit.report.seed = options.seed;
  if (options.max_steps == 0) return fit;

  const FieldLossContext context(ldi, norm.cloud, options.ldi_patch_size);
  const SpatialIndex& index = context.index();
  const auto near_count = norm.cloud.size() *
                          static_cast<std::size_t>(std::max(0, options.queries_per_point));
  const auto global_count = static_cast<std::size_t>(
      std::llround(options.global_fraction * static_cast<double>(near_count)));
  const std::uint64_t query_seed = options.seed ^ 0x9e3779b97f4a7c15ULL;
  const QueryBatch pool =
      sample_training_queries(index, options.queries_per_point,
                              options.sigma_fraction, options.nn_rank,
                              global_count, query_seed);
  if (pool.size() == 0) throw UsageError("fit_field: no training queries");
  std::vector<Vec3> anchors(pool.size());
  for (std::size_t i = 0; i < pool.size(); ++i) {
    anchors[i] = norm.cloud[index.knn(pool.queries[i], 1).front().index];
  }

  LossWeights weights = options.weights;
  weights.total_steps = options.max_steps;
  Adam adam(Adam::Options{.learning_rate = options.learning_rate});
  std::mt19937_64 rng(options.seed + 1);
  std::uniform_int_distribution<std::size_t> pick_query(0, pool.size() - 1);
  std::uniform_int_distribution<std::size_t> pick_point(0, norm.cloud.size() - 1);
  MlpGrads grads = MlpGrads::zeros_like(fit.model.net);
  const auto b = static_cast<Eigen::Index>(options.batch_size);
  const auto sb = static_cast<Eigen::Index>(
      std::min<std::size_t>(static_cast<std::size_t>(options.surface_batch),
                            norm.cloud.size()));
  Eigen::Matrix3Xd q(3, b), a(3, b), s(3, sb);
  std::vector<double> prefix{0.0};
  const int w = options.early_stop_window;
  fit.report.steps.reserve(static_cast<std::size_t>(options.max_steps));

  for (int step = 0; step < options.max_steps; ++step) {
    for (Eigen::Index j = 0; j < b; ++j) {
      const std::size_t i = pick_query(rng);
      q.col(j) = pool.queries[i];
      a.col(j) = anchors[i];
    }
    for (Eigen::Index j = 0; j < sb; ++j) s.col(j) = norm.cloud[pick_point(rng)];
    grads.set_zero();
    LossTerms terms;
    try {
      terms = compute_losses(fit.model, context, q, a, s, weights, step, &grads);
    } catch (const DataError& e) {
      throw FieldDivergence(std::string("fit_field: diverged at step ") +
                                std::to_string(step) + ": " + e.what(),
                            fit.model);
    }
    if (!std::isfinite(terms.total) || !std::isfinite(grads.max_abs())) {
      throw FieldDivergence("fit_field: non-finite loss at step " +
                                std::to_string(step),
                            fit.model);
    }
    optimizer_step(adam, fit.model.net, grads);
    fit.report.steps.push_back({step, terms, weights.beta(step)});
    fit.report.skipped_total += terms.skipped;
    prefix.push_back(prefix.back() + terms.total);
    if (log && log_every > 0 && (step + 1) % log_every == 0) {
      *log << "field step " << (step + 1) << " total " << terms.total
           << " local " << terms.local << " np " << terms.nearest_point
           << " surf " << terms.surface << '\n';
    }
    const int done = step + 1;
    if (options.early_stop_tolerance > 0.0 && done >= 2 * w && done % w == 0) {
      const double recent = prefix[done] - prefix[done - w];
      const double before = prefix[done - w] - prefix[done - 2 * w];
      if (before - recent < options.early_stop_tolerance * before) {
        fit.report.early_stopped = true;
        break;
      }
    }
  }
  fit.model.trained = true;
  return fit;
}

}  // namespace udfup
