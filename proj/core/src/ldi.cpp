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

#include "udfup/ldi.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <numbers>
#include <numeric>
#include <ostream>
#include <set>
#include <string>

#include <Eigen/Geometry>

#include "binary_io.hpp"
#include "udfup/error.hpp"

namespace udfup {
namespace {

constexpr char kLdiMagic[9] = "UDFUPLDI";
constexpr std::uint32_t kLdiVersion = 1;

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

// Every layer sees the outputs of all earlier layers and the input; all
// layers use ReLU so the max-pooled features are non-negative.
MlpSpec dense_block(int input_dim, const std::vector<int>& hidden, int out_dim) {
  MlpSpec spec;
  spec.input_dim = input_dim;
  spec.widths = hidden;
  spec.widths.push_back(out_dim);
  spec.activations.assign(spec.widths.size(), Activation::kRelu);
  const int n = spec.num_layers();
  for (int l = 1; l < n; ++l) {
    for (int s = -1; s < l - 1; ++s) {
      spec.links.push_back({s, l, LinkKind::kConcat});
    }
  }
  return spec;
}

MlpSpec feature_mlp(int input_dim, const std::vector<int>& hidden,
                    int out_dim) {
  MlpSpec spec = MlpSpec::relu_stack(input_dim, hidden);
  spec.widths.push_back(out_dim);
  spec.activations.assign(spec.widths.size(), Activation::kRelu);
  return spec;
}

// Indices of the k nearest patch points to q, ordered by (distance, index).
void nearest_in_patch(const std::vector<Vec3>& pts, const Vec3& q, int k,
                      std::vector<std::pair<double, std::size_t>>& scratch,
                      std::size_t* out) {
  scratch.resize(pts.size());
  for (std::size_t i = 0; i < pts.size(); ++i) {
    scratch[i] = {(pts[i] - q).squaredNorm(), i};
  }
  std::partial_sort(scratch.begin(), scratch.begin() + k, scratch.end());
  for (int d = 0; d < k; ++d) out[d] = scratch[static_cast<std::size_t>(d)].second;
}

Eigen::Matrix3Xd to_matrix(const std::vector<Vec3>& pts) {
  Eigen::Matrix3Xd m(3, static_cast<Eigen::Index>(pts.size()));
  for (std::size_t i = 0; i < pts.size(); ++i) {
    m.col(static_cast<Eigen::Index>(i)) = pts[i];
  }
  return m;
}

void append_blocks(std::vector<std::span<const double>>& out,
                   const MlpGrads& g) {
  for (auto b : g.blocks()) out.push_back(b);
}

Eigen::Matrix3d random_rotation(std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  Eigen::Quaterniond q(g(rng), g(rng), g(rng), g(rng));
  q.normalize();
  return q.toRotationMatrix();
}

}  // namespace

void LdiArchitecture::validate() const {
  if (feature_dim <= 0) throw UsageError("ldi: feature_dim must be positive");
  if (k_neighbors <= 0) throw UsageError("ldi: k_neighbors must be positive");
  if (patch_size <= 0) throw UsageError("ldi: patch_size must be positive");
  if (interp_ratio < 1) throw UsageError("ldi: interp_ratio must be >= 1");
  if (k_neighbors >= patch_size * interp_ratio) {
    throw UsageError("ldi: k_neighbors must be smaller than the patch size");
  }
}

LdiModel LdiModel::create(const LdiArchitecture& arch, std::uint64_t seed) {
  arch.validate();
  const int d = arch.feature_dim;
  LdiModel m;
  m.feature_extractor =
      Mlp::init(dense_block(3, arch.extractor_hidden, d), seed);
  m.relative_encoder =
      Mlp::init(feature_mlp(3, arch.encoder_hidden, d), seed + 1);
  std::vector<int> wh = arch.weight_hidden;
  wh.push_back(1);
  m.weight_head = Mlp::init(MlpSpec::relu_stack(2 * d, wh), seed + 2);
  std::vector<int> dh = arch.distance_hidden;
  dh.push_back(1);
  m.distance_head = Mlp::init(MlpSpec::relu_stack(2 * d + 3, dh), seed + 3);
  m.k_neighbors = arch.k_neighbors;
  m.patch_size = arch.patch_size;
  m.interp_ratio = arch.interp_ratio;
  return m;
}

LdiGrads LdiGrads::zeros_like(const LdiModel& model) {
  return LdiGrads{MlpGrads::zeros_like(model.feature_extractor),
                  MlpGrads::zeros_like(model.relative_encoder),
                  MlpGrads::zeros_like(model.weight_head),
                  MlpGrads::zeros_like(model.distance_head)};
}

std::vector<std::span<const double>> LdiGrads::blocks() const {
  std::vector<std::span<const double>> out;
  append_blocks(out, feature_extractor);
  append_blocks(out, relative_encoder);
  append_blocks(out, weight_head);
  append_blocks(out, distance_head);
  return out;
}

std::vector<std::span<double>> parameter_blocks(LdiModel& model) {
  std::vector<std::span<double>> out;
  for (Mlp* m : {&model.feature_extractor, &model.relative_encoder,
                 &model.weight_head, &model.distance_head}) {
    for (auto b : m->parameter_blocks()) out.push_back(b);
  }
  return out;
}

Patch patch_interpolate(const Patch& sparse_patch, std::size_t target_count) {
  const std::size_t n = sparse_patch.size();
  if (n == 0) throw DataError("patch_interpolate: empty patch");
  if (target_count < n) {
    throw DataError("patch_interpolate: target " + std::to_string(target_count) +
                    " below patch size " + std::to_string(n));
  }
  Patch out = sparse_patch;
  if (target_count == n) return out;

  std::set<std::array<double, 3>> seen;
  for (const auto& p : out.points) seen.insert({p.x(), p.y(), p.z()});

  // Grow in passes; each pass joins the current points with their nearest
  // neighbors in rank order.
  while (out.points.size() < target_count) {
    const std::vector<Vec3> base = out.points;
    const std::size_t nb = base.size();
    const std::size_t needed = target_count - nb;
    std::size_t ranks = std::min(nb - 1, 2 * ((needed + nb - 1) / nb) + 1);
    if (ranks == 0) {
      throw DataError("patch_interpolate: cannot grow a single-point patch");
    }
    const SpatialIndex index{PointCloud(base)};
    const std::size_t before = out.points.size();
    for (;;) {
      std::vector<std::vector<std::size_t>> nbrs(nb);
      for (std::size_t i = 0; i < nb; ++i) {
        for (const auto& nn : index.knn(base[i], ranks + 1)) {
          if (nn.index != i) nbrs[i].push_back(nn.index);
        }
        nbrs[i].resize(ranks);
      }
      for (std::size_t r = 0; r < ranks && out.points.size() < target_count;
           ++r) {
        for (std::size_t i = 0; i < nb && out.points.size() < target_count;
             ++i) {
          const Vec3 mid = 0.5 * (base[i] + base[nbrs[i][r]]);
          if (seen.insert({mid.x(), mid.y(), mid.z()}).second) {
            out.points.push_back(mid);
          }
        }
      }
      if (out.points.size() >= target_count || ranks == nb - 1) break;
      // Too many coincident midpoints: widen to every neighbor rank. Points
      // already added are skipped by the duplicate check.
      ranks = nb - 1;
    }
    if (out.points.size() == before) {
      throw DataError("patch_interpolate: no new midpoints available");
    }
  }
  return out;
}

Eigen::VectorXd blend_features(const Eigen::VectorXd& weights,
                               const Eigen::MatrixXd& relative_features,
                               const Eigen::MatrixXd& patch_features) {
  if (relative_features.cols() != weights.size() ||
      patch_features.cols() != weights.size() ||
      relative_features.rows() != patch_features.rows()) {
    throw DataError("blend_features: shape mismatch");
  }
  Eigen::VectorXd fq = Eigen::VectorXd::Zero(relative_features.rows());
  for (Eigen::Index d = 0; d < weights.size(); ++d) {
    fq += weights[d] * relative_features.col(d) +
          (1.0 - weights[d]) * patch_features.col(d);
  }
  return fq;
}

std::shared_ptr<const LdiPatchFeatures> ldi_patch_features(
    const LdiModel& model, const Patch& patch) {
  auto out = std::make_shared<LdiPatchFeatures>();
  out->features = model.feature_extractor.forward(to_matrix(patch.points), &out->tape);
  const auto dim = out->features.rows();
  out->argmax.resize(static_cast<std::size_t>(dim));
  out->pooled.resize(dim);
  for (Eigen::Index r = 0; r < dim; ++r) {
    out->pooled[r] =
        out->features.row(r).maxCoeff(&out->argmax[static_cast<std::size_t>(r)]);
  }
  return out;
}

LdiBatch::LdiBatch(const LdiModel& model, const Patch& patch,
                   const Eigen::Matrix3Xd& queries)
    : LdiBatch(model, patch, nullptr, queries) {}

LdiBatch::LdiBatch(const LdiModel& model, const Patch& patch,
                   std::shared_ptr<const LdiPatchFeatures> patch_features,
                   const Eigen::Matrix3Xd& queries)
    : model_(&model), k_(model.k_neighbors),
      m_(static_cast<int>(queries.cols())) {
  const auto n = static_cast<int>(patch.size());
  if (n < k_) {
    throw DataError("ldi: patch has " + std::to_string(n) +
                    " points, fewer than k=" + std::to_string(k_));
  }
  if (m_ == 0) throw DataError("ldi: no queries");
  if (!queries.allFinite()) throw DataError("ldi: non-finite query");
  const int dim = model.feature_dim();
  const Eigen::Index km = static_cast<Eigen::Index>(k_) * m_;

  // Patch features and their global max-pool.
  pf_ = patch_features ? std::move(patch_features) : ldi_patch_features(model, patch);
  if (pf_->features.cols() != n || pf_->features.rows() != dim) {
    throw DataError("ldi: patch features do not match the patch");
  }
  const Eigen::MatrixXd& f = pf_->features;

  // k nearest patch points per query, relative offsets.
  nbr_.resize(static_cast<std::size_t>(km));
  Eigen::Matrix3Xd rel(3, km);
  std::vector<std::pair<double, std::size_t>> scratch;
  for (int j = 0; j < m_; ++j) {
    const Vec3 q = queries.col(j);
    std::size_t* out = nbr_.data() + static_cast<std::size_t>(j) * k_;
    nearest_in_patch(patch.points, q, k_, scratch, out);
    for (int d = 0; d < k_; ++d) {
      rel.col(static_cast<Eigen::Index>(j) * k_ + d) = patch.points[out[d]] - q;
    }
  }
  fr_ = model.relative_encoder.forward(rel, &tape_r_);

  // Per-query max-pool of relative features, then attention weights.
  argmax_r_.resize(static_cast<std::size_t>(dim) * m_);
  Eigen::MatrixXd wi(2 * dim, km);
  for (int j = 0; j < m_; ++j) {
    const auto block = fr_.middleCols(static_cast<Eigen::Index>(j) * k_, k_);
    Eigen::VectorXd pooled(dim);
    for (int r = 0; r < dim; ++r) {
      Eigen::Index arg = 0;
      pooled[r] = block.row(r).maxCoeff(&arg);
      argmax_r_[static_cast<std::size_t>(j) * dim + r] =
          static_cast<Eigen::Index>(j) * k_ + arg;
    }
    wi.block(0, static_cast<Eigen::Index>(j) * k_, dim, k_) = block;
    wi.block(dim, static_cast<Eigen::Index>(j) * k_, dim, k_) =
        pooled.replicate(1, k_);
  }
  const Eigen::MatrixXd logits = model.weight_head.forward(wi, &tape_w_);
  w_.resize(km);
  for (Eigen::Index c = 0; c < km; ++c) w_[c] = sigmoid(logits(0, c));

  // Blended query feature, then the distance head.
  fq_.setZero(dim, m_);
  Eigen::MatrixXd hi(2 * dim + 3, m_);
  for (int j = 0; j < m_; ++j) {
    for (int d = 0; d < k_; ++d) {
      const Eigen::Index c = static_cast<Eigen::Index>(j) * k_ + d;
      const auto p = static_cast<Eigen::Index>(nbr_[static_cast<std::size_t>(c)]);
      fq_.col(j) += w_[c] * fr_.col(c) + (1.0 - w_[c]) * f.col(p);
    }
    hi.col(j) << fq_.col(j), pf_->pooled, queries.col(j);
  }
  pre_ = model.distance_head.forward(hi, &tape_h_);
  distance_ = pre_.cwiseAbs();
}

Eigen::MatrixXd LdiBatch::weights() const {
  return Eigen::Map<const Eigen::MatrixXd>(w_.data(), k_, m_);
}

std::span<const std::size_t> LdiBatch::neighbors(int j) const {
  return {nbr_.data() + static_cast<std::size_t>(j) * k_,
          static_cast<std::size_t>(k_)};
}

Eigen::Matrix3Xd LdiBatch::backward(const Eigen::RowVectorXd& dbar,
                                    LdiGrads* grads) const {
  if (dbar.size() != m_) throw DataError("ldi backward: cotangent size");
  const LdiModel& model = *model_;
  const int dim = model.feature_dim();
  const Eigen::Index km = static_cast<Eigen::Index>(k_) * m_;

  Eigen::RowVectorXd ybar(m_);
  for (int j = 0; j < m_; ++j) ybar[j] = pre_[j] < 0.0 ? -dbar[j] : dbar[j];
  const Eigen::MatrixXd hbar = model.distance_head.backward(
      tape_h_, ybar, grads ? &grads->distance_head : nullptr);

  Eigen::Matrix3Xd qbar = hbar.bottomRows(3);
  const Eigen::MatrixXd& f = pf_->features;
  Eigen::MatrixXd fbar;
  if (grads) fbar.setZero(dim, f.cols());
  Eigen::MatrixXd frbar(dim, km);
  Eigen::RowVectorXd zbar(km);
  for (int j = 0; j < m_; ++j) {
    const auto fqbar = hbar.col(j).head(dim);
    for (int d = 0; d < k_; ++d) {
      const Eigen::Index c = static_cast<Eigen::Index>(j) * k_ + d;
      const auto p = static_cast<Eigen::Index>(nbr_[static_cast<std::size_t>(c)]);
      frbar.col(c) = w_[c] * fqbar;
      if (grads) fbar.col(p) += (1.0 - w_[c]) * fqbar;
      const double wbar = fqbar.dot(fr_.col(c) - f.col(p));
      zbar[c] = wbar * w_[c] * (1.0 - w_[c]);
    }
    // Global patch-feature pool.
    if (grads) {
      const auto gbar = hbar.col(j).segment(dim, dim);
      for (int r = 0; r < dim; ++r) {
        fbar(r, pf_->argmax[static_cast<std::size_t>(r)]) += gbar[r];
      }
    }
  }

  const Eigen::MatrixXd wibar = model.weight_head.backward(
      tape_w_, zbar, grads ? &grads->weight_head : nullptr);
  frbar += wibar.topRows(dim);
  for (int j = 0; j < m_; ++j) {
    for (int d = 0; d < k_; ++d) {
      const Eigen::Index c = static_cast<Eigen::Index>(j) * k_ + d;
      for (int r = 0; r < dim; ++r) {
        frbar(r, argmax_r_[static_cast<std::size_t>(j) * dim + r]) +=
            wibar(dim + r, c);
      }
    }
  }

  const Eigen::MatrixXd relbar = model.relative_encoder.backward(
      tape_r_, frbar, grads ? &grads->relative_encoder : nullptr);
  for (int j = 0; j < m_; ++j) {
    qbar.col(j) -= relbar.middleCols(static_cast<Eigen::Index>(j) * k_, k_)
                       .rowwise()
                       .sum();
  }
  if (grads) {
    model.feature_extractor.backward(pf_->tape, fbar, &grads->feature_extractor);
  }
  return qbar;
}

bool LdiBatch::same_branch(const LdiBatch& other) const {
  auto same_sign = [](const Eigen::RowVectorXd& a, const Eigen::RowVectorXd& b) {
    if (a.size() != b.size()) return false;
    for (Eigen::Index i = 0; i < a.size(); ++i) {
      if ((a[i] < 0.0) != (b[i] < 0.0)) return false;
    }
    return true;
  };
  return nbr_ == other.nbr_ && pf_->argmax == other.pf_->argmax &&
         argmax_r_ == other.argmax_r_ &&
         pf_->tape.activation_pattern() == other.pf_->tape.activation_pattern() &&
         tape_r_.activation_pattern() == other.tape_r_.activation_pattern() &&
         tape_w_.activation_pattern() == other.tape_w_.activation_pattern() &&
         tape_h_.activation_pattern() == other.tape_h_.activation_pattern() &&
         same_sign(pre_, other.pre_);
}

LdiForward ldi_forward(const LdiModel& model, const Vec3& query,
                       const Patch& patch) {
  Eigen::Matrix3Xd q(3, 1);
  q.col(0) = query;
  const LdiBatch batch(model, patch, q);
  LdiForward out;
  out.distance = batch.distances()[0];
  const Eigen::MatrixXd w = batch.weights();
  out.weights.assign(w.data(), w.data() + w.size());
  const auto nb = batch.neighbors(0);
  out.neighbors.assign(nb.begin(), nb.end());
  out.query_feature = batch.query_features().col(0);
  return out;
}

std::vector<LdiSample> build_training_samples(const Patch& sparse_patch,
                                              const Patch& dense_patch,
                                              int queries_per_point,
                                              double sigma_scale,
                                              std::uint64_t rng_seed,
                                              std::size_t interp_target) {
  if (sparse_patch.size() == 0 || dense_patch.size() == 0) {
    throw DataError("build_training_samples: empty patch");
  }
  if (queries_per_point <= 0 || !(sigma_scale >= 0.0)) {
    throw UsageError("build_training_samples: bad sampling parameters");
  }
  auto shared = std::make_shared<const Patch>(
      interp_target > sparse_patch.size()
          ? patch_interpolate(sparse_patch, interp_target)
          : sparse_patch);
  const SpatialIndex dense{PointCloud(dense_patch.points)};
  std::mt19937_64 rng(rng_seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<LdiSample> out;
  out.reserve(sparse_patch.size() * static_cast<std::size_t>(queries_per_point));
  for (const auto& p : sparse_patch.points) {
    for (int i = 0; i < queries_per_point; ++i) {
      const Vec3 offset(gauss(rng), gauss(rng), gauss(rng));
      const Vec3 q = p + sigma_scale * offset;
      out.push_back({q, shared, nearest_point(dense, q).distance});
    }
  }
  return out;
}

namespace {

// Samples grouped by patch, preserving first-appearance order.
std::vector<std::pair<const Patch*, std::vector<std::size_t>>> group_by_patch(
    std::span<const LdiSample> samples) {
  std::vector<std::pair<const Patch*, std::vector<std::size_t>>> groups;
  std::map<const Patch*, std::size_t> slot;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const Patch* p = samples[i].patch.get();
    if (!p) throw DataError("ldi sample without a patch");
    auto [it, inserted] = slot.emplace(p, groups.size());
    if (inserted) groups.emplace_back(p, std::vector<std::size_t>{});
    groups[it->second].second.push_back(i);
  }
  return groups;
}

}  // namespace

double ldi_train_step(LdiModel& model, std::span<const LdiSample> batch,
                      Adam& optimizer) {
  if (batch.empty()) throw DataError("ldi_train_step: empty batch");
  LdiGrads grads = LdiGrads::zeros_like(model);
  const double inv = 1.0 / static_cast<double>(batch.size());
  double loss = 0.0;
  for (const auto& [patch, members] : group_by_patch(batch)) {
    Eigen::Matrix3Xd q(3, static_cast<Eigen::Index>(members.size()));
    for (std::size_t i = 0; i < members.size(); ++i) {
      q.col(static_cast<Eigen::Index>(i)) = batch[members[i]].query;
    }
    const LdiBatch fwd(model, *patch, q);
    Eigen::RowVectorXd dbar(q.cols());
    for (std::size_t i = 0; i < members.size(); ++i) {
      const double r =
          fwd.distances()[static_cast<Eigen::Index>(i)] - batch[members[i]].gt_distance;
      loss += std::abs(r) * inv;
      dbar[static_cast<Eigen::Index>(i)] = (r > 0.0 ? 1.0 : (r < 0.0 ? -1.0 : 0.0)) * inv;
    }
    fwd.backward(dbar, &grads);
  }
  if (!std::isfinite(loss)) {
    throw DivergenceError("ldi training: non-finite loss at step " +
                          std::to_string(optimizer.step_count()));
  }
  const auto params = parameter_blocks(model);
  const auto g = grads.blocks();
  optimizer.step(params, g);
  return loss;
}

double ldi_mae(const LdiModel& model, std::span<const LdiSample> samples) {
  if (samples.empty()) throw DataError("ldi_mae: no samples");
  double sum = 0.0;
  for (const auto& [patch, members] : group_by_patch(samples)) {
    Eigen::Matrix3Xd q(3, static_cast<Eigen::Index>(members.size()));
    for (std::size_t i = 0; i < members.size(); ++i) {
      q.col(static_cast<Eigen::Index>(i)) = samples[members[i]].query;
    }
    const LdiBatch fwd(model, *patch, q);
    for (std::size_t i = 0; i < members.size(); ++i) {
      sum += std::abs(fwd.distances()[static_cast<Eigen::Index>(i)] -
                      samples[members[i]].gt_distance);
    }
  }
  return sum / static_cast<double>(samples.size());
}

Patch ldi_patch(const LdiModel& model, const SpatialIndex& sparse_cloud_index,
                const Vec3& world_query, std::size_t patch_size) {
  const std::size_t n =
      patch_size ? patch_size : static_cast<std::size_t>(model.patch_size);
  const Patch raw = extract_patch(sparse_cloud_index, world_query, n);
  return patch_interpolate(raw, n * static_cast<std::size_t>(model.interp_ratio));
}

double ldi_infer(const LdiModel& model, const Vec3& world_query,
                 const SpatialIndex& sparse_cloud_index,
                 std::size_t patch_size) {
  const Patch patch = ldi_patch(model, sparse_cloud_index, world_query, patch_size);
  const Vec3 local = patch.frame.to_local(world_query);
  return ldi_forward(model, local, patch).distance * patch.frame.scale;
}

LdiInference ldi_infer_with_gradient(const LdiModel& model,
                                     const Vec3& world_query,
                                     const SpatialIndex& sparse_cloud_index) {
  const Patch patch = ldi_patch(model, sparse_cloud_index, world_query);
  Eigen::Matrix3Xd q(3, 1);
  q.col(0) = patch.frame.to_local(world_query);
  const LdiBatch fwd(model, patch, q);
  const Eigen::Matrix3Xd g = fwd.backward(Eigen::RowVectorXd::Ones(1), nullptr);
  // d(world distance)/d(world query): the frame scale cancels.
  return LdiInference{fwd.distances()[0] * patch.frame.scale, g.col(0)};
}

LdiPatchCache::LdiPatchCache(const LdiModel& model,
                             std::shared_ptr<const SpatialIndex> cloud_index,
                             std::size_t patch_size)
    : model_(&model), index_(std::move(cloud_index)),
      patch_size_(patch_size ? patch_size
                             : static_cast<std::size_t>(model.patch_size)) {
  if (!index_ || index_->size() == 0) throw DataError("ldi cache: empty cloud");
  patch_size_ = std::min(patch_size_, index_->size());
  if (patch_size_ < static_cast<std::size_t>(model.k_neighbors)) {
    throw DataError("ldi cache: cloud smaller than the neighbor count");
  }
  entries_.resize(index_->size());
}

const LdiPatchCache::Entry& LdiPatchCache::entry(std::size_t index) const {
  auto& slot = entries_[index];
  if (!slot) {
    auto e = std::make_unique<Entry>();
    const Patch raw = extract_patch(*index_, index_->cloud()[index], patch_size_);
    e->patch = patch_interpolate(
        raw, patch_size_ * static_cast<std::size_t>(model_->interp_ratio));
    e->features = ldi_patch_features(*model_, e->patch);
    slot = std::move(e);
  }
  return *slot;
}

std::size_t LdiPatchCache::cached_patches() const {
  return static_cast<std::size_t>(
      std::count_if(entries_.begin(), entries_.end(),
                    [](const auto& e) { return e != nullptr; }));
}

void LdiPatchCache::infer(const Eigen::Matrix3Xd& world_queries,
                          Eigen::RowVectorXd* distances,
                          Eigen::Matrix3Xd* gradients) const {
  const Eigen::Index m = world_queries.cols();
  if (distances) distances->resize(m);
  if (gradients) gradients->resize(3, m);
  if (!world_queries.allFinite()) throw DataError("ldi cache: non-finite query");
  std::vector<std::pair<std::size_t, Eigen::Index>> order(static_cast<std::size_t>(m));
  for (Eigen::Index j = 0; j < m; ++j) {
    order[static_cast<std::size_t>(j)] = {
        index_->knn(world_queries.col(j), 1).front().index, j};
  }
  std::sort(order.begin(), order.end());
  for (std::size_t lo = 0; lo < order.size();) {
    std::size_t hi = lo;
    while (hi < order.size() && order[hi].first == order[lo].first) ++hi;
    const Entry& e = entry(order[lo].first);
    const Normalization& frame = e.patch.frame;
    Eigen::Matrix3Xd local(3, static_cast<Eigen::Index>(hi - lo));
    for (std::size_t i = lo; i < hi; ++i) {
      local.col(static_cast<Eigen::Index>(i - lo)) =
          frame.to_local(world_queries.col(order[i].second));
    }
    const LdiBatch batch(*model_, e.patch, e.features, local);
    Eigen::Matrix3Xd g;
    if (gradients) g = batch.backward(Eigen::RowVectorXd::Ones(local.cols()), nullptr);
    for (std::size_t i = lo; i < hi; ++i) {
      const auto c = static_cast<Eigen::Index>(i - lo);
      if (distances) (*distances)[order[i].second] = batch.distances()[c] * frame.scale;
      if (gradients) gradients->col(order[i].second) = g.col(c);
    }
    lo = hi;
  }
}

PatchPair pair_patches(std::vector<Vec3> sparse_world,
                       const std::vector<Vec3>& dense_world) {
  if (sparse_world.empty()) throw DataError("pair_patches: empty sparse patch");
  PatchPair pair;
  pair.sparse = make_patch(std::move(sparse_world));
  const Normalization& frame = pair.sparse.frame;
  const double reach = 1.5 * frame.scale;
  for (const auto& d : dense_world) {
    if ((d - frame.center).norm() <= reach) {
      pair.dense.points.push_back(frame.to_local(d));
    }
  }
  if (pair.dense.points.empty()) {
    throw DataError("pair_patches: no dense points near the sparse patch");
  }
  pair.dense.frame = frame;
  return pair;
}

PatchPair synthetic_patch_pair(const SyntheticPatchOptions& options,
                               std::mt19937_64& rng) {
  if (options.kinds.empty()) throw UsageError("synthetic patches: no kinds");
  if (options.patch_size == 0 || options.dense_ratio < 1) {
    throw UsageError("synthetic patches: bad size parameters");
  }
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const auto kind = options.kinds[rng() % options.kinds.size()];
  const double n = static_cast<double>(options.patch_size);

  OracleSurface surface = OracleSurface::sphere(1.0);
  double area = 0.0;
  double extent = 1.0;
  double coverage = 0.0;  // total sparse points per patch
  switch (kind) {
    case OracleSurface::Kind::kSphere:
      area = 4.0 * std::numbers::pi;
      coverage = 2.0 + 6.0 * unit(rng);
      break;
    case OracleSurface::Kind::kTorus: {
      const double minor = 0.25 + 0.25 * unit(rng);
      surface = OracleSurface::torus(1.0, minor);
      area = 4.0 * std::numbers::pi * std::numbers::pi * minor;
      coverage = 3.0 + 9.0 * unit(rng);
      break;
    }
    case OracleSurface::Kind::kPlane:
      surface = OracleSurface::plane(Vec3::UnitZ(), 0.0);
      area = 4.0;
      coverage = 3.0 + 2.0 * unit(rng);
      break;
    case OracleSurface::Kind::kMesh:
      throw UsageError("synthetic patches: mesh surfaces are not generated");
  }
  const auto total = static_cast<std::size_t>(std::lround(n * coverage));
  std::vector<Vec3> sparse = surface.sample(total, rng, extent);
  const std::vector<Vec3> dense = surface.sample(
      total * static_cast<std::size_t>(options.dense_ratio), rng, extent);

  if (options.noise > 0.0) {
    const double spacing = std::sqrt(area / static_cast<double>(total));
    std::normal_distribution<double> g(0.0, options.noise * spacing);
    for (auto& p : sparse) p += Vec3(g(rng), g(rng), g(rng));
  }

  // Planes are finite squares: center patches away from the border.
  std::size_t center = rng() % total;
  if (kind == OracleSurface::Kind::kPlane) {
    const Vec3 target(0.3 * (2 * unit(rng) - 1), 0.3 * (2 * unit(rng) - 1), 0);
    center = nearest_point(SpatialIndex(PointCloud(sparse)), target).index;
  }
  const SpatialIndex index{PointCloud(sparse)};
  std::vector<Vec3> patch_pts;
  for (const auto& nn : index.knn(sparse[center], options.patch_size)) {
    patch_pts.push_back(sparse[nn.index]);
  }

  // Random orientation so no surface kind has a preferred frame.
  const Eigen::Matrix3d rot = random_rotation(rng);
  for (auto& p : patch_pts) p = rot * p;
  std::vector<Vec3> dense_rot;
  dense_rot.reserve(dense.size());
  for (const auto& p : dense) dense_rot.push_back(rot * p);
  return pair_patches(std::move(patch_pts), dense_rot);
}

LdiTrainReport train_ldi(LdiModel& model, std::span<const LdiSample> samples,
                         const LdiTrainOptions& options, std::ostream* log) {
  if (samples.empty()) throw DataError("train_ldi: no samples");
  if (options.steps < 0 || options.patches_per_step <= 0 ||
      options.queries_per_patch <= 0 || !(options.learning_rate > 0.0) ||
      !(options.final_lr_fraction > 0.0 && options.final_lr_fraction <= 1.0)) {
    throw UsageError("train_ldi: bad options");
  }
  const auto groups = group_by_patch(samples);
  Adam adam(Adam::Options{.learning_rate = options.learning_rate});
  std::mt19937_64 rng(options.seed);
  LdiTrainReport report;
  report.losses.reserve(static_cast<std::size_t>(options.steps));
  std::vector<LdiSample> batch;
  for (int step = 0; step < options.steps; ++step) {
    const double t = static_cast<double>(step) / std::max(1, options.steps);
    const double f = options.final_lr_fraction;
    adam.set_learning_rate(options.learning_rate *
                           (f + (1.0 - f) * 0.5 * (1.0 + std::cos(std::numbers::pi * t))));
    batch.clear();
    for (int p = 0; p < options.patches_per_step; ++p) {
      const auto& members = groups[rng() % groups.size()].second;
      for (int q = 0; q < options.queries_per_patch; ++q) {
        batch.push_back(samples[members[rng() % members.size()]]);
      }
    }
    report.losses.push_back(ldi_train_step(model, batch, adam));
    if (log && options.log_every > 0 && (step + 1) % options.log_every == 0) {
      double avg = 0.0;
      const int w = std::min(options.log_every, step + 1);
      for (int i = step + 1 - w; i <= step; ++i) {
        avg += report.losses[static_cast<std::size_t>(i)];
      }
      *log << "ldi step " << (step + 1) << " loss " << avg / w << '\n';
    }
  }
  if (!report.losses.empty()) {
    const std::size_t w = std::min<std::size_t>(100, report.losses.size());
    report.final_train_mae =
        std::accumulate(report.losses.end() - static_cast<std::ptrdiff_t>(w),
                        report.losses.end(), 0.0) /
        static_cast<double>(w);
  }
  return report;
}

void write_ldi(std::ostream& out, const LdiModel& model) {
  detail::write_magic(out, kLdiMagic, kLdiVersion);
  detail::write_pod<std::int32_t>(out, model.k_neighbors);
  detail::write_pod<std::int32_t>(out, model.patch_size);
  detail::write_pod<std::int32_t>(out, model.interp_ratio);
  write_mlp(out, model.feature_extractor);
  write_mlp(out, model.relative_encoder);
  write_mlp(out, model.weight_head);
  write_mlp(out, model.distance_head);
}

LdiModel read_ldi(std::istream& in) {
  detail::expect_magic(in, kLdiMagic, kLdiVersion, "local distance indicator");
  LdiModel m;
  m.k_neighbors = detail::read_pod<std::int32_t>(in);
  m.patch_size = detail::read_pod<std::int32_t>(in);
  m.interp_ratio = detail::read_pod<std::int32_t>(in);
  m.feature_extractor = read_mlp(in);
  m.relative_encoder = read_mlp(in);
  m.weight_head = read_mlp(in);
  m.distance_head = read_mlp(in);
  const int d = m.feature_extractor.output_dim();
  if (m.k_neighbors <= 0 || m.patch_size <= 0 || m.interp_ratio < 1 ||
      m.k_neighbors >= m.patch_size * m.interp_ratio ||
      m.feature_extractor.input_dim() != 3 ||
      m.relative_encoder.input_dim() != 3 || m.relative_encoder.output_dim() != d ||
      m.weight_head.input_dim() != 2 * d || m.weight_head.output_dim() != 1 ||
      m.distance_head.input_dim() != 2 * d + 3 ||
      m.distance_head.output_dim() != 1) {
    throw DataError("local distance indicator checkpoint is inconsistent");
  }
  return m;
}

}  // namespace udfup
