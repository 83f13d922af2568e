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

#include "udfup/mlp.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <random>
#include <string>
#include <utility>

#include "binary_io.hpp"
#include "udfup/error.hpp"

namespace udfup {
namespace {

std::uint64_t next_generation() {
  static std::atomic<std::uint64_t> counter{1};
  return counter.fetch_add(1, std::memory_order_relaxed);
}

template <typename Block>
std::vector<std::span<double>> mutable_blocks(std::vector<Eigen::MatrixXd>& w,
                                              std::vector<Block>& b) {
  std::vector<std::span<double>> out;
  out.reserve(w.size() * 2);
  for (std::size_t l = 0; l < w.size(); ++l) {
    out.emplace_back(w[l].data(), static_cast<std::size_t>(w[l].size()));
    out.emplace_back(b[l].data(), static_cast<std::size_t>(b[l].size()));
  }
  return out;
}

template <typename Block>
std::vector<std::span<const double>> const_blocks(
    const std::vector<Eigen::MatrixXd>& w, const std::vector<Block>& b) {
  std::vector<std::span<const double>> out;
  out.reserve(w.size() * 2);
  for (std::size_t l = 0; l < w.size(); ++l) {
    out.emplace_back(w[l].data(), static_cast<std::size_t>(w[l].size()));
    out.emplace_back(b[l].data(), static_cast<std::size_t>(b[l].size()));
  }
  return out;
}

constexpr char kMlpMagic[9] = "UDFUPMLP";
constexpr std::uint32_t kMlpVersion = 1;

}  // namespace

int MlpSpec::source_width(int s) const {
  return s < 0 ? input_dim : widths[static_cast<std::size_t>(s)];
}

int MlpSpec::layer_input_width(int layer) const {
  int w = source_width(layer - 1);
  for (const auto& link : links) {
    if (link.kind == LinkKind::kConcat && link.to == layer) {
      w += source_width(link.from);
    }
  }
  return w;
}

void MlpSpec::validate() const {
  if (input_dim <= 0) throw UsageError("mlp: input_dim must be positive");
  if (widths.empty()) throw UsageError("mlp: at least one layer required");
  if (activations.size() != widths.size()) {
    throw UsageError("mlp: one activation per layer required");
  }
  for (int w : widths) {
    if (w <= 0) throw UsageError("mlp: layer widths must be positive");
  }
  const int n = num_layers();
  for (const auto& link : links) {
    if (link.to < 0 || link.to >= n || link.from < -1 || link.from >= link.to) {
      throw UsageError("mlp: link must go from an earlier source to a layer");
    }
    if (link.kind == LinkKind::kAdd &&
        source_width(link.from) != widths[static_cast<std::size_t>(link.to)]) {
      throw UsageError("mlp: residual link connects layers of unequal width");
    }
    if (link.kind == LinkKind::kConcat && link.from == link.to - 1) {
      throw UsageError("mlp: concat link duplicates the direct input");
    }
  }
}

MlpSpec MlpSpec::relu_stack(int input_dim, std::vector<int> widths,
                            std::vector<Link> links) {
  MlpSpec spec;
  spec.input_dim = input_dim;
  spec.activations.assign(widths.size(), Activation::kRelu);
  if (!spec.activations.empty()) spec.activations.back() = Activation::kLinear;
  spec.widths = std::move(widths);
  spec.links = std::move(links);
  return spec;
}

MlpGrads MlpGrads::zeros_like(const Mlp& model) {
  MlpGrads g;
  for (int l = 0; l < model.num_layers(); ++l) {
    g.weights.push_back(Eigen::MatrixXd::Zero(model.weight(l).rows(),
                                              model.weight(l).cols()));
    g.biases.push_back(Eigen::VectorXd::Zero(model.bias(l).size()));
  }
  return g;
}

void MlpGrads::set_zero() {
  for (auto& w : weights) w.setZero();
  for (auto& b : biases) b.setZero();
}

std::vector<std::span<double>> MlpGrads::blocks() {
  return mutable_blocks(weights, biases);
}

std::vector<std::span<const double>> MlpGrads::blocks() const {
  return const_blocks(weights, biases);
}

double MlpGrads::max_abs() const {
  double m = 0.0;
  for (const auto& w : weights) m = std::max(m, w.cwiseAbs().maxCoeff());
  for (const auto& b : biases) m = std::max(m, b.cwiseAbs().maxCoeff());
  return m;
}

Mlp::Mlp(MlpSpec spec) : spec_(std::move(spec)), generation_(next_generation()) {
  spec_.validate();
  for (int l = 0; l < spec_.num_layers(); ++l) {
    weights_.push_back(Eigen::MatrixXd::Zero(spec_.widths[l],
                                             spec_.layer_input_width(l)));
    biases_.push_back(Eigen::VectorXd::Zero(spec_.widths[l]));
  }
}

Mlp::Mlp(const Mlp& other)
    : spec_(other.spec_),
      weights_(other.weights_),
      biases_(other.biases_),
      generation_(next_generation()) {}

Mlp& Mlp::operator=(const Mlp& other) {
  if (this != &other) {
    spec_ = other.spec_;
    weights_ = other.weights_;
    biases_ = other.biases_;
    touch();
  }
  return *this;
}

Mlp Mlp::init(MlpSpec spec, std::uint64_t seed) {
  Mlp model(std::move(spec));
  std::mt19937_64 rng(seed);
  for (auto& w : model.weights_) {
    const double bound = std::sqrt(6.0 / static_cast<double>(w.cols()));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = dist(rng);
  }
  return model;
}

Mlp init_params(const MlpSpec& spec, std::uint64_t seed) {
  return Mlp::init(spec, seed);
}

void Mlp::touch() { generation_ = next_generation(); }

Eigen::MatrixXd& Mlp::mutable_weight(int layer) {
  touch();
  return weights_[static_cast<std::size_t>(layer)];
}

Eigen::VectorXd& Mlp::mutable_bias(int layer) {
  touch();
  return biases_[static_cast<std::size_t>(layer)];
}

std::vector<std::span<double>> Mlp::parameter_blocks() {
  touch();
  return mutable_blocks(weights_, biases_);
}

std::vector<std::span<const double>> Mlp::parameter_blocks() const {
  return const_blocks(weights_, biases_);
}

std::size_t Mlp::parameter_count() const {
  std::size_t n = 0;
  for (int l = 0; l < num_layers(); ++l) {
    n += static_cast<std::size_t>(weights_[l].size() + biases_[l].size());
  }
  return n;
}

bool operator==(const Mlp& a, const Mlp& b) {
  return a.spec_ == b.spec_ && a.weights_ == b.weights_ &&
         a.biases_ == b.biases_;
}

void Mlp::check_tape(const Tape& tape) const {
  if (tape.model != this || tape.generation != generation_) {
    throw DataError("stale tape: model changed since the forward pass");
  }
}

Eigen::MatrixXd Mlp::forward(const Eigen::MatrixXd& x, Tape* tape) const {
  if (x.rows() != spec_.input_dim) {
    throw DataError("mlp forward: expected input dimension " +
                    std::to_string(spec_.input_dim) + ", got " +
                    std::to_string(x.rows()));
  }
  if (!x.allFinite()) throw DataError("mlp forward: non-finite input");

  const int n = num_layers();
  std::vector<Eigen::MatrixXd> outs(static_cast<std::size_t>(n));
  std::vector<Eigen::MatrixXd> ins(static_cast<std::size_t>(n));
  std::vector<Eigen::MatrixXd> masks(static_cast<std::size_t>(n));
  auto source = [&](int s) -> const Eigen::MatrixXd& {
    return s < 0 ? x : outs[static_cast<std::size_t>(s)];
  };

  for (int l = 0; l < n; ++l) {
    const auto li = static_cast<std::size_t>(l);
    const Eigen::MatrixXd& direct = source(l - 1);
    const int in_w = spec_.layer_input_width(l);
    const Eigen::MatrixXd* in = &direct;
    if (in_w != direct.rows()) {
      ins[li].resize(in_w, x.cols());
      ins[li].topRows(direct.rows()) = direct;
      Eigen::Index row = direct.rows();
      for (const auto& link : spec_.links) {
        if (link.kind == LinkKind::kConcat && link.to == l) {
          const auto& s = source(link.from);
          ins[li].middleRows(row, s.rows()) = s;
          row += s.rows();
        }
      }
      in = &ins[li];
    } else if (tape) {
      ins[li] = direct;
    }

    Eigen::MatrixXd pre = weights_[li] * (*in);
    pre.colwise() += biases_[li];
    if (spec_.activations[li] == Activation::kRelu) {
      masks[li] = (pre.array() > 0.0).cast<double>().matrix();
      outs[li] = pre.cwiseProduct(masks[li]);
    } else {
      outs[li] = std::move(pre);
    }
    for (const auto& link : spec_.links) {
      if (link.kind == LinkKind::kAdd && link.to == l) {
        outs[li] += source(link.from);
      }
    }
    if (!outs[li].allFinite()) {
      throw DataError("mlp forward: non-finite value at layer " +
                      std::to_string(l));
    }
  }

  Eigen::MatrixXd y = outs.back();
  if (tape) {
    tape->model = this;
    tape->generation = generation_;
    tape->input = x;
    tape->layer_inputs = std::move(ins);
    tape->masks = std::move(masks);
    tape->outputs = std::move(outs);
    tape->tangent_inputs.clear();
    tape->tangent_outputs.clear();
  }
  return y;
}

Eigen::MatrixXd Mlp::backward(const Tape& tape, const Eigen::MatrixXd& ybar,
                              MlpGrads* grads) const {
  check_tape(tape);
  if (ybar.rows() != output_dim() || ybar.cols() != tape.batch()) {
    throw DataError("mlp backward: cotangent shape mismatch");
  }
  const int n = num_layers();
  const Eigen::Index batch = tape.batch();
  std::vector<Eigen::MatrixXd> dout(static_cast<std::size_t>(n));
  for (int l = 0; l < n; ++l) {
    dout[static_cast<std::size_t>(l)] =
        Eigen::MatrixXd::Zero(spec_.widths[static_cast<std::size_t>(l)], batch);
  }
  Eigen::MatrixXd dx = Eigen::MatrixXd::Zero(spec_.input_dim, batch);
  auto dsource = [&](int s) -> Eigen::MatrixXd& {
    return s < 0 ? dx : dout[static_cast<std::size_t>(s)];
  };
  dout.back() = ybar;

  for (int l = n - 1; l >= 0; --l) {
    const auto li = static_cast<std::size_t>(l);
    const Eigen::MatrixXd& g = dout[li];
    for (const auto& link : spec_.links) {
      if (link.kind == LinkKind::kAdd && link.to == l) dsource(link.from) += g;
    }
    Eigen::MatrixXd dpre = spec_.activations[li] == Activation::kRelu
                               ? Eigen::MatrixXd(g.cwiseProduct(tape.masks[li]))
                               : g;
    const Eigen::MatrixXd& in = tape.layer_inputs[li];
    if (grads) {
      grads->weights[li].noalias() += dpre * in.transpose();
      grads->biases[li] += dpre.rowwise().sum();
    }
    const Eigen::MatrixXd din = weights_[li].transpose() * dpre;
    Eigen::Index row = spec_.source_width(l - 1);
    dsource(l - 1) += din.topRows(row);
    for (const auto& link : spec_.links) {
      if (link.kind == LinkKind::kConcat && link.to == l) {
        const int w = spec_.source_width(link.from);
        dsource(link.from) += din.middleRows(row, w);
        row += w;
      }
    }
  }
  return dx;
}

Eigen::MatrixXd Mlp::forward_tangent(Tape& tape,
                                     const Eigen::MatrixXd& u) const {
  check_tape(tape);
  if (u.rows() != spec_.input_dim || u.cols() != tape.batch()) {
    throw DataError("mlp tangent: shape mismatch");
  }
  const int n = num_layers();
  std::vector<Eigen::MatrixXd> tins(static_cast<std::size_t>(n));
  std::vector<Eigen::MatrixXd> touts(static_cast<std::size_t>(n));
  auto source = [&](int s) -> const Eigen::MatrixXd& {
    return s < 0 ? u : touts[static_cast<std::size_t>(s)];
  };
  for (int l = 0; l < n; ++l) {
    const auto li = static_cast<std::size_t>(l);
    const Eigen::MatrixXd& direct = source(l - 1);
    tins[li].resize(spec_.layer_input_width(l), u.cols());
    tins[li].topRows(direct.rows()) = direct;
    Eigen::Index row = direct.rows();
    for (const auto& link : spec_.links) {
      if (link.kind == LinkKind::kConcat && link.to == l) {
        const auto& s = source(link.from);
        tins[li].middleRows(row, s.rows()) = s;
        row += s.rows();
      }
    }
    Eigen::MatrixXd t = weights_[li] * tins[li];
    if (spec_.activations[li] == Activation::kRelu) {
      t = t.cwiseProduct(tape.masks[li]);
    }
    for (const auto& link : spec_.links) {
      if (link.kind == LinkKind::kAdd && link.to == l) t += source(link.from);
    }
    touts[li] = std::move(t);
  }
  Eigen::MatrixXd out = touts.back();
  tape.tangent_inputs = std::move(tins);
  tape.tangent_outputs = std::move(touts);
  return out;
}

Eigen::MatrixXd Mlp::backward_dual(const Tape& tape,
                                   const Eigen::MatrixXd& ybar,
                                   const Eigen::MatrixXd& tbar,
                                   MlpGrads* grads) const {
  check_tape(tape);
  if (!tape.has_tangent()) {
    throw DataError("mlp backward_dual: tape has no tangent pass");
  }
  if (ybar.rows() != output_dim() || ybar.cols() != tape.batch() ||
      tbar.rows() != output_dim() || tbar.cols() != tape.batch()) {
    throw DataError("mlp backward_dual: cotangent shape mismatch");
  }
  const int n = num_layers();
  const Eigen::Index batch = tape.batch();
  std::vector<Eigen::MatrixXd> dout(static_cast<std::size_t>(n));
  std::vector<Eigen::MatrixXd> tout(static_cast<std::size_t>(n));
  for (int l = 0; l < n; ++l) {
    const auto w = spec_.widths[static_cast<std::size_t>(l)];
    dout[static_cast<std::size_t>(l)] = Eigen::MatrixXd::Zero(w, batch);
    tout[static_cast<std::size_t>(l)] = Eigen::MatrixXd::Zero(w, batch);
  }
  Eigen::MatrixXd dx = Eigen::MatrixXd::Zero(spec_.input_dim, batch);
  Eigen::MatrixXd du = Eigen::MatrixXd::Zero(spec_.input_dim, batch);
  auto dsource = [&](int s) -> Eigen::MatrixXd& {
    return s < 0 ? dx : dout[static_cast<std::size_t>(s)];
  };
  auto tsource = [&](int s) -> Eigen::MatrixXd& {
    return s < 0 ? du : tout[static_cast<std::size_t>(s)];
  };
  dout.back() = ybar;
  tout.back() = tbar;

  for (int l = n - 1; l >= 0; --l) {
    const auto li = static_cast<std::size_t>(l);
    for (const auto& link : spec_.links) {
      if (link.kind == LinkKind::kAdd && link.to == l) {
        dsource(link.from) += dout[li];
        tsource(link.from) += tout[li];
      }
    }
    Eigen::MatrixXd dpre = dout[li];
    Eigen::MatrixXd tpre = tout[li];
    if (spec_.activations[li] == Activation::kRelu) {
      dpre = dpre.cwiseProduct(tape.masks[li]);
      tpre = tpre.cwiseProduct(tape.masks[li]);
    }
    if (grads) {
      grads->weights[li].noalias() += dpre * tape.layer_inputs[li].transpose();
      grads->weights[li].noalias() += tpre * tape.tangent_inputs[li].transpose();
      grads->biases[li] += dpre.rowwise().sum();
    }
    const Eigen::MatrixXd din = weights_[li].transpose() * dpre;
    const Eigen::MatrixXd tin = weights_[li].transpose() * tpre;
    Eigen::Index row = spec_.source_width(l - 1);
    dsource(l - 1) += din.topRows(row);
    tsource(l - 1) += tin.topRows(row);
    for (const auto& link : spec_.links) {
      if (link.kind == LinkKind::kConcat && link.to == l) {
        const int w = spec_.source_width(link.from);
        dsource(link.from) += din.middleRows(row, w);
        tsource(link.from) += tin.middleRows(row, w);
        row += w;
      }
    }
  }
  return dx;
}

ForwardResult forward(const Mlp& model, const Eigen::VectorXd& input) {
  ForwardResult r;
  r.output = model.forward(input, &r.tape);
  return r;
}

Eigen::VectorXd grad_input(const Tape& tape,
                           const Eigen::VectorXd& output_cotangent) {
  if (!tape.bound_model()) throw DataError("grad_input: empty tape");
  return tape.bound_model()->backward(tape, output_cotangent);
}

MlpGrads grad_params(const Tape& tape,
                     const Eigen::VectorXd& output_cotangent) {
  if (!tape.bound_model()) throw DataError("grad_params: empty tape");
  MlpGrads g = MlpGrads::zeros_like(*tape.bound_model());
  tape.bound_model()->backward(tape, output_cotangent, &g);
  return g;
}

void Adam::step(std::span<const std::span<double>> params,
                std::span<const std::span<const double>> grads) {
  if (params.size() != grads.size()) {
    throw DataError("optimizer: parameter/gradient block count mismatch");
  }
  if (m_.empty()) {
    for (const auto& p : params) {
      m_.emplace_back(p.size(), 0.0);
      v_.emplace_back(p.size(), 0.0);
    }
  }
  if (m_.size() != params.size()) {
    throw DataError("optimizer: block count differs from first step");
  }
  for (std::size_t b = 0; b < params.size(); ++b) {
    if (params[b].size() != m_[b].size() || grads[b].size() != m_[b].size()) {
      throw DataError("optimizer: block " + std::to_string(b) +
                      " shape mismatch");
    }
  }
  ++steps_;
  const double t = static_cast<double>(steps_);
  const double c1 = 1.0 - std::pow(options_.beta1, t);
  const double c2 = 1.0 - std::pow(options_.beta2, t);
  for (std::size_t b = 0; b < params.size(); ++b) {
    auto& m = m_[b];
    auto& v = v_[b];
    const auto& g = grads[b];
    auto& p = params[b];
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = options_.beta1 * m[i] + (1.0 - options_.beta1) * g[i];
      v[i] = options_.beta2 * v[i] + (1.0 - options_.beta2) * g[i] * g[i];
      const double mhat = m[i] / c1;
      const double vhat = v[i] / c2;
      p[i] -= options_.learning_rate * mhat / (std::sqrt(vhat) + options_.epsilon);
    }
  }
}

void optimizer_step(Adam& state, Mlp& model, const MlpGrads& grads) {
  const auto p = model.parameter_blocks();
  const auto g = grads.blocks();
  state.step(p, g);
}

void write_mlp(std::ostream& out, const Mlp& model) {
  using detail::write_pod;
  const MlpSpec& spec = model.spec();
  detail::write_magic(out, kMlpMagic, kMlpVersion);
  write_pod<std::int32_t>(out, spec.input_dim);
  write_pod<std::int32_t>(out, spec.num_layers());
  for (int l = 0; l < spec.num_layers(); ++l) {
    write_pod<std::int32_t>(out, spec.widths[static_cast<std::size_t>(l)]);
    write_pod<std::uint8_t>(
        out, static_cast<std::uint8_t>(spec.activations[static_cast<std::size_t>(l)]));
  }
  write_pod<std::int32_t>(out, static_cast<std::int32_t>(spec.links.size()));
  for (const auto& link : spec.links) {
    write_pod<std::int32_t>(out, link.from);
    write_pod<std::int32_t>(out, link.to);
    write_pod<std::uint8_t>(out, static_cast<std::uint8_t>(link.kind));
  }
  for (const auto& block : model.parameter_blocks()) {
    detail::write_doubles(out, block.data(), block.size());
  }
  if (!out) throw DataError("failed to write model parameters");
}

Mlp read_mlp(std::istream& in) {
  using detail::read_pod;
  detail::expect_magic(in, kMlpMagic, kMlpVersion, "model");
  MlpSpec spec;
  spec.input_dim = read_pod<std::int32_t>(in);
  const auto layers = read_pod<std::int32_t>(in);
  if (layers <= 0 || layers > 4096) throw DataError("model: bad layer count");
  for (int l = 0; l < layers; ++l) {
    spec.widths.push_back(read_pod<std::int32_t>(in));
    const auto act = read_pod<std::uint8_t>(in);
    if (act > 1) throw DataError("model: unknown activation");
    spec.activations.push_back(static_cast<Activation>(act));
  }
  const auto links = read_pod<std::int32_t>(in);
  if (links < 0 || links > 4096) throw DataError("model: bad link count");
  for (int i = 0; i < links; ++i) {
    Link link;
    link.from = read_pod<std::int32_t>(in);
    link.to = read_pod<std::int32_t>(in);
    const auto kind = read_pod<std::uint8_t>(in);
    if (kind > 1) throw DataError("model: unknown link kind");
    link.kind = static_cast<LinkKind>(kind);
    spec.links.push_back(link);
  }
  Mlp model;
  try {
    model = Mlp(std::move(spec));
  } catch (const UsageError& e) {
    throw DataError(std::string("model: invalid architecture: ") + e.what());
  }
  for (auto& block : model.parameter_blocks()) {
    detail::read_doubles(in, block.data(), block.size());
  }
  for (const auto& block : std::as_const(model).parameter_blocks()) {
    for (double v : block) {
      if (!std::isfinite(v)) throw DataError("model: non-finite parameter");
    }
  }
  return model;
}

}  // namespace udfup
