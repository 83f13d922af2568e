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
#include <span>
#include <vector>

#include <Eigen/Core>

namespace udfup {

enum class Activation : std::uint8_t { kRelu = 0, kLinear = 1 };

enum class LinkKind : std::uint8_t {
  // out[to] += out[from]; widths must agree.
  kAdd = 0,
  // out[from] is appended to the input of layer `to`.
  kConcat = 1,
};

// Source index -1 denotes the network input.
struct Link {
  int from = -1;
  int to = 0;
  LinkKind kind = LinkKind::kAdd;

  friend bool operator==(const Link&, const Link&) = default;
};

struct MlpSpec {
  int input_dim = 0;
  std::vector<int> widths;  // output width per layer; back() is output_dim
  std::vector<Activation> activations;
  std::vector<Link> links;

  int output_dim() const { return widths.empty() ? 0 : widths.back(); }
  int num_layers() const { return static_cast<int>(widths.size()); }
  // Width of the (possibly concatenated) input to `layer`.
  int layer_input_width(int layer) const;
  // Output width of source `s` (-1 is the network input).
  int source_width(int s) const;

  // Throws UsageError on incompatible dimensions or links.
  void validate() const;

  // ReLU hidden layers and a linear output layer.
  static MlpSpec relu_stack(int input_dim, std::vector<int> widths,
                            std::vector<Link> links = {});

  friend bool operator==(const MlpSpec&, const MlpSpec&) = default;
};

class Mlp;

// Per-layer parameter gradients, shaped like the model.
struct MlpGrads {
  std::vector<Eigen::MatrixXd> weights;
  std::vector<Eigen::VectorXd> biases;

  static MlpGrads zeros_like(const Mlp& model);
  void set_zero();
  std::vector<std::span<double>> blocks();
  std::vector<std::span<const double>> blocks() const;
  double max_abs() const;
};

// Recorded forward pass over a batch (one column per sample). A tape is bound
// to the model generation it was recorded against and refuses reverse sweeps
// once the model's parameters change.
class Tape {
 public:
  int batch() const { return static_cast<int>(input.cols()); }
  bool has_tangent() const { return !tangent_inputs.empty(); }
  // Model this tape was recorded against; null for an empty tape.
  const Mlp* bound_model() const { return model; }
  // Per-layer ReLU activity (empty matrices for linear layers).
  const std::vector<Eigen::MatrixXd>& activation_pattern() const {
    return masks;
  }

 private:
  friend class Mlp;
  const Mlp* model = nullptr;
  std::uint64_t generation = 0;
  Eigen::MatrixXd input;
  std::vector<Eigen::MatrixXd> layer_inputs;  // concatenated input per layer
  std::vector<Eigen::MatrixXd> masks;         // 1 where ReLU is active
  std::vector<Eigen::MatrixXd> outputs;
  std::vector<Eigen::MatrixXd> tangent_inputs;
  std::vector<Eigen::MatrixXd> tangent_outputs;
};

class Mlp {
 public:
  Mlp() = default;
  // Zero-initialized parameters.
  explicit Mlp(MlpSpec spec);

  Mlp(const Mlp& other);
  Mlp& operator=(const Mlp& other);
  Mlp(Mlp&&) noexcept = default;
  Mlp& operator=(Mlp&&) noexcept = default;

  // Fan-in scaled uniform weights (He), zero biases. Deterministic in seed.
  static Mlp init(MlpSpec spec, std::uint64_t seed);

  const MlpSpec& spec() const { return spec_; }
  int input_dim() const { return spec_.input_dim; }
  int output_dim() const { return spec_.output_dim(); }
  int num_layers() const { return spec_.num_layers(); }

  const Eigen::MatrixXd& weight(int layer) const { return weights_[layer]; }
  const Eigen::VectorXd& bias(int layer) const { return biases_[layer]; }
  // Mutable access invalidates outstanding tapes.
  Eigen::MatrixXd& mutable_weight(int layer);
  Eigen::VectorXd& mutable_bias(int layer);
  std::vector<std::span<double>> parameter_blocks();
  std::vector<std::span<const double>> parameter_blocks() const;
  std::size_t parameter_count() const;

  std::uint64_t generation() const { return generation_; }

  // Batched forward: X is input_dim x B. Throws DataError on a dimension
  // mismatch or when a layer produces a non-finite value.
  Eigen::MatrixXd forward(const Eigen::MatrixXd& x, Tape* tape = nullptr) const;

  // Reverse sweep for cotangent Ybar (output_dim x B). Returns the input
  // cotangent and, when grads is non-null, accumulates parameter gradients.
  Eigen::MatrixXd backward(const Tape& tape, const Eigen::MatrixXd& ybar,
                           MlpGrads* grads = nullptr) const;

  // Pushes input tangents U (input_dim x B) through the recorded pass and
  // returns the output directional derivatives J U.
  Eigen::MatrixXd forward_tangent(Tape& tape, const Eigen::MatrixXd& u) const;

  // Reverse sweep of the pair (output, tangent output) with cotangents
  // (ybar, tbar). Parameter gradients include the dependence of J U on the
  // weights; second derivatives of ReLU vanish almost everywhere.
  Eigen::MatrixXd backward_dual(const Tape& tape, const Eigen::MatrixXd& ybar,
                                const Eigen::MatrixXd& tbar,
                                MlpGrads* grads = nullptr) const;

  friend bool operator==(const Mlp& a, const Mlp& b);

 private:
  void check_tape(const Tape& tape) const;
  void touch();

  MlpSpec spec_;
  std::vector<Eigen::MatrixXd> weights_;
  std::vector<Eigen::VectorXd> biases_;
  std::uint64_t generation_ = 0;
};

// Single-sample convenience surface.
struct ForwardResult {
  Eigen::VectorXd output;
  Tape tape;
};

ForwardResult forward(const Mlp& model, const Eigen::VectorXd& input);
Eigen::VectorXd grad_input(const Tape& tape,
                           const Eigen::VectorXd& output_cotangent);
MlpGrads grad_params(const Tape& tape, const Eigen::VectorXd& output_cotangent);

Mlp init_params(const MlpSpec& spec, std::uint64_t seed);

// Adaptive-moment optimizer over an ordered list of parameter blocks.
class Adam {
 public:
  struct Options {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
  };

  Adam() : Adam(Options{}) {}
  explicit Adam(Options options) : options_(options) {}

  // Shapes are fixed on the first call; later calls must match.
  void step(std::span<const std::span<double>> params,
            std::span<const std::span<const double>> grads);

  const Options& options() const { return options_; }
  void set_learning_rate(double lr) { options_.learning_rate = lr; }
  std::uint64_t step_count() const { return steps_; }

 private:
  Options options_;
  std::uint64_t steps_ = 0;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
};

void optimizer_step(Adam& state, Mlp& model, const MlpGrads& grads);

// Versioned binary serialization; round-trips bit-exactly.
void write_mlp(std::ostream& out, const Mlp& model);
Mlp read_mlp(std::istream& in);

}  // namespace udfup
