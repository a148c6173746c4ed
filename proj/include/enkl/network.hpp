#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "enkl/dataset.hpp"
#include "enkl/ensemble.hpp"

namespace enkl {

enum class Activation { relu, linear, softmax };

Activation activation_from_string(const std::string& name);
std::string to_string(Activation a);

struct Layer {
  int width_in = 0;
  int width_out = 0;
  Activation activation = Activation::linear;
};

// Feed-forward stack. Consecutive widths must chain; softmax is only
// permitted on the final layer.
class NetworkSpec {
 public:
  explicit NetworkSpec(std::vector<Layer> layers);

  static NetworkSpec mlp(int input_dim, const std::vector<int>& hidden,
                         int output_dim, Activation hidden_activation,
                         Activation output_activation);

  const std::vector<Layer>& layers() const { return layers_; }
  int input_dim() const { return layers_.front().width_in; }
  int output_dim() const { return layers_.back().width_out; }

 private:
  std::vector<Layer> layers_;
};

// Bijection between per-layer (weights, biases) and one flat vector:
// layer-major, weights before biases, row-major inside a weight block.
class ParamLayout {
 public:
  explicit ParamLayout(const NetworkSpec& spec);

  int total_dim() const { return total_dim_; }
  int num_layers() const { return static_cast<int>(weight_offsets_.size()); }
  int weight_offset(int layer) const { return weight_offsets_.at(layer); }
  int bias_offset(int layer) const { return bias_offsets_.at(layer); }

 private:
  int total_dim_ = 0;
  std::vector<int> weight_offsets_;
  std::vector<int> bias_offsets_;
};

ParamLayout param_layout(const NetworkSpec& spec);

// Single forward pass.
Vector forward(const NetworkSpec& spec, const Vector& alpha, const Vector& x);

// Forward over a row-per-sample batch with one parameter vector; returns
// samples x output_dim.
Matrix forward_batch(const NetworkSpec& spec, const Vector& alpha,
                     const Matrix& inputs);

// Predictions for every (sample, member) pair: slice s is output_dim x E,
// member column j computed from parameter column j. Members evaluate
// independently (parallel map, deterministic output).
std::vector<Matrix> forward_ensemble(const NetworkSpec& spec,
                                     const EnsembleMatrix& params,
                                     const Matrix& inputs);

// total_dim x E of i.i.d. Gaussian(mean, std^2) draws.
EnsembleMatrix init_ensemble(const ParamLayout& layout, double mean,
                             double stddev, int ensemble_size,
                             std::uint64_t seed);

// One gradient-descent step on the mean-over-batch least-squares loss
// 0.5 * ||y - x_N||^2, gradients by reverse accumulation. ReLU subgradient
// at 0 is 0.
Vector sgd_step(const NetworkSpec& spec, const Vector& alpha,
                const Matrix& batch_inputs, const Matrix& batch_targets,
                double learning_rate);

// Metrics over a row-per-sample batch with one parameter vector.
double mse(const NetworkSpec& spec, const Vector& alpha, const Matrix& inputs,
           const Matrix& targets);
double rmse(const NetworkSpec& spec, const Vector& alpha, const Matrix& inputs,
            const Matrix& targets);
double accuracy(const NetworkSpec& spec, const Vector& alpha,
                const Matrix& inputs, const Matrix& targets);

}  // namespace enkl
