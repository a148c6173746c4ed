#include "enkl/network.hpp"

#include <algorithm>
#include <cmath>

#include "enkl/parallel.hpp"
#include "enkl/rng.hpp"

namespace enkl {

namespace {

using RowMajorMap =
    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                                   Eigen::RowMajor>>;

RowMajorMap weight_block(const ParamLayout& layout, const Layer& layer,
                         int index, const double* alpha) {
  return RowMajorMap(alpha + layout.weight_offset(index), layer.width_out,
                     layer.width_in);
}

Eigen::Map<const Vector> bias_block(const ParamLayout& layout,
                                    const Layer& layer, int index,
                                    const double* alpha) {
  return Eigen::Map<const Vector>(alpha + layout.bias_offset(index),
                                  layer.width_out);
}

// column-wise, numerically stable
void softmax_in_place(Matrix& h) {
  for (Eigen::Index j = 0; j < h.cols(); ++j) {
    auto col = h.col(j);
    col.array() -= col.maxCoeff();
    col = col.array().exp();
    col /= col.sum();
  }
}

void apply_activation(Activation a, Matrix& h) {
  switch (a) {
    case Activation::relu:
      h = h.cwiseMax(0.0);
      break;
    case Activation::linear:
      break;
    case Activation::softmax:
      softmax_in_place(h);
      break;
  }
}

// activations for a whole column-per-sample batch
Matrix run_layers(const NetworkSpec& spec, const ParamLayout& layout,
                  const double* alpha, Matrix h) {
  const auto& layers = spec.layers();
  for (int l = 0; l < static_cast<int>(layers.size()); ++l) {
    const Layer& layer = layers[l];
    Matrix next = weight_block(layout, layer, l, alpha) * h;
    next.colwise() += bias_block(layout, layer, l, alpha);
    apply_activation(layer.activation, next);
    h = std::move(next);
  }
  return h;
}

void require_alpha(const ParamLayout& layout, const Vector& alpha) {
  if (alpha.size() != layout.total_dim()) {
    throw DimensionError("network: parameter vector has " +
                         std::to_string(alpha.size()) + " entries, layout needs " +
                         std::to_string(layout.total_dim()));
  }
}

void require_input_cols(const NetworkSpec& spec, Eigen::Index cols) {
  if (cols != spec.input_dim()) {
    throw DimensionError("network: input dimension " + std::to_string(cols) +
                         " does not match spec input_dim " +
                         std::to_string(spec.input_dim()));
  }
}

}  // namespace

Activation activation_from_string(const std::string& name) {
  if (name == "relu") return Activation::relu;
  if (name == "linear") return Activation::linear;
  if (name == "softmax") return Activation::softmax;
  throw ConfigError("unknown activation '" + name + "'");
}

std::string to_string(Activation a) {
  switch (a) {
    case Activation::relu: return "relu";
    case Activation::linear: return "linear";
    case Activation::softmax: return "softmax";
  }
  return "?";
}

NetworkSpec::NetworkSpec(std::vector<Layer> layers) : layers_(std::move(layers)) {
  if (layers_.empty()) {
    throw DimensionError("NetworkSpec: at least one layer required");
  }
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    if (layers_[l].width_in < 1 || layers_[l].width_out < 1) {
      throw DimensionError("NetworkSpec: layer widths must be positive");
    }
    if (l + 1 < layers_.size() &&
        layers_[l].width_out != layers_[l + 1].width_in) {
      throw DimensionError("NetworkSpec: layer " + std::to_string(l) +
                           " output width does not chain into layer " +
                           std::to_string(l + 1));
    }
    if (layers_[l].activation == Activation::softmax &&
        l + 1 != layers_.size()) {
      throw DimensionError("NetworkSpec: softmax is only valid on the final layer");
    }
  }
}

NetworkSpec NetworkSpec::mlp(int input_dim, const std::vector<int>& hidden,
                             int output_dim, Activation hidden_activation,
                             Activation output_activation) {
  std::vector<Layer> layers;
  int in = input_dim;
  for (int width : hidden) {
    layers.push_back({in, width, hidden_activation});
    in = width;
  }
  layers.push_back({in, output_dim, output_activation});
  return NetworkSpec(std::move(layers));
}

ParamLayout::ParamLayout(const NetworkSpec& spec) {
  int offset = 0;
  for (const Layer& layer : spec.layers()) {
    weight_offsets_.push_back(offset);
    offset += layer.width_in * layer.width_out;
    bias_offsets_.push_back(offset);
    offset += layer.width_out;
  }
  total_dim_ = offset;
}

ParamLayout param_layout(const NetworkSpec& spec) { return ParamLayout(spec); }

Vector forward(const NetworkSpec& spec, const Vector& alpha, const Vector& x) {
  const ParamLayout layout(spec);
  require_alpha(layout, alpha);
  require_input_cols(spec, x.size());
  return run_layers(spec, layout, alpha.data(), x);
}

Matrix forward_batch(const NetworkSpec& spec, const Vector& alpha,
                     const Matrix& inputs) {
  const ParamLayout layout(spec);
  require_alpha(layout, alpha);
  require_input_cols(spec, inputs.cols());
  return run_layers(spec, layout, alpha.data(), inputs.transpose()).transpose();
}

std::vector<Matrix> forward_ensemble(const NetworkSpec& spec,
                                     const EnsembleMatrix& params,
                                     const Matrix& inputs) {
  const ParamLayout layout(spec);
  if (params.rows() != layout.total_dim()) {
    throw DimensionError("forward_ensemble: parameter ensemble has " +
                         std::to_string(params.rows()) +
                         " rows, layout needs " +
                         std::to_string(layout.total_dim()));
  }
  require_input_cols(spec, inputs.cols());

  const auto samples = inputs.rows();
  const auto members = params.cols();
  std::vector<Matrix> out(static_cast<std::size_t>(samples));
  for (auto& slice : out) slice.resize(spec.output_dim(), members);

  const Matrix inputs_t = inputs.transpose();
  parallel_for(static_cast<std::size_t>(members), [&](std::size_t j) {
    const Matrix pred = run_layers(spec, layout, params.mat().col(j).data(),
                                   inputs_t);  // output_dim x samples
    for (Eigen::Index s = 0; s < samples; ++s) {
      out[static_cast<std::size_t>(s)].col(static_cast<Eigen::Index>(j)) =
          pred.col(s);
    }
  });
  return out;
}

EnsembleMatrix init_ensemble(const ParamLayout& layout, double mean,
                             double stddev, int ensemble_size,
                             std::uint64_t seed) {
  if (ensemble_size < 2) {
    throw DimensionError("init_ensemble: ensemble size must be >= 2");
  }
  if (stddev < 0.0) {
    throw ConfigError("init_ensemble: stddev must be >= 0");
  }
  Matrix a(layout.total_dim(), ensemble_size);
  Rng rng(seed);
  for (Eigen::Index j = 0; j < a.cols(); ++j) {
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
      a(i, j) = mean + stddev * rng.normal();
    }
  }
  return EnsembleMatrix(std::move(a));
}

Vector sgd_step(const NetworkSpec& spec, const Vector& alpha,
                const Matrix& batch_inputs, const Matrix& batch_targets,
                double learning_rate) {
  const ParamLayout layout(spec);
  require_alpha(layout, alpha);
  require_input_cols(spec, batch_inputs.cols());
  if (batch_inputs.rows() != batch_targets.rows()) {
    throw DimensionError("sgd_step: inputs and targets row counts differ");
  }
  if (batch_targets.cols() != spec.output_dim()) {
    throw DimensionError("sgd_step: target dimension does not match output");
  }

  const auto& layers = spec.layers();
  const int num_layers = static_cast<int>(layers.size());
  const auto batch = batch_inputs.rows();

  // forward, keeping each layer's post-activation output (column per sample)
  std::vector<Matrix> acts(static_cast<std::size_t>(num_layers) + 1);
  acts[0] = batch_inputs.transpose();
  std::vector<Matrix> pre(static_cast<std::size_t>(num_layers));
  for (int l = 0; l < num_layers; ++l) {
    pre[l] = weight_block(layout, layers[l], l, alpha.data()) * acts[l];
    pre[l].colwise() += bias_block(layout, layers[l], l, alpha.data());
    acts[l + 1] = pre[l];
    apply_activation(layers[l].activation, acts[l + 1]);
  }

  Vector grad = Vector::Zero(layout.total_dim());
  // d(mean_s 0.5*||y_s - out_s||^2) / d(out) = (out - y) / batch
  Matrix delta = (acts[num_layers] - batch_targets.transpose()) /
                 static_cast<double>(batch);

  for (int l = num_layers - 1; l >= 0; --l) {
    const Layer& layer = layers[l];
    switch (layer.activation) {
      case Activation::linear:
        break;
      case Activation::relu:
        delta = (pre[l].array() > 0.0).cast<double>() * delta.array();
        break;
      case Activation::softmax:
        // J_softmax = diag(s) - s s^T, symmetric
        for (Eigen::Index j = 0; j < delta.cols(); ++j) {
          const Vector s = acts[l + 1].col(j);
          const double dot = s.dot(delta.col(j));
          delta.col(j) = s.array() * (delta.col(j).array() - dot);
        }
        break;
    }
    Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                             Eigen::RowMajor>>
        grad_w(grad.data() + layout.weight_offset(l), layer.width_out,
               layer.width_in);
    grad_w = delta * acts[l].transpose();
    Eigen::Map<Vector> grad_b(grad.data() + layout.bias_offset(l),
                              layer.width_out);
    grad_b = delta.rowwise().sum();
    if (l > 0) {
      delta = weight_block(layout, layer, l, alpha.data()).transpose() * delta;
    }
  }
  return alpha - learning_rate * grad;
}

double mse(const NetworkSpec& spec, const Vector& alpha, const Matrix& inputs,
           const Matrix& targets) {
  const Matrix pred = forward_batch(spec, alpha, inputs);
  return (pred - targets).array().square().mean();
}

double rmse(const NetworkSpec& spec, const Vector& alpha, const Matrix& inputs,
            const Matrix& targets) {
  return std::sqrt(mse(spec, alpha, inputs, targets));
}

double accuracy(const NetworkSpec& spec, const Vector& alpha,
                const Matrix& inputs, const Matrix& targets) {
  const Matrix pred = forward_batch(spec, alpha, inputs);
  Eigen::Index hits = 0;
  for (Eigen::Index s = 0; s < pred.rows(); ++s) {
    Eigen::Index pi, ti;
    pred.row(s).maxCoeff(&pi);
    targets.row(s).maxCoeff(&ti);
    if (pi == ti) ++hits;
  }
  return pred.rows() == 0 ? 0.0
                          : static_cast<double>(hits) /
                                static_cast<double>(pred.rows());
}

}  // namespace enkl
