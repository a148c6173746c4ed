#include <doctest.h>

#include <cmath>

#include "enkl/network.hpp"
#include "enkl/parallel.hpp"
#include "enkl/rng.hpp"

using namespace enkl;

namespace {

Vector random_vector(Rng& rng, Eigen::Index n, double scale = 1.0) {
  Vector v(n);
  for (Eigen::Index i = 0; i < n; ++i) v(i) = scale * rng.normal();
  return v;
}

Matrix random_rows(Rng& rng, Eigen::Index rows, Eigen::Index cols,
                   double scale = 1.0) {
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = scale * rng.normal();
  }
  return m;
}

// mean-over-batch least-squares loss, the quantity sgd_step descends
double batch_loss(const NetworkSpec& spec, const Vector& alpha,
                  const Matrix& inputs, const Matrix& targets) {
  double total = 0.0;
  for (Eigen::Index s = 0; s < inputs.rows(); ++s) {
    const Vector out = forward(spec, alpha, inputs.row(s));
    total += 0.5 * (targets.row(s).transpose() - out).squaredNorm();
  }
  return total / static_cast<double>(inputs.rows());
}

}  // namespace

TEST_CASE("param_layout: Boston architecture flattens to 1537") {
  const NetworkSpec spec = NetworkSpec::mlp(13, {32, 32}, 1, Activation::relu,
                                            Activation::linear);
  CHECK(param_layout(spec).total_dim() == 1537);
}

TEST_CASE("param_layout: single linear neuron has two parameters") {
  const NetworkSpec spec({{1, 1, Activation::linear}});
  CHECK(param_layout(spec).total_dim() == 2);
}

TEST_CASE("param_layout: blocks partition the flat vector") {
  const NetworkSpec spec = NetworkSpec::mlp(3, {4, 5}, 2, Activation::relu,
                                            Activation::linear);
  const ParamLayout layout(spec);
  int expected_offset = 0;
  for (int l = 0; l < layout.num_layers(); ++l) {
    const Layer& layer = spec.layers()[static_cast<std::size_t>(l)];
    CHECK(layout.weight_offset(l) == expected_offset);
    expected_offset += layer.width_in * layer.width_out;
    CHECK(layout.bias_offset(l) == expected_offset);
    expected_offset += layer.width_out;
  }
  CHECK(layout.total_dim() == expected_offset);
}

TEST_CASE("NetworkSpec rejects broken chains and misplaced softmax") {
  CHECK_THROWS_AS(NetworkSpec({{3, 4, Activation::relu},
                               {5, 2, Activation::linear}}),
                  DimensionError);
  CHECK_THROWS_AS(NetworkSpec({{3, 4, Activation::softmax},
                               {4, 2, Activation::linear}}),
                  DimensionError);
}

TEST_CASE("forward: zero parameters with relu give zero output") {
  const NetworkSpec spec = NetworkSpec::mlp(3, {4}, 2, Activation::relu,
                                            Activation::linear);
  const Vector alpha = Vector::Zero(param_layout(spec).total_dim());
  Vector x(3);
  x << 1.0, -2.0, 0.5;
  CHECK(forward(spec, alpha, x).norm() == 0.0);
}

TEST_CASE("forward: identity single linear layer") {
  const NetworkSpec spec({{3, 3, Activation::linear}});
  const ParamLayout layout(spec);
  Vector alpha = Vector::Zero(layout.total_dim());
  // row-major identity weight block
  for (int i = 0; i < 3; ++i) alpha(layout.weight_offset(0) + i * 3 + i) = 1.0;
  Vector x(3);
  x << 0.3, -1.2, 7.0;
  CHECK((forward(spec, alpha, x) - x).norm() == 0.0);
}

TEST_CASE("forward: 1->1 relu hand case") {
  const NetworkSpec spec({{1, 1, Activation::relu}});
  const ParamLayout layout(spec);
  Vector alpha(2);
  alpha(layout.weight_offset(0)) = 2.0;
  alpha(layout.bias_offset(0)) = -1.0;
  Vector x(1);
  x << 1.0;
  CHECK(forward(spec, alpha, x)(0) == doctest::Approx(1.0));
  x << 0.0;
  CHECK(forward(spec, alpha, x)(0) == doctest::Approx(0.0));
}

TEST_CASE("softmax output is a probability vector") {
  const NetworkSpec spec = NetworkSpec::mlp(4, {6}, 3, Activation::relu,
                                            Activation::softmax);
  Rng rng(17);
  for (int rep = 0; rep < 10; ++rep) {
    const Vector alpha =
        random_vector(rng, param_layout(spec).total_dim(), 2.0);
    const Vector out = forward(spec, alpha, random_vector(rng, 4, 3.0));
    CHECK(out.minCoeff() >= 0.0);
    CHECK(out.sum() == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("forward_ensemble: identical members, E=1 reduction, batch equality") {
  const NetworkSpec spec = NetworkSpec::mlp(2, {3}, 2, Activation::relu,
                                            Activation::linear);
  const ParamLayout layout(spec);
  Rng rng(23);
  const Vector alpha = random_vector(rng, layout.total_dim());
  const Matrix inputs = random_rows(rng, 4, 2);

  Matrix identical(layout.total_dim(), 5);
  identical.colwise() = alpha;
  const auto slices = forward_ensemble(spec, EnsembleMatrix(identical), inputs);
  REQUIRE(slices.size() == 4);
  for (const Matrix& slice : slices) {
    for (Eigen::Index j = 1; j < slice.cols(); ++j) {
      CHECK((slice.col(j) - slice.col(0)).norm() == 0.0);
    }
  }

  const auto single =
      forward_ensemble(spec, EnsembleMatrix(Matrix(alpha)), inputs);
  for (Eigen::Index s = 0; s < inputs.rows(); ++s) {
    const Vector direct = forward(spec, alpha, inputs.row(s));
    CHECK((single[static_cast<std::size_t>(s)].col(0) - direct).norm() == 0.0);
    CHECK((slices[static_cast<std::size_t>(s)].col(0) - direct).norm() == 0.0);
  }
}

TEST_CASE("forward_ensemble: parallel evaluation is bit-identical to serial") {
  const NetworkSpec spec = NetworkSpec::mlp(3, {8, 8}, 2, Activation::relu,
                                            Activation::linear);
  const ParamLayout layout(spec);
  const EnsembleMatrix params =
      init_ensemble(layout, 0.0, 0.5, 16, 2024);
  Rng rng(31);
  const Matrix inputs = random_rows(rng, 7, 3);

  set_threads(1);
  const auto serial = forward_ensemble(spec, params, inputs);
  set_threads(4);
  const auto parallel = forward_ensemble(spec, params, inputs);
  set_threads(1);
  for (std::size_t s = 0; s < serial.size(); ++s) {
    CHECK((serial[s] - parallel[s]).norm() == 0.0);
  }
}

TEST_CASE("init_ensemble: zero std, statistics, determinism") {
  const NetworkSpec spec = NetworkSpec::mlp(13, {32, 32}, 1, Activation::relu,
                                            Activation::linear);
  const ParamLayout layout(spec);

  const Matrix constant = init_ensemble(layout, 0.25, 0.0, 3, 1).mat();
  CHECK((constant.array() - 0.25).abs().maxCoeff() == 0.0);

  const Matrix draws = init_ensemble(layout, 0.0, 0.01, 100, 5).mat();
  const double stddev = std::sqrt(
      (draws.array() - draws.mean()).square().sum() /
      static_cast<double>(draws.size() - 1));
  CHECK(stddev == doctest::Approx(0.01).epsilon(0.05));

  const Matrix again = init_ensemble(layout, 0.0, 0.01, 100, 5).mat();
  CHECK((draws - again).norm() == 0.0);
}

TEST_CASE("sgd_step: zero-residual batch leaves parameters unchanged") {
  const NetworkSpec spec({{2, 2, Activation::linear}});
  const ParamLayout layout(spec);
  Vector alpha = Vector::Zero(layout.total_dim());
  alpha(layout.weight_offset(0) + 0) = 1.0;
  alpha(layout.weight_offset(0) + 3) = 1.0;  // identity weights
  Rng rng(3);
  const Matrix inputs = random_rows(rng, 5, 2);
  const Vector next = sgd_step(spec, alpha, inputs, inputs, 0.5);
  CHECK((next - alpha).norm() == 0.0);
}

TEST_CASE("sgd_step: hand gradient on a single linear neuron") {
  const NetworkSpec spec({{1, 1, Activation::linear}});
  Vector alpha = Vector::Zero(2);
  Matrix x(1, 1), y(1, 1);
  x << 1.0;
  y << 1.0;
  const Vector next = sgd_step(spec, alpha, x, y, 1.0);
  CHECK(next(0) == doctest::Approx(1.0));
  CHECK(next(1) == doctest::Approx(1.0));
}

TEST_CASE("sgd_step gradients match central finite differences") {
  Rng rng(404);
  for (int rep = 0; rep < 6; ++rep) {
    const Activation out_act =
        rep % 2 == 0 ? Activation::linear : Activation::softmax;
    const NetworkSpec spec =
        NetworkSpec::mlp(3, {4}, 2, Activation::relu, out_act);
    const ParamLayout layout(spec);
    const Vector alpha = random_vector(rng, layout.total_dim(), 0.8);
    const Matrix inputs = random_rows(rng, 5, 3);
    Matrix targets = random_rows(rng, 5, 2);
    if (out_act == Activation::softmax) {
      targets = targets.array().abs();
      for (Eigen::Index s = 0; s < targets.rows(); ++s) {
        targets.row(s) /= targets.row(s).sum();
      }
    }

    const Vector stepped = sgd_step(spec, alpha, inputs, targets, 1.0);
    const Vector analytic = alpha - stepped;  // lr = 1

    const double h = 1e-5;
    for (Eigen::Index i = 0; i < alpha.size(); ++i) {
      Vector probe = alpha;
      probe(i) += h;
      const double up = batch_loss(spec, probe, inputs, targets);
      probe(i) -= 2 * h;
      const double down = batch_loss(spec, probe, inputs, targets);
      const double fd = (up - down) / (2 * h);
      const double denom = std::max({1.0, std::abs(analytic(i)), std::abs(fd)});
      CHECK(std::abs(analytic(i) - fd) / denom <= 1e-6);
    }
  }
}
