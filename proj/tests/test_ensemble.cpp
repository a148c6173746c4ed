#include <doctest.h>

#include <cmath>

#include "enkl/ensemble.hpp"
#include "enkl/rng.hpp"

using namespace enkl;

namespace {

Matrix random_matrix(Rng& rng, Eigen::Index rows, Eigen::Index cols,
                     double scale = 1.0) {
  Matrix m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j) {
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = scale * rng.normal();
  }
  return m;
}

double rel_frobenius(const Matrix& a, const Matrix& b) {
  const double denom = std::max(1.0, b.norm());
  return (a - b).norm() / denom;
}

}  // namespace

TEST_CASE("deviations removes the mean column") {
  Matrix q(1, 2);
  q << 1, 3;
  const Matrix d = deviations(EnsembleMatrix(q)).mat();
  CHECK(d(0, 0) == doctest::Approx(-1.0));
  CHECK(d(0, 1) == doctest::Approx(1.0));
}

TEST_CASE("deviations of identical columns is zero") {
  Matrix q(3, 4);
  q.colwise() = Vector::LinSpaced(3, 1.0, 3.0);
  CHECK(deviations(EnsembleMatrix(q)).mat().norm() == 0.0);
}

TEST_CASE("deviations hand case 2x3") {
  Matrix q(2, 3);
  q << 1, 2, 3, 4, 4, 4;
  Matrix expected(2, 3);
  expected << -1, 0, 1, 0, 0, 0;
  CHECK((deviations(EnsembleMatrix(q)).mat() - expected).norm() == 0.0);
}

TEST_CASE("deviation columns sum to zero for random ensembles") {
  Rng rng(11);
  for (int rep = 0; rep < 20; ++rep) {
    const Matrix q = random_matrix(rng, 5, 9, 10.0);
    const Matrix d = deviations(EnsembleMatrix(q)).mat();
    CHECK(d.rowwise().sum().lpNorm<Eigen::Infinity>() <=
          1e-12 * std::max(1.0, q.norm()));
  }
}

TEST_CASE("analyze: zero innovation is a fixed point") {
  Rng rng(7);
  const Matrix x = random_matrix(rng, 4, 6, 2.0);
  const Matrix z = random_matrix(rng, 3, 6, 2.0);
  NoiseModel noise;
  noise.r = 0.5;
  const Analysis a =
      analyze(EnsembleMatrix(x), EnsembleMatrix(z), EnsembleMatrix(z), noise);
  CHECK(rel_frobenius(a.posterior.mat(), x) <= 1e-12);
  const Matrix via_m = apply_update(EnsembleMatrix(x), a.update).mat();
  CHECK(rel_frobenius(via_m, x) <= 1e-12);
}

TEST_CASE("analyze: scalar hand case matches the exact Kalman update") {
  // X = [1, 3], identity observation, Y = [2.5, 2.5], r = 1:
  // ZZ^T (unnormalized) = 2, gain = 2/3, X+ = [2, 8/3], mean 7/3
  Matrix x(1, 2);
  x << 1, 3;
  Matrix y(1, 2);
  y << 2.5, 2.5;
  NoiseModel noise;
  noise.r = 1.0;
  const Analysis a =
      analyze(EnsembleMatrix(x), EnsembleMatrix(x), EnsembleMatrix(y), noise);
  CHECK(a.posterior.mat()(0, 0) == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(a.posterior.mat()(0, 1) == doctest::Approx(8.0 / 3.0).epsilon(1e-12));
  CHECK(a.posterior.mat().mean() == doctest::Approx(7.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("analyze: infinite-noise limit leaves the ensemble unchanged") {
  Rng rng(3);
  const Matrix x = random_matrix(rng, 3, 5, 1.0);
  const Matrix z = random_matrix(rng, 2, 5, 1.0);
  const Matrix y = random_matrix(rng, 2, 5, 1.0);
  NoiseModel noise;
  noise.r = 1e8;
  const Analysis a =
      analyze(EnsembleMatrix(x), EnsembleMatrix(z), EnsembleMatrix(y), noise);
  CHECK((a.posterior.mat() - x).lpNorm<Eigen::Infinity>() <= 1e-6);
}

TEST_CASE("analyze: r = 0 with rank-deficient covariance is an error") {
  Matrix x(2, 3);
  x << 1, 2, 3, 4, 5, 6;
  Matrix z(2, 3);
  z.colwise() = Vector::LinSpaced(2, 1.0, 2.0);  // identical columns
  Matrix y = z;
  y.array() += 1.0;
  NoiseModel noise;
  noise.r = 0.0;
  CHECK_THROWS_AS(
      analyze(EnsembleMatrix(x), EnsembleMatrix(z), EnsembleMatrix(y), noise),
      NumericalError);
}

TEST_CASE("analyze: normalized convention matches unbiased-variance Kalman") {
  Matrix x(1, 2);
  x << 1, 3;
  Matrix y(1, 2);
  y << 2.5, 2.5;
  NoiseModel noise;
  noise.r = 1.0;
  const Analysis a = analyze(EnsembleMatrix(x), EnsembleMatrix(x),
                             EnsembleMatrix(y), noise, /*normalized=*/true);
  // sample variance 2 (E-1 divisor), gain 2/3 identical here since E = 2
  CHECK(a.posterior.mat().mean() == doctest::Approx(7.0 / 3.0).epsilon(1e-12));
  // E = 3 case differs between conventions
  Matrix x3(1, 3);
  x3 << 1, 2, 6;
  Matrix y3(1, 3);
  y3.setConstant(4.0);
  const double mean = x3.mean();
  const double var = (x3.array() - mean).square().sum() / 2.0;
  const double gain = var / (var + 1.0);
  const Analysis a3 = analyze(EnsembleMatrix(x3), EnsembleMatrix(x3),
                              EnsembleMatrix(y3), noise, /*normalized=*/true);
  CHECK(a3.posterior.mat().mean() ==
        doctest::Approx(mean + gain * (4.0 - mean)).epsilon(1e-12));
}

TEST_CASE("apply_update: identity and column swap") {
  Matrix q(1, 2);
  q << 1, 2;
  CHECK((apply_update(EnsembleMatrix(q), UpdateMatrix(Matrix::Identity(2, 2)))
             .mat() -
         q)
            .norm() == 0.0);
  Matrix swap(2, 2);
  swap << 0, 1, 1, 0;
  const Matrix swapped =
      apply_update(EnsembleMatrix(q), UpdateMatrix(swap)).mat();
  CHECK(swapped(0, 0) == 2.0);
  CHECK(swapped(0, 1) == 1.0);
}

TEST_CASE("apply_update: dimension mismatch throws") {
  Matrix q(1, 2);
  q << 1, 2;
  CHECK_THROWS_AS(
      apply_update(EnsembleMatrix(q), UpdateMatrix(Matrix::Identity(3, 3))),
      DimensionError);
}

TEST_CASE("update-matrix identity across randomized shapes") {
  Rng rng(1234);
  for (int rep = 0; rep < 100; ++rep) {
    const auto n = static_cast<Eigen::Index>(1 + rng.below(8));
    const auto m = static_cast<Eigen::Index>(1 + rng.below(5));
    const auto e = static_cast<Eigen::Index>(2 + rng.below(11));
    const Matrix x = random_matrix(rng, n, e, 3.0);
    const Matrix z = random_matrix(rng, m, e, 2.0);
    const Matrix y = random_matrix(rng, m, e, 2.0);
    NoiseModel noise;
    noise.r = 0.1 + 2.0 * rng.uniform();
    const Analysis a =
        analyze(EnsembleMatrix(x), EnsembleMatrix(z), EnsembleMatrix(y), noise);
    const Matrix via_m = apply_update(EnsembleMatrix(x), a.update).mat();
    CHECK(rel_frobenius(via_m, a.posterior.mat()) <= 1e-10);
  }
}

TEST_CASE("scalar linear-Gaussian oracle across random ensembles") {
  Rng rng(99);
  for (int rep = 0; rep < 50; ++rep) {
    const auto e = static_cast<Eigen::Index>(2 + rng.below(30));
    Matrix x = random_matrix(rng, 1, e, 2.0);
    const double target = rng.normal();
    Matrix y(1, e);
    y.setConstant(target);
    NoiseModel noise;
    noise.r = 0.2 + rng.uniform();
    const Analysis a =
        analyze(EnsembleMatrix(x), EnsembleMatrix(x), EnsembleMatrix(y), noise);
    const double mean = x.mean();
    const double p = (x.array() - mean).square().sum();  // literal, no 1/(E-1)
    const double kalman_mean =
        mean + p / (p + noise.r * noise.r) * (target - mean);
    CHECK(a.posterior.mat().mean() ==
          doctest::Approx(kalman_mean).epsilon(1e-10));
  }
}

TEST_CASE("variance contraction under identity observation") {
  Rng rng(5);
  for (int rep = 0; rep < 20; ++rep) {
    const Matrix x = random_matrix(rng, 3, 12, 4.0);
    Matrix y(3, 12);
    y.colwise() = Vector(random_matrix(rng, 3, 1, 2.0));
    NoiseModel noise;
    noise.r = 0.3;
    const Analysis a =
        analyze(EnsembleMatrix(x), EnsembleMatrix(x), EnsembleMatrix(y), noise);
    const Vector prior = ensemble_stats(EnsembleMatrix(x)).variance;
    const Vector post = ensemble_stats(a.posterior).variance;
    for (Eigen::Index i = 0; i < prior.size(); ++i) {
      CHECK(post(i) <= prior(i) * (1.0 + 1e-12));
    }
  }
}

TEST_CASE("shift invariance of the analysis") {
  Rng rng(21);
  const Matrix x = random_matrix(rng, 3, 8, 2.0);
  Matrix y(3, 8);
  y.colwise() = Vector(random_matrix(rng, 3, 1, 1.0));
  NoiseModel noise;
  noise.r = 0.7;
  const Analysis base =
      analyze(EnsembleMatrix(x), EnsembleMatrix(x), EnsembleMatrix(y), noise);

  const Vector c = random_matrix(rng, 3, 1, 5.0);
  const Matrix xs = x.colwise() + c;
  const Matrix ys = y.colwise() + c;
  const Analysis shifted = analyze(EnsembleMatrix(xs), EnsembleMatrix(xs),
                                   EnsembleMatrix(ys), noise);
  const Matrix expected = base.posterior.mat().colwise() + c;
  CHECK(rel_frobenius(shifted.posterior.mat(), expected) <= 1e-10);
}

TEST_CASE("ensemble_stats examples") {
  Matrix q(1, 2);
  q << 1, 3;
  auto s = ensemble_stats(EnsembleMatrix(q));
  CHECK(s.mean(0) == doctest::Approx(2.0));
  CHECK(s.variance(0) == doctest::Approx(2.0));

  Matrix c(2, 3);
  c.row(0).setConstant(4.0);
  c.row(1).setConstant(-1.0);
  CHECK(ensemble_stats(EnsembleMatrix(c)).variance.norm() == 0.0);

  Matrix q3(1, 3);
  q3 << 0, 1, 2;
  auto s3 = ensemble_stats(EnsembleMatrix(q3));
  CHECK(s3.mean(0) == doctest::Approx(1.0));
  CHECK(s3.variance(0) == doctest::Approx(1.0));
}

TEST_CASE("perturbed_observations: r = 0 replicates, seeds are stable") {
  Vector y(2);
  y << 1.5, -2.0;
  NoiseModel silent;
  silent.r = 0.0;
  const Matrix m = perturbed_observations(y, silent, 5, 42).mat();
  for (Eigen::Index j = 0; j < 5; ++j) {
    CHECK((m.col(j) - y).norm() == 0.0);
  }

  NoiseModel noisy;
  noisy.r = 0.3;
  const Matrix a = perturbed_observations(y, noisy, 6, 42).mat();
  const Matrix b = perturbed_observations(y, noisy, 6, 42).mat();
  CHECK((a - b).norm() == 0.0);
  const Matrix c = perturbed_observations(y, noisy, 6, 43).mat();
  CHECK((a - c).norm() != 0.0);
}

TEST_CASE("perturbed_observations: sample std matches r at large E") {
  Vector y(1);
  y << 0.0;
  NoiseModel noise;
  noise.r = 1.0;
  const Matrix m = perturbed_observations(y, noise, 10000, 7).mat();
  const double mean = m.mean();
  const double stddev = std::sqrt((m.array() - mean).square().sum() / 9999.0);
  CHECK(stddev >= 0.97);
  CHECK(stddev <= 1.03);
}

TEST_CASE("EnsembleMatrix rejects non-finite entries") {
  Matrix q(1, 2);
  q << 1.0, std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(EnsembleMatrix{q}, NumericalError);
}

TEST_CASE("NoiseModel validation") {
  NoiseModel bad;
  bad.mode = NoiseModel::Mode::adaptive;
  bad.r = 0.001;
  bad.r_min = 0.01;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}
