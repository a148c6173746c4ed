#pragma once

#include <Eigen/Dense>
#include <cstdint>

#include "enkl/errors.hpp"

namespace enkl {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// Matrix of column samples: column j is ensemble member j. Operations that
// take sample statistics (analyze, ensemble_stats, ...) require E >= 2;
// construction itself only requires a nonempty finite matrix so that
// single-member prediction slices remain representable.
class EnsembleMatrix {
 public:
  EnsembleMatrix() = default;
  explicit EnsembleMatrix(Matrix data);

  Eigen::Index rows() const { return data_.rows(); }
  Eigen::Index cols() const { return data_.cols(); }
  const Matrix& mat() const { return data_; }

 private:
  Matrix data_;
};

// Observation tolerance R = r^2 I plus the adaptive-tolerance parameters.
struct NoiseModel {
  enum class Mode { fixed, adaptive };

  double r = 0.01;
  double adapt_kappa = 1.0;
  double r_min = 0.0;
  Mode mode = Mode::fixed;

  void validate() const;
};

// E x E right-multiplier form of an analysis: Q_posterior = Q * M for any
// ensemble Q co-evolving with the one the update was derived from.
class UpdateMatrix {
 public:
  UpdateMatrix() = default;
  explicit UpdateMatrix(Matrix m);

  Eigen::Index size() const { return data_.rows(); }
  const Matrix& mat() const { return data_; }

 private:
  Matrix data_;
};

struct Analysis {
  EnsembleMatrix posterior;
  UpdateMatrix update;
};

struct EnsembleStats {
  Vector mean;
  Vector variance;  // unbiased, divisor E-1
};

// Column-mean removal: result column j = Q column j minus the mean column.
EnsembleMatrix deviations(const EnsembleMatrix& q);

// Ensemble Kalman analysis. Deviation products are unnormalized by default
// (the literal update); `normalized` divides both ZZ^T and XZ^T by (E-1).
// Returns the posterior computed by the direct route and the update matrix
// M with X * M == posterior as an algebraic identity.
Analysis analyze(const EnsembleMatrix& x, const EnsembleMatrix& z,
                 const EnsembleMatrix& y, const NoiseModel& noise,
                 bool normalized = false);

// The M of analyze() without forming the posterior; X is not needed.
UpdateMatrix update_matrix(const EnsembleMatrix& z, const EnsembleMatrix& y,
                           const NoiseModel& noise, bool normalized = false);

EnsembleMatrix apply_update(const EnsembleMatrix& q, const UpdateMatrix& m);

EnsembleStats ensemble_stats(const EnsembleMatrix& q);

// Mean over rows of the per-row unbiased sample variance.
double mean_variance(const EnsembleMatrix& q);

// E columns of y + N(0, r^2 I); r = 0 replicates y exactly.
EnsembleMatrix perturbed_observations(const Vector& y, const NoiseModel& noise,
                                      int ensemble_size, std::uint64_t seed);

// E identical copies of y.
EnsembleMatrix replicated_observations(const Vector& y, int ensemble_size);

}  // namespace enkl
