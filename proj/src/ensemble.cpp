#include "enkl/ensemble.hpp"

#include <Eigen/Cholesky>
#include <string>

#include "enkl/parallel.hpp"
#include "enkl/rng.hpp"

namespace enkl {

namespace {

void require_same_ensemble(const EnsembleMatrix& a, const EnsembleMatrix& b,
                           const char* what) {
  if (a.cols() != b.cols()) {
    throw DimensionError(std::string(what) + ": ensemble sizes differ (" +
                         std::to_string(a.cols()) + " vs " +
                         std::to_string(b.cols()) + ")");
  }
}

void require_stats_ensemble(const EnsembleMatrix& q, const char* what) {
  if (q.cols() < 2) {
    throw DimensionError(std::string(what) +
                         ": sample statistics need an ensemble size of at "
                         "least 2, got " +
                         std::to_string(q.cols()));
  }
}

// Shared core of analyze()/update_matrix(): factor C = s*ZZ^T + r^2 I and
// solve for H = C^{-1} (Y - Z).
struct AnalysisCore {
  Matrix z_dev;  // m x E
  Matrix h;      // m x E
  double scale;  // 1 or 1/(E-1)
};

AnalysisCore solve_core(const EnsembleMatrix& z, const EnsembleMatrix& y,
                        const NoiseModel& noise, bool normalized) {
  noise.validate();
  require_stats_ensemble(z, "analyze");
  require_same_ensemble(z, y, "analyze");
  if (z.rows() != y.rows()) {
    throw DimensionError("analyze: Z has " + std::to_string(z.rows()) +
                         " observation rows but Y has " +
                         std::to_string(y.rows()));
  }

  const auto e = z.cols();
  const double scale = normalized ? 1.0 / static_cast<double>(e - 1) : 1.0;

  AnalysisCore core;
  core.scale = scale;
  core.z_dev = z.mat().colwise() - z.mat().rowwise().mean();

  Matrix c = scale * (core.z_dev * core.z_dev.transpose());
  c.diagonal().array() += noise.r * noise.r;

  const Matrix innovation = y.mat() - z.mat();

  Eigen::LLT<Matrix> llt(c);
  if (llt.info() != Eigen::Success) {
    if (noise.r == 0.0) {
      throw NumericalError(
          "analyze: r = 0 with a rank-deficient ensemble covariance");
    }
    // jitter escalation: 1e-12 then x10 per retry, max 4 retries; scaled by
    // the covariance magnitude so escalation still works for large ensembles
    double jitter = 1e-12 * std::max(1.0, c.diagonal().mean());
    bool ok = false;
    for (int attempt = 0; attempt < 4; ++attempt) {
      Matrix cj = c;
      cj.diagonal().array() += jitter;
      llt.compute(cj);
      if (llt.info() == Eigen::Success) {
        ok = true;
        break;
      }
      jitter *= 10.0;
    }
    if (!ok) {
      throw NumericalError(
          "analyze: observation covariance is not positive definite after "
          "jitter escalation");
    }
  }
  core.h = llt.solve(innovation);
  return core;
}

Matrix update_from_core(const AnalysisCore& core) {
  Matrix w = core.scale * (core.z_dev.transpose() * core.h);
  // (I - 11^T/E) W removes the column means, absorbing the deviation
  // operator on X into the update matrix.
  const Eigen::RowVectorXd col_means = w.colwise().mean();
  w.rowwise() -= col_means;
  w.diagonal().array() += 1.0;
  return w;
}

}  // namespace

EnsembleMatrix::EnsembleMatrix(Matrix data) : data_(std::move(data)) {
  if (data_.rows() < 1 || data_.cols() < 1) {
    throw DimensionError("EnsembleMatrix: matrix must be nonempty");
  }
  if (!data_.allFinite()) {
    throw NumericalError("EnsembleMatrix: non-finite entries");
  }
}

void NoiseModel::validate() const {
  if (!(r >= 0.0) || !(adapt_kappa >= 0.0) || !(r_min >= 0.0)) {
    throw ConfigError("NoiseModel: r, adapt_kappa, r_min must be >= 0");
  }
  if (mode == Mode::adaptive && r_min > r) {
    throw ConfigError("NoiseModel: adaptive mode requires r_min <= r");
  }
}

UpdateMatrix::UpdateMatrix(Matrix m) : data_(std::move(m)) {
  if (data_.rows() != data_.cols() || data_.rows() < 1) {
    throw DimensionError("UpdateMatrix: must be square and nonempty");
  }
  if (!data_.allFinite()) {
    throw NumericalError("UpdateMatrix: non-finite entries");
  }
}

EnsembleMatrix deviations(const EnsembleMatrix& q) {
  return EnsembleMatrix(q.mat().colwise() - q.mat().rowwise().mean());
}

Analysis analyze(const EnsembleMatrix& x, const EnsembleMatrix& z,
                 const EnsembleMatrix& y, const NoiseModel& noise,
                 bool normalized) {
  require_same_ensemble(x, z, "analyze");
  const AnalysisCore core = solve_core(z, y, noise, normalized);

  const Matrix x_dev = x.mat().colwise() - x.mat().rowwise().mean();
  const Matrix gain = core.scale * (x_dev * core.z_dev.transpose());  // n x m
  Analysis result;
  result.posterior = EnsembleMatrix(x.mat() + gain * core.h);
  result.update = UpdateMatrix(update_from_core(core));
  return result;
}

UpdateMatrix update_matrix(const EnsembleMatrix& z, const EnsembleMatrix& y,
                           const NoiseModel& noise, bool normalized) {
  const AnalysisCore core = solve_core(z, y, noise, normalized);
  return UpdateMatrix(update_from_core(core));
}

EnsembleMatrix apply_update(const EnsembleMatrix& q, const UpdateMatrix& m) {
  if (q.cols() != m.size()) {
    throw DimensionError("apply_update: ensemble size " +
                         std::to_string(q.cols()) +
                         " does not match update matrix size " +
                         std::to_string(m.size()));
  }
  const int workers = threads();
  if (workers <= 1 || q.rows() * q.cols() * q.cols() < (1 << 22)) {
    return EnsembleMatrix(q.mat() * m.mat());
  }
  // row-blocked product: disjoint output blocks, entries identical to the
  // single-threaded result
  Matrix out(q.rows(), q.cols());
  const auto rows = q.rows();
  const auto blocks = static_cast<std::size_t>(workers);
  parallel_for(blocks, [&](std::size_t b) {
    const auto begin = static_cast<Eigen::Index>(
        rows * static_cast<Eigen::Index>(b) / static_cast<Eigen::Index>(blocks));
    const auto end = static_cast<Eigen::Index>(
        rows * (static_cast<Eigen::Index>(b) + 1) /
        static_cast<Eigen::Index>(blocks));
    if (end > begin) {
      out.middleRows(begin, end - begin).noalias() =
          q.mat().middleRows(begin, end - begin) * m.mat();
    }
  });
  return EnsembleMatrix(std::move(out));
}

EnsembleStats ensemble_stats(const EnsembleMatrix& q) {
  require_stats_ensemble(q, "ensemble_stats");
  const auto e = q.cols();
  EnsembleStats stats;
  stats.mean = q.mat().rowwise().mean();
  const Matrix dev = q.mat().colwise() - stats.mean;
  stats.variance = dev.array().square().rowwise().sum() /
                   static_cast<double>(e - 1);
  return stats;
}

double mean_variance(const EnsembleMatrix& q) {
  return ensemble_stats(q).variance.mean();
}

EnsembleMatrix perturbed_observations(const Vector& y, const NoiseModel& noise,
                                      int ensemble_size, std::uint64_t seed) {
  noise.validate();
  if (ensemble_size < 2) {
    throw DimensionError("perturbed_observations: ensemble size must be >= 2");
  }
  Matrix out = y.replicate(1, ensemble_size);
  if (noise.r > 0.0) {
    Rng rng(seed);
    for (Eigen::Index j = 0; j < out.cols(); ++j) {
      for (Eigen::Index i = 0; i < out.rows(); ++i) {
        out(i, j) += noise.r * rng.normal();
      }
    }
  }
  return EnsembleMatrix(std::move(out));
}

EnsembleMatrix replicated_observations(const Vector& y, int ensemble_size) {
  if (ensemble_size < 2) {
    throw DimensionError(
        "replicated_observations: ensemble size must be >= 2");
  }
  return EnsembleMatrix(y.replicate(1, ensemble_size));
}

}  // namespace enkl
