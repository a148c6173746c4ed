#include "enkl/dynsys.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <sstream>

#include "enkl/rng.hpp"

namespace enkl {

namespace {

void enumerate_exponents(int state_dim, int degree, int var, int remaining,
                         std::vector<int>& current,
                         std::vector<std::vector<int>>& out) {
  if (var == state_dim) {
    if (remaining == 0) out.push_back(current);
    return;
  }
  for (int e = 0; e <= remaining; ++e) {
    current[var] = e;
    enumerate_exponents(state_dim, degree, var + 1, remaining - e, current, out);
  }
  current[var] = 0;
}

}  // namespace

TermDictionary::TermDictionary(int state_dim, int max_degree)
    : state_dim_(state_dim), max_degree_(max_degree) {
  if (state_dim < 1) throw ConfigError("TermDictionary: state_dim must be >= 1");
  if (max_degree < 1) throw ConfigError("TermDictionary: max_degree must be >= 1");
  for (int degree = 1; degree <= max_degree; ++degree) {
    std::vector<std::vector<int>> of_degree;
    std::vector<int> current(state_dim, 0);
    enumerate_exponents(state_dim, degree, 0, degree, current, of_degree);
    // mixed products before pure powers, then by variable index: sort by
    // (max exponent, reversed-lex on the exponent tuple)
    std::stable_sort(of_degree.begin(), of_degree.end(),
                     [](const std::vector<int>& a, const std::vector<int>& b) {
                       const int ma = *std::max_element(a.begin(), a.end());
                       const int mb = *std::max_element(b.begin(), b.end());
                       if (ma != mb) return ma < mb;
                       return std::lexicographical_compare(
                           b.begin(), b.end(), a.begin(), a.end());
                     });
    terms_.insert(terms_.end(), of_degree.begin(), of_degree.end());
  }
}

std::string TermDictionary::term_name(int term) const {
  const std::vector<int>& e = exponents(term);
  std::string name;
  for (int v = 0; v < state_dim_; ++v) {
    if (e[v] == 0) continue;
    if (!name.empty()) name += "*";
    name += "x" + std::to_string(v + 1);
    if (e[v] > 1) name += "^" + std::to_string(e[v]);
  }
  return name;
}

Vector TermDictionary::values(const Vector& x) const {
  if (x.size() != state_dim_) {
    throw DimensionError("TermDictionary::values: state has " +
                         std::to_string(x.size()) + " entries, expected " +
                         std::to_string(state_dim_));
  }
  Vector out(size());
  for (int t = 0; t < size(); ++t) {
    double v = 1.0;
    for (int var = 0; var < state_dim_; ++var) {
      for (int k = 0; k < terms_[t][var]; ++k) v *= x(var);
    }
    out(t) = v;
  }
  return out;
}

std::string TermDictionary::serialize() const {
  std::ostringstream os;
  os << state_dim_ << " " << max_degree_ << " " << terms_.size() << "\n";
  for (const auto& t : terms_) {
    for (int v = 0; v < state_dim_; ++v) os << t[v] << (v + 1 == state_dim_ ? "\n" : " ");
  }
  return os.str();
}

TermDictionary TermDictionary::deserialize(const std::string& text) {
  std::istringstream is(text);
  int state_dim = 0, max_degree = 0;
  std::size_t count = 0;
  if (!(is >> state_dim >> max_degree >> count)) {
    throw IoError("TermDictionary: malformed serialization header");
  }
  TermDictionary dict(state_dim, max_degree);
  if (count != dict.terms_.size()) {
    throw IoError("TermDictionary: term count mismatch in serialization");
  }
  for (std::size_t t = 0; t < count; ++t) {
    for (int v = 0; v < state_dim; ++v) {
      int e = 0;
      if (!(is >> e)) throw IoError("TermDictionary: truncated serialization");
      if (e != dict.terms_[t][v]) {
        throw IoError("TermDictionary: serialized term order differs from "
                      "constructor order");
      }
    }
  }
  return dict;
}

PolyModel::PolyModel(TermDictionary dict, int ensemble_size)
    : dict_(std::move(dict)), ensemble_size_(ensemble_size) {
  if (ensemble_size < 2) {
    throw ConfigError("PolyModel: ensemble size must be >= 2");
  }
  coeffs_.resize(0, ensemble_size_);
}

PolyModel PolyModel::full(TermDictionary dict, int ensemble_size,
                          double init_mean, double init_std,
                          std::uint64_t seed) {
  PolyModel model(std::move(dict), ensemble_size);
  for (int eq = 0; eq < model.equations(); ++eq) {
    for (int t = 0; t < model.dict_.size(); ++t) {
      model.activate(eq, t);
    }
  }
  Rng rng(seed);
  for (Eigen::Index j = 0; j < model.coeffs_.cols(); ++j) {
    for (Eigen::Index i = 0; i < model.coeffs_.rows(); ++i) {
      model.coeffs_(i, j) = init_mean + init_std * rng.normal();
    }
  }
  model.clear_fresh();
  return model;
}

bool PolyModel::is_active(int equation, int term) const {
  return std::binary_search(active_.begin(), active_.end(),
                            std::make_pair(equation, term));
}

void PolyModel::activate(int equation, int term) {
  if (equation < 0 || equation >= equations() || term < 0 ||
      term >= dict_.size()) {
    throw DimensionError("PolyModel::activate: index out of range");
  }
  const auto pair = std::make_pair(equation, term);
  const auto pos = std::lower_bound(active_.begin(), active_.end(), pair);
  if (pos != active_.end() && *pos == pair) return;
  const auto row = static_cast<Eigen::Index>(pos - active_.begin());
  active_.insert(pos, pair);
  fresh_.push_back(pair);

  Matrix next(coeffs_.rows() + 1, ensemble_size_);
  next.topRows(row) = coeffs_.topRows(row);
  next.row(row).setZero();
  next.bottomRows(coeffs_.rows() - row) = coeffs_.bottomRows(coeffs_.rows() - row);
  coeffs_ = std::move(next);
}

void PolyModel::deactivate(int equation, int term) {
  const auto pair = std::make_pair(equation, term);
  const auto pos = std::lower_bound(active_.begin(), active_.end(), pair);
  if (pos == active_.end() || *pos != pair) return;
  const auto row = static_cast<Eigen::Index>(pos - active_.begin());
  active_.erase(pos);
  fresh_.erase(std::remove(fresh_.begin(), fresh_.end(), pair), fresh_.end());

  Matrix next(coeffs_.rows() - 1, ensemble_size_);
  next.topRows(row) = coeffs_.topRows(row);
  next.bottomRows(next.rows() - row) = coeffs_.bottomRows(next.rows() - row);
  coeffs_ = std::move(next);
}

void PolyModel::set_coefficients(Matrix coeffs) {
  if (coeffs.rows() != active_count() || coeffs.cols() != ensemble_size_) {
    throw DimensionError("PolyModel::set_coefficients: shape mismatch");
  }
  if (!coeffs.allFinite()) {
    throw NumericalError("PolyModel::set_coefficients: non-finite entries");
  }
  coeffs_ = std::move(coeffs);
}

Vector PolyModel::coefficient_means() const {
  return coeffs_.rows() == 0 ? Vector(0) : Vector(coeffs_.rowwise().mean());
}

Vector PolyModel::coefficient_stds() const {
  Vector out(coeffs_.rows());
  for (Eigen::Index i = 0; i < coeffs_.rows(); ++i) {
    const double mean = coeffs_.row(i).mean();
    const double ss = (coeffs_.row(i).array() - mean).square().sum();
    out(i) = std::sqrt(ss / static_cast<double>(ensemble_size_ - 1));
  }
  return out;
}

Matrix PolyModel::predict(const Vector& x) const {
  const Vector t = dict_.values(x);
  Matrix out = Matrix::Zero(equations(), ensemble_size_);
  for (std::size_t k = 0; k < active_.size(); ++k) {
    const auto [eq, term] = active_[k];
    out.row(eq) += coeffs_.row(static_cast<Eigen::Index>(k)) * t(term);
  }
  return out;
}

Vector PolyModel::predict_mean(const Vector& x) const {
  const Vector t = dict_.values(x);
  Vector out = Vector::Zero(equations());
  const Vector means = coefficient_means();
  for (std::size_t k = 0; k < active_.size(); ++k) {
    const auto [eq, term] = active_[k];
    out(eq) += means(static_cast<Eigen::Index>(k)) * t(term);
  }
  return out;
}

EnsembleMatrix poly_predict(const PolyModel& model, const Vector& x) {
  return EnsembleMatrix(model.predict(x));
}

void LorenzConfig::validate() const {
  if (!(dt > 0.0)) throw ConfigError("LorenzConfig: dt must be > 0");
  if (steps < 0) throw ConfigError("LorenzConfig: steps must be >= 0");
  if (!x0.allFinite()) throw ConfigError("LorenzConfig: x0 must be finite");
}

Eigen::Vector3d lorenz_rhs(const Eigen::Vector3d& x, double sigma, double rho,
                           double beta) {
  return {sigma * (x(1) - x(0)),
          rho * x(0) - x(1) - x(0) * x(2),
          -beta * x(2) + x(0) * x(1)};
}

Matrix integrate(const LorenzConfig& cfg) {
  cfg.validate();
  Matrix traj(cfg.steps + 1, 3);
  Eigen::Vector3d x = cfg.x0;
  traj.row(0) = x;
  auto rhs = [&](const Eigen::Vector3d& s) {
    return lorenz_rhs(s, cfg.sigma, cfg.rho, cfg.beta);
  };
  for (int step = 1; step <= cfg.steps; ++step) {
    if (cfg.integrator == LorenzConfig::Integrator::euler) {
      x += cfg.dt * rhs(x);
    } else {
      const Eigen::Vector3d k1 = rhs(x);
      const Eigen::Vector3d k2 = rhs(x + 0.5 * cfg.dt * k1);
      const Eigen::Vector3d k3 = rhs(x + 0.5 * cfg.dt * k2);
      const Eigen::Vector3d k4 = rhs(x + cfg.dt * k3);
      x += cfg.dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    if (!x.allFinite()) {
      throw NumericalError("integrate: trajectory diverged at step " +
                           std::to_string(step));
    }
    traj.row(step) = x;
  }
  return traj;
}

TrainingSet make_training_set(const LorenzConfig& cfg, DerivativeMode mode) {
  const Matrix traj = integrate(cfg);
  TrainingSet ts;
  if (mode == DerivativeMode::exact) {
    ts.states = traj;
    ts.derivatives.resize(traj.rows(), 3);
    for (Eigen::Index t = 0; t < traj.rows(); ++t) {
      ts.derivatives.row(t) =
          lorenz_rhs(traj.row(t), cfg.sigma, cfg.rho, cfg.beta);
    }
  } else {
    if (traj.rows() < 3) {
      throw DimensionError(
          "make_training_set: finite differences need at least 3 rows");
    }
    ts.states = traj.middleRows(1, traj.rows() - 2);
    ts.derivatives =
        (traj.bottomRows(traj.rows() - 2) - traj.topRows(traj.rows() - 2)) /
        (2.0 * cfg.dt);
  }
  return ts;
}

void EstimateConfig::validate() const {
  if (!(target_variance >= 0.0)) {
    throw ConfigError("EstimateConfig: target_variance must be >= 0");
  }
  if (max_iters < 1) throw ConfigError("EstimateConfig: max_iters must be >= 1");
  if (ensemble_size < 2) {
    throw ConfigError("EstimateConfig: ensemble_size must be >= 2");
  }
  if (samples_per_iteration < 1) {
    throw ConfigError("EstimateConfig: samples_per_iteration must be >= 1");
  }
  if (sample_stride < 1) {
    throw ConfigError("EstimateConfig: sample_stride must be >= 1");
  }
  if (init_std < 0.0) throw ConfigError("EstimateConfig: init_std must be >= 0");
  noise.validate();
}

std::pair<PolyModel, RunLog> estimate_parameters(const PolyModel& model,
                                                 const TrainingSet& data,
                                                 const EstimateConfig& cfg) {
  cfg.validate();
  if (data.states.rows() == 0 ||
      data.states.rows() != data.derivatives.rows()) {
    throw DimensionError("estimate_parameters: empty or misaligned training set");
  }
  if (model.active_count() == 0) {
    throw DimensionError("estimate_parameters: model has no active terms");
  }

  const auto start = std::chrono::steady_clock::now();
  PolyModel current = model;
  const int d = current.equations();
  const int e = current.ensemble_size();
  const int block = cfg.samples_per_iteration;

  RunLog log;
  Eigen::Index cursor = 0;
  for (int it = 1; it <= cfg.max_iters; ++it) {
    Matrix z(d * block, e);
    Matrix y(d * block, e);
    double innovation_ss = 0.0;
    for (int b = 0; b < block; ++b) {
      const Vector x_t = data.states.row(cursor);
      const Vector dx_t = data.derivatives.row(cursor);
      cursor = (cursor + cfg.sample_stride) % data.states.rows();

      const Matrix pred = current.predict(x_t);
      z.middleRows(static_cast<Eigen::Index>(b) * d, d) = pred;
      Matrix targets =
          cfg.perturb_targets
              ? perturbed_observations(
                    dx_t, cfg.noise, e,
                    derive_seed(cfg.seed, Stream::observation,
                                static_cast<std::uint64_t>(it),
                                static_cast<std::uint64_t>(b)))
                    .mat()
              : replicated_observations(dx_t, e).mat();
      y.middleRows(static_cast<Eigen::Index>(b) * d, d) = std::move(targets);
      innovation_ss += (dx_t - pred.rowwise().mean()).squaredNorm();
    }

    const EnsembleMatrix coeffs(current.coefficients());
    Analysis analysis;
    try {
      analysis = analyze(coeffs, EnsembleMatrix(std::move(z)),
                         EnsembleMatrix(std::move(y)), cfg.noise);
    } catch (const std::exception& ex) {
      throw NumericalError("estimate_parameters: iteration " +
                           std::to_string(it) + ": " + ex.what());
    }
    current.set_coefficients(analysis.posterior.mat());

    const double var = mean_variance(analysis.posterior);
    RunRecord rec;
    rec.iteration = it;
    rec.train_metric = std::sqrt(innovation_ss / static_cast<double>(d * block));
    rec.test_metric = std::numeric_limits<double>::quiet_NaN();
    rec.mean_param_variance = var;
    rec.tolerance_r = cfg.noise.r;
    rec.elapsed_ms = std::chrono::duration<double, std::milli>(
                         std::chrono::steady_clock::now() - start)
                         .count();
    log.records.push_back(rec);
    log.coeff_means.push_back(current.coefficient_means());

    if (var <= cfg.target_variance) {
      log.converged = true;
      return {std::move(current), std::move(log)};
    }
  }
  log.converged = false;
  log.status = "variance target not reached within max_iters";
  return {std::move(current), std::move(log)};
}

}  // namespace enkl
