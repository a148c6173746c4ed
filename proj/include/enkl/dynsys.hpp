#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "enkl/ensemble.hpp"
#include "enkl/trainer.hpp"

namespace enkl {

// Candidate monomial basis over d state variables, total degree 1..max_degree.
// Ordering is fixed and stable: degree ascending; within a degree, mixed
// products before pure powers (max exponent ascending), then by variable
// index, e.g. for d=3, degree<=2:
//   x1, x2, x3, x1*x2, x1*x3, x2*x3, x1^2, x2^2, x3^2
class TermDictionary {
 public:
  TermDictionary(int state_dim, int max_degree);

  int state_dim() const { return state_dim_; }
  int max_degree() const { return max_degree_; }
  int size() const { return static_cast<int>(terms_.size()); }
  const std::vector<std::vector<int>>& terms() const { return terms_; }
  const std::vector<int>& exponents(int term) const { return terms_.at(term); }
  std::string term_name(int term) const;

  // evaluates every monomial at x, in dictionary order
  Vector values(const Vector& x) const;

  std::string serialize() const;
  static TermDictionary deserialize(const std::string& text);

  bool operator==(const TermDictionary& other) const = default;

 private:
  int state_dim_;
  int max_degree_;
  std::vector<std::vector<int>> terms_;
};

// Sparse polynomial system: one coefficient per active (equation, term)
// pair, carried as an ensemble. Active pairs flatten equation-major in
// ascending term order.
class PolyModel {
 public:
  PolyModel(TermDictionary dict, int ensemble_size);

  // every (equation, term) pair active, coefficients i.i.d. Gaussian
  static PolyModel full(TermDictionary dict, int ensemble_size,
                        double init_mean, double init_std, std::uint64_t seed);

  const TermDictionary& dictionary() const { return dict_; }
  int ensemble_size() const { return ensemble_size_; }
  int equations() const { return dict_.state_dim(); }

  bool is_active(int equation, int term) const;
  const std::vector<std::pair<int, int>>& active_pairs() const {
    return active_;
  }
  int active_count() const { return static_cast<int>(active_.size()); }

  // newly activated pairs get a zero coefficient row and are marked fresh
  // until the next variance rebalance
  void activate(int equation, int term);
  void deactivate(int equation, int term);
  const std::vector<std::pair<int, int>>& fresh_pairs() const { return fresh_; }
  void clear_fresh() { fresh_.clear(); }

  const Matrix& coefficients() const { return coeffs_; }
  void set_coefficients(Matrix coeffs);
  Vector coefficient_means() const;
  Vector coefficient_stds() const;

  // member k's prediction in column k (inactive terms contribute 0)
  Matrix predict(const Vector& x) const;
  // prediction with the ensemble-mean coefficients
  Vector predict_mean(const Vector& x) const;

 private:
  TermDictionary dict_;
  int ensemble_size_;
  std::vector<std::pair<int, int>> active_;  // sorted (equation, term)
  std::vector<std::pair<int, int>> fresh_;
  Matrix coeffs_;  // active_count x E
};

EnsembleMatrix poly_predict(const PolyModel& model, const Vector& x);

struct LorenzConfig {
  double sigma = 10.0;
  double rho = 28.0;
  double beta = 8.0 / 3.0;
  Eigen::Vector3d x0{-1.1, 2.2, -2.7};
  double dt = 0.01;
  int steps = 2500;
  enum class Integrator { euler, rk4 } integrator = Integrator::rk4;

  void validate() const;
};

Eigen::Vector3d lorenz_rhs(const Eigen::Vector3d& x, double sigma, double rho,
                           double beta);

// (steps+1) x 3 trajectory, row 0 = x0
Matrix integrate(const LorenzConfig& cfg);

struct TrainingSet {
  Matrix states;       // rows x d
  Matrix derivatives;  // rows x d, aligned
};

enum class DerivativeMode { exact, finite_difference };

// exact: targets are the instantaneous derivatives at every trajectory row.
// finite_difference: centered differences, interior rows only.
TrainingSet make_training_set(const LorenzConfig& cfg,
                              DerivativeMode mode = DerivativeMode::exact);

struct EstimateConfig {
  double target_variance = 1e-10;
  int max_iters = 200;
  NoiseModel noise{1e-5, 1.0, 0.0, NoiseModel::Mode::fixed};
  std::uint64_t seed = 0;
  int ensemble_size = 100;
  double init_mean = 0.0;
  double init_std = 10.0;          // prior variance 100
  int samples_per_iteration = 1;   // >1 stacks a block of observations
  int sample_stride = 1;           // cursor advance between draws; >1
                                   // decorrelates consecutive analyses
  bool perturb_targets = false;    // replicated targets by default
  double rmse_tol = 1e-6;          // structure-learning stop criterion

  void validate() const;
};

// Sequential analysis over the training pairs, cycling through the
// trajectory one sample (or block) per iteration, until the mean
// coefficient-ensemble variance reaches target_variance. Non-convergence
// is reported in the log status, not thrown.
std::pair<PolyModel, RunLog> estimate_parameters(const PolyModel& model,
                                                 const TrainingSet& data,
                                                 const EstimateConfig& cfg);

}  // namespace enkl
