#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "enkl/dataset.hpp"
#include "enkl/ensemble.hpp"
#include "enkl/network.hpp"

namespace enkl {

struct TrainConfig {
  int minibatch_size = 16;
  int ensemble_size = 100;
  int epochs = 5;
  NoiseModel noise;
  double init_mean = 0.0;
  double init_std = 0.01;
  std::uint64_t seed = 0;
  int eval_every = 10;
  double learning_rate = 0.1;  // SGD baseline only
  // Perturbed observations are the default; replicated targets are used
  // where target variance must collapse below the perturbation floor.
  bool perturb_observations = true;
  // Additive parameter noise per iteration (the diffusion term of the
  // stochastic learning dynamics). Right-multiplicative analysis updates
  // keep the ensemble inside the span of its initial columns; a nonzero
  // value re-opens directions that the span does not cover. 0 disables.
  double process_noise_std = 0.0;
  // Exponential half-life (in iterations) for the process noise: explore
  // early, hand a clean ensemble to the final iterations. 0 keeps it flat.
  double process_noise_half_life = 0.0;
  // Divide deviation products by (E-1) in the analysis. Keeps r on the
  // per-sample standard-deviation scale; with the unnormalized products the
  // same r acts like r/sqrt(E-1) and the steady-state ensemble spread is
  // (E-1) times smaller.
  bool normalized_covariance = false;
  // Multiplicative deviation inflation applied after each iteration;
  // counteracts the spread collapse of repeated analyses. 1 disables.
  double inflation = 1.0;
  bool classification = false;  // test metric: accuracy instead of RMSE

  void validate() const;
};

struct RunRecord {
  long iteration = 0;
  int epoch = 0;
  double train_metric = 0.0;
  double test_metric = 0.0;
  double mean_param_variance = 0.0;
  double tolerance_r = 0.0;
  double elapsed_ms = 0.0;
};

struct RunLog {
  std::vector<RunRecord> records;
  bool converged = true;
  std::string status;
  // parameter-estimation trace: ensemble-mean coefficients per iteration
  std::vector<Vector> coeff_means;
};

struct IterationStats {
  double batch_loss = 0.0;  // mean squared innovation of the mean prediction
  double mean_param_variance = 0.0;
};

// One minibatch of the learning rule: per-sample update matrices, all
// computed from the same incoming ensemble, averaged and applied once.
// Samples are processed in ascending dataset-index order so the result is
// independent of the order they appear in the batch.
struct Minibatch {
  Matrix inputs;                // S x input_dim
  Matrix targets;               // S x output_dim
  std::vector<int> sample_ids;  // dataset indices, drive the Y draws
};

std::pair<EnsembleMatrix, IterationStats> ekl_iteration(
    const EnsembleMatrix& params, const Minibatch& batch,
    const NetworkSpec& spec, const NoiseModel& noise,
    bool perturb_observations, std::uint64_t obs_seed_root, long iteration,
    bool normalized_covariance = false);

// r_i = clamp(kappa * sqrt(mean_variance), r_min, r), with r the configured
// initial tolerance. Requires adaptive mode.
double adapt_tolerance(double mean_var, const NoiseModel& noise);

std::pair<EnsembleMatrix, RunLog> train_ekl(const NetworkSpec& spec,
                                            const Dataset& dataset,
                                            const TrainConfig& config);

std::pair<Vector, RunLog> train_sgd(const NetworkSpec& spec,
                                    const Dataset& dataset,
                                    const TrainConfig& config);

}  // namespace enkl
