#include "enkl/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

#include "enkl/parallel.hpp"
#include "enkl/rng.hpp"

namespace enkl {

namespace {

using Clock = std::chrono::steady_clock;

double elapsed_ms(Clock::time_point start) {
  return std::chrono::duration<double, std::milli>(Clock::now() - start)
      .count();
}

// metric pair over a row-per-sample slice with the ensemble-mean parameters
struct EvalMetrics {
  double train;
  double test;
};

EvalMetrics evaluate(const NetworkSpec& spec, const Vector& alpha,
                     const Dataset& data, bool classification) {
  EvalMetrics m{};
  m.train = mse(spec, alpha, data.train_inputs(), data.train_targets());
  if (data.test_indices.empty()) {
    m.test = std::numeric_limits<double>::quiet_NaN();
  } else if (classification) {
    m.test = accuracy(spec, alpha, data.test_inputs(), data.test_targets());
  } else {
    m.test = rmse(spec, alpha, data.test_inputs(), data.test_targets());
  }
  return m;
}

std::vector<Minibatch> make_minibatches(const Dataset& data,
                                        const std::vector<int>& order,
                                        int batch_size) {
  std::vector<Minibatch> batches;
  for (std::size_t start = 0; start < order.size();
       start += static_cast<std::size_t>(batch_size)) {
    const std::size_t end =
        std::min(order.size(), start + static_cast<std::size_t>(batch_size));
    Minibatch b;
    b.sample_ids.assign(order.begin() + static_cast<std::ptrdiff_t>(start),
                        order.begin() + static_cast<std::ptrdiff_t>(end));
    // canonical order inside the batch; the learning rule averages, so the
    // incoming order must not matter, bit for bit
    std::sort(b.sample_ids.begin(), b.sample_ids.end());
    const auto s = static_cast<Eigen::Index>(b.sample_ids.size());
    b.inputs.resize(s, data.inputs.cols());
    b.targets.resize(s, data.targets.cols());
    for (Eigen::Index k = 0; k < s; ++k) {
      b.inputs.row(k) = data.inputs.row(b.sample_ids[static_cast<std::size_t>(k)]);
      b.targets.row(k) = data.targets.row(b.sample_ids[static_cast<std::size_t>(k)]);
    }
    batches.push_back(std::move(b));
  }
  return batches;
}

}  // namespace

void TrainConfig::validate() const {
  if (minibatch_size < 1) throw ConfigError("TrainConfig: minibatch_size must be >= 1");
  if (ensemble_size < 2) throw ConfigError("TrainConfig: ensemble_size must be >= 2");
  if (epochs < 0) throw ConfigError("TrainConfig: epochs must be >= 0");
  if (eval_every < 1) throw ConfigError("TrainConfig: eval_every must be >= 1");
  if (init_std < 0.0) throw ConfigError("TrainConfig: init_std must be >= 0");
  if (process_noise_std < 0.0) {
    throw ConfigError("TrainConfig: process_noise_std must be >= 0");
  }
  if (inflation < 1.0) throw ConfigError("TrainConfig: inflation must be >= 1");
  if (process_noise_half_life < 0.0) {
    throw ConfigError("TrainConfig: process_noise_half_life must be >= 0");
  }
  noise.validate();
}

std::pair<EnsembleMatrix, IterationStats> ekl_iteration(
    const EnsembleMatrix& params, const Minibatch& batch,
    const NetworkSpec& spec, const NoiseModel& noise,
    bool perturb_observations, std::uint64_t obs_seed_root, long iteration,
    bool normalized_covariance) {
  if (batch.sample_ids.empty()) {
    throw DimensionError("ekl_iteration: empty minibatch");
  }
  const auto s = static_cast<Eigen::Index>(batch.sample_ids.size());
  const int e = static_cast<int>(params.cols());

  // order the work by dataset index so the average is batch-order invariant
  std::vector<std::size_t> by_id(batch.sample_ids.size());
  std::iota(by_id.begin(), by_id.end(), 0);
  std::sort(by_id.begin(), by_id.end(), [&](std::size_t a, std::size_t b) {
    return batch.sample_ids[a] < batch.sample_ids[b];
  });

  const std::vector<Matrix> predictions =
      forward_ensemble(spec, params, batch.inputs);

  std::vector<Matrix> updates(static_cast<std::size_t>(s));
  std::vector<std::string> failures(static_cast<std::size_t>(s));
  parallel_for(static_cast<std::size_t>(s), [&](std::size_t k) {
    const std::size_t idx = by_id[k];
    const int sample_id = batch.sample_ids[idx];
    const Vector target = batch.targets.row(static_cast<Eigen::Index>(idx));
    try {
      const EnsembleMatrix z(predictions[idx]);
      const EnsembleMatrix y =
          perturb_observations
              ? perturbed_observations(
                    target, noise, e,
                    derive_seed(obs_seed_root, Stream::observation,
                                static_cast<std::uint64_t>(iteration),
                                static_cast<std::uint64_t>(sample_id)))
              : replicated_observations(target, e);
      updates[k] = update_matrix(z, y, noise, normalized_covariance).mat();
    } catch (const std::exception& ex) {
      failures[k] = "sample " + std::to_string(sample_id) + ": " + ex.what();
    }
  });
  for (const auto& f : failures) {
    if (!f.empty()) throw NumericalError("ekl_iteration: " + f);
  }

  Matrix mean_update = Matrix::Zero(e, e);
  for (const Matrix& m : updates) mean_update += m;
  mean_update /= static_cast<double>(s);

  EnsembleMatrix next = apply_update(params, UpdateMatrix(mean_update));

  IterationStats stats;
  stats.mean_param_variance = mean_variance(next);
  double loss = 0.0;
  for (Eigen::Index k = 0; k < s; ++k) {
    const Vector mean_pred = predictions[static_cast<std::size_t>(k)].rowwise().mean();
    loss += (batch.targets.row(k).transpose() - mean_pred).squaredNorm();
  }
  stats.batch_loss = loss / static_cast<double>(s * spec.output_dim());
  return {std::move(next), stats};
}

double adapt_tolerance(double mean_var, const NoiseModel& noise) {
  noise.validate();
  if (noise.mode != NoiseModel::Mode::adaptive) {
    throw ConfigError("adapt_tolerance: noise model is not adaptive");
  }
  if (!(mean_var >= 0.0)) {
    throw NumericalError("adapt_tolerance: negative or non-finite variance");
  }
  return std::clamp(noise.adapt_kappa * std::sqrt(mean_var), noise.r_min,
                    noise.r);
}

std::pair<EnsembleMatrix, RunLog> train_ekl(const NetworkSpec& spec,
                                            const Dataset& dataset,
                                            const TrainConfig& config) {
  config.validate();
  dataset.validate();
  const auto start = Clock::now();
  const ParamLayout layout(spec);

  EnsembleMatrix params = init_ensemble(
      layout, config.init_mean, config.init_std, config.ensemble_size,
      derive_seed(config.seed, Stream::param_init));

  RunLog log;
  auto log_point = [&](long iter, int epoch, double tol) {
    const Vector alpha = ensemble_stats(params).mean;
    const EvalMetrics m = evaluate(spec, alpha, dataset, config.classification);
    log.records.push_back({iter, epoch, m.train, m.test,
                           mean_variance(params), tol, elapsed_ms(start)});
  };

  double r_current = config.noise.r;
  log_point(0, 0, r_current);

  std::vector<int> order = dataset.train_indices;
  if (order.empty() && config.epochs > 0) {
    throw DimensionError("train_ekl: dataset has no train split");
  }

  long iteration = 0;
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    Rng shuffle_rng(derive_seed(config.seed, Stream::shuffle,
                                static_cast<std::uint64_t>(epoch)));
    shuffle_rng.shuffle(order);
    for (const Minibatch& batch :
         make_minibatches(dataset, order, config.minibatch_size)) {
      NoiseModel step_noise = config.noise;
      if (config.noise.mode == NoiseModel::Mode::adaptive) {
        r_current = adapt_tolerance(mean_variance(params), config.noise);
      }
      step_noise.r = r_current;
      ++iteration;
      double pn_std = config.process_noise_std;
      if (pn_std > 0.0 && config.process_noise_half_life > 0.0) {
        pn_std *= std::exp2(-static_cast<double>(iteration) /
                            config.process_noise_half_life);
        if (pn_std < 1e-9) pn_std = 0.0;
      }
      if (pn_std > 0.0) {
        Matrix jitter(params.rows(), params.cols());
        // fixed 16-way block seeding: the draw sequence is a function of
        // (seed, iteration, block) only, so thread count cannot change it
        constexpr Eigen::Index kBlocks = 16;
        const auto rows = jitter.rows();
        parallel_for(kBlocks, [&](std::size_t b) {
          const auto begin = rows * static_cast<Eigen::Index>(b) / kBlocks;
          const auto end = rows * (static_cast<Eigen::Index>(b) + 1) / kBlocks;
          Rng rng(derive_seed(
              config.seed, Stream::process_noise,
              static_cast<std::uint64_t>(iteration), b));
          for (Eigen::Index j = 0; j < jitter.cols(); ++j) {
            for (Eigen::Index i = begin; i < end; ++i) {
              jitter(i, j) = pn_std * rng.normal();
            }
          }
        });
        params = EnsembleMatrix(params.mat() + jitter);
      }
      auto [next, stats] =
          ekl_iteration(params, batch, spec, step_noise,
                        config.perturb_observations, config.seed, iteration,
                        config.normalized_covariance);
      params = std::move(next);
      if (config.inflation > 1.0) {
        const Vector mean = params.mat().rowwise().mean();
        params = EnsembleMatrix(
            ((params.mat().colwise() - mean) * config.inflation).colwise() +
            mean);
      }
      if (iteration % config.eval_every == 0) {
        log_point(iteration, epoch, r_current);
      }
    }
  }
  if (log.records.back().iteration != iteration) {
    log_point(iteration, config.epochs, r_current);
  }
  return {std::move(params), std::move(log)};
}

std::pair<Vector, RunLog> train_sgd(const NetworkSpec& spec,
                                    const Dataset& dataset,
                                    const TrainConfig& config) {
  config.validate();
  dataset.validate();
  const auto start = Clock::now();
  const ParamLayout layout(spec);

  Vector alpha(layout.total_dim());
  {
    Rng rng(derive_seed(config.seed, Stream::param_init));
    for (Eigen::Index i = 0; i < alpha.size(); ++i) {
      alpha(i) = config.init_mean + config.init_std * rng.normal();
    }
  }

  RunLog log;
  auto log_point = [&](long iter, int epoch) {
    const EvalMetrics m = evaluate(spec, alpha, dataset, config.classification);
    log.records.push_back(
        {iter, epoch, m.train, m.test, 0.0, 0.0, elapsed_ms(start)});
  };
  log_point(0, 0);

  std::vector<int> order = dataset.train_indices;
  if (order.empty() && config.epochs > 0) {
    throw DimensionError("train_sgd: dataset has no train split");
  }

  long iteration = 0;
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    Rng shuffle_rng(derive_seed(config.seed, Stream::shuffle,
                                static_cast<std::uint64_t>(epoch)));
    shuffle_rng.shuffle(order);
    for (const Minibatch& batch :
         make_minibatches(dataset, order, config.minibatch_size)) {
      alpha = sgd_step(spec, alpha, batch.inputs, batch.targets,
                       config.learning_rate);
      ++iteration;
      if (iteration % config.eval_every == 0) {
        log_point(iteration, epoch);
      }
    }
  }
  if (log.records.back().iteration != iteration) {
    log_point(iteration, config.epochs);
  }
  return {std::move(alpha), std::move(log)};
}

}  // namespace enkl
