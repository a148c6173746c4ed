#include "enkl/infosel.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <iostream>

#include "enkl/rng.hpp"

namespace enkl {

void SelectionConfig::validate() const {
  if (penalty_c < 0.0) throw ConfigError("SelectionConfig: penalty_c must be >= 0");
  if (prune_threshold < 0.0) {
    throw ConfigError("SelectionConfig: prune_threshold must be >= 0");
  }
  if (max_cycles < 1) throw ConfigError("SelectionConfig: max_cycles must be >= 1");
  if (!(cycle_variance_target >= 0.0)) {
    throw ConfigError("SelectionConfig: cycle_variance_target must be >= 0");
  }
  if (!(rebalance_std > 0.0)) {
    throw ConfigError("SelectionConfig: rebalance_std must be > 0");
  }
  if (!(rebalance_floor_fraction > 0.0) || rebalance_floor_fraction > 1.0) {
    throw ConfigError(
        "SelectionConfig: rebalance_floor_fraction must be in (0, 1]");
  }
  if (mi_window < 3) throw ConfigError("SelectionConfig: mi_window must be >= 3");
  if (solved_error_fraction < 0.0) {
    throw ConfigError("SelectionConfig: solved_error_fraction must be >= 0");
  }
}

MiTable pairwise_mi(const Matrix& term_series, const Matrix& error_series) {
  if (term_series.rows() != error_series.rows()) {
    throw DimensionError("pairwise_mi: sample counts differ");
  }
  if (term_series.rows() < 3) {
    throw DimensionError("pairwise_mi: need at least 3 samples");
  }
  if (!term_series.allFinite() || !error_series.allFinite()) {
    throw NumericalError("pairwise_mi: non-finite series");
  }

  const auto n = static_cast<double>(term_series.rows());
  const Matrix a = term_series.rowwise() - term_series.colwise().mean();
  const Matrix b = error_series.rowwise() - error_series.colwise().mean();
  const Vector a_ss = a.array().square().colwise().sum();
  const Vector b_ss = b.array().square().colwise().sum();
  (void)n;

  MiTable table;
  table.values.resize(term_series.cols(), error_series.cols());
  for (Eigen::Index i = 0; i < a.cols(); ++i) {
    for (Eigen::Index j = 0; j < b.cols(); ++j) {
      double psi = 0.0;
      if (a_ss(i) > 0.0 && b_ss(j) > 0.0) {
        const double cov = a.col(i).dot(b.col(j));
        double rho2 = (cov * cov) / (a_ss(i) * b_ss(j));
        rho2 = std::min(rho2, 1.0 - 1e-12);
        psi = -0.5 * std::log1p(-rho2);
      }
      table.values(i, j) = psi;
    }
  }
  table.term_ids.resize(static_cast<std::size_t>(term_series.cols()));
  table.error_ids.resize(static_cast<std::size_t>(error_series.cols()));
  for (std::size_t i = 0; i < table.term_ids.size(); ++i) table.term_ids[i] = static_cast<int>(i);
  for (std::size_t j = 0; j < table.error_ids.size(); ++j) table.error_ids[j] = static_cast<int>(j);
  return table;
}

RankedMi rank_mi(const MiTable& table) {
  RankedMi ranked;
  ranked.entries.reserve(
      static_cast<std::size_t>(table.values.rows() * table.values.cols()));
  for (Eigen::Index i = 0; i < table.values.rows(); ++i) {
    for (Eigen::Index j = 0; j < table.values.cols(); ++j) {
      ranked.entries.push_back(
          {table.values(i, j), static_cast<int>(i), static_cast<int>(j)});
      ranked.psi_total += table.values(i, j);
    }
  }
  std::stable_sort(ranked.entries.begin(), ranked.entries.end(),
                   [](const RankedEntry& a, const RankedEntry& b) {
                     if (a.psi != b.psi) return a.psi > b.psi;
                     return std::tie(a.term, a.error) < std::tie(b.term, b.error);
                   });
  return ranked;
}

Selection greedy_select(const RankedMi& ranked, const SelectionConfig& cfg) {
  cfg.validate();
  if (ranked.entries.empty()) {
    throw DimensionError("greedy_select: empty ranking");
  }
  Selection sel;
  if (!(ranked.psi_total > 0.0)) {
    return sel;  // no informative terms this cycle
  }
  double cumulative = 0.0;
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t k = 1; k <= ranked.entries.size(); ++k) {
    cumulative += ranked.entries[k - 1].psi;
    const double objective = 1.0 - cumulative / ranked.psi_total +
                             cfg.penalty_c * static_cast<double>(k);
    if (objective < best) {
      best = objective;
      sel.k_star = static_cast<int>(k);
    }
  }
  for (int l = 0; l < sel.k_star; ++l) {
    const int term = ranked.entries[static_cast<std::size_t>(l)].term;
    if (std::find(sel.terms.begin(), sel.terms.end(), term) == sel.terms.end()) {
      sel.terms.push_back(term);
    }
  }
  return sel;
}

std::pair<PolyModel, std::vector<std::pair<int, int>>> prune(
    const PolyModel& model, double threshold) {
  if (threshold < 0.0) throw ConfigError("prune: threshold must be >= 0");
  const Vector means = model.coefficient_means();
  const auto& pairs = model.active_pairs();

  std::vector<double> eq_max(static_cast<std::size_t>(model.equations()), 0.0);
  for (std::size_t k = 0; k < pairs.size(); ++k) {
    auto& m = eq_max[static_cast<std::size_t>(pairs[k].first)];
    m = std::max(m, std::abs(means(static_cast<Eigen::Index>(k))));
  }

  std::vector<std::pair<int, int>> to_prune;
  for (std::size_t k = 0; k < pairs.size(); ++k) {
    const double cutoff =
        threshold * std::max(1.0, eq_max[static_cast<std::size_t>(pairs[k].first)]);
    if (std::abs(means(static_cast<Eigen::Index>(k))) < cutoff) {
      to_prune.push_back(pairs[k]);
    }
  }

  PolyModel pruned = model;
  for (const auto& [eq, term] : to_prune) pruned.deactivate(eq, term);
  return {std::move(pruned), std::move(to_prune)};
}

PolyModel rebalance_variance(const PolyModel& model,
                             const SelectionConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  PolyModel out = model;
  const int e = out.ensemble_size();
  const double floor = cfg.rebalance_floor_fraction * cfg.rebalance_std;

  std::vector<std::pair<int, int>> fresh = out.fresh_pairs();
  std::sort(fresh.begin(), fresh.end());

  Matrix coeffs = out.coefficients();
  const auto& pairs = out.active_pairs();
  Rng rng(seed);
  // single pass in flatten order keeps the draw sequence independent of
  // activation call order
  for (std::size_t k = 0; k < pairs.size(); ++k) {
    const auto row = static_cast<Eigen::Index>(k);
    if (std::binary_search(fresh.begin(), fresh.end(), pairs[k])) {
      for (Eigen::Index j = 0; j < e; ++j) {
        coeffs(row, j) = cfg.rebalance_std * rng.normal();
      }
      continue;
    }
    const double mean = coeffs.row(row).mean();
    Eigen::RowVectorXd dev = coeffs.row(row).array() - mean;
    const double stddev = std::sqrt(dev.squaredNorm() / static_cast<double>(e - 1));
    if (stddev >= floor) continue;
    if (stddev > 0.0) {
      dev *= floor / stddev;
    } else {
      // fully collapsed row: fabricate centered deviations at the floor scale
      Eigen::RowVectorXd g(e);
      for (Eigen::Index j = 0; j < e; ++j) g(j) = rng.normal();
      g.array() -= g.mean();
      const double gs = std::sqrt(g.squaredNorm() / static_cast<double>(e - 1));
      dev = g * (floor / gs);
    }
    coeffs.row(row) = dev.array() + mean;
  }
  out.set_coefficients(std::move(coeffs));
  out.clear_fresh();
  return out;
}

std::string to_string(TermStatus s) {
  switch (s) {
    case TermStatus::never_selected: return "never_selected";
    case TermStatus::selected: return "selected";
    case TermStatus::active: return "active";
    case TermStatus::pruned: return "pruned";
  }
  return "?";
}

SurvivalRecord::SurvivalRecord(int equations, int terms)
    : equations_(equations), terms_(terms),
      events_(static_cast<std::size_t>(equations) * static_cast<std::size_t>(terms)) {
  for (auto& h : events_) h.push_back({0, TermStatus::never_selected});
}

void SurvivalRecord::record(int equation, int term, int cycle,
                            TermStatus status) {
  events_.at(static_cast<std::size_t>(equation) * static_cast<std::size_t>(terms_) +
             static_cast<std::size_t>(term))
      .push_back({cycle, status});
}

const std::vector<SurvivalEvent>& SurvivalRecord::history(int equation,
                                                          int term) const {
  return events_.at(static_cast<std::size_t>(equation) *
                        static_cast<std::size_t>(terms_) +
                    static_cast<std::size_t>(term));
}

namespace {

// The MI window walks the trajectory with the estimation stride, so
// selection, estimation, and the stopping check all see the same sample
// diversity instead of a contiguous transient.
std::vector<Eigen::Index> window_indices(const TrainingSet& data,
                                         const SelectionConfig& cfg,
                                         const EstimateConfig& est_cfg) {
  const auto n = data.states.rows();
  const auto window = std::min<Eigen::Index>(cfg.mi_window, n);
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(window));
  Eigen::Index cursor = 0;
  for (auto& i : idx) {
    i = cursor;
    cursor = (cursor + est_cfg.sample_stride) % n;
  }
  return idx;
}

double window_rmse(const PolyModel& model, const TrainingSet& data,
                   const std::vector<Eigen::Index>& window) {
  double ss = 0.0;
  for (const Eigen::Index t : window) {
    const Vector pred = model.predict_mean(data.states.row(t));
    ss += (data.derivatives.row(t).transpose() - pred).squaredNorm();
  }
  return std::sqrt(ss / static_cast<double>(window.size()) /
                   static_cast<double>(model.equations()));
}

// Conditional Gaussian MI per equation: terms and errors are residualized
// against the equation's active term columns before the pairwise table is
// computed, making Psi the partial-correlation information. Active terms
// residualize to zero variance and drop out on their own; collinear proxies
// of a missing term no longer mask it.
MiTable conditional_mi(const Matrix& term_series, const Matrix& error_series,
                       const PolyModel& model) {
  MiTable table;
  table.values.resize(term_series.cols(), error_series.cols());
  table.term_ids.resize(static_cast<std::size_t>(term_series.cols()));
  table.error_ids.resize(static_cast<std::size_t>(error_series.cols()));
  for (std::size_t i = 0; i < table.term_ids.size(); ++i) {
    table.term_ids[i] = static_cast<int>(i);
  }
  for (std::size_t j = 0; j < table.error_ids.size(); ++j) {
    table.error_ids[j] = static_cast<int>(j);
  }

  for (Eigen::Index eq = 0; eq < error_series.cols(); ++eq) {
    std::vector<int> active_terms;
    for (const auto& [e, t] : model.active_pairs()) {
      if (e == eq) active_terms.push_back(t);
    }
    Matrix terms = term_series;
    Matrix error = error_series.col(eq);
    if (!active_terms.empty()) {
      Matrix basis(term_series.rows(),
                   static_cast<Eigen::Index>(active_terms.size()));
      for (std::size_t k = 0; k < active_terms.size(); ++k) {
        basis.col(static_cast<Eigen::Index>(k)) =
            term_series.col(active_terms[k]);
      }
      const auto solver = (basis.transpose() * basis).ldlt();
      terms -= basis * solver.solve(basis.transpose() * terms);
      error -= basis * solver.solve(basis.transpose() * error);
      // a column absorbed by the basis is numerical residue, not signal
      for (Eigen::Index i = 0; i < terms.cols(); ++i) {
        const double before = term_series.col(i).squaredNorm();
        if (terms.col(i).squaredNorm() <= 1e-12 * before) {
          terms.col(i).setZero();
        }
      }
      if (error.squaredNorm() <= 1e-12 * error_series.col(eq).squaredNorm()) {
        error.setZero();
      }
    }
    table.values.col(eq) = pairwise_mi(terms, error).values;
  }
  return table;
}

}  // namespace

StructureResult structure_learn(const TermDictionary& dict,
                                const TrainingSet& data,
                                const SelectionConfig& cfg,
                                const EstimateConfig& est_cfg,
                                std::uint64_t seed) {
  cfg.validate();
  est_cfg.validate();
  if (data.states.rows() != data.derivatives.rows() || data.states.rows() < 3) {
    throw DimensionError("structure_learn: training set empty or misaligned");
  }

  const std::vector<Eigen::Index> window =
      window_indices(data, cfg, est_cfg);

  Matrix term_series(static_cast<Eigen::Index>(window.size()), dict.size());
  for (std::size_t t = 0; t < window.size(); ++t) {
    term_series.row(static_cast<Eigen::Index>(t)) =
        dict.values(data.states.row(window[t]));
  }

  StructureResult result{PolyModel(dict, est_cfg.ensemble_size),
                         SurvivalRecord(dict.state_dim(), dict.size()),
                         RunLog{},
                         MiTable{},
                         0,
                         0,
                         false,
                         ""};

  for (int cycle = 1; cycle <= cfg.max_cycles; ++cycle) {
    result.cycles = cycle;

    Matrix errors(static_cast<Eigen::Index>(window.size()), dict.state_dim());
    for (std::size_t t = 0; t < window.size(); ++t) {
      errors.row(static_cast<Eigen::Index>(t)) =
          data.derivatives.row(window[t]) -
          result.model.predict_mean(data.states.row(window[t])).transpose();
    }

    MiTable mi = conditional_mi(term_series, errors, result.model);
    // solved equations carry no selection signal
    for (Eigen::Index j = 0; j < errors.cols(); ++j) {
      double target_ss = 0.0;
      for (const Eigen::Index t : window) {
        target_ss += data.derivatives(t, j) * data.derivatives(t, j);
      }
      const double err_rms = std::sqrt(errors.col(j).squaredNorm() /
                                       static_cast<double>(errors.rows()));
      const double target_rms = std::sqrt(
          target_ss / static_cast<double>(window.size()));
      if (err_rms <= cfg.solved_error_fraction * std::max(target_rms, 1e-12)) {
        mi.values.col(j).setZero();
      }
    }
    if (cycle == 1) result.first_mi = mi;
    const RankedMi ranked = rank_mi(mi);
    const Selection sel = greedy_select(ranked, cfg);

    if (std::getenv("ENKL_TRACE")) {
      std::cerr << "cycle " << cycle << " k*=" << sel.k_star << ":";
      for (int l = 0; l < sel.k_star; ++l) {
        const auto& e = ranked.entries[static_cast<std::size_t>(l)];
        std::cerr << " " << dict.term_name(e.term) << "->e" << e.error + 1
                  << "(" << e.psi << ")";
      }
      std::cerr << "\n";
    }

    std::vector<std::pair<int, int>> newly;
    for (int l = 0; l < sel.k_star; ++l) {
      const auto& entry = ranked.entries[static_cast<std::size_t>(l)];
      if (!result.model.is_active(entry.error, entry.term)) {
        result.model.activate(entry.error, entry.term);
        newly.emplace_back(entry.error, entry.term);
        result.survival.record(entry.error, entry.term, cycle,
                               TermStatus::selected);
      }
    }

    if (result.model.active_count() == 0) {
      // nothing informative and nothing fitted: the empty model stands
      result.converged = true;
      result.status = "no informative terms; empty model retained";
      return result;
    }

    result.model = rebalance_variance(
        result.model, cfg,
        derive_seed(seed, Stream::rebalance, static_cast<std::uint64_t>(cycle)));

    EstimateConfig cycle_cfg = est_cfg;
    cycle_cfg.target_variance = cfg.cycle_variance_target;
    cycle_cfg.seed = derive_seed(seed, Stream::observation,
                                 static_cast<std::uint64_t>(cycle));
    auto [estimated, est_log] = estimate_parameters(result.model, data, cycle_cfg);
    result.model = std::move(estimated);
    for (RunRecord rec : est_log.records) {
      rec.epoch = cycle;
      rec.iteration = ++result.total_iterations;
      result.log.records.push_back(rec);
    }
    for (auto& cm : est_log.coeff_means) {
      result.log.coeff_means.push_back(std::move(cm));
    }

    if (std::getenv("ENKL_TRACE")) {
      const Vector means = result.model.coefficient_means();
      const auto& pairs = result.model.active_pairs();
      std::cerr << "  post-estimate:";
      for (std::size_t k = 0; k < pairs.size(); ++k) {
        std::cerr << " " << dict.term_name(pairs[k].second) << "@e"
                  << pairs[k].first + 1 << "="
                  << means(static_cast<Eigen::Index>(k));
      }
      std::cerr << "\n  rmse=" << window_rmse(result.model, data, window)
                << " iters=" << result.total_iterations << "\n";
    }

    auto [pruned_model, pruned_pairs] =
        prune(result.model, cfg.prune_threshold);
    result.model = std::move(pruned_model);
    for (const auto& [eq, term] : pruned_pairs) {
      result.survival.record(eq, term, cycle, TermStatus::pruned);
    }
    for (const auto& [eq, term] : result.model.active_pairs()) {
      result.survival.record(eq, term, cycle, TermStatus::active);
    }

    if (newly.empty() && pruned_pairs.empty()) {
      result.converged = true;
      result.status = "selection fixed point";
      return result;
    }
    if (result.model.active_count() > 0 &&
        window_rmse(result.model, data, window) < est_cfg.rmse_tol) {
      result.converged = true;
      result.status = "window RMSE below tolerance";
      return result;
    }
  }
  result.converged = false;
  result.status = "max_cycles reached";
  result.log.converged = false;
  result.log.status = result.status;
  return result;
}

}  // namespace enkl
