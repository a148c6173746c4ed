#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "enkl/dynsys.hpp"

namespace enkl {

// Gaussian pairwise mutual information Psi = -0.5*ln(1 - rho^2), rho^2
// clamped at 1 - 1e-12. Zero-variance columns pair to Psi = 0.
struct MiTable {
  Matrix values;  // term x error, nonnegative
  std::vector<int> term_ids;
  std::vector<int> error_ids;
};

struct RankedEntry {
  double psi;
  int term;
  int error;
};

// descending by Psi, ties broken by (term asc, error asc)
struct RankedMi {
  std::vector<RankedEntry> entries;
  double psi_total = 0.0;
};

struct SelectionConfig {
  double penalty_c = 0.05;  // C(k) = c * k
  int max_cycles = 5;
  double prune_threshold = 1e-3;
  double cycle_variance_target = 1e-8;
  double rebalance_std = 10.0;
  // Retained coefficients keep their mean and have deviations re-inflated
  // to at least this fraction of rebalance_std. 1 re-opens every retained
  // coefficient to the same spread as a fresh one, letting later cycles
  // revise earlier estimates.
  double rebalance_floor_fraction = 1e-3;
  int mi_window = 200;  // trajectory samples feeding the MI series
  // An error column whose RMS falls below this fraction of its target RMS
  // counts as solved and is excluded from selection; correlation is
  // scale-free, so a fitted equation's numerical residue would otherwise
  // keep producing top-ranked pairs.
  double solved_error_fraction = 1e-3;

  void validate() const;
};

struct Selection {
  int k_star = 0;                      // 0: nothing informative this cycle
  std::vector<int> terms;              // distinct term ids among top pairs
};

MiTable pairwise_mi(const Matrix& term_series, const Matrix& error_series);

RankedMi rank_mi(const MiTable& table);

// minimizes J(k) = 1 - (sum_{l<=k} Psi*_l)/Psi# + c*k over 1 <= k <= mn,
// smallest k on ties
Selection greedy_select(const RankedMi& ranked, const SelectionConfig& cfg);

// drops active coefficients with |mean| < threshold * max(1, largest
// active |mean| in the same equation)
std::pair<PolyModel, std::vector<std::pair<int, int>>> prune(
    const PolyModel& model, double threshold);

// freshly selected terms draw new Gaussian ensembles (mean 0, std =
// rebalance_std); retained terms keep their mean and have deviations
// rescaled up to a floor of 1e-3 * rebalance_std
PolyModel rebalance_variance(const PolyModel& model,
                             const SelectionConfig& cfg, std::uint64_t seed);

enum class TermStatus { never_selected, selected, active, pruned };

std::string to_string(TermStatus s);

struct SurvivalEvent {
  int cycle;
  TermStatus status;
};

// Per (equation, term) status history across selection cycles.
class SurvivalRecord {
 public:
  SurvivalRecord() = default;
  SurvivalRecord(int equations, int terms);

  void record(int equation, int term, int cycle, TermStatus status);
  const std::vector<SurvivalEvent>& history(int equation, int term) const;
  int equations() const { return equations_; }
  int terms() const { return terms_; }

 private:
  int equations_ = 0;
  int terms_ = 0;
  std::vector<std::vector<SurvivalEvent>> events_;
};

struct StructureResult {
  PolyModel model;
  SurvivalRecord survival;
  RunLog log;               // concatenated estimation iterations
  MiTable first_mi;         // cycle-1 table (ab initio)
  int cycles = 0;
  long total_iterations = 0;
  bool converged = false;
  std::string status;
};

// Alternates mutual-information term selection with ensemble parameter
// estimation and pruning, starting from the empty model.
StructureResult structure_learn(const TermDictionary& dict,
                                const TrainingSet& data,
                                const SelectionConfig& cfg,
                                const EstimateConfig& est_cfg,
                                std::uint64_t seed);

}  // namespace enkl
