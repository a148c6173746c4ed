#include "enkl/runner.hpp"

#include <json.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>

#include "enkl/csv.hpp"
#include "enkl/dataset.hpp"
#include "enkl/parallel.hpp"
#include "enkl/rng.hpp"

namespace enkl {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

std::string join(const std::string& dir, const std::string& name) {
  return (fs::path(dir) / name).string();
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  out << text;
}

Dataset load_training_data(const RunConfig& c, bool& classification) {
  if (c.data.kind == "csv") {
    classification = false;
    Dataset d = ingest_csv(c.data.csv_path, c.data.target_column);
    split_dataset(d, c.data.test_fraction, derive_seed(c.seed, Stream::split));
    if (c.data.standardize) standardize(d);
    return d;
  }
  classification = true;
  const Dataset train =
      ingest_idx(c.data.train_images, c.data.train_labels, c.data.limit_train);
  const Dataset test =
      ingest_idx(c.data.test_images, c.data.test_labels, c.data.limit_test);
  if (train.inputs.cols() != test.inputs.cols()) {
    throw DimensionError("train and test images have different pixel counts");
  }
  Dataset d;
  d.inputs.resize(train.size() + test.size(), train.inputs.cols());
  d.inputs << train.inputs, test.inputs;
  d.targets.resize(train.size() + test.size(), train.targets.cols());
  d.targets << train.targets, test.targets;
  for (int i = 0; i < train.size(); ++i) d.train_indices.push_back(i);
  for (int i = 0; i < test.size(); ++i) {
    d.test_indices.push_back(static_cast<int>(train.size()) + i);
  }
  return d;
}

NetworkSpec make_spec(const RunConfig& c, const Dataset& d) {
  return NetworkSpec::mlp(static_cast<int>(d.inputs.cols()), c.network.hidden,
                          static_cast<int>(d.targets.cols()),
                          activation_from_string(c.network.hidden_activation),
                          activation_from_string(c.network.output_activation));
}

void write_comparison_csv(const std::string& path, const std::string& method,
                          int epochs, const RunLog& log) {
  CsvWriter w(path);
  w.row({"method", "epochs", "iterations", "train_metric", "test_metric",
         "elapsed_ms"});
  const RunRecord& last = log.records.back();
  w.row({method, std::to_string(epochs), std::to_string(last.iteration),
         format_double(last.train_metric), format_double(last.test_metric),
         format_double(last.elapsed_ms)});
}

void write_trajectory_csv(const std::string& path, const TrainingSet& ts,
                          double dt) {
  CsvWriter w(path);
  w.row({"t", "x1", "x2", "x3", "dx1", "dx2", "dx3"});
  for (Eigen::Index i = 0; i < ts.states.rows(); ++i) {
    w.row({format_double(static_cast<double>(i) * dt),
           format_double(ts.states(i, 0)), format_double(ts.states(i, 1)),
           format_double(ts.states(i, 2)), format_double(ts.derivatives(i, 0)),
           format_double(ts.derivatives(i, 1)),
           format_double(ts.derivatives(i, 2))});
  }
}

void write_mi_table_csv(const std::string& path, const MiTable& table) {
  CsvWriter w(path);
  w.row({"term_id", "error_id", "psi"});
  for (Eigen::Index i = 0; i < table.values.rows(); ++i) {
    for (Eigen::Index j = 0; j < table.values.cols(); ++j) {
      w.row({std::to_string(table.term_ids[static_cast<std::size_t>(i)] + 1),
             std::to_string(table.error_ids[static_cast<std::size_t>(j)] + 1),
             format_double(table.values(i, j))});
    }
  }
}

void write_survival_csv(const std::string& path, const SurvivalRecord& rec) {
  CsvWriter w(path);
  w.row({"cycle", "equation", "term", "status"});
  for (int eq = 0; eq < rec.equations(); ++eq) {
    for (int term = 0; term < rec.terms(); ++term) {
      for (const SurvivalEvent& ev : rec.history(eq, term)) {
        w.row({std::to_string(ev.cycle), std::to_string(eq + 1),
               std::to_string(term + 1), to_string(ev.status)});
      }
    }
  }
}

void write_equations_json(const std::string& path, const StructureResult& res) {
  const PolyModel& model = res.model;
  const Vector means = model.coefficient_means();
  const Vector stds = model.coefficient_stds();
  json eqs = json::array();
  for (int eq = 0; eq < model.equations(); ++eq) {
    json terms = json::array();
    const auto& pairs = model.active_pairs();
    for (std::size_t k = 0; k < pairs.size(); ++k) {
      if (pairs[k].first != eq) continue;
      terms.push_back({{"term", model.dictionary().term_name(pairs[k].second)},
                       {"term_id", pairs[k].second + 1},
                       {"mean", means(static_cast<Eigen::Index>(k))},
                       {"std", stds(static_cast<Eigen::Index>(k))}});
    }
    eqs.push_back({{"lhs", "dx" + std::to_string(eq + 1) + "/dt"},
                   {"terms", std::move(terms)}});
  }
  json root = {{"structurally_converged", res.converged},
               {"status", res.status},
               {"cycles", res.cycles},
               {"total_iterations", res.total_iterations},
               {"equations", std::move(eqs)}};
  write_text(path, root.dump(2) + "\n");
}

RunLog single_record_log(double elapsed_ms_value) {
  RunLog log;
  RunRecord rec;
  rec.test_metric = std::numeric_limits<double>::quiet_NaN();
  rec.elapsed_ms = elapsed_ms_value;
  log.records.push_back(rec);
  return log;
}

}  // namespace

RunResult run(const RunConfig& config) {
  RunResult result;
  try {
    config.validate();
    set_threads(config.threads);
    fs::create_directories(config.out_dir);

    const std::string config_path = join(config.out_dir, "effective_config.json");
    write_text(config_path, config_to_json(config));
    result.artifacts.push_back(config_path);

    const auto started = std::chrono::steady_clock::now();
    auto elapsed = [&] {
      return std::chrono::duration<double, std::milli>(
                 std::chrono::steady_clock::now() - started)
          .count();
    };
    const std::string log_path = join(config.out_dir, "log.csv");

    if (config.command == "simulate") {
      const TrainingSet ts = make_training_set(config.lorenz);
      const std::string traj_path = join(config.out_dir, "trajectory.csv");
      write_trajectory_csv(traj_path, ts, config.lorenz.dt);
      result.artifacts.push_back(traj_path);
      write_runlog_csv(log_path, single_record_log(elapsed()));
      result.artifacts.push_back(log_path);
      result.message = "simulated " + std::to_string(ts.states.rows()) + " rows";
    } else if (config.command == "mi") {
      const TrainingSet ts = make_training_set(config.lorenz);
      const TermDictionary dict(config.dict_state_dim, config.dict_max_degree);
      const auto window =
          std::min<Eigen::Index>(config.selection.mi_window, ts.states.rows());
      Matrix term_series(window, dict.size());
      for (Eigen::Index t = 0; t < window; ++t) {
        term_series.row(t) = dict.values(ts.states.row(t));
      }
      // ab initio: the error series against the empty model is the targets
      const MiTable table =
          pairwise_mi(term_series, ts.derivatives.topRows(window));
      const std::string mi_path = join(config.out_dir, "mi_table.csv");
      write_mi_table_csv(mi_path, table);
      result.artifacts.push_back(mi_path);
      write_runlog_csv(log_path, single_record_log(elapsed()));
      result.artifacts.push_back(log_path);
      result.message = "mi table over " + std::to_string(window) + " samples";
    } else if (config.command == "discover") {
      const TrainingSet ts = make_training_set(config.lorenz);
      const TermDictionary dict(config.dict_state_dim, config.dict_max_degree);
      const StructureResult res = structure_learn(
          dict, ts, config.selection, config.estimate, config.seed);
      write_runlog_csv(log_path, res.log);
      result.artifacts.push_back(log_path);
      const std::string eq_path = join(config.out_dir, "equations.json");
      write_equations_json(eq_path, res);
      result.artifacts.push_back(eq_path);
      const std::string surv_path = join(config.out_dir, "survival.csv");
      write_survival_csv(surv_path, res.survival);
      result.artifacts.push_back(surv_path);
      const std::string mi_path = join(config.out_dir, "mi_table.csv");
      write_mi_table_csv(mi_path, res.first_mi);
      result.artifacts.push_back(mi_path);
      result.message = res.status + " after " + std::to_string(res.cycles) +
                       " cycles, " + std::to_string(res.total_iterations) +
                       " iterations";
    } else if (config.command == "train" || config.command == "baseline") {
      bool classification = false;
      Dataset data = load_training_data(config, classification);
      TrainConfig tc = config.train;
      tc.classification = classification;
      const NetworkSpec spec = make_spec(config, data);
      RunLog log;
      if (config.command == "train") {
        log = train_ekl(spec, data, tc).second;
      } else {
        log = train_sgd(spec, data, tc).second;
      }
      write_runlog_csv(log_path, log);
      result.artifacts.push_back(log_path);
      const std::string cmp_path = join(config.out_dir, "comparison.csv");
      write_comparison_csv(cmp_path,
                           config.command == "train" ? "enkl" : "sgd",
                           tc.epochs, log);
      result.artifacts.push_back(cmp_path);
      const RunRecord& last = log.records.back();
      result.message = "final train " + format_double(last.train_metric) +
                       ", test " + format_double(last.test_metric);
    } else {
      throw ConfigError("config: key 'command' is empty");
    }
  } catch (const std::exception& ex) {
    result.exit_code = 1;
    result.message = ex.what();
  }
  return result;
}

}  // namespace enkl
