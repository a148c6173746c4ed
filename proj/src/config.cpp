#include "enkl/config.hpp"

#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <sstream>
#include <string>

namespace enkl {

namespace {

using nlohmann::json;

void check_keys(const json& obj, const std::string& context,
                std::initializer_list<const char*> allowed) {
  for (const auto& [key, value] : obj.items()) {
    (void)value;
    bool ok = false;
    for (const char* a : allowed) {
      if (key == a) {
        ok = true;
        break;
      }
    }
    if (!ok) {
      throw ConfigError("config: unknown key '" + context + key + "'");
    }
  }
}

template <class T>
T get_or(const json& obj, const std::string& context, const char* key,
         T fallback) {
  if (!obj.contains(key)) return fallback;
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError("config: key '" + context + key + "' has the wrong type");
  }
}

double get_positive(const json& obj, const std::string& context,
                    const char* key, double fallback) {
  const double v = get_or<double>(obj, context, key, fallback);
  if (!(v > 0.0)) {
    throw ConfigError("config: key '" + context + key + "' must be > 0");
  }
  return v;
}

double get_nonnegative(const json& obj, const std::string& context,
                       const char* key, double fallback) {
  const double v = get_or<double>(obj, context, key, fallback);
  if (!(v >= 0.0)) {
    throw ConfigError("config: key '" + context + key + "' must be >= 0");
  }
  return v;
}

int get_int_min(const json& obj, const std::string& context, const char* key,
                int fallback, int minimum) {
  const int v = get_or<int>(obj, context, key, fallback);
  if (v < minimum) {
    throw ConfigError("config: key '" + context + key + "' must be >= " +
                      std::to_string(minimum));
  }
  return v;
}

NoiseModel parse_noise(const json& obj, const std::string& context,
                       const NoiseModel& defaults) {
  check_keys(obj, context, {"r", "mode", "r_min", "adapt_kappa"});
  NoiseModel n = defaults;
  n.r = get_nonnegative(obj, context, "r", defaults.r);
  n.r_min = get_nonnegative(obj, context, "r_min", defaults.r_min);
  n.adapt_kappa = get_nonnegative(obj, context, "adapt_kappa", defaults.adapt_kappa);
  const std::string mode = get_or<std::string>(
      obj, context, "mode",
      defaults.mode == NoiseModel::Mode::adaptive ? "adaptive" : "fixed");
  if (mode == "fixed") {
    n.mode = NoiseModel::Mode::fixed;
  } else if (mode == "adaptive") {
    n.mode = NoiseModel::Mode::adaptive;
  } else {
    throw ConfigError("config: key '" + context +
                      "mode' must be 'fixed' or 'adaptive'");
  }
  try {
    n.validate();
  } catch (const std::exception& ex) {
    throw ConfigError("config: section '" + context + "': " + ex.what());
  }
  return n;
}

}  // namespace

void RunConfig::validate() const {
  static const std::vector<std::string> commands = {"train", "baseline",
                                                    "discover", "simulate", "mi"};
  if (std::find(commands.begin(), commands.end(), command) == commands.end()) {
    throw ConfigError(
        "config: key 'command' must be one of train, baseline, discover, "
        "simulate, mi (got '" + command + "')");
  }
  if (threads < 0) throw ConfigError("config: key 'threads' must be >= 0");
  if (command == "train" || command == "baseline") {
    namespace fs = std::filesystem;
    if (data.kind == "csv") {
      if (data.csv_path.empty() || !fs::exists(data.csv_path)) {
        throw ConfigError("config: key 'data.csv_path' does not name an "
                          "existing file ('" + data.csv_path + "')");
      }
    } else if (data.kind == "idx") {
      for (const auto& [key, path] :
           {std::pair{"data.train_images", data.train_images},
            {"data.train_labels", data.train_labels},
            {"data.test_images", data.test_images},
            {"data.test_labels", data.test_labels}}) {
        if (path.empty() || !fs::exists(path)) {
          throw ConfigError(std::string("config: key '") + key +
                            "' does not name an existing file ('" + path + "')");
        }
      }
    } else {
      throw ConfigError("config: key 'data.kind' must be 'csv' or 'idx'");
    }
    if (!(data.test_fraction >= 0.0 && data.test_fraction < 1.0)) {
      throw ConfigError("config: key 'data.test_fraction' must be in [0, 1)");
    }
  }
  train.validate();
  lorenz.validate();
  estimate.validate();
  selection.validate();
  if (dict_state_dim < 1) throw ConfigError("config: key 'dictionary.state_dim' must be >= 1");
  if (dict_max_degree < 1) throw ConfigError("config: key 'dictionary.max_degree' must be >= 1");
}

RunConfig parse_config(const std::string& json_text, const std::string& origin) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::exception& ex) {
    throw ConfigError("config: " + origin + ": parse error: " + ex.what());
  }
  if (!root.is_object()) {
    throw ConfigError("config: " + origin + ": top level must be an object");
  }
  check_keys(root, "",
             {"command", "seed", "out_dir", "threads", "data", "network",
              "train", "lorenz", "dictionary", "estimate", "selection"});

  RunConfig c;
  c.command = get_or<std::string>(root, "", "command", "");
  c.seed = get_or<std::uint64_t>(root, "", "seed", 0);
  c.out_dir = get_or<std::string>(root, "", "out_dir", "run_out");
  c.threads = get_int_min(root, "", "threads", 0, 0);

  if (root.contains("data")) {
    const json& d = root.at("data");
    check_keys(d, "data.",
               {"kind", "csv_path", "target_column", "test_fraction",
                "standardize", "train_images", "train_labels", "test_images",
                "test_labels", "limit_train", "limit_test"});
    c.data.kind = get_or<std::string>(d, "data.", "kind", c.data.kind);
    c.data.csv_path = get_or<std::string>(d, "data.", "csv_path", "");
    c.data.target_column =
        get_or<std::string>(d, "data.", "target_column", c.data.target_column);
    c.data.test_fraction =
        get_or<double>(d, "data.", "test_fraction", c.data.test_fraction);
    c.data.standardize = get_or<bool>(d, "data.", "standardize", true);
    c.data.train_images = get_or<std::string>(d, "data.", "train_images", "");
    c.data.train_labels = get_or<std::string>(d, "data.", "train_labels", "");
    c.data.test_images = get_or<std::string>(d, "data.", "test_images", "");
    c.data.test_labels = get_or<std::string>(d, "data.", "test_labels", "");
    c.data.limit_train = get_int_min(d, "data.", "limit_train", 0, 0);
    c.data.limit_test = get_int_min(d, "data.", "limit_test", 0, 0);
  }

  if (root.contains("network")) {
    const json& n = root.at("network");
    check_keys(n, "network.", {"hidden", "hidden_activation", "output_activation"});
    c.network.hidden =
        get_or<std::vector<int>>(n, "network.", "hidden", c.network.hidden);
    for (int h : c.network.hidden) {
      if (h < 1) throw ConfigError("config: key 'network.hidden' entries must be >= 1");
    }
    c.network.hidden_activation = get_or<std::string>(
        n, "network.", "hidden_activation", c.network.hidden_activation);
    c.network.output_activation = get_or<std::string>(
        n, "network.", "output_activation", c.network.output_activation);
    activation_from_string(c.network.hidden_activation);
    activation_from_string(c.network.output_activation);
  }

  if (root.contains("train")) {
    const json& t = root.at("train");
    check_keys(t, "train.",
               {"minibatch_size", "ensemble_size", "epochs", "init_mean",
                "init_std", "eval_every", "learning_rate",
                "perturb_observations", "process_noise",
                "process_noise_half_life", "normalized", "inflation",
                "noise"});
    c.train.minibatch_size = get_int_min(t, "train.", "minibatch_size",
                                         c.train.minibatch_size, 1);
    c.train.ensemble_size =
        get_int_min(t, "train.", "ensemble_size", c.train.ensemble_size, 2);
    c.train.epochs = get_int_min(t, "train.", "epochs", c.train.epochs, 0);
    c.train.init_mean = get_or<double>(t, "train.", "init_mean", c.train.init_mean);
    c.train.init_std = get_nonnegative(t, "train.", "init_std", c.train.init_std);
    c.train.eval_every =
        get_int_min(t, "train.", "eval_every", c.train.eval_every, 1);
    c.train.learning_rate =
        get_nonnegative(t, "train.", "learning_rate", c.train.learning_rate);
    c.train.perturb_observations = get_or<bool>(
        t, "train.", "perturb_observations", c.train.perturb_observations);
    c.train.process_noise_std = get_nonnegative(t, "train.", "process_noise",
                                                c.train.process_noise_std);
    c.train.process_noise_half_life =
        get_nonnegative(t, "train.", "process_noise_half_life",
                        c.train.process_noise_half_life);
    c.train.normalized_covariance = get_or<bool>(
        t, "train.", "normalized", c.train.normalized_covariance);
    c.train.inflation = get_or<double>(t, "train.", "inflation", c.train.inflation);
    if (c.train.inflation < 1.0) {
      throw ConfigError("config: key 'train.inflation' must be >= 1");
    }
    if (t.contains("noise")) {
      c.train.noise = parse_noise(t.at("noise"), "train.noise.", c.train.noise);
    }
  }

  if (root.contains("lorenz")) {
    const json& l = root.at("lorenz");
    check_keys(l, "lorenz.",
               {"sigma", "rho", "beta", "x0", "dt", "steps", "integrator"});
    c.lorenz.sigma = get_or<double>(l, "lorenz.", "sigma", c.lorenz.sigma);
    c.lorenz.rho = get_or<double>(l, "lorenz.", "rho", c.lorenz.rho);
    c.lorenz.beta = get_or<double>(l, "lorenz.", "beta", c.lorenz.beta);
    if (l.contains("x0")) {
      const auto x0 = get_or<std::vector<double>>(l, "lorenz.", "x0", {});
      if (x0.size() != 3) {
        throw ConfigError("config: key 'lorenz.x0' must have 3 entries");
      }
      c.lorenz.x0 = Eigen::Vector3d(x0[0], x0[1], x0[2]);
    }
    c.lorenz.dt = get_positive(l, "lorenz.", "dt", c.lorenz.dt);
    c.lorenz.steps = get_int_min(l, "lorenz.", "steps", c.lorenz.steps, 0);
    const std::string integ = get_or<std::string>(
        l, "lorenz.", "integrator",
        c.lorenz.integrator == LorenzConfig::Integrator::rk4 ? "rk4" : "euler");
    if (integ == "rk4") {
      c.lorenz.integrator = LorenzConfig::Integrator::rk4;
    } else if (integ == "euler") {
      c.lorenz.integrator = LorenzConfig::Integrator::euler;
    } else {
      throw ConfigError("config: key 'lorenz.integrator' must be 'rk4' or 'euler'");
    }
  }

  if (root.contains("dictionary")) {
    const json& d = root.at("dictionary");
    check_keys(d, "dictionary.", {"state_dim", "max_degree"});
    c.dict_state_dim = get_int_min(d, "dictionary.", "state_dim", 3, 1);
    c.dict_max_degree = get_int_min(d, "dictionary.", "max_degree", 2, 1);
  }

  if (root.contains("estimate")) {
    const json& e = root.at("estimate");
    check_keys(e, "estimate.",
               {"target_variance", "max_iters", "r", "ensemble_size",
                "init_mean", "init_std", "samples_per_iteration",
                "sample_stride", "perturb_targets", "rmse_tol"});
    c.estimate.target_variance = get_nonnegative(
        e, "estimate.", "target_variance", c.estimate.target_variance);
    c.estimate.max_iters =
        get_int_min(e, "estimate.", "max_iters", c.estimate.max_iters, 1);
    c.estimate.noise.r = get_nonnegative(e, "estimate.", "r", c.estimate.noise.r);
    c.estimate.ensemble_size =
        get_int_min(e, "estimate.", "ensemble_size", c.estimate.ensemble_size, 2);
    c.estimate.init_mean =
        get_or<double>(e, "estimate.", "init_mean", c.estimate.init_mean);
    c.estimate.init_std =
        get_nonnegative(e, "estimate.", "init_std", c.estimate.init_std);
    c.estimate.samples_per_iteration =
        get_int_min(e, "estimate.", "samples_per_iteration",
                    c.estimate.samples_per_iteration, 1);
    c.estimate.sample_stride = get_int_min(e, "estimate.", "sample_stride",
                                           c.estimate.sample_stride, 1);
    c.estimate.perturb_targets = get_or<bool>(e, "estimate.", "perturb_targets",
                                              c.estimate.perturb_targets);
    c.estimate.rmse_tol =
        get_nonnegative(e, "estimate.", "rmse_tol", c.estimate.rmse_tol);
  }

  if (root.contains("selection")) {
    const json& s = root.at("selection");
    check_keys(s, "selection.",
               {"penalty_c", "max_cycles", "prune_threshold",
                "cycle_variance_target", "rebalance_std",
                "rebalance_floor_fraction", "solved_error_fraction",
                "mi_window"});
    c.selection.penalty_c =
        get_nonnegative(s, "selection.", "penalty_c", c.selection.penalty_c);
    c.selection.max_cycles =
        get_int_min(s, "selection.", "max_cycles", c.selection.max_cycles, 1);
    c.selection.prune_threshold = get_nonnegative(
        s, "selection.", "prune_threshold", c.selection.prune_threshold);
    c.selection.cycle_variance_target =
        get_nonnegative(s, "selection.", "cycle_variance_target",
                        c.selection.cycle_variance_target);
    c.selection.rebalance_std = get_positive(s, "selection.", "rebalance_std",
                                             c.selection.rebalance_std);
    c.selection.rebalance_floor_fraction =
        get_positive(s, "selection.", "rebalance_floor_fraction",
                     c.selection.rebalance_floor_fraction);
    c.selection.solved_error_fraction =
        get_nonnegative(s, "selection.", "solved_error_fraction",
                        c.selection.solved_error_fraction);
    c.selection.mi_window =
        get_int_min(s, "selection.", "mi_window", c.selection.mi_window, 3);
  }

  c.estimate.seed = c.seed;
  c.train.seed = c.seed;
  return c;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("load_config: cannot open " + path);
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return parse_config(buffer.str(), path);
}

std::string config_to_json(const RunConfig& c) {
  json root;
  root["command"] = c.command;
  root["seed"] = c.seed;
  root["out_dir"] = c.out_dir;
  root["threads"] = c.threads;

  root["data"] = {{"kind", c.data.kind},
                  {"csv_path", c.data.csv_path},
                  {"target_column", c.data.target_column},
                  {"test_fraction", c.data.test_fraction},
                  {"standardize", c.data.standardize},
                  {"train_images", c.data.train_images},
                  {"train_labels", c.data.train_labels},
                  {"test_images", c.data.test_images},
                  {"test_labels", c.data.test_labels},
                  {"limit_train", c.data.limit_train},
                  {"limit_test", c.data.limit_test}};
  root["network"] = {{"hidden", c.network.hidden},
                     {"hidden_activation", c.network.hidden_activation},
                     {"output_activation", c.network.output_activation}};
  root["train"] = {
      {"minibatch_size", c.train.minibatch_size},
      {"ensemble_size", c.train.ensemble_size},
      {"epochs", c.train.epochs},
      {"init_mean", c.train.init_mean},
      {"init_std", c.train.init_std},
      {"eval_every", c.train.eval_every},
      {"learning_rate", c.train.learning_rate},
      {"perturb_observations", c.train.perturb_observations},
      {"process_noise", c.train.process_noise_std},
      {"process_noise_half_life", c.train.process_noise_half_life},
      {"normalized", c.train.normalized_covariance},
      {"inflation", c.train.inflation},
      {"noise",
       {{"r", c.train.noise.r},
        {"mode",
         c.train.noise.mode == NoiseModel::Mode::adaptive ? "adaptive" : "fixed"},
        {"r_min", c.train.noise.r_min},
        {"adapt_kappa", c.train.noise.adapt_kappa}}}};
  root["lorenz"] = {
      {"sigma", c.lorenz.sigma},
      {"rho", c.lorenz.rho},
      {"beta", c.lorenz.beta},
      {"x0", {c.lorenz.x0(0), c.lorenz.x0(1), c.lorenz.x0(2)}},
      {"dt", c.lorenz.dt},
      {"steps", c.lorenz.steps},
      {"integrator",
       c.lorenz.integrator == LorenzConfig::Integrator::rk4 ? "rk4" : "euler"}};
  root["dictionary"] = {{"state_dim", c.dict_state_dim},
                        {"max_degree", c.dict_max_degree}};
  root["estimate"] = {{"target_variance", c.estimate.target_variance},
                      {"max_iters", c.estimate.max_iters},
                      {"r", c.estimate.noise.r},
                      {"ensemble_size", c.estimate.ensemble_size},
                      {"init_mean", c.estimate.init_mean},
                      {"init_std", c.estimate.init_std},
                      {"samples_per_iteration", c.estimate.samples_per_iteration},
                      {"sample_stride", c.estimate.sample_stride},
                      {"perturb_targets", c.estimate.perturb_targets},
                      {"rmse_tol", c.estimate.rmse_tol}};
  root["selection"] = {{"penalty_c", c.selection.penalty_c},
                       {"max_cycles", c.selection.max_cycles},
                       {"prune_threshold", c.selection.prune_threshold},
                       {"cycle_variance_target", c.selection.cycle_variance_target},
                       {"rebalance_std", c.selection.rebalance_std},
                       {"rebalance_floor_fraction", c.selection.rebalance_floor_fraction},
                       {"solved_error_fraction", c.selection.solved_error_fraction},
                       {"mi_window", c.selection.mi_window}};
  return root.dump(2) + "\n";
}

}  // namespace enkl
