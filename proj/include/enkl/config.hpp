#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "enkl/dynsys.hpp"
#include "enkl/infosel.hpp"
#include "enkl/trainer.hpp"

namespace enkl {

struct DataConfig {
  std::string kind = "csv";  // csv | idx
  std::string csv_path;
  std::string target_column = "medv";
  double test_fraction = 0.2;
  bool standardize = true;  // z-score features/targets (csv regression only)
  std::string train_images, train_labels, test_images, test_labels;
  int limit_train = 0;  // 0 = all records
  int limit_test = 0;
};

struct NetworkConfig {
  std::vector<int> hidden = {32, 32};
  std::string hidden_activation = "relu";
  std::string output_activation = "linear";
};

// Everything a run needs; the JSON schema is strict (unknown keys are
// errors) and this struct round-trips through it byte-for-byte.
struct RunConfig {
  std::string command;  // train | baseline | discover | simulate | mi
  std::uint64_t seed = 0;
  std::string out_dir = "run_out";
  int threads = 0;  // 0 = auto

  DataConfig data;
  NetworkConfig network;
  TrainConfig train;
  LorenzConfig lorenz;
  int dict_state_dim = 3;
  int dict_max_degree = 2;
  EstimateConfig estimate;
  SelectionConfig selection;

  void validate() const;
};

RunConfig load_config(const std::string& path);
RunConfig parse_config(const std::string& json_text, const std::string& origin);
std::string config_to_json(const RunConfig& config);

}  // namespace enkl
