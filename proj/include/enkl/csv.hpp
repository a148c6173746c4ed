#pragma once

#include <string>
#include <vector>

#include "enkl/trainer.hpp"

namespace enkl {

// shortest decimal that round-trips to the same double
std::string format_double(double v);

// RFC-4180 quoting; numeric cells pass through untouched
std::string csv_escape(const std::string& cell);

class CsvWriter {
 public:
  explicit CsvWriter(const std::string& path);
  ~CsvWriter();

  CsvWriter(const CsvWriter&) = delete;
  CsvWriter& operator=(const CsvWriter&) = delete;

  void row(const std::vector<std::string>& cells);
  void flush();

 private:
  struct Impl;
  Impl* impl_;
};

// fixed schema: iteration, epoch, train_metric, test_metric,
// mean_param_variance, tolerance_r, elapsed_ms
void write_runlog_csv(const std::string& path, const RunLog& log);

}  // namespace enkl
