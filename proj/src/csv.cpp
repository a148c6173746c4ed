#include "enkl/csv.hpp"

#include <charconv>
#include <cmath>
#include <fstream>

#include "enkl/errors.hpp"

namespace enkl {

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

std::string csv_escape(const std::string& cell) {
  if (cell.find_first_of(",\"\n\r") == std::string::npos) return cell;
  std::string out = "\"";
  for (char c : cell) {
    if (c == '"') out += "\"\"";
    else out += c;
  }
  out += "\"";
  return out;
}

struct CsvWriter::Impl {
  std::ofstream out;
};

CsvWriter::CsvWriter(const std::string& path) : impl_(new Impl) {
  impl_->out.open(path, std::ios::binary);  // \n line endings, byte-stable
  if (!impl_->out) {
    delete impl_;
    throw IoError("CsvWriter: cannot open " + path);
  }
}

CsvWriter::~CsvWriter() { delete impl_; }

void CsvWriter::row(const std::vector<std::string>& cells) {
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (i) impl_->out << ',';
    impl_->out << csv_escape(cells[i]);
  }
  impl_->out << '\n';
}

void CsvWriter::flush() { impl_->out.flush(); }

void write_runlog_csv(const std::string& path, const RunLog& log) {
  CsvWriter w(path);
  w.row({"iteration", "epoch", "train_metric", "test_metric",
         "mean_param_variance", "tolerance_r", "elapsed_ms"});
  for (const RunRecord& r : log.records) {
    w.row({std::to_string(r.iteration), std::to_string(r.epoch),
           format_double(r.train_metric), format_double(r.test_metric),
           format_double(r.mean_param_variance), format_double(r.tolerance_r),
           format_double(r.elapsed_ms)});
  }
}

}  // namespace enkl
