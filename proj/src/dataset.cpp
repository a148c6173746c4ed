#include "enkl/dataset.hpp"

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <sstream>

#include "enkl/rng.hpp"

namespace enkl {

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cell += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cell += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      cells.push_back(std::move(cell));
      cell.clear();
    } else if (c != '\r') {
      cell += c;
    }
  }
  cells.push_back(std::move(cell));
  return cells;
}

double parse_number(const std::string& cell, std::size_t row, std::size_t col) {
  std::size_t consumed = 0;
  double value = 0.0;
  try {
    value = std::stod(cell, &consumed);
  } catch (const std::exception&) {
    consumed = 0;
  }
  if (consumed != cell.size() || cell.empty()) {
    throw IoError("ingest_csv: non-numeric cell '" + cell + "' at row " +
                  std::to_string(row) + ", column " + std::to_string(col));
  }
  return value;
}

std::uint32_t read_be32(std::istream& in, const std::string& path) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (!in) throw IoError("ingest_idx: truncated file " + path);
  return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) |
         (std::uint32_t(b[2]) << 8) | std::uint32_t(b[3]);
}

}  // namespace

void Dataset::validate() const {
  if (inputs.rows() != targets.rows()) {
    throw DimensionError("Dataset: inputs and targets row counts differ");
  }
  if (!inputs.allFinite() || !targets.allFinite()) {
    throw NumericalError("Dataset: non-finite entries");
  }
  for (int i : train_indices) {
    if (i < 0 || i >= inputs.rows()) {
      throw DimensionError("Dataset: train index out of range");
    }
  }
  for (int i : test_indices) {
    if (i < 0 || i >= inputs.rows()) {
      throw DimensionError("Dataset: test index out of range");
    }
  }
}

namespace {
Matrix take_rows(const Matrix& m, const std::vector<int>& idx) {
  Matrix out(static_cast<Eigen::Index>(idx.size()), m.cols());
  for (std::size_t k = 0; k < idx.size(); ++k) {
    out.row(static_cast<Eigen::Index>(k)) = m.row(idx[k]);
  }
  return out;
}
}  // namespace

Matrix Dataset::train_inputs() const { return take_rows(inputs, train_indices); }
Matrix Dataset::train_targets() const { return take_rows(targets, train_indices); }
Matrix Dataset::test_inputs() const { return take_rows(inputs, test_indices); }
Matrix Dataset::test_targets() const { return take_rows(targets, test_indices); }

void split_dataset(Dataset& d, double test_fraction, std::uint64_t seed) {
  if (test_fraction < 0.0 || test_fraction >= 1.0) {
    throw ConfigError("split_dataset: test_fraction must be in [0, 1)");
  }
  std::vector<int> perm(static_cast<std::size_t>(d.size()));
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng(seed);
  rng.shuffle(perm);
  const auto n_test = static_cast<std::size_t>(
      test_fraction * static_cast<double>(perm.size()));
  const auto n_train = perm.size() - n_test;
  d.train_indices.assign(perm.begin(), perm.begin() + n_train);
  d.test_indices.assign(perm.begin() + n_train, perm.end());
  std::sort(d.train_indices.begin(), d.train_indices.end());
  std::sort(d.test_indices.begin(), d.test_indices.end());
}

Standardizer standardize(Dataset& d) {
  d.validate();
  if (d.train_indices.empty()) {
    throw DimensionError("standardize: dataset has no train split");
  }
  const Matrix tr_in = d.train_inputs();
  const Matrix tr_tg = d.train_targets();
  const auto n = static_cast<double>(tr_in.rows());

  Standardizer s;
  s.input_mean = tr_in.colwise().mean();
  s.target_mean = tr_tg.colwise().mean();
  auto column_std = [n](const Matrix& m, const Vector& mean) {
    Vector out(m.cols());
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      const double ss = (m.col(c).array() - mean(c)).square().sum();
      out(c) = n > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0;
    }
    return out;
  };
  s.input_std = column_std(tr_in, s.input_mean);
  s.target_std = column_std(tr_tg, s.target_mean);

  auto apply = [](Matrix& m, const Vector& mean, const Vector& stddev) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      const double scale = stddev(c) > 0.0 ? stddev(c) : 1.0;
      m.col(c) = (m.col(c).array() - mean(c)) / scale;
    }
  };
  apply(d.inputs, s.input_mean, s.input_std);
  apply(d.targets, s.target_mean, s.target_std);
  return s;
}

Dataset ingest_csv(const std::string& path, const std::string& target_column) {
  std::ifstream in(path);
  if (!in) throw IoError("ingest_csv: cannot open " + path);

  std::string line;
  if (!std::getline(in, line)) throw IoError("ingest_csv: empty file " + path);
  const std::vector<std::string> header = split_csv_line(line);

  Eigen::Index target_idx = -1;
  for (std::size_t c = 0; c < header.size(); ++c) {
    if (header[c] == target_column) {
      target_idx = static_cast<Eigen::Index>(c);
      break;
    }
  }
  if (target_idx < 0) {
    throw IoError("ingest_csv: target column '" + target_column +
                  "' not found in header of " + path);
  }

  std::vector<std::vector<double>> rows;
  std::size_t row_no = 1;
  while (std::getline(in, line)) {
    ++row_no;
    if (line.empty()) continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != header.size()) {
      throw IoError("ingest_csv: row " + std::to_string(row_no) + " has " +
                    std::to_string(cells.size()) + " cells, header has " +
                    std::to_string(header.size()));
    }
    std::vector<double> parsed(cells.size());
    for (std::size_t c = 0; c < cells.size(); ++c) {
      parsed[c] = parse_number(cells[c], row_no, c + 1);
    }
    rows.push_back(std::move(parsed));
  }
  if (rows.empty()) throw IoError("ingest_csv: no data rows in " + path);

  Dataset d;
  const auto n = static_cast<Eigen::Index>(rows.size());
  const auto f = static_cast<Eigen::Index>(header.size()) - 1;
  d.inputs.resize(n, f);
  d.targets.resize(n, 1);
  for (Eigen::Index r = 0; r < n; ++r) {
    Eigen::Index fc = 0;
    for (Eigen::Index c = 0; c < static_cast<Eigen::Index>(header.size()); ++c) {
      const double v = rows[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)];
      if (c == target_idx) {
        d.targets(r, 0) = v;
      } else {
        d.inputs(r, fc++) = v;
      }
    }
  }
  d.validate();
  return d;
}

Dataset ingest_idx(const std::string& images_path,
                   const std::string& labels_path, int limit) {
  std::ifstream img(images_path, std::ios::binary);
  if (!img) throw IoError("ingest_idx: cannot open " + images_path);
  std::ifstream lab(labels_path, std::ios::binary);
  if (!lab) throw IoError("ingest_idx: cannot open " + labels_path);

  const std::uint32_t img_magic = read_be32(img, images_path);
  if (img_magic != 0x00000803u) {
    throw IoError("ingest_idx: bad image magic in " + images_path +
                  " (expected 0x00000803)");
  }
  const std::uint32_t img_count = read_be32(img, images_path);
  const std::uint32_t rows = read_be32(img, images_path);
  const std::uint32_t cols = read_be32(img, images_path);

  const std::uint32_t lab_magic = read_be32(lab, labels_path);
  if (lab_magic != 0x00000801u) {
    throw IoError("ingest_idx: bad label magic in " + labels_path +
                  " (expected 0x00000801)");
  }
  const std::uint32_t lab_count = read_be32(lab, labels_path);
  if (img_count != lab_count) {
    throw IoError("ingest_idx: image count " + std::to_string(img_count) +
                  " does not match label count " + std::to_string(lab_count));
  }

  std::uint32_t take = img_count;
  if (limit > 0 && static_cast<std::uint32_t>(limit) < take) {
    take = static_cast<std::uint32_t>(limit);
  }
  const std::size_t pixels = static_cast<std::size_t>(rows) * cols;

  Dataset d;
  d.inputs.resize(take, static_cast<Eigen::Index>(pixels));
  d.targets = Matrix::Zero(take, 10);

  std::vector<unsigned char> buf(pixels);
  for (std::uint32_t s = 0; s < take; ++s) {
    img.read(reinterpret_cast<char*>(buf.data()),
             static_cast<std::streamsize>(pixels));
    if (!img) throw IoError("ingest_idx: truncated file " + images_path);
    for (std::size_t p = 0; p < pixels; ++p) {
      d.inputs(s, static_cast<Eigen::Index>(p)) =
          static_cast<double>(buf[p]) / 255.0;
    }
    char label = 0;
    lab.read(&label, 1);
    if (!lab) throw IoError("ingest_idx: truncated file " + labels_path);
    const int digit = static_cast<unsigned char>(label);
    if (digit > 9) {
      throw IoError("ingest_idx: label value " + std::to_string(digit) +
                    " out of range in " + labels_path);
    }
    d.targets(s, digit) = 1.0;
  }
  return d;
}

}  // namespace enkl
