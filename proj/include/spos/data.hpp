#pragma once

#include <algorithm>
#include <charconv>
#include <cstdlib>
#include <fstream>
#include <numeric>
#include <sstream>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "spos/dataset.hpp"
#include "spos/rng.hpp"

namespace spos {

struct SplitSpec {
  double train_fraction = 0.8;
  uint64_t seed = 0;
};

struct StandardizeTransform {
  Eigen::VectorXd mean;
  Eigen::VectorXd std_dev;  // population std; 0 marks a constant column
};

namespace data_detail {

inline std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string::npos) return "";
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

inline double parse_number(const std::string& token, const std::string& where) {
  const std::string t = trim(token);
  if (t.empty()) throw std::invalid_argument(where + ": empty field");
  char* end = nullptr;
  const double v = std::strtod(t.c_str(), &end);
  if (end != t.c_str() + t.size())
    throw std::invalid_argument(where + ": cannot parse number '" + t + "'");
  return v;
}

inline double coerce_label(double v, const std::string& where) {
  if (v == -1.0) return 0.0;  // accept {-1,+1} encoding
  if (v == 0.0 || v == 1.0) return v;
  throw std::invalid_argument(where + ": non-binary label " + std::to_string(v));
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (const char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

}  // namespace data_detail

// CSV with a header row. `label_column` may be a header name, a 0-based
// column index, or empty for an unlabeled dataset.
inline Dataset load_csv(const std::string& path, const std::string& label_column = "") {
  using namespace data_detail;
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("load_csv: cannot open '" + path + "'");

  std::string line;
  if (!std::getline(in, line)) throw std::invalid_argument("load_csv: '" + path + "' is empty");
  const std::vector<std::string> header = split_csv_line(trim(line));
  const int n_cols = static_cast<int>(header.size());

  int label_idx = -1;
  if (!label_column.empty()) {
    for (int c = 0; c < n_cols; ++c)
      if (trim(header[c]) == label_column) label_idx = c;
    if (label_idx < 0) {
      try {
        const size_t pos_idx = std::stoul(label_column);
        if (pos_idx < static_cast<size_t>(n_cols)) label_idx = static_cast<int>(pos_idx);
      } catch (...) {
      }
    }
    if (label_idx < 0)
      throw std::invalid_argument("load_csv: label column '" + label_column + "' not found in '" +
                                  path + "'");
  }

  std::vector<std::vector<double>> rows;
  std::vector<double> labels;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = trim(line);
    if (t.empty()) continue;
    const std::string where = path + ":" + std::to_string(line_no);
    const auto fields = split_csv_line(t);
    if (static_cast<int>(fields.size()) != n_cols)
      throw std::invalid_argument(where + ": expected " + std::to_string(n_cols) + " fields, got " +
                                  std::to_string(fields.size()));
    std::vector<double> row;
    row.reserve(n_cols);
    for (int c = 0; c < n_cols; ++c) {
      const double v = parse_number(fields[c], where);
      if (c == label_idx)
        labels.push_back(coerce_label(v, where));
      else
        row.push_back(v);
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw std::invalid_argument("load_csv: '" + path + "' has no data rows");

  Dataset ds;
  ds.name = path;
  ds.features.resize(static_cast<Eigen::Index>(rows.size()),
                     static_cast<Eigen::Index>(rows.front().size()));
  for (size_t r = 0; r < rows.size(); ++r)
    for (size_t c = 0; c < rows[r].size(); ++c) ds.features(r, c) = rows[r][c];
  if (label_idx >= 0) {
    Eigen::VectorXd y(static_cast<Eigen::Index>(labels.size()));
    for (size_t r = 0; r < labels.size(); ++r) y(r) = labels[r];
    ds.labels = std::move(y);
  }
  ds.validate();
  return ds;
}

// Sparse LIBSVM format: "<label> idx:value ...", 1-based indices,
// missing indices are zeros, d = max index seen.
inline Dataset load_libsvm(const std::string& path) {
  using namespace data_detail;
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("load_libsvm: cannot open '" + path + "'");

  std::vector<std::vector<std::pair<int, double>>> rows;
  std::vector<double> labels;
  int max_index = 0;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const std::string where = path + ":" + std::to_string(line_no);
    std::istringstream ls(t);
    std::string token;
    ls >> token;
    const double raw_label = parse_number(token, where);
    labels.push_back(raw_label > 0 ? 1.0 : 0.0);
    std::vector<std::pair<int, double>> row;
    while (ls >> token) {
      const auto colon = token.find(':');
      if (colon == std::string::npos || colon == 0 || colon + 1 >= token.size())
        throw std::invalid_argument(where + ": malformed token '" + token + "'");
      int idx = 0;
      const auto [p, ec] = std::from_chars(token.data(), token.data() + colon, idx);
      if (ec != std::errc() || p != token.data() + colon || idx < 1)
        throw std::invalid_argument(where + ": bad feature index in '" + token + "'");
      const double v = parse_number(token.substr(colon + 1), where);
      row.emplace_back(idx, v);
      max_index = std::max(max_index, idx);
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw std::invalid_argument("load_libsvm: '" + path + "' has no rows");
  if (max_index == 0) throw std::invalid_argument("load_libsvm: '" + path + "' has no features");

  Dataset ds;
  ds.name = path;
  ds.features = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(rows.size()), max_index);
  for (size_t r = 0; r < rows.size(); ++r)
    for (const auto& [idx, v] : rows[r]) ds.features(r, idx - 1) = v;
  Eigen::VectorXd y(static_cast<Eigen::Index>(labels.size()));
  for (size_t r = 0; r < labels.size(); ++r) y(r) = labels[r];
  ds.labels = std::move(y);
  ds.validate();
  return ds;
}

// Seeded uniform shuffle; first ceil(train_fraction * N) rows go to train.
inline std::pair<Dataset, Dataset> split(const Dataset& ds, const SplitSpec& spec) {
  if (ds.n() < 2) throw std::invalid_argument("split: need at least 2 rows");
  if (!(spec.train_fraction > 0.0 && spec.train_fraction < 1.0))
    throw std::invalid_argument("split: train_fraction must be in (0,1)");

  const Eigen::Index n = ds.n();
  std::vector<Eigen::Index> perm(n);
  std::iota(perm.begin(), perm.end(), Eigen::Index{0});
  RngStream stream(spec.seed, 0, StreamPurpose::Split);
  for (Eigen::Index i = n - 1; i > 0; --i) {
    const auto j = static_cast<Eigen::Index>(stream.uniform_int(static_cast<uint64_t>(i) + 1));
    std::swap(perm[i], perm[j]);
  }

  const auto n_train =
      static_cast<Eigen::Index>(std::ceil(spec.train_fraction * static_cast<double>(n)));
  auto take = [&](Eigen::Index begin, Eigen::Index count, const std::string& suffix) {
    Dataset out;
    out.name = ds.name + suffix;
    out.features.resize(count, ds.dim());
    if (ds.labels) out.labels = Eigen::VectorXd(count);
    for (Eigen::Index r = 0; r < count; ++r) {
      out.features.row(r) = ds.features.row(perm[begin + r]);
      if (ds.labels) (*out.labels)(r) = (*ds.labels)(perm[begin + r]);
    }
    return out;
  };
  return {take(0, n_train, "/train"), take(n_train, n - n_train, "/test")};
}

// Per-feature z-score with train statistics applied to both sets.
// Zero-variance columns map to zero.
inline std::tuple<Dataset, Dataset, StandardizeTransform> standardize(const Dataset& train,
                                                                      const Dataset& test) {
  if (train.n() < 1) throw std::invalid_argument("standardize: empty train set");
  if (test.n() > 0 && test.dim() != train.dim())
    throw std::invalid_argument("standardize: dimension mismatch");

  StandardizeTransform tf;
  tf.mean = train.features.colwise().mean();
  Eigen::MatrixXd centered = train.features.rowwise() - tf.mean.transpose();
  tf.std_dev = (centered.array().square().colwise().mean()).sqrt();

  auto apply = [&](const Dataset& ds) {
    Dataset out = ds;
    for (Eigen::Index c = 0; c < ds.dim(); ++c) {
      if (tf.std_dev(c) > 0.0)
        out.features.col(c) = (ds.features.col(c).array() - tf.mean(c)) / tf.std_dev(c);
      else
        out.features.col(c).setZero();
    }
    return out;
  };
  return {apply(train), apply(test), tf};
}

// Seeded with-replacement-free row subsample (used for the desk-scale policy
// on large datasets). Keeps the first `rows` entries of a seeded shuffle.
inline Dataset subsample(const Dataset& ds, Eigen::Index rows, uint64_t seed) {
  if (rows >= ds.n()) return ds;
  if (rows < 1) throw std::invalid_argument("subsample: need rows >= 1");
  std::vector<Eigen::Index> perm(ds.n());
  std::iota(perm.begin(), perm.end(), Eigen::Index{0});
  RngStream stream(seed, 1, StreamPurpose::Split);
  for (Eigen::Index i = ds.n() - 1; i > 0; --i) {
    const auto j = static_cast<Eigen::Index>(stream.uniform_int(static_cast<uint64_t>(i) + 1));
    std::swap(perm[i], perm[j]);
  }
  Dataset out;
  out.name = ds.name + "/subsample" + std::to_string(rows);
  out.features.resize(rows, ds.dim());
  if (ds.labels) out.labels = Eigen::VectorXd(rows);
  for (Eigen::Index r = 0; r < rows; ++r) {
    out.features.row(r) = ds.features.row(perm[r]);
    if (ds.labels) (*out.labels)(r) = (*ds.labels)(perm[r]);
  }
  return out;
}

}  // namespace spos
