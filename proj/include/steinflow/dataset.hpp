#pragma once

#include "steinflow/common.hpp"
#include "steinflow/targets.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <numeric>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

namespace steinflow {

class DatasetError : public Error
{
public:
  DatasetError(const std::string& what, long line = 0)
    : Error(line > 0 ? "line " + std::to_string(line) + ": " + what : what)
    , line_(line)
  {}

  long line() const { return line_; }

private:
  long line_;
};

//! Labels in {-1, +1}, one feature row per label.
struct LabelledData
{
  Matrix features;
  Vector labels;
};

struct Dataset
{
  LabelledData train;
  LabelledData test;
};

struct SplitOptions
{
  bool bias = true;
  double test_fraction = 0.2;
  std::uint64_t seed = 0;
};

namespace dataset {

namespace detail {

inline std::string_view
trim(std::string_view s)
{
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos)
    return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

inline bool
parse_double(std::string_view cell, double& out)
{
  cell = trim(cell);
  if (!cell.empty() && cell.front() == '+')
    cell.remove_prefix(1);
  if (cell.empty())
    return false;
  const auto res = std::from_chars(cell.data(), cell.data() + cell.size(), out);
  return res.ec == std::errc() && res.ptr == cell.data() + cell.size();
}

inline std::vector<std::string_view>
split(std::string_view line)
{
  std::vector<std::string_view> cells;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(',', start);
    cells.push_back(line.substr(start, pos - start));
    if (pos == std::string_view::npos)
      break;
    start = pos + 1;
  }
  return cells;
}

} // namespace detail

//! Parses label-first CSV text. Labels 0 are mapped to -1; a header row is
//! detected by a non-numeric first cell on the first non-empty line.
inline LabelledData
parse_csv(std::istream& in)
{
  std::vector<double> values;
  std::vector<double> labels;
  std::size_t n_features = 0;
  bool seen_first = false;
  std::string raw;
  long line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const std::string_view line = detail::trim(raw);
    if (line.empty())
      continue;
    const auto cells = detail::split(line);
    double label = 0.0;
    const bool numeric_label = detail::parse_double(cells.front(), label);
    if (!seen_first) {
      seen_first = true;
      if (!numeric_label)
        continue;
    }
    if (!numeric_label)
      throw DatasetError("label is not numeric", line_no);
    if (label == 0.0)
      label = -1.0;
    if (label != 1.0 && label != -1.0)
      throw DatasetError("label must be -1/+1 or 0/1", line_no);
    if (cells.size() < 2)
      throw DatasetError("row has no features", line_no);
    if (n_features == 0)
      n_features = cells.size() - 1;
    else if (cells.size() - 1 != n_features)
      throw DatasetError("expected " + std::to_string(n_features) +
                           " features, found " +
                           std::to_string(cells.size() - 1),
                         line_no);
    for (std::size_t c = 1; c < cells.size(); ++c) {
      double v = 0.0;
      if (!detail::parse_double(cells[c], v) || !std::isfinite(v))
        throw DatasetError("malformed feature in column " + std::to_string(c),
                           line_no);
      values.push_back(v);
    }
    labels.push_back(label);
  }
  if (labels.empty())
    throw DatasetError("dataset contains no rows");

  LabelledData out;
  const auto n = static_cast<Eigen::Index>(labels.size());
  const auto p = static_cast<Eigen::Index>(n_features);
  out.features =
    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                                   Eigen::RowMajor>>(values.data(), n, p);
  out.labels = Eigen::Map<const Vector>(labels.data(), n);
  return out;
}

inline LabelledData
read_csv(const std::string& path)
{
  std::ifstream in(path);
  if (!in)
    throw DatasetError("cannot open dataset '" + path + "'");
  return parse_csv(in);
}

//! Seeded shuffle, train/test split, per-column z-scoring with training
//! statistics and an optional trailing bias column of ones.
inline Dataset
prepare(const LabelledData& data, const SplitOptions& opts)
{
  const Eigen::Index n = data.features.rows();
  if (!(opts.test_fraction >= 0.0 && opts.test_fraction < 1.0))
    throw InvalidArgument("test_fraction must lie in [0, 1)");
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{ 0 });
  Rng rng(opts.seed);
  std::shuffle(order.begin(), order.end(), rng);

  const auto n_test = static_cast<Eigen::Index>(
    std::floor(opts.test_fraction * static_cast<double>(n)));
  const Eigen::Index n_train = n - n_test;
  if (n_train < 1)
    throw DatasetError("no training rows left after the split");

  auto take = [&](Eigen::Index begin, Eigen::Index count) {
    LabelledData part;
    part.features.resize(count, data.features.cols());
    part.labels.resize(count);
    for (Eigen::Index r = 0; r < count; ++r) {
      const auto src = order[static_cast<std::size_t>(begin + r)];
      part.features.row(r) = data.features.row(src);
      part.labels(r) = data.labels(src);
    }
    return part;
  };
  Dataset out{ take(0, n_train), take(n_train, n_test) };

  const Eigen::RowVectorXd mean = out.train.features.colwise().mean();
  Eigen::RowVectorXd sd =
    ((out.train.features.rowwise() - mean).array().square().colwise().sum() /
     static_cast<double>(n_train))
      .sqrt();
  for (Eigen::Index c = 0; c < sd.size(); ++c)
    if (!(sd(c) > 0.0))
      sd(c) = 1.0;

  for (LabelledData* part : { &out.train, &out.test }) {
    Matrix z = (part->features.rowwise() - mean).array().rowwise() / sd.array();
    if (opts.bias) {
      part->features.resize(z.rows(), z.cols() + 1);
      part->features << z, Vector::Ones(z.rows());
    } else {
      part->features = std::move(z);
    }
  }
  return out;
}

inline Dataset
load_dataset(const std::string& path, const SplitOptions& opts)
{
  return prepare(read_csv(path), opts);
}

//! Linearly separable data: z ~ N(0, I_p), labels sign(<w, z>) for a random
//! unit normal w, keeping only points with |<w, z>| >= margin.
inline LabelledData
make_separable(Eigen::Index n, Eigen::Index p, double margin, Rng& rng)
{
  if (n < 1 || p < 1)
    throw InvalidArgument("make_separable: n and p must be positive");
  Vector w = targets::standard_normal(rng, p, 1).col(0);
  w.normalize();
  LabelledData out{ Matrix(n, p), Vector(n) };
  Eigen::Index filled = 0;
  while (filled < n) {
    const Vector z = targets::standard_normal(rng, p, 1).col(0);
    const double s = w.dot(z);
    if (std::abs(s) < margin)
      continue;
    out.features.row(filled) = z.transpose();
    out.labels(filled) = s > 0.0 ? 1.0 : -1.0;
    ++filled;
  }
  return out;
}

inline void
write_csv(std::ostream& out, const LabelledData& data)
{
  out << "label";
  for (Eigen::Index c = 0; c < data.features.cols(); ++c)
    out << ",f" << c;
  out << '\n';
  char buf[64];
  for (Eigen::Index r = 0; r < data.features.rows(); ++r) {
    out << (data.labels(r) > 0 ? "1" : "-1");
    for (Eigen::Index c = 0; c < data.features.cols(); ++c) {
      const auto res = std::to_chars(buf, buf + sizeof buf, data.features(r, c),
                                     std::chars_format::general, 17);
      out << ',' << std::string_view(buf, static_cast<std::size_t>(res.ptr - buf));
    }
    out << '\n';
  }
}

} // namespace dataset
} // namespace steinflow
