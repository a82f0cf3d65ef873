#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "wgd/targets.hpp"

namespace wgd {
namespace {

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return std::string(s.substr(first, last - first + 1));
}

std::vector<std::string> split_commas(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, ',')) out.push_back(trim(field));
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

bool parse_double(const std::string& s, double& out) {
  if (s.empty()) return false;
  const char* first = s.data();
  const char* last = s.data() + s.size();
  if (*first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, last, out);
  return ec == std::errc() && ptr == last && std::isfinite(out);
}

[[noreturn]] void fail(const std::string& path, std::size_t line, const std::string& what) {
  std::ostringstream msg;
  msg << path << ":" << line << ": " << what;
  throw std::invalid_argument(msg.str());
}

}  // namespace

LogisticRegressionData load_regression_csv(const std::string& path, bool standardize,
                                           double sigma0_sq) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open regression CSV: " + path);

  std::string line;
  std::size_t line_no = 0;
  std::size_t columns = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!trim(line).empty()) {
      columns = split_commas(line).size();
      break;
    }
  }
  if (columns == 0) throw std::invalid_argument(path + ": empty file (header row required)");
  if (columns < 2) fail(path, line_no, "need at least one feature column and a label column");

  std::vector<std::vector<double>> rows;
  std::vector<double> labels;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto fields = split_commas(line);
    if (fields.size() != columns) {
      std::ostringstream what;
      what << "expected " << columns << " fields, found " << fields.size();
      fail(path, line_no, what.str());
    }
    std::vector<double> row(columns - 1);
    for (std::size_t j = 0; j + 1 < columns; ++j)
      if (!parse_double(fields[j], row[j])) fail(path, line_no, "non-numeric value '" + fields[j] + "'");
    double label = 0.0;
    if (!parse_double(fields.back(), label) || (label != 0.0 && label != 1.0))
      fail(path, line_no, "label must be 0 or 1, found '" + fields.back() + "'");
    rows.push_back(std::move(row));
    labels.push_back(label);
  }
  if (rows.empty()) throw std::invalid_argument(path + ": no data rows");

  const Eigen::Index n = static_cast<Eigen::Index>(rows.size());
  const Eigen::Index p = static_cast<Eigen::Index>(columns - 1);
  LogisticRegressionData data;
  data.sigma0_sq = sigma0_sq;
  data.x.resize(n, p + 1);
  data.y.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < p; ++j) data.x(i, j) = rows[i][j];
    data.y[i] = labels[i];
  }
  if (standardize) {
    for (Eigen::Index j = 0; j < p; ++j) {
      auto col = data.x.col(j);
      const double mean = col.mean();
      col.array() -= mean;
      const double sd = std::sqrt(col.squaredNorm() / static_cast<double>(n));
      // Constant columns stay centred at zero.
      if (sd > 0.0) col /= sd;
    }
  }
  data.x.col(p).setOnes();
  data.validate();
  return data;
}

LogisticRegressionData synth_regression_data(Eigen::Index n, const Vector& true_theta,
                                             std::uint64_t seed, double sigma0_sq) {
  if (n < 1 || true_theta.size() < 1) throw std::invalid_argument("synth_regression_data: need n, d >= 1");
  Philox rng(seed, 0x73796e7468ull);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  LogisticRegressionData data;
  data.sigma0_sq = sigma0_sq;
  data.x = Matrix(n, true_theta.size());
  data.y = Vector(n);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < true_theta.size(); ++j) data.x(i, j) = normal(rng);
    const double p = 1.0 / (1.0 + std::exp(-data.x.row(i).dot(true_theta)));
    data.y[i] = unif(rng) < p ? 1.0 : 0.0;
  }
  return data;
}

}  // namespace wgd
