#include "wgd/csv_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace wgd::csv {
namespace {

std::ofstream open_out(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  return out;
}

void finish(std::ofstream& out, const std::filesystem::path& path) {
  out.flush();
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

}  // namespace

std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void write_table(const std::filesystem::path& path, const std::vector<std::string>& header,
                 const std::vector<std::vector<double>>& rows) {
  auto out = open_out(path);
  for (std::size_t j = 0; j < header.size(); ++j) out << (j ? "," : "") << header[j];
  out << '\n';
  for (const auto& row : rows) {
    if (row.size() != header.size()) throw std::invalid_argument("write_table: row width differs from header");
    for (std::size_t j = 0; j < row.size(); ++j) out << (j ? "," : "") << format_number(row[j]);
    out << '\n';
  }
  finish(out, path);
}

void write_particles(const std::filesystem::path& path, const RowMatrix& cloud) {
  auto out = open_out(path);
  for (Eigen::Index j = 0; j < cloud.cols(); ++j) out << (j ? "," : "") << 'x' << (j + 1);
  out << '\n';
  std::string line;
  for (Eigen::Index i = 0; i < cloud.rows(); ++i) {
    line.clear();
    for (Eigen::Index j = 0; j < cloud.cols(); ++j) {
      if (j) line += ',';
      line += format_number(cloud(i, j));
    }
    line += '\n';
    out << line;
  }
  finish(out, path);
}

RowMatrix read_particles(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error(path.string() + ": empty file");
  const auto d = static_cast<Eigen::Index>(std::count(line.begin(), line.end(), ',') + 1);
  std::vector<double> values;
  long lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    Eigen::Index count = 0;
    while (std::getline(ss, cell, ',')) {
      try {
        values.push_back(std::stod(cell));
      } catch (const std::exception&) {
        throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": not a number: " + cell);
      }
      ++count;
    }
    if (count != d) throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": wrong field count");
  }
  const auto n = static_cast<Eigen::Index>(values.size()) / d;
  return Eigen::Map<RowMatrix>(values.data(), n, d);
}

void write_trace(const std::filesystem::path& path, const RunTrace& trace, bool timing) {
  std::vector<std::string> header = {"t", "eta", "anneal", "err", "sm_loss", "kl", "w2"};
  if (timing) header.push_back("elapsed_ms");
  std::vector<std::vector<double>> rows;
  rows.reserve(trace.records.size());
  for (const auto& r : trace.records) {
    std::vector<double> row = {static_cast<double>(r.t), r.eta, r.anneal, r.err, r.sm_loss, r.kl, r.w2};
    if (timing) row.push_back(r.elapsed_ms);
    rows.push_back(std::move(row));
  }
  write_table(path, header, rows);
}

void write_metrics(const std::filesystem::path& path,
                   const std::vector<std::pair<std::string, double>>& metrics) {
  auto out = open_out(path);
  out << "metric,value\n";
  for (const auto& [k, v] : metrics) out << k << ',' << format_number(v) << '\n';
  finish(out, path);
}

void write_kde(const std::filesystem::path& path, const KdeTable& table) {
  std::vector<std::vector<double>> rows;
  for (std::size_t k = 0; k < table.grid.size(); ++k) rows.push_back({table.grid[k], table.density[k]});
  write_table(path, {"grid_x", "density"}, rows);
}

void write_modes(const std::filesystem::path& path, const ModeReport& report) {
  std::vector<std::vector<double>> rows;
  for (std::size_t k = 0; k < report.fractions.size(); ++k)
    rows.push_back({static_cast<double>(k), report.fractions[k], report.displacements[k]});
  write_table(path, {"mode_index", "fraction", "displacement"}, rows);
}

void write_elbo(const std::filesystem::path& path, const std::vector<std::pair<int, double>>& rows) {
  std::vector<std::vector<double>> table;
  for (const auto& [s, e] : rows) table.push_back({static_cast<double>(s), e});
  write_table(path, {"step", "elbo"}, table);
}

}  // namespace wgd::csv
