#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "wgd/common.hpp"
#include "wgd/diagnostics.hpp"
#include "wgd/engine.hpp"

/// CSV artifacts. Numbers are written with 17 significant digits so that a
/// file round-trips exactly and identical runs give identical bytes.
namespace wgd::csv {

/// Header x1..xd, one row per particle.
void write_particles(const std::filesystem::path& path, const RowMatrix& cloud);
RowMatrix read_particles(const std::filesystem::path& path);

/// Header t,eta,anneal,err,sm_loss,kl,w2 and, with timing, elapsed_ms.
void write_trace(const std::filesystem::path& path, const RunTrace& trace, bool timing = false);

/// Header metric,value.
void write_metrics(const std::filesystem::path& path,
                   const std::vector<std::pair<std::string, double>>& metrics);

/// Header grid_x,density.
void write_kde(const std::filesystem::path& path, const KdeTable& table);

/// Header mode_index,fraction,displacement.
void write_modes(const std::filesystem::path& path, const ModeReport& report);

/// Header step,elbo.
void write_elbo(const std::filesystem::path& path, const std::vector<std::pair<int, double>>& rows);

/// Generic table writer; every row must have header.size() entries.
void write_table(const std::filesystem::path& path, const std::vector<std::string>& header,
                 const std::vector<std::vector<double>>& rows);

std::string format_number(double v);

}  // namespace wgd::csv
