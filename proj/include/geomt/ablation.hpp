#pragma once

// Ablation grid: named cells, each a list of "section.key = value" deltas
// applied to a base run config. Grid file syntax:
//
//   [cell noise30_f20000]
//   encoding.noise_radius_m = 30000
//   encoding.base_frequency = 20000
//
// Every cell shares the base seed. A failing cell is recorded and the grid
// moves on.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "geomt/config.hpp"
#include "geomt/data/text.hpp"
#include "geomt/run.hpp"

namespace geomt {

struct GridCell {
  std::string id;
  std::vector<std::pair<std::string, std::string>> deltas;

  friend bool operator==(const GridCell&, const GridCell&) = default;
};

inline std::vector<GridCell> parse_grid(const std::string& content, const std::string& source = "<grid>") {
  std::vector<GridCell> cells;
  std::istringstream in(content);
  std::string line;
  int lineno = 0;
  auto fail = [&](const std::string& msg) { throw ConfigError(source + ":" + std::to_string(lineno) + ": " + msg); };
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = text::trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']' || line.rfind("[cell ", 0) != 0) fail("expected [cell <id>]");
      const std::string id = text::trim(line.substr(6, line.size() - 7));
      if (id.empty()) fail("empty cell id");
      for (const auto& c : cells) {
        if (c.id == id) fail("duplicate cell id " + id);
      }
      cells.push_back({id, {}});
      continue;
    }
    if (cells.empty()) fail("delta before any [cell] header");
    const auto eq = line.find('=');
    if (eq == std::string::npos) fail("expected section.key = value");
    const std::string key = text::trim(line.substr(0, eq));
    const std::string value = text::trim(line.substr(eq + 1));
    RunConfig probe;
    try {
      apply_override(probe, key, value, source + ":" + std::to_string(lineno));
    } catch (const ConfigError& e) {
      // Only unknown keys are fatal here; values are checked per cell.
      if (std::string(e.what()).find("unknown") != std::string::npos) throw;
    }
    cells.back().deltas.emplace_back(key, value);
  }
  return cells;
}

inline std::vector<GridCell> read_grid(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read grid file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_grid(ss.str(), path.string());
}

inline std::string format_grid(const std::vector<GridCell>& cells) {
  std::ostringstream out;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (i) out << '\n';
    out << "[cell " << cells[i].id << "]\n";
    for (const auto& [k, v] : cells[i].deltas) out << k << " = " << v << '\n';
  }
  return out.str();
}

/// The fifteen cells covering noise x frequency, feature source, time
/// variants and component rows.
inline std::vector<GridCell> standard_grid() {
  std::vector<GridCell> cells;
  for (const char* noise : {"0", "30000", "50000"}) {
    for (const char* freq : {"10000", "20000"}) {
      cells.push_back({std::string("noise") + (noise[0] == '0' ? "0" : std::string(noise).substr(0, 2)) + "km_f" + freq,
                       {{"geo_head.feature_source", "decoder"},
                        {"encoding.noise_radius_m", noise},
                        {"encoding.base_frequency", freq}}});
    }
  }
  cells.push_back({"features_encoder", {{"geo_head.feature_source", "encoder"}}});
  cells.push_back({"features_decoder", {{"geo_head.feature_source", "decoder"}}});
  cells.push_back({"time_none", {{"train.time_mt", "false"}}});
  cells.push_back({"time_both",
                   {{"train.time_mt", "true"}, {"time_head.use_month", "true"}, {"time_head.use_hour", "true"},
                    {"time_head.noise", "true"}}});
  cells.push_back({"time_month_noise",
                   {{"train.time_mt", "true"}, {"time_head.use_month", "true"}, {"time_head.use_hour", "false"},
                    {"time_head.noise", "true"}}});
  cells.push_back({"baseline", {{"train.geo_mt", "false"}, {"train.dcs", "false"}}});
  cells.push_back({"geomt", {{"train.geo_mt", "true"}, {"train.dcs", "false"}}});
  cells.push_back({"dcs", {{"train.geo_mt", "false"}, {"train.dcs", "true"}}});
  cells.push_back({"full", {{"train.geo_mt", "true"}, {"train.dcs", "true"}}});
  return cells;
}

struct CellResult {
  std::string id;
  double miou = std::nan("");  // target mIoU; NaN without held-out labels
  double val_miou = std::nan("");
  std::size_t params = 0;
  int epochs_run = 0;
  std::string status = "ok";
};

inline RunConfig apply_cell(RunConfig base, const GridCell& cell) {
  for (const auto& [k, v] : cell.deltas) apply_override(base, k, v, "cell " + cell.id);
  return base;
}

inline void write_results_csv(std::ostream& out, const std::vector<CellResult>& rows) {
  out << "cell_id,miou,val_miou,params,epochs_run,status\n";
  for (const auto& r : rows) {
    out << r.id << ',' << (std::isnan(r.miou) ? std::string() : text::format_double(r.miou)) << ','
        << (std::isnan(r.val_miou) ? std::string() : text::format_double(r.val_miou)) << ',' << r.params << ','
        << r.epochs_run << ',';
    std::string s = r.status;
    for (auto& ch : s) {
      if (ch == ',' || ch == '\n') ch = ';';
    }
    out << s << '\n';
  }
}

/// Runs every cell on the same data. With `out_dir`, each cell's outputs go
/// to <out_dir>/<cell id>/ and results.csv is rewritten after every cell.
inline std::vector<CellResult> ablate(const std::vector<GridCell>& cells, const RunConfig& base,
                                      const std::optional<std::filesystem::path>& out_dir,
                                      const std::function<void(const CellResult&)>& on_cell = {}) {
  TargetLabels held_out;
  const RunData data = resolve_run_data(base, &held_out);
  std::vector<CellResult> rows;
  for (const auto& cell : cells) {
    CellResult row;
    row.id = cell.id;
    try {
      const RunConfig cfg = apply_cell(base, cell);
      std::optional<std::filesystem::path> cell_dir;
      if (out_dir) cell_dir = *out_dir / cell.id;
      auto outcome = train_run<float>(cfg, data, cell_dir);
      row.params = outcome.params;
      row.epochs_run = outcome.fit.epochs_run;
      row.val_miou = outcome.fit.best_val_miou;
      if (!held_out.labels.empty()) {
        row.miou = evaluate_checkpoint(outcome.fit.best, std::span<const Patch>(data.target),
                                       std::span<const LabelMap>(held_out.labels), data.gsd_m)
                       .miou;
      }
    } catch (const std::exception& e) {
      row.status = std::string("failed: ") + e.what();
    }
    rows.push_back(row);
    if (on_cell) on_cell(row);
    if (out_dir) {
      std::filesystem::create_directories(*out_dir);
      std::ofstream csv(*out_dir / "results.csv", std::ios::trunc);
      write_results_csv(csv, rows);
    }
  }
  return rows;
}

}  // namespace geomt
