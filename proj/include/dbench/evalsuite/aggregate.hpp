#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "dbench/core/error.hpp"
#include "json.hpp"

namespace dbench::evalsuite {

using nlohmann::json;

// Coordinates of one grid cell.
struct CellCoords {
  std::string method;
  std::string dataset;
  int ipc = 0;
  std::string eval_arch;
  std::string label_mode;
  std::string loss;
  double zeta = 0;
  int batch_size = 0;

  bool operator==(const CellCoords&) const = default;
  // Everything except the method: the row group whose methods compete.
  json group_key() const {
    return {{"dataset", dataset}, {"ipc", ipc}, {"eval_arch", eval_arch}, {"label_mode", label_mode},
            {"loss", loss},       {"zeta", zeta}, {"batch_size", batch_size}};
  }
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(CellCoords, method, dataset, ipc, eval_arch, label_mode, loss, zeta,
                                                batch_size)

struct CellResult {
  CellCoords coords;
  std::string cell_id;
  std::string config_fingerprint;
  std::vector<std::uint64_t> seeds;
  std::vector<double> accuracies;  // final test accuracy per seed
  double mean = 0;
  std::optional<double> stdev;  // absent with fewer than two seeds
  double synthesis_seconds = -1;  // < 0: unknown
  double training_seconds = 0;
  bool failed = false;
  std::string error;
  std::vector<std::vector<std::optional<double>>> trajectories;  // per seed, per epoch test accuracy
};

inline void to_json(json& j, const CellResult& c) {
  json traj = json::array();
  for (const auto& t : c.trajectories) {
    json row = json::array();
    for (const auto& v : t) row.push_back(v ? json(*v) : json(nullptr));
    traj.push_back(row);
  }
  j = {{"coords", c.coords},
       {"cell_id", c.cell_id},
       {"config_fingerprint", c.config_fingerprint},
       {"seeds", c.seeds},
       {"accuracies", c.accuracies},
       {"mean", c.mean},
       {"std", c.stdev ? json(*c.stdev) : json(nullptr)},
       {"synthesis_seconds", c.synthesis_seconds},
       {"training_seconds", c.training_seconds},
       {"failed", c.failed},
       {"error", c.error},
       {"trajectories", traj}};
}

inline void from_json(const json& j, CellResult& c) {
  c.coords = j.at("coords").get<CellCoords>();
  c.cell_id = j.value("cell_id", "");
  c.config_fingerprint = j.value("config_fingerprint", "");
  c.seeds = j.value("seeds", std::vector<std::uint64_t>{});
  c.accuracies = j.at("accuracies").get<std::vector<double>>();
  c.mean = j.at("mean").get<double>();
  c.stdev = j.contains("std") && !j["std"].is_null() ? std::optional(j["std"].get<double>()) : std::nullopt;
  c.synthesis_seconds = j.value("synthesis_seconds", -1.0);
  c.training_seconds = j.value("training_seconds", 0.0);
  c.failed = j.value("failed", false);
  c.error = j.value("error", "");
  c.trajectories.clear();
  if (j.contains("trajectories"))
    for (const auto& row : j["trajectories"]) {
      std::vector<std::optional<double>> t;
      for (const auto& v : row) t.push_back(v.is_null() ? std::nullopt : std::optional(v.get<double>()));
      c.trajectories.push_back(std::move(t));
    }
}

struct MeanStd {
  double mean = 0;
  std::optional<double> stdev;  // sample standard deviation, n >= 2
};

inline MeanStd mean_std(const std::vector<double>& xs) {
  require(!xs.empty(), ErrorKind::invariant, "aggregate: no accuracies");
  MeanStd out;
  for (double x : xs) out.mean += x;
  out.mean /= double(xs.size());
  if (xs.size() >= 2) {
    double ss = 0;
    for (double x : xs) ss += (x - out.mean) * (x - out.mean);
    out.stdev = std::sqrt(ss / double(xs.size() - 1));
  }
  return out;
}

inline void finalize_cell(CellResult& c) {
  if (c.accuracies.empty()) return;
  const auto ms = mean_std(c.accuracies);
  c.mean = ms.mean;
  c.stdev = ms.stdev;
}

struct TableRow {
  CellCoords coords;
  std::string config_fingerprint;
  double mean = 0;
  std::optional<double> stdev;
  int seeds = 0;
  bool best = false;
  bool second = false;
};

// One row per successful cell with best / second-best flags inside each
// row group. Equal means share a flag; rows come out ordered by group, then
// mean (descending), then method id, whatever the input order.
inline std::vector<TableRow> aggregate(const std::vector<CellResult>& cells) {
  require(!cells.empty(), ErrorKind::invariant, "aggregate: empty input");
  std::map<std::string, std::vector<TableRow>> groups;
  for (const auto& c : cells) {
    if (c.failed || c.accuracies.empty()) continue;
    const auto ms = mean_std(c.accuracies);
    groups[c.coords.group_key().dump()].push_back(
        {c.coords, c.config_fingerprint, ms.mean, ms.stdev, int(c.accuracies.size()), false, false});
  }
  std::vector<TableRow> out;
  for (auto& [key, rows] : groups) {
    std::sort(rows.begin(), rows.end(), [](const TableRow& a, const TableRow& b) {
      if (a.mean != b.mean) return a.mean > b.mean;
      if (a.coords.method != b.coords.method) return a.coords.method < b.coords.method;
      return a.config_fingerprint < b.config_fingerprint;
    });
    const double top = rows.front().mean;
    std::optional<double> next;
    for (const auto& r : rows)
      if (r.mean < top) {
        next = r.mean;
        break;
      }
    for (auto& r : rows) {
      r.best = r.mean == top;
      r.second = next && r.mean == *next;
    }
    out.insert(out.end(), rows.begin(), rows.end());
  }
  return out;
}

// ---- rectification deltas -------------------------------------------------

struct ReportedNumber {
  std::string method;
  std::string dataset;
  int ipc = 0;
  double accuracy = 0;
  std::string source;  // free text, e.g. the citing table
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(ReportedNumber, method, dataset, ipc, accuracy, source)

struct Delta {
  double value = 0;  // re-evaluated - reported, rounded to `decimals`
  double raw = 0;    // unrounded difference
  std::string arrow;  // "↑", "↓" or "" for zero
  std::string text() const {
    char buf[64];
    std::snprintf(buf, sizeof buf, "(%.1f%s%s)", std::fabs(value), arrow.empty() ? "" : " ", arrow.c_str());
    return buf;
  }
};

// Difference at the precision of the printed inputs (one decimal by default).
inline Delta rectification_delta(const ReportedNumber& reported, const CellResult& reevaluated, int decimals = 1) {
  require(reported.method == reevaluated.coords.method && reported.dataset == reevaluated.coords.dataset &&
              reported.ipc == reevaluated.coords.ipc,
          ErrorKind::invariant,
          "rectification_delta: reported (" + reported.method + ", " + reported.dataset + ", ipc " +
              std::to_string(reported.ipc) + ") vs re-evaluated (" + reevaluated.coords.method + ", " +
              reevaluated.coords.dataset + ", ipc " + std::to_string(reevaluated.coords.ipc) + ")");
  require(!reevaluated.failed && !reevaluated.accuracies.empty(), ErrorKind::invariant,
          "rectification_delta: re-evaluated cell has no result");
  Delta d;
  d.raw = reevaluated.mean - reported.accuracy;
  const double scale = std::pow(10.0, decimals);
  d.value = std::round(d.raw * scale) / scale;
  if (d.value == 0) d.value = 0;  // no negative zero
  d.arrow = d.value > 0 ? "↑" : d.value < 0 ? "↓" : "";
  return d;
}

// Reported baselines from a user-supplied JSON list of
// {method, dataset, ipc, accuracy[, source]}.
inline std::vector<ReportedNumber> ingest_reported(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(bool(in), ErrorKind::missing_input, "reported numbers file not found: " + path.string());
  try {
    const json j = json::parse(in);
    const json& list = j.is_object() && j.contains("reported") ? j["reported"] : j;
    require(list.is_array(), ErrorKind::config, "reported numbers: expected a list in " + path.string());
    return list.get<std::vector<ReportedNumber>>();
  } catch (const json::exception& e) {
    fail(ErrorKind::config, "reported numbers: " + path.string() + ": " + e.what());
  }
}

// ---- efficiency -----------------------------------------------------------

struct EfficiencyPoint {
  std::string method;
  double seconds = 0;
  double accuracy = 0;
  bool dominated = false;
};

// A point is dominated iff another point is strictly faster and strictly
// more accurate.
inline void mark_dominated(std::vector<EfficiencyPoint>& pts) {
  for (auto& p : pts) {
    p.dominated = false;
    for (const auto& q : pts)
      if (q.seconds < p.seconds && q.accuracy > p.accuracy) {
        p.dominated = true;
        break;
      }
  }
}

// One point per method: total synthesis seconds over its distinct distilled
// sets and the mean of its cell means.
inline std::vector<EfficiencyPoint> efficiency_report(const std::vector<CellResult>& cells) {
  std::map<std::string, std::pair<double, std::vector<double>>> by_method;
  std::map<std::string, std::map<std::string, double>> synth_seen;  // method -> set key -> seconds
  for (const auto& c : cells) {
    if (c.failed || c.accuracies.empty()) continue;
    require(c.synthesis_seconds >= 0, ErrorKind::missing_input,
            "efficiency_report: cell " + c.coords.method + "/ipc " + std::to_string(c.coords.ipc) +
                " has no synthesis timing");
    synth_seen[c.coords.method][c.coords.dataset + "/" + std::to_string(c.coords.ipc)] = c.synthesis_seconds;
    by_method[c.coords.method].second.push_back(c.mean);
  }
  require(!by_method.empty(), ErrorKind::invariant, "efficiency_report: no successful cells");
  std::vector<EfficiencyPoint> out;
  for (auto& [method, v] : by_method) {
    double secs = 0;
    for (const auto& [k, s] : synth_seen[method]) secs += s;
    double acc = 0;
    for (double a : v.second) acc += a;
    out.push_back({method, secs, acc / double(v.second.size()), false});
  }
  mark_dominated(out);
  return out;
}

}  // namespace dbench::evalsuite
