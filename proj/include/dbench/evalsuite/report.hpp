#pragma once

// Report emission: accuracy tables (csv / markdown / json), plot-ready
// trajectory and efficiency series.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "dbench/core/error.hpp"
#include "dbench/datahub/distilled.hpp"
#include "dbench/evalsuite/aggregate.hpp"

namespace dbench::evalsuite {

namespace fs = std::filesystem;

enum class ReportFormat { csv, markdown, json };

inline ReportFormat parse_format(const std::string& s) {
  if (s == "csv") return ReportFormat::csv;
  if (s == "markdown" || s == "md") return ReportFormat::markdown;
  if (s == "json") return ReportFormat::json;
  fail(ErrorKind::config, "report format must be csv, markdown or json (got '" + s + "')");
}

struct EmitOptions {
  bool force = false;  // tabulate mixed protocol fingerprints anyway
  int decimals = 1;
};

inline std::string fmt_num(double v, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, v);
  return buf;
}

inline std::string fmt_zeta(double z) {
  std::ostringstream s;
  s << z;
  return s.str();
}

// Refuses (config error) to put rows from different protocols side by side
// unless forced.
inline void check_comparable(const std::vector<TableRow>& rows, bool force) {
  std::set<std::string> fps;
  for (const auto& r : rows) fps.insert(r.config_fingerprint);
  if (fps.size() > 1 && !force)
    fail(ErrorKind::config, "report: table mixes " + std::to_string(fps.size()) +
                                " post-evaluation protocols (config fingerprints differ); rerun with --force to "
                                "tabulate them anyway");
}

inline std::string render_csv(const std::vector<TableRow>& rows, int d) {
  std::ostringstream s;
  s << "method,dataset,ipc,eval_arch,label_mode,loss,zeta,batch_size,seeds,mean,std,best,second,config_fingerprint\n";
  for (const auto& r : rows)
    s << r.coords.method << ',' << r.coords.dataset << ',' << r.coords.ipc << ',' << r.coords.eval_arch << ','
      << r.coords.label_mode << ',' << r.coords.loss << ',' << fmt_zeta(r.coords.zeta) << ',' << r.coords.batch_size
      << ',' << r.seeds << ',' << fmt_num(r.mean, d) << ',' << (r.stdev ? fmt_num(*r.stdev, d) : "") << ','
      << int(r.best) << ',' << int(r.second) << ',' << r.config_fingerprint << '\n';
  return s.str();
}

// Best in bold, second best underlined.
inline std::string render_markdown(const std::vector<TableRow>& rows, int d, bool show_fingerprint) {
  std::ostringstream s;
  s << "| Method | Dataset | IPC | Arch | Labels | Loss | ζ | BS | Acc (%) | ± |";
  if (show_fingerprint) s << " Protocol |";
  s << "\n|---|---|---|---|---|---|---|---|---|---|";
  if (show_fingerprint) s << "---|";
  s << "\n";
  for (const auto& r : rows) {
    std::string acc = fmt_num(r.mean, d);
    if (r.best) acc = "**" + acc + "**";
    else if (r.second) acc = "<u>" + acc + "</u>";
    s << "| " << r.coords.method << " | " << r.coords.dataset << " | " << r.coords.ipc << " | " << r.coords.eval_arch
      << " | " << r.coords.label_mode << " | " << r.coords.loss << " | " << fmt_zeta(r.coords.zeta) << " | "
      << r.coords.batch_size << " | " << acc << " | " << (r.stdev ? fmt_num(*r.stdev, d) : "-") << " |";
    if (show_fingerprint) s << ' ' << r.config_fingerprint.substr(0, 12) << " |";
    s << "\n";
  }
  return s.str();
}

inline std::string render_trajectories(const std::vector<CellResult>& cells) {
  std::ostringstream s;
  s << "cell_id,method,ipc,eval_arch,seed,epoch,test_accuracy\n";
  for (const auto& c : cells)
    for (std::size_t k = 0; k < c.trajectories.size(); ++k)
      for (std::size_t e = 0; e < c.trajectories[k].size(); ++e)
        if (c.trajectories[k][e])
          s << c.cell_id.substr(0, 16) << ',' << c.coords.method << ',' << c.coords.ipc << ',' << c.coords.eval_arch
            << ',' << (k < c.seeds.size() ? c.seeds[k] : k) << ',' << e + 1 << ',' << *c.trajectories[k][e] << '\n';
  return s.str();
}

inline std::string render_efficiency(const std::vector<EfficiencyPoint>& pts) {
  std::ostringstream s;
  s << "method,synthesis_seconds,mean_accuracy,dominated\n";
  for (const auto& p : pts) s << p.method << ',' << p.seconds << ',' << p.accuracy << ',' << int(p.dominated) << '\n';
  return s.str();
}

inline json render_json(const std::vector<TableRow>& rows) {
  json out = json::array();
  for (const auto& r : rows)
    out.push_back({{"coords", r.coords},
                   {"mean", r.mean},
                   {"std", r.stdev ? json(*r.stdev) : json(nullptr)},
                   {"seeds", r.seeds},
                   {"best", r.best},
                   {"second", r.second},
                   {"config_fingerprint", r.config_fingerprint}});
  return out;
}

// Writes the table in `format` plus trajectories.csv (and efficiency.csv
// when every cell carries synthesis timing). Returns the written paths.
inline std::vector<fs::path> emit_report(const std::vector<CellResult>& cells, ReportFormat format,
                                         const fs::path& dir, const EmitOptions& opt = {}) {
  const auto rows = aggregate(cells);
  check_comparable(rows, opt.force);
  std::set<std::string> fps;
  for (const auto& r : rows) fps.insert(r.config_fingerprint);

  datahub::detail::ensure_dir(dir);
  std::vector<fs::path> written;
  auto put = [&](const fs::path& p, const std::string& text) {
    datahub::detail::write_text_atomic(p, text);
    written.push_back(p);
  };
  switch (format) {
    case ReportFormat::csv: put(dir / "table.csv", render_csv(rows, opt.decimals)); break;
    case ReportFormat::markdown: put(dir / "table.md", render_markdown(rows, opt.decimals, fps.size() > 1)); break;
    case ReportFormat::json: put(dir / "table.json", render_json(rows).dump(2) + "\n"); break;
  }
  put(dir / "trajectories.csv", render_trajectories(cells));
  bool timed = true;
  for (const auto& c : cells)
    if (!c.failed && c.synthesis_seconds < 0) timed = false;
  if (timed) put(dir / "efficiency.csv", render_efficiency(efficiency_report(cells)));
  return written;
}

}  // namespace dbench::evalsuite
