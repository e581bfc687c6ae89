#pragma once

// Experiment grids over (method x dataset x ipc x eval arch x protocol
// variants) with a content-addressed, resumable result store:
//
//   store/teachers/<key>/   squeezed teachers
//   store/distilled/<key>/  synthesized sets (datahub manifest format)
//   store/runs/<fp>.json    one record per (cell, seed), written atomically
//   store/failed/<fp>.json  last failure of a run
//   store/logs/<fp>.log     per-epoch training log

#include <atomic>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "dbench/core/error.hpp"
#include "dbench/core/hash.hpp"
#include "dbench/core/rng.hpp"
#include "dbench/datahub/dataset.hpp"
#include "dbench/datahub/distilled.hpp"
#include "dbench/evalsuite/aggregate.hpp"
#include "dbench/posteval/train.hpp"
#include "dbench/synth/random_sample.hpp"
#include "dbench/synth/recover.hpp"
#include "dbench/synth/select.hpp"
#include "dbench/teachers/teacher.hpp"
#include "json.hpp"

namespace dbench::evalsuite {

namespace fs = std::filesystem;

struct TeacherSpec {
  nn::ModelSpec model;  // resolution / num_classes are taken from the dataset
  teachers::Recipe recipe;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(TeacherSpec, model, recipe)

struct MethodSpec {
  std::string id;
  std::string kind;  // random | select | recover | imported
  json config = json::object();
  std::string path;  // imported sets: manifest directory (may contain {dataset} and {ipc})
};

inline void to_json(json& j, const MethodSpec& m) {
  j = {{"id", m.id}, {"kind", m.kind}, {"config", m.config}};
  if (!m.path.empty()) j["path"] = m.path;
}

inline void from_json(const json& j, MethodSpec& m) {
  if (j.is_string()) {
    m.id = m.kind = j.get<std::string>();
    return;
  }
  m.id = j.at("id").get<std::string>();
  m.kind = j.value("kind", m.id);
  m.config = j.value("config", json::object());
  m.path = j.value("path", "");
}

struct GridLimits {
  int train_per_class = 0;  // 0: full split
  int test_per_class = 0;
  int max_runs = 0;  // 0: unlimited; stop after this many executed runs
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(GridLimits, train_per_class, test_per_class, max_runs)

struct GridSpec {
  std::string name = "grid";
  std::vector<std::string> datasets = {"synth10"};
  std::string data_root;
  TeacherSpec teacher;
  std::vector<TeacherSpec> hybrid_teachers;  // extra pool members for label_mode = hybrid
  std::vector<MethodSpec> methods;
  std::vector<int> ipcs = {10};
  std::vector<std::string> eval_archs = {"convnet-small"};
  std::vector<std::string> label_modes = {"soft"};
  std::vector<std::string> loss_modes = {"kl"};
  std::vector<double> zetas = {0};       // 0: protocol default
  std::vector<int> batch_sizes = {0};   // 0: protocol default
  std::vector<std::uint64_t> seeds = {0, 1, 2};
  posteval::PostEvalConfig posteval;
  GridLimits limits;

  void validate() const {
    require(!datasets.empty() && !methods.empty() && !ipcs.empty() && !eval_archs.empty() && !label_modes.empty() &&
                !loss_modes.empty() && !zetas.empty() && !batch_sizes.empty(),
            ErrorKind::config, "grid: every axis needs at least one value");
    require(!seeds.empty(), ErrorKind::config, "grid: seeds must not be empty");
    for (const auto& d : datasets) datahub::dataset_spec(d);
    for (const auto& a : eval_archs) nn::arch_info(a);
    nn::arch_info(teacher.model.arch);
    teacher.recipe.validate();
    for (int ipc : ipcs) require(ipc >= 1, ErrorKind::config, "grid: ipcs must be >= 1");
    std::set<std::string> ids;
    for (const auto& m : methods) {
      require(!m.id.empty(), ErrorKind::config, "grid: method without id");
      require(ids.insert(m.id).second, ErrorKind::config, "grid: duplicate method id '" + m.id + "'");
      require(m.kind == "random" || m.kind == "select" || m.kind == "recover" || m.kind == "imported",
              ErrorKind::config, "grid: method '" + m.id + "' has unknown kind '" + m.kind + "'");
      require(m.kind != "imported" || !m.path.empty(), ErrorKind::config,
              "grid: imported method '" + m.id + "' needs a path");
    }
    for (const auto& lm : label_modes) {
      auto c = posteval;
      c.label_mode = lm;
      if (lm == "hard") c.loss = "hard_ce";
      c.validate();
    }
    for (const auto& l : loss_modes)
      require(posteval::loss_registry().count(l) == 1, ErrorKind::config, "grid: unknown loss mode '" + l + "'");
    posteval.validate();
  }
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(GridSpec, name, datasets, data_root, teacher, hybrid_teachers, methods,
                                                ipcs, eval_archs, label_modes, loss_modes, zetas, batch_sizes, seeds,
                                                posteval, limits)

// One fully determined cell of the grid.
struct CellPlan {
  CellCoords coords;
  const MethodSpec* method = nullptr;
  posteval::PostEvalConfig config;  // resolved
  nn::ModelSpec eval_arch;
  std::string synthesis_key;
  std::string cell_id;
  std::vector<std::string> run_fps;  // per seed
};

struct GridStats {
  int planned_runs = 0;
  int executed = 0;
  int skipped = 0;  // already complete in the store
  int failed = 0;
  bool cancelled = false;
};

struct GridOptions {
  std::vector<std::size_t> order;        // optional permutation of cell execution order
  const std::atomic<bool>* cancel = nullptr;
  bool dump_features = false;
  bool verbose = false;
  std::function<void(const std::string&)> progress;
};

struct GridOutcome {
  std::vector<CellResult> cells;  // in plan order
  GridStats stats;
};

namespace detail {

inline std::string key_of(const json& j) { return sha256_hex(j.dump()); }

inline json teacher_identity(const TeacherSpec& t, const datahub::DatasetSpec& d, const GridLimits& lim) {
  return {{"model", t.model}, {"recipe", t.recipe}, {"dataset", d.name}, {"train_per_class", lim.train_per_class}};
}

inline nn::ModelSpec fit_to_dataset(nn::ModelSpec m, const datahub::DatasetSpec& d) {
  m.resolution = d.resolution;
  m.num_classes = d.num_classes;
  m.channels = d.channels;
  return m;
}

inline std::string expand_path(std::string p, const std::string& dataset, int ipc) {
  auto sub = [&](const std::string& k, const std::string& v) {
    for (std::size_t pos; (pos = p.find(k)) != std::string::npos;) p.replace(pos, k.size(), v);
  };
  sub("{dataset}", dataset);
  sub("{ipc}", std::to_string(ipc));
  return p;
}

inline std::optional<json> read_json(const fs::path& p) {
  std::ifstream in(p);
  if (!in) return std::nullopt;
  try {
    return json::parse(in);
  } catch (const json::exception&) {
    return std::nullopt;
  }
}

}  // namespace detail

// Expands the cartesian product into cells (deduplicating cells that resolve
// to the same protocol, e.g. hard labels under several loss modes).
inline std::vector<CellPlan> plan_grid(const GridSpec& spec) {
  spec.validate();
  std::vector<CellPlan> out;
  std::set<std::string> seen;
  for (const auto& dname : spec.datasets) {
    const auto& dspec = datahub::dataset_spec(dname);
    const auto tmodel = detail::fit_to_dataset(spec.teacher.model, dspec);
    TeacherSpec tfit{tmodel, spec.teacher.recipe};
    const auto tkey = detail::key_of(detail::teacher_identity(tfit, dspec, spec.limits));
    for (const auto& m : spec.methods)
      for (int ipc : spec.ipcs) {
        json sid = {{"method", m}, {"dataset", dname}, {"ipc", ipc}, {"teacher", tkey},
                    {"train_per_class", spec.limits.train_per_class}};
        if (m.kind == "imported") sid["path"] = detail::expand_path(m.path, dname, ipc);
        const auto skey = detail::key_of(sid);
        for (const auto& arch : spec.eval_archs)
          for (const auto& lm : spec.label_modes)
            for (const auto& loss : spec.loss_modes)
              for (double zeta : spec.zetas)
                for (int bs : spec.batch_sizes) {
                  CellPlan cp;
                  cp.method = &m;
                  nn::ModelSpec ea;
                  ea.arch = arch;
                  cp.eval_arch = detail::fit_to_dataset(ea, dspec);
                  auto cfg = spec.posteval;
                  cfg.label_mode = lm;
                  cfg.loss = loss;
                  cfg.zeta = zeta;
                  cfg.batch_size = bs;
                  cfg.seeds = spec.seeds;
                  cp.config = cfg.resolve(arch != tmodel.arch);
                  cp.coords = {m.id, dname, ipc, arch, lm, cp.config.loss, cp.config.zeta, cp.config.batch_size};
                  cp.synthesis_key = skey;
                  cp.cell_id = detail::key_of({{"synthesis", skey},
                                               {"config", posteval::config_fingerprint(cp.config)},
                                               {"eval_arch", cp.eval_arch},
                                               {"test_per_class", spec.limits.test_per_class}});
                  if (!seen.insert(cp.cell_id).second) continue;
                  for (auto seed : spec.seeds)
                    cp.run_fps.push_back(detail::key_of({{"cell", cp.cell_id}, {"seed", seed}}));
                  out.push_back(std::move(cp));
                }
      }
  }
  return out;
}

// Executes every incomplete run of the grid. Failures are recorded per run
// and never abort the grid.
class GridRunner {
 public:
  GridRunner(GridSpec spec, fs::path store) : spec_(std::move(spec)), store_(std::move(store)) {}

  GridOutcome run(const GridOptions& opt = {}) {
    const auto plans = plan_grid(spec_);
    for (const char* sub : {"runs", "failed", "logs", "teachers", "distilled", "features"})
      datahub::detail::ensure_dir(store_ / sub);
    datahub::detail::write_text_atomic(store_ / "grid.json", json(spec_).dump(2) + "\n");

    std::vector<std::size_t> order = opt.order;
    if (order.empty()) {
      order.resize(plans.size());
      for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    }
    require(order.size() == plans.size(), ErrorKind::config, "grid: execution order is not a permutation of the cells");

    GridOutcome outcome;
    outcome.cells.resize(plans.size());
    for (std::size_t k : order) {
      const auto& cp = plans.at(k);
      outcome.cells[k] = run_cell(cp, opt, outcome.stats);
      if (outcome.stats.cancelled) break;
    }
    return outcome;
  }

 private:
  fs::path run_path(const std::string& fp) const { return store_ / "runs" / (fp + ".json"); }

  CellResult run_cell(const CellPlan& cp, const GridOptions& opt, GridStats& stats) {
    CellResult cell;
    cell.coords = cp.coords;
    cell.cell_id = cp.cell_id;
    cell.config_fingerprint = posteval::config_fingerprint(cp.config);
    stats.planned_runs += int(cp.run_fps.size());

    std::vector<std::optional<posteval::RunResult>> results(cp.run_fps.size());
    bool all_done = true;
    for (std::size_t s = 0; s < cp.run_fps.size(); ++s) {
      if (const auto j = detail::read_json(run_path(cp.run_fps[s]))) {
        try {
          results[s] = j->at("result").get<posteval::RunResult>();
          cell.synthesis_seconds = j->value("synthesis_seconds", -1.0);
          ++stats.skipped;
          continue;
        } catch (const json::exception&) {
        }
      }
      all_done = false;
    }

    if (!all_done) {
      try {
        const auto& ds = distilled_for(cp);
        cell.synthesis_seconds = ds.provenance.wall_clock_seconds;
        for (std::size_t s = 0; s < cp.run_fps.size(); ++s) {
          if (results[s]) continue;
          if ((opt.cancel && opt.cancel->load()) ||
              (spec_.limits.max_runs > 0 && stats.executed >= spec_.limits.max_runs)) {
            stats.cancelled = true;
            break;
          }
          const auto seed = spec_.seeds[s];
          try {
            if (opt.progress)
              opt.progress("run " + cp.coords.method + " ipc=" + std::to_string(cp.coords.ipc) + " arch=" +
                           cp.coords.eval_arch + " labels=" + cp.coords.label_mode + " seed=" + std::to_string(seed));
            results[s] = execute_run(cp, ds, seed, cp.run_fps[s], opt);
            ++stats.executed;
            fs::remove(store_ / "failed" / (cp.run_fps[s] + ".json"));
          } catch (const std::exception& e) {
            ++stats.failed;
            record_failure(cp, seed, cp.run_fps[s], e);
            cell.failed = true;
            if (cell.error.empty()) cell.error = e.what();
          }
        }
      } catch (const std::exception& e) {
        // Synthesis or data failure: the whole cell fails.
        for (std::size_t s = 0; s < cp.run_fps.size(); ++s)
          if (!results[s]) {
            ++stats.failed;
            record_failure(cp, spec_.seeds[s], cp.run_fps[s], e);
          }
        cell.failed = true;
        cell.error = e.what();
      }
    }

    for (std::size_t s = 0; s < results.size(); ++s)
      if (results[s]) {
        cell.seeds.push_back(spec_.seeds[s]);
        cell.accuracies.push_back(results[s]->final_test_accuracy);
        cell.training_seconds += results[s]->wall_clock_seconds;
        cell.trajectories.push_back(results[s]->test_accuracy);
      }
    if (cell.accuracies.size() < results.size() && !cell.failed && stats.cancelled) cell.error = "incomplete";
    finalize_cell(cell);
    return cell;
  }

  void record_failure(const CellPlan& cp, std::uint64_t seed, const std::string& fp, const std::exception& e) {
    json j = {{"coords", cp.coords}, {"seed", seed}, {"error", e.what()}};
    if (const auto* de = dynamic_cast<const Error*>(&e)) j["error_class"] = to_string(de->kind());
    datahub::detail::write_text_atomic(store_ / "failed" / (fp + ".json"), j.dump(2) + "\n");
    if (verbose_) std::fprintf(stderr, "[bench] run failed: %s\n", e.what());
  }

  posteval::RunResult execute_run(const CellPlan& cp, const datahub::DistilledDataset& ds, std::uint64_t seed,
                                  const std::string& fp, const GridOptions& opt) {
    auto& data = dataset(cp.coords.dataset);
    std::optional<teachers::TeacherPool> pool;
    if (cp.config.label_mode != "hard") {
      std::vector<teachers::TeacherHandle> members{teacher(cp.coords.dataset, spec_.teacher)};
      if (cp.config.label_mode == "hybrid")
        for (const auto& h : spec_.hybrid_teachers) members.push_back(teacher(cp.coords.dataset, h));
      pool.emplace(std::move(members));
    }
    posteval::TrainOptions to;
    to.log_path = store_ / "logs" / (fp + ".log");
    fs::remove(to.log_path);
    if (opt.dump_features) to.feature_dump = store_ / "features" / (fp + ".f32");
    to.verbose = opt.verbose;
    auto r = posteval::train_student(ds, pool ? &*pool : nullptr, cp.eval_arch, cp.config, data.test, seed, to);
    const json rec = {{"coords", cp.coords},
                      {"cell_id", cp.cell_id},
                      {"seed", seed},
                      {"synthesis_key", cp.synthesis_key},
                      {"synthesis_seconds", ds.provenance.wall_clock_seconds},
                      {"provenance", ds.provenance},
                      {"result", r}};
    datahub::detail::write_text_atomic(run_path(fp), rec.dump(2) + "\n");
    return r;
  }

  datahub::LoadedDataset& dataset(const std::string& name) {
    auto it = data_.find(name);
    if (it != data_.end()) return it->second;
    auto d = datahub::load_dataset(name, spec_.data_root);
    if (spec_.limits.train_per_class > 0)
      d.train = d.train.subset_per_class(d.spec.num_classes, spec_.limits.train_per_class);
    if (spec_.limits.test_per_class > 0)
      d.test = d.test.subset_per_class(d.spec.num_classes, spec_.limits.test_per_class);
    return data_.emplace(name, std::move(d)).first->second;
  }

  const teachers::TeacherHandle& teacher(const std::string& dname, const TeacherSpec& ts) {
    auto& data = dataset(dname);
    TeacherSpec fit{detail::fit_to_dataset(ts.model, data.spec), ts.recipe};
    const auto key = detail::key_of(detail::teacher_identity(fit, data.spec, spec_.limits));
    auto it = teachers_.find(key);
    if (it != teachers_.end()) return it->second;
    const fs::path dir = store_ / "teachers" / key;
    if (fs::exists(dir / "teacher.json")) return teachers_.emplace(key, teachers::load_teacher(dir)).first->second;
    if (verbose_) std::fprintf(stderr, "[bench] squeezing %s on %s\n", fit.model.arch.c_str(), dname.c_str());
    auto t = teachers::train_teacher(fit.model, data, fit.recipe, verbose_);
    teachers::save_teacher(t, dir);
    return teachers_.emplace(key, std::move(t)).first->second;
  }

  const datahub::DistilledDataset& distilled_for(const CellPlan& cp) {
    auto it = distilled_.find(cp.synthesis_key);
    if (it != distilled_.end()) return it->second;
    const fs::path dir = store_ / "distilled" / cp.synthesis_key;
    if (fs::exists(dir / "manifest.json"))
      return distilled_.emplace(cp.synthesis_key, datahub::import_distilled(dir)).first->second;

    const auto& m = *cp.method;
    auto& data = dataset(cp.coords.dataset);
    const int ipc = cp.coords.ipc;
    datahub::DistilledDataset ds;
    if (m.kind == "random") {
      ds = synth::random_sample(data.spec, data.train, ipc, m.config.value("seed", std::uint64_t(0)));
    } else if (m.kind == "select") {
      ds = synth::select_patches(teacher(cp.coords.dataset, spec_.teacher), data.spec, data.train,
                                 m.config.get<synth::SelectConfig>(), ipc);
    } else if (m.kind == "recover") {
      const auto cfg = m.config.get<synth::RecoverConfig>();
      ds = synth::recover_optimize(teacher(cp.coords.dataset, spec_.teacher), cfg,
                                   synth::balanced_labels(data.spec.num_classes, ipc), {&data.spec, &data.train})
               .dataset;
    } else {
      ds = datahub::import_distilled(detail::expand_path(m.path, cp.coords.dataset, ipc));
      require(ds.dataset == cp.coords.dataset, ErrorKind::config,
              "imported set is for " + ds.dataset + ", cell is " + cp.coords.dataset);
    }
    datahub::export_distilled(ds, dir);
    // Re-import so that fresh and resumed grids see identical bytes.
    return distilled_.emplace(cp.synthesis_key, datahub::import_distilled(dir)).first->second;
  }

 public:
  void set_verbose(bool v) { verbose_ = v; }

 private:
  GridSpec spec_;
  fs::path store_;
  bool verbose_ = false;
  std::map<std::string, datahub::LoadedDataset> data_;
  std::map<std::string, teachers::TeacherHandle> teachers_;
  std::map<std::string, datahub::DistilledDataset> distilled_;
};

inline GridOutcome run_grid(const GridSpec& spec, const fs::path& store, const GridOptions& opt = {}) {
  GridRunner runner(spec, store);
  runner.set_verbose(opt.verbose);
  return runner.run(opt);
}

// Every completed run record in a store, grouped back into cells.
inline std::vector<CellResult> load_store(const fs::path& store) {
  require(fs::is_directory(store / "runs"), ErrorKind::missing_input, "no result store at " + store.string());
  std::map<std::string, CellResult> cells;
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(store / "runs"))
    if (e.path().extension() == ".json") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  std::map<std::string, std::vector<std::pair<std::uint64_t, posteval::RunResult>>> runs;
  for (const auto& f : files) {
    const auto j = detail::read_json(f);
    require(j.has_value(), ErrorKind::integrity, "unreadable run record " + f.string());
    const auto id = j->at("cell_id").get<std::string>();
    auto& c = cells[id];
    c.coords = j->at("coords").get<CellCoords>();
    c.cell_id = id;
    c.synthesis_seconds = j->value("synthesis_seconds", -1.0);
    runs[id].emplace_back(j->at("seed").get<std::uint64_t>(), j->at("result").get<posteval::RunResult>());
  }
  std::vector<CellResult> out;
  for (auto& [id, c] : cells) {
    auto& rs = runs[id];
    std::sort(rs.begin(), rs.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    for (const auto& [seed, r] : rs) {
      c.seeds.push_back(seed);
      c.accuracies.push_back(r.final_test_accuracy);
      c.training_seconds += r.wall_clock_seconds;
      c.trajectories.push_back(r.test_accuracy);
      c.config_fingerprint = r.config_fingerprint;
    }
    finalize_cell(c);
    out.push_back(std::move(c));
  }
  return out;
}

}  // namespace dbench::evalsuite
