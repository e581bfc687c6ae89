#pragma once

// Command-line front end. run_command() is the whole program; tools/dbench.cpp
// only forwards argv.
//
// Configuration is layered: built-in defaults, then every --config file in
// order, then --set key.path=value and dedicated flags. The resolved config is
// checked against the defaults' schema (unknown keys and wrong types are
// config errors naming the key) before any work starts, and written next to
// the outputs as resolved_config.json.

#include <atomic>
#include <csignal>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "dbench/core/error.hpp"
#include "dbench/datahub/dataset.hpp"
#include "dbench/datahub/distilled.hpp"
#include "dbench/evalsuite/aggregate.hpp"
#include "dbench/evalsuite/grid.hpp"
#include "dbench/evalsuite/report.hpp"
#include "dbench/posteval/train.hpp"
#include "dbench/relabel/cache.hpp"
#include "dbench/synth/random_sample.hpp"
#include "dbench/synth/recover.hpp"
#include "dbench/synth/select.hpp"
#include "dbench/teachers/teacher.hpp"
#include "json.hpp"

namespace dbench::cli {

namespace fs = std::filesystem;
using nlohmann::json;

inline constexpr const char* kArtifactEnv = "DBENCH_ARTIFACTS";
inline constexpr const char* kDataEnv = "DBENCH_DATA";

inline int exit_code(ErrorKind k) {
  switch (k) {
    case ErrorKind::config: return 2;
    case ErrorKind::missing_input: return 3;
    default: return 4;
  }
}

inline fs::path artifact_root() {
  const char* v = std::getenv(kArtifactEnv);
  return v && *v ? fs::path(v) : fs::path("artifacts");
}

inline std::string data_root(const std::string& configured) {
  if (!configured.empty()) return configured;
  const char* v = std::getenv(kDataEnv);
  return v && *v ? std::string(v) : std::string("data");
}

inline std::atomic<bool>& interrupted() {
  static std::atomic<bool> flag{false};
  return flag;
}

// ---- layered configuration -------------------------------------------------

struct Layers {
  std::vector<std::string> files;
  std::vector<std::string> sets;
  std::vector<std::pair<std::string, CLI::Option*>> flags;  // json pointer, option
  std::vector<std::pair<std::string, std::string*>> flag_values;
  // Subtrees whose content is free-form (method configs and the like).
  std::set<std::string> freeform;
};

// Every key in `given` must exist in `schema` with a compatible type.
inline void check_schema(const json& given, const json& schema, const std::string& path,
                         const std::set<std::string>& freeform) {
  if (freeform.count(path)) return;
  if (schema.is_object()) {
    require(given.is_object(), ErrorKind::config, "config key '" + path + "' must be an object");
    for (const auto& [k, v] : given.items()) {
      const std::string p = path + "/" + k;
      require(schema.contains(k), ErrorKind::config, "unknown config key '" + p + "'");
      check_schema(v, schema[k], p, freeform);
    }
    return;
  }
  auto kind = [](const json& j) {
    if (j.is_number()) return std::string("number");
    if (j.is_boolean()) return std::string("boolean");
    if (j.is_string()) return std::string("string");
    if (j.is_array()) return std::string("array");
    if (j.is_null()) return std::string("null");
    return std::string("object");
  };
  if (schema.is_null()) return;
  require(kind(given) == kind(schema), ErrorKind::config,
          "config key '" + path + "' must be a " + kind(schema) + ", got " + kind(given));
  if (schema.is_number_unsigned() || schema.is_number_integer())
    require(given.is_number_integer() || given.is_number_unsigned() ||
                (given.is_number_float() && given.get<double>() == std::floor(given.get<double>())),
            ErrorKind::config, "config key '" + path + "' must be an integer");
}

inline json parse_value(const std::string& text) {
  try {
    return json::parse(text);
  } catch (const json::exception&) {
    return text;
  }
}

inline json read_config_file(const std::string& file) {
  fs::path p = file;
  if (fs::is_directory(p)) p /= "config.json";
  std::ifstream in(p);
  require(bool(in), ErrorKind::missing_input, "config file not found: " + p.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    fail(ErrorKind::config, "config file " + p.string() + " does not parse: " + e.what());
  }
}

inline std::string dotted_to_pointer(const std::string& key) {
  std::string p = "/" + key;
  for (auto& ch : p)
    if (ch == '.') ch = '/';
  return p;
}

inline json resolve_layers(const json& defaults, const Layers& layers) {
  json cfg = defaults;
  for (const auto& f : layers.files) {
    json layer = read_config_file(f);
    if (layer.is_object()) layer.erase("_command");  // written by write_resolved
    check_schema(layer, defaults, "", layers.freeform);
    cfg.merge_patch(layer);
  }
  for (const auto& s : layers.sets) {
    const auto eq = s.find('=');
    require(eq != std::string::npos && eq > 0, ErrorKind::config, "--set expects key.path=value, got '" + s + "'");
    const std::string ptr = dotted_to_pointer(s.substr(0, eq));
    json patch = json::object();
    patch[json::json_pointer(ptr)] = parse_value(s.substr(eq + 1));
    check_schema(patch, defaults, "", layers.freeform);
    cfg[json::json_pointer(ptr)] = patch[json::json_pointer(ptr)];
  }
  for (std::size_t i = 0; i < layers.flags.size(); ++i) {
    const auto& [ptr, opt] = layers.flags[i];
    if (opt->count() == 0) continue;
    json patch = json::object();
    patch[json::json_pointer(ptr)] = parse_value(*layers.flag_values[i].second);
    // Flags given as bare strings stay strings when the schema says so.
    if (defaults.contains(json::json_pointer(ptr)) && defaults[json::json_pointer(ptr)].is_string())
      patch[json::json_pointer(ptr)] = *layers.flag_values[i].second;
    check_schema(patch, defaults, "", layers.freeform);
    cfg[json::json_pointer(ptr)] = patch[json::json_pointer(ptr)];
  }
  return cfg;
}

template <class T>
T typed(const json& cfg, const std::string& ptr) {
  try {
    return cfg.at(json::json_pointer(ptr)).get<T>();
  } catch (const json::exception& e) {
    fail(ErrorKind::config, "config key '" + ptr + "': " + e.what());
  }
}

inline void write_resolved(const fs::path& out, const std::string& command, const json& cfg) {
  datahub::detail::ensure_dir(out);
  json j = cfg;
  j["_command"] = command;
  datahub::detail::write_text_atomic(out / "resolved_config.json", j.dump(2) + "\n");
}

// ---- subcommand state -------------------------------------------------------

struct Sub {
  std::string name;
  CLI::App* app = nullptr;
  json defaults;
  Layers layers;
  std::vector<std::unique_ptr<std::string>> storage;

  void common() {
    app->add_option("--config,-c", layers.files, "Config file (JSON); repeatable, later files override earlier ones");
    app->add_option("--set", layers.sets, "Override one key: --set posteval.epochs=100; repeatable");
  }

  void flag(const std::string& names, const std::string& ptr, const std::string& help) {
    storage.push_back(std::make_unique<std::string>());
    auto* opt = app->add_option(names, *storage.back(), help);
    layers.flags.emplace_back(ptr, opt);
    layers.flag_values.emplace_back(ptr, storage.back().get());
  }

  json resolve() const {
    json cfg = resolve_layers(defaults, layers);
    if (cfg.contains("_command")) cfg.erase("_command");
    return cfg;
  }
};

inline json dataset_limits_defaults() { return {{"train_per_class", 0}, {"test_per_class", 0}}; }

inline datahub::LoadedDataset load_limited(const std::string& name, const std::string& root, const json& limits) {
  auto d = datahub::load_dataset(name, data_root(root));
  const int tr = limits.value("train_per_class", 0), te = limits.value("test_per_class", 0);
  if (tr > 0) d.train = d.train.subset_per_class(d.spec.num_classes, tr);
  if (te > 0) d.test = d.test.subset_per_class(d.spec.num_classes, te);
  return d;
}

inline fs::path out_dir(const json& cfg, const std::string& command) {
  const auto out = cfg.value("out", std::string());
  return out.empty() ? artifact_root() / command : fs::path(out);
}

inline void emit_line(std::ostream& os, const json& j) { os << j.dump() << std::endl; }

// ---- commands ---------------------------------------------------------------

inline int cmd_squeeze(const json& cfg, std::ostream& os) {
  const auto dataset = typed<std::string>(cfg, "/dataset");
  auto model = typed<nn::ModelSpec>(cfg, "/model");
  const auto recipe = typed<teachers::Recipe>(cfg, "/recipe");
  const auto& dspec = datahub::dataset_spec(dataset);
  model.resolution = dspec.resolution;
  model.num_classes = dspec.num_classes;
  model.channels = dspec.channels;
  model.validate();
  recipe.validate();
  const fs::path out = out_dir(cfg, "squeeze");
  write_resolved(out, "squeeze", cfg);

  const auto data = load_limited(dataset, cfg.value("data_root", ""), cfg.at("limits"));
  const auto t = teachers::train_teacher(model, data, recipe, cfg.value("verbose", false));
  teachers::save_teacher(t, out);
  emit_line(os, {{"teacher", t.id()}, {"test_accuracy", t.test_accuracy()}, {"out", out.string()}});
  return 0;
}

inline int cmd_synth(const json& cfg, std::ostream& os) {
  const auto dataset = typed<std::string>(cfg, "/dataset");
  const auto method = typed<std::string>(cfg, "/method");
  const int ipc = typed<int>(cfg, "/ipc");
  const auto seed = typed<std::uint64_t>(cfg, "/seed");
  const auto storage = typed<std::string>(cfg, "/storage");
  require(method == "random" || method == "select" || method == "recover", ErrorKind::config,
          "synth.method must be random, select or recover (got '" + method + "')");
  require(ipc >= 1, ErrorKind::config, "synth.ipc must be >= 1");
  require(storage == "per_image" || storage == "container", ErrorKind::config,
          "synth.storage must be per_image or container");
  auto sel = typed<synth::SelectConfig>(cfg, "/select");
  auto rec = typed<synth::RecoverConfig>(cfg, "/recover");
  const auto& dspec = datahub::dataset_spec(dataset);
  if (method == "select") sel.validate();
  if (method == "recover") rec.validate();
  const auto teacher_dir = cfg.value("teacher", std::string());
  require(method == "random" || !teacher_dir.empty(), ErrorKind::config, "synth." + method + " needs a teacher path");
  const fs::path out = out_dir(cfg, "synth");
  write_resolved(out, "synth", cfg);

  const auto data = load_limited(dataset, cfg.value("data_root", ""), cfg.at("limits"));
  datahub::DistilledDataset ds;
  if (method == "random") {
    ds = synth::random_sample(dspec, data.train, ipc, seed);
  } else {
    const auto t = teachers::load_teacher(teacher_dir);
    require(t.dataset() == dataset, ErrorKind::config, "teacher was trained on " + t.dataset() + ", not " + dataset);
    if (method == "select") {
      sel.seed = seed;
      ds = synth::select_patches(t, dspec, data.train, sel, ipc);
    } else {
      rec.seed = seed;
      ds = synth::recover_optimize(t, rec, synth::balanced_labels(dspec.num_classes, ipc), {&dspec, &data.train})
               .dataset;
    }
  }
  datahub::export_distilled(ds, out, storage == "container" ? datahub::Storage::container : datahub::Storage::per_image);
  emit_line(os, {{"method", method},
                 {"images", ds.size()},
                 {"ipc", ds.ipc},
                 {"wall_clock_seconds", ds.provenance.wall_clock_seconds},
                 {"out", out.string()}});
  return 0;
}

inline std::vector<teachers::TeacherHandle> load_teachers(const json& cfg) {
  std::vector<teachers::TeacherHandle> out;
  for (const auto& p : typed<std::vector<std::string>>(cfg, "/teachers")) out.push_back(teachers::load_teacher(p));
  return out;
}

inline nn::ModelSpec eval_spec(const std::string& arch, const datahub::DatasetSpec& d) {
  nn::ModelSpec m;
  m.arch = arch;
  m.resolution = d.resolution;
  m.num_classes = d.num_classes;
  m.channels = d.channels;
  m.validate();
  return m;
}

inline int cmd_relabel_cache(const json& cfg, std::ostream& os) {
  const auto distilled = typed<std::string>(cfg, "/distilled");
  require(!distilled.empty(), ErrorKind::config, "relabel-cache needs --distilled");
  auto pcfg = typed<posteval::PostEvalConfig>(cfg, "/posteval");
  pcfg.validate();
  require(pcfg.label_mode != "hard", ErrorKind::config, "relabel-cache: hard label mode has nothing to cache");
  const auto seed = typed<std::uint64_t>(cfg, "/seed");
  const auto arch = typed<std::string>(cfg, "/eval_arch");
  nn::arch_info(arch);
  const fs::path out = out_dir(cfg, "relabel-cache");

  const auto ds = datahub::import_distilled(distilled);
  auto members = load_teachers(cfg);
  require(!members.empty(), ErrorKind::config, "relabel-cache needs at least one --teacher");
  const auto resolved = pcfg.resolve(arch != members.front().spec().arch);
  write_resolved(out, "relabel-cache", cfg);
  teachers::TeacherPool pool(std::move(members));
  const auto plan = posteval::make_plan(resolved, ds.size(), seed);
  const auto bytes = relabel::cache_labels(pool, ds, plan, out);
  const json meta = {{"seed", seed},
                     {"epochs", plan.epochs},
                     {"batch_size", plan.batch_size},
                     {"pool", pool.fingerprint()},
                     {"config_fingerprint", posteval::config_fingerprint(resolved)},
                     {"bytes", bytes}};
  datahub::detail::write_text_atomic(out / "cache.json", meta.dump(2) + "\n");
  emit_line(os, meta);
  return 0;
}

inline int cmd_eval(const json& cfg, std::ostream& os) {
  const auto distilled = typed<std::string>(cfg, "/distilled");
  require(!distilled.empty(), ErrorKind::config, "eval needs --distilled");
  auto pcfg = typed<posteval::PostEvalConfig>(cfg, "/posteval");
  pcfg.validate();
  const auto arch = typed<std::string>(cfg, "/eval_arch");
  nn::arch_info(arch);
  const auto cache = cfg.value("label_cache", std::string());
  require(cache.empty() || pcfg.seeds.size() == 1, ErrorKind::config,
          "eval: a label cache belongs to one seed; set posteval.seeds to that seed");
  const fs::path out = out_dir(cfg, "eval");

  const auto ds = datahub::import_distilled(distilled);
  std::vector<teachers::TeacherHandle> members;
  if (pcfg.label_mode != "hard") {
    members = load_teachers(cfg);
    require(!members.empty() || !cache.empty(), ErrorKind::config,
            "eval: label mode '" + pcfg.label_mode + "' needs --teacher (or a label cache)");
  }
  const auto& dspec = datahub::dataset_spec(ds.dataset);
  const auto student = eval_spec(arch, dspec);
  const bool cross = !members.empty() && members.front().spec().arch != arch;
  const auto resolved = pcfg.resolve(cross);
  write_resolved(out, "eval", cfg);

  const auto data = load_limited(ds.dataset, cfg.value("data_root", ""), cfg.at("limits"));
  std::optional<teachers::TeacherPool> pool;
  if (!members.empty()) pool.emplace(std::move(members));
  std::vector<double> accs;
  json runs = json::array();
  for (auto seed : resolved.seeds) {
    posteval::TrainOptions to;
    to.label_cache = cache;
    to.log_path = out / ("run_" + std::to_string(seed) + ".log");
    fs::remove(to.log_path);
    if (cfg.value("dump_features", false)) to.feature_dump = out / ("features_" + std::to_string(seed) + ".f32");
    to.verbose = cfg.value("verbose", false);
    const auto r = posteval::train_student(ds, pool ? &*pool : nullptr, student, resolved, data.test, seed, to);
    datahub::detail::write_text_atomic(out / ("run_" + std::to_string(seed) + ".json"), json(r).dump(2) + "\n");
    accs.push_back(r.final_test_accuracy);
    runs.push_back({{"seed", seed}, {"final_test_accuracy", r.final_test_accuracy}});
  }
  const auto ms = evalsuite::mean_std(accs);
  const json summary = {{"distilled", distilled},
                        {"eval_arch", arch},
                        {"config_fingerprint", posteval::config_fingerprint(resolved)},
                        {"resolved_posteval", resolved},
                        {"runs", runs},
                        {"mean", ms.mean},
                        {"std", ms.stdev ? json(*ms.stdev) : json(nullptr)}};
  datahub::detail::write_text_atomic(out / "summary.json", summary.dump(2) + "\n");
  emit_line(os, {{"mean", ms.mean}, {"std", ms.stdev ? json(*ms.stdev) : json(nullptr)}, {"out", out.string()}});
  return 0;
}

inline evalsuite::GridSpec load_grid(const json& cfg) {
  json grid = cfg.at("grid");
  const auto file = cfg.value("grid_file", std::string());
  if (!file.empty()) {
    fs::path p = file;
    if (fs::is_directory(p)) p /= "grid.json";
    if (!fs::exists(p) && fs::exists(p.string() + ".json")) p = p.string() + ".json";
    std::ifstream in(p);
    require(bool(in), ErrorKind::missing_input, "grid file not found: " + p.string());
    try {
      grid.merge_patch(json::parse(in));
    } catch (const json::exception& e) {
      fail(ErrorKind::config, "grid file " + p.string() + " does not parse: " + e.what());
    }
  }
  check_schema(grid, json(evalsuite::GridSpec{}), "/grid", {"/grid/methods", "/grid/hybrid_teachers"});
  try {
    return grid.get<evalsuite::GridSpec>();
  } catch (const json::exception& e) {
    fail(ErrorKind::config, std::string("grid: ") + e.what());
  }
}

inline int cmd_bench(const json& cfg, std::ostream& os) {
  auto grid = load_grid(cfg);
  if (grid.data_root.empty()) grid.data_root = data_root("");
  evalsuite::plan_grid(grid);  // validates before any work
  fs::path store = cfg.value("store", std::string());
  if (store.empty()) store = artifact_root() / "bench" / grid.name;
  write_resolved(store, "bench", json{{"grid", grid}, {"store", store.string()}});

  evalsuite::GridOptions opt;
  opt.cancel = &interrupted();
  opt.verbose = cfg.value("verbose", false);
  opt.dump_features = cfg.value("dump_features", false);
  if (opt.verbose) opt.progress = [](const std::string& s) { std::fprintf(stderr, "[bench] %s\n", s.c_str()); };
  const auto res = evalsuite::run_grid(grid, store, opt);
  json cells = json::array();
  for (const auto& c : res.cells) cells.push_back(c);
  datahub::detail::write_text_atomic(store / "cells.json", cells.dump(2) + "\n");
  emit_line(os, {{"store", store.string()},
                 {"cells", res.cells.size()},
                 {"planned_runs", res.stats.planned_runs},
                 {"executed", res.stats.executed},
                 {"skipped", res.stats.skipped},
                 {"failed", res.stats.failed},
                 {"cancelled", res.stats.cancelled}});
  if (res.stats.cancelled && interrupted().load()) fail(ErrorKind::runtime, "bench interrupted; store is consistent");
  return 0;
}

inline int cmd_report(const json& cfg, std::ostream& os) {
  const auto stores = typed<std::vector<std::string>>(cfg, "/stores");
  require(!stores.empty(), ErrorKind::config, "report needs at least one --store");
  const auto format = evalsuite::parse_format(typed<std::string>(cfg, "/format"));
  evalsuite::EmitOptions eo;
  eo.force = cfg.value("force", false);
  eo.decimals = cfg.value("decimals", 1);
  std::vector<evalsuite::CellResult> cells;
  for (const auto& s : stores) {
    auto c = evalsuite::load_store(s);
    cells.insert(cells.end(), c.begin(), c.end());
  }
  require(!cells.empty(), ErrorKind::missing_input, "report: no completed runs in the given stores");
  const fs::path out = out_dir(cfg, "report");
  write_resolved(out, "report", cfg);

  std::vector<std::string> written;
  if (cfg.value("split_by_protocol", false)) {
    std::map<std::string, std::vector<evalsuite::CellResult>> by_fp;
    for (const auto& c : cells) by_fp[c.config_fingerprint].push_back(c);
    for (const auto& [fp, group] : by_fp)
      for (const auto& p : evalsuite::emit_report(group, format, out / ("protocol_" + fp.substr(0, 12)), eo))
        written.push_back(p.string());
  } else {
    for (const auto& p : evalsuite::emit_report(cells, format, out, eo)) written.push_back(p.string());
  }

  const auto reported_path = cfg.value("reported", std::string());
  if (!reported_path.empty()) {
    std::ostringstream csv;
    csv << "method,dataset,ipc,eval_arch,reported,reevaluated,delta,rendered\n";
    for (const auto& r : evalsuite::ingest_reported(reported_path))
      for (const auto& c : cells)
        if (!c.failed && c.coords.method == r.method && c.coords.dataset == r.dataset && c.coords.ipc == r.ipc) {
          const auto d = evalsuite::rectification_delta(r, c, eo.decimals);
          csv << r.method << ',' << r.dataset << ',' << r.ipc << ',' << c.coords.eval_arch << ',' << r.accuracy << ','
              << evalsuite::fmt_num(c.mean, eo.decimals) << ',' << evalsuite::fmt_num(d.value, eo.decimals) << ",\""
              << d.text() << "\"\n";
        }
    datahub::detail::write_text_atomic(out / "deltas.csv", csv.str());
    written.push_back((out / "deltas.csv").string());
  }
  emit_line(os, {{"cells", cells.size()}, {"written", written}});
  return 0;
}

inline int cmd_datahub(const std::string& action, const json& cfg, std::ostream& os) {
  const auto src = typed<std::string>(cfg, "/src");
  require(!src.empty(), ErrorKind::config, "datahub " + action + " needs --src");
  const auto storage = typed<std::string>(cfg, "/storage");
  require(storage == "per_image" || storage == "container", ErrorKind::config,
          "datahub.storage must be per_image or container");
  const fs::path out = out_dir(cfg, "datahub-" + action);
  auto ds = datahub::import_distilled(src);
  write_resolved(out, "datahub " + action, cfg);
  datahub::export_distilled(ds, out, storage == "container" ? datahub::Storage::container : datahub::Storage::per_image);
  emit_line(os, {{"images", ds.size()},
                 {"num_classes", ds.num_classes},
                 {"ipc", ds.ipc},
                 {"unbalanced", ds.unbalanced},
                 {"class_counts", ds.class_counts()},
                 {"method", ds.provenance.method},
                 {"out", out.string()}});
  return 0;
}

// ---- entry point ------------------------------------------------------------

inline json squeeze_defaults() {
  nn::ModelSpec m;
  return {{"dataset", "synth10"}, {"data_root", ""}, {"model", m}, {"recipe", teachers::Recipe{}},
          {"limits", dataset_limits_defaults()}, {"out", ""}, {"verbose", false}};
}

inline json synth_defaults() {
  return {{"dataset", "synth10"},        {"data_root", ""},  {"method", "random"}, {"ipc", 10},
          {"seed", 0},                   {"teacher", ""},    {"select", synth::SelectConfig{}},
          {"recover", synth::RecoverConfig{}}, {"storage", "per_image"}, {"limits", dataset_limits_defaults()},
          {"out", ""}};
}

inline json eval_defaults() {
  return {{"distilled", ""},     {"teachers", json::array()}, {"eval_arch", "convnet-small"},
          {"posteval", posteval::PostEvalConfig{}}, {"data_root", ""}, {"label_cache", ""},
          {"limits", dataset_limits_defaults()},     {"dump_features", false}, {"out", ""}, {"verbose", false}};
}

inline json relabel_defaults() {
  return {{"distilled", ""}, {"teachers", json::array()}, {"eval_arch", "convnet-small"},
          {"posteval", posteval::PostEvalConfig{}}, {"seed", 0}, {"out", ""}};
}

inline json bench_defaults() {
  return {{"grid", evalsuite::GridSpec{}}, {"grid_file", ""}, {"store", ""}, {"verbose", false},
          {"dump_features", false}};
}

inline json report_defaults() {
  return {{"stores", json::array()}, {"format", "markdown"}, {"out", ""}, {"force", false},
          {"reported", ""}, {"decimals", 1}, {"split_by_protocol", false}};
}

inline json datahub_defaults() { return {{"src", ""}, {"storage", "per_image"}, {"out", ""}}; }

// Parses argv, runs one subcommand, prints a single machine-parsable line on
// failure and returns the process exit status.
inline int run_command(int argc, const char* const* argv, std::ostream& os = std::cout, std::ostream& es = std::cerr) {
  CLI::App app{"distillbench: squeeze / synth / relabel / post-evaluation benchmark harness"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Help for every subcommand");

  std::vector<std::unique_ptr<Sub>> subs;
  auto make = [&](CLI::App* parent, const std::string& name, const std::string& desc, json defaults) {
    auto s = std::make_unique<Sub>();
    s->name = name;
    s->app = parent->add_subcommand(name, desc);
    s->defaults = std::move(defaults);
    s->common();
    s->flag("--out,-o", "/out", "Output directory (default: $" + std::string(kArtifactEnv) + "/" + name + ")");
    subs.push_back(std::move(s));
    return subs.back().get();
  };

  auto* squeeze = make(&app, "squeeze", "Train a teacher on a real dataset", squeeze_defaults());
  squeeze->flag("--dataset", "/dataset", "Dataset registry name");
  squeeze->flag("--arch", "/model/arch", "Teacher architecture");
  squeeze->flag("--epochs", "/recipe/epochs", "Training epochs");
  squeeze->flag("--seed", "/recipe/seed", "Training seed");
  squeeze->flag("--data-root", "/data_root", "Dataset root (default: $" + std::string(kDataEnv) + ")");

  auto* synth = make(&app, "synth", "Produce a distilled set (random, select, recover)", synth_defaults());
  synth->flag("--dataset", "/dataset", "Dataset registry name");
  synth->flag("--method", "/method", "random | select | recover");
  synth->flag("--ipc", "/ipc", "Images per class");
  synth->flag("--seed", "/seed", "Synthesis seed");
  synth->flag("--teacher", "/teacher", "Teacher directory (select, recover)");
  synth->flag("--init", "/recover/init", "Recovery init: noise | real-random | selection | imported");
  synth->flag("--iterations", "/recover/iterations", "Recovery iterations");
  synth->flag("--storage", "/storage", "per_image | container");
  synth->flag("--data-root", "/data_root", "Dataset root");

  auto* relabel = make(&app, "relabel-cache", "Materialize epoch-wise soft labels", relabel_defaults());
  relabel->flag("--distilled", "/distilled", "Distilled set directory");
  relabel->flag("--seed", "/seed", "Run seed the cache is built for");
  relabel->flag("--epochs", "/posteval/epochs", "Epochs to cache");
  relabel->flag("--eval-arch", "/eval_arch", "Student architecture (decides protocol defaults)");

  auto* eval = make(&app, "eval", "Post-evaluate a distilled set", eval_defaults());
  eval->flag("--distilled", "/distilled", "Distilled set directory");
  eval->flag("--eval-arch", "/eval_arch", "Student architecture");
  eval->flag("--epochs", "/posteval/epochs", "Training epochs");
  eval->flag("--label-mode", "/posteval/label_mode", "soft | hybrid | hard");
  eval->flag("--loss", "/posteval/loss", "kl | mse_gt | hard_ce");
  eval->flag("--batch-size", "/posteval/batch_size", "Batch size (0: protocol default)");
  eval->flag("--label-cache", "/label_cache", "Replay labels from a relabel-cache directory");
  eval->flag("--data-root", "/data_root", "Dataset root");

  auto* bench = make(&app, "bench", "Run an experiment grid into a result store", bench_defaults());
  bench->flag("--grid", "/grid_file", "Grid file (JSON) or directory containing grid.json");
  bench->flag("--store", "/store", "Result store (default: $" + std::string(kArtifactEnv) + "/bench/<grid name>)");
  bench->layers.freeform = {"/grid/methods", "/grid/hybrid_teachers"};

  auto* report = make(&app, "report", "Tabulate result stores", report_defaults());
  report->flag("--format", "/format", "csv | markdown | json");
  report->flag("--reported", "/reported", "JSON list of reported accuracies for rectification deltas");

  auto* hub = app.add_subcommand("datahub", "Import or export distilled sets");
  hub->require_subcommand(1);
  auto* imp = make(hub, "import", "Validate an external set and store it in canonical form", datahub_defaults());
  imp->flag("--src", "/src", "Directory with manifest.json");
  imp->flag("--storage", "/storage", "per_image | container");
  auto* exp = make(hub, "export", "Re-export a set with the chosen storage", datahub_defaults());
  exp->flag("--src", "/src", "Directory with manifest.json");
  exp->flag("--storage", "/storage", "per_image | container");

  // Repeatable list flags.
  std::vector<std::string> relabel_teachers, eval_teachers, report_stores;
  relabel->app->add_option("--teacher", relabel_teachers, "Teacher directory; repeat for a hybrid pool");
  eval->app->add_option("--teacher", eval_teachers, "Teacher directory; repeat for a hybrid pool");
  report->app->add_option("--store", report_stores, "Result store; repeatable");
  bool force = false, verbose = false, dump = false;
  report->app->add_flag("--force", force, "Tabulate mixed protocol fingerprints side by side");
  for (auto* s : {squeeze, eval, bench}) s->app->add_flag("--verbose,-v", verbose, "Progress on stderr");
  for (auto* s : {eval, bench}) s->app->add_flag("--dump-features", dump, "Write penultimate test features");

  try {
    try {
      app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
      return app.exit(e, os, es);
    } catch (const CLI::CallForAllHelp& e) {
      return app.exit(e, os, es);
    } catch (const CLI::ParseError& e) {
      fail(ErrorKind::config, e.what());
    }

    for (auto& s : subs) {
      if (!s->app->parsed()) continue;
      json cfg = s->resolve();
      if (s.get() == relabel && !relabel_teachers.empty()) cfg["teachers"] = relabel_teachers;
      if (s.get() == eval && !eval_teachers.empty()) cfg["teachers"] = eval_teachers;
      if (s.get() == report && !report_stores.empty()) cfg["stores"] = report_stores;
      if (s.get() == report && force) cfg["force"] = true;
      if ((s.get() == squeeze || s.get() == eval || s.get() == bench) && verbose) cfg["verbose"] = true;
      if ((s.get() == eval || s.get() == bench) && dump) cfg["dump_features"] = true;
      if (s.get() == squeeze) return cmd_squeeze(cfg, os);
      if (s.get() == synth) return cmd_synth(cfg, os);
      if (s.get() == relabel) return cmd_relabel_cache(cfg, os);
      if (s.get() == eval) return cmd_eval(cfg, os);
      if (s.get() == bench) return cmd_bench(cfg, os);
      if (s.get() == report) return cmd_report(cfg, os);
      if (s.get() == imp) return cmd_datahub("import", cfg, os);
      if (s.get() == exp) return cmd_datahub("export", cfg, os);
    }
    fail(ErrorKind::config, "no subcommand given");
  } catch (const Error& e) {
    std::string msg = e.what();
    for (auto& ch : msg)
      if (ch == '\n') ch = ' ';
    es << "dbench-error class=" << to_string(e.kind()) << " message=" << json(msg).dump() << std::endl;
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    es << "dbench-error class=runtime_error message=" << json(std::string(e.what())).dump() << std::endl;
    return 4;
  }
}

}  // namespace dbench::cli
