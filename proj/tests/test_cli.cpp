#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "dbench/cli/app.hpp"
#include "support.hpp"

using namespace dbench;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  int code = -1;
  std::string out, err;
};

// In-process invocation; argv[0] is supplied here.
Outcome run(std::vector<std::string> args) {
  args.insert(args.begin(), "dbench");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  Outcome o;
  o.code = cli::run_command(int(argv.size()), argv.data(), out, err);
  o.out = out.str();
  o.err = err.str();
  return o;
}

// Out-of-process invocation of the installed binary; returns the exit status.
int run_binary(const std::string& args, const fs::path& err_file) {
  const std::string cmd = std::string(DBENCH_CLI_PATH) + " " + args + " >/dev/null 2>" + err_file.string();
  const int st = std::system(cmd.c_str());
  return WIFEXITED(st) ? WEXITSTATUS(st) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  return {std::istreambuf_iterator<char>(in), {}};
}

json read_json(const fs::path& p) { return json::parse(slurp(p)); }

const std::vector<std::string> kSmall = {"--set", "limits.train_per_class=4", "--set", "limits.test_per_class=2"};

std::vector<std::string> with(std::vector<std::string> a, const std::vector<std::string>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

Outcome synth_random(const fs::path& out, int ipc = 1, std::uint64_t seed = 0) {
  return run(with({"synth", "--method", "random", "--ipc", std::to_string(ipc), "--seed", std::to_string(seed), "-o",
                   out.string()},
                  kSmall));
}

}  // namespace

TEST(CliBinary, HelpAndExitCodes) {
  const auto dir = fixture::scratch("cli_exit");
  EXPECT_EQ(run_binary("--help", dir / "e"), 0);
  EXPECT_EQ(run_binary("eval --help", dir / "e"), 0);

  EXPECT_EQ(run_binary("eval --no-such-flag", dir / "e"), 2);
  const auto line = slurp(dir / "e");
  EXPECT_EQ(line.rfind("dbench-error class=config_error message=\"", 0), 0u) << line;

  EXPECT_EQ(run_binary("eval --distilled " + (dir / "absent").string(), dir / "e"), 3);
  EXPECT_NE(slurp(dir / "e").find("class=missing_input"), std::string::npos);

  const auto set = dir / "set";
  ASSERT_EQ(synth_random(set).code, 0);
  std::ofstream(set / "manifest.json") << "{not json";
  EXPECT_EQ(run_binary("datahub import --src " + set.string() + " -o " + (dir / "imp").string(), dir / "e"), 4);
  EXPECT_NE(slurp(dir / "e").find("class=integrity_error"), std::string::npos);
  EXPECT_EQ(run_binary("", dir / "e"), 2);
}

TEST(Cli, ConfigLayerPrecedence) {
  const auto dir = fixture::scratch("cli_layers");
  std::ofstream(dir / "base.json") << R"({"ipc": 2, "seed": 5})";
  std::ofstream(dir / "over.json") << R"({"ipc": 3})";
  auto ipc_of = [&](std::vector<std::string> extra) {
    const auto out = dir / "o";
    auto o = run(with({"synth", "-o", out.string(), "--set", "limits.train_per_class=10", "--set",
                       "limits.test_per_class=1"},
                      extra));
    EXPECT_EQ(o.code, 0) << o.err;
    return read_json(out / "resolved_config.json");
  };
  EXPECT_EQ(ipc_of({})["ipc"], 10);
  EXPECT_EQ(ipc_of({"-c", (dir / "base.json").string()})["ipc"], 2);
  const auto two = ipc_of({"-c", (dir / "base.json").string(), "-c", (dir / "over.json").string()});
  EXPECT_EQ(two["ipc"], 3);
  EXPECT_EQ(two["seed"], 5);
  EXPECT_EQ(ipc_of({"-c", (dir / "base.json").string(), "--set", "ipc=4"})["ipc"], 4);
  const auto all = ipc_of({"-c", (dir / "base.json").string(), "--set", "ipc=4", "--ipc", "1"});
  EXPECT_EQ(all["ipc"], 1);
  EXPECT_EQ(all["_command"], "synth");
  EXPECT_EQ(read_json(dir / "o" / "manifest.json")["ipc"], 1);
}

TEST(Cli, SchemaErrorsNameTheKey) {
  const auto dir = fixture::scratch("cli_schema");
  std::ofstream(dir / "typo.json") << R"({"recover": {"iteratons": 5}})";
  auto o = run({"synth", "-c", (dir / "typo.json").string(), "-o", (dir / "o").string()});
  EXPECT_EQ(o.code, 2);
  EXPECT_NE(o.err.find("/recover/iteratons"), std::string::npos) << o.err;

  o = run({"synth", "--set", "ipc=\"ten\"", "-o", (dir / "o").string()});
  EXPECT_EQ(o.code, 2);
  EXPECT_NE(o.err.find("'/ipc' must be a number"), std::string::npos) << o.err;

  o = run({"synth", "--set", "ipc=2.5", "-o", (dir / "o").string()});
  EXPECT_EQ(o.code, 2);
  EXPECT_NE(o.err.find("/ipc"), std::string::npos) << o.err;

  o = run({"eval", "--set", "posteval.label_mode=fuzzy", "--distilled", "x", "-o", (dir / "o").string()});
  EXPECT_EQ(o.code, 2);
  EXPECT_NE(o.err.find("label_mode"), std::string::npos) << o.err;

  o = run({"synth", "-c", (dir / "missing.json").string()});
  EXPECT_EQ(o.code, 3);
  o = run({"synth", "--method", "select", "-o", (dir / "o").string()});
  EXPECT_EQ(o.code, 2);
  EXPECT_NE(o.err.find("teacher"), std::string::npos);
}

TEST(Cli, ResolvedConfigReplaysTheRun) {
  const auto dir = fixture::scratch("cli_replay");
  ASSERT_EQ(synth_random(dir / "a", 2, 9).code, 0);
  // the resolved record of run a, pointed at a new output directory
  auto o = run({"synth", "-c", (dir / "a" / "resolved_config.json").string(), "-o", (dir / "b").string()});
  ASSERT_EQ(o.code, 0) << o.err;
  const auto a = datahub::import_distilled(dir / "a"), b = datahub::import_distilled(dir / "b");
  EXPECT_EQ(a.images.data, b.images.data);
  EXPECT_EQ(a.labels, b.labels);
  EXPECT_EQ(a.sources, b.sources);
}

TEST(Cli, DefaultOutputUnderArtifactRoot) {
  const auto dir = fixture::scratch("cli_env");
  ::setenv("DBENCH_ARTIFACTS", dir.c_str(), 1);
  auto o = run(with({"synth", "--ipc", "1"}, kSmall));
  ::unsetenv("DBENCH_ARTIFACTS");
  ASSERT_EQ(o.code, 0) << o.err;
  EXPECT_TRUE(fs::exists(dir / "synth" / "manifest.json"));
  EXPECT_EQ(json::parse(o.out)["images"], 10);
}

TEST(Cli, EndToEndTeacherSelectCacheEval) {
  const auto dir = fixture::scratch("cli_e2e");
  const auto teacher = dir / "teacher", set = dir / "set", cache = dir / "cache";
  auto o = run(with({"squeeze", "--arch", "convnet-tiny", "--epochs", "1", "-o", teacher.string()}, kSmall));
  ASSERT_EQ(o.code, 0) << o.err;
  EXPECT_TRUE(fs::exists(teacher / "teacher.json"));

  o = run(with({"synth", "--method", "select", "--ipc", "1", "--teacher", teacher.string(), "--storage", "container",
                "--set", "select.sources_per_class=2", "-o", set.string()},
               kSmall));
  ASSERT_EQ(o.code, 0) << o.err;
  EXPECT_EQ(datahub::import_distilled(set).provenance.method, "select");

  const std::vector<std::string> proto = {"--eval-arch", "convnet-tiny", "--epochs", "2", "--set", "posteval.seeds=[4]"};
  o = run(with(with({"relabel-cache", "--distilled", set.string(), "--teacher", teacher.string(), "--seed", "4", "-o",
                     cache.string()},
                    {"--eval-arch", "convnet-tiny", "--epochs", "2"}),
               {}));
  ASSERT_EQ(o.code, 0) << o.err;
  EXPECT_GT(read_json(cache / "cache.json")["bytes"].get<long>(), 0);

  o = run(with(with({"eval", "--distilled", set.string(), "--teacher", teacher.string(), "-o", (dir / "live").string()},
                    proto),
               kSmall));
  ASSERT_EQ(o.code, 0) << o.err;
  o = run(with(with({"eval", "--distilled", set.string(), "--label-cache", cache.string(), "-o",
                     (dir / "cached").string()},
                    proto),
               kSmall));
  ASSERT_EQ(o.code, 0) << o.err;
  const auto live = read_json(dir / "live" / "run_4.json").get<posteval::RunResult>();
  const auto cached = read_json(dir / "cached" / "run_4.json").get<posteval::RunResult>();
  EXPECT_TRUE(live.same_trajectory(cached));
  const auto summary = read_json(dir / "live" / "summary.json");
  EXPECT_EQ(summary["runs"].size(), 1u);
  EXPECT_TRUE(summary["std"].is_null());
  int log_lines = 0;
  std::ifstream log(dir / "live" / "run_4.log");
  for (std::string l; std::getline(log, l);) ++log_lines;
  EXPECT_EQ(log_lines, 2);

  // soft labels with two teachers need the hybrid mode
  o = run(with({"eval", "--distilled", set.string(), "--teacher", teacher.string(), "--teacher", teacher.string(), "-o",
                (dir / "pair").string()},
               proto));
  EXPECT_EQ(o.code, 2);
}

TEST(Cli, BenchReportAndDeltas) {
  const auto dir = fixture::scratch("cli_bench");
  const json grid = {{"name", "tiny"},
                     {"methods", {{{"id", "random"}, {"kind", "random"}}}},
                     {"ipcs", {1}},
                     {"eval_archs", {"convnet-tiny"}},
                     {"label_modes", {"hard"}},
                     {"seeds", {0, 1}},
                     {"posteval", {{"epochs", 1}}},
                     {"limits", {{"train_per_class", 4}, {"test_per_class", 2}}}};
  fs::create_directories(dir / "grids");
  std::ofstream(dir / "grids" / "tiny.json") << grid.dump(2);
  const auto store = dir / "store";
  auto o = run({"bench", "--grid", (dir / "grids" / "tiny").string(), "--store", store.string()});
  ASSERT_EQ(o.code, 0) << o.err;
  auto line = json::parse(o.out);
  EXPECT_EQ(line["executed"], 2);
  o = run({"bench", "--grid", (dir / "grids" / "tiny.json").string(), "--store", store.string()});
  ASSERT_EQ(o.code, 0) << o.err;
  line = json::parse(o.out);
  EXPECT_EQ(line["executed"], 0);
  EXPECT_EQ(line["skipped"], 2);
  EXPECT_TRUE(fs::exists(store / "cells.json"));

  std::ofstream(dir / "reported.json") << R"([{"method": "random", "dataset": "synth10", "ipc": 1, "accuracy": 5.0}])";
  o = run({"report", "--store", store.string(), "--format", "csv", "--reported", (dir / "reported.json").string(), "-o",
           (dir / "rep").string()});
  ASSERT_EQ(o.code, 0) << o.err;
  EXPECT_TRUE(fs::exists(dir / "rep" / "table.csv"));
  EXPECT_TRUE(fs::exists(dir / "rep" / "trajectories.csv"));
  const auto deltas = slurp(dir / "rep" / "deltas.csv");
  EXPECT_NE(deltas.find("random,synth10,1,convnet-tiny,5,"), std::string::npos) << deltas;

  // a second store under another protocol cannot share a table by default
  auto g2 = grid;
  g2["posteval"]["lr"] = 0.002;
  std::ofstream(dir / "grids" / "other.json") << g2.dump(2);
  ASSERT_EQ(run({"bench", "--grid", (dir / "grids" / "other.json").string(), "--store", (dir / "s2").string()}).code,
            0);
  o = run({"report", "--store", store.string(), "--store", (dir / "s2").string(), "-o", (dir / "mixed").string()});
  EXPECT_EQ(o.code, 2);
  EXPECT_NE(o.err.find("--force"), std::string::npos);
  o = run({"report", "--store", store.string(), "--store", (dir / "s2").string(), "--force", "-o",
           (dir / "mixed").string()});
  EXPECT_EQ(o.code, 0) << o.err;
  o = run({"report", "--store", store.string(), "--store", (dir / "s2").string(), "--set", "split_by_protocol=true",
           "-o", (dir / "split").string()});
  EXPECT_EQ(o.code, 0) << o.err;
  int tables = 0;
  for (const auto& e : fs::directory_iterator(dir / "split"))
    if (fs::exists(e.path() / "table.md")) ++tables;
  EXPECT_EQ(tables, 2);

  EXPECT_EQ(run({"report", "--store", (dir / "nowhere").string(), "-o", (dir / "x").string()}).code, 3);
  EXPECT_EQ(run({"bench", "--grid", (dir / "grids" / "absent.json").string()}).code, 3);
}

TEST(Cli, DatahubImportExport) {
  const auto dir = fixture::scratch("cli_hub");
  ASSERT_EQ(synth_random(dir / "src", 2, 1).code, 0);
  auto o = run({"datahub", "export", "--src", (dir / "src").string(), "--storage", "container", "-o",
                (dir / "packed").string()});
  ASSERT_EQ(o.code, 0) << o.err;
  o = run({"datahub", "import", "--src", (dir / "packed").string(), "-o", (dir / "back").string()});
  ASSERT_EQ(o.code, 0) << o.err;
  EXPECT_EQ(json::parse(o.out)["images"], 20);
  EXPECT_EQ(datahub::import_distilled(dir / "back").images.data, datahub::import_distilled(dir / "src").images.data);
  EXPECT_EQ(run({"datahub", "import", "--src", (dir / "src").string(), "--storage", "zip"}).code, 2);
}

TEST(CliBinary, InterruptLeavesAResumableStore) {
  const auto dir = fixture::scratch("cli_sigint");
  const json grid = {{"name", "slow"},
                     {"methods", {{{"id", "random"}, {"kind", "random"}}}},
                     {"ipcs", {1}},
                     {"eval_archs", {"convnet-tiny"}},
                     {"label_modes", {"hard"}},
                     {"seeds", {0, 1, 2, 3, 4, 5, 6, 7}},
                     {"posteval", {{"epochs", 40}}},
                     {"limits", {{"train_per_class", 4}, {"test_per_class", 2}}}};
  std::ofstream(dir / "grid.json") << grid.dump();
  const auto store = dir / "store";
  const std::string script = "cd " + dir.string() + " && (" + DBENCH_CLI_PATH + " bench --grid . --store " +
                             store.string() + " >/dev/null 2>err & pid=$!; " + "for i in $(seq 600); do " +
                             "[ -n \"$(ls " + (store / "runs").string() +
                             " 2>/dev/null)\" ] && break; sleep 0.1; done; kill -INT $pid; wait $pid; echo $? > code)";
  ASSERT_EQ(std::system(script.c_str()), 0);
  EXPECT_EQ(std::stoi(slurp(dir / "code")), 4);
  EXPECT_NE(slurp(dir / "err").find("interrupted"), std::string::npos);
  int done = 0;
  for ([[maybe_unused]] const auto& e : fs::directory_iterator(store / "runs")) ++done;
  EXPECT_GE(done, 1);
  EXPECT_LT(done, 8);
  auto o = run({"bench", "--grid", dir.string(), "--store", store.string()});
  ASSERT_EQ(o.code, 0) << o.err;
  const auto line = json::parse(o.out);
  EXPECT_EQ(line["skipped"].get<int>(), done);
  EXPECT_EQ(line["executed"].get<int>(), 8 - done);
}

TEST(Cli, ShippedGridsPlan) {
  int grids = 0;
  for (const auto& e : fs::directory_iterator(DBENCH_GRIDS_DIR)) {
    const auto g = cli::load_grid({{"grid", json(evalsuite::GridSpec{})}, {"grid_file", e.path().string()}});
    EXPECT_FALSE(evalsuite::plan_grid(g).empty()) << e.path();
    ++grids;
  }
  EXPECT_GE(grids, 1);
  const auto desk = cli::load_grid({{"grid", json(evalsuite::GridSpec{})},
                                    {"grid_file", (fs::path(DBENCH_GRIDS_DIR) / "desk-synth10.json").string()}});
  // 3 methods x (soft, hard) x (default, 500) batch sizes
  EXPECT_EQ(evalsuite::plan_grid(desk).size(), 12u);
}
