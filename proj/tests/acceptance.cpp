// Acceptance suite: one PASS/FAIL line per criterion. Pass criterion numbers
// as arguments to run a subset, e.g. `acceptance 1 2 10`.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "dbench/cli/app.hpp"
#include "dbench/evalsuite/report.hpp"
#include "dbench/posteval/train.hpp"
#include "dbench/relabel/cache.hpp"
#include "dbench/synth/bn_loss.hpp"
#include "dbench/synth/random_sample.hpp"
#include "dbench/synth/recover.hpp"
#include "dbench/synth/select.hpp"
#include "support.hpp"

using namespace dbench;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

// Collects failed checks for one criterion.
struct Check {
  std::vector<std::string> failures;
  std::vector<std::string> notes;

  bool expect(bool ok, const std::string& what) {
    if (!ok && failures.size() < 8) failures.push_back(what);
    return ok;
  }
  void note(const std::string& s) { notes.push_back(s); }
};

std::string fmt(const char* f, double a) {
  char buf[128];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

template <class F>
std::optional<ErrorKind> kind_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  return std::nullopt;
}

Tensor<double> random_logits(int b, int k, Rng& rng, double scale = 3.0) {
  Tensor<double> z(Shape{b, k, 1, 1});
  for (auto& v : z.data) v = scale * (2 * uniform01(rng) - 1);
  return z;
}

// Row softmax of z / tau, written out directly.
Tensor<double> softmax_oracle(const Tensor<double>& z, double tau) {
  Tensor<double> p(z.shape);
  const int k = z.shape.c;
  for (int n = 0; n < z.shape.n; ++n) {
    double mx = -1e300, s = 0;
    for (int j = 0; j < k; ++j) mx = std::max(mx, z.at(n, j) / tau);
    for (int j = 0; j < k; ++j) s += std::exp(z.at(n, j) / tau - mx);
    for (int j = 0; j < k; ++j) p.at(n, j) = std::exp(z.at(n, j) / tau - mx) / s;
  }
  return p;
}

// ---- 1 ----------------------------------------------------------------------

void scheduler(Check& c) {
  using posteval::lr_multiplier;
  c.expect(std::abs(lr_multiplier(0, 400, 1) - 1.0) <= 1e-12, "i=0 -> 1");
  c.expect(std::abs(lr_multiplier(400, 400, 1) - 0.0) <= 1e-12, "i=N, zeta=1 -> 0");
  c.expect(std::abs(lr_multiplier(400, 400, 2) - 0.5) <= 1e-12, "i=N, zeta=2 -> 0.5");
  c.expect(std::abs(lr_multiplier(200, 400, 1) - 0.5) <= 1e-12, "i=N/2, zeta=1 -> 0.5");
  const int n = 1000;
  for (double zeta : {1.0, 2.0}) {
    double prev = lr_multiplier(0, n, zeta);
    for (int i = 1; i <= n; ++i) {
      const double m = lr_multiplier(i, n, zeta);
      c.expect(m <= prev && m >= 0 && m <= 1, "non-increasing in i at " + std::to_string(i));
      prev = m;
    }
  }
  for (int i = 1; i <= n; ++i)
    c.expect(lr_multiplier(i, n, 1) <= lr_multiplier(i, n, 2), "non-decreasing in zeta at " + std::to_string(i));
  c.note("1001-point sweeps for zeta in {1, 2}");
}

// ---- 2 ----------------------------------------------------------------------

void loss_suite(Check& c) {
  using namespace posteval;
  Rng rng = make_rng(2024, {});
  // KL identity, both directions.
  for (int t = 0; t < 20; ++t) {
    const auto z = random_logits(4, 10, rng);
    const double tau = 1 + 19 * uniform01(rng);
    const auto p = softmax_oracle(z, tau);
    LossInputs in;
    in.student_logits = &z;
    in.teacher_probs = &p;
    in.temperature = tau;
    c.expect(std::abs(kl_loss(in).value) <= 1e-12, "kl zero on matched distributions");
    const auto q = softmax_oracle(random_logits(4, 10, rng), tau);
    in.teacher_probs = &q;
    c.expect(kl_loss(in).value > 0, "kl positive on mismatched distributions");
  }
  // mse_gt with gamma = 0 is the plain mean squared error.
  {
    const auto z = random_logits(3, 10, rng), t = random_logits(3, 10, rng);
    const std::vector<int> y{2, 5, 8};
    LossInputs in;
    in.student_logits = &z;
    in.teacher_logits = &t;
    in.labels = &y;
    in.gamma = 0;
    double mse = 0;
    for (std::size_t i = 0; i < z.size(); ++i) mse += (z.data[i] - t.data[i]) * (z.data[i] - t.data[i]);
    c.expect(std::abs(distill_loss("mse_gt", in).value - mse / double(z.size())) <= 1e-12, "mse_gt gamma=0");
  }
  // Two-class hand value: z = (1, 2), teacher logits (0.5, -0.5), label 0.
  {
    Tensor<double> z(Shape{1, 2, 1, 1}), t(Shape{1, 2, 1, 1});
    z.data = {1.0, 2.0};
    t.data = {0.5, -0.5};
    const std::vector<int> y{0};
    LossInputs in;
    in.student_logits = &z;
    in.teacher_logits = &t;
    in.labels = &y;
    in.gamma = 0.025;
    const double hand = (0.25 + 6.25) / 2 + 0.025 * std::log(1 + std::exp(1.0));
    const double got = distill_loss("mse_gt", in).value;
    c.expect(std::abs(got - hand) <= 1e-9, "mse_gt two-class hand value");
    c.note("mse_gt hand " + fmt("%.12f", hand) + " got " + fmt("%.12f", got));
  }
  // Central finite differences on 10-logit probes.
  double worst = 0;
  for (int t = 0; t < 10; ++t) {
    auto z = random_logits(4, 10, rng);
    const auto tl = random_logits(4, 10, rng);
    const auto p = softmax_oracle(tl, 4.0);
    std::vector<int> y, yb;
    std::vector<double> lam;
    for (int n = 0; n < 4; ++n) {
      y.push_back(int(uniform_index(rng, 10)));
      yb.push_back(int(uniform_index(rng, 10)));
      lam.push_back(uniform01(rng));
    }
    for (const char* mode : {"kl", "mse_gt", "hard_ce"}) {
      LossInputs in;
      in.student_logits = &z;
      in.teacher_probs = &p;
      in.teacher_logits = &tl;
      in.labels = &y;
      in.partner_labels = &yb;
      in.lambda_mix = &lam;
      in.temperature = 4.0;
      const auto g = distill_loss(mode, in).grad;
      for (std::size_t i = 0; i < z.size(); ++i) {
        const double keep = z.data[i], h = 1e-5;
        z.data[i] = keep + h;
        const double up = distill_loss(mode, in).value;
        z.data[i] = keep - h;
        const double dn = distill_loss(mode, in).value;
        z.data[i] = keep;
        const double fd = (up - dn) / (2 * h);
        const double e = std::abs(fd - g.data[i]) / std::max(std::abs(fd) + std::abs(g.data[i]), 1e-6);
        worst = std::max(worst, e);
        c.expect(e <= 1e-4, std::string(mode) + " gradient vs finite differences");
      }
    }
  }
  c.note("worst gradient rel. err " + fmt("%.2e", worst));
}

// ---- 3 ----------------------------------------------------------------------

void bn_suite(Check& c) {
  using synth::bn_alignment_loss;
  const synth::BNStats s = {{"bn0", {0.1, -0.2}, {1.5, 0.7}}, {"bn1", {3.0}, {2.0}}};
  c.expect(bn_alignment_loss(s, s, 1, 1).loss == 0.0, "zero on matched statistics");
  // one layer: (1 - 0)^2 + (1 - 1)^2 = 1
  c.expect(bn_alignment_loss({{"bn0", {1}, {1}}}, {{"bn0", {0}, {1}}}, 1, 1).loss == 1.0, "single-layer value 1");
  // two layers, each contributing 1
  c.expect(bn_alignment_loss({{"bn0", {1}, {1}}, {"bn1", {1}, {1}}}, {{"bn0", {0}, {1}}, {"bn1", {0}, {1}}}, 1, 1)
                   .loss == 2.0,
           "two-layer value 2");
  // mixed: 1 * (2 - 0.5)^2 + 0.5 * (3 - 1)^2 = 2.25 + 2
  c.expect(bn_alignment_loss({{"bn0", {2}, {3}}}, {{"bn0", {0.5}, {1}}}, 1, 0.5).loss == 4.25, "weighted value 4.25");

  auto model = fixture::toy_model(2, 8).cast<double>();
  const auto target = *teachers::extract_bn_stats(fixture::toy_teacher(2, 8));
  const auto x = fixture::random_pixels(Shape{3, 3, 8, 8}, 5).cast<double>();
  const std::vector<int> y{0, 1, 1};
  const std::vector<CropBox> crops = {{1, 0, 6, 7}, {0, 2, 5, 5}, {2, 1, 6, 6}};
  double worst = 0;
  for (const auto* cp : {static_cast<const std::vector<CropBox>*>(nullptr), &crops}) {
    const auto obj = synth::recovery_objective(model, x, y, target, 0.7, 1.0, 0.5, cp);
    for (std::size_t i = 0; i < x.size(); ++i) {
      auto xp = x, xm = x;
      const double h = 1e-6;
      xp.data[i] += h;
      xm.data[i] -= h;
      const double fd = (synth::recovery_objective(model, xp, y, target, 0.7, 1.0, 0.5, cp).total -
                         synth::recovery_objective(model, xm, y, target, 0.7, 1.0, 0.5, cp).total) /
                        (2 * h);
      const double e = std::abs(fd - obj.grad.data[i]) / std::max({std::abs(fd), std::abs(obj.grad.data[i]), 1e-6});
      worst = std::max(worst, e);
      c.expect(e <= 1e-3, "pixel gradient vs finite differences");
    }
  }
  c.note("all 192x2 pixels, worst rel. err " + fmt("%.2e", worst));
}

// ---- 4 ----------------------------------------------------------------------

// Every training image replaced by one flat colour per class, so that every
// candidate of a class scores the same loss.
datahub::ImageSet flatten_per_class(const datahub::ImageSet& in) {
  datahub::ImageSet out = in;
  const auto ps = in.shape.per_sample();
  const auto plane = ps / in.shape.c;
  for (int i = 0; i < in.size(); ++i)
    for (int ch = 0; ch < in.shape.c; ++ch)
      for (std::size_t j = 0; j < plane; ++j)
        out.pixels[i * ps + ch * plane + j] = std::uint8_t(40 + 20 * in.labels[i] + 30 * ch);
  return out;
}

void selection_oracle(Check& c) {
  const auto teacher = fixture::quick_teacher(0);
  auto model = teacher.instance();
  const auto data = fixture::small_synth10(12, 1);
  const auto flat = flatten_per_class(data.train);
  int tie_groups = 0, compared = 0;
  double worst_score = 0;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    synth::SelectConfig cfg;
    cfg.candidates_per_source = 5;
    cfg.sources_per_class = 5;  // 25 candidates per class
    cfg.patches_per_image = 4;
    cfg.seed = seed;
    const int ipc = 2, m = 4, e = 16, res = 32;
    const bool tied = seed % 2 == 1;
    synth::SelectTrace trace;
    const auto ds = synth::select_patches(teacher, data.spec, tied ? flat : data.train, cfg, ipc, &trace);
    for (int cls = 0; cls < 10; ++cls) {
      const auto& cands = trace.candidates[cls];
      const auto& patches = trace.patches[cls];
      c.expect(cands.size() >= 20, "at least 20 candidates");
      // Independent re-scoring, one patch at a time.
      for (std::size_t i = 0; i < cands.size(); ++i) {
        Tensor<float> x(Shape{1, 3, res, res});
        resize_crop<float>(patches[i], 3, e, e, CropBox{0, 0, e, e}, x.sample(0), res, res);
        const auto logits = model.forward(x, nn::Mode::eval).cast<double>();
        double mx = -1e300, s = 0;
        for (int k = 0; k < 10; ++k) mx = std::max(mx, logits.at(0, k));
        for (int k = 0; k < 10; ++k) s += std::exp(logits.at(0, k) - mx);
        const double loss = -(logits.at(0, cls) - mx - std::log(s));
        worst_score = std::max(worst_score, std::abs(loss - cands[i].loss));
        // float32 forwards differ in the last bits with batch composition
        c.expect(std::abs(loss - cands[i].loss) <= 1e-5 * (1 + std::abs(loss)), "recorded loss matches an independent forward: " +
                                                           fmt("%.9g", loss) + " vs " + fmt("%.9g", cands[i].loss));
      }
      // Exhaustive sort of every candidate.
      std::vector<int> all(cands.size());
      for (std::size_t i = 0; i < all.size(); ++i) all[i] = int(i);
      std::sort(all.begin(), all.end(), [&](int a, int b) {
        return std::tie(cands[a].loss, cands[a].source, cands[a].crop) <
               std::tie(cands[b].loss, cands[b].source, cands[b].crop);
      });
      all.resize(ipc * m);
      c.expect(all == trace.kept[cls], "kept set equals the brute-force top-k");
      for (int k = 1; k < ipc * m; ++k) tie_groups += cands[all[k]].loss == cands[all[k - 1]].loss;
      // Mosaic pixels from the oracle's choice.
      for (int j = 0; j < ipc; ++j) {
        const auto img = ds.images.sample(cls * ipc + j);
        bool same = true;
        for (int p = 0; p < m && same; ++p) {
          const auto& patch = patches[all[j * m + p]];
          const int r0 = (p / 2) * e, c0 = (p % 2) * e;
          for (int ch = 0; ch < 3; ++ch)
            for (int r = 0; r < e; ++r)
              for (int q = 0; q < e; ++q) same &= img[(ch * res + r0 + r) * res + c0 + q] == patch[(ch * e + r) * e + q];
        }
        c.expect(same, "mosaic pixels equal the oracle's patches");
        const auto& src = ds.sources[cls * ipc + j]["patches"];
        for (int p = 0; p < m; ++p)
          c.expect(src[p]["train_index"] == cands[all[j * m + p]].source && src[p]["crop"] == cands[all[j * m + p]].crop,
                   "source records follow the oracle order");
      }
      ++compared;
    }
  }
  c.expect(tie_groups > 0, "tie cases were exercised");
  c.note(std::to_string(compared) + " class selections over 50 seeds, " + std::to_string(tie_groups) +
         " tied neighbours in kept sets; max |rescored - recorded| " + fmt("%.1e", worst_score));
}

// ---- 5 ----------------------------------------------------------------------

void relabel_contracts(Check& c) {
  const auto teacher = fixture::quick_teacher(0);
  const auto data = fixture::small_synth10(30, 10);
  const auto ds = synth::random_sample(data.spec, data.train, 10, 0);
  posteval::PostEvalConfig cfg;
  cfg.epochs = 3;
  cfg.temperature = 4;
  cfg = cfg.resolve(false);
  const nn::ModelSpec student{"convnet-tiny", 32, 10, 3};

  auto pool = teachers::build_pool({teacher});
  int steps = 0;
  double worst_sum = 0;
  std::vector<double> live_losses;
  posteval::TrainOptions opt;
  opt.observer = [&](const posteval::StepEvent& ev) {
    ++steps;
    c.expect(ev.teacher_view && ev.student_view->hash() == ev.teacher_view->hash(),
             "teacher and student share the augmented view");
    const auto& p = *ev.teacher_probs;
    for (int n = 0; n < p.shape.n; ++n) {
      double s = 0;
      for (int k = 0; k < p.shape.c; ++k) s += p.at(n, k);
      worst_sum = std::max(worst_sum, std::abs(s - 1));
    }
    live_losses.push_back(ev.loss);
  };
  const auto live = posteval::train_student(ds, &pool, student, cfg, data.test, 0, opt);
  c.expect(steps == 3 * 2, "3 epochs of 2 steps observed");
  c.expect(worst_sum <= 1e-6, "soft-label rows sum to 1");

  // Pool of three identical members vs the single teacher.
  auto triple = teachers::build_pool({teacher, teacher, teacher});
  const auto view = relabel::augment_batch(ds.images, ds.labels, cfg.aug, 0, 0);
  const auto one = relabel::soft_labels(pool, view, cfg.temperature);
  const auto three = relabel::soft_labels(triple, view, cfg.temperature);
  c.expect(one.probabilities.data == three.probabilities.data, "identical pool equals the single teacher exactly");
  auto hcfg = cfg;
  hcfg.label_mode = "hybrid";
  const auto hybrid = posteval::train_student(ds, &triple, student, hcfg, data.test, 0);
  c.expect(hybrid.train_loss == live.train_loss && hybrid.test_accuracy == live.test_accuracy,
           "hybrid run over identical members equals the single-teacher run");

  // Cache replay.
  const auto dir = fixture::scratch("acceptance_cache");
  relabel::cache_labels(pool, ds, posteval::make_plan(cfg, ds.size(), 0), dir);
  std::vector<double> replay_losses;
  posteval::TrainOptions ro;
  ro.label_cache = dir;
  ro.observer = [&](const posteval::StepEvent& ev) { replay_losses.push_back(ev.loss); };
  const auto replayed = posteval::train_student(ds, nullptr, student, cfg, data.test, 0, ro);
  c.expect(replayed.same_trajectory(live), "cache replay reproduces the trajectory");
  c.expect(replay_losses == live_losses, "cache replay reproduces every step loss bit-for-bit");
  c.note(std::to_string(steps) + " steps checked; max |row sum - 1| " + fmt("%.1e", worst_sum));
}

// ---- 6 ----------------------------------------------------------------------

int cli(std::vector<std::string> args, std::string* out = nullptr) {
  args.insert(args.begin(), "dbench");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream os, es;
  const int code = cli::run_command(int(argv.size()), argv.data(), os, es);
  if (out) *out = os.str() + es.str();
  return code;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

void determinism(Check& c) {
  const std::vector<std::string> limits = {"--set", "limits.train_per_class=100", "--set",
                                           "limits.test_per_class=50"};
  std::vector<std::vector<posteval::RunResult>> runs;
  std::vector<std::string> teachers_bytes, set_ids;
  for (int rep = 0; rep < 2; ++rep) {
    const auto dir = fixture::scratch("acceptance_pipeline_" + std::to_string(rep));
    std::string msg;
    auto with = [&](std::vector<std::string> a) {
      a.insert(a.end(), limits.begin(), limits.end());
      return a;
    };
    if (!c.expect(cli(with({"squeeze", "--arch", "convnet-small", "--epochs", "3", "--seed", "7", "-o",
                            (dir / "teacher").string()}),
                      &msg) == 0,
                  "squeeze: " + msg))
      return;
    if (!c.expect(cli(with({"synth", "--method", "random", "--ipc", "10", "--seed", "3", "-o", (dir / "set").string()}),
                      &msg) == 0,
                  "synth: " + msg))
      return;
    if (!c.expect(cli(with({"eval", "--distilled", (dir / "set").string(), "--teacher", (dir / "teacher").string(),
                            "--eval-arch", "convnet-small", "--epochs", "20", "--set", "posteval.seeds=[0,1]", "-o",
                            (dir / "eval").string()}),
                      &msg) == 0,
                  "eval: " + msg))
      return;
    teachers_bytes.push_back(slurp(dir / "teacher" / "teacher.ckpt"));
    set_ids.push_back(posteval::distilled_id(datahub::import_distilled(dir / "set")));
    std::vector<posteval::RunResult> r;
    for (int seed : {0, 1}) r.push_back(json::parse(slurp(dir / "eval" / ("run_" + std::to_string(seed) + ".json"))));
    runs.push_back(std::move(r));
  }
  c.expect(teachers_bytes[0] == teachers_bytes[1], "teacher checkpoints identical");
  c.expect(set_ids[0] == set_ids[1], "distilled sets identical");
  for (int s = 0; s < 2; ++s) c.expect(runs[0][s].same_trajectory(runs[1][s]), "trajectories identical");
  c.note("squeeze 3 epochs -> random ipc 10 -> eval 20 epochs x 2 seeds; final " +
         fmt("%.1f", runs[0][0].final_test_accuracy) + " / " + fmt("%.1f", runs[0][1].final_test_accuracy));
}

// ---- 7 and 8 ----------------------------------------------------------------

// Shared state of the desk-scale reproductions.
struct DeskSetting {
  datahub::LoadedDataset data;
  std::optional<teachers::TeacherHandle> teacher;
  datahub::DistilledDataset set;
  std::map<std::string, std::vector<double>> finals;  // variant -> per-seed final accuracy
};

DeskSetting& desk() {
  static DeskSetting d;
  if (d.teacher) return d;
  std::string name = "cifar10";
  const auto root = cli::data_root("");
  try {
    d.data = datahub::load_dataset("cifar10", root);
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::missing_input) throw;
    name = "synth10";
    d.data = datahub::load_dataset("synth10", root);
    std::printf("note: CIFAR-10 not found under '%s'; criteria 7 and 8 run on the procedural synth10 stand-in\n",
                root.c_str());
  }
  nn::ModelSpec ms;
  ms.arch = "convnet-small";
  d.teacher = teachers::train_teacher(ms, d.data, teachers::Recipe{});
  d.set = synth::random_sample(d.data.spec, d.data.train, 10, 0);
  std::printf("note: %s teacher convnet-small, test accuracy %.1f%%\n", name.c_str(), d.teacher->test_accuracy());
  return d;
}

// The reduced protocol: 100 epochs with the base learning rate scaled by the
// epoch ratio to the full 400-epoch schedule.
posteval::PostEvalConfig reduced_protocol() {
  posteval::PostEvalConfig cfg;
  cfg.epochs = 100;
  cfg.lr = 1e-3 * 400.0 / 100.0;
  cfg.eval_every = 100;
  return cfg;
}

double mean_of(const std::vector<double>& v) {
  double s = 0;
  for (double x : v) s += x;
  return s / double(v.size());
}

const std::vector<double>& desk_runs(const std::string& variant) {
  auto& d = desk();
  auto it = d.finals.find(variant);
  if (it != d.finals.end()) return it->second;
  auto cfg = reduced_protocol();
  if (variant == "hard") cfg.label_mode = "hard";
  if (variant == "bs500") cfg.batch_size = 500;
  cfg = cfg.resolve(false);
  auto pool = teachers::build_pool({*d.teacher});
  std::vector<double> out;
  for (std::uint64_t seed : {0, 1, 2}) {
    const auto r = posteval::train_student(d.set, cfg.label_mode == "hard" ? nullptr : &pool, d.teacher->spec(), cfg,
                                           d.data.test, seed);
    out.push_back(r.final_test_accuracy);
  }
  return d.finals.emplace(variant, out).first->second;
}

std::string accs(const std::vector<double>& v) {
  std::string s;
  for (double x : v) s += (s.empty() ? "" : " ") + fmt("%.1f", x);
  return s;
}

void soft_vs_hard(Check& c) {
  const auto& soft = desk_runs("soft50");
  const auto& hard = desk_runs("hard");
  const double gap = mean_of(soft) - mean_of(hard);
  c.expect(gap >= 10.0, "soft - hard >= 10 points");
  c.note("soft " + fmt("%.2f", mean_of(soft)) + " [" + accs(soft) + "] vs hard " + fmt("%.2f", mean_of(hard)) + " [" +
         accs(hard) + "], gap " + fmt("%.2f", gap));
}

void batch_size(Check& c) {
  const auto& bs50 = desk_runs("soft50");
  const auto& bs500 = desk_runs("bs500");
  c.expect(mean_of(bs50) > mean_of(bs500), "BS 50 > BS 500");
  c.note("BS 50 " + fmt("%.2f", mean_of(bs50)) + " [" + accs(bs50) + "] vs BS 500 (capped at |S| = " +
         std::to_string(desk().set.size()) + ") " + fmt("%.2f", mean_of(bs500)) + " [" + accs(bs500) + "]");
}

// ---- 9 ----------------------------------------------------------------------

void recovery(Check& c) {
  const auto t = fixture::toy_teacher(2, 8);
  const auto labels = synth::balanced_labels(2, 4);
  synth::RecoverConfig cfg;
  const auto out = synth::recover_optimize(t, cfg, labels);
  double worst = 0;
  for (const auto& g : out.groups) {
    const double reduction = 1 - g.final_total / g.initial_total;
    worst = std::max(worst, g.final_total / g.initial_total);
    c.expect(reduction >= 0.5, "class " + std::to_string(g.cls) + " loss reduced by >= 50%");
  }
  cfg.iterations = 0;
  const auto zero = synth::recover_optimize(t, cfg, labels);
  const auto init = synth::detail::initial_images(t, cfg, labels, {}, 2);
  c.expect(zero.dataset.images.data == init.data, "iterations=0 returns the initialization bit-exactly");
  for (const auto& g : zero.groups) c.expect(g.final_total == g.initial_total, "iterations=0 leaves the loss unchanged");
  c.note(std::to_string(synth::RecoverConfig{}.iterations) + " iterations; worst final/initial loss ratio " +
         fmt("%.3f", worst));
}

// ---- 10 ---------------------------------------------------------------------

void reporting(Check& c) {
  using namespace evalsuite;
  CellResult cell;
  cell.coords = {"sre2l", "cifar10", 10, "resnet18", "soft", "kl", 1, 50};
  cell.accuracies = {40.2};
  finalize_cell(cell);
  const auto d = rectification_delta({"sre2l", "cifar10", 10, 21.3, "reported"}, cell);
  c.expect(d.value == 18.9 && d.arrow == "↑" && d.text() == "(18.9 ↑)", "21.3 -> 40.2 gives (18.9 ↑)");

  Rng rng = make_rng(99, {});
  for (int t = 0; t < 1000; ++t) {
    const int n = 1 + int(uniform_index(rng, 15));
    std::vector<EfficiencyPoint> pts;
    for (int i = 0; i < n; ++i)
      pts.push_back({"m" + std::to_string(i), double(uniform_index(rng, 8)), double(uniform_index(rng, 8)), false});
    mark_dominated(pts);
    bool front = false;
    for (const auto& p : pts) {
      bool beaten = false;
      for (const auto& q : pts) beaten |= q.seconds < p.seconds && q.accuracy > p.accuracy;
      c.expect(p.dominated == beaten, "dominance flag matches the definition");
      front |= !p.dominated;
    }
    c.expect(front, "non-empty Pareto front");
  }

  auto a = cell, b = cell;
  a.config_fingerprint = "protocol-a";
  b.config_fingerprint = "protocol-b";
  b.coords.method = "other";
  c.expect(kind_of([&] { check_comparable(aggregate({a, b}), false); }) == ErrorKind::config,
           "mixed fingerprints refused");
  c.expect(!kind_of([&] { check_comparable(aggregate({a, b}), true); }).has_value(), "override accepted");
  b.config_fingerprint = "protocol-a";
  c.expect(!kind_of([&] { check_comparable(aggregate({a, b}), false); }).has_value(), "matching fingerprints accepted");
  c.note("delta " + d.text() + "; 1000 random point sets");
}

struct Criterion {
  int id;
  const char* name;
  std::function<void(Check&)> run;
};

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> all = {
      {1, "scheduler exactness", scheduler},
      {2, "loss suite", loss_suite},
      {3, "BN-loss suite", bn_suite},
      {4, "selection oracle", selection_oracle},
      {5, "relabel contracts", relabel_contracts},
      {6, "pipeline determinism", determinism},
      {7, "soft vs hard labels", soft_vs_hard},
      {8, "batch size 50 vs 500", batch_size},
      {9, "recovery sanity", recovery},
      {10, "reporting fidelity", reporting},
  };
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
  int failed = 0;
  for (const auto& cr : all) {
    if (!only.empty() && !only.count(cr.id)) continue;
    Check c;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      cr.run(c);
    } catch (const std::exception& e) {
      c.failures.push_back(std::string("exception: ") + e.what());
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool ok = c.failures.empty();
    failed += !ok;
    std::string detail;
    for (const auto& n : c.notes) detail += (detail.empty() ? "" : "; ") + n;
    std::printf("%s criterion %d (%s) %.1fs: %s\n", ok ? "PASS" : "FAIL", cr.id, cr.name, secs, detail.c_str());
    for (const auto& f : c.failures) std::printf("    failed check: %s\n", f.c_str());
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
