// Acceptance run: one PASS/FAIL line per criterion. Pass criterion numbers
// as arguments to run a subset.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <sys/wait.h>
#include <unistd.h>

#include <nlohmann/json.hpp>

#include "toolgcn/dataset.hpp"
#include "toolgcn/evalharness.hpp"
#include "toolgcn/partition.hpp"
#include "toolgcn/pipeline.hpp"
#include "toolgcn/rng.hpp"
#include "toolgcn/segment.hpp"
#include "toolgcn/synth.hpp"
#include "toolgcn/trainer.hpp"

using namespace toolgcn;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string pct(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f%%", 100.0 * v);
  return buf;
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), f, v);
  return buf;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

class ScratchDir {
 public:
  explicit ScratchDir(const std::string& tag)
      : path_(fs::temp_directory_path() / ("toolgcn_accept_" + tag + "_" + std::to_string(::getpid()))) {
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~ScratchDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

RunConfig desk_config() { return load_run_config(fs::path(TOOLGCN_SOURCE_DIR) / "configs" / "desk.json"); }

std::vector<std::size_t> all_videos(const Dataset& d) {
  std::vector<std::size_t> v(d.videos.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = i;
  return v;
}

// 1. Full default model against central differences.
Outcome gradient_correctness() {
  const RunConfig c = load_run_config(fs::path(TOOLGCN_SOURCE_DIR) / "configs" / "paper.json");
  const auto t0 = std::chrono::steady_clock::now();
  const GradCheckReport r = model_grad_check(c.model, default_tool_skeleton(), c.gradcheck, c.train.window);
  const double s = seconds_since(t0);
  const bool ok = r.passed && c.model.channels.size() == 9 && c.gradcheck.tol == 1e-4 && c.gradcheck.step == 1e-5 &&
                  c.gradcheck.samples == 2 && s < 300.0;
  return {ok, std::to_string(c.model.channels.size()) + "-unit default model, " + std::to_string(r.checked) +
                  " elements, max error " + fmt("%.2e", r.max_error) + " (tol 1e-4, h 1e-5, 2 samples), " +
                  std::to_string(r.kinks) + " kink-crossing elements replaced, " +
                  std::to_string(r.forced.size()) + " checked across a kink, " + fmt("%.0f", s) + " s"};
}

// 2. Reference pose labels and exhaustiveness on random poses.
Outcome partition_oracle() {
  const SkeletonSpec sk = default_tool_skeleton();
  const Tensor a = build_adjacency(sk);
  auto label = [](const PartitionedAdjacency& p, std::size_t i, std::size_t j) {
    for (std::size_t k = 0; k < p.partitions(); ++k)
      if (p.matrices.at({k, i, j}) != 0.0) return static_cast<int>(k);
    return -1;
  };
  auto exhaustive = [&](const PartitionedAdjacency& p) {
    for (std::size_t i = 0; i < 5; ++i)
      for (std::size_t j = 0; j < 5; ++j) {
        double s = 0.0;
        for (std::size_t k = 0; k < p.partitions(); ++k) s += p.matrices.at({k, i, j});
        if (s != a.at({i, j}) + (i == j ? 1.0 : 0.0)) return false;
      }
    return true;
  };
  // Arm (0,0), wrist (0,1), shaft (0,2), effectors (+-0.5,3): the center is
  // (0,1.8), so the shaft (0.2 away) is closest; wrist 0.8, effectors 1.3.
  const std::vector<Point2> ref{{0, 0}, {0, 1}, {0, 2}, {-0.5, 3}, {0.5, 3}};
  const auto p = spatial_config_partition(sk, ref);
  bool ok = p.partitions() == 3 && exhaustive(p);
  const std::vector<std::tuple<std::size_t, std::size_t, int>> want{
      {2, 2, kRootGroup},    {2, 1, kCentrifugal}, {2, 3, kCentrifugal}, {2, 4, kCentrifugal},
      {1, 2, kCentripetal},  {1, 0, kCentrifugal}, {0, 1, kCentripetal}, {3, 2, kCentripetal},
      {4, 2, kCentripetal},  {0, 0, kRootGroup},   {1, 1, kRootGroup},   {0, 2, -1}};
  for (const auto& [i, j, k] : want) ok = ok && label(p, i, j) == k;
  Rng rng(2024);
  std::size_t good = 0;
  for (int t = 0; t < 1000; ++t) {
    std::vector<Point2> pose(5);
    for (auto& q : pose) q = {rng.uniform(-1, 1), rng.uniform(-1, 1)};
    good += exhaustive(spatial_config_partition(sk, pose));
  }
  ok = ok && good == 1000;
  return {ok, "reference pose labels " + std::string(ok ? "match" : "differ") + "; sum of partitions equals A+I on " +
                  std::to_string(good) + "/1000 random poses"};
}

// 3. segment() against a frame-by-frame enumerator.
Outcome segmentation_oracle() {
  Rng rng(3033);
  std::size_t videos_ok = 0, windows = 0, padded = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t frames = 1 + rng.below(200), window = 1 + rng.below(100), step = 1 + rng.below(5);
    const std::size_t tools = 1 + rng.below(2);
    PoseSequence seq("toy" + std::to_string(trial), frames, tools, 5);
    seq.normalized = true;
    for (std::size_t f = 0; f < frames; ++f)
      for (std::size_t m = 0; m < tools; ++m)
        for (std::size_t v = 0; v < 5; ++v) {
          seq.x(f, m, v) = rng.uniform(-1, 1);
          seq.y(f, m, v) = rng.uniform(-1, 1);
          seq.confidence(f, m, v) = rng.uniform();
        }
    Transcript t;
    t.video_id = seq.video_id;
    for (std::size_t f = rng.below(12); f < frames;) {
      const std::size_t end = std::min(frames - 1, f + rng.below(40));
      t.entries.push_back({f, end, static_cast<int>(rng.below(10))});
      f = end + 1 + (rng.bernoulli(0.3) ? rng.below(10) : 0);
    }
    const auto got = segment(seq, t, {window, step});
    std::size_t k = 0;
    bool ok = true;
    for (std::size_t f = 0; f < frames && ok; f += step) {
      int lab = -1;
      for (const auto& e : t.entries)
        if (e.start_frame <= f && f <= e.end_frame) lab = e.gesture;
      if (lab < 0) continue;
      if (k >= got.size() || got[k].end_frame != f || got[k].label != lab) {
        ok = false;
        break;
      }
      if (f + 1 < window) ++padded;
      for (std::size_t i = 0; i < window && ok; ++i) {
        const long want = static_cast<long>(f) - static_cast<long>(window) + 1 + static_cast<long>(i);
        const std::size_t src = want < 0 ? 0 : static_cast<std::size_t>(want);
        for (std::size_t v = 0; v < 5; ++v)
          for (std::size_t m = 0; m < tools; ++m)
            ok = ok && got[k].data.at({0, i, v, m}) == seq.x(src, m, v) &&
                 got[k].data.at({1, i, v, m}) == seq.y(src, m, v) &&
                 got[k].data.at({2, i, v, m}) == seq.confidence(src, m, v);
      }
      ++k;
    }
    ok = ok && k == got.size();
    videos_ok += ok;
    windows += got.size();
  }
  return {videos_ok == 50 && padded > 0, std::to_string(videos_ok) + "/50 videos match (" + std::to_string(windows) +
                                             " windows, " + std::to_string(padded) + " front-padded)"};
}

// 4. Schedule, weight decay and fold plan.
Outcome protocol_fidelity() {
  const TrainConfig cfg;
  const double l5 = lr_at(5, cfg), l15 = lr_at(15, cfg), l25 = lr_at(25, cfg);
  const bool lr_ok =
      std::abs(l5 - 0.01) < 1e-15 && std::abs(l15 - 0.001) < 1e-15 && std::abs(l25 - 0.0001) < 1e-15;

  ModelParams p;
  p.add("w", Tensor({1}, {1.0}), ParamKind::kWeight);
  std::vector<Tensor> vel;
  sgd_step(p, std::vector<Tensor>{Tensor({1}, {0.0})}, 0.01, 0.0005, 0.0, vel);
  const double w = p.at("w")[0];
  const bool wd_ok = std::abs(w - 0.999995) < 1e-12;

  SynthOptions o;
  o.trials = 3;
  o.min_duration = 5;
  o.max_duration = 6;
  const Manifest m = generate_synthetic(o).manifest;
  const FoldPlan plan = build_louo_folds(m);
  bool plan_ok = plan.folds.size() == 8 && plan.warnings.empty();
  std::multiset<std::string> tested;
  for (const auto& f : plan.folds) {
    std::set<std::string> train(f.train_videos.begin(), f.train_videos.end());
    for (const auto& v : f.test_videos) {
      tested.insert(v);
      plan_ok = plan_ok && !train.count(v);
    }
    for (const auto& v : f.train_videos)
      for (const auto& mv : m.videos)
        if (mv.video_id == v) plan_ok = plan_ok && mv.subject_id != f.subject;
    plan_ok = plan_ok && f.test_videos.size() + f.train_videos.size() == m.videos.size();
  }
  plan_ok = plan_ok && tested.size() == m.videos.size() && std::set<std::string>(tested.begin(), tested.end()).size() ==
                                                                m.videos.size();
  try {
    check_fold_plan(plan, m);
  } catch (const std::exception&) {
    plan_ok = false;
  }
  return {lr_ok && wd_ok && plan_ok, "lr " + fmt("%g", l5) + "/" + fmt("%g", l15) + "/" + fmt("%g", l25) +
                                         " at epochs 5/15/25; decayed weight " + fmt("%.9f", w) + "; " +
                                         std::to_string(plan.folds.size()) + " LOUO folds, disjoint and covering " +
                                         (plan_ok ? "yes" : "no")};
}

// 5. Desk-scale learning sanity.
Outcome learning_sanity() {
  const auto t0 = std::chrono::steady_clock::now();
  const RunConfig c = desk_config();
  const Dataset data = to_dataset(generate_synthetic(SynthOptions{}));

  TrainOptions to;
  to.train_videos = all_videos(data);
  to.measure_train_accuracy = true;
  const TrainResult full = train(data, c.model, default_tool_skeleton(), c.train, to);
  const double train_acc = full.train_accuracy.value_or(0.0);
  std::cerr << "  training accuracy " << pct(train_acc) << " (" << fmt("%.0f", seconds_since(t0)) << " s)\n";

  CrossvalOptions o;
  o.model = c.model;
  o.train = c.train;
  o.on_fold = [](const FoldResult& f) {
    std::cerr << "  fold " << f.subject << ": " << (f.failed ? "FAILED " + f.error : pct(f.accuracy)) << "\n";
  };
  const CrossvalReport cv = crossval(data, o);
  o.shuffle_labels = true;
  const CrossvalReport control = crossval(data, o);
  const double s = seconds_since(t0);

  const double avg = cv.average.value_or(0.0), ctl = control.average.value_or(-1.0);
  const bool ok = train_acc >= 0.95 && cv.folds.size() == 8 && cv.average && avg >= 0.10 + 0.40 &&
                  control.average && ctl >= 0.05 && ctl <= 0.18 && s < 1800.0;
  return {ok, "training " + pct(train_acc) + " (need >= 95%); 8-fold average " + pct(avg) +
                  " (need >= 50%); shuffled-label control " + pct(ctl) + " (need 5-18%); " + fmt("%.0f", s) + " s"};
}

// 6. Byte-identical prediction tables and resume equivalence.
Outcome determinism() {
  RunConfig c = desk_config();
  c.train.epochs = 2;
  const Dataset data = to_dataset(generate_synthetic(SynthOptions{}));
  CrossvalOptions o;
  o.model = c.model;
  o.train = c.train;
  ScratchDir dir("determinism");
  emit_report(crossval(data, o), dir.path() / "a");
  emit_report(crossval(data, o), dir.path() / "b");
  const std::string ta = read_file(dir.path() / "a" / "predictions.csv");
  const bool tables = !ta.empty() && ta == read_file(dir.path() / "b" / "predictions.csv");
  const std::size_t rows = static_cast<std::size_t>(std::count(ta.begin(), ta.end(), '\n')) - 1;

  c.train.epochs = 4;
  TrainOptions to;
  to.train_videos = all_videos(data);
  const TrainResult whole = train(data, c.model, default_tool_skeleton(), c.train, to);
  to.out_dir = dir.path() / "run";
  to.stop_after = 2;
  train(data, c.model, default_tool_skeleton(), c.train, to);
  TrainOptions rest;
  rest.train_videos = all_videos(data);
  rest.resume = dir.path() / "run" / "checkpoints" / "epoch_002.ckpt";
  const TrainResult resumed = train(data, c.model, default_tool_skeleton(), c.train, rest);
  bool same = resumed.state.history == whole.state.history && resumed.state.params == whole.state.params &&
              resumed.state.velocity.size() == whole.state.velocity.size();
  for (std::size_t i = 0; same && i < whole.state.velocity.size(); ++i)
    same = resumed.state.velocity[i] == whole.state.velocity[i];
  return {tables && same, std::string("prediction tables ") + (tables ? "byte-identical" : "differ") + " (" +
                              std::to_string(rows) + " rows x 2 runs); resume at epoch 2 of 4 " +
                              (same ? "matches" : "differs from") + " the uninterrupted run elementwise"};
}

int run_cli(const fs::path& cwd, const std::string& args, const fs::path& log) {
  const std::string cmd = "cd '" + cwd.string() + "' && '" + std::string(TOOLGCN_CLI) + "' " + args + " >'" +
                          log.string() + "' 2>'" + log.string() + ".err'";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

// 7. The crossval command on files in the documented formats, with the
// protocol values of the paper configuration.
Outcome protocol_run() {
  ScratchDir dir("protocol");
  const fs::path cwd = dir.path();
  // Eight subjects, short gestures so 8 x 30 epochs of step-3 windows fit
  // in a few minutes; the network is narrowed for the same reason.
  if (run_cli(cwd, "synth --out data --classes 10 --subjects 8 --trials 1 --min-duration 6 --max-duration 9",
              cwd / "synth.log") != 0)
    return {false, "synth command failed"};
  nlohmann::json cfg = load_run_config(fs::path(TOOLGCN_SOURCE_DIR) / "configs" / "paper.json").to_json();
  cfg["model"]["channels"] = {4, 4, 4, 8, 8, 8, 16, 16, 16};
  std::ofstream(cwd / "protocol.json") << cfg.dump(2);
  const int code = run_cli(cwd, "crossval --config protocol.json --data data --out cv", cwd / "cv.log");
  const std::string out = read_file(cwd / "cv.log");
  if (code != 0) return {false, "crossval exited " + std::to_string(code) + ": " + read_file(cwd / "cv.log.err")};

  const RunConfig ran = load_run_config(cwd / "cv" / "run.json");
  const TrainConfig& t = ran.train;
  bool ok = t.window == 90 && t.epochs == 30 && t.base_lr == 0.01 && t.lr_step == 10 && t.lr_factor == 0.1 &&
            t.train_step == 3 && t.weight_decay == 0.0005;

  const Dataset data = load_dataset(cwd / "data");
  const CrossvalReport rep = load_report(cwd / "cv" / "report.json");
  ok = ok && rep.folds.size() == 8 && rep.average.has_value();
  for (const auto& f : rep.folds) {
    std::vector<std::size_t> test;
    for (std::size_t i = 0; i < data.videos.size(); ++i)
      if (data.videos[i].subject_id == f.subject) test.push_back(i);
    ok = ok && f.predictions.size() == training_windows(data, test, 90, kEvalStep).size();
    std::ifstream metrics(cwd / "cv" / "folds" / ("fold_" + f.subject) / "metrics.csv");
    std::string line;
    std::getline(metrics, line);
    std::size_t epochs = 0;
    while (std::getline(metrics, line)) {
      const double lr = std::stod(line.substr(line.find(',') + 1));
      ok = ok && std::abs(lr - lr_at(epochs, t)) < 1e-15;
      ++epochs;
    }
    ok = ok && epochs == 30;
  }
  const auto at = out.find("average accuracy: ");
  ok = ok && at != std::string::npos && out.find("over 8 folds", at) != std::string::npos;
  std::string line = at == std::string::npos ? "no average line" : out.substr(at, out.find('\n', at) - at);
  return {ok, "67.86% on JIGSAWS Suturing is not reproducible here (dataset not available); crossval on "
              "documented-format files for 8 subjects ran the protocol (90-frame windows, step 3, 30 epochs, "
              "lr 0.01 x0.1 every 10, LOUO) and printed \"" +
                  line + "\""};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"gradient correctness", gradient_correctness}, {"partition oracle", partition_oracle},
      {"segmentation oracle", segmentation_oracle},   {"protocol fidelity", protocol_fidelity},
      {"learning sanity", learning_sanity},           {"determinism", determinism},
      {"protocol run", protocol_run}};
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));

  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int n = static_cast<int>(i) + 1;
    if (!only.empty() && !only.count(n)) continue;
    Outcome r;
    try {
      r = criteria[i].second();
    } catch (const std::exception& e) {
      r = {false, std::string("error: ") + e.what()};
    }
    failed += !r.pass;
    std::cout << (r.pass ? "PASS" : "FAIL") << " criterion " << n << " (" << criteria[i].first << "): " << r.detail
              << std::endl;
  }
  return failed ? 1 : 0;
}
