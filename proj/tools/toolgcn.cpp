// toolgcn: synthetic data, gradient checks, training, evaluation and
// leave-one-user-out cross-validation from the command line.
//
// Exit codes: 0 success, 1 invalid input or configuration, 2 numerical
// failure, 3 I/O failure.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include <CLI11.hpp>

#include "toolgcn/error.hpp"
#include "toolgcn/evalharness.hpp"
#include "toolgcn/pipeline.hpp"
#include "toolgcn/synth.hpp"

namespace fs = std::filesystem;
using namespace toolgcn;

namespace {

constexpr const char* kOutRootEnv = "TOOLGCN_OUT_ROOT";
constexpr const char* kFaultEnv = "TOOLGCN_INJECT_FAULT";

fs::path default_out(const std::string& command) {
  const char* root = std::getenv(kOutRootEnv);
  return fs::path(root && *root ? root : "runs") / command;
}

bool non_empty_dir(const fs::path& p) {
  std::error_code ec;
  return fs::is_directory(p, ec) && !fs::is_empty(p, ec);
}

void prepare_out(const fs::path& out, bool force) {
  if (fs::exists(out) && !fs::is_directory(out))
    throw ValidationError("output path " + out.string() + " exists and is not a directory");
  if (non_empty_dir(out) && !force)
    throw ValidationError("output directory " + out.string() + " is not empty (use --force to overwrite)");
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) throw IoError("cannot create " + out.string() + ": " + ec.message());
}

std::optional<Primitive> parse_primitive(const std::string& name) {
  for (int p = static_cast<int>(Primitive::kLeaf); p <= static_cast<int>(Primitive::kSum); ++p)
    if (name == primitive_name(static_cast<Primitive>(p))) return static_cast<Primitive>(p);
  throw ValidationError("unknown primitive '" + name + "'");
}

std::string percent(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f%%", 100.0 * v);
  return buf;
}

struct Flags {
  std::string config;
  std::string data;
  std::string out;
  std::string params;
  std::string fold;
  std::string resume;
  std::uint64_t seed = 0;
  std::size_t epochs = 0;
  std::size_t jobs = 1;
  double tol = 0.0;
  std::size_t max_elements = 0;
  bool force = false;
  bool shuffle_labels = false;
  std::string fault;

  // synth
  std::size_t classes = 10, subjects = 8, trials = 3, min_duration = 0, max_duration = 0;
};

// Effective config: defaults <- config file <- flags that were given.
RunConfig effective_config(const CLI::App& cmd, const Flags& f) {
  RunConfig c = f.config.empty() ? RunConfig{} : load_run_config(f.config);
  auto given = [&](const char* name) {
    const CLI::Option* o = cmd.get_option_no_throw(name);
    return o != nullptr && o->count() > 0;
  };
  if (given("--data")) c.data = f.data;
  if (given("--out")) c.out = f.out;
  if (given("--params")) c.params = f.params;
  if (given("--fold")) c.fold = f.fold;
  if (given("--seed")) c.train.seed = c.gradcheck.seed = f.seed;
  if (given("--epochs")) c.train.epochs = f.epochs;
  if (given("--jobs")) c.jobs = f.jobs;
  if (given("--tol")) c.gradcheck.tol = f.tol;
  if (given("--max-elements")) c.gradcheck.max_elements = f.max_elements;
  if (given("--shuffle-labels")) c.shuffle_labels = true;
  c.train.validate();
  if (c.jobs < 1) throw ValidationError("--jobs must be >= 1");
  return c;
}

fs::path out_dir(const RunConfig& c, const std::string& command) {
  return c.out ? fs::path(*c.out) : default_out(command);
}

Dataset require_dataset(const RunConfig& c) {
  if (!c.data) throw ValidationError("no data directory (use --data or the config key 'data')");
  std::cerr << "loading dataset " << *c.data << "\n";
  return load_dataset(*c.data);
}

void check_model_fits(const ModelConfig& model, const Dataset& data) {
  if (model.classes != data.manifest.vocabulary.size())
    throw ValidationError("model has " + std::to_string(model.classes) + " classes but the vocabulary has " +
                          std::to_string(data.manifest.vocabulary.size()) + " (set model.classes)");
  if (model.instances != data.manifest.tools || model.joints != data.manifest.joints)
    throw ValidationError("model expects " + std::to_string(model.instances) + " tools x " +
                          std::to_string(model.joints) + " joints, dataset has " +
                          std::to_string(data.manifest.tools) + " x " + std::to_string(data.manifest.joints));
}

void print_epoch(const std::string& tag, const EpochMetrics& m) {
  std::fprintf(stderr, "%sepoch %zu lr %g loss %.4f acc %.3f (%zu samples)%s\n", tag.c_str(), m.epoch, m.lr,
               m.loss, m.accuracy, m.samples,
               m.val_accuracy ? (" val " + percent(*m.val_accuracy)).c_str() : "");
}

int run_synth(const CLI::App& cmd, const Flags& f) {
  const fs::path out = cmd.count("--out") ? fs::path(f.out) : default_out("synth");
  if (non_empty_dir(out)) {
    if (!f.force) throw ValidationError("output directory " + out.string() + " is not empty (use --force)");
    for (const char* name : {"manifest.json", "run.json", "poses", "transcriptions"}) fs::remove_all(out / name);
  }
  SynthOptions o;
  o.classes = f.classes;
  o.subjects = f.subjects;
  o.trials = f.trials;
  if (cmd.count("--seed")) o.seed = f.seed;
  if (cmd.count("--min-duration")) o.min_duration = f.min_duration;
  if (cmd.count("--max-duration")) o.max_duration = f.max_duration;
  fs::create_directories(out);
  RunManifest rm;
  rm.command = "synth";
  rm.config.train.seed = o.seed;
  rm.output = out.string();
  rm.timestamp = utc_timestamp();
  rm.inputs = {"classes=" + std::to_string(o.classes), "subjects=" + std::to_string(o.subjects),
               "trials=" + std::to_string(o.trials), "min_duration=" + std::to_string(o.min_duration),
               "max_duration=" + std::to_string(o.max_duration)};
  write_run_manifest(rm, out / "run.json");
  const Manifest m = synth_dataset(o, out);
  std::cerr << "wrote " << m.videos.size() << " videos, " << m.subjects().size() << " subjects, "
            << m.vocabulary.size() << " gestures to " << out << "\n";
  return 0;
}

int run_gradcheck(const CLI::App& cmd, const Flags& f) {
  RunConfig c = effective_config(cmd, f);
  std::string fault = f.fault;
  if (fault.empty())
    if (const char* env = std::getenv(kFaultEnv)) fault = env;
  if (!fault.empty()) {
    testing::inject_adjoint_fault(parse_primitive(fault));
    std::cerr << "fault injected into the " << fault << " adjoint\n";
  }
  if (c.out) {
    prepare_out(*c.out, f.force);
    write_run_manifest({"gradcheck", c, {f.config}, *c.out, utc_timestamp()}, fs::path(*c.out) / "run.json");
  }
  std::cerr << "gradient check: " << c.model.channels.size() << " units, tol " << c.gradcheck.tol << ", step "
            << c.gradcheck.step << ", " << c.gradcheck.samples << " samples\n";
  const GradCheckReport r = model_grad_check(c.model, resolve_skeleton(c), c.gradcheck, c.train.window);
  std::cout << r.summary() << "\n";
  if (c.out) {
    nlohmann::json j = {{"passed", r.passed}, {"checked", r.checked}, {"max_error", r.max_error},
                        {"tol", c.gradcheck.tol}, {"kinks", r.kinks},
                        {"checked_across_kink", r.forced}};
    for (const auto& e : r.worst)
      j["worst"].push_back({{"param", e.param}, {"index", e.index}, {"analytic", e.analytic},
                            {"numeric", e.numeric}, {"error", e.error}});
    std::ofstream(fs::path(*c.out) / "gradcheck.json") << j.dump(2) << "\n";
  }
  return r.passed ? 0 : 2;
}

int run_train(const CLI::App& cmd, const Flags& f) {
  RunConfig c = effective_config(cmd, f);
  const Dataset data = require_dataset(c);
  check_model_fits(c.model, data);
  const fs::path out = out_dir(c, "train");
  prepare_out(out, f.force || !f.resume.empty());
  write_run_manifest({"train", c, {*c.data, f.config, f.resume}, out.string(), utc_timestamp()}, out / "run.json");

  TrainOptions to;
  for (std::size_t i = 0; i < data.videos.size(); ++i) {
    if (c.fold && (data.videos[i].subject_id == *c.fold || "Subj" + data.videos[i].subject_id == *c.fold))
      to.validation_videos.push_back(i);
    else
      to.train_videos.push_back(i);
  }
  if (c.fold && to.validation_videos.empty()) throw ValidationError("no videos for subject '" + *c.fold + "'");
  to.out_dir = out;
  if (!f.resume.empty()) to.resume = f.resume;
  to.measure_train_accuracy = true;
  to.on_epoch = [](const EpochMetrics& m) { print_epoch("", m); };
  const TrainResult r = train(data, c.model, resolve_skeleton(c), c.train, to);
  save_params(r.state.params, c.model, out / "params.bin");
  nlohmann::json summary = {{"epochs", r.state.epoch},
                            {"steps", r.state.step},
                            {"windows", r.windows},
                            {"train_accuracy", *r.train_accuracy},
                            {"final_loss", r.state.history.empty() ? 0.0 : r.state.history.back().loss}};
  if (r.state.best_val_accuracy) summary["best_val_accuracy"] = *r.state.best_val_accuracy;
  std::ofstream(out / "summary.json") << summary.dump(2) << "\n";
  std::cerr << "training accuracy " << percent(*r.train_accuracy) << "; parameters in " << (out / "params.bin")
            << "\n";
  return 0;
}

int run_eval(const CLI::App& cmd, const Flags& f) {
  RunConfig c = effective_config(cmd, f);
  if (!c.params) throw ValidationError("no parameter file (use --params or the config key 'params')");
  const Dataset data = require_dataset(c);
  const ModelConfig model_cfg = read_params_config(*c.params);
  check_model_fits(model_cfg, data);
  const fs::path out = out_dir(c, "eval");
  prepare_out(out, f.force);
  c.model = model_cfg;
  write_run_manifest({"eval", c, {*c.data, *c.params}, out.string(), utc_timestamp()}, out / "run.json");

  StgcnModel model(model_cfg, resolve_skeleton(c), load_params(*c.params, model_cfg));
  std::vector<std::size_t> videos;
  for (std::size_t i = 0; i < data.videos.size(); ++i)
    if (!c.fold || data.videos[i].subject_id == *c.fold || "Subj" + data.videos[i].subject_id == *c.fold)
      videos.push_back(i);
  if (videos.empty()) throw ValidationError("no videos for subject '" + *c.fold + "'");

  CrossvalReport report;
  report.vocabulary = data.manifest.vocabulary.labels();
  report.config_digest = model_cfg.digest();
  report.seed = c.train.seed;
  FoldResult fold = evaluate_fold(model, data, videos, c.train.window);
  fold.subject = c.fold ? *c.fold : "all";
  report.folds.push_back(std::move(fold));
  aggregate(report);
  emit_report(report, out);
  std::cout << "accuracy: " << percent(report.folds.front().accuracy) << " on "
            << report.folds.front().predictions.size() << " segments (chance " << percent(report.chance) << ")\n";
  return 0;
}

int run_crossval(const CLI::App& cmd, const Flags& f) {
  RunConfig c = effective_config(cmd, f);
  const Dataset data = require_dataset(c);
  check_model_fits(c.model, data);
  const fs::path out = out_dir(c, "crossval");
  prepare_out(out, f.force);
  write_run_manifest({"crossval", c, {*c.data, f.config}, out.string(), utc_timestamp()}, out / "run.json");

  CrossvalOptions o;
  o.model = c.model;
  o.train = c.train;
  o.skeleton = resolve_skeleton(c);
  o.fold = c.fold;
  o.shuffle_labels = c.shuffle_labels;
  o.jobs = c.jobs;
  o.measure_train_accuracy = true;
  o.work_dir = out / "folds";
  o.on_epoch = [](const std::string& subject, const EpochMetrics& m) { print_epoch("[" + subject + "] ", m); };
  o.on_fold = [](const FoldResult& r) {
    if (r.failed)
      std::cerr << "fold " << r.subject << " FAILED: " << r.error << "\n";
    else
      std::cerr << "fold " << r.subject << ": " << percent(r.accuracy) << " on " << r.predictions.size()
                << " segments\n";
  };
  for (const auto& w : build_louo_folds(data.manifest).warnings) std::cerr << "warning: " << w << "\n";
  const CrossvalReport report = crossval(data, o);
  emit_report(report, out);
  if (report.average)
    std::cout << "average accuracy: " << percent(*report.average) << " over " << report.folds.size()
              << " folds (pooled " << percent(report.pooled) << "; chance " << percent(report.chance) << ")\n";
  else
    std::cout << "average accuracy: withheld (a fold failed); chance " << percent(report.chance) << "\n";
  if (report.ok()) return 0;
  for (const auto& fr : report.folds)
    if (fr.failed && fr.error_kind == "numerical") return 2;
  for (const auto& fr : report.folds)
    if (fr.failed && fr.error_kind == "io") return 3;
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
#if defined(__GLIBC__)
  // Keep freed tensor buffers in the heap; the training loop reallocates
  // the same sizes every step.
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
  CLI::App app{"ST-GCN surgical gesture recognition on tool pose sequences"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kToolVersion);
  Flags f;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", f.config, "JSON config file (or a run.json to repeat a run)");
    sub->add_option("--seed", f.seed, "Random seed");
    sub->add_option("--out", f.out, std::string("Output directory (default $") + kOutRootEnv + "/<command>)");
    sub->add_flag("--force", f.force, "Overwrite a non-empty output directory");
  };
  auto data_opts = [&](CLI::App* sub) {
    sub->add_option("--data", f.data, "Dataset directory containing manifest.json");
    sub->add_option("--fold", f.fold, "Held-out subject (e.g. B or SubjB)");
  };

  auto* synth = app.add_subcommand("synth", "Generate a synthetic pose/transcript dataset");
  common(synth);
  synth->add_option("--classes", f.classes, "Gesture classes")->check(CLI::Range(1, 100));
  synth->add_option("--subjects", f.subjects, "Subjects")->check(CLI::Range(1, 25));
  synth->add_option("--trials", f.trials, "Trials per subject")->check(CLI::Range(1, 99));
  synth->add_option("--min-duration", f.min_duration, "Shortest gesture, frames");
  synth->add_option("--max-duration", f.max_duration, "Longest gesture, frames");

  auto* grad = app.add_subcommand("gradcheck", "Check model gradients against finite differences");
  common(grad);
  grad->add_option("--tol", f.tol, "Tolerance on |analytic - numeric| / max(1, |numeric|)");
  grad->add_option("--max-elements", f.max_elements, "Elements to check (0 = all)");
  grad->add_option("--inject-fault", f.fault, "Test hook: negate one primitive's adjoint")->group("");

  auto* tr = app.add_subcommand("train", "Train one model");
  common(tr);
  data_opts(tr);
  tr->add_option("--epochs", f.epochs, "Override the number of epochs");
  tr->add_option("--resume", f.resume, "Continue from a checkpoint");

  auto* ev = app.add_subcommand("eval", "Evaluate saved parameters");
  common(ev);
  data_opts(ev);
  ev->add_option("--params", f.params, "Parameter file written by train");

  auto* cv = app.add_subcommand("crossval", "Leave-one-user-out cross-validation");
  common(cv);
  data_opts(cv);
  cv->add_option("--epochs", f.epochs, "Override the number of epochs");
  cv->add_option("--jobs", f.jobs, "Folds trained in parallel")->check(CLI::PositiveNumber);
  cv->add_flag("--shuffle-labels", f.shuffle_labels, "Control run with permuted training labels");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    if (*synth) return run_synth(*synth, f);
    if (*grad) return run_gradcheck(*grad, f);
    if (*tr) return run_train(*tr, f);
    if (*ev) return run_eval(*ev, f);
    if (*cv) return run_crossval(*cv, f);
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 2;
  } catch (const IoError& e) {
    std::cerr << "I/O error: " << e.what() << "\n";
    return 3;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "I/O error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
