#include "toolgcn/pipeline.hpp"

#include <chrono>
#include <ctime>
#include <fstream>
#include <set>

#include "toolgcn/error.hpp"
#include "toolgcn/synth.hpp"

namespace toolgcn {

namespace {

const std::set<std::string> kRunKeys = {"model", "train", "gradcheck", "skeleton", "data", "out",
                                        "params", "fold", "jobs", "shuffle_labels"};
const std::set<std::string> kGradKeys = {"samples", "step", "tol", "max_elements", "seed"};

template <typename T>
void read_key(const nlohmann::json& j, const char* key, T& out, const std::string& scope) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(scope + " key '" + key + "': " + e.what());
  }
}

template <typename T>
void read_optional(const nlohmann::json& j, const char* key, std::optional<T>& out) {
  if (!j.contains(key) || j.at(key).is_null()) return;
  T v;
  read_key(j, key, v, "config");
  out = v;
}

template <typename T>
nlohmann::json optional_json(const std::optional<T>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

}  // namespace

nlohmann::json RunConfig::to_json() const {
  return {{"model", model.to_json()},
          {"train", train.to_json()},
          {"gradcheck",
           {{"samples", gradcheck.samples},
            {"step", gradcheck.step},
            {"tol", gradcheck.tol},
            {"max_elements", gradcheck.max_elements},
            {"seed", gradcheck.seed}}},
          {"skeleton", optional_json(skeleton)},
          {"data", optional_json(data)},
          {"out", optional_json(out)},
          {"params", optional_json(params)},
          {"fold", optional_json(fold)},
          {"jobs", jobs},
          {"shuffle_labels", shuffle_labels}};
}

RunConfig RunConfig::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ValidationError("config must be a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!kRunKeys.count(it.key())) throw ValidationError("unknown config key '" + it.key() + "'");
  RunConfig c;
  if (j.contains("model")) c.model = ModelConfig::from_json(j.at("model"));
  if (j.contains("train")) c.train = TrainConfig::from_json(j.at("train"));
  if (j.contains("gradcheck")) {
    const auto& g = j.at("gradcheck");
    if (!g.is_object()) throw ValidationError("config key 'gradcheck' must be an object");
    for (auto it = g.begin(); it != g.end(); ++it)
      if (!kGradKeys.count(it.key())) throw ValidationError("unknown config key 'gradcheck." + it.key() + "'");
    read_key(g, "samples", c.gradcheck.samples, "gradcheck");
    read_key(g, "step", c.gradcheck.step, "gradcheck");
    read_key(g, "tol", c.gradcheck.tol, "gradcheck");
    read_key(g, "max_elements", c.gradcheck.max_elements, "gradcheck");
    read_key(g, "seed", c.gradcheck.seed, "gradcheck");
    if (c.gradcheck.samples < 1) throw ValidationError("gradcheck.samples must be >= 1");
    if (!(c.gradcheck.step > 0.0) || !(c.gradcheck.tol > 0.0))
      throw ValidationError("gradcheck.step and gradcheck.tol must be positive");
  }
  read_optional(j, "skeleton", c.skeleton);
  read_optional(j, "data", c.data);
  read_optional(j, "out", c.out);
  read_optional(j, "params", c.params);
  read_optional(j, "fold", c.fold);
  read_key(j, "jobs", c.jobs, "config");
  read_key(j, "shuffle_labels", c.shuffle_labels, "config");
  if (c.jobs < 1) throw ValidationError("config key 'jobs' must be >= 1");
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("config " + path.string() + ": " + e.what());
  }
  try {
    if (j.is_object() && j.value("format", "") == "toolgcn-run") return RunConfig::from_json(j.at("config"));
    return RunConfig::from_json(j);
  } catch (const ValidationError& e) {
    throw ValidationError("config " + path.string() + ": " + e.what());
  }
}

SkeletonSpec resolve_skeleton(const RunConfig& config) {
  SkeletonSpec s = config.skeleton ? load_skeleton(*config.skeleton) : default_tool_skeleton();
  validate_skeleton(s);
  return s;
}

nlohmann::json RunManifest::to_json() const {
  return {{"format", "toolgcn-run"}, {"version", 1},        {"tool_version", kToolVersion},
          {"command", command},      {"config", config.to_json()}, {"seed", config.train.seed},
          {"inputs", inputs},        {"output", output},    {"timestamp", timestamp}};
}

void write_run_manifest(const RunManifest& manifest, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << manifest.to_json().dump(2) << "\n";
  if (!out) throw IoError("failed writing " + path.string());
}

std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

LabeledBatch gradcheck_batch(const ModelConfig& model, std::size_t samples, std::size_t window,
                             std::uint64_t seed) {
  LabeledBatch b;
  const std::size_t C = model.in_channels, V = model.joints, M = model.instances;
  b.data = Tensor({samples, C, window, V, M});
  if (C == kInputChannels && V == 5 && (M == 1 || M == 2)) {
    SynthOptions so;
    so.classes = std::min<std::size_t>(model.classes, 10);
    so.subjects = 1;
    so.trials = 1;
    so.tools = M;
    so.seed = seed;
    const Dataset ds = to_dataset(generate_synthetic(so));
    const Video& v = ds.videos.front();
    const auto ends = segment_end_frames(v.pose, v.transcript, {window, 1});
    const std::size_t block = C * window * V * M;
    for (std::size_t i = 0; i < samples; ++i) {
      const std::size_t end = ends[(i + 1) * ends.size() / (samples + 1)];
      const Tensor w = window_tensor(v.pose, end, window);
      std::copy(w.data().begin(), w.data().end(), b.data.ptr() + i * block);
      b.labels.push_back(v.transcript.gesture_at(end));
    }
  } else {
    Rng rng(seed);
    for (double& x : b.data.data()) x = rng.normal();
    for (std::size_t i = 0; i < samples; ++i)
      b.labels.push_back(static_cast<int>(rng.below(model.classes)));
  }
  return b;
}

GradCheckReport model_grad_check(const ModelConfig& model_cfg, const SkeletonSpec& skeleton,
                                 const GradCheckConfig& config, std::size_t window) {
  StgcnModel model(model_cfg, skeleton, derive_seed(config.seed, 1));
  // Fresh statistics (mean 0, variance 1) map an all-zero neighborhood to a
  // pre-activation of exactly 0, where ReLU has no derivative. Seeded
  // non-trivial statistics move the check to a generic point.
  Rng stats_rng(derive_seed(config.seed, 3));
  for (auto& e : model.params().entries()) {
    if (e.kind != ParamKind::kBuffer) continue;
    const bool is_var = e.name.ends_with("running_var");
    for (double& x : e.value.data()) x = is_var ? stats_rng.uniform(0.5, 1.5) : 0.1 * stats_rng.normal();
  }
  const LabeledBatch batch = gradcheck_batch(model_cfg, config.samples, window, derive_seed(config.seed, 2));
  std::vector<NamedTensor> params;
  for (std::size_t i : model.params().trainable())
    params.push_back({model.params().entries()[i].name, model.params().entries()[i].value});
  const ScalarFunction f = [&](Tape& tape, std::span<const Var> bound) {
    ForwardOptions fo;
    fo.mode = ops::Mode::kEval;
    const Var logits = model.forward(tape, bound, batch.data, fo);
    return ops::softmax_cross_entropy(tape, logits, batch.labels);
  };
  GradCheckOptions opts;
  opts.step = config.step;
  opts.tol = config.tol;
  opts.max_elements = config.max_elements;
  opts.seed = config.seed;
  return grad_check(f, params, opts);
}

}  // namespace toolgcn
