#include "toolgcn/trainer.hpp"

#include <cmath>
#include <fstream>
#include <map>
#include <set>

#include "container.hpp"
#include "text_util.hpp"
#include "toolgcn/error.hpp"

namespace toolgcn {

namespace {

const std::set<std::string> kTrainKeys = {
    "epochs",     "base_lr", "lr_step",    "lr_factor", "weight_decay", "batch_size", "momentum",
    "dropout",    "seed",    "window",     "train_step", "augment",     "affine",     "fragments",
    "fragment_ratio"};
const std::set<std::string> kAffineKeys = {"max_angle_deg", "max_translation", "min_scale", "max_scale"};

template <typename T>
void read_key(const nlohmann::json& j, const char* key, T& out, const char* scope) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string(scope) + " key '" + key + "': " + e.what());
  }
}

nlohmann::json metrics_json(const EpochMetrics& m) {
  nlohmann::json j = {{"epoch", m.epoch}, {"lr", m.lr}, {"loss", m.loss},
                      {"accuracy", m.accuracy}, {"samples", m.samples}};
  if (m.val_accuracy) j["val_accuracy"] = *m.val_accuracy;
  return j;
}

EpochMetrics metrics_from_json(const nlohmann::json& j) {
  EpochMetrics m;
  m.epoch = j.at("epoch").get<std::size_t>();
  m.lr = j.at("lr").get<double>();
  m.loss = j.at("loss").get<double>();
  m.accuracy = j.at("accuracy").get<double>();
  m.samples = j.at("samples").get<std::size_t>();
  if (j.contains("val_accuracy")) m.val_accuracy = j.at("val_accuracy").get<double>();
  return m;
}

std::string metrics_row(const EpochMetrics& m) {
  return std::to_string(m.epoch) + "," + format_double(m.lr) + "," + format_double(m.loss) +
         "," + format_double(m.accuracy) + "," + std::to_string(m.samples) + "," +
         (m.val_accuracy ? format_double(*m.val_accuracy) : std::string());
}

void write_metrics(const std::vector<EpochMetrics>& history, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << "epoch,lr,loss,accuracy,samples,val_accuracy\n";
  for (const auto& m : history) out << metrics_row(m) << "\n";
  if (!out) throw IoError("failed writing " + path.string());
}

std::string epoch_name(std::size_t epoch) {
  std::string n = std::to_string(epoch);
  return "epoch_" + std::string(n.size() < 3 ? 3 - n.size() : 0, '0') + n + ".ckpt";
}

// Slot of the shuffled epoch stream: a sliding window, or a fragment whose
// label and source are drawn from the slot's own seed.
struct Slot {
  bool fragment = false;
  std::size_t sample = 0;
};

}  // namespace

std::string to_string(FragmentMode m) {
  switch (m) {
    case FragmentMode::kOff: return "off";
    case FragmentMode::kSupplement: return "supplement";
    case FragmentMode::kReplace: return "replace";
  }
  return "off";
}

FragmentMode parse_fragment_mode(const std::string& s) {
  if (s == "off") return FragmentMode::kOff;
  if (s == "supplement") return FragmentMode::kSupplement;
  if (s == "replace") return FragmentMode::kReplace;
  throw ValidationError("unknown fragment mode '" + s + "' (expected off, supplement or replace)");
}

void TrainConfig::validate() const {
  if (epochs < 1) throw ValidationError("train config: epochs must be >= 1");
  if (!(base_lr >= 0.0) || !std::isfinite(base_lr)) throw ValidationError("train config: base_lr must be >= 0");
  if (lr_step < 1) throw ValidationError("train config: lr_step must be >= 1");
  if (!(lr_factor > 0.0)) throw ValidationError("train config: lr_factor must be positive");
  if (!(weight_decay >= 0.0)) throw ValidationError("train config: weight_decay must be >= 0");
  if (batch_size < 1) throw ValidationError("train config: batch_size must be >= 1");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ValidationError("train config: momentum must be in [0, 1)");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ValidationError("train config: dropout must be in [0, 1)");
  if (window < 1) throw ValidationError("train config: window must be >= 1");
  if (train_step < 1) throw ValidationError("train config: train_step must be >= 1");
  if (!(fragment_ratio >= 0.0)) throw ValidationError("train config: fragment_ratio must be >= 0");
  if (!(affine.min_scale > 0.0) || affine.max_scale < affine.min_scale)
    throw ValidationError("train config: affine scale range must satisfy 0 < min <= max");
  if (affine.max_angle_deg < 0.0 || affine.max_translation < 0.0)
    throw ValidationError("train config: affine ranges must be non-negative");
}

nlohmann::json TrainConfig::to_json() const {
  return {{"epochs", epochs},
          {"base_lr", base_lr},
          {"lr_step", lr_step},
          {"lr_factor", lr_factor},
          {"weight_decay", weight_decay},
          {"batch_size", batch_size},
          {"momentum", momentum},
          {"dropout", dropout},
          {"seed", seed},
          {"window", window},
          {"train_step", train_step},
          {"augment", augment},
          {"affine",
           {{"max_angle_deg", affine.max_angle_deg},
            {"max_translation", affine.max_translation},
            {"min_scale", affine.min_scale},
            {"max_scale", affine.max_scale}}},
          {"fragments", to_string(fragments)},
          {"fragment_ratio", fragment_ratio}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ValidationError("train config must be a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!kTrainKeys.count(it.key())) throw ValidationError("unknown train config key '" + it.key() + "'");
  TrainConfig c;
  const char* s = "train config";
  read_key(j, "epochs", c.epochs, s);
  read_key(j, "base_lr", c.base_lr, s);
  read_key(j, "lr_step", c.lr_step, s);
  read_key(j, "lr_factor", c.lr_factor, s);
  read_key(j, "weight_decay", c.weight_decay, s);
  read_key(j, "batch_size", c.batch_size, s);
  read_key(j, "momentum", c.momentum, s);
  read_key(j, "dropout", c.dropout, s);
  read_key(j, "seed", c.seed, s);
  read_key(j, "window", c.window, s);
  read_key(j, "train_step", c.train_step, s);
  read_key(j, "augment", c.augment, s);
  read_key(j, "fragment_ratio", c.fragment_ratio, s);
  if (j.contains("fragments")) {
    std::string f;
    read_key(j, "fragments", f, s);
    c.fragments = parse_fragment_mode(f);
  }
  if (j.contains("affine")) {
    const auto& a = j.at("affine");
    if (!a.is_object()) throw ValidationError("train config key 'affine' must be an object");
    for (auto it = a.begin(); it != a.end(); ++it)
      if (!kAffineKeys.count(it.key()))
        throw ValidationError("unknown train config key 'affine." + it.key() + "'");
    read_key(a, "max_angle_deg", c.affine.max_angle_deg, s);
    read_key(a, "max_translation", c.affine.max_translation, s);
    read_key(a, "min_scale", c.affine.min_scale, s);
    read_key(a, "max_scale", c.affine.max_scale, s);
  }
  c.validate();
  return c;
}

double lr_at(std::size_t epoch, const TrainConfig& cfg) {
  if (epoch >= cfg.epochs)
    throw ValidationError("lr_at: epoch " + std::to_string(epoch) + " outside [0, " + std::to_string(cfg.epochs) + ")");
  return cfg.base_lr * std::pow(cfg.lr_factor, static_cast<double>(epoch / cfg.lr_step));
}

void sgd_step(ModelParams& params, std::span<const Tensor> grads, double lr, double weight_decay,
              double momentum, std::vector<Tensor>& velocity) {
  const auto trainable = params.trainable();
  if (grads.size() != trainable.size())
    throw ValidationError("sgd_step: " + std::to_string(grads.size()) + " gradients for " +
                          std::to_string(trainable.size()) + " parameters");
  for (std::size_t i = 0; i < trainable.size(); ++i) {
    const Param& p = params.entries()[trainable[i]];
    if (grads[i].shape() != p.value.shape())
      throw ValidationError("sgd_step: gradient of " + p.name + " has shape " + shape_str(grads[i].shape()));
    if (!grads[i].all_finite()) throw NumericalError("non-finite gradient for parameter " + p.name);
  }
  if (momentum > 0.0 && velocity.empty())
    for (std::size_t idx : trainable) velocity.emplace_back(params.entries()[idx].value.shape());
  for (std::size_t i = 0; i < trainable.size(); ++i) {
    Param& p = params.entries()[trainable[i]];
    const double wd = p.kind == ParamKind::kWeight ? weight_decay : 0.0;
    double* w = p.value.ptr();
    const double* g = grads[i].ptr();
    if (momentum > 0.0) {
      double* v = velocity[i].ptr();
      for (std::size_t k = 0; k < p.value.size(); ++k) {
        v[k] = momentum * v[k] + (g[k] + wd * w[k]);
        w[k] -= lr * v[k];
      }
    } else {
      for (std::size_t k = 0; k < p.value.size(); ++k) w[k] -= lr * (g[k] + wd * w[k]);
    }
  }
}

void save_checkpoint(const TrainState& state, const ModelConfig& model, const TrainConfig& train,
                     const std::filesystem::path& path) {
  detail::Container c;
  c.kind = detail::ContainerKind::kCheckpoint;
  c.digest = model.digest();
  nlohmann::json history = nlohmann::json::array();
  for (const auto& m : state.history) history.push_back(metrics_json(m));
  c.metadata = {{"config", model.to_json()}, {"train", train.to_json()},     {"epoch", state.epoch},
                {"step", state.step},         {"rng", state.rng_state},      {"history", history},
                {"best_checkpoint", state.best_checkpoint}};
  if (state.best_val_accuracy) c.metadata["best_val_accuracy"] = *state.best_val_accuracy;
  for (const auto& e : state.params.entries()) c.tensors.push_back({"param:" + e.name, e.value});
  const auto trainable = state.params.trainable();
  for (std::size_t i = 0; i < state.velocity.size(); ++i)
    c.tensors.push_back({"velocity:" + state.params.entries()[trainable[i]].name, state.velocity[i]});
  detail::write_container(c, path);
}

TrainState load_checkpoint(const std::filesystem::path& path, const ModelConfig& model) {
  const auto c = detail::read_container(path);
  if (c.kind != detail::ContainerKind::kCheckpoint) throw IoError(path.string() + ": not a checkpoint");
  if (c.digest != model.digest())
    throw ValidationError(path.string() + ": checkpoint was written for a different model config");
  const ModelParams layout = init_params(model, 0);
  TrainState s;
  std::map<std::string, const Tensor*> velocity;
  for (const auto& t : c.tensors) {
    if (t.name.rfind("velocity:", 0) == 0) velocity[t.name.substr(9)] = &t.value;
  }
  std::size_t next = 0;
  for (const auto& e : layout.entries()) {
    if (next >= c.tensors.size() || c.tensors[next].name != "param:" + e.name ||
        c.tensors[next].value.shape() != e.value.shape())
      throw IoError(path.string() + ": checkpoint tensors do not match parameter " + e.name);
    s.params.add(e.name, c.tensors[next].value, e.kind);
    ++next;
  }
  if (!velocity.empty()) {
    for (std::size_t idx : layout.trainable()) {
      const auto& e = layout.entries()[idx];
      auto it = velocity.find(e.name);
      if (it == velocity.end() || it->second->shape() != e.value.shape())
        throw IoError(path.string() + ": checkpoint is missing the momentum buffer of " + e.name);
      s.velocity.push_back(*it->second);
    }
  }
  try {
    const auto& m = c.metadata;
    s.epoch = m.at("epoch").get<std::size_t>();
    s.step = m.at("step").get<std::size_t>();
    s.rng_state = m.at("rng").get<std::string>();
    for (const auto& h : m.at("history")) s.history.push_back(metrics_from_json(h));
    s.best_checkpoint = m.value("best_checkpoint", std::string());
    if (m.contains("best_val_accuracy")) s.best_val_accuracy = m.at("best_val_accuracy").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw IoError(path.string() + ": bad checkpoint metadata: " + e.what());
  }
  return s;
}

std::vector<TrainSample> training_windows(const Dataset& data, std::span<const std::size_t> videos,
                                          std::size_t window, std::size_t train_step) {
  std::vector<TrainSample> out;
  SegmentOptions opts{window, train_step};
  for (std::size_t v : videos) {
    const Video& video = data.videos.at(v);
    for (std::size_t f : segment_end_frames(video.pose, video.transcript, opts))
      out.push_back({v, f, video.transcript.gesture_at(f)});
  }
  return out;
}

int argmax(std::span<const double> row) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < row.size(); ++i)
    if (row[i] > row[best]) best = i;
  return static_cast<int>(best);
}

std::vector<int> predict_windows(StgcnModel& model, const Dataset& data, std::span<const TrainSample> samples,
                                 std::size_t window, std::size_t batch_size) {
  std::vector<int> out;
  out.reserve(samples.size());
  for (std::size_t b = 0; b < samples.size(); b += batch_size) {
    const std::size_t n = std::min(batch_size, samples.size() - b);
    std::vector<SegmentTensor> segs(n);
    std::vector<const SegmentTensor*> ptrs(n);
    for (std::size_t i = 0; i < n; ++i) {
      const auto& s = samples[b + i];
      segs[i].data = window_tensor(data.videos.at(s.video).pose, s.end_frame, window);
      ptrs[i] = &segs[i];
    }
    const Tensor logits = model.predict(stack_segments(ptrs));
    const std::size_t K = logits.dim(1);
    for (std::size_t i = 0; i < n; ++i) out.push_back(argmax(std::span<const double>(logits.ptr() + i * K, K)));
  }
  return out;
}

TrainResult train(const Dataset& data, const ModelConfig& model_cfg, const SkeletonSpec& skeleton,
                  const TrainConfig& cfg, const TrainOptions& options) {
  cfg.validate();
  model_cfg.validate();
  if (options.train_videos.empty()) throw ValidationError("train: no training videos");
  if (model_cfg.classes < data.manifest.vocabulary.size())
    throw ValidationError("train: model has " + std::to_string(model_cfg.classes) + " classes, vocabulary " +
                          std::to_string(data.manifest.vocabulary.size()));

  std::vector<TrainSample> windows = training_windows(data, options.train_videos, cfg.window, cfg.train_step);
  if (windows.empty()) throw ValidationError("train: the training videos yield no transcribed windows");

  FragmentMode fragments = cfg.fragments;
  if (options.label_shuffle_seed) {
    Rng shuffle(*options.label_shuffle_seed);
    std::vector<int> labels;
    for (const auto& w : windows) labels.push_back(w.label);
    shuffle.shuffle(std::span<int>(labels));
    for (std::size_t i = 0; i < windows.size(); ++i) windows[i].label = labels[i];
    fragments = FragmentMode::kOff;
  }

  // Labels present in the training videos, and the videos carrying each.
  std::map<int, std::vector<std::size_t>> label_videos;
  for (std::size_t v : options.train_videos)
    for (const auto& e : data.videos.at(v).transcript.entries) {
      auto& list = label_videos[e.gesture];
      if (list.empty() || list.back() != v) list.push_back(v);
    }
  std::vector<int> present;
  for (const auto& [label, vids] : label_videos) present.push_back(label);

  std::size_t fragment_count = 0, window_count = windows.size();
  if (fragments == FragmentMode::kSupplement)
    fragment_count = static_cast<std::size_t>(std::llround(cfg.fragment_ratio * static_cast<double>(windows.size())));
  else if (fragments == FragmentMode::kReplace) {
    fragment_count = windows.size();
    window_count = 0;
  }

  std::vector<TrainSample> val_windows;
  if (!options.validation_videos.empty())
    val_windows = training_windows(data, options.validation_videos, cfg.window, 3);

  TrainState state;
  Rng rng(cfg.seed);
  if (options.resume) {
    state = load_checkpoint(*options.resume, model_cfg);
    rng.set_state(state.rng_state);
  } else {
    state.params = init_params(model_cfg, derive_seed(cfg.seed, 0));
  }
  StgcnModel model(model_cfg, skeleton, std::move(state.params));

  if (options.out_dir) std::filesystem::create_directories(*options.out_dir / "checkpoints");

  const std::size_t last_epoch = options.stop_after ? std::min(cfg.epochs, *options.stop_after) : cfg.epochs;
  for (std::size_t epoch = state.epoch; epoch < last_epoch; ++epoch) {
    const double lr = lr_at(epoch, cfg);
    std::vector<Slot> slots;
    for (std::size_t i = 0; i < window_count; ++i) slots.push_back({false, i});
    for (std::size_t i = 0; i < fragment_count; ++i) slots.push_back({true, i});
    rng.shuffle(std::span<Slot>(slots));

    double loss_sum = 0.0;
    std::size_t correct = 0;
    for (std::size_t b = 0; b < slots.size(); b += cfg.batch_size) {
      const std::size_t n = std::min(cfg.batch_size, slots.size() - b);
      std::vector<SegmentTensor> segs(n);
      std::vector<const SegmentTensor*> ptrs(n);
      std::vector<int> labels(n);
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t pos = b + i;
        Rng srng(derive_seed(cfg.seed, 3, epoch, pos));
        const Slot& slot = slots[pos];
        if (slot.fragment) {
          const int label = present[static_cast<std::size_t>(srng.below(present.size()))];
          const auto& vids = label_videos.at(label);
          const Video& v = data.videos[vids[static_cast<std::size_t>(srng.below(vids.size()))]];
          segs[i] = *random_fragment(v.pose, v.transcript, label, cfg.window, srng);
        } else {
          const TrainSample& s = windows[slot.sample];
          segs[i].data = window_tensor(data.videos[s.video].pose, s.end_frame, cfg.window);
          segs[i].label = s.label;
        }
        if (cfg.augment) segs[i] = random_affine(segs[i], sample_affine(cfg.affine, srng));
        labels[i] = segs[i].label;
        ptrs[i] = &segs[i];
      }

      Tape tape;
      const auto bound = model.bind(tape);
      Rng drop_rng(derive_seed(cfg.seed, 4, state.step));
      ForwardOptions fo;
      fo.mode = ops::Mode::kTrain;
      fo.head_dropout = cfg.dropout;
      fo.dropout_rng = &drop_rng;
      const Var logits = model.forward(tape, bound, stack_segments(ptrs), fo);
      const Var loss = ops::softmax_cross_entropy(tape, logits, labels);
      const double lv = tape.value(loss)[0];
      if (!std::isfinite(lv)) throw NumericalError("non-finite loss at epoch " + std::to_string(epoch + 1));
      tape.backward(loss);
      std::vector<Tensor> grads;
      grads.reserve(bound.size());
      for (Var v : bound) grads.push_back(tape.grad(v));
      sgd_step(model.params(), grads, lr, cfg.weight_decay, cfg.momentum, state.velocity);
      ++state.step;

      loss_sum += lv * static_cast<double>(n);
      const Tensor& lg = tape.value(logits);
      const std::size_t K = lg.dim(1);
      for (std::size_t i = 0; i < n; ++i)
        if (argmax(std::span<const double>(lg.ptr() + i * K, K)) == labels[i]) ++correct;
    }

    EpochMetrics m;
    m.epoch = epoch + 1;
    m.lr = lr;
    m.samples = slots.size();
    m.loss = loss_sum / static_cast<double>(slots.size());
    m.accuracy = static_cast<double>(correct) / static_cast<double>(slots.size());
    if (!val_windows.empty()) {
      const auto pred = predict_windows(model, data, val_windows, cfg.window);
      std::size_t ok = 0;
      for (std::size_t i = 0; i < pred.size(); ++i) ok += pred[i] == val_windows[i].label;
      m.val_accuracy = static_cast<double>(ok) / static_cast<double>(pred.size());
    }
    state.history.push_back(m);
    state.epoch = epoch + 1;
    state.rng_state = rng.state();

    const bool best = m.val_accuracy && (!state.best_val_accuracy || *m.val_accuracy > *state.best_val_accuracy);
    if (best) state.best_val_accuracy = m.val_accuracy;
    if (options.out_dir) {
      state.params = model.params();
      const auto ckpt_dir = *options.out_dir / "checkpoints";
      if (best) {
        state.best_checkpoint = "best.ckpt";
        save_checkpoint(state, model_cfg, cfg, ckpt_dir / "best.ckpt");
      }
      save_checkpoint(state, model_cfg, cfg, ckpt_dir / epoch_name(state.epoch));
      write_metrics(state.history, *options.out_dir / "metrics.csv");
    }
    if (options.on_epoch) options.on_epoch(m);
  }

  state.rng_state = rng.state();
  TrainResult result;
  result.windows = windows.size();
  if (options.measure_train_accuracy) {
    const auto pred = predict_windows(model, data, windows, cfg.window);
    std::size_t ok = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) ok += pred[i] == windows[i].label;
    result.train_accuracy = static_cast<double>(ok) / static_cast<double>(pred.size());
  }
  state.params = std::move(model.params());
  result.state = std::move(state);
  return result;
}

}  // namespace toolgcn
