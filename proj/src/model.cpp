#include "toolgcn/model.hpp"

#include <cmath>
#include <cstring>
#include <set>

#include "container.hpp"
#include "toolgcn/error.hpp"

namespace toolgcn {

namespace {

const std::set<std::string> kConfigKeys = {
    "in_channels", "joints",           "instances",    "classes", "channels", "strides",
    "temporal_kernel", "residual", "batch_norm", "input_batch_norm", "unit_dropout", "graph"};
const std::set<std::string> kGraphKeys = {"strategy", "mode", "normalization", "alpha"};

template <typename T>
void read_key(const nlohmann::json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("model config key '") + key + "': " + e.what());
  }
}

std::string unit_prefix(std::size_t i) { return "unit" + std::to_string(i + 1); }

void add_bn(ModelParams& p, const std::string& prefix, std::size_t channels) {
  p.add(prefix + ".gamma", Tensor({channels}, 1.0), ParamKind::kNoDecay);
  p.add(prefix + ".beta", Tensor({channels}, 0.0), ParamKind::kNoDecay);
  p.add(prefix + ".running_mean", Tensor({channels}, 0.0), ParamKind::kBuffer);
  p.add(prefix + ".running_var", Tensor({channels}, 1.0), ParamKind::kBuffer);
}

Tensor he_normal(Shape shape, double fan_in, Rng& rng) {
  Tensor t(std::move(shape));
  const double sd = std::sqrt(2.0 / fan_in);
  for (double& v : t.data()) v = sd * rng.normal();
  return t;
}

bool bitwise_equal(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() &&
         (a.size() == 0 || std::memcmp(a.ptr(), b.ptr(), a.size() * sizeof(double)) == 0);
}

std::size_t input_bn_channels(const ModelConfig& c) { return c.joints * c.in_channels; }

std::vector<std::string> config_differences(const nlohmann::json& a, const nlohmann::json& b) {
  std::vector<std::string> diff;
  std::set<std::string> keys;
  for (auto it = a.begin(); it != a.end(); ++it) keys.insert(it.key());
  for (auto it = b.begin(); it != b.end(); ++it) keys.insert(it.key());
  for (const auto& k : keys) {
    if (!a.contains(k) || !b.contains(k)) {
      diff.push_back(k);
    } else if (a[k].is_object() && b[k].is_object()) {
      for (auto& sub : config_differences(a[k], b[k])) diff.push_back(k + "." + sub);
    } else if (a[k] != b[k]) {
      diff.push_back(k + " (file " + a[k].dump() + ", expected " + b[k].dump() + ")");
    }
  }
  return diff;
}

}  // namespace

void ModelConfig::validate() const {
  if (in_channels < 1 || joints < 1 || instances < 1 || classes < 1)
    throw ValidationError("model config: in_channels, joints, instances and classes must be >= 1");
  if (channels.empty()) throw ValidationError("model config: at least one unit is required");
  if (channels.size() != strides.size())
    throw ValidationError("model config: " + std::to_string(channels.size()) + " channel widths but " +
                          std::to_string(strides.size()) + " strides");
  for (std::size_t i = 0; i < channels.size(); ++i) {
    if (channels[i] < 1) throw ValidationError("model config: unit " + std::to_string(i + 1) + " has 0 channels");
    if (strides[i] != 1 && strides[i] != 2)
      throw ValidationError("model config: unit " + std::to_string(i + 1) + " stride must be 1 or 2");
  }
  if (temporal_kernel % 2 == 0) throw ValidationError("model config: temporal_kernel must be odd");
  if (!(unit_dropout >= 0.0 && unit_dropout < 1.0))
    throw ValidationError("model config: unit_dropout must be in [0, 1)");
  if (!(graph.alpha > 0.0)) throw ValidationError("model config: graph.alpha must be positive");
  if (graph.mode == PartitionMode::kPerFrame && in_channels < 2)
    throw ValidationError("model config: per-frame partitioning needs x and y channels");
}

std::vector<UnitConfig> ModelConfig::units() const {
  std::vector<UnitConfig> out;
  std::size_t in = in_channels;
  for (std::size_t i = 0; i < channels.size(); ++i) {
    UnitConfig u;
    u.in_channels = in;
    u.out_channels = channels[i];
    u.temporal_kernel = temporal_kernel;
    u.stride = strides[i];
    u.residual = residual && i > 0;
    u.batch_norm = batch_norm;
    u.dropout = unit_dropout;
    out.push_back(u);
    in = channels[i];
  }
  return out;
}

nlohmann::json ModelConfig::to_json() const {
  return {{"in_channels", in_channels},
          {"joints", joints},
          {"instances", instances},
          {"classes", classes},
          {"channels", channels},
          {"strides", strides},
          {"temporal_kernel", temporal_kernel},
          {"residual", residual},
          {"batch_norm", batch_norm},
          {"input_batch_norm", input_batch_norm},
          {"unit_dropout", unit_dropout},
          {"graph",
           {{"strategy", to_string(graph.strategy)},
            {"mode", to_string(graph.mode)},
            {"normalization", to_string(graph.normalization)},
            {"alpha", graph.alpha}}}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ValidationError("model config must be a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!kConfigKeys.count(it.key())) throw ValidationError("unknown model config key '" + it.key() + "'");
  ModelConfig c;
  read_key(j, "in_channels", c.in_channels);
  read_key(j, "joints", c.joints);
  read_key(j, "instances", c.instances);
  read_key(j, "classes", c.classes);
  read_key(j, "channels", c.channels);
  read_key(j, "strides", c.strides);
  read_key(j, "temporal_kernel", c.temporal_kernel);
  read_key(j, "residual", c.residual);
  read_key(j, "batch_norm", c.batch_norm);
  read_key(j, "input_batch_norm", c.input_batch_norm);
  read_key(j, "unit_dropout", c.unit_dropout);
  if (j.contains("graph")) {
    const auto& g = j.at("graph");
    if (!g.is_object()) throw ValidationError("model config key 'graph' must be an object");
    for (auto it = g.begin(); it != g.end(); ++it)
      if (!kGraphKeys.count(it.key()))
        throw ValidationError("unknown model config key 'graph." + it.key() + "'");
    std::string s;
    if (g.contains("strategy")) {
      read_key(g, "strategy", s);
      c.graph.strategy = parse_partition_strategy(s);
    }
    if (g.contains("mode")) {
      read_key(g, "mode", s);
      c.graph.mode = parse_partition_mode(s);
    }
    if (g.contains("normalization")) {
      read_key(g, "normalization", s);
      c.graph.normalization = parse_normalization(s);
    }
    read_key(g, "alpha", c.graph.alpha);
  }
  c.validate();
  return c;
}

std::uint64_t ModelConfig::digest() const { return detail::fnv1a(to_json().dump()); }

void ModelParams::add(std::string name, Tensor value, ParamKind kind) {
  if (index_.count(name)) throw ValidationError("duplicate parameter " + name);
  index_[name] = entries_.size();
  entries_.push_back({std::move(name), std::move(value), kind});
}

Tensor& ModelParams::at(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw ValidationError("no parameter named " + name);
  return entries_[it->second].value;
}

const Tensor& ModelParams::at(const std::string& name) const {
  return const_cast<ModelParams*>(this)->at(name);
}

std::vector<std::size_t> ModelParams::trainable() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < entries_.size(); ++i)
    if (entries_[i].kind != ParamKind::kBuffer) out.push_back(i);
  return out;
}

std::size_t ModelParams::trainable_count() const {
  std::size_t n = 0;
  for (std::size_t i : trainable()) n += entries_[i].value.size();
  return n;
}

bool operator==(const ModelParams& a, const ModelParams& b) {
  if (a.entries_.size() != b.entries_.size()) return false;
  for (std::size_t i = 0; i < a.entries_.size(); ++i) {
    const auto& x = a.entries_[i];
    const auto& y = b.entries_[i];
    if (x.name != y.name || x.kind != y.kind || !bitwise_equal(x.value, y.value)) return false;
  }
  return true;
}

ModelParams init_params(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  ModelParams p;
  if (config.input_batch_norm) add_bn(p, "input_bn", input_bn_channels(config));
  const std::size_t K = config.partitions();
  const auto units = config.units();
  for (std::size_t i = 0; i < units.size(); ++i) {
    const auto& u = units[i];
    Rng rng(derive_seed(seed, 1, i));
    const std::string pre = unit_prefix(i);
    const double ci = static_cast<double>(u.in_channels), co = static_cast<double>(u.out_channels);
    const double kt = static_cast<double>(u.temporal_kernel);
    p.add(pre + ".gcn.weight", he_normal({K, u.out_channels, u.in_channels}, static_cast<double>(K) * ci, rng),
          ParamKind::kWeight);
    if (u.batch_norm) add_bn(p, pre + ".bn1", u.out_channels);
    p.add(pre + ".tcn.weight", he_normal({u.out_channels, u.out_channels, u.temporal_kernel, 1}, co * kt, rng),
          ParamKind::kWeight);
    if (u.batch_norm) add_bn(p, pre + ".bn2", u.out_channels);
    if (u.residual && (u.in_channels != u.out_channels || u.stride != 1)) {
      p.add(pre + ".res.weight", he_normal({u.out_channels, u.in_channels, 1, 1}, ci, rng), ParamKind::kWeight);
      if (u.batch_norm) add_bn(p, pre + ".res_bn", u.out_channels);
    }
  }
  Rng rng(derive_seed(seed, 2));
  const std::size_t F = config.channels.back();
  const double bound = 1.0 / std::sqrt(static_cast<double>(F));
  Tensor w({config.classes, F});
  for (double& v : w.data()) v = rng.uniform(-bound, bound);
  p.add("head.weight", std::move(w), ParamKind::kWeight);
  p.add("head.bias", Tensor({config.classes}, 0.0), ParamKind::kNoDecay);
  return p;
}

GraphContext GraphContext::make(const SkeletonSpec& skeleton, const PartitionConfig& config) {
  validate_skeleton(skeleton);
  GraphContext g;
  g.skeleton = skeleton;
  g.config = config;
  g.static_stack = build_partition_stack(skeleton, config).matrices;
  return g;
}

Var stgcn_unit_forward(Tape& tape, Var x, const Tensor& adjacency, const UnitConfig& unit,
                       const UnitParams& p, const ForwardOptions& options) {
  const Tensor& xv = tape.value(x);
  if (xv.rank() != 4 || xv.dim(1) != unit.in_channels)
    throw ValidationError("unit input must be [B, " + std::to_string(unit.in_channels) + ", T, V], got " +
                          shape_str(xv.shape()));
  if (unit.temporal_kernel % 2 == 0) throw ValidationError("temporal kernel must be odd");
  if (unit.stride != 1 && unit.stride != 2) throw ValidationError("unit stride must be 1 or 2");

  Var y = ops::graph_conv(tape, x, p.gcn_weight, adjacency);
  if (unit.batch_norm) y = ops::batch_norm(tape, y, p.bn1_gamma, p.bn1_beta, p.bn1_stats, options.mode);
  y = ops::relu(tape, y);
  y = ops::temporal_conv(tape, y, p.tcn_weight, unit.stride, (unit.temporal_kernel - 1) / 2);
  if (unit.batch_norm) y = ops::batch_norm(tape, y, p.bn2_gamma, p.bn2_beta, p.bn2_stats, options.mode);
  if (unit.dropout > 0.0) y = ops::dropout(tape, y, 1.0 - unit.dropout, options.dropout_rng, options.mode);

  if (unit.residual) {
    Var r = x;
    if (p.res_weight.valid()) {
      r = ops::temporal_conv(tape, x, p.res_weight, unit.stride, 0);
      if (unit.batch_norm) r = ops::batch_norm(tape, r, p.res_gamma, p.res_beta, p.res_stats, options.mode);
    } else if (unit.in_channels != unit.out_channels || unit.stride != 1) {
      throw ValidationError("unit residual needs a 1x1 mapping when shapes differ");
    }
    y = ops::add(tape, y, r);
  }
  return ops::relu(tape, y);
}

Tensor stack_segments(std::span<const SegmentTensor* const> segments) {
  if (segments.empty()) throw ValidationError("cannot stack an empty batch");
  const Shape& s = segments.front()->data.shape();
  if (s.size() != 4) throw ValidationError("segments must be [C, T, V, M]");
  const std::size_t block = segments.front()->data.size();
  Shape shape{segments.size()};
  shape.insert(shape.end(), s.begin(), s.end());
  Tensor out(shape);
  for (std::size_t i = 0; i < segments.size(); ++i) {
    if (segments[i]->data.shape() != s)
      throw ValidationError("segment " + std::to_string(i) + " has shape " +
                            shape_str(segments[i]->data.shape()) + ", expected " + shape_str(s));
    std::memcpy(out.ptr() + i * block, segments[i]->data.ptr(), block * sizeof(double));
  }
  return out;
}

StgcnModel::StgcnModel(ModelConfig config, const SkeletonSpec& skeleton, std::uint64_t seed)
    : StgcnModel(config, skeleton, init_params(config, seed)) {}

StgcnModel::StgcnModel(ModelConfig config, const SkeletonSpec& skeleton, ModelParams params)
    : config_(std::move(config)), params_(std::move(params)) {
  config_.validate();
  if (skeleton.num_joints() != config_.joints)
    throw ValidationError("skeleton has " + std::to_string(skeleton.num_joints()) + " joints, model config " +
                          std::to_string(config_.joints));
  graph_ = GraphContext::make(skeleton, config_.graph);
  const ModelParams layout = init_params(config_, 0);
  if (layout.entries().size() != params_.entries().size())
    throw ValidationError("parameter set does not match the model config");
  for (std::size_t i = 0; i < layout.entries().size(); ++i) {
    const auto& a = layout.entries()[i];
    const auto& b = params_.entries()[i];
    if (a.name != b.name || a.value.shape() != b.value.shape() || a.kind != b.kind)
      throw ValidationError("parameter " + b.name + " " + shape_str(b.value.shape()) + " does not match expected " +
                            a.name + " " + shape_str(a.value.shape()));
  }
}

std::vector<Var> StgcnModel::bind(Tape& tape) const {
  std::vector<Var> out;
  for (std::size_t i : params_.trainable()) out.push_back(tape.parameter(params_.entries()[i].value));
  return out;
}

Var StgcnModel::forward(Tape& tape, std::span<const Var> bound, const Tensor& batch,
                        const ForwardOptions& options) {
  const auto trainable = params_.trainable();
  if (bound.size() != trainable.size())
    throw ValidationError("forward: " + std::to_string(bound.size()) + " bound parameters, expected " +
                          std::to_string(trainable.size()));
  std::map<std::string, Var> vars;
  for (std::size_t i = 0; i < trainable.size(); ++i) vars[params_.entries()[trainable[i]].name] = bound[i];
  auto var = [&](const std::string& name) { return vars.at(name); };

  const std::size_t C = config_.in_channels, V = config_.joints, M = config_.instances;
  if (batch.rank() != 5 || batch.dim(1) != C || batch.dim(3) != V || batch.dim(4) != M)
    throw ValidationError("forward: batch must be [N, " + std::to_string(C) + ", T, " + std::to_string(V) +
                          ", " + std::to_string(M) + "], got " + shape_str(batch.shape()));
  const std::size_t N = batch.dim(0), T = batch.dim(2);
  const std::size_t B = N * M;

  // Running statistics live in params_; the ops work on copies that are
  // written back after a successful train-mode pass.
  std::map<std::string, ops::BatchNormStats> stats;
  auto stats_for = [&](const std::string& prefix) {
    auto [it, inserted] = stats.try_emplace(prefix);
    if (inserted) it->second = {params_.at(prefix + ".running_mean"), params_.at(prefix + ".running_var")};
    return &it->second;
  };
  auto check = [](const Tape& tp, Var v, const std::string& where) {
    if (!tp.value(v).all_finite()) throw NumericalError("non-finite activation in " + where);
  };

  Var x = tape.constant(batch);
  if (config_.input_batch_norm) {
    // Shared normalization over (V, C) channels for every instance.
    x = ops::permute(tape, x, {0, 4, 3, 1, 2});  // [N, M, V, C, T]
    x = ops::reshape(tape, x, {B, V * C, T});
    x = ops::batch_norm(tape, x, var("input_bn.gamma"), var("input_bn.beta"), stats_for("input_bn"),
                        options.mode);
    check(tape, x, "input normalization");
    x = ops::reshape(tape, x, {B, V, C, T});
    x = ops::permute(tape, x, {0, 2, 3, 1});  // [B, C, T, V]
  } else {
    x = ops::permute(tape, x, {0, 4, 1, 2, 3});  // [N, M, C, T, V]
    x = ops::reshape(tape, x, {B, C, T, V});
  }

  Tensor field;
  if (config_.graph.mode == PartitionMode::kPerFrame) {
    Tensor coords({B, C, T, V});
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t t = 0; t < T; ++t)
          for (std::size_t v = 0; v < V; ++v)
            for (std::size_t m = 0; m < M; ++m)
              coords[(((n * M + m) * C + c) * T + t) * V + v] = batch[(((n * C + c) * T + t) * V + v) * M + m];
    field = build_partition_field(graph_.skeleton, config_.graph, coords);
  }

  const auto units = config_.units();
  for (std::size_t i = 0; i < units.size(); ++i) {
    const auto& u = units[i];
    const std::string pre = unit_prefix(i);
    UnitParams up;
    up.gcn_weight = var(pre + ".gcn.weight");
    up.tcn_weight = var(pre + ".tcn.weight");
    if (u.batch_norm) {
      up.bn1_gamma = var(pre + ".bn1.gamma");
      up.bn1_beta = var(pre + ".bn1.beta");
      up.bn1_stats = stats_for(pre + ".bn1");
      up.bn2_gamma = var(pre + ".bn2.gamma");
      up.bn2_beta = var(pre + ".bn2.beta");
      up.bn2_stats = stats_for(pre + ".bn2");
    }
    if (params_.contains(pre + ".res.weight")) {
      up.res_weight = var(pre + ".res.weight");
      if (u.batch_norm) {
        up.res_gamma = var(pre + ".res_bn.gamma");
        up.res_beta = var(pre + ".res_bn.beta");
        up.res_stats = stats_for(pre + ".res_bn");
      }
    }
    const Tensor& adjacency = field.empty() ? graph_.static_stack : field;
    x = stgcn_unit_forward(tape, x, adjacency, u, up, options);
    check(tape, x, "unit " + std::to_string(i + 1));
    if (!field.empty() && u.stride != 1) field = subsample_field(field, u.stride);
  }

  x = ops::global_avg_pool(tape, x);  // [B, C']
  const std::size_t F = tape.value(x).dim(1);
  x = ops::reshape(tape, x, {N, M, F});
  x = ops::mean_axis(tape, x, 1);  // [N, C']
  if (options.head_dropout > 0.0)
    x = ops::dropout(tape, x, 1.0 - options.head_dropout, options.dropout_rng, options.mode);
  Var logits = ops::linear(tape, x, var("head.weight"), var("head.bias"));
  check(tape, logits, "classifier head");

  if (options.mode == ops::Mode::kTrain && options.update_running_stats) {
    for (auto& [prefix, s] : stats) {
      params_.at(prefix + ".running_mean") = std::move(s.mean);
      params_.at(prefix + ".running_var") = std::move(s.var);
    }
  }
  return logits;
}

Tensor StgcnModel::predict(const Tensor& batch) {
  Tape tape(false);
  const auto bound = bind(tape);
  ForwardOptions opts;
  opts.mode = ops::Mode::kEval;
  return tape.value(forward(tape, bound, batch, opts));
}

void save_params(const ModelParams& params, const ModelConfig& config, const std::filesystem::path& path) {
  detail::Container c;
  c.kind = detail::ContainerKind::kParams;
  c.digest = config.digest();
  c.metadata = {{"config", config.to_json()}};
  for (const auto& e : params.entries()) c.tensors.push_back({e.name, e.value});
  write_container(c, path);
}

namespace {

ModelConfig config_from_container(const detail::Container& c, const std::filesystem::path& path) {
  if (!c.metadata.contains("config")) throw IoError(path.string() + ": no config echo in container");
  ModelConfig cfg;
  try {
    cfg = ModelConfig::from_json(c.metadata.at("config"));
  } catch (const ValidationError& e) {
    throw IoError(path.string() + ": " + e.what());
  }
  if (cfg.digest() != c.digest) throw IoError(path.string() + ": config digest does not match the config echo");
  return cfg;
}

}  // namespace

ModelParams load_params(const std::filesystem::path& path, const ModelConfig& expected) {
  const auto c = detail::read_container(path);
  if (c.kind != detail::ContainerKind::kParams) throw IoError(path.string() + ": not a parameter file");
  const ModelConfig stored = config_from_container(c, path);
  if (stored.digest() != expected.digest()) {
    std::string msg = path.string() + ": model config mismatch:";
    for (const auto& d : config_differences(stored.to_json(), expected.to_json())) msg += " " + d + ";";
    throw ValidationError(msg);
  }
  const ModelParams layout = init_params(expected, 0);
  if (layout.entries().size() != c.tensors.size())
    throw IoError(path.string() + ": " + std::to_string(c.tensors.size()) + " tensors, expected " +
                  std::to_string(layout.entries().size()));
  ModelParams out;
  for (std::size_t i = 0; i < c.tensors.size(); ++i) {
    const auto& want = layout.entries()[i];
    const auto& got = c.tensors[i];
    if (got.name != want.name || got.value.shape() != want.value.shape())
      throw IoError(path.string() + ": tensor " + got.name + " " + shape_str(got.value.shape()) +
                    " where " + want.name + " " + shape_str(want.value.shape()) + " was expected");
    out.add(got.name, got.value, want.kind);
  }
  return out;
}

ModelConfig read_params_config(const std::filesystem::path& path) {
  const auto c = detail::read_container(path);
  return config_from_container(c, path);
}

}  // namespace toolgcn
