#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "toolgcn/ops.hpp"
#include "toolgcn/partition.hpp"
#include "toolgcn/rng.hpp"
#include "toolgcn/segment.hpp"
#include "toolgcn/skeleton.hpp"
#include "toolgcn/tape.hpp"

namespace toolgcn {

struct UnitConfig {
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t temporal_kernel = 9;
  std::size_t stride = 1;
  bool residual = true;
  bool batch_norm = true;
  double dropout = 0.0;
};

/// Network layout. Everything here determines the parameter structure and
/// is echoed into saved parameter files.
struct ModelConfig {
  std::size_t in_channels = kInputChannels;
  std::size_t joints = 5;
  std::size_t instances = 2;
  std::size_t classes = 10;
  std::vector<std::size_t> channels{64, 64, 64, 128, 128, 128, 256, 256, 256};
  std::vector<std::size_t> strides{1, 1, 1, 2, 1, 1, 2, 1, 1};
  std::size_t temporal_kernel = 9;
  bool residual = true;  // every unit but the first
  bool batch_norm = true;
  bool input_batch_norm = true;
  double unit_dropout = 0.0;
  PartitionConfig graph;

  void validate() const;
  std::vector<UnitConfig> units() const;
  std::size_t partitions() const { return graph.partitions(); }

  nlohmann::json to_json() const;
  // Unknown keys are rejected with their name.
  static ModelConfig from_json(const nlohmann::json& j);
  std::uint64_t digest() const;
};

enum class ParamKind {
  kWeight,   // trainable, weight decay applies
  kNoDecay,  // trainable, no weight decay (normalization scale/shift, biases)
  kBuffer,   // running statistics, not trainable
};

struct Param {
  std::string name;
  Tensor value;
  ParamKind kind = ParamKind::kWeight;
};

/// Ordered parameter set; order is the declaration order used by the
/// container format and by bind().
class ModelParams {
 public:
  void add(std::string name, Tensor value, ParamKind kind);

  const std::vector<Param>& entries() const { return entries_; }
  std::vector<Param>& entries() { return entries_; }
  Tensor& at(const std::string& name);
  const Tensor& at(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) > 0; }

  // Indices into entries() of trainable parameters, in order.
  std::vector<std::size_t> trainable() const;
  std::size_t trainable_count() const;  // number of scalar weights

  friend bool operator==(const ModelParams& a, const ModelParams& b);

 private:
  std::vector<Param> entries_;
  std::map<std::string, std::size_t> index_;
};

// Seeded initialization: He-normal spatial and temporal kernels, unit
// normalization scales, zero shifts and biases, running mean 0 / var 1,
// head weights uniform in +-1/sqrt(fan_in).
ModelParams init_params(const ModelConfig& config, std::uint64_t seed);

/// Fixed graph inputs of the network.
struct GraphContext {
  SkeletonSpec skeleton;
  PartitionConfig config;
  Tensor static_stack;  // [K, V, V], normalized

  static GraphContext make(const SkeletonSpec& skeleton, const PartitionConfig& config);
};

struct ForwardOptions {
  ops::Mode mode = ops::Mode::kEval;
  double head_dropout = 0.0;  // drop probability before the classifier (train only)
  Rng* dropout_rng = nullptr;
  bool update_running_stats = true;
};

/// Tape handles of one unit's trainable parameters plus its running stats.
struct UnitParams {
  Var gcn_weight;
  Var tcn_weight;
  Var bn1_gamma, bn1_beta, bn2_gamma, bn2_beta;
  Var res_weight, res_gamma, res_beta;  // invalid when the residual is the identity
  ops::BatchNormStats* bn1_stats = nullptr;
  ops::BatchNormStats* bn2_stats = nullptr;
  ops::BatchNormStats* res_stats = nullptr;
};

// One ST-GCN unit on x [B, C, T, V]:
//   y = sum_k W_k (x A_k)  -> BN -> ReLU -> temporal conv -> BN -> dropout
//   out = ReLU(y + residual(x))
// `adjacency` is [K, V, V] or a per-frame [B, T, K, V, V] field.
Var stgcn_unit_forward(Tape& tape, Var x, const Tensor& adjacency, const UnitConfig& unit,
                       const UnitParams& params, const ForwardOptions& options);

// Stacks [3, T, V, M] segments into a [N, 3, T, V, M] batch.
Tensor stack_segments(std::span<const SegmentTensor* const> segments);

class StgcnModel {
 public:
  StgcnModel(ModelConfig config, const SkeletonSpec& skeleton, std::uint64_t seed);
  StgcnModel(ModelConfig config, const SkeletonSpec& skeleton, ModelParams params);

  const ModelConfig& config() const { return config_; }
  const GraphContext& graph() const { return graph_; }
  ModelParams& params() { return params_; }
  const ModelParams& params() const { return params_; }

  // Trainable parameters as tape leaves, in ModelParams::trainable() order.
  std::vector<Var> bind(Tape& tape) const;

  // Logits [N, classes] for a [N, 3, T, V, M] batch. `bound` comes from
  // bind() on the same tape. Train mode updates running statistics when
  // options.update_running_stats is set. Throws NumericalError naming the
  // unit if an activation becomes non-finite.
  Var forward(Tape& tape, std::span<const Var> bound, const Tensor& batch,
              const ForwardOptions& options);

  // Eval-mode logits without recording adjoints.
  Tensor predict(const Tensor& batch);

 private:
  ModelConfig config_;
  GraphContext graph_;
  ModelParams params_;
};

// Container: "TOOLGCN\0", u32 version, u32 kind, u64 config digest,
// u64 length + JSON metadata (config echo), u64 tensor count, then per
// tensor u32 name length, name, u32 rank, u64 extents, little-endian
// doubles; trailing u64 FNV-1a checksum of every preceding byte.
void save_params(const ModelParams& params, const ModelConfig& config,
                 const std::filesystem::path& path);

// Rejects bad magic, version, checksum, or a config that differs from
// `expected` (naming the differing keys).
ModelParams load_params(const std::filesystem::path& path, const ModelConfig& expected);

// Reads the config echoed in a parameter file.
ModelConfig read_params_config(const std::filesystem::path& path);

}  // namespace toolgcn
