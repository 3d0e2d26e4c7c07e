#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "toolgcn/gradcheck.hpp"
#include "toolgcn/model.hpp"
#include "toolgcn/skeleton.hpp"
#include "toolgcn/trainer.hpp"

namespace toolgcn {

inline constexpr const char* kToolVersion = "0.1.0";

struct GradCheckConfig {
  std::size_t samples = 2;
  double step = 1e-5;
  double tol = 1e-4;
  // Elements checked by finite differences; 0 checks all of them. Every
  // parameter tensor is touched at least once.
  std::size_t max_elements = 200;
  std::uint64_t seed = 7;
};

/// Everything a command needs besides its positional inputs. Stored as
/// JSON with the sections "model", "train", "gradcheck" and the optional
/// top-level keys "skeleton", "data", "out", "params", "fold", "jobs",
/// "shuffle_labels". Command-line flags override file values.
struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  GradCheckConfig gradcheck;
  std::optional<std::string> skeleton;  // skeleton JSON path; default tool skeleton otherwise
  std::optional<std::string> data;
  std::optional<std::string> out;
  std::optional<std::string> params;
  std::optional<std::string> fold;
  std::size_t jobs = 1;
  bool shuffle_labels = false;

  nlohmann::json to_json() const;
  // Unknown keys are rejected with their dotted name.
  static RunConfig from_json(const nlohmann::json& j);
};

// Reads a config file, or the "config" section of a run manifest.
RunConfig load_run_config(const std::filesystem::path& path);

SkeletonSpec resolve_skeleton(const RunConfig& config);

/// Written before any long-running work; a run is reproducible from it.
struct RunManifest {
  std::string command;
  RunConfig config;
  std::vector<std::string> inputs;
  std::string output;
  std::string timestamp;  // UTC, ISO 8601

  nlohmann::json to_json() const;
};

void write_run_manifest(const RunManifest& manifest, const std::filesystem::path& path);
std::string utc_timestamp();

// Fixed synthetic batch [samples, 3, window, V, M] with labels, derived only
// from the seed and the model config.
struct LabeledBatch {
  Tensor data;
  std::vector<int> labels;
};
LabeledBatch gradcheck_batch(const ModelConfig& model, std::size_t samples, std::size_t window,
                             std::uint64_t seed);

// Mean cross-entropy of the eval-mode model (dropout off, running
// normalization statistics) checked against central differences for every
// trainable parameter group. The running statistics are seeded away from
// their initial values so no pre-activation sits exactly on a ReLU kink.
GradCheckReport model_grad_check(const ModelConfig& model, const SkeletonSpec& skeleton,
                                 const GradCheckConfig& config, std::size_t window = 90);

}  // namespace toolgcn
