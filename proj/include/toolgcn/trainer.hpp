#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "toolgcn/augment.hpp"
#include "toolgcn/dataset.hpp"
#include "toolgcn/model.hpp"

namespace toolgcn {

// How label-conditioned random fragments enter the training stream.
enum class FragmentMode {
  kOff,         // sliding windows only
  kSupplement,  // sliding windows plus fragment_ratio * their count fragments
  kReplace,     // the same number of samples, all drawn as fragments
};

std::string to_string(FragmentMode m);
FragmentMode parse_fragment_mode(const std::string& s);

struct TrainConfig {
  std::size_t epochs = 30;
  double base_lr = 0.01;
  std::size_t lr_step = 10;  // epochs between decays
  double lr_factor = 0.1;
  double weight_decay = 0.0005;
  std::size_t batch_size = 16;
  double momentum = 0.0;
  double dropout = 0.5;  // before the classifier
  std::uint64_t seed = 1;
  std::size_t window = 90;
  std::size_t train_step = 3;  // stride between training window end frames
  bool augment = true;
  AffineRanges affine;
  FragmentMode fragments = FragmentMode::kSupplement;
  double fragment_ratio = 0.25;

  void validate() const;
  nlohmann::json to_json() const;
  // Starts from the defaults; unknown keys are rejected with their name.
  static TrainConfig from_json(const nlohmann::json& j);
};

// base_lr * lr_factor^floor(epoch / lr_step)
double lr_at(std::size_t epoch, const TrainConfig& cfg);

// Per trainable parameter (ModelParams::trainable() order):
//   g' = g + weight_decay * w   (weight decay on kWeight parameters only)
//   v  = momentum * v + g'      (v is skipped when momentum is 0)
//   w  = w - lr * v
// Throws NumericalError naming the first parameter with a non-finite
// gradient; nothing is modified in that case. `velocity` is sized on first use.
void sgd_step(ModelParams& params, std::span<const Tensor> grads, double lr, double weight_decay,
              double momentum, std::vector<Tensor>& velocity);

struct EpochMetrics {
  std::size_t epoch = 0;
  double lr = 0.0;
  double loss = 0.0;      // mean over samples
  double accuracy = 0.0;  // online, train mode with augmentation
  std::size_t samples = 0;
  std::optional<double> val_accuracy;

  friend bool operator==(const EpochMetrics&, const EpochMetrics&) = default;
};

struct TrainState {
  std::size_t epoch = 0;  // completed epochs
  std::size_t step = 0;   // completed optimizer steps
  std::string rng_state;
  ModelParams params;
  std::vector<Tensor> velocity;
  std::vector<EpochMetrics> history;
  std::optional<double> best_val_accuracy;
  std::string best_checkpoint;
};

// Checkpoint: the parameter container with kind "checkpoint", holding
// "param:<name>" and "velocity:<name>" tensors and the configs, counters,
// random-source state and history as metadata.
void save_checkpoint(const TrainState& state, const ModelConfig& model, const TrainConfig& train,
                     const std::filesystem::path& path);
TrainState load_checkpoint(const std::filesystem::path& path, const ModelConfig& model);

struct TrainSample {
  std::size_t video = 0;  // index into Dataset::videos
  std::size_t end_frame = 0;
  int label = 0;
};

// Sliding training windows of the given videos, end frames every
// `train_step` frames over transcribed frames.
std::vector<TrainSample> training_windows(const Dataset& data, std::span<const std::size_t> videos,
                                          std::size_t window, std::size_t train_step);

struct TrainOptions {
  std::vector<std::size_t> train_videos;       // indices into Dataset::videos
  std::vector<std::size_t> validation_videos;  // optional
  std::optional<std::filesystem::path> out_dir;  // checkpoints + metrics.csv
  std::optional<std::filesystem::path> resume;   // checkpoint to continue from
  // Permutes the labels of the training windows (fragments are disabled).
  std::optional<std::uint64_t> label_shuffle_seed;
  // Eval-mode accuracy on the unaugmented training windows after training.
  bool measure_train_accuracy = false;
  // Stop after this many completed epochs (for interrupted-run tests).
  std::optional<std::size_t> stop_after;
  std::function<void(const EpochMetrics&)> on_epoch;
};

struct TrainResult {
  TrainState state;
  std::optional<double> train_accuracy;
  std::size_t windows = 0;  // sliding windows per epoch
};

TrainResult train(const Dataset& data, const ModelConfig& model, const SkeletonSpec& skeleton,
                  const TrainConfig& cfg, const TrainOptions& options);

// Eval-mode predictions (argmax, ties to the lowest index) for windows.
std::vector<int> predict_windows(StgcnModel& model, const Dataset& data,
                                 std::span<const TrainSample> samples, std::size_t window,
                                 std::size_t batch_size = 32);

int argmax(std::span<const double> row);

}  // namespace toolgcn
