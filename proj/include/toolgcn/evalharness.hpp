#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "toolgcn/dataset.hpp"
#include "toolgcn/model.hpp"
#include "toolgcn/trainer.hpp"

namespace toolgcn {

inline constexpr std::size_t kEvalStep = 3;

struct SegmentPrediction {
  std::string video_id;
  std::size_t end_frame = 0;
  int label = 0;
  int predicted = 0;

  friend bool operator==(const SegmentPrediction&, const SegmentPrediction&) = default;
};

struct FoldResult {
  std::string subject;
  std::size_t classes = 0;
  std::vector<SegmentPrediction> predictions;
  double accuracy = 0.0;
  std::vector<std::vector<std::size_t>> confusion;  // [true][predicted]
  bool failed = false;
  std::string error;
  std::string error_kind;  // "validation", "numerical", "io" or "other" when failed
  std::size_t train_windows = 0;
  std::optional<double> train_accuracy;
  double seconds = 0.0;

  std::size_t correct() const;
};

// Eval-mode argmax over every step-3 window of the test videos (ties to the
// lowest class index). Throws ValidationError for an empty test set.
FoldResult evaluate_fold(StgcnModel& model, const Dataset& data, std::span<const std::size_t> test_videos,
                         std::size_t window = 90, std::size_t batch_size = 32);

// Fills accuracy and confusion from predictions.
void score_fold(FoldResult& fold);

struct CrossvalOptions {
  ModelConfig model;
  TrainConfig train;
  SkeletonSpec skeleton = default_tool_skeleton();
  std::optional<std::string> fold;  // only this held-out subject
  // Control run: training labels permuted per fold with a fold-derived seed.
  bool shuffle_labels = false;
  bool measure_train_accuracy = false;
  std::size_t jobs = 1;
  std::optional<std::filesystem::path> work_dir;  // per-fold checkpoints
  std::function<void(const std::string& subject, const EpochMetrics&)> on_epoch;
  std::function<void(const FoldResult&)> on_fold;
};

struct CrossvalReport {
  std::vector<FoldResult> folds;
  std::optional<double> average;  // unweighted fold mean; withheld if a fold failed
  double pooled = 0.0;            // correct / total over all folds
  double chance = 0.0;            // 1 / vocabulary size
  std::vector<std::string> vocabulary;
  std::uint64_t config_digest = 0;
  std::uint64_t seed = 0;
  bool shuffled_labels = false;
  std::vector<std::string> warnings;
  double seconds = 0.0;

  bool ok() const;
};

CrossvalReport crossval(const Dataset& data, const CrossvalOptions& options);

// Fold mean, pooled accuracy and chance line from the fold results.
void aggregate(CrossvalReport& report);

// report.json, predictions.csv (video_id,subject,end_frame,label,predicted)
// and confusion_<subject>.svg per fold.
void emit_report(const CrossvalReport& report, const std::filesystem::path& out_dir);
CrossvalReport load_report(const std::filesystem::path& report_json);

nlohmann::json report_json(const CrossvalReport& report);
std::string confusion_svg(const FoldResult& fold, std::span<const std::string> labels);

}  // namespace toolgcn
