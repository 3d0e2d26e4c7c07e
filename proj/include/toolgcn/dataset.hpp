#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "toolgcn/pose.hpp"
#include "toolgcn/transcript.hpp"

namespace toolgcn {

struct ManifestVideo {
  std::string video_id;
  std::string subject_id;
  std::string task;
  std::string pose_path;        // relative to the manifest directory
  std::string transcript_path;  // relative to the manifest directory
};

/// Dataset index, stored as manifest.json:
///   {"format": "toolgcn-manifest", "version": 1, "task": "Suturing",
///    "frame_rate": 30, "index_base": 0, "image_width": 640,
///    "image_height": 480, "tools": 2, "joints": 5,
///    "vocabulary": ["G1", ...],
///    "videos": [{"video_id": ..., "subject": ..., "task": ...,
///                "pose": "poses/x.csv", "transcript": "transcriptions/x.txt"}]}
struct Manifest {
  std::string task = "Suturing";
  double frame_rate = 30.0;
  int index_base = 0;
  double image_width = 640.0;
  double image_height = 480.0;
  std::size_t tools = 2;
  std::size_t joints = 5;
  GestureVocabulary vocabulary = GestureVocabulary::suturing();
  std::vector<ManifestVideo> videos;

  std::vector<std::string> subjects() const;  // sorted, unique
};

Manifest load_manifest(const std::filesystem::path& path);
void save_manifest(const Manifest& manifest, const std::filesystem::path& path);

struct Video {
  std::string subject_id;
  PoseSequence pose;  // normalized
  Transcript transcript;
};

struct Dataset {
  Manifest manifest;
  std::vector<Video> videos;  // manifest order

  std::size_t index_of(const std::string& video_id) const;
};

// Loads manifest.json from `dir` (or the manifest file itself), every pose
// file and transcript, and normalizes coordinates.
Dataset load_dataset(const std::filesystem::path& dir_or_manifest);

struct Fold {
  std::string subject;
  std::vector<std::string> test_videos;
  std::vector<std::string> train_videos;
};

struct FoldPlan {
  std::vector<Fold> folds;
  std::vector<std::string> warnings;
};

inline constexpr std::size_t kLouoSubjects = 8;

// Leave-one-user-out: one fold per subject (sorted by subject id). A subject
// count other than eight is allowed with a warning.
FoldPlan build_louo_folds(const Manifest& manifest);

// Throws ValidationError if a plan breaks the coverage/disjointness rules.
void check_fold_plan(const FoldPlan& plan, const Manifest& manifest);

}  // namespace toolgcn
