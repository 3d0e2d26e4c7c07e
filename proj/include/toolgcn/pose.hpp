#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace toolgcn {

/// Joint detections of one video: frames x tools x joints x (x, y, confidence).
///
/// Coordinates are pixels until normalize_coords() maps them to [-1, 1];
/// `normalized` records which space the values are in.
class PoseSequence {
 public:
  PoseSequence() = default;
  PoseSequence(std::string video_id, std::size_t frames, std::size_t tools, std::size_t joints);

  std::string video_id;
  std::string subject_id;
  double frame_rate = 30.0;
  double image_width = 0.0;
  double image_height = 0.0;
  bool normalized = false;

  std::size_t frames() const { return frames_; }
  std::size_t tools() const { return tools_; }
  std::size_t joints() const { return joints_; }

  double& x(std::size_t f, std::size_t m, std::size_t v) { return values_[index(f, m, v)]; }
  double& y(std::size_t f, std::size_t m, std::size_t v) { return values_[index(f, m, v) + 1]; }
  double& confidence(std::size_t f, std::size_t m, std::size_t v) { return values_[index(f, m, v) + 2]; }
  double x(std::size_t f, std::size_t m, std::size_t v) const { return values_[index(f, m, v)]; }
  double y(std::size_t f, std::size_t m, std::size_t v) const { return values_[index(f, m, v) + 1]; }
  double confidence(std::size_t f, std::size_t m, std::size_t v) const {
    return values_[index(f, m, v) + 2];
  }

  const std::vector<double>& values() const { return values_; }

  // Checks the finite-coordinate and confidence-range invariants.
  void validate() const;

  friend bool operator==(const PoseSequence&, const PoseSequence&) = default;

 private:
  std::size_t index(std::size_t f, std::size_t m, std::size_t v) const {
    return ((f * tools_ + m) * joints_ + v) * 3;
  }

  std::size_t frames_ = 0;
  std::size_t tools_ = 0;
  std::size_t joints_ = 0;
  std::vector<double> values_;
};

// Pose table: UTF-8 CSV with header "video_id,frame,tool,joint,x,y,confidence"
// and one row per cell. Rows may come in any order and are sorted by
// (frame, tool, joint) on load. A tool with no rows in a frame is filled
// from its last observed pose (or, before its first observation, from the
// first one) with confidence 0. A tool with only some of its joints in a
// frame is an error naming the first missing (frame, tool, joint).
PoseSequence load_pose_file(const std::filesystem::path& path);
void save_pose_file(const PoseSequence& seq, const std::filesystem::path& path);

// x -> 2x / width - 1, y -> 2y / height - 1. Rejects zero image dimensions
// and sequences that are already normalized.
PoseSequence normalize_coords(const PoseSequence& seq);

}  // namespace toolgcn
