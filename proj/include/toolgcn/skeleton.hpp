#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "toolgcn/tensor.hpp"

namespace toolgcn {

using Point2 = std::array<double, 2>;

/// Joint layout of one surgical tool.
struct SkeletonSpec {
  std::vector<std::string> joint_names;
  std::vector<std::pair<std::size_t, std::size_t>> edges;  // unordered pairs
  std::size_t center_joint = 0;
  std::optional<std::vector<Point2>> reference_pose;

  std::size_t num_joints() const { return joint_names.size(); }
};

// Five joints: arm, wrist, shaft, effector_a, effector_b. Edges form the
// tree arm-wrist-shaft with the shaft branching to both effectors; the
// shaft is the center joint. The reference pose is the upright grasper
// arm (0,0), wrist (0,1), shaft (0,2), effectors (-0.5,3) and (0.5,3).
SkeletonSpec default_tool_skeleton();

// Throws ValidationError on out-of-range endpoints, self-loops, duplicate
// edges, a disconnected edge set, a bad center joint or a reference pose of
// the wrong length.
void validate_skeleton(const SkeletonSpec& spec);

// Symmetric 0/1 matrix [V, V] with zero diagonal.
Tensor build_adjacency(const SkeletonSpec& spec);

// Breadth-first hop counts from `source`; unreachable joints get -1.
std::vector<int> hop_distances(const SkeletonSpec& spec, std::size_t source);

std::vector<std::vector<std::size_t>> neighbor_lists(const SkeletonSpec& spec);

// Skeleton files are JSON:
//   {"format": "toolgcn-skeleton", "version": 1,
//    "joints": [names...], "edges": [[i, j], ...], "center": c,
//    "reference_pose": [[x, y], ...]}      (reference_pose optional)
SkeletonSpec load_skeleton(const std::filesystem::path& path);
void save_skeleton(const SkeletonSpec& spec, const std::filesystem::path& path);

}  // namespace toolgcn
