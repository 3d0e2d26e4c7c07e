#pragma once

#include <span>
#include <string>

#include "toolgcn/skeleton.hpp"
#include "toolgcn/tensor.hpp"

namespace toolgcn {

/// Stack of K adjacency matrices [K, V, V], one per neighborhood partition.
struct PartitionedAdjacency {
  Tensor matrices;

  std::size_t partitions() const { return matrices.dim(0); }
  std::size_t joints() const { return matrices.dim(1); }
  // Copy of matrix k as [V, V].
  Tensor matrix(std::size_t k) const;
};

enum class PartitionStrategy { kSpatial, kUniform };
enum class PartitionMode { kStatic, kPerFrame };
enum class Normalization { kLeft, kSymmetric };

struct PartitionConfig {
  PartitionStrategy strategy = PartitionStrategy::kSpatial;
  PartitionMode mode = PartitionMode::kStatic;
  Normalization normalization = Normalization::kLeft;
  double alpha = 0.001;

  std::size_t partitions() const { return strategy == PartitionStrategy::kSpatial ? 3 : 1; }
};

std::string to_string(PartitionStrategy s);
std::string to_string(PartitionMode m);
std::string to_string(Normalization n);
PartitionStrategy parse_partition_strategy(const std::string& s);
PartitionMode parse_partition_mode(const std::string& s);
Normalization parse_normalization(const std::string& s);

enum PartitionLabel : std::size_t { kRootGroup = 0, kCentripetal = 1, kCentrifugal = 2 };

// Mean of the joint coordinates of one frame.
Point2 gravity_center(std::span<const Point2> pose);

// Spatial-configuration labelling against the pose's gravity center c. For
// each root i and each j in {i} u neighbors(i), entry (i, j) goes to
// partition 0 when |p_j - c| equals |p_i - c|, 1 when strictly closer and
// 2 when strictly farther. Distances within a relative 1e-9 of each other
// count as equal. Returned un-normalized.
PartitionedAdjacency spatial_config_partition(const SkeletonSpec& spec, std::span<const Point2> pose);

// Same labelling with hop distance to the center joint in place of the
// Euclidean distance to the gravity center.
PartitionedAdjacency hop_partition(const SkeletonSpec& spec);

// Single partition A + I.
PartitionedAdjacency uniform_partition(const SkeletonSpec& spec);

// Left: A_k <- L_k^-1 A_k. Symmetric: A_k <- L_k^-1/2 A_k L_k^-1/2.
// L_k is diagonal with L_k[i, i] = sum_j A_k[i, j] + alpha.
PartitionedAdjacency normalize_partitions(const PartitionedAdjacency& p, double alpha,
                                          Normalization kind = Normalization::kLeft);

// Normalized stack used by static mode: spatial labels from the reference
// pose when present, else from hop distance; or the uniform baseline.
PartitionedAdjacency build_partition_stack(const SkeletonSpec& spec, const PartitionConfig& cfg);

// Per-frame mode: normalized stacks recomputed from the coordinates of
// every frame. coords is [B, C, T, V] with x and y in channels 0 and 1.
// Returns [B, T, K, V, V].
Tensor build_partition_field(const SkeletonSpec& spec, const PartitionConfig& cfg,
                             const Tensor& coords);

// Keeps every stride-th frame of a [B, T, K, V, V] field.
Tensor subsample_field(const Tensor& field, std::size_t stride);

}  // namespace toolgcn
