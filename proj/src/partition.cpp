#include "toolgcn/partition.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "toolgcn/error.hpp"

namespace toolgcn {

Tensor PartitionedAdjacency::matrix(std::size_t k) const {
  const std::size_t V = joints();
  Tensor m({V, V});
  std::copy_n(matrices.ptr() + k * V * V, V * V, m.ptr());
  return m;
}

std::string to_string(PartitionStrategy s) {
  return s == PartitionStrategy::kSpatial ? "spatial" : "uniform";
}
std::string to_string(PartitionMode m) { return m == PartitionMode::kStatic ? "static" : "per_frame"; }
std::string to_string(Normalization n) { return n == Normalization::kLeft ? "left" : "symmetric"; }

PartitionStrategy parse_partition_strategy(const std::string& s) {
  if (s == "spatial") return PartitionStrategy::kSpatial;
  if (s == "uniform") return PartitionStrategy::kUniform;
  throw ValidationError("unknown partition strategy '" + s + "' (spatial|uniform)");
}
PartitionMode parse_partition_mode(const std::string& s) {
  if (s == "static") return PartitionMode::kStatic;
  if (s == "per_frame") return PartitionMode::kPerFrame;
  throw ValidationError("unknown partition mode '" + s + "' (static|per_frame)");
}
Normalization parse_normalization(const std::string& s) {
  if (s == "left") return Normalization::kLeft;
  if (s == "symmetric") return Normalization::kSymmetric;
  throw ValidationError("unknown normalization '" + s + "' (left|symmetric)");
}

Point2 gravity_center(std::span<const Point2> pose) {
  if (pose.empty()) throw ValidationError("gravity_center of an empty pose");
  Point2 c{0.0, 0.0};
  for (const auto& p : pose) {
    c[0] += p[0];
    c[1] += p[1];
  }
  c[0] /= static_cast<double>(pose.size());
  c[1] /= static_cast<double>(pose.size());
  return c;
}

namespace {

template <typename Dist>
PartitionedAdjacency label_by_distance(const SkeletonSpec& spec, const std::vector<Dist>& dist,
                                       double tie) {
  const std::size_t V = spec.num_joints();
  const auto nb = neighbor_lists(spec);
  PartitionedAdjacency p{Tensor({3, V, V})};
  double* m = p.matrices.ptr();
  for (std::size_t i = 0; i < V; ++i) {
    auto place = [&](std::size_t j) {
      const double d = static_cast<double>(dist[j]) - static_cast<double>(dist[i]);
      std::size_t label = kRootGroup;
      if (d < -tie) label = kCentripetal;
      else if (d > tie) label = kCentrifugal;
      m[(label * V + i) * V + j] = 1.0;
    };
    place(i);
    for (std::size_t j : nb[i]) place(j);
  }
  return p;
}

}  // namespace

PartitionedAdjacency spatial_config_partition(const SkeletonSpec& spec, std::span<const Point2> pose) {
  if (pose.size() != spec.num_joints())
    throw ValidationError("pose has " + std::to_string(pose.size()) + " joints, skeleton has " +
                          std::to_string(spec.num_joints()));
  const Point2 c = gravity_center(pose);
  std::vector<double> dist(pose.size());
  double scale = 0.0;
  for (std::size_t v = 0; v < pose.size(); ++v) {
    dist[v] = std::hypot(pose[v][0] - c[0], pose[v][1] - c[1]);
    scale = std::max(scale, dist[v]);
  }
  return label_by_distance(spec, dist, 1e-9 * scale);
}

PartitionedAdjacency hop_partition(const SkeletonSpec& spec) {
  validate_skeleton(spec);
  return label_by_distance(spec, hop_distances(spec, spec.center_joint), 0.5);
}

PartitionedAdjacency uniform_partition(const SkeletonSpec& spec) {
  const Tensor a = build_adjacency(spec);
  const std::size_t V = spec.num_joints();
  PartitionedAdjacency p{Tensor({1, V, V})};
  for (std::size_t i = 0; i < V * V; ++i) p.matrices[i] = a[i];
  for (std::size_t i = 0; i < V; ++i) p.matrices[i * V + i] = 1.0;
  return p;
}

PartitionedAdjacency normalize_partitions(const PartitionedAdjacency& p, double alpha,
                                          Normalization kind) {
  if (!(alpha > 0.0)) throw ValidationError("normalization alpha must be positive");
  const std::size_t K = p.partitions(), V = p.joints();
  PartitionedAdjacency out{p.matrices};
  std::vector<double> deg(V);
  for (std::size_t k = 0; k < K; ++k) {
    double* a = out.matrices.ptr() + k * V * V;
    for (std::size_t i = 0; i < V; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < V; ++j) s += a[i * V + j];
      deg[i] = s + alpha;
    }
    for (std::size_t i = 0; i < V; ++i)
      for (std::size_t j = 0; j < V; ++j) {
        if (kind == Normalization::kLeft)
          a[i * V + j] /= deg[i];
        else
          a[i * V + j] /= std::sqrt(deg[i] * deg[j]);
      }
  }
  return out;
}

PartitionedAdjacency build_partition_stack(const SkeletonSpec& spec, const PartitionConfig& cfg) {
  validate_skeleton(spec);
  PartitionedAdjacency raw;
  if (cfg.strategy == PartitionStrategy::kUniform)
    raw = uniform_partition(spec);
  else if (spec.reference_pose)
    raw = spatial_config_partition(spec, *spec.reference_pose);
  else
    raw = hop_partition(spec);
  return normalize_partitions(raw, cfg.alpha, cfg.normalization);
}

Tensor build_partition_field(const SkeletonSpec& spec, const PartitionConfig& cfg, const Tensor& coords) {
  if (coords.rank() != 4 || coords.dim(1) < 2)
    throw ValidationError("per-frame partitioning needs [B, C>=2, T, V] coordinates, got " +
                          shape_str(coords.shape()));
  const std::size_t B = coords.dim(0), C = coords.dim(1), T = coords.dim(2), V = coords.dim(3);
  if (V != spec.num_joints())
    throw ValidationError("coordinates have V=" + std::to_string(V) + ", skeleton has " +
                          std::to_string(spec.num_joints()));
  const std::size_t K = cfg.partitions();
  Tensor field({B, T, K, V, V});
  if (cfg.strategy == PartitionStrategy::kUniform) {
    const auto stack = normalize_partitions(uniform_partition(spec), cfg.alpha, cfg.normalization);
    for (std::size_t bt = 0; bt < B * T; ++bt)
      std::memcpy(field.ptr() + bt * K * V * V, stack.matrices.ptr(), K * V * V * sizeof(double));
    return field;
  }
  std::vector<Point2> pose(V);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t t = 0; t < T; ++t) {
      for (std::size_t v = 0; v < V; ++v) {
        pose[v][0] = coords[((b * C + 0) * T + t) * V + v];
        pose[v][1] = coords[((b * C + 1) * T + t) * V + v];
        if (!std::isfinite(pose[v][0]) || !std::isfinite(pose[v][1]))
          throw ValidationError("per-frame partitioning: missing coordinate at sample " +
                                std::to_string(b) + ", frame " + std::to_string(t) + ", joint " +
                                std::to_string(v));
      }
      const auto stack = normalize_partitions(spatial_config_partition(spec, pose), cfg.alpha,
                                              cfg.normalization);
      std::memcpy(field.ptr() + (b * T + t) * K * V * V, stack.matrices.ptr(),
                  K * V * V * sizeof(double));
    }
  return field;
}

Tensor subsample_field(const Tensor& field, std::size_t stride) {
  if (stride == 1) return field;
  const std::size_t B = field.dim(0), T = field.dim(1);
  const std::size_t block = field.dim(2) * field.dim(3) * field.dim(4);
  const std::size_t To = (T - 1) / stride + 1;
  Tensor out({B, To, field.dim(2), field.dim(3), field.dim(4)});
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t t = 0; t < To; ++t)
      std::memcpy(out.ptr() + (b * To + t) * block, field.ptr() + (b * T + t * stride) * block,
                  block * sizeof(double));
  return out;
}

}  // namespace toolgcn
