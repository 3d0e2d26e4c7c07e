#include "toolgcn/skeleton.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <queue>
#include <set>

#include <nlohmann/json.hpp>

#include "toolgcn/error.hpp"

namespace toolgcn {

using nlohmann::json;

SkeletonSpec default_tool_skeleton() {
  SkeletonSpec s;
  s.joint_names = {"arm", "wrist", "shaft", "effector_a", "effector_b"};
  s.edges = {{0, 1}, {1, 2}, {2, 3}, {2, 4}};
  s.center_joint = 2;
  s.reference_pose = std::vector<Point2>{{0.0, 0.0}, {0.0, 1.0}, {0.0, 2.0}, {-0.5, 3.0}, {0.5, 3.0}};
  return s;
}

std::vector<std::vector<std::size_t>> neighbor_lists(const SkeletonSpec& spec) {
  std::vector<std::vector<std::size_t>> nb(spec.num_joints());
  for (auto [a, b] : spec.edges) {
    nb.at(a).push_back(b);
    nb.at(b).push_back(a);
  }
  for (auto& l : nb) std::sort(l.begin(), l.end());
  return nb;
}

std::vector<int> hop_distances(const SkeletonSpec& spec, std::size_t source) {
  const auto nb = neighbor_lists(spec);
  std::vector<int> dist(spec.num_joints(), -1);
  std::queue<std::size_t> q;
  dist.at(source) = 0;
  q.push(source);
  while (!q.empty()) {
    const std::size_t u = q.front();
    q.pop();
    for (std::size_t v : nb[u]) {
      if (dist[v] < 0) {
        dist[v] = dist[u] + 1;
        q.push(v);
      }
    }
  }
  return dist;
}

void validate_skeleton(const SkeletonSpec& spec) {
  const std::size_t V = spec.num_joints();
  if (V < 1) throw ValidationError("skeleton has no joints");
  std::set<std::pair<std::size_t, std::size_t>> seen;
  for (auto [a, b] : spec.edges) {
    if (a >= V || b >= V)
      throw ValidationError("skeleton edge (" + std::to_string(a) + "," + std::to_string(b) +
                            ") references a joint outside [0," + std::to_string(V) + ")");
    if (a == b) throw ValidationError("skeleton edge at joint " + std::to_string(a) + " is a self-loop");
    if (!seen.insert(std::minmax(a, b)).second)
      throw ValidationError("duplicate skeleton edge (" + std::to_string(a) + "," +
                            std::to_string(b) + ")");
  }
  if (spec.center_joint >= V) throw ValidationError("skeleton center joint out of range");
  const auto dist = hop_distances(spec, 0);
  for (std::size_t v = 0; v < V; ++v)
    if (dist[v] < 0)
      throw ValidationError("skeleton is disconnected: joint " + std::to_string(v) + " (" +
                            spec.joint_names[v] + ") is unreachable from joint 0");
  if (spec.reference_pose) {
    if (spec.reference_pose->size() != V)
      throw ValidationError("skeleton reference pose has " +
                            std::to_string(spec.reference_pose->size()) + " points for " +
                            std::to_string(V) + " joints");
    for (const auto& p : *spec.reference_pose)
      if (!std::isfinite(p[0]) || !std::isfinite(p[1]))
        throw ValidationError("skeleton reference pose has a non-finite coordinate");
  }
}

Tensor build_adjacency(const SkeletonSpec& spec) {
  validate_skeleton(spec);
  const std::size_t V = spec.num_joints();
  Tensor a({V, V});
  for (auto [i, j] : spec.edges) {
    a[i * V + j] = 1.0;
    a[j * V + i] = 1.0;
  }
  return a;
}

SkeletonSpec load_skeleton(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open skeleton file " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ValidationError("skeleton file " + path.string() + ": " + e.what());
  }
  SkeletonSpec s;
  try {
    if (j.at("format").get<std::string>() != "toolgcn-skeleton")
      throw ValidationError("skeleton file " + path.string() + ": wrong format tag");
    if (j.at("version").get<int>() != 1)
      throw ValidationError("skeleton file " + path.string() + ": unsupported version " +
                            j.at("version").dump());
    s.joint_names = j.at("joints").get<std::vector<std::string>>();
    for (const auto& e : j.at("edges")) s.edges.emplace_back(e.at(0).get<std::size_t>(), e.at(1).get<std::size_t>());
    s.center_joint = j.at("center").get<std::size_t>();
    if (j.contains("reference_pose")) {
      std::vector<Point2> pose;
      for (const auto& p : j.at("reference_pose")) pose.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
      s.reference_pose = std::move(pose);
    }
  } catch (const json::exception& e) {
    throw ValidationError("skeleton file " + path.string() + ": " + e.what());
  }
  validate_skeleton(s);
  return s;
}

void save_skeleton(const SkeletonSpec& spec, const std::filesystem::path& path) {
  validate_skeleton(spec);
  json j;
  j["format"] = "toolgcn-skeleton";
  j["version"] = 1;
  j["joints"] = spec.joint_names;
  j["edges"] = json::array();
  for (auto [a, b] : spec.edges) j["edges"].push_back({a, b});
  j["center"] = spec.center_joint;
  if (spec.reference_pose) {
    j["reference_pose"] = json::array();
    for (const auto& p : *spec.reference_pose) j["reference_pose"].push_back({p[0], p[1]});
  }
  std::ofstream out(path);
  if (!out) throw IoError("cannot write skeleton file " + path.string());
  out << j.dump(2) << '\n';
}

}  // namespace toolgcn
