#include "toolgcn/pose.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>

#include "text_util.hpp"
#include "toolgcn/error.hpp"

namespace toolgcn {

PoseSequence::PoseSequence(std::string id, std::size_t frames, std::size_t tools, std::size_t joints)
    : video_id(std::move(id)),
      frames_(frames),
      tools_(tools),
      joints_(joints),
      values_(frames * tools * joints * 3, 0.0) {}

void PoseSequence::validate() const {
  for (std::size_t f = 0; f < frames_; ++f)
    for (std::size_t m = 0; m < tools_; ++m)
      for (std::size_t v = 0; v < joints_; ++v) {
        const std::string where = "frame " + std::to_string(f) + ", tool " + std::to_string(m) +
                                  ", joint " + std::to_string(v);
        if (!std::isfinite(x(f, m, v)) || !std::isfinite(y(f, m, v)))
          throw ValidationError(video_id + ": non-finite coordinate at " + where);
        const double c = confidence(f, m, v);
        if (!(c >= 0.0 && c <= 1.0))
          throw ValidationError(video_id + ": confidence " + format_double(c) +
                                " out of range [0,1] at " + where);
      }
}

namespace {

const char* const kPoseHeader = "video_id,frame,tool,joint,x,y,confidence";

struct Cell {
  double x, y, c;
};

}  // namespace

PoseSequence load_pose_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open pose file " + path.string());
  const std::string where = "pose file " + path.string();

  std::string line;
  if (!std::getline(in, line)) throw ValidationError(where + ": empty file");
  strip_cr(line);
  if (line != kPoseHeader)
    throw ValidationError(where + ": header must be '" + std::string(kPoseHeader) + "'");

  std::optional<std::string> video_id;
  std::map<std::tuple<std::size_t, std::size_t, std::size_t>, Cell> cells;
  std::size_t max_frame = 0, max_tool = 0, max_joint = 0;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    strip_cr(line);
    if (line.empty()) continue;
    const auto fields = split(line, ',');
    const std::string at = where + ", line " + std::to_string(line_no);
    if (fields.size() != 7) throw ValidationError(at + ": expected 7 columns, got " + std::to_string(fields.size()));
    if (!video_id) video_id = fields[0];
    else if (*video_id != fields[0])
      throw ValidationError(at + ": video_id '" + fields[0] + "' differs from '" + *video_id + "'");
    const auto frame = parse_index(fields[1], at + " frame");
    const auto tool = parse_index(fields[2], at + " tool");
    const auto joint = parse_index(fields[3], at + " joint");
    Cell c{parse_real(fields[4], at + " x"), parse_real(fields[5], at + " y"),
           parse_real(fields[6], at + " confidence")};
    if (!std::isfinite(c.x) || !std::isfinite(c.y) || !std::isfinite(c.c))
      throw ValidationError(at + ": non-finite value");
    if (!(c.c >= 0.0 && c.c <= 1.0))
      throw ValidationError(at + ": confidence " + fields[6] + " out of range [0,1]");
    if (!cells.emplace(std::make_tuple(frame, tool, joint), c).second)
      throw ValidationError(at + ": duplicate cell (frame " + std::to_string(frame) + ", tool " +
                            std::to_string(tool) + ", joint " + std::to_string(joint) + ")");
    max_frame = std::max(max_frame, frame);
    max_tool = std::max(max_tool, tool);
    max_joint = std::max(max_joint, joint);
  }
  if (cells.empty()) throw ValidationError(where + ": no pose rows");

  const std::size_t F = max_frame + 1, M = max_tool + 1, V = max_joint + 1;
  PoseSequence seq(*video_id, F, M, V);

  for (std::size_t m = 0; m < M; ++m) {
    std::optional<std::size_t> first_seen;
    std::optional<std::size_t> last_seen;
    for (std::size_t f = 0; f < F; ++f) {
      std::size_t present = 0;
      for (std::size_t v = 0; v < V; ++v) present += cells.count({f, m, v});
      if (present == 0) continue;
      if (present != V) {
        for (std::size_t v = 0; v < V; ++v)
          if (!cells.count({f, m, v}))
            throw ValidationError(where + ": missing cell at frame " + std::to_string(f) +
                                  ", tool " + std::to_string(m) + ", joint " + std::to_string(v));
      }
      for (std::size_t v = 0; v < V; ++v) {
        const Cell& c = cells.at({f, m, v});
        seq.x(f, m, v) = c.x;
        seq.y(f, m, v) = c.y;
        seq.confidence(f, m, v) = c.c;
      }
      if (!first_seen) first_seen = f;
      // Fill the gap since the previous observation.
      const std::size_t gap_begin = last_seen ? *last_seen + 1 : 0;
      const std::size_t source = last_seen ? *last_seen : f;
      for (std::size_t g = gap_begin; g < f; ++g)
        for (std::size_t v = 0; v < V; ++v) {
          seq.x(g, m, v) = seq.x(source, m, v);
          seq.y(g, m, v) = seq.y(source, m, v);
          seq.confidence(g, m, v) = 0.0;
        }
      last_seen = f;
    }
    if (!last_seen)
      throw ValidationError(where + ": tool " + std::to_string(m) + " has no observations");
    for (std::size_t g = *last_seen + 1; g < F; ++g)
      for (std::size_t v = 0; v < V; ++v) {
        seq.x(g, m, v) = seq.x(*last_seen, m, v);
        seq.y(g, m, v) = seq.y(*last_seen, m, v);
        seq.confidence(g, m, v) = 0.0;
      }
  }
  return seq;
}

void save_pose_file(const PoseSequence& seq, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write pose file " + path.string());
  out << kPoseHeader << '\n';
  for (std::size_t f = 0; f < seq.frames(); ++f)
    for (std::size_t m = 0; m < seq.tools(); ++m)
      for (std::size_t v = 0; v < seq.joints(); ++v)
        out << seq.video_id << ',' << f << ',' << m << ',' << v << ',' << format_double(seq.x(f, m, v))
            << ',' << format_double(seq.y(f, m, v)) << ',' << format_double(seq.confidence(f, m, v))
            << '\n';
  if (!out) throw IoError("failed writing pose file " + path.string());
}

PoseSequence normalize_coords(const PoseSequence& seq) {
  if (seq.normalized) throw ValidationError(seq.video_id + ": coordinates are already normalized");
  if (!(seq.image_width > 0.0) || !(seq.image_height > 0.0))
    throw ValidationError(seq.video_id + ": image dimensions must be positive to normalize");
  PoseSequence out = seq;
  for (std::size_t f = 0; f < seq.frames(); ++f)
    for (std::size_t m = 0; m < seq.tools(); ++m)
      for (std::size_t v = 0; v < seq.joints(); ++v) {
        out.x(f, m, v) = 2.0 * seq.x(f, m, v) / seq.image_width - 1.0;
        out.y(f, m, v) = 2.0 * seq.y(f, m, v) / seq.image_height - 1.0;
      }
  out.normalized = true;
  return out;
}

}  // namespace toolgcn
