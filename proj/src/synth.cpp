#include "toolgcn/synth.hpp"

#include <cmath>
#include <numbers>

#include "toolgcn/error.hpp"
#include "toolgcn/rng.hpp"

namespace toolgcn {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

struct ClassPattern {
  double freq;        // Hz of the main oscillation
  double phase;
  double swing;       // wrist swing amplitude, radians
  double orbit;       // arm-base orbit radius, pixels
  double bend;        // static shaft bend, radians
  double opening;     // mean effector half-angle, radians
  double grip_rate;   // effector oscillation frequency multiplier
  double tool_gain[2];  // activity of left/right tool
  double drift[2];    // arm-base drift direction
  double home[2];     // class-specific working position offset, pixels
  double lean;        // class-specific tool tilt, radians
};

struct SubjectStyle {
  double dx, dy, scale, tempo, noise;
};

std::string subject_name(std::size_t s) {
  // JIGSAWS-style single letters B..I, continuing alphabetically.
  if (s < 25) return std::string(1, static_cast<char>('B' + s));
  return "S" + std::to_string(s);
}

std::vector<ClassPattern> make_patterns(std::size_t classes, Rng& rng) {
  std::vector<ClassPattern> p(classes);
  // Spread frequencies over 0.4..2.6 Hz and assign them in shuffled order so
  // neighbouring classes in the gesture cycle differ strongly.
  std::vector<std::size_t> order(classes);
  for (std::size_t i = 0; i < classes; ++i) order[i] = i;
  rng.shuffle(std::span<std::size_t>(order));
  for (std::size_t c = 0; c < classes; ++c) {
    const double rank = classes > 1 ? static_cast<double>(order[c]) / static_cast<double>(classes - 1) : 0.5;
    auto& q = p[c];
    q.freq = 0.4 + 2.2 * rank;
    q.phase = rng.uniform(0.0, kTwoPi);
    q.swing = rng.uniform(0.2, 0.8);
    q.orbit = rng.uniform(15.0, 45.0);
    q.bend = rng.uniform(-0.7, 0.7);
    q.opening = rng.uniform(0.1, 0.8);
    q.grip_rate = rng.uniform(0.5, 2.0);
    switch (c % 3) {
      case 0: q.tool_gain[0] = 1.0; q.tool_gain[1] = 0.25; break;
      case 1: q.tool_gain[0] = 0.25; q.tool_gain[1] = 1.0; break;
      default: q.tool_gain[0] = 0.8; q.tool_gain[1] = 0.8; break;
    }
    const double a = rng.uniform(0.0, kTwoPi);
    q.drift[0] = 40.0 * std::cos(a);
    q.drift[1] = 40.0 * std::sin(a);
    // Working positions on a ring, in shuffled order like the frequencies.
    const double b = kTwoPi * rank;
    q.home[0] = 70.0 * std::cos(b);
    q.home[1] = 50.0 * std::sin(b);
    q.lean = rng.uniform(-0.5, 0.5);
  }
  return p;
}

void pose_tool(const ClassPattern& q, const SubjectStyle& st, std::size_t tool, double tau, double progress,
               double width, double height, Rng& rng, PoseSequence& seq, std::size_t f) {
  const double g = q.tool_gain[tool];
  const double w = kTwoPi * q.freq * st.tempo;
  const double home_x = (tool == 0 ? 0.33 : 0.67) * width + st.dx + g * q.home[0];
  const double home_y = 0.62 * height + st.dy + g * q.home[1];
  const double ax = home_x + g * q.orbit * std::cos(w * tau + q.phase) + progress * q.drift[0];
  const double ay = home_y + g * q.orbit * std::sin(w * tau + q.phase) + progress * q.drift[1];
  const double lean = (tool == 0 ? 0.35 : -0.35) + g * q.lean;
  const double theta = lean + g * q.swing * std::sin(w * tau + q.phase);
  const double l1 = 60.0 * st.scale, l2 = 40.0 * st.scale, l3 = 22.0 * st.scale;
  // Image y grows downward; the tool points up from the arm.
  auto dir = [](double a) { return std::array<double, 2>{std::sin(a), -std::cos(a)}; };
  const auto d1 = dir(theta);
  const double wx = ax + l1 * d1[0], wy = ay + l1 * d1[1];
  const auto d2 = dir(theta + q.bend);
  const double sx = wx + l2 * d2[0], sy = wy + l2 * d2[1];
  const double open = q.opening * (1.0 + 0.6 * std::sin(w * q.grip_rate * tau));
  const auto da = dir(theta + q.bend - open);
  const auto db = dir(theta + q.bend + open);
  const double pts[5][2] = {{ax, ay}, {wx, wy}, {sx, sy}, {sx + l3 * da[0], sy + l3 * da[1]},
                            {sx + l3 * db[0], sy + l3 * db[1]}};
  for (std::size_t v = 0; v < 5; ++v) {
    seq.x(f, tool, v) = pts[v][0] + st.noise * rng.normal();
    seq.y(f, tool, v) = pts[v][1] + st.noise * rng.normal();
    seq.confidence(f, tool, v) = 0.75 + 0.25 * rng.uniform();
  }
}

}  // namespace

SynthData generate_synthetic(const SynthOptions& o) {
  if (o.classes < 1 || o.subjects < 1 || o.trials < 1)
    throw ValidationError("synthetic dataset needs at least one class, subject and trial");
  if (o.tools < 1 || o.tools > 2) throw ValidationError("synthetic dataset supports 1 or 2 tools");
  if (o.min_duration < 1 || o.max_duration < o.min_duration)
    throw ValidationError("synthetic gesture durations must satisfy 1 <= min <= max");

  Rng pattern_rng(derive_seed(o.seed, 1));
  const auto patterns = make_patterns(o.classes, pattern_rng);
  // Fixed gesture cycle shared by every trial.
  std::vector<std::size_t> cycle(o.classes);
  for (std::size_t i = 0; i < o.classes; ++i) cycle[i] = i;
  pattern_rng.shuffle(std::span<std::size_t>(cycle));

  SynthData data;
  data.manifest.task = "Suturing";
  data.manifest.frame_rate = o.frame_rate;
  data.manifest.index_base = 0;
  data.manifest.image_width = o.image_width;
  data.manifest.image_height = o.image_height;
  data.manifest.tools = o.tools;
  data.manifest.joints = 5;
  data.manifest.vocabulary = GestureVocabulary::first(o.classes);

  const std::size_t per_trial = o.gestures_per_trial ? o.gestures_per_trial : o.classes;
  for (std::size_t s = 0; s < o.subjects; ++s) {
    Rng srng(derive_seed(o.seed, 2, s));
    SubjectStyle st{srng.uniform(-15.0, 15.0), srng.uniform(-10.0, 10.0), srng.uniform(0.93, 1.07),
                    srng.uniform(0.9, 1.1), srng.uniform(1.0, 2.0)};
    const std::string subject = subject_name(s);
    for (std::size_t k = 0; k < o.trials; ++k) {
      Rng rng(derive_seed(o.seed, 3, s, k));
      const std::string vid = "Suturing_" + subject + (k + 1 < 10 ? "00" : "0") + std::to_string(k + 1);
      Transcript tr;
      tr.video_id = vid;
      std::size_t frame = o.lead_in;
      std::size_t pos = static_cast<std::size_t>(rng.below(o.classes));
      for (std::size_t g = 0; g < per_trial; ++g) {
        const std::size_t dur = o.min_duration + static_cast<std::size_t>(rng.below(o.max_duration - o.min_duration + 1));
        tr.entries.push_back({frame, frame + dur - 1, static_cast<int>(cycle[pos])});
        frame += dur;
        pos = (pos + 1) % o.classes;
      }
      const std::size_t frames = frame;
      PoseSequence seq(vid, frames, o.tools, 5);
      seq.subject_id = subject;
      seq.frame_rate = o.frame_rate;
      seq.image_width = o.image_width;
      seq.image_height = o.image_height;
      for (std::size_t f = 0; f < frames; ++f) {
        int label = tr.gesture_at(f);
        std::size_t start = 0, dur = 1;
        if (label < 0) {
          label = tr.entries.front().gesture;
        } else {
          for (const auto& e : tr.entries)
            if (f >= e.start_frame && f <= e.end_frame) {
              start = e.start_frame;
              dur = e.end_frame - e.start_frame + 1;
            }
        }
        const double tau = static_cast<double>(f - std::min(f, start)) / o.frame_rate;
        const double progress = static_cast<double>(f - std::min(f, start)) / static_cast<double>(dur);
        for (std::size_t m = 0; m < o.tools; ++m)
          pose_tool(patterns[static_cast<std::size_t>(label)], st, m, tau, progress, o.image_width,
                    o.image_height, rng, seq, f);
      }
      data.manifest.videos.push_back({vid, subject, "Suturing", "poses/" + vid + ".csv",
                                      "transcriptions/" + vid + ".txt"});
      data.poses.push_back(std::move(seq));
      data.transcripts.push_back(std::move(tr));
    }
  }
  return data;
}

Manifest write_synthetic(const SynthData& data, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "poses");
  fs::create_directories(dir / "transcriptions");
  for (std::size_t i = 0; i < data.poses.size(); ++i) {
    save_pose_file(data.poses[i], dir / data.manifest.videos[i].pose_path);
    save_transcript(data.transcripts[i], data.manifest.vocabulary,
                    dir / data.manifest.videos[i].transcript_path, data.manifest.index_base);
  }
  save_manifest(data.manifest, dir / "manifest.json");
  return data.manifest;
}

Dataset to_dataset(const SynthData& data) {
  Dataset ds;
  ds.manifest = data.manifest;
  for (std::size_t i = 0; i < data.poses.size(); ++i) {
    Video v;
    v.subject_id = data.manifest.videos[i].subject_id;
    v.pose = normalize_coords(data.poses[i]);
    v.transcript = data.transcripts[i];
    ds.videos.push_back(std::move(v));
  }
  return ds;
}

Manifest synth_dataset(const SynthOptions& options, const std::filesystem::path& dir) {
  return write_synthetic(generate_synthetic(options), dir);
}

}  // namespace toolgcn
