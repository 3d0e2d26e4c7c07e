#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <doctest.h>

#include "support.hpp"
#include "toolgcn/dataset.hpp"
#include "toolgcn/error.hpp"
#include "toolgcn/pose.hpp"
#include "toolgcn/segment.hpp"
#include "toolgcn/synth.hpp"
#include "toolgcn/transcript.hpp"

using namespace toolgcn;
using namespace testutil;

namespace {

void write_text(const std::filesystem::path& p, const std::string& text) { std::ofstream(p) << text; }

// CSV with `frames` frames of 1 tool x 5 joints; `skip` drops one cell.
std::string pose_csv(std::size_t frames, std::optional<std::pair<std::size_t, std::size_t>> skip = {},
                     double confidence = 0.9) {
  std::ostringstream s;
  s << "video_id,frame,tool,joint,x,y,confidence\n";
  for (std::size_t f = 0; f < frames; ++f)
    for (std::size_t v = 0; v < 5; ++v) {
      if (skip && skip->first == f && skip->second == v) continue;
      s << "vid," << f << ",0," << v << "," << 10 * f + v << "," << 100 + v << "," << confidence << "\n";
    }
  return s.str();
}

PoseSequence random_sequence(Rng& rng, std::size_t frames, std::size_t tools = 2) {
  PoseSequence seq("toy", frames, tools, 5);
  seq.image_width = 640;
  seq.image_height = 480;
  seq.normalized = true;
  for (std::size_t f = 0; f < frames; ++f)
    for (std::size_t m = 0; m < tools; ++m)
      for (std::size_t v = 0; v < 5; ++v) {
        seq.x(f, m, v) = rng.uniform(-1, 1);
        seq.y(f, m, v) = rng.uniform(-1, 1);
        seq.confidence(f, m, v) = rng.uniform();
      }
  return seq;
}

// Random transcript with gaps, possibly starting after frame 0.
Transcript random_transcript(Rng& rng, std::size_t frames, std::size_t classes) {
  Transcript t;
  t.video_id = "toy";
  std::size_t f = rng.below(12);
  while (f < frames) {
    const std::size_t len = 1 + rng.below(40);
    const std::size_t end = std::min(frames - 1, f + len - 1);
    t.entries.push_back({f, end, static_cast<int>(rng.below(classes))});
    f = end + 1 + (rng.bernoulli(0.3) ? rng.below(10) : 0);
  }
  return t;
}

// Independent oracle: walk every frame, keep the ones on the step grid that
// some entry covers, and copy frames with the first-frame padding rule.
std::vector<SegmentTensor> brute_force_segments(const PoseSequence& seq, const Transcript& t, std::size_t window,
                                                std::size_t step) {
  std::vector<SegmentTensor> out;
  for (std::size_t f = 0; f < seq.frames(); ++f) {
    if (f % step != 0) continue;
    int label = -1;
    for (const auto& e : t.entries)
      if (e.start_frame <= f && f <= e.end_frame) label = e.gesture;
    if (label < 0) continue;
    SegmentTensor s;
    s.label = label;
    s.video_id = seq.video_id;
    s.end_frame = f;
    s.data = Tensor({3, window, seq.joints(), seq.tools()});
    for (std::size_t i = 0; i < window; ++i) {
      const long want = static_cast<long>(f) - static_cast<long>(window) + 1 + static_cast<long>(i);
      const std::size_t src = want < 0 ? 0 : static_cast<std::size_t>(want);
      for (std::size_t v = 0; v < seq.joints(); ++v)
        for (std::size_t m = 0; m < seq.tools(); ++m) {
          s.data.at({0, i, v, m}) = seq.x(src, m, v);
          s.data.at({1, i, v, m}) = seq.y(src, m, v);
          s.data.at({2, i, v, m}) = seq.confidence(src, m, v);
        }
    }
    out.push_back(std::move(s));
  }
  return out;
}

Manifest subjects_manifest(std::size_t subjects, std::size_t trials) {
  Manifest m;
  for (std::size_t s = 0; s < subjects; ++s)
    for (std::size_t k = 0; k < trials; ++k) {
      const std::string subject(1, static_cast<char>('B' + s));
      const std::string id = "Suturing_" + subject + "00" + std::to_string(k + 1);
      m.videos.push_back({id, subject, "Suturing", "poses/" + id + ".csv", "transcriptions/" + id + ".txt"});
    }
  return m;
}

}  // namespace

TEST_CASE("pose file loading") {
  TempDir dir("pose");
  SUBCASE("well-formed file") {
    write_text(dir / "a.csv", pose_csv(3));
    const PoseSequence seq = load_pose_file(dir / "a.csv");
    CHECK(seq.frames() == 3);
    CHECK(seq.tools() == 1);
    CHECK(seq.joints() == 5);
    CHECK(seq.x(2, 0, 4) == 24.0);
    CHECK(seq.y(1, 0, 3) == 103.0);
    CHECK_FALSE(seq.normalized);
  }
  SUBCASE("rows in any order") {
    std::string csv = pose_csv(3);
    std::istringstream in(csv);
    std::string header, line;
    std::getline(in, header);
    std::vector<std::string> rows;
    while (std::getline(in, line)) rows.push_back(line);
    std::reverse(rows.begin(), rows.end());
    std::string shuffled = header + "\n";
    for (auto& r : rows) shuffled += r + "\n";
    write_text(dir / "a.csv", csv);
    write_text(dir / "b.csv", shuffled);
    CHECK(load_pose_file(dir / "a.csv").values() == load_pose_file(dir / "b.csv").values());
  }
  SUBCASE("missing joint names frame and joint") {
    write_text(dir / "a.csv", pose_csv(3, std::pair<std::size_t, std::size_t>{1, 4}));
    try {
      load_pose_file(dir / "a.csv");
      FAIL("expected a ValidationError");
    } catch (const ValidationError& e) {
      const std::string msg = e.what();
      CHECK(msg.find("frame 1") != std::string::npos);
      CHECK(msg.find("joint 4") != std::string::npos);
    }
  }
  SUBCASE("confidence out of range") {
    write_text(dir / "a.csv", pose_csv(3, std::nullopt, 1.2));
    CHECK_THROWS_AS(load_pose_file(dir / "a.csv"), ValidationError);
  }
  SUBCASE("non-finite value") {
    std::string csv = pose_csv(2);
    csv.replace(csv.find(",100,"), 5, ",nan,");
    write_text(dir / "a.csv", csv);
    CHECK_THROWS_AS(load_pose_file(dir / "a.csv"), ValidationError);
  }
  SUBCASE("a tool absent from a frame is carried forward with zero confidence") {
    std::string csv = "video_id,frame,tool,joint,x,y,confidence\n";
    for (std::size_t f = 0; f < 3; ++f)
      for (std::size_t m = 0; m < 2; ++m)
        for (std::size_t v = 0; v < 5; ++v) {
          if (m == 1 && f == 1) continue;
          csv += "vid," + std::to_string(f) + "," + std::to_string(m) + "," + std::to_string(v) + "," +
                 std::to_string(f + v) + ",5,0.5\n";
        }
    write_text(dir / "a.csv", csv);
    const PoseSequence seq = load_pose_file(dir / "a.csv");
    CHECK(seq.x(1, 1, 3) == seq.x(0, 1, 3));
    CHECK(seq.confidence(1, 1, 3) == 0.0);
    CHECK(seq.confidence(2, 1, 3) == 0.5);
  }
  SUBCASE("missing file") { CHECK_THROWS_AS(load_pose_file(dir / "none.csv"), IoError); }
}

TEST_CASE("pose and transcript round trips") {
  TempDir dir("roundtrip");
  Rng rng(31);
  for (int trial = 0; trial < 20; ++trial) {
    PoseSequence seq = random_sequence(rng, 1 + rng.below(30), 1 + rng.below(2));
    seq.normalized = false;
    seq.video_id = "vid";
    for (std::size_t f = 0; f < seq.frames(); ++f)
      for (std::size_t m = 0; m < seq.tools(); ++m)
        for (std::size_t v = 0; v < 5; ++v) seq.x(f, m, v) *= 1e3 * rng.uniform();
    save_pose_file(seq, dir / "p.csv");
    const PoseSequence back = load_pose_file(dir / "p.csv");
    CHECK(back.values() == seq.values());

    const GestureVocabulary vocab = GestureVocabulary::suturing();
    Transcript t = random_transcript(rng, 200, vocab.size());
    t.video_id = "t";
    for (int base : {0, 1}) {
      save_transcript(t, vocab, dir / "t.txt", base);
      CHECK(load_transcript(dir / "t.txt", vocab, base) == t);
    }
  }
}

TEST_CASE("transcript loading") {
  TempDir dir("transcript");
  const GestureVocabulary vocab = GestureVocabulary::suturing();
  write_text(dir / "ok.txt", "0 120 G1\n121 300 G2\n");
  const Transcript t = load_transcript(dir / "ok.txt", vocab);
  REQUIRE(t.entries.size() == 2);
  CHECK(t.entries[1] == TranscriptEntry{121, 300, 1});
  CHECK(t.gesture_at(0) == 0);
  CHECK(t.gesture_at(300) == 1);
  CHECK(t.gesture_at(301) == -1);

  write_text(dir / "one.txt", "1 121 G1\n122 301 G2\n");
  CHECK(load_transcript(dir / "one.txt", vocab, 1) == Transcript{"one", t.entries});

  write_text(dir / "overlap.txt", "0 120 G1\n100 300 G2\n");
  CHECK_THROWS_AS(load_transcript(dir / "overlap.txt", vocab), ValidationError);

  write_text(dir / "unknown.txt", "0 120 G1\n121 300 G16\n");
  try {
    load_transcript(dir / "unknown.txt", vocab);
    FAIL("expected a ValidationError");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("line 2") != std::string::npos);
    CHECK(std::string(e.what()).find("G16") != std::string::npos);
  }
  // G7 does not occur in the Suturing vocabulary.
  CHECK_FALSE(vocab.index_of("G7").has_value());
  CHECK(vocab.size() == 10);
}

TEST_CASE("coordinate normalization") {
  PoseSequence seq("v", 1, 1, 5);
  seq.image_width = 640;
  seq.image_height = 480;
  seq.x(0, 0, 0) = 320;
  seq.y(0, 0, 0) = 240;
  seq.x(0, 0, 1) = 0;
  seq.x(0, 0, 2) = 640;
  seq.confidence(0, 0, 2) = 0.7;
  const PoseSequence n = normalize_coords(seq);
  CHECK(n.normalized);
  CHECK(n.x(0, 0, 0) == 0.0);
  CHECK(n.y(0, 0, 0) == 0.0);
  CHECK(n.x(0, 0, 1) == -1.0);
  CHECK(n.x(0, 0, 2) == 1.0);
  CHECK(n.confidence(0, 0, 2) == 0.7);
  CHECK_THROWS_AS(normalize_coords(n), ValidationError);
  seq.image_width = 0;
  CHECK_THROWS_AS(normalize_coords(seq), ValidationError);
}

TEST_CASE("segment front padding") {
  Rng rng(32);
  const PoseSequence seq = random_sequence(rng, 10);
  const Transcript t{"toy", {{0, 9, 3}}};
  const auto segs = segment(seq, t, {90, 5});
  REQUIRE(segs.size() == 2);
  const SegmentTensor& s = segs[1];
  CHECK(s.end_frame == 5);
  CHECK(s.label == 3);
  // 84 copies of frame 0, then frames 0..5.
  for (std::size_t i = 0; i < 90; ++i) {
    const std::size_t src = i < 84 ? 0 : i - 84;
    CHECK(s.data.at({0, i, 2, 1}) == seq.x(src, 1, 2));
    CHECK(s.data.at({2, i, 4, 0}) == seq.confidence(src, 0, 4));
  }
}

TEST_CASE("segment rate is ten labels per second") {
  Rng rng(33);
  const PoseSequence seq = random_sequence(rng, 300);
  const Transcript t{"toy", {{0, 149, 0}, {150, 299, 1}}};
  const auto segs = segment(seq, t);
  CHECK(segs.size() == 100);
  CHECK(segs.size() / (300.0 / 30.0) == 10.0);
}

TEST_CASE("segment equals the brute-force enumerator") {
  Rng rng(34);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t frames = 1 + rng.below(200);
    const std::size_t window = 1 + rng.below(100);
    const std::size_t step = 1 + rng.below(5);
    const PoseSequence seq = random_sequence(rng, frames, 1 + rng.below(2));
    const Transcript t = random_transcript(rng, frames, 10);
    const auto got = segment(seq, t, {window, step});
    const auto want = brute_force_segments(seq, t, window, step);
    REQUIRE(got.size() == want.size());
    for (std::size_t i = 0; i < got.size(); ++i) {
      CHECK(got[i].end_frame == want[i].end_frame);
      CHECK(got[i].label == want[i].label);
      CHECK(got[i].label == t.gesture_at(got[i].end_frame));
      CHECK(got[i].data == want[i].data);
    }
    const auto ends = segment_end_frames(seq, t, {window, step});
    REQUIRE(ends.size() == got.size());
    for (std::size_t i = 0; i < ends.size(); ++i) CHECK(window_tensor(seq, ends[i], window) == got[i].data);
  }
}

TEST_CASE("leave-one-user-out folds") {
  SUBCASE("eight subjects, five trials") {
    const Manifest m = subjects_manifest(8, 5);
    const FoldPlan plan = build_louo_folds(m);
    REQUIRE(plan.folds.size() == 8);
    CHECK(plan.warnings.empty());
    std::multiset<std::string> tested;
    for (const Fold& f : plan.folds) {
      CHECK(f.test_videos.size() == 5);
      CHECK(f.train_videos.size() == 35);
      for (const auto& v : f.test_videos) {
        tested.insert(v);
        CHECK(std::find(f.train_videos.begin(), f.train_videos.end(), v) == f.train_videos.end());
      }
    }
    CHECK(tested.size() == 40);
    CHECK(std::set<std::string>(tested.begin(), tested.end()).size() == 40);
    check_fold_plan(plan, m);
  }
  SUBCASE("three subjects") {
    const Manifest m = subjects_manifest(3, 2);
    const FoldPlan plan = build_louo_folds(m);
    CHECK(plan.folds.size() == 3);
    CHECK(plan.warnings.size() == 1);
    check_fold_plan(plan, m);
  }
  SUBCASE("broken plans are rejected") {
    const Manifest m = subjects_manifest(4, 2);
    FoldPlan plan = build_louo_folds(m);
    plan.folds[0].train_videos.push_back(plan.folds[0].test_videos[0]);
    CHECK_THROWS_AS(check_fold_plan(plan, m), ValidationError);
    plan = build_louo_folds(m);
    plan.folds[1].test_videos.pop_back();
    CHECK_THROWS_AS(check_fold_plan(plan, m), ValidationError);
  }
}

TEST_CASE("synthetic dataset") {
  TempDir a("synth_a"), b("synth_b");
  SynthOptions o;
  o.trials = 1;
  o.subjects = 3;
  synth_dataset(o, a.path());
  synth_dataset(o, b.path());
  std::size_t files = 0;
  for (const auto& e : std::filesystem::recursive_directory_iterator(a.path())) {
    if (!e.is_regular_file()) continue;
    ++files;
    CHECK(read_file(e.path()) == read_file(b.path() / std::filesystem::relative(e.path(), a.path())));
  }
  CHECK(files == 1 + 2 * 3);

  const Dataset loaded = load_dataset(a.path());
  const Dataset direct = to_dataset(generate_synthetic(o));
  REQUIRE(loaded.videos.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(loaded.videos[i].pose.values() == direct.videos[i].pose.values());
    CHECK(loaded.videos[i].transcript == direct.videos[i].transcript);
    loaded.videos[i].transcript.validate(loaded.manifest.vocabulary.size());
  }
  CHECK(loaded.manifest.vocabulary.size() == 10);

  SynthOptions two = o;
  two.classes = 2;
  const SynthData d2 = generate_synthetic(two);
  CHECK(d2.manifest.vocabulary.size() == 2);
  std::set<int> used;
  for (const auto& t : d2.transcripts)
    for (const auto& e : t.entries) used.insert(e.gesture);
  CHECK(used == std::set<int>{0, 1});
}

TEST_CASE("synthetic classes are separable by a nearest-centroid baseline") {
  SynthOptions o;
  o.subjects = 4;
  o.trials = 2;
  const Dataset d = to_dataset(generate_synthetic(o));
  const std::set<std::string> test_subjects{d.manifest.subjects().back()};
  const std::size_t classes = d.manifest.vocabulary.size();
  // Features: per-(channel, joint, tool) mean over the window.
  auto features = [](const SegmentTensor& s) {
    const std::size_t C = s.data.dim(0), T = s.data.dim(1), V = s.data.dim(2), M = s.data.dim(3);
    std::vector<double> f(C * V * M, 0.0);
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t t = 0; t < T; ++t)
        for (std::size_t v = 0; v < V; ++v)
          for (std::size_t m = 0; m < M; ++m) f[(c * V + v) * M + m] += s.data.at({c, t, v, m}) / T;
    return f;
  };
  std::vector<std::vector<double>> centroid(classes);
  std::vector<std::size_t> count(classes, 0);
  std::vector<std::pair<std::vector<double>, int>> test;
  for (const Video& v : d.videos) {
    for (const auto& s : segment(v.pose, v.transcript, {30, 3})) {
      auto f = features(s);
      if (test_subjects.count(v.subject_id)) {
        test.emplace_back(std::move(f), s.label);
        continue;
      }
      auto& c = centroid[s.label];
      if (c.empty()) c.assign(f.size(), 0.0);
      for (std::size_t i = 0; i < f.size(); ++i) c[i] += f[i];
      ++count[s.label];
    }
  }
  for (std::size_t k = 0; k < classes; ++k)
    for (double& x : centroid[k]) x /= static_cast<double>(count[k]);
  std::size_t correct = 0;
  for (const auto& [f, label] : test) {
    int best = 0;
    double best_d = 1e300;
    for (std::size_t k = 0; k < classes; ++k) {
      double dist = 0.0;
      for (std::size_t i = 0; i < f.size(); ++i) dist += std::pow(f[i] - centroid[k][i], 2);
      if (dist < best_d) best_d = dist, best = static_cast<int>(k);
    }
    correct += best == label;
  }
  const double accuracy = static_cast<double>(correct) / test.size();
  MESSAGE("nearest-centroid accuracy " << accuracy);
  CHECK(accuracy > 1.0 / classes);
}

TEST_CASE("manifest errors") {
  TempDir dir("manifest");
  CHECK_THROWS_AS(load_dataset(dir.path()), IoError);
  write_text(dir / "manifest.json", R"({"format": "other", "version": 1})");
  CHECK_THROWS_AS(load_dataset(dir.path()), ValidationError);
  Manifest m = subjects_manifest(2, 1);
  save_manifest(m, dir / "manifest.json");
  const Manifest back = load_manifest(dir / "manifest.json");
  CHECK(back.videos.size() == 2);
  CHECK(back.videos[1].subject_id == "C");
  CHECK(back.subjects() == std::vector<std::string>{"B", "C"});
  CHECK_THROWS_AS(load_dataset(dir.path()), IoError);
}
