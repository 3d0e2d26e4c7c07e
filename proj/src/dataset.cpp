#include "toolgcn/dataset.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <set>

#include <nlohmann/json.hpp>

#include "toolgcn/error.hpp"

namespace toolgcn {

using nlohmann::json;

std::vector<std::string> Manifest::subjects() const {
  std::set<std::string> s;
  for (const auto& v : videos) s.insert(v.subject_id);
  return {s.begin(), s.end()};
}

Manifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path.string());
  Manifest m;
  try {
    json j;
    in >> j;
    if (j.at("format").get<std::string>() != "toolgcn-manifest")
      throw ValidationError("manifest " + path.string() + ": wrong format tag");
    if (j.at("version").get<int>() != 1)
      throw ValidationError("manifest " + path.string() + ": unsupported version");
    m.task = j.value("task", m.task);
    m.frame_rate = j.value("frame_rate", m.frame_rate);
    m.index_base = j.value("index_base", m.index_base);
    m.image_width = j.value("image_width", m.image_width);
    m.image_height = j.value("image_height", m.image_height);
    m.tools = j.value("tools", m.tools);
    m.joints = j.value("joints", m.joints);
    if (j.contains("vocabulary"))
      m.vocabulary = GestureVocabulary(j.at("vocabulary").get<std::vector<std::string>>());
    std::set<std::string> ids;
    for (const auto& v : j.at("videos")) {
      ManifestVideo mv;
      mv.video_id = v.at("video_id").get<std::string>();
      mv.subject_id = v.at("subject").get<std::string>();
      mv.task = v.value("task", m.task);
      mv.pose_path = v.at("pose").get<std::string>();
      mv.transcript_path = v.at("transcript").get<std::string>();
      if (!ids.insert(mv.video_id).second)
        throw ValidationError("manifest " + path.string() + ": duplicate video " + mv.video_id);
      m.videos.push_back(std::move(mv));
    }
  } catch (const json::exception& e) {
    throw ValidationError("manifest " + path.string() + ": " + e.what());
  }
  if (m.videos.empty()) throw ValidationError("manifest " + path.string() + " lists no videos");
  return m;
}

void save_manifest(const Manifest& m, const std::filesystem::path& path) {
  json j;
  j["format"] = "toolgcn-manifest";
  j["version"] = 1;
  j["task"] = m.task;
  j["frame_rate"] = m.frame_rate;
  j["index_base"] = m.index_base;
  j["image_width"] = m.image_width;
  j["image_height"] = m.image_height;
  j["tools"] = m.tools;
  j["joints"] = m.joints;
  j["vocabulary"] = m.vocabulary.labels();
  j["videos"] = json::array();
  for (const auto& v : m.videos)
    j["videos"].push_back({{"video_id", v.video_id},
                           {"subject", v.subject_id},
                           {"task", v.task},
                           {"pose", v.pose_path},
                           {"transcript", v.transcript_path}});
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write manifest " + path.string());
  out << j.dump(2) << '\n';
}

std::size_t Dataset::index_of(const std::string& video_id) const {
  for (std::size_t i = 0; i < videos.size(); ++i)
    if (videos[i].pose.video_id == video_id) return i;
  throw ValidationError("video " + video_id + " is not in the dataset");
}

Dataset load_dataset(const std::filesystem::path& dir_or_manifest) {
  namespace fs = std::filesystem;
  const fs::path manifest_path = fs::is_directory(dir_or_manifest)
                                     ? dir_or_manifest / "manifest.json"
                                     : dir_or_manifest;
  if (!fs::exists(manifest_path)) throw IoError("missing manifest " + manifest_path.string());
  const fs::path root = manifest_path.parent_path();
  Dataset ds;
  ds.manifest = load_manifest(manifest_path);
  for (const auto& mv : ds.manifest.videos) {
    PoseSequence raw = load_pose_file(root / mv.pose_path);
    if (raw.video_id != mv.video_id)
      throw ValidationError("pose file " + mv.pose_path + " holds video " + raw.video_id +
                            ", manifest expects " + mv.video_id);
    if (raw.joints() != ds.manifest.joints || raw.tools() != ds.manifest.tools)
      throw ValidationError("pose file " + mv.pose_path + " has " + std::to_string(raw.tools()) +
                            " tools x " + std::to_string(raw.joints()) + " joints, manifest says " +
                            std::to_string(ds.manifest.tools) + " x " +
                            std::to_string(ds.manifest.joints));
    raw.subject_id = mv.subject_id;
    raw.frame_rate = ds.manifest.frame_rate;
    raw.image_width = ds.manifest.image_width;
    raw.image_height = ds.manifest.image_height;
    Video v;
    v.subject_id = mv.subject_id;
    v.pose = normalize_coords(raw);
    v.transcript = load_transcript(root / mv.transcript_path, ds.manifest.vocabulary,
                                   ds.manifest.index_base);
    v.transcript.video_id = mv.video_id;
    ds.videos.push_back(std::move(v));
  }
  return ds;
}

FoldPlan build_louo_folds(const Manifest& manifest) {
  FoldPlan plan;
  const auto subjects = manifest.subjects();
  if (subjects.size() != kLouoSubjects)
    plan.warnings.push_back("manifest has " + std::to_string(subjects.size()) +
                            " subjects, expected " + std::to_string(kLouoSubjects) +
                            "; building " + std::to_string(subjects.size()) + " folds");
  for (const auto& s : subjects) {
    Fold f;
    f.subject = s;
    for (const auto& v : manifest.videos)
      (v.subject_id == s ? f.test_videos : f.train_videos).push_back(v.video_id);
    plan.folds.push_back(std::move(f));
  }
  return plan;
}

void check_fold_plan(const FoldPlan& plan, const Manifest& manifest) {
  std::set<std::string> all;
  std::map<std::string, std::string> subject_of;
  for (const auto& v : manifest.videos) {
    all.insert(v.video_id);
    subject_of[v.video_id] = v.subject_id;
  }
  std::set<std::string> held_subjects;
  std::multiset<std::string> tested;
  for (const auto& f : plan.folds) {
    if (!held_subjects.insert(f.subject).second)
      throw ValidationError("subject " + f.subject + " is held out by more than one fold");
    std::set<std::string> test(f.test_videos.begin(), f.test_videos.end());
    std::set<std::string> train(f.train_videos.begin(), f.train_videos.end());
    for (const auto& t : test) {
      if (train.count(t)) throw ValidationError("fold " + f.subject + ": video " + t + " in both splits");
      if (subject_of[t] != f.subject)
        throw ValidationError("fold " + f.subject + ": test video " + t + " belongs to " + subject_of[t]);
    }
    for (const auto& t : train)
      if (subject_of[t] == f.subject)
        throw ValidationError("fold " + f.subject + ": held-out subject's video " + t + " in training");
    std::set<std::string> both = test;
    both.insert(train.begin(), train.end());
    if (both != all) throw ValidationError("fold " + f.subject + " does not cover the dataset");
    tested.insert(f.test_videos.begin(), f.test_videos.end());
  }
  if (std::set<std::string>(tested.begin(), tested.end()) != all || tested.size() != all.size())
    throw ValidationError("test sets do not partition the dataset");
  const auto subjects = manifest.subjects();
  if (std::vector<std::string>(held_subjects.begin(), held_subjects.end()) != subjects)
    throw ValidationError("every subject must be held out exactly once");
}

}  // namespace toolgcn
