#include "toolgcn/transcript.hpp"

#include <algorithm>
#include <fstream>

#include "text_util.hpp"
#include "toolgcn/error.hpp"

namespace toolgcn {

GestureVocabulary::GestureVocabulary(std::vector<std::string> labels) : labels_(std::move(labels)) {
  if (labels_.empty()) throw ValidationError("gesture vocabulary is empty");
  for (std::size_t i = 0; i < labels_.size(); ++i)
    for (std::size_t j = i + 1; j < labels_.size(); ++j)
      if (labels_[i] == labels_[j]) throw ValidationError("duplicate gesture label " + labels_[i]);
}

GestureVocabulary GestureVocabulary::suturing() {
  return GestureVocabulary({"G1", "G2", "G3", "G4", "G5", "G6", "G8", "G9", "G10", "G11"});
}

GestureVocabulary GestureVocabulary::first(std::size_t n) {
  if (n == 0) throw ValidationError("vocabulary needs at least one class");
  const auto sut = suturing().labels();
  std::vector<std::string> labels;
  if (n <= sut.size()) {
    labels.assign(sut.begin(), sut.begin() + static_cast<long>(n));
  } else {
    for (std::size_t i = 1; i <= n; ++i) labels.push_back("G" + std::to_string(i));
  }
  return GestureVocabulary(std::move(labels));
}

std::optional<int> GestureVocabulary::index_of(const std::string& label) const {
  const auto it = std::find(labels_.begin(), labels_.end(), label);
  if (it == labels_.end()) return std::nullopt;
  return static_cast<int>(it - labels_.begin());
}

int Transcript::gesture_at(std::size_t frame) const {
  const auto it = std::upper_bound(entries.begin(), entries.end(), frame,
                                   [](std::size_t f, const TranscriptEntry& e) { return f < e.start_frame; });
  if (it == entries.begin()) return -1;
  const auto& e = *(it - 1);
  return frame <= e.end_frame ? e.gesture : -1;
}

void Transcript::validate(std::size_t vocabulary_size) const {
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto& e = entries[i];
    const std::string at = video_id + " transcript entry " + std::to_string(i + 1);
    if (e.start_frame > e.end_frame) throw ValidationError(at + ": start after end");
    if (e.gesture < 0 || static_cast<std::size_t>(e.gesture) >= vocabulary_size)
      throw ValidationError(at + ": gesture index out of vocabulary");
    if (i > 0 && e.start_frame <= entries[i - 1].end_frame)
      throw ValidationError(at + ": overlaps or precedes the previous entry");
  }
}

Transcript load_transcript(const std::filesystem::path& path, const GestureVocabulary& vocabulary,
                           int index_base) {
  if (index_base != 0 && index_base != 1) throw ValidationError("transcript index base must be 0 or 1");
  std::ifstream in(path);
  if (!in) throw IoError("cannot open transcript " + path.string());
  Transcript t;
  t.video_id = path.stem().string();
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    strip_cr(line);
    const auto fields = split_ws(line);
    if (fields.empty()) continue;
    const std::string at = path.string() + ", line " + std::to_string(line_no);
    if (fields.size() != 3)
      throw ValidationError(at + ": expected 'start_frame end_frame label'");
    auto start = parse_index(fields[0], at + " start_frame");
    auto end = parse_index(fields[1], at + " end_frame");
    if (index_base == 1) {
      if (start == 0 || end == 0) throw ValidationError(at + ": frame 0 in a 1-based transcript");
      --start;
      --end;
    }
    const auto g = vocabulary.index_of(fields[2]);
    if (!g) throw ValidationError(at + ": label " + fields[2] + " is not in the gesture vocabulary");
    if (start > end) throw ValidationError(at + ": start_frame after end_frame");
    if (!t.entries.empty() && start <= t.entries.back().end_frame)
      throw ValidationError(at + ": entry overlaps or precedes the previous entry");
    t.entries.push_back({start, end, *g});
  }
  return t;
}

void save_transcript(const Transcript& t, const GestureVocabulary& vocabulary,
                     const std::filesystem::path& path, int index_base) {
  t.validate(vocabulary.size());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write transcript " + path.string());
  const std::size_t base = index_base == 1 ? 1 : 0;
  for (const auto& e : t.entries)
    out << e.start_frame + base << ' ' << e.end_frame + base << ' ' << vocabulary.label(static_cast<std::size_t>(e.gesture)) << '\n';
  if (!out) throw IoError("failed writing transcript " + path.string());
}

}  // namespace toolgcn
