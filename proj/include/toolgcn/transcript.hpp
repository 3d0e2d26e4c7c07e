#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace toolgcn {

/// Ordered gesture label set; class index = position.
class GestureVocabulary {
 public:
  GestureVocabulary() = default;
  explicit GestureVocabulary(std::vector<std::string> labels);

  // The ten gestures occurring in the Suturing task:
  // G1 G2 G3 G4 G5 G6 G8 G9 G10 G11.
  static GestureVocabulary suturing();
  // First n Suturing gestures for n <= 10, else G1..Gn.
  static GestureVocabulary first(std::size_t n);

  std::size_t size() const { return labels_.size(); }
  const std::string& label(std::size_t i) const { return labels_.at(i); }
  const std::vector<std::string>& labels() const { return labels_; }
  std::optional<int> index_of(const std::string& label) const;

  friend bool operator==(const GestureVocabulary&, const GestureVocabulary&) = default;

 private:
  std::vector<std::string> labels_;
};

struct TranscriptEntry {
  std::size_t start_frame = 0;  // inclusive, 0-based
  std::size_t end_frame = 0;    // inclusive, 0-based
  int gesture = 0;              // vocabulary index

  friend bool operator==(const TranscriptEntry&, const TranscriptEntry&) = default;
};

struct Transcript {
  std::string video_id;
  std::vector<TranscriptEntry> entries;  // sorted, non-overlapping

  // Gesture index covering `frame`, or -1 for untranscribed frames.
  int gesture_at(std::size_t frame) const;

  // Throws ValidationError unless entries are sorted, non-overlapping and
  // have start <= end and labels inside [0, vocabulary_size).
  void validate(std::size_t vocabulary_size) const;

  friend bool operator==(const Transcript&, const Transcript&) = default;
};

// Whitespace-separated "start_frame end_frame label" lines. Frame numbers
// in the file count from `index_base` (0 or 1); entries are stored 0-based.
// Blank lines are skipped.
Transcript load_transcript(const std::filesystem::path& path, const GestureVocabulary& vocabulary,
                           int index_base = 0);
void save_transcript(const Transcript& t, const GestureVocabulary& vocabulary,
                     const std::filesystem::path& path, int index_base = 0);

}  // namespace toolgcn
