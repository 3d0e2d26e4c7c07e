#pragma once

#include <string>
#include <vector>

#include "toolgcn/pose.hpp"
#include "toolgcn/tensor.hpp"
#include "toolgcn/transcript.hpp"

namespace toolgcn {

inline constexpr std::size_t kInputChannels = 3;  // x, y, confidence

/// One sample: [C=3, T, V, M] window ending at `end_frame`, labelled with
/// the gesture at that frame.
struct SegmentTensor {
  Tensor data;
  int label = 0;
  std::string video_id;
  std::size_t end_frame = 0;
};

struct SegmentOptions {
  std::size_t window = 90;
  std::size_t step = 3;
};

// [3, window, V, M] holding frames [end - window + 1, end]. Positions before
// frame 0 are filled with copies of frame 0.
Tensor window_tensor(const PoseSequence& seq, std::size_t end_frame, std::size_t window);

// End frames 0, step, 2 step, ... that are covered by a transcript entry.
std::vector<std::size_t> segment_end_frames(const PoseSequence& seq, const Transcript& transcript,
                                            const SegmentOptions& options = {});

// Sliding-window segmentation of a normalized sequence. End frames outside
// every transcript entry are skipped.
std::vector<SegmentTensor> segment(const PoseSequence& seq, const Transcript& transcript,
                                   const SegmentOptions& options = {});

}  // namespace toolgcn
