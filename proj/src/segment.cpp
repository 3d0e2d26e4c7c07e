#include "toolgcn/segment.hpp"

#include "toolgcn/error.hpp"

namespace toolgcn {

Tensor window_tensor(const PoseSequence& seq, std::size_t end_frame, std::size_t window) {
  if (window == 0) throw ValidationError("segment window must be positive");
  if (end_frame >= seq.frames())
    throw ValidationError(seq.video_id + ": end frame " + std::to_string(end_frame) +
                          " beyond sequence of " + std::to_string(seq.frames()) + " frames");
  const std::size_t T = window, V = seq.joints(), M = seq.tools();
  Tensor out({kInputChannels, T, V, M});
  double* d = out.ptr();
  for (std::size_t t = 0; t < T; ++t) {
    // Frame index of window position t; negative positions copy frame 0.
    const long src = static_cast<long>(end_frame) - static_cast<long>(T - 1) + static_cast<long>(t);
    const std::size_t f = src < 0 ? 0 : static_cast<std::size_t>(src);
    for (std::size_t v = 0; v < V; ++v)
      for (std::size_t m = 0; m < M; ++m) {
        d[((0 * T + t) * V + v) * M + m] = seq.x(f, m, v);
        d[((1 * T + t) * V + v) * M + m] = seq.y(f, m, v);
        d[((2 * T + t) * V + v) * M + m] = seq.confidence(f, m, v);
      }
  }
  return out;
}

std::vector<std::size_t> segment_end_frames(const PoseSequence& seq, const Transcript& transcript,
                                            const SegmentOptions& options) {
  if (options.step == 0) throw ValidationError("segment step must be positive");
  std::vector<std::size_t> ends;
  for (std::size_t f = 0; f < seq.frames(); f += options.step)
    if (transcript.gesture_at(f) >= 0) ends.push_back(f);
  return ends;
}

std::vector<SegmentTensor> segment(const PoseSequence& seq, const Transcript& transcript,
                                   const SegmentOptions& options) {
  if (!seq.normalized)
    throw ValidationError(seq.video_id + ": segment() needs normalized coordinates");
  std::vector<SegmentTensor> out;
  for (std::size_t f : segment_end_frames(seq, transcript, options)) {
    SegmentTensor s;
    s.data = window_tensor(seq, f, options.window);
    s.label = transcript.gesture_at(f);
    s.video_id = seq.video_id;
    s.end_frame = f;
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace toolgcn
