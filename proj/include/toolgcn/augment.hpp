#pragma once

#include <optional>

#include "toolgcn/pose.hpp"
#include "toolgcn/rng.hpp"
#include "toolgcn/segment.hpp"
#include "toolgcn/transcript.hpp"

namespace toolgcn {

struct AffineParams {
  double angle = 0.0;  // radians
  double tx = 0.0;     // normalized units
  double ty = 0.0;
  double scale = 1.0;
};

struct AffineRanges {
  double max_angle_deg = 10.0;
  double max_translation = 0.1;
  double min_scale = 0.9;
  double max_scale = 1.1;
};

// Uniform draws: angle in [-max, max], each translation component in
// [-max, max], scale in [min, max].
AffineParams sample_affine(const AffineRanges& ranges, Rng& rng);

// p' = scale * R(angle) p + (tx, ty) on the (x, y) channels of every frame,
// joint and tool of a [3, T, V, M] segment. Confidence and label unchanged.
SegmentTensor random_affine(const SegmentTensor& seg, const AffineParams& params);

// Window ending at an end frame drawn uniformly among the frames labelled
// `label` that admit a full window (end >= window - 1); when none do, the
// latest frame carrying the label is used and the window is front-padded
// with copies of frame 0. Returns nullopt if no frame carries the label.
std::optional<SegmentTensor> random_fragment(const PoseSequence& seq, const Transcript& transcript,
                                             int label, std::size_t window, Rng& rng);

}  // namespace toolgcn
