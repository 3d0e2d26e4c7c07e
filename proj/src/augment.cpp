#include "toolgcn/augment.hpp"

#include <cmath>
#include <numbers>
#include <optional>

#include "toolgcn/error.hpp"

namespace toolgcn {

AffineParams sample_affine(const AffineRanges& r, Rng& rng) {
  if (!(r.min_scale > 0.0) || r.max_scale < r.min_scale)
    throw ValidationError("affine scale range must satisfy 0 < min <= max");
  AffineParams p;
  const double max_angle = r.max_angle_deg * std::numbers::pi / 180.0;
  p.angle = rng.uniform(-max_angle, max_angle);
  p.tx = rng.uniform(-r.max_translation, r.max_translation);
  p.ty = rng.uniform(-r.max_translation, r.max_translation);
  p.scale = rng.uniform(r.min_scale, r.max_scale);
  return p;
}

SegmentTensor random_affine(const SegmentTensor& seg, const AffineParams& p) {
  if (seg.data.rank() != 4 || seg.data.dim(0) != kInputChannels)
    throw ValidationError("random_affine expects a [3, T, V, M] segment");
  if (!(p.scale > 0.0)) throw ValidationError("affine scale must be positive");
  SegmentTensor out = seg;
  const std::size_t plane = seg.data.dim(1) * seg.data.dim(2) * seg.data.dim(3);
  const double c = std::cos(p.angle) * p.scale, s = std::sin(p.angle) * p.scale;
  double* xs = out.data.ptr();
  double* ys = out.data.ptr() + plane;
  for (std::size_t i = 0; i < plane; ++i) {
    const double x = xs[i], y = ys[i];
    xs[i] = c * x - s * y + p.tx;
    ys[i] = s * x + c * y + p.ty;
  }
  return out;
}

std::optional<SegmentTensor> random_fragment(const PoseSequence& seq, const Transcript& transcript,
                                             int label, std::size_t window, Rng& rng) {
  std::vector<std::size_t> full;
  std::optional<std::size_t> latest;
  for (const auto& e : transcript.entries) {
    if (e.gesture != label) continue;
    const std::size_t end = std::min(e.end_frame, seq.frames() - 1);
    if (e.start_frame > end) continue;
    latest = end;
    for (std::size_t f = std::max(e.start_frame, window - 1); f <= end; ++f) full.push_back(f);
  }
  if (!latest) return std::nullopt;
  const std::size_t end = full.empty() ? *latest : full[static_cast<std::size_t>(rng.below(full.size()))];
  SegmentTensor s;
  s.data = window_tensor(seq, end, window);
  s.label = label;
  s.video_id = seq.video_id;
  s.end_frame = end;
  return s;
}

}  // namespace toolgcn
