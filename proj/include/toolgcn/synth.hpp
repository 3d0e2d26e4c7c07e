#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "toolgcn/dataset.hpp"
#include "toolgcn/pose.hpp"
#include "toolgcn/transcript.hpp"

namespace toolgcn {

struct SynthOptions {
  std::size_t classes = 10;
  std::size_t subjects = 8;
  std::size_t trials = 3;
  std::uint64_t seed = 1;
  std::size_t tools = 2;
  // Gestures per trial; 0 means one pass over every class.
  std::size_t gestures_per_trial = 0;
  std::size_t min_duration = 90;  // frames per gesture
  std::size_t max_duration = 150;
  std::size_t lead_in = 6;        // untranscribed frames at the start
  double image_width = 640.0;
  double image_height = 480.0;
  double frame_rate = 30.0;
};

/// In-memory synthetic dataset; poses in pixel coordinates.
struct SynthData {
  Manifest manifest;
  std::vector<PoseSequence> poses;
  std::vector<Transcript> transcripts;
};

// Each class is a distinct motion pattern of the two-tool, five-joint
// skeleton: arm-base orbit, wrist swing, shaft bend and effector opening,
// each with class-specific frequency, phase and amplitude. Subjects add an
// offset, a scale, a tempo factor and detection noise. Gestures within a
// trial follow one fixed cyclic order starting at a random class.
SynthData generate_synthetic(const SynthOptions& options);

// Writes manifest.json, poses/<video>.csv and transcriptions/<video>.txt.
Manifest write_synthetic(const SynthData& data, const std::filesystem::path& dir);

// Normalized in-memory dataset, equivalent to load_dataset() on the files
// write_synthetic() would produce.
Dataset to_dataset(const SynthData& data);

Manifest synth_dataset(const SynthOptions& options, const std::filesystem::path& dir);

}  // namespace toolgcn
