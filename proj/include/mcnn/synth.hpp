#pragma once
// Synthetic fine-grained "birds": a torso ellipse and an overlapping head disk
// on a textured background with distractor shapes.
//
// The class factors into a head pattern (colour x ring) and a torso pattern
// (stripe orientation x stripe period); with the default 8 classes there are
// 4 head patterns and 2 torso patterns. Distractors reuse the same patterns
// on rectangles and triangles, drawn behind the bird, often inside its
// bounding box. The bird carries a thin dark outline; distractors do not.
// Gaussian pixel noise is added last.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mcnn/dataio.hpp"
#include "mcnn/image.hpp"
#include "mcnn/maskgen.hpp"

namespace mcnn::synth {

struct SynthConfig {
  int classes = 8;
  int train_per_class = 60;
  int test_per_class = 30;
  int image_size = 96;
  double clutter = 8.0;        // expected distractor shapes per image
  double near_fraction = 0.9;  // share of distractors placed around the bird
  double noise = 0.2;          // per-channel Gaussian sensor noise (std dev), applied last
  std::uint64_t seed = 1;

  void validate() const;
};

struct BirdGeometry {
  maskgen::Point torso_center;
  double torso_a = 0.0;  // semi-axis along the facing direction
  double torso_b = 0.0;
  maskgen::Point head_center;
  double head_r = 0.0;
  maskgen::Point facing;  // unit vector from torso toward head
  maskgen::Point up;      // unit normal with negative y component

  bool in_torso(const maskgen::Point& p) const;
  bool in_head(const maskgen::Point& p) const;
};

struct SynthSample {
  Image image;
  maskgen::KeypointSet keypoints;
  BirdGeometry bird;
  int label = 0;
};

std::string class_name(int label, int classes);
int head_pattern_count(int classes);
int head_pattern(int label, int classes);
int torso_pattern(int label, int classes);

/// Pure function of (config, label, split, index).
SynthSample render_sample(const SynthConfig& config, int label, dataio::Split split, int index);

/// Writes images/<split>_<class>_<index>.ppm and manifest.txt under `out`.
/// Throws std::runtime_error when the directory is not writable.
dataio::DatasetManifest generate_synthetic_dataset(const SynthConfig& config, const std::filesystem::path& out);

}  // namespace mcnn::synth
