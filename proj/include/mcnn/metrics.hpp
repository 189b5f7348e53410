#pragma once
// Evaluation: classification accuracy, box IoU, PCP and mean IU.

#include <array>
#include <optional>
#include <vector>

#include "mcnn/image.hpp"
#include "mcnn/maskgen.hpp"

namespace mcnn::metrics {

/// Inclusive pixel-count IoU of two boxes. Throws on an inverted box.
double iou_boxes(const Box& a, const Box& b);

inline constexpr double kPcpThreshold = 0.5;

/// Head and torso boxes of one image; a missing part is nullopt.
struct PartBoxes {
  std::optional<Box> head;
  std::optional<Box> torso;
};

struct PartScore {
  int correct = 0;
  int total = 0;
  double percentage() const { return total == 0 ? 0.0 : 100.0 * correct / total; }
};

struct PcpReport {
  PartScore head;
  PartScore torso;
};

/// A part is correct when its IoU is strictly above 0.5. Pairs with either
/// side missing (or images without a prediction) count as incorrect and
/// raise a warning.
PcpReport pcp(const std::vector<PartBoxes>& predicted, const std::vector<PartBoxes>& truth);

/// Tight boxes of the ground-truth part hulls, nullopt for an empty part.
PartBoxes part_boxes(const maskgen::LabelMap& map);

enum class SegMode { ThreeClass, Foreground };

struct SegReport {
  std::vector<double> iu;       // per class; 0 when the class never occurs in either map
  std::vector<bool> present;    // class occurs in the ground truth
  double mean_iu = 0.0;         // mean over present classes
  double pixel_accuracy = 0.0;
};

/// Set-level confusion counts; Foreground collapses head and torso.
SegReport mean_iu(const std::vector<maskgen::LabelMap>& predicted, const std::vector<maskgen::LabelMap>& truth,
                  SegMode mode = SegMode::ThreeClass);

/// Exact-match percentage in [0, 100].
double classification_accuracy(const std::vector<int>& predictions, const std::vector<int>& labels);

}  // namespace mcnn::metrics
