#include "mcnn/metrics.hpp"

#include <algorithm>
#include <stdexcept>
#include <string>

#include "mcnn/diagnostics.hpp"

namespace mcnn::metrics {
namespace {

void check_box(const Box& b) {
  if (b.x_max < b.x_min || b.y_max < b.y_min) throw std::invalid_argument("iou_boxes: inverted box");
}

void score(PartScore& s, const std::optional<Box>& pred, const std::optional<Box>& truth, std::size_t image,
           const char* part) {
  ++s.total;
  if (!pred || !truth) {
    warn(std::string("pcp: image ") + std::to_string(image) + " has no " + (pred ? "ground-truth " : "predicted ") + part +
         " box; counted as incorrect");
    return;
  }
  if (iou_boxes(*pred, *truth) > kPcpThreshold) ++s.correct;
}

}  // namespace

double iou_boxes(const Box& a, const Box& b) {
  check_box(a);
  check_box(b);
  const long long iw = std::max(0, std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min) + 1);
  const long long ih = std::max(0, std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min) + 1);
  const long long inter = iw * ih;
  return static_cast<double>(inter) / static_cast<double>(a.area() + b.area() - inter);
}

PcpReport pcp(const std::vector<PartBoxes>& predicted, const std::vector<PartBoxes>& truth) {
  if (predicted.size() > truth.size()) {
    warn("pcp: " + std::to_string(predicted.size() - truth.size()) + " predictions without ground truth ignored");
  }
  PcpReport r;
  const PartBoxes none;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const PartBoxes& p = i < predicted.size() ? predicted[i] : none;
    score(r.head, p.head, truth[i].head, i, "head");
    score(r.torso, p.torso, truth[i].torso, i, "torso");
  }
  return r;
}

PartBoxes part_boxes(const maskgen::LabelMap& map) {
  PartBoxes out;
  const maskgen::PartMasks masks = maskgen::labelmap_to_part_masks(map);
  if (masks.head.count(1) > 0) out.head = maskgen::mask_to_bbox(masks.head);
  if (masks.torso.count(1) > 0) out.torso = maskgen::mask_to_bbox(masks.torso);
  return out;
}

SegReport mean_iu(const std::vector<maskgen::LabelMap>& predicted, const std::vector<maskgen::LabelMap>& truth,
                  SegMode mode) {
  if (predicted.size() != truth.size()) {
    throw std::invalid_argument("mean_iu: " + std::to_string(predicted.size()) + " predictions for " +
                                std::to_string(truth.size()) + " ground-truth maps");
  }
  const int classes = mode == SegMode::ThreeClass ? 3 : 2;
  auto fold = [mode](std::uint8_t v) { return mode == SegMode::Foreground ? (v > 0 ? 1 : 0) : static_cast<int>(v); };
  std::vector<long long> tp(classes, 0), fp(classes, 0), fn(classes, 0), gt(classes, 0);
  long long pixels = 0, hits = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const auto& p = predicted[i];
    const auto& t = truth[i];
    if (p.width() != t.width() || p.height() != t.height()) {
      throw std::invalid_argument("mean_iu: map " + std::to_string(i) + " is " + std::to_string(p.width()) + "x" +
                                  std::to_string(p.height()) + ", ground truth " + std::to_string(t.width()) + "x" +
                                  std::to_string(t.height()));
    }
    for (std::size_t k = 0; k < t.cells().size(); ++k) {
      const int a = fold(p.cells()[k]), b = fold(t.cells()[k]);
      ++gt[b];
      ++pixels;
      if (a == b) {
        ++tp[a];
        ++hits;
      } else {
        ++fp[a];
        ++fn[b];
      }
    }
  }
  SegReport r;
  int present = 0;
  for (int c = 0; c < classes; ++c) {
    const long long denom = tp[c] + fp[c] + fn[c];
    r.iu.push_back(denom == 0 ? 0.0 : static_cast<double>(tp[c]) / static_cast<double>(denom));
    r.present.push_back(gt[c] > 0);
    if (gt[c] > 0) {
      r.mean_iu += r.iu.back();
      ++present;
    }
  }
  if (present > 0) r.mean_iu /= present;
  r.pixel_accuracy = pixels == 0 ? 0.0 : static_cast<double>(hits) / static_cast<double>(pixels);
  return r;
}

double classification_accuracy(const std::vector<int>& predictions, const std::vector<int>& labels) {
  if (predictions.size() != labels.size()) {
    throw std::invalid_argument("classification_accuracy: " + std::to_string(predictions.size()) + " predictions for " +
                                std::to_string(labels.size()) + " labels");
  }
  if (labels.empty()) throw std::invalid_argument("classification_accuracy: empty input");
  std::size_t ok = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) ok += predictions[i] == labels[i];
  return 100.0 * static_cast<double>(ok) / static_cast<double>(labels.size());
}

}  // namespace mcnn::metrics
