#pragma once
// Mask-CNN training protocol on top of a fixed segmenter: stream inputs from
// predicted masks (with mirrored copies), per-stream fine-tuning with a
// temporary classifier, joint training, flip-averaged features and
// predictions.

#include <cstdint>
#include <vector>

#include "mcnn/dataio.hpp"
#include "mcnn/model.hpp"
#include "mcnn/nn/optim.hpp"
#include "mcnn/segnet.hpp"

namespace mcnn::training {

/// Prepared stream inputs for n images as 2n samples: sample 2i is image i,
/// sample 2i+1 its horizontal mirror, each with masks predicted on that
/// exact input.
struct PreparedSet {
  std::vector<model::PreparedSample> samples;
  std::vector<int> labels;  // one per image

  std::size_t image_count() const { return labels.size(); }
  const model::PreparedSample& original(std::size_t i) const { return samples[2 * i]; }
  const model::PreparedSample& mirrored(std::size_t i) const { return samples[2 * i + 1]; }
};

/// Images must match the segmenter's input size.
PreparedSet prepare_set(segnet::Fcn<float>& fcn, const std::vector<const Image*>& images, const std::vector<int>& labels,
                        const model::StreamConfig& streams);
/// Same, from label maps already predicted: masks[2i] for image i and
/// masks[2i+1] for its mirror.
PreparedSet prepare_set(const std::vector<const Image*>& images, const std::vector<maskgen::LabelMap>& masks,
                        const std::vector<int>& labels, const model::StreamConfig& streams);

struct TrainConfig {
  int epochs = 10;
  int batch_size = 16;
  nn::SgdConfig sgd{0.02, 0.9, 5e-4, 1};
};

struct TrainReport {
  std::vector<double> step_losses;
  std::vector<double> epoch_losses;
  std::size_t samples_per_epoch = 0;
  int steps = 0;
  double final_epoch_accuracy = 0.0;  // running training accuracy of the last epoch, in [0, 1]
};

/// Trains one stream's backbone (and fc layers) with a temporary classifier
/// that is discarded afterwards. Every epoch visits all 2n samples of the set.
TrainReport finetune_stream(model::Mcnn<float>& model, model::StreamKind kind, const PreparedSet& data,
                            const TrainConfig& config);

/// Trains every stream and the shared classifier together.
TrainReport joint_train(model::Mcnn<float>& model, const PreparedSet& data, const TrainConfig& config);

/// Mean of the features of each image and its mirror, one row per image.
dataio::FeatureSet extract_features(model::Mcnn<float>& model, const PreparedSet& data, model::LayerMode mode,
                                    int batch_size = 32);

/// Class probabilities averaged over each image and its mirror; argmax with
/// ties to the lowest class.
std::vector<int> predict(model::Mcnn<float>& model, const PreparedSet& data, int batch_size = 32);

}  // namespace mcnn::training
