#pragma once
// Small FCN-8s style segmenter for {background, head, torso}.
//
// Encoder stages are (conv3x3 -> relu) x convs_per_stage -> maxpool; a
// context block of 3x3 convs runs at the deepest stride (8). Class scores are
// read at strides 8 and 4 by zero-initialised 1x1 heads, the stride-8 scores
// are upsampled x2 by a bilinear-initialised transposed conv and summed with
// the stride-4 scores, and a second transposed conv (x4) returns to input
// resolution.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mcnn/image.hpp"
#include "mcnn/maskgen.hpp"
#include "mcnn/nn/autodiff.hpp"
#include "mcnn/nn/optim.hpp"

namespace mcnn::segnet {

struct FcnConfig {
  int input_size = 96;
  std::vector<int> channels = {16, 32, 48};
  std::vector<int> strides = {2, 2, 2};
  int convs_per_stage = 2;
  int context_convs = 2;
  int classes = maskgen::kNumLabels;
  std::uint64_t seed = 1;

  /// Throws std::invalid_argument. The stride product must be 8 and some
  /// stage must end at stride 4.
  void validate() const;
  /// Index of the stage whose output sits at stride 4.
  int skip_stage() const;
};

/// Scalar count of every learnable tensor, from the layer shapes alone.
std::size_t fcn_parameter_count(const FcnConfig& config);

template <typename T>
class Fcn {
 public:
  explicit Fcn(FcnConfig config);

  const FcnConfig& config() const { return config_; }
  nn::ParameterStore<T>& params() { return params_; }
  const nn::ParameterStore<T>& params() const { return params_; }

  struct Taps {
    nn::Var<T> score8;
    nn::Var<T> score4;
  };
  Taps taps(const nn::Var<T>& images);
  /// Sum-fuses the two score maps and upsamples to input size.
  nn::Var<T> decode(const Taps& taps);
  /// (n, 3, S, S) images -> (n, classes, S, S) heat maps.
  nn::Var<T> forward(const nn::Var<T>& images) { return decode(taps(images)); }

 private:
  FcnConfig config_;
  nn::ParameterStore<T> params_;
};

struct SegSample {
  Image image;
  maskgen::LabelMap labels;
};

struct FcnTrainConfig {
  int epochs = 8;
  int batch_size = 8;
  bool flip = true;  // random horizontal flips of each batch sample
  nn::SgdConfig sgd{0.05, 0.9, 1e-4, 1};
  /// Stop after this many optimizer steps when > 0 (in addition to epochs).
  int max_steps = 0;
};

struct FcnTrainResult {
  std::vector<double> step_losses;
  std::vector<double> epoch_losses;
  int steps = 0;
};

/// Per-pixel softmax cross-entropy training. Throws on an empty dataset or a
/// sample whose size differs from the model input; a non-finite loss aborts
/// with nn::NumericError naming the epoch and step.
FcnTrainResult train_fcn(Fcn<float>& model, const std::vector<SegSample>& data, const FcnTrainConfig& config);

struct MaskPrediction {
  maskgen::LabelMap labels;
  nn::Tensor<float> heat_maps;  // (1, classes, S, S)
};

/// Per-pixel argmax over class scores, ties toward the lowest class.
maskgen::LabelMap labels_from_scores(const nn::Tensor<float>& scores, int index = 0);

MaskPrediction predict_mask(Fcn<float>& model, const Image& image);
std::vector<maskgen::LabelMap> predict_masks(Fcn<float>& model, const std::vector<const Image*>& images,
                                             int batch_size = 16);

/// Fraction of pixels whose predicted label equals the target.
double pixel_accuracy(Fcn<float>& model, const std::vector<SegSample>& data);

/// Architecture entries are stored alongside the weights so a checkpoint
/// rebuilds its own model.
void save_fcn(const std::filesystem::path& path, const Fcn<float>& model);
Fcn<float> load_fcn(const std::filesystem::path& path);

extern template class Fcn<float>;
extern template class Fcn<double>;

}  // namespace mcnn::segnet
