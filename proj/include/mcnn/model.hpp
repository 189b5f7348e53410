#pragma once
// Four-stream Mask-CNN: stream preparation from predicted label maps, the
// per-stream backbone, mask-guided descriptor selection and pooling, and the
// two baselines (all-ones masks; fully connected stream heads).

#include <array>
#include <filesystem>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "mcnn/image.hpp"
#include "mcnn/maskgen.hpp"
#include "mcnn/nn/autodiff.hpp"

namespace mcnn::model {

enum class StreamKind { WholeImage, Head, Torso, Object };
inline constexpr int kNumStreams = 4;
inline constexpr std::array<StreamKind, kNumStreams> kStreamOrder = {StreamKind::WholeImage, StreamKind::Head,
                                                                     StreamKind::Torso, StreamKind::Object};
std::string_view stream_name(StreamKind kind);

enum class Variant { Mcnn, Pooling, Fcs };
std::string_view variant_name(Variant v);
Variant parse_variant(std::string_view name);

enum class LayerMode { Final, FinalAndPenultimate };
LayerMode parse_layer_mode(std::string_view name);

/// Backbone layer list: a positive entry is a 3x3 conv (pad 1) with that many
/// output channels followed by relu; 0 is a 2x2 max pool. The list must end
/// with a pool. The final descriptors are that pool's output; the
/// penultimate descriptors are the relu three layers before it.
struct BackboneConfig {
  std::vector<int> layers = {16, 0, 32, 0, 32, 32, 0};

  void validate() const;
  int channels() const;  // C, channels of the final descriptors
  int penultimate_channels() const;
  int stride() const;
};

struct StreamConfig {
  int whole_size = 96;
  int part_size = 48;
  BackboneConfig backbone;

  void validate() const;
  int input_size(StreamKind kind) const { return kind == StreamKind::WholeImage ? whole_size : part_size; }
  int grid(StreamKind kind) const { return input_size(kind) / backbone.stride(); }
  int penultimate_grid(StreamKind kind) const { return 2 * grid(kind); }
};

struct McnnConfig {
  Variant variant = Variant::Mcnn;
  StreamConfig streams;
  int classes = 8;
  /// Width of each stream's two fully connected layers in the Fcs variant;
  /// 0 selects 8 * C.
  int fc_width = 0;
  std::uint64_t seed = 1;

  void validate() const;
  int fc_dim() const;
  /// 2C per stream for Mcnn/Pooling, fc_dim for Fcs.
  int stream_dim() const;
  int feature_dim(LayerMode mode = LayerMode::Final) const;
};

/// One stream's input: the h x h image plus binary masks at the final and
/// penultimate descriptor grids.
struct StreamInput {
  Image image;
  maskgen::BinaryMask mask;
  maskgen::BinaryMask penultimate_mask;
};

struct PreparedSample {
  std::array<StreamInput, kNumStreams> streams;
  std::array<Box, kNumStreams> boxes;  // source region of each stream
};

/// Crop box for a part mask: the tight box, widened to at least 5 x 5 around
/// tiny masks and clamped to the image. Empty masks give the full image (with
/// the warning from mask_to_bbox).
Box part_box(const maskgen::BinaryMask& mask);

/// Whole image resized to whole_size with the object mask on its grid; head,
/// torso and object crops at their mask boxes resized to part_size with the
/// cropped masks on their grids.
PreparedSample prepare_streams(const Image& image, const maskgen::LabelMap& predicted, const StreamConfig& config);

/// Batched tensors of one stream.
template <typename T>
struct StreamBatch {
  nn::Tensor<T> images;               // (n, 3, h, h)
  nn::Tensor<T> masks;                // (n, 1, g, g)
  nn::Tensor<T> penultimate_masks;    // (n, 1, 2g, 2g)
};

template <typename T>
using Batch = std::array<StreamBatch<T>, kNumStreams>;

template <typename T>
Batch<T> make_batch(const std::vector<const PreparedSample*>& samples);

template <typename T>
struct StreamOutput {
  nn::Var<T> feature;              // (n, stream_dim)
  nn::Var<T> penultimate_feature;  // (n, 2C) when requested (Mcnn/Pooling only)
  nn::Var<T> final_activations;    // (n, C, g, g) after the last pool
};

/// Masked average ++ masked max descriptors, each half l2-normalised.
template <typename T>
nn::Var<T> select_and_pool(const nn::Var<T>& activations, const nn::Tensor<T>& mask);

template <typename T>
class Mcnn {
 public:
  explicit Mcnn(McnnConfig config);

  const McnnConfig& config() const { return config_; }
  nn::ParameterStore<T>& params() { return params_; }
  const nn::ParameterStore<T>& params() const { return params_; }

  /// Parameter name prefix of a stream's backbone (and fc layers).
  static std::string prefix(StreamKind kind) { return std::string(stream_name(kind)) + "."; }

  /// Backbone forward for one stream. The Pooling variant replaces the masks
  /// by all-ones tensors.
  StreamOutput<T> stream_forward(StreamKind kind, const StreamBatch<T>& input, bool penultimate = false);
  /// Concatenated stream features in kStreamOrder.
  nn::Var<T> features(const Batch<T>& batch, LayerMode mode = LayerMode::Final);
  /// Classifier logits (n, classes, 1, 1).
  nn::Var<T> logits(const Batch<T>& batch);

 private:
  McnnConfig config_;
  nn::ParameterStore<T> params_;
};

extern template class Mcnn<float>;
extern template class Mcnn<double>;

/// Parameters plus a config record; the seed is not stored.
void save_mcnn(const std::filesystem::path& path, const Mcnn<float>& model);
Mcnn<float> load_mcnn(const std::filesystem::path& path);

}  // namespace mcnn::model
