#include "mcnn/model.hpp"

#include <algorithm>
#include <stdexcept>

#include "mcnn/nn/checkpoint.hpp"
#include "mcnn/nn/ops.hpp"
#include "mcnn/rng.hpp"

namespace mcnn::model {
namespace {

using nn::Shape;
using nn::Tensor;
using nn::Var;

constexpr int kMinBoxSide = 2 * static_cast<int>(maskgen::kDegenerateRadius) + 1;

std::string conv_name(int i) { return "conv" + std::to_string(i); }

template <typename T>
Tensor<T> ones_like_mask(const Tensor<T>& mask) {
  return Tensor<T>(mask.shape(), T(1));
}

void widen(int& lo, int& hi, int limit) {
  const int side = std::min(kMinBoxSide, limit);
  if (hi - lo + 1 >= side) return;
  const int center = (lo + hi) / 2;
  lo = std::clamp(center - side / 2, 0, limit - side);
  hi = lo + side - 1;
}

}  // namespace

std::string_view stream_name(StreamKind kind) {
  switch (kind) {
    case StreamKind::WholeImage: return "whole";
    case StreamKind::Head: return "head";
    case StreamKind::Torso: return "torso";
    case StreamKind::Object: return "object";
  }
  return "?";
}

std::string_view variant_name(Variant v) {
  switch (v) {
    case Variant::Mcnn: return "mcnn";
    case Variant::Pooling: return "pooling";
    case Variant::Fcs: return "fcs";
  }
  return "?";
}

Variant parse_variant(std::string_view name) {
  if (name == "mcnn") return Variant::Mcnn;
  if (name == "pooling") return Variant::Pooling;
  if (name == "fcs") return Variant::Fcs;
  throw std::invalid_argument("unknown variant '" + std::string(name) + "' (expected mcnn, pooling or fcs)");
}

LayerMode parse_layer_mode(std::string_view name) {
  if (name == "final") return LayerMode::Final;
  if (name == "both" || name == "final+penultimate") return LayerMode::FinalAndPenultimate;
  throw std::invalid_argument("unknown layer mode '" + std::string(name) + "' (expected final or both)");
}

void BackboneConfig::validate() const {
  const std::size_t n = layers.size();
  if (n < 3 || layers[n - 1] != 0 || layers[n - 2] <= 0 || layers[n - 3] <= 0) {
    throw std::invalid_argument("backbone: layers must end with conv, conv, pool");
  }
  for (int l : layers)
    if (l < 0) throw std::invalid_argument("backbone: negative layer entry");
}

int BackboneConfig::channels() const {
  validate();
  return layers[layers.size() - 2];
}

int BackboneConfig::penultimate_channels() const {
  validate();
  return layers[layers.size() - 3];
}

int BackboneConfig::stride() const {
  validate();
  int s = 1;
  for (int l : layers)
    if (l == 0) s *= 2;
  return s;
}

void StreamConfig::validate() const {
  backbone.validate();
  const int s = backbone.stride();
  if (whole_size <= 0 || part_size <= 0 || whole_size % s != 0 || part_size % s != 0) {
    throw std::invalid_argument("streams: input sizes must be positive multiples of the backbone stride " +
                                std::to_string(s));
  }
}

void McnnConfig::validate() const {
  streams.validate();
  if (classes < 2) throw std::invalid_argument("mcnn: need at least 2 classes");
  if (fc_width < 0) throw std::invalid_argument("mcnn: fc width must be >= 0");
}

int McnnConfig::fc_dim() const { return fc_width > 0 ? fc_width : 8 * streams.backbone.channels(); }

int McnnConfig::stream_dim() const {
  return variant == Variant::Fcs ? fc_dim() : 2 * streams.backbone.channels();
}

int McnnConfig::feature_dim(LayerMode mode) const {
  if (mode == LayerMode::FinalAndPenultimate) {
    if (variant == Variant::Fcs) throw std::invalid_argument("fcs variant has no penultimate descriptors");
    return kNumStreams * (stream_dim() + 2 * streams.backbone.penultimate_channels());
  }
  return kNumStreams * stream_dim();
}

Box part_box(const maskgen::BinaryMask& mask) {
  Box b = maskgen::mask_to_bbox(mask);
  widen(b.x_min, b.x_max, mask.width());
  widen(b.y_min, b.y_max, mask.height());
  return b;
}

PreparedSample prepare_streams(const Image& image, const maskgen::LabelMap& predicted, const StreamConfig& config) {
  config.validate();
  if (predicted.width() != image.width || predicted.height() != image.height) {
    throw std::invalid_argument("prepare_streams: label map " + std::to_string(predicted.width()) + "x" +
                                std::to_string(predicted.height()) + " does not match image " +
                                std::to_string(image.width) + "x" + std::to_string(image.height));
  }
  const maskgen::PartMasks pm = maskgen::labelmap_to_part_masks(predicted);
  PreparedSample out;
  for (int s = 0; s < kNumStreams; ++s) {
    const StreamKind kind = kStreamOrder[s];
    const int h = config.input_size(kind), g = config.grid(kind), pg = config.penultimate_grid(kind);
    StreamInput& in = out.streams[s];
    if (kind == StreamKind::WholeImage) {
      out.boxes[s] = Box{0, 0, image.width - 1, image.height - 1};
      in.image = resize(image, h, h);
      in.mask = maskgen::resize_nearest(pm.object, g, g);
      in.penultimate_mask = maskgen::resize_nearest(pm.object, pg, pg);
      continue;
    }
    const maskgen::BinaryMask& m = kind == StreamKind::Head ? pm.head : kind == StreamKind::Torso ? pm.torso : pm.object;
    const Box box = part_box(m);
    out.boxes[s] = box;
    in.image = crop_resize(image, box, h, h);
    const maskgen::BinaryMask cropped = maskgen::crop_grid(m, box);
    in.mask = maskgen::resize_nearest(cropped, g, g);
    in.penultimate_mask = maskgen::resize_nearest(cropped, pg, pg);
  }
  return out;
}

template <typename T>
Batch<T> make_batch(const std::vector<const PreparedSample*>& samples) {
  if (samples.empty()) throw std::invalid_argument("make_batch: no samples");
  Batch<T> batch;
  for (int s = 0; s < kNumStreams; ++s) {
    std::vector<const Image*> images;
    for (const PreparedSample* p : samples) images.push_back(&p->streams[s].image);
    batch[s].images = to_tensor<T>(images);
    const auto& m0 = samples[0]->streams[s].mask;
    const auto& p0 = samples[0]->streams[s].penultimate_mask;
    const int n = static_cast<int>(samples.size());
    batch[s].masks = Tensor<T>(Shape{n, 1, m0.height(), m0.width()});
    batch[s].penultimate_masks = Tensor<T>(Shape{n, 1, p0.height(), p0.width()});
    for (int i = 0; i < n; ++i) {
      const auto& m = samples[i]->streams[s].mask;
      const auto& p = samples[i]->streams[s].penultimate_mask;
      if (m.width() != m0.width() || m.height() != m0.height() || p.width() != p0.width() || p.height() != p0.height()) {
        throw std::invalid_argument("make_batch: stream masks differ in size");
      }
      std::transform(m.cells().begin(), m.cells().end(), batch[s].masks.data() + i * m.cells().size(),
                     [](std::uint8_t v) { return T(v); });
      std::transform(p.cells().begin(), p.cells().end(), batch[s].penultimate_masks.data() + i * p.cells().size(),
                     [](std::uint8_t v) { return T(v); });
    }
  }
  return batch;
}

template <typename T>
Var<T> select_and_pool(const Var<T>& activations, const Tensor<T>& mask) {
  for (T v : activations.value().storage())
    if (v < T(0)) throw std::logic_error("select_and_pool: descriptors must be nonnegative (post-relu) for max pooling");
  const Var<T> kept = nn::mask_mul(activations, mask);
  const Var<T> avg = nn::l2_normalize(nn::masked_global_pool(kept, mask, nn::PoolMode::Average));
  const Var<T> max = nn::l2_normalize(nn::masked_global_pool(kept, mask, nn::PoolMode::Max));
  return nn::concat_features<T>({avg, max});
}

template <typename T>
Mcnn<T>::Mcnn(McnnConfig config) : config_(std::move(config)) {
  config_.validate();
  const auto& layers = config_.streams.backbone.layers;
  for (int s = 0; s < kNumStreams; ++s) {
    const StreamKind kind = kStreamOrder[s];
    const std::string p = prefix(kind);
    std::uint64_t salt = 100 * static_cast<std::uint64_t>(s);
    int in = 3;
    for (std::size_t i = 0; i < layers.size(); ++i) {
      if (layers[i] == 0) continue;
      const int out = layers[i];
      params_.add(p + conv_name(static_cast<int>(i)) + ".w",
                  nn::he_normal<T>(Shape{out, in, 3, 3}, in * 9, derive_seed(config_.seed, salt++)));
      params_.add(p + conv_name(static_cast<int>(i)) + ".b", Tensor<T>(Shape{1, out, 1, 1}));
      in = out;
    }
    if (config_.variant == Variant::Fcs) {
      const int g = config_.streams.grid(kind);
      const int flat = in * g * g, d = config_.fc_dim();
      params_.add(p + "fc1.w", nn::he_normal<T>(Shape{d, flat, 1, 1}, flat, derive_seed(config_.seed, salt++)));
      params_.add(p + "fc1.b", Tensor<T>(Shape{1, d, 1, 1}));
      params_.add(p + "fc2.w", nn::he_normal<T>(Shape{d, d, 1, 1}, d, derive_seed(config_.seed, salt++)));
      params_.add(p + "fc2.b", Tensor<T>(Shape{1, d, 1, 1}));
    }
  }
  params_.add("cls.w", Tensor<T>(Shape{config_.classes, config_.feature_dim(), 1, 1}));
  params_.add("cls.b", Tensor<T>(Shape{1, config_.classes, 1, 1}));
}

template <typename T>
StreamOutput<T> Mcnn<T>::stream_forward(StreamKind kind, const StreamBatch<T>& input, bool penultimate) {
  const int h = config_.streams.input_size(kind);
  const Shape& s = input.images.shape();
  if (s.c != 3 || s.h != h || s.w != h) {
    throw nn::ShapeError("stream " + std::string(stream_name(kind)) + ": expected (n, 3, " + std::to_string(h) + ", " +
                         std::to_string(h) + ") input, got " + s.str());
  }
  if (penultimate && config_.variant == Variant::Fcs) throw std::invalid_argument("fcs variant has no penultimate descriptors");
  const std::string p = prefix(kind);
  const auto& layers = config_.streams.backbone.layers;
  const std::size_t penult_index = layers.size() - 3;
  StreamOutput<T> out;
  Var<T> x(input.images);
  Var<T> penult;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (layers[i] == 0) {
      x = nn::maxpool2d(x, 2, 2);
    } else {
      const std::string n = p + conv_name(static_cast<int>(i));
      x = nn::relu(nn::conv2d(x, params_.get(n + ".w").var(), params_.get(n + ".b").var(), 1, 1));
      if (i == penult_index) penult = x;
    }
  }
  out.final_activations = x;
  if (config_.variant == Variant::Fcs) {
    Var<T> f = nn::relu(nn::linear(x, params_.get(p + "fc1.w").var(), params_.get(p + "fc1.b").var()));
    out.feature = nn::relu(nn::linear(f, params_.get(p + "fc2.w").var(), params_.get(p + "fc2.b").var()));
    return out;
  }
  const bool pooling = config_.variant == Variant::Pooling;
  out.feature = select_and_pool(x, pooling ? ones_like_mask(input.masks) : input.masks);
  if (penultimate) {
    out.penultimate_feature =
        select_and_pool(penult, pooling ? ones_like_mask(input.penultimate_masks) : input.penultimate_masks);
  }
  return out;
}

template <typename T>
Var<T> Mcnn<T>::features(const Batch<T>& batch, LayerMode mode) {
  const bool both = mode == LayerMode::FinalAndPenultimate;
  std::vector<Var<T>> finals, penults;
  for (int s = 0; s < kNumStreams; ++s) {
    StreamOutput<T> o = stream_forward(kStreamOrder[s], batch[s], both);
    finals.push_back(o.feature);
    if (both) penults.push_back(o.penultimate_feature);
  }
  finals.insert(finals.end(), penults.begin(), penults.end());
  return nn::concat_features(finals);
}

template <typename T>
Var<T> Mcnn<T>::logits(const Batch<T>& batch) {
  return nn::linear(features(batch), params_.get("cls.w").var(), params_.get("cls.b").var());
}

template class Mcnn<float>;
template class Mcnn<double>;

namespace {
constexpr const char* kMetaName = "meta.mcnn_config";
}

void save_mcnn(const std::filesystem::path& path, const Mcnn<float>& model) {
  const McnnConfig& c = model.config();
  const auto& layers = c.streams.backbone.layers;
  std::vector<float> meta = {float(static_cast<int>(c.variant)), float(c.classes),        float(c.fc_width),
                             float(c.streams.whole_size),        float(c.streams.part_size), float(layers.size())};
  for (int l : layers) meta.push_back(float(l));
  nn::NamedTensors tensors = nn::snapshot(model.params());
  const int len = static_cast<int>(meta.size());
  tensors.emplace(kMetaName, Tensor<float>(Shape{1, 1, 1, len}, std::move(meta)));
  nn::write_checkpoint(path, tensors);
}

Mcnn<float> load_mcnn(const std::filesystem::path& path) {
  nn::NamedTensors tensors = nn::read_checkpoint(path);
  auto it = tensors.find(kMetaName);
  if (it == tensors.end()) throw nn::CheckpointError("'" + path.string() + "' is not a Mask-CNN checkpoint");
  const auto& m = it->second.storage();
  if (m.size() < 6 || m.size() != 6 + std::size_t(m[5])) {
    throw nn::CheckpointError("Mask-CNN checkpoint has a malformed config record");
  }
  const int variant = int(m[0]);
  if (variant < 0 || variant > static_cast<int>(Variant::Fcs)) throw nn::CheckpointError("Mask-CNN checkpoint: bad variant");
  McnnConfig c;
  c.variant = static_cast<Variant>(variant);
  c.classes = int(m[1]);
  c.fc_width = int(m[2]);
  c.streams.whole_size = int(m[3]);
  c.streams.part_size = int(m[4]);
  c.streams.backbone.layers.assign(m.begin() + 6, m.end());
  Mcnn<float> model(c);
  tensors.erase(it);
  nn::assign(model.params(), tensors);
  return model;
}
template Batch<float> make_batch(const std::vector<const PreparedSample*>&);
template Batch<double> make_batch(const std::vector<const PreparedSample*>&);
template Var<float> select_and_pool(const Var<float>&, const Tensor<float>&);
template Var<double> select_and_pool(const Var<double>&, const Tensor<double>&);

}  // namespace mcnn::model
