#include "mcnn/segnet.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "mcnn/nn/checkpoint.hpp"
#include "mcnn/nn/ops.hpp"
#include "mcnn/rng.hpp"

namespace mcnn::segnet {
namespace {

using nn::Shape;
using nn::Tensor;
using nn::Var;

constexpr int kUp2Kernel = 4;
constexpr int kUp4Kernel = 8;
constexpr char kMetaName[] = "meta.fcn_config";

std::string conv_name(int stage, int j) { return "enc" + std::to_string(stage) + ".conv" + std::to_string(j); }
std::string ctx_name(int j) { return "ctx" + std::to_string(j); }

template <typename T>
void add_conv(nn::ParameterStore<T>& ps, const std::string& name, int c_in, int c_out, int k, std::uint64_t seed) {
  ps.add(name + ".w", nn::he_normal<T>(Shape{c_out, c_in, k, k}, c_in * k * k, seed));
  ps.add(name + ".b", Tensor<T>(Shape{1, c_out, 1, 1}));
}

template <typename T>
Var<T> conv_relu(nn::ParameterStore<T>& ps, const std::string& name, const Var<T>& x) {
  return nn::relu(nn::conv2d(x, ps.get(name + ".w").var(), ps.get(name + ".b").var(), 1, 1));
}

}  // namespace

void FcnConfig::validate() const {
  if (input_size <= 0 || input_size % 8 != 0) throw std::invalid_argument("fcn: input size must be a positive multiple of 8");
  if (channels.empty() || channels.size() != strides.size()) {
    throw std::invalid_argument("fcn: channels and strides must be non-empty and of equal length");
  }
  for (int c : channels)
    if (c <= 0) throw std::invalid_argument("fcn: channel widths must be positive");
  for (int s : strides)
    if (s <= 0) throw std::invalid_argument("fcn: strides must be positive");
  const int product = std::accumulate(strides.begin(), strides.end(), 1, std::multiplies<>());
  if (product != 8) throw std::invalid_argument("fcn: encoder strides must multiply to 8, got " + std::to_string(product));
  if (convs_per_stage < 1 || context_convs < 0) throw std::invalid_argument("fcn: bad conv counts");
  if (classes != maskgen::kNumLabels) throw std::invalid_argument("fcn: class count must be 3");
  skip_stage();
}

int FcnConfig::skip_stage() const {
  int cumulative = 1;
  for (std::size_t i = 0; i < strides.size(); ++i) {
    cumulative *= strides[i];
    if (cumulative == 4) return static_cast<int>(i);
  }
  throw std::invalid_argument("fcn: no encoder stage ends at stride 4");
}

std::size_t fcn_parameter_count(const FcnConfig& config) {
  config.validate();
  auto conv = [](std::size_t cin, std::size_t cout, std::size_t k) { return cout * cin * k * k + cout; };
  std::size_t total = 0;
  std::size_t in = 3;
  for (int c : config.channels) {
    for (int j = 0; j < config.convs_per_stage; ++j) {
      total += conv(j == 0 ? in : c, c, 3);
    }
    in = c;
  }
  total += config.context_convs * conv(in, in, 3);
  const std::size_t k = config.classes;
  total += conv(in, k, 1);
  total += conv(config.channels[config.skip_stage()], k, 1);
  total += k * k * kUp2Kernel * kUp2Kernel + k * k * kUp4Kernel * kUp4Kernel;
  return total;
}

template <typename T>
Fcn<T>::Fcn(FcnConfig config) : config_(std::move(config)) {
  config_.validate();
  std::uint64_t salt = 0;
  int in = 3;
  for (std::size_t s = 0; s < config_.channels.size(); ++s) {
    const int c = config_.channels[s];
    for (int j = 0; j < config_.convs_per_stage; ++j) {
      add_conv(params_, conv_name(static_cast<int>(s), j), j == 0 ? in : c, c, 3, derive_seed(config_.seed, salt++));
    }
    in = c;
  }
  for (int j = 0; j < config_.context_convs; ++j) add_conv(params_, ctx_name(j), in, in, 3, derive_seed(config_.seed, salt++));
  const int k = config_.classes;
  params_.add("score8.w", Tensor<T>(Shape{k, in, 1, 1}));
  params_.add("score8.b", Tensor<T>(Shape{1, k, 1, 1}));
  params_.add("score4.w", Tensor<T>(Shape{k, config_.channels[config_.skip_stage()], 1, 1}));
  params_.add("score4.b", Tensor<T>(Shape{1, k, 1, 1}));
  params_.add("up2.w", nn::bilinear_upsample_weight<T>(k, kUp2Kernel));
  params_.add("up4.w", nn::bilinear_upsample_weight<T>(k, kUp4Kernel));
}

template <typename T>
typename Fcn<T>::Taps Fcn<T>::taps(const Var<T>& images) {
  const Shape& s = images.shape();
  if (s.c != 3 || s.h != config_.input_size || s.w != config_.input_size) {
    throw nn::ShapeError("fcn: expected (n, 3, " + std::to_string(config_.input_size) + ", " +
                         std::to_string(config_.input_size) + ") input, got " + s.str());
  }
  const int skip = config_.skip_stage();
  Var<T> x = images;
  Var<T> skip_features;
  for (std::size_t st = 0; st < config_.channels.size(); ++st) {
    for (int j = 0; j < config_.convs_per_stage; ++j) x = conv_relu(params_, conv_name(static_cast<int>(st), j), x);
    if (config_.strides[st] > 1) x = nn::maxpool2d(x, config_.strides[st], config_.strides[st]);
    if (static_cast<int>(st) == skip) skip_features = x;
  }
  for (int j = 0; j < config_.context_convs; ++j) x = conv_relu(params_, ctx_name(j), x);
  Taps out;
  out.score8 = nn::conv2d(x, params_.get("score8.w").var(), params_.get("score8.b").var(), 1, 0);
  out.score4 = nn::conv2d(skip_features, params_.get("score4.w").var(), params_.get("score4.b").var(), 1, 0);
  return out;
}

template <typename T>
Var<T> Fcn<T>::decode(const Taps& t) {
  Var<T> up = nn::transposed_conv2d(t.score8, params_.get("up2.w").var(), 2);
  Var<T> fused = nn::add(up, t.score4);
  return nn::transposed_conv2d(fused, params_.get("up4.w").var(), 4);
}

template class Fcn<float>;
template class Fcn<double>;

namespace {

void check_sample(const FcnConfig& config, const SegSample& s) {
  const int n = config.input_size;
  if (s.image.width != n || s.image.height != n || s.labels.width() != n || s.labels.height() != n) {
    throw std::invalid_argument("train_fcn: sample is " + std::to_string(s.image.width) + "x" +
                                std::to_string(s.image.height) + ", model expects " + std::to_string(n));
  }
}

}  // namespace

FcnTrainResult train_fcn(Fcn<float>& model, const std::vector<SegSample>& data, const FcnTrainConfig& config) {
  if (data.empty()) throw std::invalid_argument("train_fcn: empty dataset");
  if (config.epochs < 0 || config.batch_size <= 0) throw std::invalid_argument("train_fcn: bad epochs/batch size");
  for (const auto& s : data) check_sample(model.config(), s);
  nn::Sgd<float> sgd(config.sgd, model.params());
  model.params().zero_grad();

  const int size = model.config().input_size;
  const std::size_t pixels = static_cast<std::size_t>(size) * size;
  std::vector<std::size_t> order(data.size());
  FcnTrainResult result;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(derive_seed(config.sgd.seed, static_cast<std::uint64_t>(epoch)));
    rng.shuffle(order.begin(), order.end());
    double epoch_loss = 0.0;
    int epoch_batches = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      if (config.max_steps > 0 && result.steps >= config.max_steps) break;
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      std::vector<Image> flipped;
      flipped.reserve(end - start);
      std::vector<const Image*> batch;
      std::vector<int> labels;
      labels.reserve((end - start) * pixels);
      for (std::size_t i = start; i < end; ++i) {
        const SegSample& s = data[order[i]];
        const bool flip = config.flip && rng.coin();
        if (flip) {
          flipped.push_back(flip_horizontal(s.image));
          batch.push_back(&flipped.back());
          const auto lm = maskgen::flip_horizontal(s.labels);
          labels.insert(labels.end(), lm.cells().begin(), lm.cells().end());
        } else {
          batch.push_back(&s.image);
          labels.insert(labels.end(), s.labels.cells().begin(), s.labels.cells().end());
        }
      }
      Var<float> input(to_tensor<float>(batch));
      double loss_value = 0.0;
      try {
        Var<float> loss = nn::softmax_cross_entropy(model.forward(input), std::span<const int>(labels));
        loss_value = loss.value()[0];
        nn::backward(loss);
        sgd.step();
      } catch (const nn::NumericError& e) {
        throw nn::NumericError("train_fcn: epoch " + std::to_string(epoch) + " step " + std::to_string(result.steps) +
                               ": " + e.what());
      }
      result.step_losses.push_back(loss_value);
      epoch_loss += loss_value;
      ++epoch_batches;
      ++result.steps;
    }
    if (epoch_batches > 0) result.epoch_losses.push_back(epoch_loss / epoch_batches);
  }
  return result;
}

maskgen::LabelMap labels_from_scores(const Tensor<float>& scores, int index) {
  const Shape& s = scores.shape();
  if (index < 0 || index >= s.n) throw std::out_of_range("labels_from_scores: sample index");
  std::vector<std::uint8_t> cells(s.plane());
  for (std::size_t p = 0; p < s.plane(); ++p) {
    int best = 0;
    float best_v = scores[static_cast<std::size_t>(index) * s.sample() + p];
    for (int c = 1; c < s.c; ++c) {
      const float v = scores[static_cast<std::size_t>(index) * s.sample() + c * s.plane() + p];
      if (v > best_v) best_v = v, best = c;
    }
    cells[p] = static_cast<std::uint8_t>(best);
  }
  return maskgen::LabelMap(s.w, s.h, std::move(cells));
}

MaskPrediction predict_mask(Fcn<float>& model, const Image& image) {
  const int n = model.config().input_size;
  if (image.width != n || image.height != n) {
    throw std::invalid_argument("predict_mask: image is " + std::to_string(image.width) + "x" +
                                std::to_string(image.height) + ", model expects " + std::to_string(n));
  }
  Var<float> scores = model.forward(Var<float>(to_tensor<float>(image)));
  return MaskPrediction{labels_from_scores(scores.value()), scores.value()};
}

std::vector<maskgen::LabelMap> predict_masks(Fcn<float>& model, const std::vector<const Image*>& images,
                                             int batch_size) {
  const int n = model.config().input_size;
  std::vector<maskgen::LabelMap> out;
  out.reserve(images.size());
  for (std::size_t start = 0; start < images.size(); start += batch_size) {
    const std::size_t end = std::min(images.size(), start + batch_size);
    std::vector<const Image*> batch(images.begin() + start, images.begin() + end);
    for (const Image* img : batch)
      if (img->width != n || img->height != n) throw std::invalid_argument("predict_masks: image size mismatch");
    Var<float> scores = model.forward(Var<float>(to_tensor<float>(batch)));
    for (std::size_t i = 0; i < batch.size(); ++i) out.push_back(labels_from_scores(scores.value(), static_cast<int>(i)));
  }
  return out;
}

double pixel_accuracy(Fcn<float>& model, const std::vector<SegSample>& data) {
  std::vector<const Image*> images;
  for (const auto& s : data) images.push_back(&s.image);
  const auto pred = predict_masks(model, images);
  std::size_t hit = 0, total = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto& a = pred[i].cells();
    const auto& b = data[i].labels.cells();
    for (std::size_t p = 0; p < a.size(); ++p) hit += a[p] == b[p];
    total += a.size();
  }
  return total ? static_cast<double>(hit) / static_cast<double>(total) : 0.0;
}

void save_fcn(const std::filesystem::path& path, const Fcn<float>& model) {
  const FcnConfig& c = model.config();
  std::vector<float> meta = {float(c.input_size), float(c.classes), float(c.convs_per_stage), float(c.context_convs),
                             float(c.channels.size())};
  for (int ch : c.channels) meta.push_back(float(ch));
  for (int s : c.strides) meta.push_back(float(s));
  nn::NamedTensors tensors = nn::snapshot(model.params());
  const int len = static_cast<int>(meta.size());
  tensors.emplace(kMetaName, Tensor<float>(Shape{1, 1, 1, len}, std::move(meta)));
  nn::write_checkpoint(path, tensors);
}

Fcn<float> load_fcn(const std::filesystem::path& path) {
  nn::NamedTensors tensors = nn::read_checkpoint(path);
  auto it = tensors.find(kMetaName);
  if (it == tensors.end()) throw nn::CheckpointError("'" + path.string() + "' is not an FCN checkpoint");
  const auto& m = it->second.storage();
  if (m.size() < 5) throw nn::CheckpointError("FCN checkpoint has a truncated config record");
  FcnConfig c;
  c.input_size = int(m[0]);
  c.classes = int(m[1]);
  c.convs_per_stage = int(m[2]);
  c.context_convs = int(m[3]);
  const std::size_t stages = std::size_t(m[4]);
  if (m.size() != 5 + 2 * stages) throw nn::CheckpointError("FCN checkpoint config record has the wrong length");
  c.channels.assign(m.begin() + 5, m.begin() + 5 + stages);
  c.strides.assign(m.begin() + 5 + stages, m.end());
  Fcn<float> model(c);
  tensors.erase(it);
  nn::assign(model.params(), tensors);
  return model;
}

}  // namespace mcnn::segnet
