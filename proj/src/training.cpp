#include "mcnn/training.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

#include "mcnn/nn/ops.hpp"
#include "mcnn/rng.hpp"

namespace mcnn::training {
namespace {

using model::PreparedSample;
using nn::Shape;
using nn::Tensor;
using nn::Var;

// Shared minibatch loop; `loss_fn` builds the loss of one batch and returns
// the logits through `logits` for the running accuracy.
template <typename LossFn>
TrainReport run(const PreparedSet& data, const TrainConfig& config, std::vector<nn::Parameter<float>*> params,
                const char* what, LossFn loss_fn) {
  if (data.samples.empty()) throw std::invalid_argument(std::string(what) + ": empty dataset");
  if (data.samples.size() != 2 * data.labels.size()) throw std::invalid_argument(std::string(what) + ": malformed prepared set");
  if (config.epochs < 0 || config.batch_size <= 0) throw std::invalid_argument(std::string(what) + ": bad epochs/batch size");
  nn::Sgd<float> sgd(config.sgd, params);
  for (auto* p : params) p->zero_grad();

  TrainReport report;
  report.samples_per_epoch = data.samples.size();
  std::vector<std::size_t> order(data.samples.size());
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(derive_seed(config.sgd.seed, static_cast<std::uint64_t>(epoch)));
    rng.shuffle(order.begin(), order.end());
    double total = 0.0;
    std::size_t correct = 0;
    int batches = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      std::vector<const PreparedSample*> batch;
      std::vector<int> labels;
      for (std::size_t i = start; i < end; ++i) {
        batch.push_back(&data.samples[order[i]]);
        labels.push_back(data.labels[order[i] / 2]);
      }
      try {
        Var<float> logits = loss_fn(model::make_batch<float>(batch));
        Var<float> loss = nn::softmax_cross_entropy(logits, std::span<const int>(labels));
        const auto pred = nn::argmax_channels(logits.value());
        for (std::size_t i = 0; i < labels.size(); ++i) correct += pred[i] == labels[i];
        total += loss.value()[0];
        report.step_losses.push_back(loss.value()[0]);
        nn::backward(loss);
        sgd.step();
      } catch (const nn::NumericError& e) {
        throw nn::NumericError(std::string(what) + ": epoch " + std::to_string(epoch) + " step " +
                               std::to_string(report.steps) + ": " + e.what());
      }
      ++batches;
      ++report.steps;
    }
    report.epoch_losses.push_back(total / batches);
    report.final_epoch_accuracy = static_cast<double>(correct) / static_cast<double>(order.size());
  }
  return report;
}

}  // namespace

PreparedSet prepare_set(segnet::Fcn<float>& fcn, const std::vector<const Image*>& images, const std::vector<int>& labels,
                        const model::StreamConfig& streams) {
  if (images.size() != labels.size()) throw std::invalid_argument("prepare_set: images and labels differ in length");
  std::vector<Image> mirrors;
  mirrors.reserve(images.size());
  std::vector<const Image*> inputs;
  for (const Image* img : images) {
    mirrors.push_back(flip_horizontal(*img));
    inputs.push_back(img);
    inputs.push_back(&mirrors.back());
  }
  return prepare_set(images, segnet::predict_masks(fcn, inputs), labels, streams);
}

PreparedSet prepare_set(const std::vector<const Image*>& images, const std::vector<maskgen::LabelMap>& masks,
                        const std::vector<int>& labels, const model::StreamConfig& streams) {
  if (images.size() != labels.size()) throw std::invalid_argument("prepare_set: images and labels differ in length");
  if (masks.size() != 2 * images.size()) {
    throw std::invalid_argument("prepare_set: expected " + std::to_string(2 * images.size()) + " label maps, got " +
                                std::to_string(masks.size()));
  }
  PreparedSet out;
  out.labels = labels;
  out.samples.reserve(masks.size());
  for (std::size_t i = 0; i < images.size(); ++i) {
    out.samples.push_back(model::prepare_streams(*images[i], masks[2 * i], streams));
    out.samples.push_back(model::prepare_streams(flip_horizontal(*images[i]), masks[2 * i + 1], streams));
  }
  return out;
}

TrainReport finetune_stream(model::Mcnn<float>& net, model::StreamKind kind, const PreparedSet& data,
                            const TrainConfig& config) {
  const int s = static_cast<int>(std::find(model::kStreamOrder.begin(), model::kStreamOrder.end(), kind) -
                                 model::kStreamOrder.begin());
  nn::ParameterStore<float> head;
  const int classes = net.config().classes, dim = net.config().stream_dim();
  head.add("w", Tensor<float>(Shape{classes, dim, 1, 1}));
  head.add("b", Tensor<float>(Shape{1, classes, 1, 1}));
  auto params = net.params().with_prefix(model::Mcnn<float>::prefix(kind));
  for (auto* p : head.all()) params.push_back(p);
  return run(data, config, params, "finetune_stream", [&](const model::Batch<float>& b) {
    Var<float> f = net.stream_forward(kind, b[s]).feature;
    return nn::linear(f, head.get("w").var(), head.get("b").var());
  });
}

TrainReport joint_train(model::Mcnn<float>& net, const PreparedSet& data, const TrainConfig& config) {
  return run(data, config, net.params().all(), "joint_train", [&](const model::Batch<float>& b) { return net.logits(b); });
}

dataio::FeatureSet extract_features(model::Mcnn<float>& net, const PreparedSet& data, model::LayerMode mode,
                                    int batch_size) {
  dataio::FeatureSet out;
  out.dim = net.config().feature_dim(mode);
  out.values.reserve(data.image_count() * out.dim);
  const std::size_t per = std::max(1, batch_size / 2);
  for (std::size_t start = 0; start < data.image_count(); start += per) {
    const std::size_t end = std::min(data.image_count(), start + per);
    std::vector<const PreparedSample*> batch;
    for (std::size_t i = start; i < end; ++i) {
      batch.push_back(&data.original(i));
      batch.push_back(&data.mirrored(i));
    }
    const Var<float> f = net.features(model::make_batch<float>(batch), mode);
    const auto& v = f.value();
    for (std::size_t i = 0; i < end - start; ++i) {
      std::vector<float> row(out.dim);
      for (int d = 0; d < out.dim; ++d) {
        row[d] = 0.5f * (v[(2 * i) * out.dim + d] + v[(2 * i + 1) * out.dim + d]);
      }
      out.append(row, data.labels[start + i]);
    }
  }
  return out;
}

std::vector<int> predict(model::Mcnn<float>& net, const PreparedSet& data, int batch_size) {
  std::vector<int> out;
  const int k = net.config().classes;
  const std::size_t per = std::max(1, batch_size / 2);
  for (std::size_t start = 0; start < data.image_count(); start += per) {
    const std::size_t end = std::min(data.image_count(), start + per);
    std::vector<const PreparedSample*> batch;
    for (std::size_t i = start; i < end; ++i) {
      batch.push_back(&data.original(i));
      batch.push_back(&data.mirrored(i));
    }
    const Tensor<float> p = nn::softmax(net.logits(model::make_batch<float>(batch)).value());
    for (std::size_t i = 0; i < end - start; ++i) {
      int best = 0;
      double best_p = -1.0;
      for (int c = 0; c < k; ++c) {
        const double avg = 0.5 * (double(p[(2 * i) * k + c]) + double(p[(2 * i + 1) * k + c]));
        if (avg > best_p) best_p = avg, best = c;
      }
      out.push_back(best);
    }
  }
  return out;
}

}  // namespace mcnn::training
