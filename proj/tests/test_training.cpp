#include <cmath>

#include "doctest.h"
#include "mcnn/nn/checkpoint.hpp"
#include "mcnn/nn/ops.hpp"
#include "mcnn/rng.hpp"
#include "mcnn/synth.hpp"
#include "mcnn/training.hpp"

using namespace mcnn;
using namespace mcnn::training;
using model::LayerMode;
using model::StreamKind;

namespace {

model::McnnConfig small_config() {
  model::McnnConfig c;
  c.streams.whole_size = 48;
  c.streams.part_size = 32;
  c.streams.backbone.layers = {8, 0, 8, 0, 16, 16, 0};
  return c;
}

segnet::Fcn<float> random_fcn() {
  segnet::Fcn<float> fcn(segnet::FcnConfig{});
  Rng rng(3);
  for (auto* p : fcn.params().all())
    for (auto& v : p->value().storage()) v = static_cast<float>(rng.uniform(-0.3, 0.3));
  return fcn;
}

struct Fixture {
  std::vector<Image> images;
  std::vector<int> labels;
  std::vector<const Image*> ptrs() const {
    std::vector<const Image*> out;
    for (const auto& i : images) out.push_back(&i);
    return out;
  }
};

Fixture synth_images(int n) {
  Fixture f;
  synth::SynthConfig sc;
  // Fixed rendering, independent of the dataset defaults.
  sc.clutter = 6.0;
  sc.near_fraction = 0.6;
  sc.noise = 0.0;
  for (int i = 0; i < n; ++i) {
    const auto s = synth::render_sample(sc, i % sc.classes, dataio::Split::Train, i);
    f.images.push_back(s.image);
    f.labels.push_back(s.label);
  }
  return f;
}

std::string params_bytes(const nn::ParameterStore<float>& p) { return nn::encode_checkpoint(nn::snapshot(p)); }

}  // namespace

TEST_SUITE("training") {
  TEST_CASE("flip doubling: n images give 2n samples per epoch") {
    auto fcn = random_fcn();
    const Fixture f = synth_images(5);
    const PreparedSet set = prepare_set(fcn, f.ptrs(), f.labels, small_config().streams);
    CHECK(set.image_count() == 5);
    CHECK(set.samples.size() == 10);
    model::Mcnn<float> net(small_config());
    TrainConfig tc;
    tc.epochs = 2;
    tc.batch_size = 4;
    const TrainReport r = finetune_stream(net, StreamKind::Head, set, tc);
    CHECK(r.samples_per_epoch == 10);
    CHECK(r.steps == 2 * 3);
    const TrainReport j = joint_train(net, set, tc);
    CHECK(j.samples_per_epoch == 10);
  }

  TEST_CASE("mirrored samples are built from the flipped image with its own masks") {
    auto fcn = random_fcn();
    const Fixture f = synth_images(2);
    const auto streams = small_config().streams;
    const PreparedSet set = prepare_set(fcn, f.ptrs(), f.labels, streams);
    const Image flipped = flip_horizontal(f.images[1]);
    const auto map = segnet::predict_mask(fcn, flipped).labels;
    const model::PreparedSample expect = model::prepare_streams(flipped, map, streams);
    for (int k = 0; k < model::kNumStreams; ++k) {
      CHECK(set.mirrored(1).streams[k].image == expect.streams[k].image);
      CHECK(set.mirrored(1).streams[k].mask == expect.streams[k].mask);
    }
  }

  TEST_CASE("zero epochs leave the stream at its initialisation") {
    auto fcn = random_fcn();
    const Fixture f = synth_images(2);
    const PreparedSet set = prepare_set(fcn, f.ptrs(), f.labels, small_config().streams);
    model::Mcnn<float> net(small_config());
    const std::string before = params_bytes(net.params());
    TrainConfig tc;
    tc.epochs = 0;
    const TrainReport r = finetune_stream(net, StreamKind::Torso, set, tc);
    CHECK(r.steps == 0);
    CHECK(params_bytes(net.params()) == before);
  }

  TEST_CASE("fine-tuning touches only its own stream") {
    auto fcn = random_fcn();
    const Fixture f = synth_images(4);
    const PreparedSet set = prepare_set(fcn, f.ptrs(), f.labels, small_config().streams);
    model::Mcnn<float> net(small_config());
    const auto before = nn::snapshot(net.params());
    TrainConfig tc;
    tc.epochs = 1;
    finetune_stream(net, StreamKind::Head, set, tc);
    const auto after = nn::snapshot(net.params());
    for (const auto& [name, t] : before) {
      const bool own = name.rfind("head.", 0) == 0;
      const bool same = t.storage() == after.at(name).storage();
      INFO(name);
      if (own && name.find(".w") != std::string::npos) CHECK_FALSE(same);
      if (!own) CHECK(same);
    }
  }

  TEST_CASE("joint training with zero learning rate changes nothing") {
    auto fcn = random_fcn();
    const Fixture f = synth_images(3);
    const PreparedSet set = prepare_set(fcn, f.ptrs(), f.labels, small_config().streams);
    model::Mcnn<float> net(small_config());
    const std::string before = params_bytes(net.params());
    TrainConfig tc;
    tc.epochs = 1;
    tc.sgd.learning_rate = 0.0;
    joint_train(net, set, tc);
    CHECK(params_bytes(net.params()) == before);
  }

  TEST_CASE("segmenter parameters are byte-identical across joint training") {
    auto fcn = random_fcn();
    const std::string before = params_bytes(fcn.params());
    const Fixture f = synth_images(4);
    const PreparedSet set = prepare_set(fcn, f.ptrs(), f.labels, small_config().streams);
    model::Mcnn<float> net(small_config());
    TrainConfig tc;
    tc.epochs = 1;
    joint_train(net, set, tc);
    CHECK(params_bytes(fcn.params()) == before);
  }

  TEST_CASE("object stream memorises 8 images in 200 steps") {
    auto fcn = random_fcn();
    const Fixture f = synth_images(8);
    const PreparedSet set = prepare_set(fcn, f.ptrs(), f.labels, small_config().streams);
    model::Mcnn<float> net(small_config());
    TrainConfig tc;
    tc.epochs = 200;
    tc.batch_size = 16;  // one step per epoch
    tc.sgd.learning_rate = 0.05;
    const TrainReport r = finetune_stream(net, StreamKind::Object, set, tc);
    CHECK(r.steps == 200);
    CHECK(r.final_epoch_accuracy == 1.0);
    CHECK(r.epoch_losses.back() < r.epoch_losses.front());
  }

  TEST_CASE("extracted features are the two-pass flip average") {
    auto fcn = random_fcn();
    const Fixture f = synth_images(3);
    model::McnnConfig c = small_config();
    const PreparedSet set = prepare_set(fcn, f.ptrs(), f.labels, c.streams);
    model::Mcnn<float> net(c);
    for (LayerMode mode : {LayerMode::Final, LayerMode::FinalAndPenultimate}) {
      const dataio::FeatureSet fs = extract_features(net, set, mode, 2);
      CHECK(fs.dim == c.feature_dim(mode));
      CHECK(fs.labels == f.labels);
      for (std::size_t i = 0; i < 3; ++i) {
        const auto a = net.features(model::make_batch<float>({&set.original(i)}), mode).value();
        const auto b = net.features(model::make_batch<float>({&set.mirrored(i)}), mode).value();
        for (int j = 0; j < fs.dim; ++j) REQUIRE(std::abs(fs.row(i)[j] - 0.5f * (a[j] + b[j])) < 1e-6f);
      }
    }
  }

  TEST_CASE("mirror-symmetric input: the average equals the original feature") {
    auto fcn = random_fcn();
    Image img = synth_images(1).images[0];
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < img.height; ++y)
        for (int x = img.width / 2; x < img.width; ++x) img.at(c, y, x) = img.at(c, y, img.width - 1 - x);
    REQUIRE(flip_horizontal(img) == img);
    const PreparedSet set = prepare_set(fcn, {&img}, {0}, small_config().streams);
    model::Mcnn<float> net(small_config());
    const auto single = net.features(model::make_batch<float>({&set.original(0)})).value();
    const dataio::FeatureSet fs = extract_features(net, set, LayerMode::Final);
    for (int j = 0; j < fs.dim; ++j) REQUIRE(fs.row(0)[j] == single[j]);
  }

  TEST_CASE("prediction averages class probabilities over the mirror pair") {
    auto fcn = random_fcn();
    const Fixture f = synth_images(4);
    model::McnnConfig c = small_config();
    c.classes = 3;
    const PreparedSet set = prepare_set(fcn, f.ptrs(), {0, 1, 2, 0}, c.streams);
    model::Mcnn<float> net(c);
    Rng rng(9);
    for (auto& v : net.params().get("cls.w").value().storage()) v = static_cast<float>(rng.uniform(-2.0, 2.0));
    const std::vector<int> pred = predict(net, set, 3);
    for (std::size_t i = 0; i < 4; ++i) {
      const auto pa = nn::softmax(net.logits(model::make_batch<float>({&set.original(i)})).value());
      const auto pb = nn::softmax(net.logits(model::make_batch<float>({&set.mirrored(i)})).value());
      int best = 0;
      for (int k = 1; k < 3; ++k)
        if (pa[k] + pb[k] > pa[best] + pb[best]) best = k;
      CHECK(pred[i] == best);
    }
  }

  TEST_CASE("training runs are deterministic") {
    auto fcn = random_fcn();
    const Fixture f = synth_images(4);
    const PreparedSet set = prepare_set(fcn, f.ptrs(), f.labels, small_config().streams);
    std::string out[2];
    for (auto& o : out) {
      model::Mcnn<float> net(small_config());
      TrainConfig tc;
      tc.epochs = 2;
      tc.batch_size = 3;
      finetune_stream(net, StreamKind::WholeImage, set, tc);
      joint_train(net, set, tc);
      o = params_bytes(net.params());
    }
    CHECK(out[0] == out[1]);
  }

  TEST_CASE("mask-list length is checked") {
    const Fixture f = synth_images(2);
    CHECK_THROWS_AS(prepare_set(f.ptrs(), std::vector<maskgen::LabelMap>(3, maskgen::LabelMap(96, 96)), f.labels,
                                small_config().streams),
                    std::invalid_argument);
  }
}
