#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "mcnn/nn/checkpoint.hpp"
#include "mcnn/nn/gradcheck.hpp"
#include "mcnn/nn/ops.hpp"
#include "mcnn/rng.hpp"
#include "mcnn/segnet.hpp"
#include "mcnn/synth.hpp"

using namespace mcnn;
using namespace mcnn::segnet;
using nn::Shape;
using nn::Tensor;
using nn::Var;

namespace {

FcnConfig toy_config(int size = 24) {
  FcnConfig c;
  c.input_size = size;
  c.channels = {2, 3, 4};
  c.convs_per_stage = 1;
  c.context_convs = 1;
  return c;
}

template <typename T>
void randomize(nn::ParameterStore<T>& params, std::uint64_t seed, double scale = 0.5) {
  Rng rng(seed);
  for (auto* p : params.all())
    for (auto& v : p->value().storage()) v = static_cast<T>(rng.uniform(-scale, scale));
}

template <typename T>
Tensor<T> random_tensor(Shape s, std::uint64_t seed) {
  Rng rng(seed);
  Tensor<T> t(s);
  for (auto& v : t.storage()) v = static_cast<T>(rng.uniform(-1.0, 1.0));
  return t;
}

SegSample synth_sample(int label, int index) {
  synth::SynthConfig sc;
  const synth::SynthSample s = synth::render_sample(sc, label, dataio::Split::Train, index);
  return {s.image, maskgen::build_label_map(s.keypoints, sc.image_size, sc.image_size)};
}

}  // namespace

TEST_SUITE("segnet") {
  TEST_CASE("forward on a 96x96 image yields 3 heat maps of the same size") {
    Fcn<float> net(FcnConfig{});
    const Var<float> out = net.forward(Var<float>(random_tensor<float>(Shape{1, 3, 96, 96}, 3)));
    CHECK(out.shape() == Shape{1, 3, 96, 96});
  }

  TEST_CASE("zero-initialised score heads give uniform scores") {
    Fcn<float> net(FcnConfig{});
    const Var<float> out = net.forward(Var<float>(random_tensor<float>(Shape{2, 3, 96, 96}, 4)));
    for (float v : out.value().storage()) REQUIRE(v == out.value()[0]);
  }

  TEST_CASE("parameter count matches the closed form per layer") {
    const FcnConfig c;
    std::size_t expected = 0;
    auto conv = [](std::size_t in, std::size_t out, std::size_t k) { return in * out * k * k + out; };
    int in = 3;
    for (int ch : c.channels) {
      for (int j = 0; j < c.convs_per_stage; ++j) {
        expected += conv(in, ch, 3);
        in = ch;
      }
    }
    expected += c.context_convs * conv(in, in, 3);
    expected += conv(in, 3, 1) + conv(c.channels[1], 3, 1);  // score heads at strides 8 and 4
    expected += 3 * 3 * 4 * 4 + 3 * 3 * 8 * 8;                // up2, up4 (no bias)
    CHECK(fcn_parameter_count(c) == expected);
    CHECK(expected == 93846);
    Fcn<float> net(c);
    CHECK(net.params().scalar_count() == expected);
  }

  TEST_CASE("inconsistent strides are rejected") {
    FcnConfig c;
    c.strides = {2, 2, 4};
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    c.strides = {2, 2};
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    c = FcnConfig{};
    c.input_size = 100;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  }

  TEST_CASE("full-model gradient check on a 24x24 toy config") {
    Fcn<double> net(toy_config());
    randomize(net.params(), 11);
    const Var<double> x(random_tensor<double>(Shape{2, 3, 24, 24}, 12), true);
    std::vector<int> labels(2 * 24 * 24);
    Rng rng(13);
    for (int& l : labels) l = static_cast<int>(rng.uniform_int(0, 2));
    nn::GradCheckOptions opt;
    opt.max_coords_per_tensor = 40;
    const auto report = nn::check_gradients(
        [&] { return nn::softmax_cross_entropy(net.forward(x), std::span<const int>(labels)); }, net.params(), {x}, opt);
    INFO(report.worst);
    CHECK(report.coordinates > 250);
    CHECK(report.max_rel_error < 1e-4);
  }

  TEST_CASE("zeroed skip branch reproduces the coarse-only prediction exactly") {
    Fcn<double> net(toy_config(32));
    randomize(net.params(), 21);
    const Var<double> x(random_tensor<double>(Shape{1, 3, 32, 32}, 22));
    auto taps = net.taps(x);
    taps.score4 = Var<double>(Tensor<double>(taps.score4.shape()));
    const Tensor<double> fused = net.decode(taps).value();
    const Tensor<double> coarse =
        nn::transposed_conv2d(nn::transposed_conv2d(taps.score8, net.params().get("up2.w").var(), 2),
                              net.params().get("up4.w").var(), 4)
            .value();
    REQUIRE(fused.shape() == coarse.shape());
    for (std::size_t i = 0; i < fused.size(); ++i) REQUIRE(fused[i] == coarse[i]);
  }

  TEST_CASE("label maps match the input size for sizes divisible by 8") {
    for (int size : {16, 40, 64}) {
      FcnConfig c = toy_config(size);
      Fcn<float> net(c);
      randomize(net.params(), 30 + size);
      Image img(size, size);
      Rng rng(size);
      for (auto& v : img.data) v = static_cast<float>(rng.uniform());
      const MaskPrediction p = predict_mask(net, img);
      CHECK(p.labels.width() == size);
      CHECK(p.labels.height() == size);
      for (auto v : p.labels.cells()) REQUIRE(v <= 2);
    }
  }

  TEST_CASE("predict_mask rejects a wrong image size") {
    Fcn<float> net(toy_config());
    CHECK_THROWS(predict_mask(net, Image(32, 32)));
  }

  TEST_CASE("background scoring highest everywhere gives an all-background map") {
    Fcn<float> net(FcnConfig{});
    net.params().get("score8.b").value()[0] = 1.0f;
    const MaskPrediction p = predict_mask(net, Image(96, 96));
    CHECK(p.labels.count(0) == p.labels.cells().size());
  }

  TEST_CASE("argmax ties go to the lowest class and match a per-pixel scan") {
    Tensor<float> tie(Shape{1, 3, 1, 2}, 0.5f);
    const auto tied = labels_from_scores(tie);
    CHECK(tied.at(0, 0) == 0);
    CHECK(tied.at(0, 1) == 0);

    const Tensor<float> scores = random_tensor<float>(Shape{2, 3, 7, 5}, 40);
    for (int n = 0; n < 2; ++n) {
      const auto map = labels_from_scores(scores, n);
      for (int y = 0; y < 7; ++y)
        for (int x = 0; x < 5; ++x) {
          int best = 0;
          for (int c = 1; c < 3; ++c)
            if (scores.at(n, c, y, x) > scores.at(n, best, y, x)) best = c;
          REQUIRE(map.at(y, x) == best);
        }
    }
  }

  TEST_CASE("zero learning rate leaves parameters unchanged") {
    Fcn<float> net(FcnConfig{});
    const auto before = nn::encode_checkpoint(nn::snapshot(net.params()));
    FcnTrainConfig tc;
    tc.epochs = 1;
    tc.sgd.learning_rate = 0.0;
    train_fcn(net, {synth_sample(0, 1), synth_sample(1, 2)}, tc);
    CHECK(nn::encode_checkpoint(nn::snapshot(net.params())) == before);
  }

  TEST_CASE("empty dataset and wrong-size samples are rejected") {
    Fcn<float> net(toy_config());
    CHECK_THROWS_AS(train_fcn(net, {}, FcnTrainConfig{}), std::invalid_argument);
    CHECK_THROWS_AS(train_fcn(net, {synth_sample(0, 1)}, FcnTrainConfig{}), std::invalid_argument);
  }

  TEST_CASE("single-image memorisation reaches 99% pixel accuracy in 200 steps") {
    Fcn<float> net(FcnConfig{});
    const std::vector<SegSample> data = {synth_sample(3, 7)};
    FcnTrainConfig tc;
    tc.epochs = 200;
    tc.batch_size = 1;
    tc.flip = false;
    const FcnTrainResult r = train_fcn(net, data, tc);
    CHECK(r.steps == 200);
    CHECK(r.step_losses.back() < r.step_losses.front());
    CHECK(pixel_accuracy(net, data) >= 0.99);
  }

  TEST_CASE("checkpoint round trip rebuilds an identical model") {
    FcnConfig c = toy_config(32);
    c.channels = {3, 5, 6};
    Fcn<float> net(c);
    randomize(net.params(), 50);
    const auto path = std::filesystem::temp_directory_path() / "mcnn_test_fcn.ckpt";
    save_fcn(path, net);
    Fcn<float> back = load_fcn(path);
    CHECK(back.config().channels == c.channels);
    CHECK(nn::encode_checkpoint(nn::snapshot(back.params())) == nn::encode_checkpoint(nn::snapshot(net.params())));
    std::filesystem::remove(path);
  }
}
