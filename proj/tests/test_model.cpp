#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "mcnn/diagnostics.hpp"
#include "mcnn/model.hpp"
#include "mcnn/nn/checkpoint.hpp"
#include "mcnn/nn/gradcheck.hpp"
#include "mcnn/nn/ops.hpp"
#include "mcnn/rng.hpp"
#include "oracles.hpp"

using namespace mcnn;
using namespace mcnn::model;
using nn::Shape;
using nn::Tensor;
using nn::Var;

namespace {

McnnConfig tiny_config(Variant v = Variant::Mcnn) {
  McnnConfig c;
  c.variant = v;
  c.classes = 3;
  c.streams.whole_size = 16;
  c.streams.part_size = 8;
  c.streams.backbone.layers = {2, 0, 3, 3, 0};
  c.fc_width = 5;
  return c;
}

Image random_image(int size, std::uint64_t seed) {
  Image img(size, size);
  Rng rng(seed);
  for (auto& v : img.data) v = static_cast<float>(rng.uniform());
  return img;
}

// Blob-shaped label map: torso rectangle with a head rectangle to its left.
maskgen::LabelMap blob_map(int size, int shift = 0) {
  maskgen::LabelMap m(size, size);
  for (int y = size / 4; y < 3 * size / 4; ++y)
    for (int x = size / 3 + shift; x < 3 * size / 4 + shift; ++x) m.set(y, std::min(x, size - 1), 2);
  for (int y = size / 8; y < size / 3; ++y)
    for (int x = size / 8 + shift; x < size / 3 + shift; ++x) m.set(y, std::min(x, size - 1), 1);
  return m;
}

template <typename T>
Tensor<T> nonneg_tensor(Shape s, std::uint64_t seed) {
  Rng rng(seed);
  Tensor<T> t(s);
  for (auto& v : t.storage()) v = static_cast<T>(rng.uniform() < 0.2 ? 0.0 : rng.uniform(0.0, 2.0));
  return t;
}

template <typename T>
Tensor<T> random_mask(Shape s, std::uint64_t seed, double p = 0.5) {
  Rng rng(seed);
  Tensor<T> t(s);
  for (auto& v : t.storage()) v = rng.uniform() < p ? T(1) : T(0);
  return t;
}

template <typename T>
void randomize(nn::ParameterStore<T>& params, std::uint64_t seed, double scale = 0.5) {
  Rng rng(seed);
  for (auto* p : params.all())
    for (auto& v : p->value().storage()) v = static_cast<T>(rng.uniform(-scale, scale));
}

}  // namespace

TEST_SUITE("mcnn") {
  TEST_CASE("backbone layer lists are validated") {
    BackboneConfig b;
    CHECK(b.channels() == 32);
    CHECK(b.penultimate_channels() == 32);
    CHECK(b.stride() == 8);
    for (std::vector<int> bad : std::vector<std::vector<int>>{{}, {16, 0, 32}, {0, 16, 0}, {16, -1, 16, 0}, {16, 0, 0}}) {
      b.layers = bad;
      CHECK_THROWS_AS(b.validate(), std::invalid_argument);
    }
  }

  TEST_CASE("toy and faithful feature dimensions") {
    McnnConfig toy;
    CHECK(toy.stream_dim() == 64);
    CHECK(toy.feature_dim() == 256);
    CHECK(toy.feature_dim(LayerMode::FinalAndPenultimate) == 512);

    McnnConfig faithful;
    faithful.classes = 200;
    faithful.streams.whole_size = 224;
    faithful.streams.part_size = 224;
    faithful.streams.backbone.layers = {32, 0, 64, 0, 128, 0, 256, 0, 512, 512, 512, 0};
    CHECK(faithful.streams.backbone.channels() == 512);
    CHECK(faithful.streams.grid(StreamKind::WholeImage) == 7);
    CHECK(faithful.stream_dim() == 1024);
    CHECK(faithful.feature_dim() == 4096);
    CHECK(faithful.feature_dim(LayerMode::FinalAndPenultimate) == 8192);
    faithful.variant = Variant::Fcs;
    CHECK(faithful.fc_dim() == 4096);
    CHECK(faithful.feature_dim() == 16384);
  }

  TEST_CASE("variant and layer mode names round trip") {
    for (Variant v : {Variant::Mcnn, Variant::Pooling, Variant::Fcs}) CHECK(parse_variant(variant_name(v)) == v);
    CHECK(parse_layer_mode("final") == LayerMode::Final);
    CHECK(parse_layer_mode("both") == LayerMode::FinalAndPenultimate);
    CHECK_THROWS_AS(parse_variant("vgg"), std::invalid_argument);
    CHECK_THROWS_AS(parse_layer_mode("pool4"), std::invalid_argument);
  }

  TEST_CASE("crop box contains every mask pixel of its part") {
    Rng rng(5);
    for (int trial = 0; trial < 200; ++trial) {
      maskgen::BinaryMask m(40, 30);
      const int cx = rng.uniform_int(0, 39), cy = rng.uniform_int(0, 29);
      const int r = rng.uniform_int(0, 8);
      for (int y = 0; y < 30; ++y)
        for (int x = 0; x < 40; ++x)
          if (std::abs(x - cx) + std::abs(y - cy) <= r && rng.uniform() < 0.7) m.set(y, x, 1);
      if (m.count(1) == 0) m.set(cy, cx, 1);
      const Box b = part_box(m);
      CHECK(b.width() >= 5);
      CHECK(b.height() >= 5);
      CHECK(b.x_min >= 0);
      CHECK(b.y_min >= 0);
      CHECK(b.x_max < 40);
      CHECK(b.y_max < 30);
      for (int y = 0; y < 30; ++y)
        for (int x = 0; x < 40; ++x)
          if (m.at(y, x)) REQUIRE((x >= b.x_min && x <= b.x_max && y >= b.y_min && y <= b.y_max));
    }
  }

  TEST_CASE("single-pixel head mask falls back to a dilated crop") {
    maskgen::BinaryMask m(32, 32);
    m.set(10, 20, 1);
    const Box b = part_box(m);
    CHECK(b.width() == 5);
    CHECK(b.height() == 5);
    CHECK(b.x_min == 18);
    CHECK(b.y_min == 8);
  }

  TEST_CASE("mask covering the whole image: every stream sees the resized full image") {
    StreamConfig sc;
    sc.whole_size = 32;
    sc.part_size = 16;
    const Image img = random_image(48, 9);
    maskgen::LabelMap map(48, 48, 2);
    for (int y = 0; y < 48; ++y) map.set(y, 0, 1);  // head strip along the left edge spans full height
    for (int x = 0; x < 48; ++x) map.set(0, x, 1);
    const PreparedSample s = prepare_streams(img, map, sc);
    CHECK(s.streams[0].image == resize(img, 32, 32));
    CHECK(s.streams[3].image == resize(img, 16, 16));
    CHECK(s.boxes[3].width() == 48);
    CHECK(s.boxes[3].height() == 48);
    CHECK(s.streams[0].mask.count(1) == s.streams[0].mask.cells().size());
    CHECK(s.streams[0].mask.width() == sc.grid(StreamKind::WholeImage));
    CHECK(s.streams[1].penultimate_mask.width() == sc.penultimate_grid(StreamKind::Head));
  }

  TEST_CASE("label map size must match the image") {
    CHECK_THROWS_AS(prepare_streams(random_image(32, 1), maskgen::LabelMap(16, 16), StreamConfig{}), std::invalid_argument);
  }

  TEST_CASE("all-ones mask equals unmasked avg+max pooling") {
    const Var<double> x(nonneg_tensor<double>(Shape{2, 4, 5, 5}, 1));
    const Tensor<double> ones(Shape{2, 1, 5, 5}, 1.0);
    const Tensor<double> f = select_and_pool(x, ones).value();
    for (int n = 0; n < 2; ++n) {
      const auto avg = oracle::normalize(oracle::gather_then_pool(x.value(), ones, n, false));
      const auto mx = oracle::normalize(oracle::gather_then_pool(x.value(), ones, n, true));
      for (int c = 0; c < 4; ++c) {
        CHECK(f.at(n, c, 0, 0) == doctest::Approx(avg[c]).epsilon(1e-12));
        CHECK(f.at(n, 4 + c, 0, 0) == doctest::Approx(mx[c]).epsilon(1e-12));
      }
    }
  }

  TEST_CASE("mask keeping one cell: both halves equal that cell's normalised descriptor") {
    const Var<double> x(nonneg_tensor<double>(Shape{1, 6, 4, 4}, 2));
    Tensor<double> mask(Shape{1, 1, 4, 4});
    mask.at(0, 0, 2, 1) = 1.0;
    const Tensor<double> f = select_and_pool(x, mask).value();
    std::vector<double> d;
    for (int c = 0; c < 6; ++c) d.push_back(x.value().at(0, c, 2, 1));
    d = oracle::normalize(d);
    for (int c = 0; c < 6; ++c) {
      CHECK(f.at(0, c, 0, 0) == doctest::Approx(d[c]).epsilon(1e-12));
      CHECK(f.at(0, 6 + c, 0, 0) == doctest::Approx(d[c]).epsilon(1e-12));
    }
  }

  TEST_CASE("random masks match gather-then-pool-then-normalise and halves have unit norm") {
    for (int trial = 0; trial < 100; ++trial) {
      const Var<float> x(nonneg_tensor<float>(Shape{3, 5, 6, 6}, 100 + trial));
      const Tensor<float> mask = random_mask<float>(Shape{3, 1, 6, 6}, 200 + trial, 0.3);
      const Tensor<float> f = select_and_pool(x, mask).value();
      for (int n = 0; n < 3; ++n) {
        const auto avg = oracle::normalize(oracle::gather_then_pool(x.value(), mask, n, false));
        const auto mx = oracle::normalize(oracle::gather_then_pool(x.value(), mask, n, true));
        double na = 0, nm = 0;
        for (int c = 0; c < 5; ++c) {
          REQUIRE(std::abs(f.at(n, c, 0, 0) - avg[c]) < 1e-5);
          REQUIRE(std::abs(f.at(n, 5 + c, 0, 0) - mx[c]) < 1e-5);
          na += double(f.at(n, c, 0, 0)) * f.at(n, c, 0, 0);
          nm += double(f.at(n, 5 + c, 0, 0)) * f.at(n, 5 + c, 0, 0);
        }
        REQUIRE((std::abs(std::sqrt(na) - 1.0) < 1e-5 || na == 0.0));
        REQUIRE((std::abs(std::sqrt(nm) - 1.0) < 1e-5 || nm == 0.0));
      }
    }
  }

  TEST_CASE("negative descriptors are rejected before max pooling") {
    Tensor<float> t(Shape{1, 2, 2, 2}, 1.0f);
    t[3] = -0.5f;
    CHECK_THROWS_AS(select_and_pool(Var<float>(t), Tensor<float>(Shape{1, 1, 2, 2}, 1.0f)), std::logic_error);
  }

  TEST_CASE("adding mask cells never lowers the pre-normalisation max") {
    for (int trial = 0; trial < 200; ++trial) {
      const Var<double> x(nonneg_tensor<double>(Shape{1, 4, 5, 5}, 300 + trial));
      Tensor<double> small = random_mask<double>(Shape{1, 1, 5, 5}, 400 + trial, 0.3);
      small.at(0, 0, 0, 0) = 1.0;  // keep it non-empty so no fallback kicks in
      Tensor<double> big = small;
      Rng rng(500 + trial);
      for (auto& v : big.storage())
        if (rng.uniform() < 0.3) v = 1.0;
      const auto a = nn::masked_global_pool(nn::mask_mul(x, small), small, nn::PoolMode::Max).value();
      const auto b = nn::masked_global_pool(nn::mask_mul(x, big), big, nn::PoolMode::Max).value();
      for (std::size_t i = 0; i < a.size(); ++i) REQUIRE(b[i] >= a[i]);
    }
  }

  TEST_CASE("zero classifier gives uniform logits and loss ln K") {
    const McnnConfig c = tiny_config();
    Mcnn<double> net(c);
    std::vector<PreparedSample> samples;
    for (int i = 0; i < 2; ++i) samples.push_back(prepare_streams(random_image(32, i), blob_map(32), c.streams));
    const auto batch = make_batch<double>({&samples[0], &samples[1]});
    const Var<double> logits = net.logits(batch);
    CHECK(logits.shape() == Shape{2, 3, 1, 1});
    for (double v : logits.value().storage()) CHECK(v == 0.0);
    const std::vector<int> labels = {0, 2};
    const double loss = nn::softmax_cross_entropy(logits, std::span<const int>(labels)).value()[0];
    CHECK(loss == doctest::Approx(std::log(3.0)).epsilon(1e-12));
  }

  TEST_CASE("feature blocks follow the fixed stream order") {
    const McnnConfig c = tiny_config();
    Mcnn<double> net(c);
    PreparedSample s = prepare_streams(random_image(32, 4), blob_map(32), c.streams);
    const auto batch = make_batch<double>({&s});
    const Tensor<double> all = net.features(batch, LayerMode::FinalAndPenultimate).value();
    const int d = c.stream_dim();
    for (int k = 0; k < kNumStreams; ++k) {
      const auto o = net.stream_forward(kStreamOrder[k], batch[k], true);
      for (int j = 0; j < d; ++j) {
        REQUIRE(all[k * d + j] == o.feature.value()[j]);
        REQUIRE(all[(kNumStreams + k) * d + j] == o.penultimate_feature.value()[j]);
      }
    }
  }

  TEST_CASE("pooling baseline equals Mask-CNN when predicted masks are full") {
    Mcnn<double> a(tiny_config(Variant::Mcnn)), b(tiny_config(Variant::Pooling));
    randomize(a.params(), 7);
    randomize(b.params(), 7);
    PreparedSample s = prepare_streams(random_image(32, 5), maskgen::LabelMap(32, 32, 2), tiny_config().streams);
    for (auto& st : s.streams) {
      st.mask = maskgen::BinaryMask(st.mask.width(), st.mask.height(), 1);
      st.penultimate_mask = maskgen::BinaryMask(st.penultimate_mask.width(), st.penultimate_mask.height(), 1);
    }
    const auto batch = make_batch<double>({&s});
    const Tensor<double> la = a.logits(batch).value(), lb = b.logits(batch).value();
    for (std::size_t i = 0; i < la.size(); ++i) CHECK(la[i] == lb[i]);
  }

  TEST_CASE("fcs variant: zero fc weights give uniform logits") {
    const McnnConfig c = tiny_config(Variant::Fcs);
    Mcnn<double> net(c);
    CHECK(c.feature_dim() == 4 * 5);
    randomize(net.params(), 8);
    for (auto* p : net.params().all())
      if (p->name().find("fc2") != std::string::npos) p->value().fill(0.0);
    net.params().get("cls.b").value().fill(0.0);
    PreparedSample s = prepare_streams(random_image(32, 6), blob_map(32), c.streams);
    const Tensor<double> l = net.logits(make_batch<double>({&s})).value();
    for (double v : l.storage()) CHECK(v == 0.0);
  }

  TEST_CASE("four-stream gradient check in double precision") {
    for (Variant v : {Variant::Mcnn, Variant::Fcs}) {
      const McnnConfig c = tiny_config(v);
      Mcnn<double> net(c);
      randomize(net.params(), 9, 0.6);
      // Shift conv biases up so that relu kinks sit away from the probed points.
      for (auto* p : net.params().all())
        if (p->name().find(".b") != std::string::npos) p->value().fill(0.05);
      std::vector<PreparedSample> samples;
      for (int i = 0; i < 2; ++i) samples.push_back(prepare_streams(random_image(32, 20 + i), blob_map(32, i), c.streams));
      const auto batch = make_batch<double>({&samples[0], &samples[1]});
      const std::vector<int> labels = {1, 2};
      nn::GradCheckOptions opt;
      opt.max_coords_per_tensor = 30;
      const auto r = nn::check_gradients(
          [&] { return nn::softmax_cross_entropy(net.logits(batch), std::span<const int>(labels)); }, net.params(), {}, opt);
      INFO(variant_name(v), " worst ", r.worst);
      CHECK(r.max_rel_error < 1e-4);
    }
  }

  TEST_CASE("checkpoint round trip restores config and parameters") {
    McnnConfig c = tiny_config(Variant::Fcs);
    c.seed = 17;
    Mcnn<float> net(c);
    const auto path = std::filesystem::temp_directory_path() / "mcnn_test_model.ckpt";
    save_mcnn(path, net);
    const Mcnn<float> back = load_mcnn(path);
    CHECK(back.config().variant == Variant::Fcs);
    CHECK(back.config().streams.backbone.layers == c.streams.backbone.layers);
    CHECK(back.config().fc_width == 5);
    CHECK(nn::encode_checkpoint(nn::snapshot(back.params())) == nn::encode_checkpoint(nn::snapshot(net.params())));
    std::filesystem::remove(path);
  }

  TEST_CASE("same seed builds identical parameters") {
    Mcnn<float> a(McnnConfig{}), b(McnnConfig{});
    CHECK(nn::encode_checkpoint(nn::snapshot(a.params())) == nn::encode_checkpoint(nn::snapshot(b.params())));
  }
}
