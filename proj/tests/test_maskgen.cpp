#include <algorithm>
#include <cmath>
#include <filesystem>
#include <random>
#include <set>

#include "doctest.h"
#include "mcnn/diagnostics.hpp"
#include "mcnn/maskgen.hpp"
#include "oracles.hpp"

using namespace mcnn;
using namespace mcnn::maskgen;
using oracle::cross3;
using oracle::gift_wrap;
using oracle::inside_oracle;

namespace {

std::vector<Point> random_points(std::mt19937_64& gen, int n, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<Point> pts(n);
  for (auto& p : pts) p = {u(gen), u(gen)};
  return pts;
}

KeypointSet random_annotation(std::mt19937_64& gen, int w, int h, double visible_prob) {
  std::uniform_real_distribution<double> ux(0.0, w - 1e-6), uy(0.0, h - 1e-6), u01(0.0, 1.0);
  KeypointSet kps;
  for (auto& kp : kps.points) {
    kp.position = {ux(gen), uy(gen)};
    kp.visible = u01(gen) < visible_prob;
  }
  return kps;
}

int pixel_label(const LabelMap& m, const Point& p) {
  return m.at(static_cast<int>(std::floor(p.y)), static_cast<int>(std::floor(p.x)));
}

}  // namespace

TEST_SUITE("maskgen") {
  TEST_CASE("split_keypoints follows the head and torso subsets") {
    KeypointSet all;
    for (int i = 0; i < kNumParts; ++i) all.points[i] = {{double(i), double(i)}, true};
    auto parts = split_keypoints(all);
    CHECK(parts.head.size() == 7);
    CHECK(parts.torso.size() == 10);
    const Point nape{5, 5}, throat{6, 6};
    for (const auto& list : {parts.head, parts.torso}) {
      CHECK(std::count(list.begin(), list.end(), nape) == 1);
      CHECK(std::count(list.begin(), list.end(), throat) == 1);
    }

    KeypointSet beak_only;
    beak_only[Part::Beak] = {{3, 4}, true};
    parts = split_keypoints(beak_only);
    REQUIRE(parts.head.size() == 1);
    CHECK(parts.head[0] == Point{3, 4});
    CHECK(parts.torso.empty());

    parts = split_keypoints(KeypointSet{});
    CHECK(parts.head.empty());
    CHECK(parts.torso.empty());
  }

  TEST_CASE("part names round-trip") {
    for (int i = 0; i < kNumParts; ++i) CHECK(part_from_name(part_name(Part(i))) == Part(i));
    CHECK(part_name(Part::LeftEye) == "left_eye");
    CHECK_FALSE(part_from_name("wingtip").has_value());
  }

  TEST_CASE("hull of a square with its centre is the four corners") {
    std::vector<Point> pts{{0, 0}, {1, 0}, {1, 1}, {0, 1}, {0.5, 0.5}};
    auto hull = convex_hull(pts);
    CHECK_FALSE(hull.degenerate);
    CHECK(hull.vertices.size() == 4);
    CHECK(std::find(hull.vertices.begin(), hull.vertices.end(), Point{0.5, 0.5}) == hull.vertices.end());
  }

  TEST_CASE("hull of a triangle is counter-clockwise") {
    std::vector<Point> pts{{0, 0}, {0, 3}, {4, 0}};
    auto hull = convex_hull(pts);
    REQUIRE(hull.vertices.size() == 3);
    CHECK(cross3(hull.vertices[0], hull.vertices[1], hull.vertices[2]) > 0);
  }

  TEST_CASE("hull drops collinear boundary points") {
    std::vector<Point> pts{{0, 0}, {1, 0}, {2, 0}, {2, 2}, {0, 2}};
    CHECK(convex_hull(pts).vertices.size() == 4);
  }

  TEST_CASE("degenerate inputs") {
    std::vector<Point> one{{2, 3}, {2, 3}};
    auto p = convex_hull(one);
    CHECK(p.degenerate);
    CHECK(p.vertices.size() == 1);
    std::vector<Point> line{{0, 0}, {2, 2}, {1, 1}, {3, 3}};
    auto s = convex_hull(line);
    CHECK(s.degenerate);
    REQUIRE(s.vertices.size() == 2);
    CHECK(s.vertices.front() == Point{0, 0});
    CHECK(s.vertices.back() == Point{3, 3});
    CHECK_THROWS_AS(convex_hull(std::span<const Point>{}), std::invalid_argument);
  }

  TEST_CASE("hull matches gift wrapping on 200 random points") {
    std::mt19937_64 gen(11);
    for (int trial = 0; trial < 20; ++trial) {
      auto pts = random_points(gen, 200, -50, 50);
      auto hull = convex_hull(pts);
      std::set<std::pair<double, double>> got;
      for (auto& v : hull.vertices) got.insert({v.x, v.y});
      CHECK(got == gift_wrap(pts));
    }
  }

  TEST_CASE("hull is convex and contains its inputs over 1000 random sets") {
    std::mt19937_64 gen(12);
    std::uniform_int_distribution<int> count(3, 40);
    int failures = 0;
    for (int trial = 0; trial < 1000; ++trial) {
      auto pts = random_points(gen, count(gen), 0, 100);
      auto hull = convex_hull(pts);
      const auto& v = hull.vertices;
      if (hull.degenerate || v.size() < 3) {
        ++failures;
        continue;
      }
      for (std::size_t i = 0; i < v.size(); ++i)
        if (cross3(v[i], v[(i + 1) % v.size()], v[(i + 2) % v.size()]) <= 0) ++failures;
      for (const auto& p : pts)
        for (std::size_t i = 0; i < v.size(); ++i)
          if (cross3(v[i], v[(i + 1) % v.size()], p) < -1e-9) ++failures;
    }
    CHECK(failures == 0);
  }

  TEST_CASE("axis-aligned square labels exactly a 4x4 block") {
    // Corners at 0 and 4 enclose the centres 0.5 .. 3.5.
    Polygon sq{{{0, 0}, {4, 0}, {4, 4}, {0, 4}}, false};
    auto m = rasterize_polygon(sq, 10, 10);
    CHECK(m.count(1) == 16);
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 4; ++j) CHECK(m.at(i, j) == 1);
    // Centres on the boundary count as inside.
    Polygon edge{{{0.5, 0.5}, {4.5, 0.5}, {4.5, 4.5}, {0.5, 4.5}}, false};
    CHECK(rasterize_polygon(edge, 10, 10).count(1) == 25);
  }

  TEST_CASE("rasterization matches the per-pixel half-plane oracle") {
    std::mt19937_64 gen(13);
    std::uniform_int_distribution<int> count(3, 12);
    for (int trial = 0; trial < 200; ++trial) {
      auto pts = random_points(gen, count(gen), -3, 35);
      auto hull = convex_hull(pts);
      if (hull.degenerate) continue;
      auto m = rasterize_polygon(hull, 32, 28);
      int mismatches = 0;
      for (int i = 0; i < 28; ++i)
        for (int j = 0; j < 32; ++j)
          if ((m.at(i, j) == 1) != inside_oracle(hull.vertices, j + 0.5, i + 0.5)) ++mismatches;
      CHECK(mismatches == 0);
    }
  }

  TEST_CASE("single point rasterizes to a disk of radius 2") {
    Polygon pt{{{5.5, 5.5}}, true};
    auto m = rasterize_polygon(pt, 12, 12);
    int expected = 0;
    for (int i = 0; i < 12; ++i)
      for (int j = 0; j < 12; ++j) {
        const bool in = std::hypot(j + 0.5 - 5.5, i + 0.5 - 5.5) <= 2.0;
        expected += in;
        CHECK((m.at(i, j) == 1) == in);
      }
    CHECK(expected == 13);
  }

  TEST_CASE("segment rasterizes to a stadium") {
    Polygon seg{{{2.5, 5.5}, {8.5, 5.5}}, true};
    auto m = rasterize_polygon(seg, 12, 12);
    CHECK(m.at(5, 5) == 1);
    CHECK(m.at(3, 5) == 1);
    CHECK(m.at(2, 5) == 0);
    CHECK(m.at(5, 0) == 1);
    CHECK(m.at(5, 11) == 0);
  }

  TEST_CASE("zero-size canvas") {
    Polygon pt{{{1, 1}}, true};
    CHECK_THROWS_AS(rasterize_polygon(pt, 0, 5), std::invalid_argument);
  }

  TEST_CASE("disjoint hulls give the union of both rasterizations") {
    KeypointSet kps;
    for (Part p : {Part::Beak, Part::Forehead, Part::Crown}) kps[p].visible = true;
    kps[Part::Beak].position = {2, 2};
    kps[Part::Forehead].position = {8, 2};
    kps[Part::Crown].position = {5, 7};
    for (Part p : {Part::Back, Part::Belly, Part::Tail}) kps[p].visible = true;
    kps[Part::Back].position = {20, 20};
    kps[Part::Belly].position = {28, 20};
    kps[Part::Tail].position = {24, 28};
    auto lm = build_label_map(kps, 32, 32);
    auto head = rasterize_polygon(convex_hull(split_keypoints(kps).head), 32, 32);
    auto torso = rasterize_polygon(convex_hull(split_keypoints(kps).torso), 32, 32);
    for (int i = 0; i < 32; ++i)
      for (int j = 0; j < 32; ++j) CHECK(lm.at(i, j) == (head.at(i, j) ? 1 : torso.at(i, j) ? 2 : 0));
  }

  TEST_CASE("head wins where hulls overlap") {
    KeypointSet kps;
    kps[Part::Nape] = {{10.5, 10.5}, true};
    kps[Part::Throat] = {{10.5, 20.5}, true};
    kps[Part::Beak] = {{2, 15}, true};
    kps[Part::Tail] = {{30, 15}, true};
    auto lm = build_label_map(kps, 32, 32);
    // The shared nape-throat edge passes through pixel centres.
    CHECK(lm.at(15, 10) == 1);
    CHECK(lm.at(15, 20) == 2);
    CHECK(lm.at(15, 5) == 1);
  }

  TEST_CASE("no visible keypoints gives background and a warning") {
    WarningCapture capture;
    auto lm = build_label_map(KeypointSet{}, 8, 8);
    CHECK(lm.count(0) == 64);
    CHECK(capture.count() == 1);
  }

  TEST_CASE("visible keypoints carry their part labels") {
    std::mt19937_64 gen(14);
    for (int trial = 0; trial < 300; ++trial) {
      auto kps = random_annotation(gen, 40, 30, 0.7);
      auto lm = build_label_map(kps, 40, 30);
      for (auto v : lm.cells()) CHECK(v <= 2);
      const auto head_hull = split_keypoints(kps).head;
      for (Part p : kHeadParts)
        if (kps[p].visible) {
          // Pixels are labelled by their centre, so test the centre of the
          // pixel holding the keypoint against a slightly grown hull.
          const int l = pixel_label(lm, kps[p].position);
          if (l != 1) {
            const Point c{std::floor(kps[p].position.x) + 0.5, std::floor(kps[p].position.y) + 0.5};
            auto hull = convex_hull(head_hull);
            CHECK_FALSE((!hull.degenerate && inside_oracle(hull.vertices, c.x, c.y)));
          }
        }
      for (Part p : kTorsoParts) {
        if (!kps[p].visible || p == Part::Nape || p == Part::Throat) continue;
        const Point c{std::floor(kps[p].position.x) + 0.5, std::floor(kps[p].position.y) + 0.5};
        auto torso = convex_hull(split_keypoints(kps).torso);
        if (!torso.degenerate && inside_oracle(torso.vertices, c.x, c.y)) CHECK(pixel_label(lm, kps[p].position) != 0);
      }
    }
  }

  TEST_CASE("label map is equivariant under horizontal flips") {
    std::mt19937_64 gen(15);
    std::uniform_int_distribution<int> quarter(0, 4 * 31);
    int mismatched_maps = 0;
    for (int trial = 0; trial < 200; ++trial) {
      KeypointSet kps;
      for (auto& kp : kps.points) {
        // Quarter-pixel coordinates keep every test exact under the flip.
        kp.position = {quarter(gen) / 4.0, quarter(gen) / 4.0};
        kp.visible = (gen() % 10) < 7;
      }
      auto direct = build_label_map(flip_keypoints(kps, 32), 32, 32);
      auto flipped = flip_horizontal(build_label_map(kps, 32, 32));
      if (!(direct == flipped)) ++mismatched_maps;
    }
    CHECK(mismatched_maps == 0);
  }

  TEST_CASE("center crop offsets") {
    auto off = center_crop_offset(500, 400, 384);
    CHECK(off.dx == -58);
    CHECK(off.dy == -8);
    off = center_crop_offset(300, 300, 384);
    CHECK(off.dx == 42);
    CHECK(off.dy == 42);
    off = center_crop_offset(384, 384, 384);
    CHECK(off.dx == 0);
    CHECK(off.dy == 0);
  }

  TEST_CASE("center crop of image and keypoints") {
    Image img(500, 400);
    for (int y = 0; y < 400; ++y)
      for (int x = 0; x < 500; ++x) img.at(0, y, x) = float((x + 3 * y) % 251) / 251.0f;
    KeypointSet kps;
    kps[Part::Beak] = {{100, 100}, true};
    kps[Part::Tail] = {{10, 10}, true};
    auto out = center_crop(img, kps, 384);
    CHECK(out.image.width == 384);
    CHECK(out.image.at(0, 0, 0) == img.at(0, 8, 58));
    CHECK(out.image.at(0, 383, 383) == img.at(0, 391, 441));
    CHECK(out.keypoints[Part::Beak].position == Point{42, 92});
    CHECK(out.keypoints[Part::Beak].visible);
    CHECK_FALSE(out.keypoints[Part::Tail].visible);

    Image same(384, 384, 0.25f);
    CHECK(center_crop(same, kps, 384).image == same);

    Image small(300, 300, 1.0f);
    auto padded = center_crop(small, kps, 384);
    CHECK(padded.image.at(1, 41, 41) == 0.0f);
    CHECK(padded.image.at(1, 42, 42) == 1.0f);
    CHECK(padded.image.at(1, 341, 341) == 1.0f);
    CHECK(padded.image.at(1, 342, 342) == 0.0f);
    CHECK(padded.keypoints[Part::Beak].position == Point{142, 142});

    LabelMap lm(300, 300, 2);
    auto lm_pad = center_crop(lm, 384);
    CHECK(lm_pad.count(2) == 300u * 300u);
    CHECK(lm_pad.at(41, 200) == 0);
  }

  TEST_CASE("mask_to_bbox") {
    BinaryMask m(10, 8);
    m.set(3, 5, 1);
    CHECK(mask_to_bbox(m) == Box{5, 3, 5, 3});
    CHECK(mask_to_bbox(BinaryMask(10, 8, 1)) == Box{0, 0, 9, 7});
    WarningCapture capture;
    CHECK(mask_to_bbox(BinaryMask(10, 8)) == Box{0, 0, 9, 7});
    CHECK(capture.count() == 1);

    std::mt19937_64 gen(16);
    for (int trial = 0; trial < 100; ++trial) {
      BinaryMask r(17, 13);
      for (int i = 0; i < 13; ++i)
        for (int j = 0; j < 17; ++j)
          if (gen() % 9 == 0) r.set(i, j, 1);
      if (r.count(1) == 0) continue;
      int x0 = 99, y0 = 99, x1 = -1, y1 = -1;
      for (int i = 0; i < 13; ++i)
        for (int j = 0; j < 17; ++j)
          if (r.at(i, j)) x0 = std::min(x0, j), x1 = std::max(x1, j), y0 = std::min(y0, i), y1 = std::max(y1, i);
      CHECK(mask_to_bbox(r) == Box{x0, y0, x1, y1});
    }
  }

  TEST_CASE("union_masks") {
    std::mt19937_64 gen(17);
    BinaryMask a(6, 5), b(6, 5);
    for (int i = 0; i < 5; ++i)
      for (int j = 0; j < 6; ++j) {
        a.set(i, j, gen() & 1);
        b.set(i, j, gen() & 1);
      }
    CHECK(union_masks(BinaryMask(6, 5), b) == b);
    CHECK(union_masks(a, a) == a);
    auto u = union_masks(a, b);
    for (int i = 0; i < 5; ++i)
      for (int j = 0; j < 6; ++j) CHECK(u.at(i, j) == (a.at(i, j) || b.at(i, j) ? 1 : 0));
    CHECK_THROWS_AS(union_masks(a, BinaryMask(5, 6)), std::invalid_argument);
  }

  TEST_CASE("nearest resize") {
    CHECK(resize_nearest(BinaryMask(5, 7, 1), 3, 11) == BinaryMask(11, 3, 1));
    std::mt19937_64 gen(18);
    LabelMap lm(9, 6);
    for (int i = 0; i < 6; ++i)
      for (int j = 0; j < 9; ++j) lm.set(i, j, gen() % 3);
    CHECK(resize_nearest(lm, 6, 9) == lm);

    BinaryMask checker(4, 4);
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 4; ++j) checker.set(i, j, (i + j) % 2);
    auto small = resize_nearest(checker, 2, 2);
    for (int i = 0; i < 2; ++i)
      for (int j = 0; j < 2; ++j) CHECK(small.at(i, j) == checker.at(2 * i + 1, 2 * j + 1));

    // Every output value comes from the evaluated index formula.
    auto r = resize_nearest(lm, 4, 5);
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 5; ++j)
        CHECK(r.at(i, j) == lm.at(int(std::floor((i + 0.5) * 6 / 4)), int(std::floor((j + 0.5) * 9 / 5))));
    CHECK_THROWS_AS(resize_nearest(lm, 0, 2), std::invalid_argument);
  }

  TEST_CASE("part masks from a label map") {
    auto bg = labelmap_to_part_masks(LabelMap(5, 5));
    CHECK(bg.head.count(1) == 0);
    CHECK(bg.torso.count(1) == 0);
    CHECK(bg.object.count(1) == 0);

    LabelMap one(5, 5);
    one.set(2, 3, 1);
    auto pm = labelmap_to_part_masks(one);
    CHECK(pm.head.count(1) == 1);
    CHECK(pm.head.at(2, 3) == 1);
    CHECK(pm.object == pm.head);

    std::mt19937_64 gen(19);
    LabelMap lm(8, 7);
    for (int i = 0; i < 7; ++i)
      for (int j = 0; j < 8; ++j) lm.set(i, j, gen() % 3);
    pm = labelmap_to_part_masks(lm);
    CHECK(pm.object == union_masks(pm.head, pm.torso));
  }

  TEST_CASE("grid values are range checked") {
    CHECK_THROWS_AS(BinaryMask(2, 2, 2), std::invalid_argument);
    LabelMap lm(2, 2);
    CHECK_THROWS_AS(lm.set(0, 0, 3), std::invalid_argument);
  }

  TEST_CASE("crop_grid and mask_tensor") {
    LabelMap lm(6, 4);
    lm.set(1, 2, 2);
    auto c = crop_grid(lm, Box{2, 1, 4, 3});
    CHECK(c.width() == 3);
    CHECK(c.height() == 3);
    CHECK(c.at(0, 0) == 2);
    CHECK_THROWS_AS(crop_grid(lm, Box{2, 1, 6, 3}), std::invalid_argument);
    BinaryMask m(3, 2);
    m.set(1, 2, 1);
    auto t = mask_tensor<float>(m);
    CHECK(t.shape() == nn::Shape{1, 1, 2, 3});
    CHECK(t.at(0, 0, 1, 2) == 1.0f);
    CHECK(t.at(0, 0, 0, 0) == 0.0f);
  }

  TEST_CASE("PGM round trip") {
    auto dir = std::filesystem::temp_directory_path() / "mcnn_maskgen_test";
    std::filesystem::create_directories(dir);
    LabelMap lm(5, 3);
    lm.set(1, 1, 1);
    lm.set(2, 4, 2);
    write_pgm(dir / "lm.pgm", lm);
    CHECK(read_label_map_pgm(dir / "lm.pgm") == lm);
    BinaryMask m(4, 4);
    m.set(3, 0, 1);
    write_pgm(dir / "m.pgm", m);
    CHECK(read_mask_pgm(dir / "m.pgm") == m);
    CHECK_THROWS_AS(read_mask_pgm(dir / "lm.pgm"), ImageIoError);
    std::filesystem::remove_all(dir);
  }
}

TEST_SUITE("image") {
  TEST_CASE("PPM round trip keeps 8-bit values") {
    Image img(7, 5);
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < 5; ++y)
        for (int x = 0; x < 7; ++x) img.at(c, y, x) = float((c * 40 + y * 7 + x * 13) % 256) / 255.0f;
    auto path = std::filesystem::temp_directory_path() / "mcnn_image_test.ppm";
    write_ppm(path, img);
    auto back = read_ppm(path);
    CHECK(back.width == 7);
    CHECK(back.height == 5);
    for (std::size_t i = 0; i < img.data.size(); ++i) CHECK(back.data[i] == doctest::Approx(img.data[i]).epsilon(1e-6));
    std::filesystem::remove(path);
    CHECK_THROWS_AS(read_ppm(path), ImageIoError);
  }

  TEST_CASE("flip and resize") {
    Image img(3, 2);
    img.at(0, 0, 0) = 1.0f;
    auto f = flip_horizontal(img);
    CHECK(f.at(0, 0, 2) == 1.0f);
    CHECK(flip_horizontal(f) == img);
    Image flat(8, 6, 0.5f);
    auto r = resize(flat, 3, 5);
    CHECK(r.width == 3);
    CHECK(r.height == 5);
    for (float v : r.data) CHECK(v == doctest::Approx(0.5f));
    CHECK(resize(img, 3, 2) == img);
  }

  TEST_CASE("crop_resize at identity size copies the box") {
    Image img(10, 10);
    for (int y = 0; y < 10; ++y)
      for (int x = 0; x < 10; ++x) img.at(2, y, x) = float(y * 10 + x);
    auto c = crop_resize(img, Box{2, 3, 5, 7}, 4, 5);
    for (int y = 0; y < 5; ++y)
      for (int x = 0; x < 4; ++x) CHECK(c.at(2, y, x) == doctest::Approx(img.at(2, y + 3, x + 2)));
  }
}
