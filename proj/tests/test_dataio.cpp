#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "doctest.h"
#include "mcnn/dataio.hpp"
#include "mcnn/synth.hpp"

using namespace mcnn;
using namespace mcnn::dataio;
using maskgen::Part;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

void write_text(const fs::path& p, const std::string& text) {
  fs::create_directories(p.parent_path());
  std::ofstream(p, std::ios::binary) << text;
}

std::string read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

DatasetManifest small_manifest() {
  DatasetManifest m;
  m.classes = {"a", "b"};
  m.image_size = 64;
  for (int i = 0; i < 3; ++i) {
    Record r;
    r.image = "images/x" + std::to_string(i) + ".ppm";
    r.label = i % 2;
    r.split = i == 2 ? Split::Test : Split::Train;
    for (int p = 0; p < maskgen::kNumParts; ++p) {
      r.keypoints.points[p].position = {1.25 + p * 3.5, 40.0 - p * 0.5 - i};
      r.keypoints.points[p].visible = (p + i) % 4 != 0;
    }
    m.records.push_back(r);
  }
  return m;
}

std::string record_line(const std::string& extra = "") {
  std::string line = "image=a.ppm label=0 split=train";
  for (int p = 0; p < maskgen::kNumParts; ++p) line += " kp." + std::string(maskgen::part_name(Part(p))) + "=1,2,1";
  return line + extra + "\n";
}

// Three hand-built CUB records with all 15 parts.
void write_cub_fixture(const fs::path& root) {
  write_text(root / "classes.txt", "1 001.Black_footed_Albatross\n2 002.Laysan_Albatross\n");
  write_text(root / "images.txt", "1 001.Black_footed_Albatross/a.jpg\n2 002.Laysan_Albatross/b.jpg\n3 002.Laysan_Albatross/c.jpg\n");
  write_text(root / "image_class_labels.txt", "1 1\n2 2\n3 2\n");
  write_text(root / "train_test_split.txt", "1 1\n2 0\n3 1\n");
  const char* names[] = {"back",      "beak",     "belly",      "breast",    "crown",
                         "forehead",  "left eye", "left leg",   "left wing", "nape",
                         "right eye", "right leg", "right wing", "tail",      "throat"};
  std::string parts, locs;
  for (int i = 0; i < 15; ++i) parts += std::to_string(i + 1) + " " + names[i] + "\n";
  for (int img = 1; img <= 3; ++img)
    for (int i = 1; i <= 15; ++i)
      locs += std::to_string(img) + " " + std::to_string(i) + " " + std::to_string(10 * img + i) + ".5 " +
              std::to_string(100 + i) + ".0 " + (i == img + 3 ? "0" : "1") + "\n";
  write_text(root / "parts/parts.txt", parts);
  write_text(root / "parts/part_locs.txt", locs);
}

}  // namespace

TEST_SUITE("dataio") {
  TEST_CASE("manifest round trip is lossless") {
    const DatasetManifest m = small_manifest();
    const DatasetManifest back = parse_manifest(format_manifest(m), m.root);
    CHECK(back.classes == m.classes);
    CHECK(back.image_size == m.image_size);
    CHECK(back.records == m.records);
    CHECK(format_manifest(back) == format_manifest(m));
    CHECK(back.count(Split::Train) == 2);
    CHECK(back.select(Split::Test).size() == 1);
  }

  TEST_CASE("manifest file round trip resolves paths against its directory") {
    TempDir dir("mcnn_test_manifest");
    DatasetManifest m = small_manifest();
    save_manifest(dir.path / "manifest.txt", m);
    const DatasetManifest back = load_manifest(dir.path / "manifest.txt");
    CHECK(back.records == m.records);
    CHECK(back.image_path(back.records[0]) == dir.path / "images/x0.ppm");
  }

  TEST_CASE("malformed manifests are rejected with the line number") {
    const std::string head = "classes=a,b\nimage_size=0\n";
    auto line_of = [&](const std::string& body) {
      try {
        parse_manifest(head + body, ".");
      } catch (const ManifestError& e) {
        return e.line();
      }
      return -1;
    };
    CHECK(line_of(record_line()) == -1);
    CHECK(line_of(record_line() + record_line(" kp.crest=1,1,1")) == 4);  // a 16th keypoint name
    CHECK(line_of(record_line(" kp.beak=1,1,1")) == 3);                    // duplicate
    CHECK(line_of("\n" + record_line(" colour=red")) == 4);
    std::string missing = record_line();
    missing.replace(missing.find(" kp.tail=1,2,1"), 14, "");
    CHECK(line_of(missing) == 3);
    std::string bad_label = record_line();
    bad_label.replace(bad_label.find("label=0"), 7, "label=2");
    CHECK(line_of(bad_label) == 3);
    CHECK_THROWS_AS(parse_manifest(record_line(), "."), ManifestError);  // no classes header
  }

  TEST_CASE("CUB-style ingestion maps the 15 part files onto named keypoints") {
    TempDir dir("mcnn_test_cub");
    write_cub_fixture(dir.path);
    const DatasetManifest m = ingest_cub(dir.path, ".ppm");
    REQUIRE(m.records.size() == 3);
    CHECK(m.classes == std::vector<std::string>{"001.Black_footed_Albatross", "002.Laysan_Albatross"});
    CHECK(m.records[0].image == "images/001.Black_footed_Albatross/a.ppm");
    CHECK(m.records[0].label == 0);
    CHECK(m.records[2].label == 1);
    CHECK(m.records[1].split == Split::Test);
    CHECK(m.records[2].split == Split::Train);
    // Part id 7 is "left eye", id 15 "throat"; image 1 hides id 4 (breast).
    CHECK(m.records[0].keypoints[Part::LeftEye].position.x == 17.5);
    CHECK(m.records[0].keypoints[Part::LeftEye].position.y == 107.0);
    CHECK(m.records[1].keypoints[Part::Throat].position.x == 35.5);
    CHECK_FALSE(m.records[0].keypoints[Part::Breast].visible);
    CHECK(m.records[0].keypoints[Part::Beak].visible);
    CHECK_FALSE(m.records[2].keypoints[Part::Forehead].visible);
    // The result is a valid manifest.
    const DatasetManifest back = parse_manifest(format_manifest(m), dir.path);
    CHECK(back.records == m.records);
  }

  TEST_CASE("CUB ingestion rejects an unknown part name") {
    TempDir dir("mcnn_test_cub_bad");
    write_cub_fixture(dir.path);
    write_text(dir.path / "parts/parts.txt", "1 beak\n2 antenna\n");
    CHECK_THROWS_AS(ingest_cub(dir.path), ManifestError);
  }

  TEST_CASE("feature files round trip bit-exactly and reject damage") {
    TempDir dir("mcnn_test_features");
    FeatureSet f;
    f.dim = 3;
    f.append({1.0f, -0.0f, 3.25e-7f}, 2);
    f.append({-5.5f, 1e30f, 0.1f}, 0);
    const auto path = dir.path / "f.bin";
    write_features(path, f);
    CHECK(read_features(path) == f);
    const std::string bytes = read_bytes(path);
    CHECK(bytes.size() == 16 + 4 * (6 + 2));
    write_text(path, bytes.substr(0, bytes.size() - 3));
    CHECK_THROWS_AS(read_features(path), FeatureFileError);
    write_text(path, "MCFX" + bytes.substr(4));
    CHECK_THROWS_AS(read_features(path), FeatureFileError);
    std::string v2 = bytes;
    v2[4] = 2;
    write_text(path, v2);
    CHECK_THROWS_AS(read_features(path), FeatureFileError);
    CHECK_THROWS_AS(read_features(dir.path / "missing.bin"), FeatureFileError);
  }
}

TEST_SUITE("synth") {
  TEST_CASE("a fixed seed gives a byte-identical dataset") {
    TempDir a("mcnn_test_synth_a"), b("mcnn_test_synth_b");
    synth::SynthConfig c;
    c.classes = 3;
    c.train_per_class = 2;
    c.test_per_class = 1;
    c.seed = 7;
    const DatasetManifest ma = synth::generate_synthetic_dataset(c, a.path);
    synth::generate_synthetic_dataset(c, b.path);
    CHECK(ma.records.size() == 9);
    CHECK(read_bytes(a.path / "manifest.txt") == read_bytes(b.path / "manifest.txt"));
    for (const Record& r : ma.records) REQUIRE(read_bytes(a.path / r.image) == read_bytes(b.path / r.image));
    c.seed = 8;
    TempDir other("mcnn_test_synth_c");
    synth::generate_synthetic_dataset(c, other.path);
    CHECK(read_bytes(a.path / ma.records[0].image) != read_bytes(other.path / ma.records[0].image));
  }

  TEST_CASE("every keypoint lies inside its part's rendered shape") {
    synth::SynthConfig c;
    for (int label = 0; label < c.classes; ++label)
      for (int i = 0; i < 25; ++i) {
        const synth::SynthSample s = synth::render_sample(c, label, i % 2 ? Split::Test : Split::Train, i);
        for (Part p : maskgen::kHeadParts) {
          const auto& kp = s.keypoints[p];
          const bool neck = p == Part::Nape || p == Part::Throat;
          INFO(maskgen::part_name(p));
          REQUIRE((s.bird.in_head(kp.position) || (neck && s.bird.in_torso(kp.position))));
        }
        for (Part p : maskgen::kTorsoParts) {
          const bool neck = p == Part::Nape || p == Part::Throat;
          INFO(maskgen::part_name(p));
          REQUIRE((s.bird.in_torso(s.keypoints[p].position) || (neck && s.bird.in_head(s.keypoints[p].position))));
        }
      }
  }

  TEST_CASE("class patterns factor into head and torso attributes") {
    std::set<std::pair<int, int>> seen;
    for (int label = 0; label < 8; ++label) seen.insert({synth::head_pattern(label, 8), synth::torso_pattern(label, 8)});
    CHECK(seen.size() == 8);
    CHECK(synth::head_pattern_count(8) == 4);
  }

  TEST_CASE("rendering is a pure function of its arguments") {
    synth::SynthConfig c;
    const auto a = synth::render_sample(c, 3, Split::Train, 5);
    const auto b = synth::render_sample(c, 3, Split::Train, 5);
    CHECK(a.image == b.image);
    CHECK(a.keypoints == b.keypoints);
    CHECK_FALSE(synth::render_sample(c, 3, Split::Test, 5).image == a.image);
  }

  TEST_CASE("invalid configurations are rejected") {
    synth::SynthConfig c;
    c.classes = 1;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    c = synth::SynthConfig{};
    c.clutter = -1;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  }
}
