#pragma once
// Dataset manifests, CUB-style annotation ingestion and feature files.
//
// Manifest text format, one item per line ('#' starts a comment):
//   classes=<name>,<name>,...
//   image_size=<int>
//   image=<path> label=<int> split=<train|test> kp.<part>=<x>,<y>,<0|1> ...
// Records carry all 15 keypoints. Image paths are relative to the manifest.

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "mcnn/maskgen.hpp"

namespace mcnn::dataio {

class ManifestError : public std::runtime_error {
 public:
  ManifestError(const std::string& source, int line, const std::string& message);
  int line() const { return line_; }

 private:
  int line_;
};

enum class Split { Train, Test };
std::string_view split_name(Split split);

struct Record {
  std::string image;
  int label = 0;
  Split split = Split::Train;
  maskgen::KeypointSet keypoints;

  /// No visible head point or no visible torso point.
  bool degenerate() const;
  friend bool operator==(const Record&, const Record&) = default;
};

struct DatasetManifest {
  std::vector<std::string> classes;
  int image_size = 0;  // 0 when images vary in size
  std::vector<Record> records;
  std::filesystem::path root;  // directory that image paths are relative to

  std::filesystem::path image_path(const Record& record) const;
  std::vector<const Record*> select(Split split) const;
  std::size_t count(Split split) const;
  /// Throws std::invalid_argument on labels outside the class list.
  void validate() const;
};

std::string format_manifest(const DatasetManifest& manifest);
/// `source` names the input in error messages.
DatasetManifest parse_manifest(const std::string& text, const std::filesystem::path& root,
                               const std::string& source = "<manifest>");
DatasetManifest load_manifest(const std::filesystem::path& path);
void save_manifest(const std::filesystem::path& path, const DatasetManifest& manifest);

/// Reads a CUB-200-2011 style tree (images.txt, image_class_labels.txt,
/// train_test_split.txt, classes.txt, parts/parts.txt, parts/part_locs.txt).
/// Image paths become "images/<listed path>", optionally with their
/// extension replaced.
DatasetManifest ingest_cub(const std::filesystem::path& root, const std::string& replace_extension = "");

class FeatureFileError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Row-major float features with one label per row.
struct FeatureSet {
  int dim = 0;
  std::vector<float> values;
  std::vector<int> labels;

  std::size_t count() const { return labels.size(); }
  const float* row(std::size_t i) const { return values.data() + i * static_cast<std::size_t>(dim); }
  float* row(std::size_t i) { return values.data() + i * static_cast<std::size_t>(dim); }
  void append(const std::vector<float>& feature, int label);
  friend bool operator==(const FeatureSet&, const FeatureSet&) = default;
};

inline constexpr std::uint32_t kFeatureFileVersion = 1;

/// "MCFT", u32 version, u32 count, u32 dim, count*dim f32, count i32 labels;
/// little-endian.
void write_features(const std::filesystem::path& path, const FeatureSet& features);
FeatureSet read_features(const std::filesystem::path& path);

}  // namespace mcnn::dataio
