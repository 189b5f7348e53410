#pragma once
// End-to-end pipeline: one declarative key=value config, a fixed sequence of
// phases that communicate through artifacts in a work directory, and flat
// key=value reports.

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "mcnn/classify.hpp"
#include "mcnn/dataio.hpp"
#include "mcnn/model.hpp"
#include "mcnn/segnet.hpp"
#include "mcnn/synth.hpp"
#include "mcnn/training.hpp"

namespace mcnn::pipeline {

enum class Phase { GenData, TrainFcn, GenMasks, Finetune, JointTrain, Extract, TrainLr, Whiten, Evaluate };
inline constexpr int kNumPhases = 9;
inline constexpr Phase kPhaseOrder[kNumPhases] = {Phase::GenData,    Phase::TrainFcn, Phase::GenMasks,
                                                  Phase::Finetune,   Phase::JointTrain, Phase::Extract,
                                                  Phase::TrainLr,    Phase::Whiten,   Phase::Evaluate};

std::string_view phase_name(Phase p);
Phase parse_phase(std::string_view name);

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A required artifact is absent; `producer` is the phase that writes it.
class DependencyError : public std::runtime_error {
 public:
  DependencyError(Phase producer, const std::filesystem::path& artifact);
  Phase producer() const { return producer_; }

 private:
  Phase producer_;
};

struct PipelineConfig {
  std::uint64_t seed = 1;
  synth::SynthConfig data;
  segnet::FcnConfig fcn;
  segnet::FcnTrainConfig fcn_train;
  model::McnnConfig mcnn;
  training::TrainConfig finetune;
  training::TrainConfig joint{10, 16, {0.01, 0.9, 5e-4, 0}};
  model::LayerMode layers = model::LayerMode::Final;
  classify::LrConfig lr;
  int whiten_k = 0;  // 0: half the feature dimension

  PipelineConfig();
  /// Throws ConfigError on inconsistent settings.
  void validate() const;
  /// Copy with the global seed pushed into every phase and the shared sizes
  /// (image size, class count) propagated.
  PipelineConfig resolved() const;
};

std::uint64_t phase_seed(std::uint64_t seed, Phase p);

/// Every key with its current value, one `key = value` per line.
std::string format_config(const PipelineConfig& config);
/// `#` starts a comment. Unknown keys and malformed values throw ConfigError
/// naming source and line. Keys not mentioned keep their defaults.
PipelineConfig parse_config(std::string_view text, const std::string& source = "<config>");
PipelineConfig load_config(const std::filesystem::path& path);
void set_config_value(PipelineConfig& config, std::string_view key, std::string_view value);
std::vector<std::string> config_keys();

/// Ordered flat key=value report.
class Report {
 public:
  void add(std::string key, std::string value);
  void add(std::string key, double value, int precision = 4);
  void add(std::string key, long long value);
  std::string format() const;
  void write(const std::filesystem::path& path) const;
  const std::vector<std::pair<std::string, std::string>>& entries() const { return entries_; }

 private:
  std::vector<std::pair<std::string, std::string>> entries_;
};

/// Work-directory layout.
namespace artifacts {
inline constexpr const char* kConfig = "config.txt";
inline constexpr const char* kManifest = "data/manifest.txt";
inline constexpr const char* kFcn = "fcn.ckpt";
inline constexpr const char* kMaskDir = "masks";
inline constexpr const char* kFinetuned = "mcnn_finetuned.ckpt";
inline constexpr const char* kMcnn = "mcnn.ckpt";
inline constexpr const char* kTrainFeatures = "features_train.bin";
inline constexpr const char* kTestFeatures = "features_test.bin";
inline constexpr const char* kLr = "lr.model";
inline constexpr const char* kWhitening = "whiten.model";
inline constexpr const char* kTrainWhite = "features_train_white.bin";
inline constexpr const char* kTestWhite = "features_test_white.bin";
inline constexpr const char* kLrWhite = "lr_white.model";
inline constexpr const char* kReport = "report.txt";
}  // namespace artifacts

/// Predicted label-map file for record i (and its mirror) in a mask directory.
std::filesystem::path mask_path(const std::filesystem::path& dir, std::size_t record, bool mirrored = false);

/// A manifest's images at a square working size, keypoints scaled to match.
struct LoadedData {
  dataio::DatasetManifest manifest;
  std::vector<Image> images;
  std::vector<maskgen::KeypointSet> keypoints;

  std::vector<std::size_t> indices(dataio::Split split) const;
  std::vector<const Image*> images_of(const std::vector<std::size_t>& idx) const;
  std::vector<int> labels_of(const std::vector<std::size_t>& idx) const;
  std::vector<maskgen::LabelMap> truth_of(const std::vector<std::size_t>& idx) const;
};
LoadedData load_data(const std::filesystem::path& manifest, int size);

/// Predicts the label maps of every image and its mirror into `dir`.
void write_masks(segnet::Fcn<float>& fcn, const LoadedData& data, const std::filesystem::path& dir);
/// Label maps of the given records (original, mirror interleaved).
std::vector<maskgen::LabelMap> read_masks(const std::filesystem::path& dir, const std::vector<std::size_t>& idx);

/// Per-stream fine-tuning (in stream order) on a fresh model.
model::Mcnn<float> finetune_all(const model::McnnConfig& config, const training::PreparedSet& data,
                                const training::TrainConfig& train, Report* report = nullptr);

/// Segmentation and part-localisation scores of predicted maps.
Report evaluate_segmentation(const std::vector<maskgen::LabelMap>& predicted,
                             const std::vector<maskgen::LabelMap>& truth);
Report evaluate_parts(const std::vector<maskgen::LabelMap>& predicted, const std::vector<maskgen::LabelMap>& truth);

/// Runs one phase against the work directory.
void run_phase(const PipelineConfig& config, const std::filesystem::path& dir, Phase phase);
/// Echoes the effective config into `dir`, then runs the requested phases
/// in the fixed order.
void run_pipeline(const PipelineConfig& config, const std::filesystem::path& dir, std::vector<Phase> phases);

}  // namespace mcnn::pipeline
