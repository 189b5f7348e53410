#include "mcnn/pipeline.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iomanip>
#include <sstream>

#include "mcnn/metrics.hpp"
#include "mcnn/rng.hpp"

namespace mcnn::pipeline {
namespace fs = std::filesystem;
namespace {

constexpr const char* kPhaseNames[kNumPhases] = {"gen-data",   "train-fcn", "gen-masks", "finetune", "joint-train",
                                                 "extract",    "train-lr",  "whiten",    "evaluate"};

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

long long to_int(std::string_view v) {
  long long out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) throw ConfigError("'" + std::string(v) + "' is not an integer");
  return out;
}

double to_real(std::string_view v) {
  double out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) throw ConfigError("'" + std::string(v) + "' is not a number");
  return out;
}

bool to_bool(std::string_view v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("'" + std::string(v) + "' is not a boolean");
}

std::vector<int> to_list(std::string_view v) {
  std::vector<int> out;
  std::size_t start = 0;
  while (start <= v.size()) {
    const auto comma = std::min(v.find(',', start), v.size());
    out.push_back(static_cast<int>(to_int(trim(v.substr(start, comma - start)))));
    start = comma + 1;
  }
  return out;
}

std::string real_str(double v) {
  char buf[32];
  const auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

std::string list_str(const std::vector<int>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
  return out;
}

struct Field {
  std::string key;
  std::function<std::string(const PipelineConfig&)> get;
  std::function<void(PipelineConfig&, std::string_view)> set;
};

#define MCNN_INT_FIELD(KEY, MEMBER)                                                    \
  Field {                                                                              \
    KEY, [](const PipelineConfig& c) { return std::to_string(c.MEMBER); },             \
        [](PipelineConfig& c, std::string_view v) { c.MEMBER = static_cast<int>(to_int(v)); } \
  }
#define MCNN_REAL_FIELD(KEY, MEMBER)                                       \
  Field {                                                                  \
    KEY, [](const PipelineConfig& c) { return real_str(c.MEMBER); },       \
        [](PipelineConfig& c, std::string_view v) { c.MEMBER = to_real(v); } \
  }

void add_train_fields(std::vector<Field>& f, const char* prefix, training::TrainConfig PipelineConfig::*member) {
  const std::string p = prefix;
  auto key = [&p](const char* k) { return p + k; };
  f.push_back({key(".epochs"), [member](const PipelineConfig& c) { return std::to_string((c.*member).epochs); },
               [member](PipelineConfig& c, std::string_view v) { (c.*member).epochs = static_cast<int>(to_int(v)); }});
  f.push_back({key(".batch_size"),
               [member](const PipelineConfig& c) { return std::to_string((c.*member).batch_size); },
               [member](PipelineConfig& c, std::string_view v) { (c.*member).batch_size = static_cast<int>(to_int(v)); }});
  f.push_back({key(".lr"), [member](const PipelineConfig& c) { return real_str((c.*member).sgd.learning_rate); },
               [member](PipelineConfig& c, std::string_view v) { (c.*member).sgd.learning_rate = to_real(v); }});
  f.push_back({key(".momentum"), [member](const PipelineConfig& c) { return real_str((c.*member).sgd.momentum); },
               [member](PipelineConfig& c, std::string_view v) { (c.*member).sgd.momentum = to_real(v); }});
  f.push_back({key(".weight_decay"),
               [member](const PipelineConfig& c) { return real_str((c.*member).sgd.weight_decay); },
               [member](PipelineConfig& c, std::string_view v) { (c.*member).sgd.weight_decay = to_real(v); }});
}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = [] {
    std::vector<Field> f = {
        Field{"seed", [](const PipelineConfig& c) { return std::to_string(c.seed); },
              [](PipelineConfig& c, std::string_view v) {
                const long long s = to_int(v);
                if (s < 0) throw ConfigError("seed must be non-negative");
                c.seed = static_cast<std::uint64_t>(s);
              }},
        MCNN_INT_FIELD("data.classes", data.classes),
        MCNN_INT_FIELD("data.train_per_class", data.train_per_class),
        MCNN_INT_FIELD("data.test_per_class", data.test_per_class),
        MCNN_INT_FIELD("data.image_size", data.image_size),
        MCNN_REAL_FIELD("data.clutter", data.clutter),
        MCNN_REAL_FIELD("data.near_fraction", data.near_fraction),
        MCNN_REAL_FIELD("data.noise", data.noise),
        Field{"fcn.channels", [](const PipelineConfig& c) { return list_str(c.fcn.channels); },
              [](PipelineConfig& c, std::string_view v) { c.fcn.channels = to_list(v); }},
        Field{"fcn.strides", [](const PipelineConfig& c) { return list_str(c.fcn.strides); },
              [](PipelineConfig& c, std::string_view v) { c.fcn.strides = to_list(v); }},
        MCNN_INT_FIELD("fcn.convs_per_stage", fcn.convs_per_stage),
        MCNN_INT_FIELD("fcn.context_convs", fcn.context_convs),
        MCNN_INT_FIELD("fcn.epochs", fcn_train.epochs),
        MCNN_INT_FIELD("fcn.batch_size", fcn_train.batch_size),
        Field{"fcn.flip", [](const PipelineConfig& c) { return std::string(c.fcn_train.flip ? "true" : "false"); },
              [](PipelineConfig& c, std::string_view v) { c.fcn_train.flip = to_bool(v); }},
        MCNN_REAL_FIELD("fcn.lr", fcn_train.sgd.learning_rate),
        MCNN_REAL_FIELD("fcn.momentum", fcn_train.sgd.momentum),
        MCNN_REAL_FIELD("fcn.weight_decay", fcn_train.sgd.weight_decay),
        Field{"mcnn.variant", [](const PipelineConfig& c) { return std::string(model::variant_name(c.mcnn.variant)); },
              [](PipelineConfig& c, std::string_view v) { c.mcnn.variant = model::parse_variant(v); }},
        MCNN_INT_FIELD("mcnn.whole_size", mcnn.streams.whole_size),
        MCNN_INT_FIELD("mcnn.part_size", mcnn.streams.part_size),
        Field{"mcnn.layers", [](const PipelineConfig& c) { return list_str(c.mcnn.streams.backbone.layers); },
              [](PipelineConfig& c, std::string_view v) { c.mcnn.streams.backbone.layers = to_list(v); }},
        MCNN_INT_FIELD("mcnn.fc_width", mcnn.fc_width),
    };
    add_train_fields(f, "finetune", &PipelineConfig::finetune);
    add_train_fields(f, "joint", &PipelineConfig::joint);
    f.push_back(Field{"extract.layers",
                      [](const PipelineConfig& c) {
                        return std::string(c.layers == model::LayerMode::Final ? "final" : "both");
                      },
                      [](PipelineConfig& c, std::string_view v) { c.layers = model::parse_layer_mode(v); }});
    f.push_back(MCNN_REAL_FIELD("lr.c", lr.c));
    f.push_back(MCNN_INT_FIELD("lr.max_iterations", lr.max_iterations));
    f.push_back(MCNN_REAL_FIELD("lr.tolerance", lr.tolerance));
    f.push_back(MCNN_INT_FIELD("lr.history", lr.history));
    f.push_back(MCNN_INT_FIELD("whiten.k", whiten_k));
    return f;
  }();
  return table;
}

#undef MCNN_INT_FIELD
#undef MCNN_REAL_FIELD

void require(const fs::path& dir, const fs::path& artifact, Phase producer) {
  if (!fs::exists(dir / artifact)) throw DependencyError(producer, dir / artifact);
}

std::string pct(double v) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(2) << v;
  return s.str();
}

struct SplitData {
  std::vector<std::size_t> idx;
  std::vector<const Image*> images;
  std::vector<int> labels;
};

SplitData split_of(const LoadedData& data, dataio::Split split) {
  SplitData s;
  s.idx = data.indices(split);
  s.images = data.images_of(s.idx);
  s.labels = data.labels_of(s.idx);
  if (s.idx.empty()) throw std::runtime_error(std::string("dataset has no ") + std::string(dataio::split_name(split)) + " images");
  return s;
}

training::PreparedSet prepared(const fs::path& dir, const SplitData& s, const model::StreamConfig& streams) {
  for (std::size_t i : s.idx) {
    require(dir, mask_path(artifacts::kMaskDir, i, false), Phase::GenMasks);
    require(dir, mask_path(artifacts::kMaskDir, i, true), Phase::GenMasks);
  }
  return training::prepare_set(s.images, read_masks(dir / artifacts::kMaskDir, s.idx), s.labels, streams);
}

LoadedData data_for(const PipelineConfig& c, const fs::path& dir) {
  require(dir, artifacts::kManifest, Phase::GenData);
  return load_data(dir / artifacts::kManifest, c.fcn.input_size);
}

model::McnnConfig mcnn_for(const PipelineConfig& c, const LoadedData& data) {
  model::McnnConfig m = c.mcnn;
  m.classes = static_cast<int>(data.manifest.classes.size());
  return m;
}

double accuracy(const std::vector<int>& pred, const std::vector<int>& labels) {
  return metrics::classification_accuracy(pred, labels);
}

void phase_gen_data(const PipelineConfig& c, const fs::path& dir) {
  synth::generate_synthetic_dataset(c.data, dir / fs::path(artifacts::kManifest).parent_path());
}

void phase_train_fcn(const PipelineConfig& c, const fs::path& dir) {
  const LoadedData data = data_for(c, dir);
  std::vector<segnet::SegSample> train;
  for (std::size_t i : data.indices(dataio::Split::Train)) {
    train.push_back({data.images[i], maskgen::build_label_map(data.keypoints[i], c.fcn.input_size, c.fcn.input_size)});
  }
  if (train.empty()) throw std::runtime_error("dataset has no train images");
  segnet::Fcn<float> fcn(c.fcn);
  const segnet::FcnTrainResult r = segnet::train_fcn(fcn, train, c.fcn_train);
  segnet::save_fcn(dir / artifacts::kFcn, fcn);
  Report rep;
  rep.add("train_images", static_cast<long long>(train.size()));
  rep.add("parameters", static_cast<long long>(segnet::fcn_parameter_count(c.fcn)));
  rep.add("steps", static_cast<long long>(r.steps));
  rep.add("final_epoch_loss", r.epoch_losses.empty() ? 0.0 : r.epoch_losses.back(), 6);
  rep.write(dir / "fcn_report.txt");
}

void phase_gen_masks(const PipelineConfig& c, const fs::path& dir) {
  const LoadedData data = data_for(c, dir);
  require(dir, artifacts::kFcn, Phase::TrainFcn);
  segnet::Fcn<float> fcn = segnet::load_fcn(dir / artifacts::kFcn);
  write_masks(fcn, data, dir / artifacts::kMaskDir);
}

void phase_finetune(const PipelineConfig& c, const fs::path& dir) {
  const LoadedData data = data_for(c, dir);
  const SplitData train = split_of(data, dataio::Split::Train);
  const training::PreparedSet set = prepared(dir, train, c.mcnn.streams);
  Report rep;
  const model::Mcnn<float> net = finetune_all(mcnn_for(c, data), set, c.finetune, &rep);
  model::save_mcnn(dir / artifacts::kFinetuned, net);
  rep.write(dir / "finetune_report.txt");
}

void phase_joint_train(const PipelineConfig& c, const fs::path& dir) {
  const LoadedData data = data_for(c, dir);
  require(dir, artifacts::kFinetuned, Phase::Finetune);
  const SplitData train = split_of(data, dataio::Split::Train);
  const training::PreparedSet set = prepared(dir, train, c.mcnn.streams);
  model::Mcnn<float> net = model::load_mcnn(dir / artifacts::kFinetuned);
  const training::TrainReport r = training::joint_train(net, set, c.joint);
  model::save_mcnn(dir / artifacts::kMcnn, net);
  Report rep;
  rep.add("samples_per_epoch", static_cast<long long>(r.samples_per_epoch));
  rep.add("steps", static_cast<long long>(r.steps));
  rep.add("final_epoch_loss", r.epoch_losses.back(), 6);
  rep.add("final_epoch_train_accuracy", 100.0 * r.final_epoch_accuracy, 2);
  rep.write(dir / "joint_report.txt");
}

void phase_extract(const PipelineConfig& c, const fs::path& dir) {
  const LoadedData data = data_for(c, dir);
  require(dir, artifacts::kMcnn, Phase::JointTrain);
  model::Mcnn<float> net = model::load_mcnn(dir / artifacts::kMcnn);
  for (const auto split : {dataio::Split::Train, dataio::Split::Test}) {
    const SplitData s = split_of(data, split);
    const training::PreparedSet set = prepared(dir, s, net.config().streams);
    dataio::write_features(dir / (split == dataio::Split::Train ? artifacts::kTrainFeatures : artifacts::kTestFeatures),
                           training::extract_features(net, set, c.layers));
  }
}

Report lr_report(const classify::LrModel& m) {
  Report rep;
  int converged = 0, iterations = 0;
  double worst = 0.0;
  for (const auto& t : m.traces) {
    converged += t.converged;
    iterations = std::max(iterations, t.iterations);
    worst = std::max(worst, t.final_gradient_norm);
  }
  rep.add("classes", static_cast<long long>(m.classes()));
  rep.add("dim", static_cast<long long>(m.dim()));
  rep.add("converged_classes", static_cast<long long>(converged));
  rep.add("max_iterations_used", static_cast<long long>(iterations));
  rep.add("max_final_gradient_norm", worst, 8);
  return rep;
}

void phase_train_lr(const PipelineConfig& c, const fs::path& dir) {
  require(dir, artifacts::kTrainFeatures, Phase::Extract);
  const dataio::FeatureSet train = dataio::read_features(dir / artifacts::kTrainFeatures);
  const int classes = *std::max_element(train.labels.begin(), train.labels.end()) + 1;
  const classify::LrModel m = classify::train_lr_ova(train, classes, c.lr);
  classify::save_lr(dir / artifacts::kLr, m);
  lr_report(m).write(dir / "lr_report.txt");
}

void phase_whiten(const PipelineConfig& c, const fs::path& dir) {
  require(dir, artifacts::kTrainFeatures, Phase::Extract);
  require(dir, artifacts::kTestFeatures, Phase::Extract);
  const dataio::FeatureSet train = dataio::read_features(dir / artifacts::kTrainFeatures);
  const dataio::FeatureSet test = dataio::read_features(dir / artifacts::kTestFeatures);
  int k = c.whiten_k > 0 ? c.whiten_k : train.dim / 2;
  k = std::min<int>(k, static_cast<int>(std::min<std::size_t>(train.count(), static_cast<std::size_t>(train.dim))));
  const classify::WhiteningModel w = classify::fit_svd_whitening(train, k);
  classify::save_whitening(dir / artifacts::kWhitening, w);
  const dataio::FeatureSet wtrain = classify::apply_whitening(w, train);
  dataio::write_features(dir / artifacts::kTrainWhite, wtrain);
  dataio::write_features(dir / artifacts::kTestWhite, classify::apply_whitening(w, test));
  const int classes = *std::max_element(train.labels.begin(), train.labels.end()) + 1;
  const classify::LrModel m = classify::train_lr_ova(wtrain, classes, c.lr);
  classify::save_lr(dir / artifacts::kLrWhite, m);
  Report rep = lr_report(m);
  rep.add("k", static_cast<long long>(k));
  rep.write(dir / "whiten_report.txt");
}

void phase_evaluate(const PipelineConfig& c, const fs::path& dir) {
  const LoadedData data = data_for(c, dir);
  require(dir, artifacts::kMcnn, Phase::JointTrain);
  require(dir, artifacts::kTestFeatures, Phase::Extract);
  require(dir, artifacts::kLr, Phase::TrainLr);
  const SplitData test = split_of(data, dataio::Split::Test);
  Report rep;
  rep.add("classes", static_cast<long long>(data.manifest.classes.size()));
  rep.add("test_images", static_cast<long long>(test.idx.size()));

  model::Mcnn<float> net = model::load_mcnn(dir / artifacts::kMcnn);
  rep.add("variant", std::string(model::variant_name(net.config().variant)));
  const training::PreparedSet set = prepared(dir, test, net.config().streams);
  rep.add("accuracy.softmax", pct(accuracy(training::predict(net, set), test.labels)));

  const dataio::FeatureSet features = dataio::read_features(dir / artifacts::kTestFeatures);
  rep.add("feature_dim", static_cast<long long>(features.dim));
  rep.add("accuracy.lr", pct(accuracy(classify::predict_lr(classify::load_lr(dir / artifacts::kLr), features).labels,
                                      features.labels)));
  if (fs::exists(dir / artifacts::kLrWhite) && fs::exists(dir / artifacts::kTestWhite)) {
    const dataio::FeatureSet white = dataio::read_features(dir / artifacts::kTestWhite);
    rep.add("whitened_dim", static_cast<long long>(white.dim));
    rep.add("accuracy.lr_whitened",
            pct(accuracy(classify::predict_lr(classify::load_lr(dir / artifacts::kLrWhite), white).labels, white.labels)));
  }

  std::vector<maskgen::LabelMap> predicted;
  const auto both = read_masks(dir / artifacts::kMaskDir, test.idx);
  for (std::size_t i = 0; i < both.size(); i += 2) predicted.push_back(both[i]);
  const auto truth = data.truth_of(test.idx);
  for (const Report& part : {evaluate_segmentation(predicted, truth), evaluate_parts(predicted, truth)})
    for (const auto& [k, v] : part.entries()) rep.add(k, v);
  rep.write(dir / artifacts::kReport);
}

}  // namespace

std::string_view phase_name(Phase p) { return kPhaseNames[static_cast<int>(p)]; }

Phase parse_phase(std::string_view name) {
  for (int i = 0; i < kNumPhases; ++i)
    if (name == kPhaseNames[i]) return kPhaseOrder[i];
  throw ConfigError("unknown phase '" + std::string(name) + "'");
}

DependencyError::DependencyError(Phase producer, const fs::path& artifact)
    : std::runtime_error("missing artifact '" + artifact.string() + "' (run phase '" + std::string(phase_name(producer)) +
                         "' first)"),
      producer_(producer) {}

PipelineConfig::PipelineConfig() {
  finetune = training::TrainConfig{4, 16, {0.02, 0.9, 5e-4, 0}};
}

void PipelineConfig::validate() const {
  const PipelineConfig r = resolved();
  try {
    r.data.validate();
    r.fcn.validate();
    if (r.fcn_train.epochs <= 0 || r.fcn_train.batch_size <= 0) throw std::invalid_argument("fcn epochs and batch size must be positive");
    r.fcn_train.sgd.validate();
    r.mcnn.validate();
    for (const auto* t : {&r.finetune, &r.joint}) {
      if (t->epochs < 0 || t->batch_size <= 0) throw std::invalid_argument("epochs must be >= 0 and batch size positive");
      t->sgd.validate();
    }
    if (r.joint.epochs == 0) throw std::invalid_argument("joint.epochs must be positive");
    r.lr.validate();
    if (whiten_k < 0) throw std::invalid_argument("whiten.k must be >= 0");
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("invalid config: ") + e.what());
  }
}

PipelineConfig PipelineConfig::resolved() const {
  PipelineConfig r = *this;
  r.data.seed = phase_seed(seed, Phase::GenData);
  r.fcn.input_size = data.image_size;
  r.fcn.seed = phase_seed(seed, Phase::TrainFcn);
  r.fcn_train.sgd.seed = derive_seed(r.fcn.seed, 1);
  r.mcnn.classes = data.classes;
  r.mcnn.seed = phase_seed(seed, Phase::Finetune);
  r.finetune.sgd.seed = derive_seed(r.mcnn.seed, 1);
  r.joint.sgd.seed = phase_seed(seed, Phase::JointTrain);
  return r;
}

std::uint64_t phase_seed(std::uint64_t seed, Phase p) { return derive_seed(seed, 100 + static_cast<int>(p)); }

std::string format_config(const PipelineConfig& config) {
  std::string out;
  for (const Field& f : fields()) out += f.key + " = " + f.get(config) + "\n";
  return out;
}

void set_config_value(PipelineConfig& config, std::string_view key, std::string_view value) {
  for (const Field& f : fields()) {
    if (key == f.key) {
      try {
        f.set(config, trim(value));
      } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string(key) + ": " + e.what());
      } catch (const ConfigError& e) {
        throw ConfigError(std::string(key) + ": " + e.what());
      }
      return;
    }
  }
  throw ConfigError("unknown config key '" + std::string(key) + "'");
}

std::vector<std::string> config_keys() {
  std::vector<std::string> out;
  for (const Field& f : fields()) out.push_back(f.key);
  return out;
}

PipelineConfig parse_config(std::string_view text, const std::string& source) {
  PipelineConfig c;
  std::istringstream in{std::string(text)};
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    ++n;
    const auto hash = line.find('#');
    const std::string body = trim(hash == std::string::npos ? line : line.substr(0, hash));
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) throw ConfigError(source + ":" + std::to_string(n) + ": expected key = value");
    try {
      set_config_value(c, trim(body.substr(0, eq)), trim(body.substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError(source + ":" + std::to_string(n) + ": " + e.what());
    }
  }
  return c;
}

PipelineConfig load_config(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config '" + path.string() + "'");
  std::ostringstream s;
  s << in.rdbuf();
  return parse_config(s.str(), path.string());
}

void Report::add(std::string key, std::string value) { entries_.emplace_back(std::move(key), std::move(value)); }

void Report::add(std::string key, double value, int precision) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(precision) << value;
  add(std::move(key), s.str());
}

void Report::add(std::string key, long long value) { add(std::move(key), std::to_string(value)); }

std::string Report::format() const {
  std::string out;
  for (const auto& [k, v] : entries_) out += k + "=" + v + "\n";
  return out;
}

void Report::write(const fs::path& path) const {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  out << format();
  if (!out) throw std::runtime_error("cannot write report '" + path.string() + "'");
}

fs::path mask_path(const fs::path& dir, std::size_t record, bool mirrored) {
  char name[32];
  std::snprintf(name, sizeof name, "%06zu%s.pgm", record, mirrored ? "_mirror" : "");
  return dir / name;
}

std::vector<std::size_t> LoadedData::indices(dataio::Split split) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < manifest.records.size(); ++i)
    if (manifest.records[i].split == split) out.push_back(i);
  return out;
}

std::vector<const Image*> LoadedData::images_of(const std::vector<std::size_t>& idx) const {
  std::vector<const Image*> out;
  for (std::size_t i : idx) out.push_back(&images[i]);
  return out;
}

std::vector<int> LoadedData::labels_of(const std::vector<std::size_t>& idx) const {
  std::vector<int> out;
  for (std::size_t i : idx) out.push_back(manifest.records[i].label);
  return out;
}

std::vector<maskgen::LabelMap> LoadedData::truth_of(const std::vector<std::size_t>& idx) const {
  std::vector<maskgen::LabelMap> out;
  for (std::size_t i : idx) out.push_back(maskgen::build_label_map(keypoints[i], images[i].width, images[i].height));
  return out;
}

LoadedData load_data(const fs::path& manifest, int size) {
  LoadedData d;
  d.manifest = dataio::load_manifest(manifest);
  for (const dataio::Record& r : d.manifest.records) {
    Image img = read_ppm(d.manifest.image_path(r));
    maskgen::KeypointSet kp = r.keypoints;
    if (img.width != size || img.height != size) {
      const double sx = double(size) / img.width, sy = double(size) / img.height;
      for (auto& p : kp.points) p.position = {p.position.x * sx, p.position.y * sy};
      img = resize(img, size, size);
    }
    d.images.push_back(std::move(img));
    d.keypoints.push_back(kp);
  }
  return d;
}

void write_masks(segnet::Fcn<float>& fcn, const LoadedData& data, const fs::path& dir) {
  fs::create_directories(dir);
  constexpr std::size_t kChunk = 64;
  for (std::size_t start = 0; start < data.images.size(); start += kChunk) {
    const std::size_t end = std::min(data.images.size(), start + kChunk);
    std::vector<Image> mirrors;
    mirrors.reserve(end - start);
    std::vector<const Image*> inputs;
    for (std::size_t i = start; i < end; ++i) {
      mirrors.push_back(flip_horizontal(data.images[i]));
      inputs.push_back(&data.images[i]);
      inputs.push_back(&mirrors.back());
    }
    const auto maps = segnet::predict_masks(fcn, inputs);
    for (std::size_t i = start; i < end; ++i) {
      maskgen::write_pgm(mask_path(dir, i, false), maps[2 * (i - start)]);
      maskgen::write_pgm(mask_path(dir, i, true), maps[2 * (i - start) + 1]);
    }
  }
}

std::vector<maskgen::LabelMap> read_masks(const fs::path& dir, const std::vector<std::size_t>& idx) {
  std::vector<maskgen::LabelMap> out;
  for (std::size_t i : idx) {
    out.push_back(maskgen::read_label_map_pgm(mask_path(dir, i, false)));
    out.push_back(maskgen::read_label_map_pgm(mask_path(dir, i, true)));
  }
  return out;
}

model::Mcnn<float> finetune_all(const model::McnnConfig& config, const training::PreparedSet& data,
                                const training::TrainConfig& train, Report* report) {
  model::Mcnn<float> net(config);
  for (int s = 0; s < model::kNumStreams; ++s) {
    training::TrainConfig t = train;
    t.sgd.seed = derive_seed(train.sgd.seed, static_cast<std::uint64_t>(s));
    const model::StreamKind kind = model::kStreamOrder[s];
    if (t.epochs == 0) continue;
    const training::TrainReport r = training::finetune_stream(net, kind, data, t);
    if (report) {
      const std::string p = "finetune." + std::string(model::stream_name(kind));
      report->add(p + ".samples_per_epoch", static_cast<long long>(r.samples_per_epoch));
      report->add(p + ".final_epoch_loss", r.epoch_losses.back(), 6);
      report->add(p + ".final_epoch_train_accuracy", 100.0 * r.final_epoch_accuracy, 2);
    }
  }
  return net;
}

Report evaluate_segmentation(const std::vector<maskgen::LabelMap>& predicted,
                             const std::vector<maskgen::LabelMap>& truth) {
  const metrics::SegReport three = metrics::mean_iu(predicted, truth, metrics::SegMode::ThreeClass);
  const metrics::SegReport fg = metrics::mean_iu(predicted, truth, metrics::SegMode::Foreground);
  Report rep;
  rep.add("seg.mean_iu", three.mean_iu);
  rep.add("seg.iu.background", three.iu[0]);
  rep.add("seg.iu.head", three.iu[1]);
  rep.add("seg.iu.torso", three.iu[2]);
  rep.add("seg.mean_iu_foreground", fg.mean_iu);
  rep.add("seg.pixel_accuracy", three.pixel_accuracy);
  return rep;
}

Report evaluate_parts(const std::vector<maskgen::LabelMap>& predicted, const std::vector<maskgen::LabelMap>& truth) {
  if (predicted.size() != truth.size()) throw std::invalid_argument("evaluate_parts: prediction and truth counts differ");
  std::vector<metrics::PartBoxes> p, t;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    p.push_back(metrics::part_boxes(predicted[i]));
    t.push_back(metrics::part_boxes(truth[i]));
  }
  const metrics::PcpReport r = metrics::pcp(p, t);
  Report rep;
  rep.add("pcp.head", r.head.percentage(), 2);
  rep.add("pcp.head.correct", static_cast<long long>(r.head.correct));
  rep.add("pcp.head.total", static_cast<long long>(r.head.total));
  rep.add("pcp.torso", r.torso.percentage(), 2);
  rep.add("pcp.torso.correct", static_cast<long long>(r.torso.correct));
  rep.add("pcp.torso.total", static_cast<long long>(r.torso.total));
  return rep;
}

void run_phase(const PipelineConfig& config, const fs::path& dir, Phase phase) {
  const PipelineConfig c = config.resolved();
  fs::create_directories(dir);
  switch (phase) {
    case Phase::GenData: return phase_gen_data(c, dir);
    case Phase::TrainFcn: return phase_train_fcn(c, dir);
    case Phase::GenMasks: return phase_gen_masks(c, dir);
    case Phase::Finetune: return phase_finetune(c, dir);
    case Phase::JointTrain: return phase_joint_train(c, dir);
    case Phase::Extract: return phase_extract(c, dir);
    case Phase::TrainLr: return phase_train_lr(c, dir);
    case Phase::Whiten: return phase_whiten(c, dir);
    case Phase::Evaluate: return phase_evaluate(c, dir);
  }
}

void run_pipeline(const PipelineConfig& config, const fs::path& dir, std::vector<Phase> phases) {
  config.validate();
  fs::create_directories(dir);
  {
    std::ofstream out(dir / artifacts::kConfig, std::ios::binary);
    out << format_config(config);
    if (!out) throw std::runtime_error("cannot write '" + (dir / artifacts::kConfig).string() + "'");
  }
  std::sort(phases.begin(), phases.end());
  phases.erase(std::unique(phases.begin(), phases.end()), phases.end());
  for (Phase p : phases) run_phase(config, dir, p);
}

}  // namespace mcnn::pipeline
