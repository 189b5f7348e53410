// mcnn: command-line front end. Each subcommand wraps one stage; `run`
// drives the whole pipeline from a config document.

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "mcnn/classify.hpp"
#include "mcnn/dataio.hpp"
#include "mcnn/metrics.hpp"
#include "mcnn/pipeline.hpp"
#include "mcnn/rng.hpp"
#include "mcnn/segnet.hpp"
#include "mcnn/synth.hpp"
#include "mcnn/training.hpp"

namespace fs = std::filesystem;
using namespace mcnn;

namespace {

struct DataOpts {
  std::string manifest;
  int size = 96;  // used when the manifest's images vary in size
};

void add_data_opts(CLI::App* cmd, DataOpts& d) {
  cmd->add_option("--manifest", d.manifest, "Dataset manifest")->required()->check(CLI::ExistingFile);
  cmd->add_option("--size", d.size, "Working image size when the manifest has none");
}

pipeline::LoadedData load(const DataOpts& d) {
  const dataio::DatasetManifest m = dataio::load_manifest(d.manifest);
  return pipeline::load_data(d.manifest, m.image_size > 0 ? m.image_size : d.size);
}

dataio::Split parse_split(const std::string& s) {
  if (s == "train") return dataio::Split::Train;
  if (s == "test") return dataio::Split::Test;
  throw CLI::ValidationError("--split", "expected train or test");
}

training::PreparedSet prepare(segnet::Fcn<float>& fcn, const pipeline::LoadedData& data, dataio::Split split,
                              const model::StreamConfig& streams) {
  const auto idx = data.indices(split);
  if (idx.empty()) throw std::runtime_error(std::string("manifest has no ") + std::string(dataio::split_name(split)) + " images");
  return training::prepare_set(fcn, data.images_of(idx), data.labels_of(idx), streams);
}

void emit(const pipeline::Report& r, const std::string& path) {
  std::cout << r.format();
  if (!path.empty()) r.write(path);
}

std::vector<maskgen::LabelMap> predicted_maps(const std::string& dir, const std::vector<std::size_t>& idx) {
  std::vector<maskgen::LabelMap> out;
  for (std::size_t i : idx) out.push_back(maskgen::read_label_map_pgm(pipeline::mask_path(dir, i)));
  return out;
}

std::string quoted(std::string s) {
  for (char& c : s)
    if (c == '\n' || c == '"') c = '\'';
  return '"' + s + '"';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Mask-CNN desk-scale pipeline"};
  app.option_defaults()->always_capture_default();
  app.require_subcommand(1);

  // gen-data
  synth::SynthConfig synth_cfg;
  std::string gen_out;
  auto* gen = app.add_subcommand("gen-data", "Render the synthetic bird dataset and its manifest");
  gen->add_option("--classes", synth_cfg.classes, "Number of classes");
  gen->add_option("--per-class", synth_cfg.train_per_class, "Training images per class");
  gen->add_option("--test-per-class", synth_cfg.test_per_class, "Test images per class");
  gen->add_option("--size", synth_cfg.image_size, "Image side in pixels");
  gen->add_option("--clutter", synth_cfg.clutter, "Expected distractor shapes per image");
  gen->add_option("--near-fraction", synth_cfg.near_fraction, "Share of distractors placed around the bird");
  gen->add_option("--noise", synth_cfg.noise, "Per-channel Gaussian pixel noise (std dev)");
  gen->add_option("--seed", synth_cfg.seed, "Random seed");
  gen->add_option("--out", gen_out, "Output directory")->required();

  // train-fcn
  DataOpts fcn_data;
  segnet::FcnConfig fcn_cfg;
  segnet::FcnTrainConfig fcn_train;
  std::uint64_t fcn_seed = 1;
  std::string fcn_out;
  auto* tf = app.add_subcommand("train-fcn", "Train the part segmenter on keypoint-derived label maps");
  add_data_opts(tf, fcn_data);
  tf->add_option("--out", fcn_out, "Output checkpoint")->required();
  tf->add_option("--epochs", fcn_train.epochs, "Training epochs");
  tf->add_option("--lr", fcn_train.sgd.learning_rate, "Learning rate");
  tf->add_option("--batch-size", fcn_train.batch_size, "Batch size");
  tf->add_option("--channels", fcn_cfg.channels, "Encoder stage widths");
  tf->add_option("--seed", fcn_seed, "Random seed");

  // predict-masks
  DataOpts pm_data;
  std::string pm_ckpt, pm_dir;
  auto* pm = app.add_subcommand("predict-masks", "Write predicted label maps (PGM, one per manifest record)");
  add_data_opts(pm, pm_data);
  pm->add_option("--ckpt", pm_ckpt, "Segmenter checkpoint")->required()->check(CLI::ExistingFile);
  pm->add_option("--out-dir", pm_dir, "Output directory")->required();

  // train-mcnn
  DataOpts tm_data;
  std::string tm_fcn, tm_out, tm_variant = "mcnn";
  model::McnnConfig tm_cfg;
  training::TrainConfig tm_ft = pipeline::PipelineConfig{}.finetune, tm_joint = pipeline::PipelineConfig{}.joint;
  std::uint64_t tm_seed = 1;
  auto* tm = app.add_subcommand("train-mcnn", "Fine-tune each stream, then train the four streams jointly");
  add_data_opts(tm, tm_data);
  tm->add_option("--fcn", tm_fcn, "Segmenter checkpoint")->required()->check(CLI::ExistingFile);
  tm->add_option("--out", tm_out, "Output checkpoint")->required();
  tm->add_option("--variant", tm_variant, "mcnn | pooling | fcs")->check(CLI::IsMember({"mcnn", "pooling", "fcs"}));
  tm->add_option("--whole-size", tm_cfg.streams.whole_size, "Whole-image stream input side");
  tm->add_option("--part-size", tm_cfg.streams.part_size, "Part stream input side");
  tm->add_option("--layers", tm_cfg.streams.backbone.layers, "Backbone: channels per conv, 0 = 2x2 max pool");
  tm->add_option("--fc-width", tm_cfg.fc_width, "fcs variant fc width (0 = 8C)");
  tm->add_option("--finetune-epochs", tm_ft.epochs, "Per-stream fine-tuning epochs");
  tm->add_option("--finetune-lr", tm_ft.sgd.learning_rate, "Per-stream fine-tuning learning rate");
  tm->add_option("--joint-epochs", tm_joint.epochs, "Joint training epochs");
  tm->add_option("--joint-lr", tm_joint.sgd.learning_rate, "Joint training learning rate");
  tm->add_option("--batch-size", tm_joint.batch_size, "Batch size for both stages");
  tm->add_option("--seed", tm_seed, "Random seed");

  // extract
  DataOpts ex_data;
  std::string ex_ckpt, ex_fcn, ex_out, ex_layers = "final", ex_split = "train";
  auto* ex = app.add_subcommand("extract", "Write flip-averaged features (MCFT file)");
  add_data_opts(ex, ex_data);
  ex->add_option("--ckpt", ex_ckpt, "Mask-CNN checkpoint")->required()->check(CLI::ExistingFile);
  ex->add_option("--fcn", ex_fcn, "Segmenter checkpoint")->required()->check(CLI::ExistingFile);
  ex->add_option("--layers", ex_layers, "final | both")->check(CLI::IsMember({"final", "both"}));
  ex->add_option("--split", ex_split, "train | test")->check(CLI::IsMember({"train", "test"}));
  ex->add_option("--out", ex_out, "Output feature file")->required();

  // train-lr
  std::string lr_features, lr_out;
  classify::LrConfig lr_cfg;
  auto* tl = app.add_subcommand("train-lr", "One-vs-all logistic regression");
  tl->add_option("--features", lr_features, "Training features")->required()->check(CLI::ExistingFile);
  tl->add_option("--out", lr_out, "Output model")->required();
  tl->add_option("--c", lr_cfg.c, "Inverse regularisation strength");
  tl->add_option("--max-iter", lr_cfg.max_iterations, "Iteration cap per class");
  tl->add_option("--tol", lr_cfg.tolerance, "Gradient-norm tolerance");

  // whiten
  std::string wh_features, wh_out, wh_model_out, wh_model;
  int wh_k = 0;
  auto* wh = app.add_subcommand("whiten", "Fit SVD whitening (or apply a fitted one with --model)");
  wh->add_option("--features", wh_features, "Input features")->required()->check(CLI::ExistingFile);
  wh->add_option("--k", wh_k, "Output dimension (0 = half the input)");
  wh->add_option("--out", wh_out, "Whitened feature file")->required();
  wh->add_option("--model-out", wh_model_out, "Where to save the fitted model");
  wh->add_option("--model", wh_model, "Apply this fitted model instead of fitting")->check(CLI::ExistingFile);

  // evaluate
  std::string ev_features, ev_model;
  auto* ev = app.add_subcommand("evaluate", "Accuracy of a logistic-regression model");
  ev->add_option("--features", ev_features, "Test features")->required()->check(CLI::ExistingFile);
  ev->add_option("--model", ev_model, "Model from train-lr")->required()->check(CLI::ExistingFile);

  // evaluate-parts / evaluate-seg
  DataOpts ep_data, es_data;
  std::string ep_masks, ep_report, ep_split = "test", es_masks, es_report, es_split = "test";
  auto* ep = app.add_subcommand("evaluate-parts", "PCP of predicted head and torso boxes");
  add_data_opts(ep, ep_data);
  ep->add_option("--masks-dir", ep_masks, "Directory from predict-masks")->required()->check(CLI::ExistingDirectory);
  ep->add_option("--split", ep_split, "train | test")->check(CLI::IsMember({"train", "test"}));
  ep->add_option("--report", ep_report, "Also write the report to this file");
  auto* es = app.add_subcommand("evaluate-seg", "Mean IU and pixel accuracy of predicted label maps");
  add_data_opts(es, es_data);
  es->add_option("--masks-dir", es_masks, "Directory from predict-masks")->required()->check(CLI::ExistingDirectory);
  es->add_option("--split", es_split, "train | test")->check(CLI::IsMember({"train", "test"}));
  es->add_option("--report", es_report, "Also write the report to this file");

  // run
  std::string run_config, run_dir, run_phases = "all";
  std::vector<std::string> run_sets;
  std::uint64_t run_seed = pipeline::PipelineConfig{}.seed;
  bool run_print = false;
  auto* run = app.add_subcommand("run", "Run pipeline phases in a work directory");
  run->add_option("--config", run_config, "Config file (key = value)")->check(CLI::ExistingFile);
  run->add_option("--out", run_dir, "Work directory");
  run->add_option("--phases", run_phases,
                  "Comma-separated subset of gen-data,train-fcn,gen-masks,finetune,joint-train,extract,train-lr,whiten,"
                  "evaluate, or all");
  run->add_option("--seed", run_seed, "Global seed (overrides the config file)");
  run->add_option("--set", run_sets, "Override a config key: key=value (repeatable)");
  run->add_flag("--print-config", run_print, "Print the effective config and exit");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) {
      const auto m = synth::generate_synthetic_dataset(synth_cfg, gen_out);
      std::cout << "images=" << m.records.size() << "\nmanifest=" << (fs::path(gen_out) / "manifest.txt").string() << "\n";
    } else if (tf->parsed()) {
      const auto data = load(fcn_data);
      fcn_cfg.input_size = data.images.at(0).width;
      fcn_cfg.seed = fcn_seed;
      fcn_train.sgd.seed = derive_seed(fcn_seed, 1);
      std::vector<segnet::SegSample> train;
      for (std::size_t i : data.indices(dataio::Split::Train)) {
        train.push_back({data.images[i], maskgen::build_label_map(data.keypoints[i], fcn_cfg.input_size, fcn_cfg.input_size)});
      }
      segnet::Fcn<float> fcn(fcn_cfg);
      const auto r = segnet::train_fcn(fcn, train, fcn_train);
      segnet::save_fcn(fcn_out, fcn);
      std::cout << "steps=" << r.steps << "\nfinal_epoch_loss=" << r.epoch_losses.back() << "\n";
    } else if (pm->parsed()) {
      const auto data = load(pm_data);
      segnet::Fcn<float> fcn = segnet::load_fcn(pm_ckpt);
      fs::create_directories(pm_dir);
      std::vector<const Image*> all;
      for (const auto& img : data.images) all.push_back(&img);
      const auto maps = segnet::predict_masks(fcn, all);
      for (std::size_t i = 0; i < maps.size(); ++i) maskgen::write_pgm(pipeline::mask_path(pm_dir, i), maps[i]);
      std::cout << "masks=" << maps.size() << "\n";
    } else if (tm->parsed()) {
      const auto data = load(tm_data);
      segnet::Fcn<float> fcn = segnet::load_fcn(tm_fcn);
      tm_cfg.variant = model::parse_variant(tm_variant);
      tm_cfg.classes = static_cast<int>(data.manifest.classes.size());
      tm_cfg.seed = tm_seed;
      tm_ft.batch_size = tm_joint.batch_size;
      tm_ft.sgd.seed = derive_seed(tm_seed, 1);
      tm_joint.sgd.seed = derive_seed(tm_seed, 2);
      const auto set = prepare(fcn, data, dataio::Split::Train, tm_cfg.streams);
      pipeline::Report rep;
      model::Mcnn<float> net = pipeline::finetune_all(tm_cfg, set, tm_ft, &rep);
      const auto r = training::joint_train(net, set, tm_joint);
      model::save_mcnn(tm_out, net);
      rep.add("joint.samples_per_epoch", static_cast<long long>(r.samples_per_epoch));
      rep.add("joint.final_epoch_loss", r.epoch_losses.back(), 6);
      rep.add("joint.final_epoch_train_accuracy", 100.0 * r.final_epoch_accuracy, 2);
      std::cout << rep.format();
    } else if (ex->parsed()) {
      const auto data = load(ex_data);
      segnet::Fcn<float> fcn = segnet::load_fcn(ex_fcn);
      model::Mcnn<float> net = model::load_mcnn(ex_ckpt);
      const auto set = prepare(fcn, data, parse_split(ex_split), net.config().streams);
      const auto f = training::extract_features(net, set, model::parse_layer_mode(ex_layers));
      dataio::write_features(ex_out, f);
      std::cout << "count=" << f.count() << "\ndim=" << f.dim << "\n";
    } else if (tl->parsed()) {
      const auto f = dataio::read_features(lr_features);
      if (f.count() == 0) throw std::runtime_error("feature file is empty");
      const int classes = *std::max_element(f.labels.begin(), f.labels.end()) + 1;
      const auto m = classify::train_lr_ova(f, classes, lr_cfg);
      classify::save_lr(lr_out, m);
      int converged = 0;
      for (const auto& t : m.traces) converged += t.converged;
      std::cout << "classes=" << classes << "\ndim=" << f.dim << "\nconverged_classes=" << converged << "\n";
    } else if (wh->parsed()) {
      const auto f = dataio::read_features(wh_features);
      classify::WhiteningModel w;
      if (!wh_model.empty()) {
        w = classify::load_whitening(wh_model);
      } else {
        const int k = wh_k > 0 ? wh_k : f.dim / 2;
        w = classify::fit_svd_whitening(f, k);
      }
      if (!wh_model_out.empty()) classify::save_whitening(wh_model_out, w);
      dataio::write_features(wh_out, classify::apply_whitening(w, f));
      std::cout << "input_dim=" << w.input_dim() << "\noutput_dim=" << w.output_dim() << "\n";
    } else if (ev->parsed()) {
      const auto f = dataio::read_features(ev_features);
      const auto p = classify::predict_lr(classify::load_lr(ev_model), f);
      char buf[32];
      std::snprintf(buf, sizeof buf, "%.2f", metrics::classification_accuracy(p.labels, f.labels));
      std::cout << "accuracy=" << buf << "\n";
    } else if (ep->parsed() || es->parsed()) {
      const bool parts = ep->parsed();
      const auto data = load(parts ? ep_data : es_data);
      const auto idx = data.indices(parse_split(parts ? ep_split : es_split));
      const auto predicted = predicted_maps(parts ? ep_masks : es_masks, idx);
      const auto truth = data.truth_of(idx);
      emit(parts ? pipeline::evaluate_parts(predicted, truth) : pipeline::evaluate_segmentation(predicted, truth),
           parts ? ep_report : es_report);
    } else if (run->parsed()) {
      pipeline::PipelineConfig cfg = run_config.empty() ? pipeline::PipelineConfig{} : pipeline::load_config(run_config);
      if (run->count("--seed") > 0) cfg.seed = run_seed;
      for (const auto& s : run_sets) {
        const auto eq = s.find('=');
        if (eq == std::string::npos) throw pipeline::ConfigError("--set expects key=value, got '" + s + "'");
        pipeline::set_config_value(cfg, s.substr(0, eq), s.substr(eq + 1));
      }
      if (run_print) {
        std::cout << pipeline::format_config(cfg);
        return 0;
      }
      if (run_dir.empty()) throw pipeline::ConfigError("run: --out is required");
      std::vector<pipeline::Phase> phases;
      if (run_phases == "all") {
        phases.assign(std::begin(pipeline::kPhaseOrder), std::end(pipeline::kPhaseOrder));
      } else {
        std::size_t start = 0;
        while (start <= run_phases.size()) {
          const auto comma = std::min(run_phases.find(',', start), run_phases.size());
          phases.push_back(pipeline::parse_phase(run_phases.substr(start, comma - start)));
          start = comma + 1;
        }
      }
      pipeline::run_pipeline(cfg, run_dir, phases);
      const fs::path report = fs::path(run_dir) / pipeline::artifacts::kReport;
      if (fs::exists(report) && std::find(phases.begin(), phases.end(), pipeline::Phase::Evaluate) != phases.end()) {
        std::ifstream in(report);
        std::cout << in.rdbuf();
      }
    }
  } catch (const pipeline::DependencyError& e) {
    std::cerr << "error=missing-dependency phase=" << pipeline::phase_name(e.producer()) << " message=" << quoted(e.what())
              << "\n";
    return 3;
  } catch (const pipeline::ConfigError& e) {
    std::cerr << "error=config message=" << quoted(e.what()) << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error=runtime message=" << quoted(e.what()) << "\n";
    return 1;
  }
  return 0;
}
