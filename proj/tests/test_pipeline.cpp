#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "mcnn/pipeline.hpp"

using namespace mcnn;
using namespace mcnn::pipeline;
using namespace mcnn::pipeline::artifacts;
namespace fs = std::filesystem;

namespace {

std::string read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

PipelineConfig tiny_config() {
  return parse_config(R"(
seed = 5
data.classes = 2
data.train_per_class = 3
data.test_per_class = 2
data.image_size = 32
fcn.channels = 4,6,8
fcn.epochs = 1
mcnn.whole_size = 32
mcnn.part_size = 16
mcnn.layers = 4,0,8,8,0
mcnn.fc_width = 8
finetune.epochs = 1
joint.epochs = 1
)");
}

}  // namespace

TEST_SUITE("pipeline") {
  TEST_CASE("config text round trips through format and parse") {
    PipelineConfig c = tiny_config();
    c.lr.c = 0.25;
    c.whiten_k = 3;
    const std::string text = format_config(c);
    CHECK(format_config(parse_config(text)) == text);
    CHECK(parse_config(text).lr.c == 0.25);
    for (const std::string& key : config_keys()) CHECK(text.find(key + " = ") != std::string::npos);
  }

  TEST_CASE("unknown keys and bad values are rejected with the line") {
    try {
      parse_config("seed = 1\n\nfcn.colour = red\n", "cfg");
      FAIL("expected a ConfigError");
    } catch (const ConfigError& e) {
      CHECK(std::string(e.what()).find("cfg:3") != std::string::npos);
    }
    CHECK_THROWS_AS(parse_config("seed = minus one\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("lr.c = 0\n").validate(), ConfigError);
    CHECK_THROWS_AS(parse_config("mcnn.variant = fancy\n"), ConfigError);
  }

  TEST_CASE("phase names round trip in the fixed order") {
    for (int i = 0; i < kNumPhases; ++i) CHECK(parse_phase(phase_name(kPhaseOrder[i])) == kPhaseOrder[i]);
    CHECK(phase_name(Phase::JointTrain) == "joint-train");
    CHECK_THROWS_AS(parse_phase("train-everything"), ConfigError);
  }

  TEST_CASE("joint-train without fine-tuned weights names the finetune phase") {
    const fs::path dir = fs::temp_directory_path() / "mcnn_test_pipeline_dep";
    fs::remove_all(dir);
    run_pipeline(tiny_config(), dir, {Phase::GenData, Phase::TrainFcn, Phase::GenMasks});
    try {
      run_pipeline(tiny_config(), dir, {Phase::JointTrain});
      FAIL("expected a DependencyError");
    } catch (const DependencyError& e) {
      CHECK(e.producer() == Phase::Finetune);
      CHECK(std::string(e.what()).find("finetune") != std::string::npos);
    }
    fs::remove_all(dir);
  }

  TEST_CASE("two tiny runs produce identical artifacts") {
    const fs::path a = fs::temp_directory_path() / "mcnn_test_pipeline_a";
    const fs::path b = fs::temp_directory_path() / "mcnn_test_pipeline_b";
    PipelineConfig c = tiny_config();
    c.whiten_k = 4;
    std::vector<Phase> all(std::begin(kPhaseOrder), std::end(kPhaseOrder));
    for (const auto& dir : {a, b}) {
      fs::remove_all(dir);
      run_pipeline(c, dir, all);
    }
    for (const char* name : {kConfig, kFcn, kFinetuned, kMcnn, kTrainFeatures, kTestFeatures, kLr, kWhitening,
                             kTrainWhite, kReport}) {
      INFO(name);
      REQUIRE(fs::exists(a / name));
      CHECK(read_bytes(a / name) == read_bytes(b / name));
    }
    CHECK(load_config(a / kConfig).seed == 5);
    CHECK(read_bytes(a / kReport).find("accuracy.lr=") != std::string::npos);
    fs::remove_all(a);
    fs::remove_all(b);
  }
}
