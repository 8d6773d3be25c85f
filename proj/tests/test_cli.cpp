// Copyright 2026 The cnx Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <gtest/gtest.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "support.hpp"

namespace cnx {
namespace {

namespace fs = std::filesystem;

struct CliRun {
  int code = -1;
  std::string out;
};

CliRun cli(const std::string& args) {
  const std::string cmd = std::string(CNX_CLI_PATH) + " " + args + " 2>/dev/null";
  FILE* p = ::popen(cmd.c_str(), "r");
  CliRun r;
  if (!p) return r;
  char buf[4096];
  for (std::size_t n; (n = std::fread(buf, 1, sizeof buf, p)) > 0;) r.out.append(buf, n);
  const int status = ::pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::set<std::string> keys(const Json& j) {
  std::set<std::string> k;
  for (const auto& [key, _] : j.items()) k.insert(key);
  return k;
}

Json json_of(const CliRun& r) {
  EXPECT_EQ(r.code, 0) << r.out;
  return Json::parse(r.out);
}

class Workspace : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = fs::temp_directory_path() / ("cnx_cli_" + std::to_string(::getpid()));
    fs::create_directories(dir_);
    ModelSpec s = convnext("tiny", {1, 1, 1, 1}, 8, 0.0);
    s.head.num_classes = 3;
    spec_ = s;
    std::ofstream(path("tiny.json")) << spec_to_json(s).dump();
    const ModelWeights w = init_weights(s, 3);
    save(to_store(w), path("tiny.cnxw"));
    Rng rng(2);
    Fixture f;
    f.input = testing::random32(rng, {1, 32, 32, 3});
    forward(w, f.input, Mode::eval(), &f.probes);
    save_fixture(f, path("tiny.fixture"));
    Fixture off = f;
    for (auto& v : off.probes.begin()->second.data()) v += 1.0f;
    save_fixture(off, path("off.fixture"));

    std::vector<std::uint8_t> rgb(32 * 32 * 3);
    for (std::size_t i = 0; i < rgb.size(); ++i) rgb[i] = static_cast<std::uint8_t>(i * 37 % 256);
    std::ofstream(path("img.ppm"), std::ios::binary) << encode_ppm(rgb, 32, 32);
    std::ofstream(path("labels.txt")) << "cat\ndog\nfox\n";
    std::ofstream(path("toy.json")) << R"({"epochs": 2, "batch_size": 8, "dataset": {"samples": 16}})";
  }
  static void TearDownTestSuite() { fs::remove_all(dir_); }
  static std::string path(const std::string& name) { return (dir_ / name).string(); }

  static fs::path dir_;
  static ModelSpec spec_;
};
fs::path Workspace::dir_;
ModelSpec Workspace::spec_;

TEST(Cli, SummarySchema) {
  const Json j = json_of(cli("summary --model convnext-t --json"));
  EXPECT_EQ(keys(j), (std::set<std::string>{"model", "resolution", "convention", "stages", "total_params", "total_macs"}));
  EXPECT_EQ(j["total_params"], 28589128);
  EXPECT_EQ(j["convention"], kMacConvention);
  ASSERT_EQ(j["stages"].size(), 6u);
  EXPECT_EQ(keys(j["stages"][0]), (std::set<std::string>{"stage", "output", "blocks", "params", "macs"}));
  std::int64_t sum = 0;
  for (const auto& r : j["stages"]) sum += r["params"].get<std::int64_t>();
  EXPECT_EQ(sum, 28589128);
}

TEST(Cli, SummaryLayersSchema) {
  const Json j = json_of(cli("summary --model resnet-50 --layers --resolution 160 --json"));
  EXPECT_EQ(keys(j), (std::set<std::string>{"model", "resolution", "convention", "layers", "total_params",
                                             "total_non_trainable", "total_macs"}));
  EXPECT_EQ(j["resolution"], 160);
  EXPECT_EQ(keys(j["layers"][0]), (std::set<std::string>{"layer", "kind", "params", "macs"}));
}

TEST(Cli, FlopsSchema) {
  const Json j = json_of(cli("flops --model convnext-t --json"));
  EXPECT_EQ(keys(j), (std::set<std::string>{"model", "resolution", "convention", "params", "non_trainable", "macs",
                                             "gmacs"}));
  EXPECT_EQ(j["macs"].get<std::int64_t>(), count_macs(build_variant("convnext-t"), 224));
}

TEST(Cli, RoadmapSchema) {
  const Json j = json_of(cli("roadmap --regime rn50 --json"));
  EXPECT_EQ(keys(j), (std::set<std::string>{"regime", "resolution", "convention", "rows"}));
  ASSERT_EQ(j["rows"].size(), roadmap(Regime::kRn50).size());
  EXPECT_EQ(keys(j["rows"][0]),
            (std::set<std::string>{"step", "model", "macs", "gflops", "reported_gflops", "reported_accuracy"}));
  EXPECT_EQ(cli("roadmap --regime rn101").code, 2);
}

TEST(Cli, GradcheckSchemaAndFault) {
  const Json j = json_of(cli("gradcheck --op linear --instances 2 --json"));
  EXPECT_EQ(keys(j), (std::set<std::string>{"tol", "cases", "failed", "pass"}));
  EXPECT_EQ(j["cases"].size(), 2u);
  EXPECT_EQ(keys(j["cases"][0]), (std::set<std::string>{"op", "instance", "max_rel_error", "pass"}));
  EXPECT_TRUE(j["pass"].get<bool>());
  const CliRun bad = cli("gradcheck --op gelu --inject-fault gelu-grad --json");
  EXPECT_EQ(bad.code, 1);
  EXPECT_FALSE(Json::parse(bad.out)["pass"].get<bool>());
}

TEST(Cli, ExitCodes) {
  EXPECT_EQ(cli("").code, 2);
  EXPECT_EQ(cli("summary").code, 2);
  EXPECT_EQ(cli("summary --model no-such-net").code, 2);
  EXPECT_EQ(cli("summary --model convnext-t --bogus").code, 2);
  EXPECT_EQ(cli("gradcheck --op softmax").code, 2);
  EXPECT_EQ(cli("summary --model /nonexistent/spec.json").code, 1);
  EXPECT_EQ(cli("--help").code, 0);
}

TEST_F(Workspace, SpecFileModel) {
  const Json j = json_of(cli("flops --model " + path("tiny.json") + " --resolution 32 --json"));
  EXPECT_EQ(j["params"].get<std::int64_t>(), count_params(spec_));
}

TEST_F(Workspace, InferSchema) {
  const Json j = json_of(cli("infer --model " + path("tiny.json") + " --weights " + path("tiny.cnxw") + " --image " +
                             path("img.ppm") + " --labels " + path("labels.txt") + " --top 2 --json"));
  EXPECT_EQ(keys(j), (std::set<std::string>{"model", "top"}));
  ASSERT_EQ(j["top"].size(), 1u);
  ASSERT_EQ(j["top"][0].size(), 2u);
  const Json& r = j["top"][0][0];
  EXPECT_EQ(keys(r), (std::set<std::string>{"rank", "class", "probability", "logit", "label"}));
  EXPECT_GE(r["probability"].get<double>(), j["top"][0][1]["probability"].get<double>());

  // Same ranking as an in-process forward pass.
  const ModelWeights w = bind(load(path("tiny.cnxw")), spec_);
  const Tensor x = load_image(path("img.ppm"), Normalization{});
  const Tensor logits = forward(w, x);
  std::size_t best = 0;
  for (std::size_t i = 1; i < 3; ++i)
    if (logits[i] > logits[best]) best = i;
  EXPECT_EQ(r["class"].get<std::size_t>(), best);
  EXPECT_EQ(r["label"], (std::vector<std::string>{"cat", "dog", "fox"}[best]));
}

TEST_F(Workspace, ParitySchema) {
  const std::string base = "parity --model " + path("tiny.json") + " --weights " + path("tiny.cnxw") + " --fixture ";
  const Json j = json_of(cli(base + path("tiny.fixture") + " --json"));
  EXPECT_EQ(keys(j), (std::set<std::string>{"model", "tol", "probes", "pass"}));
  EXPECT_TRUE(j["pass"].get<bool>());
  EXPECT_EQ(keys(j["probes"][0]), (std::set<std::string>{"probe", "max_abs_diff", "pass"}));
  EXPECT_EQ(cli(base + path("off.fixture")).code, 1);
}

TEST_F(Workspace, TrainToyEmitsOneRecordPerEpoch) {
  const CliRun r = cli("train-toy --config " + path("toy.json"));
  ASSERT_EQ(r.code, 0);
  std::istringstream in(r.out);
  int n = 0;
  for (std::string line; std::getline(in, line); ++n)
    EXPECT_EQ(keys(Json::parse(line)), (std::set<std::string>{"epoch", "loss", "accuracy", "lr"}));
  EXPECT_EQ(n, 2);
}

}  // namespace
}  // namespace cnx
