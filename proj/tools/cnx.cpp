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

#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "cnx.hpp"

namespace {

using cnx::Json;
using cnx::detail::printf_string;

// Published GFLOPs and top-1 accuracy per roadmap row, in step order.
struct Reported {
  double gflops;
  const char* accuracy;
};

constexpr std::array<Reported, 16> kReportedRn50 = {{{4.09, "78.82"}, {4.53, "79.36"}, {4.42, "79.51"},
                                                     {2.35, "78.28"}, {5.27, "80.50"}, {4.64, "80.64"},
                                                     {4.07, "79.92"}, {4.10, "80.35"}, {4.15, "80.57"},
                                                     {4.21, "80.57"}, {4.29, "80.47"}, {4.15, "80.62"},
                                                     {4.15, "81.27"}, {4.15, "81.41"}, {4.46, "81.47"},
                                                     {4.49, "81.97"}}};
constexpr std::array<Reported, 16> kReportedRn200 = {{{15.01, "81.14"}, {14.52, "81.33"}, {14.38, "81.59"},
                                                      {7.23, "80.54"},  {16.76, "81.85"}, {15.68, "82.64"},
                                                      {14.63, "82.04"}, {14.70, "82.32"}, {14.81, "82.30"},
                                                      {14.95, "82.27"}, {15.13, "82.18"}, {14.81, "82.19"},
                                                      {14.81, "82.71"}, {14.81, "83.17"}, {14.81, "83.35"},
                                                      {15.35, "83.60"}}};

struct Common {
  bool json = false;
};

void emit(const Json& j) { std::cout << j.dump() << "\n"; }

int cmd_summary(const std::string& model, std::int64_t res, bool layers, const Common& c) {
  const cnx::ModelSpec spec = cnx::resolve_model(model, 1000);
  if (layers) {
    const auto r = cnx::cost_report(spec, res);
    if (c.json) {
      Json rows = Json::array();
      for (const auto& row : r.rows)
        rows.push_back({{"layer", row.name}, {"kind", row.kind}, {"params", row.params}, {"macs", row.macs}});
      emit({{"model", r.model}, {"resolution", r.resolution}, {"convention", r.convention}, {"layers", rows},
            {"total_params", r.total_params}, {"total_non_trainable", r.total_non_trainable},
            {"total_macs", r.total_macs}});
    } else {
      std::cout << cnx::format_cost_report(r);
    }
    return 0;
  }
  const auto s = cnx::stage_summary(spec, res);
  if (c.json) {
    Json rows = Json::array();
    for (const auto& r : s.rows)
      rows.push_back({{"stage", r.name}, {"output", r.output}, {"blocks", r.layout}, {"params", r.params}, {"macs", r.macs}});
    emit({{"model", s.model}, {"resolution", s.resolution}, {"convention", cnx::kMacConvention}, {"stages", rows},
          {"total_params", s.total_params}, {"total_macs", s.total_macs}});
  } else {
    std::cout << cnx::format_stage_summary(s);
  }
  return 0;
}

int cmd_flops(const std::string& model, std::int64_t res, const Common& c) {
  const cnx::ModelSpec spec = cnx::resolve_model(model, 1000);
  const auto r = cnx::cost_report(spec, res);
  if (c.json) {
    emit({{"model", r.model}, {"resolution", r.resolution}, {"convention", r.convention}, {"params", r.total_params},
          {"non_trainable", r.total_non_trainable}, {"macs", r.total_macs},
          {"gmacs", static_cast<double>(r.total_macs) * 1e-9}});
  } else {
    std::cout << printf_string("%s @%lld: %.4f GMACs, %.4f M params (%s)\n", r.model.c_str(),
                               static_cast<long long>(r.resolution), static_cast<double>(r.total_macs) * 1e-9,
                               static_cast<double>(r.total_params) * 1e-6, r.convention.c_str());
  }
  return 0;
}

int cmd_roadmap(const std::string& regime_name, std::int64_t res, const Common& c) {
  const cnx::Regime regime = cnx::parse_regime(regime_name);
  const auto& reported = regime == cnx::Regime::kRn50 ? kReportedRn50 : kReportedRn200;
  const auto rows = cnx::roadmap_cost_table(regime, res);
  Json out = Json::array();
  if (!c.json) {
    std::cout << "# regime: " << regime_name << "\n# resolution: " << res << "\n# convention: " << cnx::kMacConvention
              << "\n# accuracy: reported values for context, not computed here\n";
    std::cout << printf_string("%-18s %10s %16s %26s\n", "step", "gflops", "reported gflops", "top-1 acc.");
    std::cout << std::string(18 + 10 + 16 + 26 + 3, '-') << "\n";
  }
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& r = rows[i];
    const std::string step(cnx::to_string(r.step.id));
    const std::string acc = std::string("n/a (reported: ") + reported[i].accuracy + ")";
    if (c.json)
      out.push_back({{"step", step}, {"model", r.model}, {"macs", r.macs}, {"gflops", r.gflops()},
                     {"reported_gflops", reported[i].gflops}, {"reported_accuracy", reported[i].accuracy}});
    else
      std::cout << printf_string("%-18s %10.3f %16.2f %26s\n", step.c_str(), r.gflops(), reported[i].gflops, acc.c_str());
  }
  if (c.json) emit({{"regime", regime_name}, {"resolution", res}, {"convention", cnx::kMacConvention}, {"rows", out}});
  return 0;
}

std::vector<std::string> read_labels(const std::string& path) {
  std::ifstream in(path);
  if (!in) cnx::fail(cnx::ErrorKind::kIo, "cannot open '" + path + "'");
  std::vector<std::string> labels;
  for (std::string line; std::getline(in, line);) labels.push_back(line);
  return labels;
}

int cmd_infer(const std::string& model, const std::string& weights_path, const std::string& image_path,
              const std::string& labels_path, std::int64_t top, const Common& c) {
  const cnx::WeightStore store = cnx::load(weights_path);
  std::int64_t classes = 1000;
  if (const auto* fc = store.find("head.fc.bias")) classes = fc->shape().c;
  const cnx::ModelSpec spec = cnx::resolve_model(model, classes);
  const cnx::ModelWeights weights = cnx::bind(store, spec);
  const cnx::Tensor x = cnx::load_image(image_path, cnx::normalization_from(store.metadata()));
  const std::vector<std::string> labels = labels_path.empty() ? std::vector<std::string>{} : read_labels(labels_path);
  const cnx::Tensor logits = cnx::forward(weights, x);
  const auto k = static_cast<std::size_t>(logits.c());
  Json images = Json::array();
  for (std::int64_t n = 0; n < logits.n(); ++n) {
    const float* z = logits.raw() + n * logits.c();
    const float mx = *std::max_element(z, z + k);
    std::vector<double> p(k);
    double sum = 0;
    for (std::size_t i = 0; i < k; ++i) sum += p[i] = std::exp(static_cast<double>(z[i] - mx));
    std::vector<std::size_t> idx(k);
    for (std::size_t i = 0; i < k; ++i) idx[i] = i;
    const std::size_t kk = std::min<std::size_t>(k, static_cast<std::size_t>(top));
    std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(kk), idx.end(),
                      [&](std::size_t a, std::size_t b) { return p[a] != p[b] ? p[a] > p[b] : a < b; });
    Json rows = Json::array();
    if (!c.json) std::cout << printf_string("# image %lld\n%-5s %-8s %-12s %s\n", static_cast<long long>(n), "rank", "class", "probability", "label");
    for (std::size_t r = 0; r < kk; ++r) {
      const std::size_t i = idx[r];
      const std::string label = i < labels.size() ? labels[i] : "";
      if (c.json)
        rows.push_back({{"rank", r + 1}, {"class", i}, {"probability", p[i] / sum}, {"logit", z[i]}, {"label", label}});
      else
        std::cout << printf_string("%-5zu %-8zu %-12.6f %s\n", r + 1, i, p[i] / sum, label.c_str());
    }
    images.push_back(rows);
  }
  if (c.json) emit({{"model", spec.name}, {"top", images}});
  return 0;
}

int cmd_gradcheck(const std::string& op, const std::string& block, std::size_t instances, std::uint64_t seed,
                  const std::string& fault_name, double tol, const Common& c) {
  const cnx::gradcheck::Fault fault = cnx::gradcheck::parse_fault(fault_name);
  std::vector<cnx::gradcheck::CaseResult> results;
  if (!block.empty()) {
    if (block != "micro") cnx::fail(cnx::ErrorKind::kUnknownName, "unknown block '" + block + "' (expected micro)");
    results.push_back(cnx::gradcheck::check_micro_block(seed, fault, tol));
  } else if (!op.empty()) {
    results = cnx::gradcheck::check_op(op, instances, seed, fault, tol);
  } else {
    for (auto name : cnx::gradcheck::kOpNames)
      for (auto& r : cnx::gradcheck::check_op(name, instances, seed, fault, tol)) results.push_back(std::move(r));
    results.push_back(cnx::gradcheck::check_micro_block(seed, fault, tol));
  }
  std::size_t failed = 0;
  Json rows = Json::array();
  for (const auto& r : results) {
    failed += !r.report.pass;
    if (c.json)
      rows.push_back({{"op", r.op}, {"instance", r.instance}, {"max_rel_error", r.report.max_rel_error},
                      {"pass", r.report.pass}});
    else
      std::cout << printf_string("%s %-16s %-36s max_rel_error=%.3e\n", r.report.pass ? "PASS" : "FAIL", r.op.c_str(),
                                 r.instance.c_str(), r.report.max_rel_error);
  }
  if (c.json)
    emit({{"tol", tol}, {"cases", rows}, {"failed", failed}, {"pass", failed == 0}});
  else
    std::cout << printf_string("%zu/%zu cases passed at tol %.1e\n", results.size() - failed, results.size(), tol);
  return failed == 0 ? 0 : 1;
}

int cmd_parity(const std::string& model, const std::string& weights_path, const std::string& fixture_path, double tol,
               const Common& c) {
  const cnx::WeightStore store = cnx::load(weights_path);
  std::int64_t classes = 1000;
  if (const auto* fc = store.find("head.fc.bias")) classes = fc->shape().c;
  const cnx::ModelSpec spec = cnx::resolve_model(model, classes);
  const cnx::ModelWeights weights = cnx::bind(store, spec);
  const cnx::Fixture fixture = cnx::load_fixture(fixture_path);
  cnx::validate_fixture(fixture, spec);
  cnx::TensorMap<float> probes;
  cnx::forward(weights, fixture.input, cnx::Mode::eval(), &probes);
  bool ok = true;
  Json rows = Json::array();
  for (const auto& [name, expected] : fixture.probes) {
    const auto& got = probes.at(name);
    double md = 0;
    for (std::size_t i = 0; i < got.size(); ++i) md = std::max(md, std::abs(static_cast<double>(got[i] - expected[i])));
    const bool pass = md <= tol;
    ok = ok && pass;
    if (c.json)
      rows.push_back({{"probe", name}, {"max_abs_diff", md}, {"pass", pass}});
    else
      std::cout << printf_string("%s %-12s max_abs_diff=%.3e\n", pass ? "PASS" : "FAIL", name.c_str(), md);
  }
  if (c.json) emit({{"model", spec.name}, {"tol", tol}, {"probes", rows}, {"pass", ok}});
  return ok ? 0 : 1;
}

int cmd_train(const std::string& config_path) {
  const cnx::ToyRun run = cnx::toy_run_from_json(cnx::parse_json_file(config_path));
  const auto result = cnx::train_toy(run.spec, run.data, run.config, [](const cnx::EpochMetrics& m) {
    std::cout << cnx::to_json(m).dump() << std::endl;
  });
  std::cerr << printf_string("final train accuracy %.4f after %zu epochs\n", result.history.back().accuracy,
                             result.history.size());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"cnx: ConvNeXt-family inference, cost accounting and toy training"};
  app.require_subcommand(1);
  app.fallthrough();
  Common common;
  int threads = 0;
  app.add_option("--threads", threads, "Kernel worker threads (default: CNX_NUM_THREADS or 1)")->check(CLI::PositiveNumber);
  app.add_flag("--json", common.json, "Machine-readable output");

  std::string model, regime = "rn50", weights, image, labels, op, block, fault = "none", config, fixture;
  std::int64_t res = 224, top = 5;
  std::size_t instances = 3;
  std::uint64_t seed = 7;
  double tol = 1e-5, parity_tol = 1e-3;
  bool layers = false;

  auto* summary = app.add_subcommand("summary", "Per-stage architecture table with params and MACs");
  summary->add_option("--model", model, "Variant name or spec .json file")->required();
  summary->add_option("--resolution", res, "Square input resolution")->check(CLI::PositiveNumber);
  summary->add_flag("--layers", layers, "One row per parameterized layer");

  auto* flops = app.add_subcommand("flops", "Total params and MACs");
  flops->add_option("--model", model, "Variant name or spec .json file")->required();
  flops->add_option("--resolution", res, "Square input resolution")->check(CLI::PositiveNumber);

  auto* rm = app.add_subcommand("roadmap", "Cost of every modernization step");
  rm->add_option("--regime", regime, "rn50 or rn200")->check(CLI::IsMember({"rn50", "rn200"}));
  rm->add_option("--resolution", res, "Square input resolution")->check(CLI::PositiveNumber);

  auto* infer = app.add_subcommand("infer", "Top-k classes for an image");
  infer->add_option("--model", model, "Variant name or spec .json file")->required();
  infer->add_option("--weights", weights, "Weight container")->required();
  infer->add_option("--image", image, "PPM (P6) image or container with fixture.input")->required();
  infer->add_option("--labels", labels, "Class names, one per line");
  infer->add_option("--top", top, "Number of classes to list")->check(CLI::PositiveNumber);

  auto* gc = app.add_subcommand("gradcheck", "Finite-difference gradient checks");
  auto* op_opt = gc->add_option("--op", op, "Single op to check")->check(CLI::IsMember(std::vector<std::string>(
      cnx::gradcheck::kOpNames.begin(), cnx::gradcheck::kOpNames.end())));
  gc->add_option("--block", block, "Block to check end to end (micro)")->check(CLI::IsMember({"micro"}))->excludes(op_opt);
  gc->add_option("--instances", instances, "Random instances per op")->check(CLI::PositiveNumber);
  gc->add_option("--seed", seed, "Instance seed");
  gc->add_option("--tol", tol, "Relative error tolerance")->check(CLI::PositiveNumber);
  gc->add_option("--inject-fault", fault, "Corrupt a backward rule (none, gelu-grad)")
      ->check(CLI::IsMember({"none", "gelu-grad"}));

  auto* parity = app.add_subcommand("parity", "Compare forward probes against a fixture");
  parity->add_option("--model", model, "Variant name or spec .json file")->required();
  parity->add_option("--weights", weights, "Weight container")->required();
  parity->add_option("--fixture", fixture, "Fixture container")->required();
  parity->add_option("--tol", parity_tol, "Max abs difference")->check(CLI::PositiveNumber);

  auto* train = app.add_subcommand("train-toy", "Toy training, one JSON record per epoch");
  train->add_option("--config", config, "JSON config file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (threads > 0) cnx::set_num_threads(threads);
    if (summary->parsed()) return cmd_summary(model, res, layers, common);
    if (flops->parsed()) return cmd_flops(model, res, common);
    if (rm->parsed()) return cmd_roadmap(regime, res, common);
    if (infer->parsed()) return cmd_infer(model, weights, image, labels, top, common);
    if (gc->parsed()) return cmd_gradcheck(op, block, instances, seed, fault, tol, common);
    if (parity->parsed()) return cmd_parity(model, weights, fixture, parity_tol, common);
    if (train->parsed()) return cmd_train(config);
  } catch (const cnx::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.kind() == cnx::ErrorKind::kUnknownName ? 2 : 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
