// Copyright 2026 The flowattack Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "flowattack/commands.hpp"

namespace {

using flowattack::RunConfig;

// Flag storage: every flag maps onto one config key and only overrides the
// file when given.
struct Overrides {
  std::map<std::string, std::string> values;
  std::vector<std::string> sets;  // raw "section.key=value" from --set

  void add(CLI::App* app, const std::string& flag, const std::string& key,
           const std::string& help) {
    app->add_option_function<std::string>(
        flag, [this, key](const std::string& v) { values[key] = v; }, help);
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Adversarial perturbations for differentiable optical flow"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path;
  Overrides ov;
  bool deterministic = false;
  app.add_option("--config", config_path, "configuration file ([section] key = value)");
  ov.add(&app, "--out", "output.dir", "output directory");
  ov.add(&app, "--seed", "run.seed", "seed for synthetic data and shuffling");
  ov.add(&app, "--jobs", "run.jobs", "worker threads");
  app.add_flag("--deterministic", deterministic,
               "zero runtimes so repeated runs give identical reports");
  app.add_option("--set", ov.sets, "override any config key: section.key=value");

  auto data_flags = [&](CLI::App* s) {
    ov.add(s, "--first", "data.first", "first frame (PNG or P6 PPM)");
    ov.add(s, "--second", "data.second", "second frame");
    ov.add(s, "--gt", "data.ground_truth", "ground-truth flow (.flo or KITTI PNG)");
    ov.add(s, "--manifest", "data.manifest", "dataset manifest");
    ov.add(s, "--synthetic", "data.synthetic", "use N seeded synthetic pairs");
    ov.add(s, "--stem", "output.stem", "output file prefix");
  };
  auto attack_flags = [&](CLI::App* s) {
    ov.add(s, "--estimator", "estimator.name", "built-in estimator (hs, hs-pyramid)");
    ov.add(s, "--eps2", "attack.eps2", "L2 budget per pixel and channel");
    ov.add(s, "--mu", "attack.mu", "penalty weight (default: paired with eps2)");
    ov.add(s, "--loss", "attack.loss", "aee, mse or cs");
    ov.add(s, "--target", "attack.target", "zero, negative or custom");
    ov.add(s, "--target-flow", "attack.target_flow", "flow file for target = custom");
    ov.add(s, "--box", "attack.box", "clip or cov");
    ov.add(s, "--mode", "attack.mode", "disjoint or joint");
  };

  CLI::App* attack = app.add_subcommand("attack", "attack one frame pair");
  data_flags(attack);
  attack_flags(attack);
  ov.add(attack, "--method", "attack.method", "pcfa or ifgsm");
  ov.add(attack, "--steps", "attack.steps", "L-BFGS steps");
  ov.add(attack, "--eps-inf", "attack.eps_inf", "I-FGSM L-infinity budget");
  ov.add(attack, "--ifgsm-steps", "attack.ifgsm_steps", "I-FGSM iterations");

  CLI::App* universal = app.add_subcommand("universal", "train a universal perturbation");
  data_flags(universal);
  attack_flags(universal);
  ov.add(universal, "--epochs", "universal.epochs", "training epochs");
  ov.add(universal, "--batch-size", "universal.batch_size", "pairs per minibatch");
  ov.add(universal, "--steps-per-batch", "universal.steps_per_batch",
         "L-BFGS steps per minibatch");

  CLI::App* transfer = app.add_subcommand("transfer", "transferability matrix");
  data_flags(transfer);
  ov.add(transfer, "--estimators", "transfer.estimators", "comma-separated estimators");
  ov.add(transfer, "--perturbations", "transfer.perturbations",
         "comma-separated perturbation files");
  ov.add(transfer, "--sources", "transfer.sources",
         "comma-separated source labels, one per perturbation");

  CLI::App* viz = app.add_subcommand("viz", "render flow or perturbation files");
  ov.add(viz, "--flow", "viz.flow", "flow file (.flo or KITTI PNG)");
  ov.add(viz, "--perturbation", "viz.perturbation", "perturbation file (.ptb)");
  ov.add(viz, "--max", "viz.max", "fixed maximum flow magnitude");
  ov.add(viz, "--stem", "output.stem", "output file prefix");

  CLI::App* checkgrad = app.add_subcommand("checkgrad", "finite-difference gradient check");
  checkgrad->set_help_flag("--help", "print this help and exit");  // -h clashes with --h
  ov.add(checkgrad, "--h", "checkgrad.h", "finite difference step");
  ov.add(checkgrad, "--pairs", "checkgrad.pairs", "random pairs per configuration");
  ov.add(checkgrad, "--size", "checkgrad.size", "frame size");
  ov.add(checkgrad, "--samples", "checkgrad.samples", "coordinates per check");
  ov.add(checkgrad, "--tolerance", "checkgrad.tolerance", "max relative error");
  ov.add(checkgrad, "--estimators", "checkgrad.estimators", "comma-separated estimators");
  ov.add(checkgrad, "--losses", "checkgrad.losses", "comma-separated losses");
  ov.add(checkgrad, "--boxes", "checkgrad.boxes", "comma-separated box constraints");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return flowattack::kExitUsage;
  }

  const flowattack::CommandIo io{std::cout, std::cerr};
  RunConfig cfg;
  const int status = flowattack::guarded(io, [&] {
    if (!config_path.empty()) cfg.load(config_path);
    for (const auto& s : ov.sets) {
      const auto eq = s.find('=');
      if (eq == std::string::npos) {
        throw flowattack::ConfigError("--set expects section.key=value, got '" + s + "'");
      }
      cfg.set(s.substr(0, eq), s.substr(eq + 1));
    }
    for (const auto& [key, value] : ov.values) cfg.set(key, value);
    if (deterministic) cfg.set("run.deterministic", "true");
    return flowattack::kExitOk;
  });
  if (status != flowattack::kExitOk) return status;

  if (attack->parsed()) return flowattack::cmd_attack(cfg, io);
  if (universal->parsed()) return flowattack::cmd_universal(cfg, io);
  if (transfer->parsed()) return flowattack::cmd_transfer(cfg, io);
  if (viz->parsed()) return flowattack::cmd_viz(cfg, io);
  return flowattack::cmd_checkgrad(cfg, io);
}
