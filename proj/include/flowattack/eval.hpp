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

// Evaluation metrics, run reports and transfer matrices. Quality (against
// ground truth) and robustness are always kept as separate numbers.

#ifndef FLOWATTACK_EVAL_HPP_
#define FLOWATTACK_EVAL_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "flowattack/attack.hpp"
#include "flowattack/core.hpp"
#include "flowattack/universal.hpp"

namespace flowattack {

// AEE(adversarial, target) with the exact norm. Smaller is stronger.
inline double attack_strength(const FlowField& adversarial,
                              const FlowField& target) {
  return loss_aee(adversarial, target, nullptr);
}

// AEE(adversarial, unattacked). Smaller is more robust.
inline double adversarial_robustness(const FlowField& adversarial,
                                     const FlowField& initial) {
  return loss_aee(adversarial, initial, nullptr);
}

// AEE over pixels flagged valid (all pixels when `valid` is null).
inline double masked_aee(const FlowField& a, const FlowField& b,
                         const std::vector<std::uint8_t>* valid = nullptr) {
  require_same_grid(a, b, "masked_aee");
  if (valid && valid->size() != a.pixels()) {
    throw StructuralError("validity mask does not match the flow grid");
  }
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < a.pixels(); ++i) {
    if (valid && !(*valid)[i]) continue;
    sum += std::hypot(a.u_plane()[i] - b.u_plane()[i],
                      a.v_plane()[i] - b.v_plane()[i]);
    ++n;
  }
  if (n == 0) throw NumericError("masked_aee: no valid pixels");
  return sum / static_cast<double>(n);
}

// eps2 of a full-frame perturbation matching a patch of P pixels changing
// each of them by b on average: sqrt(P / I) * b.
inline double patch_equivalent_epsilon(double patch_pixels, double image_pixels,
                                       double mean_change) {
  if (!(image_pixels > 0.0)) throw ConfigError("image pixel count must be > 0");
  if (!(patch_pixels > 0.0)) throw ConfigError("patch pixel count must be > 0");
  if (patch_pixels > image_pixels) {
    throw ConfigError("patch cannot be larger than the image");
  }
  if (!(mean_change >= 0.0)) throw ConfigError("mean change must be >= 0");
  return std::sqrt(patch_pixels / image_pixels) * mean_change;
}

// ---------------------------------------------------------------------------
// Reports.

struct AttackReport {
  std::string estimator;
  double eps2 = 0.0;
  double mu = 0.0;
  std::string loss;
  std::string target;
  std::string box;
  std::string mode;
  double strength = 0.0;
  double robustness = 0.0;
  double l2 = 0.0;
  double linf = 0.0;
  int steps = 0;
  std::uint64_t seed = 0;
  double runtime_ms = 0.0;
  std::optional<double> quality;    // AEE(unattacked, ground truth)
  std::optional<double> objective;  // final optimizer value

  friend bool operator==(const AttackReport&, const AttackReport&) = default;
};

inline nlohmann::ordered_json to_json(const AttackReport& r) {
  nlohmann::ordered_json j;
  j["estimator"] = r.estimator;
  j["eps2"] = r.eps2;
  j["mu"] = r.mu;
  j["loss"] = r.loss;
  j["target"] = r.target;
  j["box"] = r.box;
  j["mode"] = r.mode;
  j["strength"] = r.strength;
  j["robustness"] = r.robustness;
  j["l2"] = r.l2;
  j["linf"] = r.linf;
  j["steps"] = r.steps;
  j["seed"] = r.seed;
  j["runtime_ms"] = r.runtime_ms;
  if (r.quality) j["quality"] = *r.quality;
  if (r.objective) j["objective"] = *r.objective;
  return j;
}

inline std::string serialize(const AttackReport& r) { return to_json(r).dump(); }

inline AttackReport parse_report(const std::string& line) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(std::string("report line is not JSON: ") + e.what());
  }
  AttackReport r;
  try {
    r.estimator = j.at("estimator").get<std::string>();
    r.eps2 = j.at("eps2").get<double>();
    r.mu = j.at("mu").get<double>();
    r.loss = j.at("loss").get<std::string>();
    r.target = j.at("target").get<std::string>();
    r.box = j.at("box").get<std::string>();
    r.mode = j.at("mode").get<std::string>();
    r.strength = j.at("strength").get<double>();
    r.robustness = j.at("robustness").get<double>();
    r.l2 = j.at("l2").get<double>();
    r.linf = j.at("linf").get<double>();
    r.steps = j.at("steps").get<int>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.runtime_ms = j.at("runtime_ms").get<double>();
    if (j.contains("quality")) r.quality = j["quality"].get<double>();
    if (j.contains("objective")) r.objective = j["objective"].get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("incomplete report: ") + e.what());
  }
  return r;
}

inline AttackReport make_report(const std::string& estimator,
                                const PcfaConfig& cfg, const AttackResult& res,
                                double runtime_ms) {
  AttackReport r;
  r.estimator = estimator;
  r.eps2 = cfg.epsilon2;
  r.mu = res.mu;
  r.loss = to_string(cfg.loss);
  r.target = to_string(cfg.target);
  r.box = to_string(cfg.box);
  r.mode = to_string(cfg.mode);
  r.strength = attack_strength(res.adversarial_flow, res.target_flow);
  r.robustness = adversarial_robustness(res.adversarial_flow, res.initial_flow);
  r.l2 = res.l2_norm;
  r.linf = res.linf_norm;
  r.steps = static_cast<int>(res.trace.steps.size());
  r.seed = cfg.seed;
  r.runtime_ms = runtime_ms;
  r.objective = res.trace.final_value();
  return r;
}

// ---------------------------------------------------------------------------
// Transfer matrices.

struct NamedPerturbation {
  std::string source;  // label of the estimator it was trained on
  Perturbation perturbation;
};

// values[i][j]: mean robustness of estimator i under perturbation j. An entry
// whose perturbation grid does not match the data is left empty.
struct TransferMatrix {
  std::vector<std::string> estimators;
  std::vector<std::string> sources;
  std::vector<std::vector<std::optional<double>>> values;
};

inline TransferMatrix transfer_matrix(
    const std::vector<const FlowEstimator*>& estimators,
    const std::vector<NamedPerturbation>& perturbations,
    const std::vector<FramePair>& data, int jobs = 1) {
  if (estimators.empty()) throw ConfigError("transfer matrix needs an estimator");
  if (perturbations.empty()) {
    throw ConfigError("transfer matrix needs a perturbation");
  }
  if (data.empty()) throw ConfigError("transfer matrix needs data");
  TransferMatrix m;
  for (const auto* e : estimators) m.estimators.push_back(e->label());
  for (const auto& p : perturbations) m.sources.push_back(p.source);
  const std::size_t ne = estimators.size(), np = perturbations.size();
  m.values.assign(ne, std::vector<std::optional<double>>(np));

  // Unattacked predictions are shared by every column of a row.
  std::vector<std::vector<FlowField>> initial(ne, std::vector<FlowField>(data.size()));
  parallel_for(ne * data.size(), jobs, [&](std::size_t k) {
    const std::size_t i = k / data.size(), d = k % data.size();
    initial[i][d] = estimators[i]->estimate_flow(data[d].first, data[d].second);
  });
  parallel_for(ne * np, jobs, [&](std::size_t k) {
    const std::size_t i = k / np, j = k % np;
    const Perturbation& p = perturbations[j].perturbation;
    if (p.shape() != data.front().first.shape()) return;
    double sum = 0.0;
    for (std::size_t d = 0; d < data.size(); ++d) {
      const FramePair adv = apply_universal(p, data[d].first, data[d].second);
      sum += adversarial_robustness(
          estimators[i]->estimate_flow(adv.first, adv.second), initial[i][d]);
    }
    m.values[i][j] = sum / static_cast<double>(data.size());
  });
  return m;
}

// ---------------------------------------------------------------------------
// Gradient checks of the whole attack pipeline.

// Initial flow turned by 90 degrees: a cosine target that is neither aligned
// nor opposed (both are stationary points of the cosine).
inline FlowField quarter_turn(const FlowField& f) {
  FlowField out(f.height(), f.width());
  for (std::size_t i = 0; i < f.pixels(); ++i) {
    out.u_plane()[i] = -f.v_plane()[i];
    out.v_plane()[i] = f.u_plane()[i];
  }
  return out;
}

// Zero target for AEE/MSE; CS uses quarter_turn since a zero target has a
// vanishing gradient.
inline FlowField gradient_check_target(LossKind loss, const FlowField& initial) {
  return loss == LossKind::kCs ? quarter_turn(initial)
                               : FlowField(initial.height(), initial.width());
}

// Worst of two checks on one pair: the estimator's input gradient under
// `loss` (finite_diff_check) and the full objective gradient w.r.t. the
// optimization variables of `box` at a random interior point.
inline double gradient_check_case(const FlowEstimator& e, LossKind loss,
                                  BoxConstraint box, const Image& first,
                                  const Image& second, double h,
                                  std::uint64_t seed, int samples = 64) {
  const FlowField target =
      gradient_check_target(loss, e.estimate_flow(first, second));
  GradientCheckOptions opts;
  opts.samples = samples;
  opts.seed = seed;
  const double frames_err = finite_diff_check(
      e, first.field(), second.field(), make_flow_loss(loss, target), h, opts);

  const double eps2 = 5e-3;
  const double bound = scale_bound(eps2, first.shape().pixels(), first.channels());
  AttackObjective obj(e, {{first, second, target}}, loss, box,
                      PerturbationMode::kDisjoint, bound,
                      default_mu(loss, Target::Kind::kCustom, eps2));
  std::vector<double> x = obj.initial_point();
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  // Small enough to stay inside the budget and away from the clip bounds.
  const double spread = box == BoxConstraint::kClipping ? 2e-3 : 1e-2;
  for (double& v : x) v += spread * unit(rng);
  return std::max(frames_err, objective_gradient_check(obj, x, h, opts));
}

}  // namespace flowattack

#endif  // FLOWATTACK_EVAL_HPP_
