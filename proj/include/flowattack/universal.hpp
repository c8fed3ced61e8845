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

// Universal perturbations: one perturbation refined with L-BFGS steps on
// minibatches of frame pairs.

#ifndef FLOWATTACK_UNIVERSAL_HPP_
#define FLOWATTACK_UNIVERSAL_HPP_

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "flowattack/attack.hpp"
#include "flowattack/core.hpp"
#include "flowattack/io.hpp"

namespace flowattack {

// ---------------------------------------------------------------------------
// Datasets.

struct DatasetEntry {
  fs::path first;
  fs::path second;
  std::optional<fs::path> ground_truth;
};

struct DatasetManifest {
  std::vector<DatasetEntry> entries;
  // Declared grid; 0 means "take it from the first readable pair".
  int height = 0;
  int width = 0;
};

// One pair per line: two image paths and an optional ground-truth flow path,
// whitespace separated. Blank lines and '#' comments are ignored; relative
// paths resolve against `base`.
inline DatasetManifest parse_manifest(const std::string& text,
                                      const fs::path& base = {}) {
  DatasetManifest m;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  auto resolve = [&](const std::string& p) {
    fs::path path(p);
    return path.is_absolute() || base.empty() ? path : base / path;
  };
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::istringstream fields(line);
    std::vector<std::string> tok;
    for (std::string t; fields >> t;) tok.push_back(t);
    if (tok.empty()) continue;
    if (tok.size() < 2 || tok.size() > 3) {
      throw FormatError("manifest line " + std::to_string(lineno) +
                        ": expected 2 or 3 paths, got " +
                        std::to_string(tok.size()));
    }
    DatasetEntry e{resolve(tok[0]), resolve(tok[1]), std::nullopt};
    if (tok.size() == 3) e.ground_truth = resolve(tok[2]);
    m.entries.push_back(std::move(e));
  }
  return m;
}

inline DatasetManifest read_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_manifest(ss.str(), path.parent_path());
}

struct LoadedPair {
  std::string name;
  FramePair frames;
  std::optional<KittiFlow> ground_truth;
};

struct LoadedDataset {
  std::vector<LoadedPair> pairs;
  std::vector<std::string> skipped;  // diagnostics of unreadable entries
};

using WarningSink = std::function<void(const std::string&)>;

// Unreadable pairs are skipped with a warning; a readable pair whose size
// differs from the declared (or first) grid is an error.
inline LoadedDataset load_dataset(const DatasetManifest& m,
                                  const WarningSink& warn = {}) {
  if (m.entries.empty()) throw ConfigError("dataset manifest is empty");
  LoadedDataset out;
  int h = m.height, w = m.width;
  for (const DatasetEntry& e : m.entries) {
    LoadedPair p;
    p.name = e.first.filename().string();
    try {
      p.frames.first = read_image(e.first);
      p.frames.second = read_image(e.second);
      if (e.ground_truth) p.ground_truth = read_flow_any(*e.ground_truth);
    } catch (const Error& err) {
      out.skipped.push_back(err.what());
      if (warn) warn("skipping pair " + e.first.string() + ": " + err.what());
      continue;
    }
    if (p.frames.first.shape() != p.frames.second.shape()) {
      throw StructuralError("frames of " + e.first.string() + " differ in size");
    }
    if (h == 0) {
      h = p.frames.first.height();
      w = p.frames.first.width();
    }
    if (p.frames.first.height() != h || p.frames.first.width() != w) {
      throw StructuralError(e.first.string() + " is " +
                            to_string(p.frames.first.shape()) +
                            ", dataset grid is " + std::to_string(h) + "x" +
                            std::to_string(w) + " (no resampling is done)");
    }
    if (!out.pairs.empty() &&
        p.frames.first.channels() != out.pairs.front().frames.first.channels()) {
      throw StructuralError(e.first.string() + " has a different channel count");
    }
    if (p.ground_truth && (p.ground_truth->flow.height() != h ||
                           p.ground_truth->flow.width() != w)) {
      throw StructuralError("ground truth for " + e.first.string() +
                            " does not match the frame grid");
    }
    out.pairs.push_back(std::move(p));
  }
  if (out.pairs.empty()) {
    throw IoError("none of the " + std::to_string(m.entries.size()) +
                  " dataset pairs could be read");
  }
  return out;
}

inline std::vector<FramePair> frames_of(const LoadedDataset& d) {
  std::vector<FramePair> out;
  out.reserve(d.pairs.size());
  for (const auto& p : d.pairs) out.push_back(p.frames);
  return out;
}

// ---------------------------------------------------------------------------
// Training.

struct UniversalTrainConfig {
  int epochs = 25;
  int batch_size = 4;
  int steps_per_batch = 1;
  PerturbationMode mode = PerturbationMode::kDisjoint;
  double epsilon2 = 5e-3;
  std::optional<double> mu;
  LossKind loss = LossKind::kAee;
  Target target = Target::zero();
  BoxConstraint box = BoxConstraint::kClipping;
  std::uint64_t seed = 0;
  int jobs = 1;
};

inline void validate(const UniversalTrainConfig& c) {
  if (c.epochs < 1) throw ConfigError("epochs must be >= 1");
  if (c.batch_size < 1) throw ConfigError("batch size must be >= 1");
  if (c.steps_per_batch < 1) throw ConfigError("steps per batch must be >= 1");
  if (c.box != BoxConstraint::kClipping) {
    throw ConfigError("universal perturbations use the clipping box constraint");
  }
  if (!(c.epsilon2 >= 0.0) || !std::isfinite(c.epsilon2)) {
    throw ConfigError("eps2 must be a finite value >= 0");
  }
  if (c.mu && !(*c.mu > 0.0)) throw ConfigError("mu must be > 0");
  if (c.jobs < 1) throw ConfigError("jobs must be >= 1");
}

inline double resolved_mu(const UniversalTrainConfig& c) {
  return c.mu ? *c.mu : default_mu(c.loss, c.target.kind(), c.epsilon2);
}

struct UniversalResult {
  Perturbation perturbation = Perturbation::joint(Field(Shape{1, 1, 1}));
  double l2_norm = 0.0;
  double bound = 0.0;
  double mu = 0.0;
  std::vector<double> epoch_objective;  // mean batch objective per epoch
  int line_search_failures = 0;
};

// Fisher-Yates with raw 64-bit draws, so the order is the same on every
// standard library.
inline void seeded_shuffle(std::vector<std::size_t>& v, std::mt19937_64& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    const std::size_t j = rng() % i;
    std::swap(v[i - 1], v[j]);
  }
}

inline UniversalResult train_universal(const FlowEstimator& e,
                                       const std::vector<FramePair>& data,
                                       const UniversalTrainConfig& cfg) {
  validate(cfg);
  if (data.empty()) throw ConfigError("universal training needs at least one pair");
  const Shape shape = data.front().first.shape();
  for (const auto& p : data) {
    if (p.first.shape() != shape || p.second.shape() != shape) {
      throw StructuralError("all training frames must share the shape " +
                            to_string(shape));
    }
  }
  UniversalResult r;
  r.bound = scale_bound(cfg.epsilon2, shape.pixels(), shape.channels);
  r.mu = resolved_mu(cfg);
  if (cfg.epsilon2 == 0.0) {
    r.perturbation = Perturbation::zeros(cfg.mode, shape);
    return r;
  }

  std::vector<AttackPair> pairs(data.size());
  parallel_for(data.size(), cfg.jobs, [&](std::size_t i) {
    const FlowField init = e.estimate_flow(data[i].first, data[i].second);
    pairs[i] = {data[i].first, data[i].second, cfg.target.resolve(init)};
  });
  AttackObjective objective(e, std::move(pairs), cfg.loss, cfg.box, cfg.mode,
                            r.bound, r.mu);
  objective.set_jobs(cfg.jobs);

  LbfgsParams params;
  params.max_steps = cfg.steps_per_batch;
  Lbfgs opt(params);  // curvature history carries over between batches
  std::vector<double> x = objective.initial_point();
  std::vector<double> grad(x.size());
  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(data.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  const std::size_t bs = static_cast<std::size_t>(cfg.batch_size);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    seeded_shuffle(order, rng);
    double sum = 0.0;
    int batches = 0;
    for (std::size_t start = 0; start < order.size(); start += bs) {
      const std::size_t end = std::min(order.size(), start + bs);
      objective.set_batch({order.begin() + static_cast<long>(start),
                           order.begin() + static_cast<long>(end)});
      double value = objective(x, grad);
      if (!std::isfinite(value) || !all_finite(grad)) {
        throw NumericError("non-finite universal objective in epoch " +
                           std::to_string(epoch));
      }
      for (int s = 0; s < cfg.steps_per_batch; ++s) {
        const StepStatus st = opt.step(objective, x, value, grad, nullptr);
        if (st == StepStatus::kLineSearchFailed) ++r.line_search_failures;
        if (st != StepStatus::kAccepted) break;
      }
      sum += value;
      ++batches;
    }
    r.epoch_objective.push_back(sum / batches);
  }
  r.perturbation = objective.perturbation(x);
  r.l2_norm = joint_l2_norm(r.perturbation);
  return r;
}

inline UniversalResult train_universal(const FlowEstimator& e,
                                       const DatasetManifest& m,
                                       const UniversalTrainConfig& cfg,
                                       const WarningSink& warn = {}) {
  return train_universal(e, frames_of(load_dataset(m, warn)), cfg);
}

// Adds the perturbation (the shared field to both frames in joint mode) and
// clips to [0,1].
inline FramePair apply_universal(const Perturbation& p, const Image& first,
                                 const Image& second) {
  if (p.shape() != first.shape() || p.shape() != second.shape()) {
    throw StructuralError("perturbation " + to_string(p.shape()) +
                          " does not match frames " + to_string(first.shape()) +
                          " / " + to_string(second.shape()));
  }
  return {clip01(add(first.field(), p.for_frame(0))),
          clip01(add(second.field(), p.for_frame(1)))};
}

}  // namespace flowattack

#endif  // FLOWATTACK_UNIVERSAL_HPP_
