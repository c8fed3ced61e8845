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

// Subcommand bodies behind the flowattack executable. Each takes a resolved
// RunConfig and returns a process exit status; argument parsing lives in the
// tool itself.

#ifndef FLOWATTACK_COMMANDS_HPP_
#define FLOWATTACK_COMMANDS_HPP_

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "flowattack/attack.hpp"
#include "flowattack/core.hpp"
#include "flowattack/diffflow.hpp"
#include "flowattack/eval.hpp"
#include "flowattack/io.hpp"
#include "flowattack/run_config.hpp"
#include "flowattack/synthetic.hpp"
#include "flowattack/universal.hpp"

namespace flowattack {

enum ExitCode : int { kExitOk = 0, kExitUsage = 1, kExitIo = 2, kExitNumeric = 3 };

struct CommandIo {
  std::ostream& out;
  std::ostream& err;
};

namespace cli {

inline FlowEstimator make_estimator(const RunConfig& c, const std::string& name) {
  FlowEstimator base = builtin_estimator(name);
  EstimatorConfig ec = base.config();
  if (auto v = c.opt_double("estimator.alpha")) ec.alpha = *v;
  if (auto v = c.opt_int("estimator.iterations")) ec.iterations = static_cast<int>(*v);
  if (auto v = c.opt_int("estimator.levels")) ec.pyramid_levels = static_cast<int>(*v);
  if (auto v = c.opt_bool("estimator.warp")) ec.warp = *v;
  return FlowEstimator(name, ec);
}

inline FlowEstimator make_estimator(const RunConfig& c) {
  return make_estimator(c, c.str("estimator.name"));
}

inline Target make_target(const RunConfig& c) {
  const std::string t = c.str("attack.target");
  if (t == "zero") return Target::zero();
  if (t == "negative") return Target::negative_initial();
  if (t == "custom") {
    if (!c.has("attack.target_flow")) {
      throw ConfigError("target = custom needs attack.target_flow");
    }
    return Target::custom(read_flow_any(c.str("attack.target_flow")).flow);
  }
  throw ConfigError("unknown target '" + t + "' (expected zero, negative or custom)");
}

inline PcfaConfig make_pcfa(const RunConfig& c) {
  PcfaConfig p;
  p.epsilon2 = c.num("attack.eps2");
  p.mu = c.opt_double("attack.mu");
  p.steps = static_cast<int>(c.integer("attack.steps"));
  p.loss = parse_loss(c.str("attack.loss"));
  p.target = make_target(c);
  p.box = parse_box(c.str("attack.box"));
  p.mode = parse_mode(c.str("attack.mode"));
  p.seed = static_cast<std::uint64_t>(c.integer("run.seed"));
  validate(p);
  return p;
}

inline std::uint64_t seed_of(const RunConfig& c) {
  return static_cast<std::uint64_t>(c.integer("run.seed"));
}

inline int jobs_of(const RunConfig& c) {
  const long long j = c.integer("run.jobs");
  if (j < 1) throw ConfigError("jobs must be >= 1");
  return static_cast<int>(j);
}

// Frame pairs from a manifest or, with data.synthetic = N, N seeded pairs.
inline LoadedDataset load_data(const RunConfig& c, const WarningSink& warn) {
  const long long synthetic = c.integer("data.synthetic");
  if (synthetic > 0) {
    const long long size = c.integer("data.synthetic_size");
    if (size < 4) throw ConfigError("data.synthetic_size must be >= 4");
    LoadedDataset d;
    const auto suite = synthetic_suite(static_cast<int>(synthetic),
                                       static_cast<int>(size), seed_of(c));
    for (std::size_t i = 0; i < suite.size(); ++i) {
      KittiFlow gt{suite[i].ground_truth,
                   std::vector<std::uint8_t>(suite[i].ground_truth.pixels(), 1)};
      d.pairs.push_back({"synthetic" + std::to_string(i),
                         {suite[i].first, suite[i].second}, std::move(gt)});
    }
    return d;
  }
  if (c.has("data.manifest")) return load_dataset(read_manifest(c.str("data.manifest")), warn);
  if (c.has("data.first") && c.has("data.second")) {
    DatasetEntry e{c.str("data.first"), c.str("data.second"), std::nullopt};
    if (c.has("data.ground_truth")) e.ground_truth = fs::path(c.str("data.ground_truth"));
    // A single explicit pair must be readable; do not skip it.
    LoadedPair p;
    p.name = e.first.filename().string();
    p.frames = {read_image(e.first), read_image(e.second)};
    if (e.ground_truth) p.ground_truth = read_flow_any(*e.ground_truth);
    LoadedDataset d;
    d.pairs.push_back(std::move(p));
    return d;
  }
  throw ConfigError("no input: set data.first and data.second, data.manifest, "
                    "or data.synthetic");
}

class Outputs {
 public:
  explicit Outputs(const RunConfig& c)
      : dir_(c.str("output.dir")), stem_(c.str("output.stem")) {
    if (stem_.empty()) throw ConfigError("output.stem must not be empty");
  }
  // Called only once all inputs are loaded, so failed runs leave nothing.
  void prepare() const {
    std::error_code ec;
    fs::create_directories(dir_, ec);
    if (ec) throw IoError("cannot create output directory '" + dir_.string() + "'");
  }
  fs::path path(const std::string& suffix) const { return dir_ / (stem_ + suffix); }

 private:
  fs::path dir_;
  std::string stem_;
};

inline void write_text(const fs::path& p, const std::string& s) {
  detail::write_file_atomic(p, std::vector<std::uint8_t>(s.begin(), s.end()));
}

// Round-trippable text for a double.
inline std::string exact(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline double elapsed_ms(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
      .count();
}

inline void write_perturbation_images(const Outputs& o, const Perturbation& p) {
  const std::vector<Image> imgs = perturbation_to_image(p);
  for (std::size_t i = 0; i < imgs.size(); ++i) {
    write_png(o.path("_delta" + std::to_string(i + 1) + ".png"), imgs[i]);
  }
}

}  // namespace cli

// Maps module errors to exit codes and prints the diagnostic.
inline int guarded(const CommandIo& io, const std::function<int()>& body) {
  try {
    return body();
  } catch (const ConfigError& e) {
    io.err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const IoError& e) {
    io.err << "error: " << e.what() << "\n";
    return kExitIo;
  } catch (const FormatError& e) {
    io.err << "error: " << e.what() << "\n";
    return kExitIo;
  } catch (const StructuralError& e) {
    io.err << "error: " << e.what() << "\n";
    return kExitIo;
  } catch (const NumericError& e) {
    io.err << "error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const std::exception& e) {
    io.err << "error: " << e.what() << "\n";
    return kExitNumeric;
  }
}

// attack: one frame pair, PCFA or I-FGSM. Writes the report line, flow and
// perturbation images, the perturbation itself and the config echo.
inline int cmd_attack(RunConfig c, const CommandIo& io) {
  return guarded(io, [&] {
    const auto t0 = std::chrono::steady_clock::now();
    const FlowEstimator e = cli::make_estimator(c);
    const std::string method = c.str("attack.method");
    if (method != "pcfa" && method != "ifgsm") {
      throw ConfigError("attack.method must be pcfa or ifgsm");
    }
    PcfaConfig cfg = cli::make_pcfa(c);
    const cli::Outputs out(c);
    LoadedDataset data = cli::load_data(c, [&](const std::string& w) {
      io.err << "warning: " << w << "\n";
    });
    const LoadedPair& pair = data.pairs.front();

    AttackResult res;
    if (method == "pcfa") {
      res = pcfa_attack(e, pair.frames.first, pair.frames.second, cfg);
      c.set("attack.mu", cli::exact(res.mu));
    } else {
      const double eps_inf = c.num("attack.eps_inf");
      const long long steps = c.integer("attack.ifgsm_steps");
      if (steps < 1) throw ConfigError("attack.ifgsm_steps must be >= 1");
      res = ifgsm_attack(e, pair.frames.first, pair.frames.second, eps_inf,
                         static_cast<int>(steps), cfg.loss, cfg.target);
    }
    AttackReport rep = make_report(e.label(), cfg, res,
                                   c.flag("run.deterministic") ? 0.0 : cli::elapsed_ms(t0));
    if (method == "ifgsm") {
      // Achieved L2 expressed on the eps2 scale; there is no penalty weight.
      const Shape s = pair.frames.first.shape();
      rep.eps2 = res.l2_norm / scale_bound(1.0, s.pixels(), s.channels);
      rep.mu = 0.0;
      rep.box = "clip";
      rep.mode = "disjoint";
    }
    if (pair.ground_truth) {
      rep.quality = masked_aee(res.initial_flow, pair.ground_truth->flow,
                               &pair.ground_truth->valid);
    }

    out.prepare();
    const double vmax = std::max(auto_flow_max(res.initial_flow), 1e-9);
    write_png(out.path("_flow_init.png"), flow_to_color(res.initial_flow, vmax));
    write_png(out.path("_flow_adv.png"), flow_to_color(res.adversarial_flow, vmax));
    write_png(out.path("_flow_target.png"), flow_to_color(res.target_flow, vmax));
    write_flo(out.path("_flow_adv.flo"), res.adversarial_flow);
    cli::write_perturbation_images(out, res.perturbation);
    write_png(out.path("_img_adv1.png"), res.perturbed_first);
    write_png(out.path("_img_adv2.png"), res.perturbed_second);
    write_perturbation(out.path("_perturbation.ptb"), res.perturbation);
    cli::write_text(out.path("_config.ini"), c.to_ini());
    const std::string line = serialize(rep);
    cli::write_text(out.path("_report.jsonl"), line + "\n");
    io.out << line << "\n";
    return kExitOk;
  });
}

// universal: trains one perturbation over a dataset and reports the mean
// strength and robustness it achieves on that dataset.
inline int cmd_universal(RunConfig c, const CommandIo& io) {
  return guarded(io, [&] {
    const auto t0 = std::chrono::steady_clock::now();
    const FlowEstimator e = cli::make_estimator(c);
    UniversalTrainConfig u;
    u.epochs = static_cast<int>(c.integer("universal.epochs"));
    u.batch_size = static_cast<int>(c.integer("universal.batch_size"));
    u.steps_per_batch = static_cast<int>(c.integer("universal.steps_per_batch"));
    u.mode = parse_mode(c.str("attack.mode"));
    u.epsilon2 = c.num("attack.eps2");
    u.mu = c.opt_double("attack.mu");
    u.loss = parse_loss(c.str("attack.loss"));
    u.target = cli::make_target(c);
    // The attack default (cov) does not apply here; an explicit cov is an error.
    u.box = c.is_set("attack.box") ? parse_box(c.str("attack.box"))
                                   : BoxConstraint::kClipping;
    u.seed = cli::seed_of(c);
    u.jobs = cli::jobs_of(c);
    validate(u);
    c.set("attack.box", "clip");
    const cli::Outputs out(c);
    LoadedDataset data = cli::load_data(c, [&](const std::string& w) {
      io.err << "warning: " << w << "\n";
    });
    if (!data.skipped.empty()) {
      io.err << "warning: skipped " << data.skipped.size() << " unreadable pair(s)\n";
    }
    const std::vector<FramePair> frames = frames_of(data);
    UniversalResult res = train_universal(e, frames, u);
    c.set("attack.mu", cli::exact(res.mu));

    double strength = 0.0, robustness = 0.0;
    for (const FramePair& f : frames) {
      const FlowField init = e.estimate_flow(f.first, f.second);
      const FramePair adv = apply_universal(res.perturbation, f.first, f.second);
      const FlowField flow = e.estimate_flow(adv.first, adv.second);
      strength += attack_strength(flow, u.target.resolve(init));
      robustness += adversarial_robustness(flow, init);
    }
    AttackReport rep;
    rep.estimator = e.label();
    rep.eps2 = u.epsilon2;
    rep.mu = res.mu;
    rep.loss = to_string(u.loss);
    rep.target = to_string(u.target);
    rep.box = to_string(u.box);
    rep.mode = to_string(u.mode);
    rep.strength = strength / static_cast<double>(frames.size());
    rep.robustness = robustness / static_cast<double>(frames.size());
    rep.l2 = res.l2_norm;
    rep.linf = joint_linf_norm(res.perturbation);
    rep.steps = u.epochs;
    rep.seed = u.seed;
    rep.runtime_ms = c.flag("run.deterministic") ? 0.0 : cli::elapsed_ms(t0);
    if (!res.epoch_objective.empty()) rep.objective = res.epoch_objective.back();

    out.prepare();
    write_perturbation(out.path("_universal.ptb"), res.perturbation);
    cli::write_perturbation_images(out, res.perturbation);
    cli::write_text(out.path("_config.ini"), c.to_ini());
    const std::string line = serialize(rep);
    cli::write_text(out.path("_report.jsonl"), line + "\n");
    io.out << line << "\n";
    return kExitOk;
  });
}

inline std::string format_transfer_table(const TransferMatrix& m) {
  std::size_t w = 10;
  for (const auto& s : m.estimators) w = std::max(w, s.size() + 2);
  for (const auto& s : m.sources) w = std::max(w, s.size() + 2);
  std::ostringstream os;
  os << std::left << std::setw(static_cast<int>(w)) << "target\\source";
  for (const auto& s : m.sources) os << std::right << std::setw(static_cast<int>(w)) << s;
  os << "\n";
  for (std::size_t i = 0; i < m.estimators.size(); ++i) {
    os << std::left << std::setw(static_cast<int>(w)) << m.estimators[i];
    for (const auto& v : m.values[i]) {
      std::ostringstream cell;
      if (v) {
        cell << std::fixed << std::setprecision(4) << *v;
      } else {
        cell << "n/a";
      }
      os << std::right << std::setw(static_cast<int>(w)) << cell.str();
    }
    os << "\n";
  }
  return os.str();
}

// transfer: mean robustness of every estimator under every perturbation.
inline int cmd_transfer(RunConfig c, const CommandIo& io) {
  return guarded(io, [&] {
    std::vector<FlowEstimator> ests;
    for (const auto& name : c.list("transfer.estimators")) {
      ests.push_back(cli::make_estimator(c, name));
    }
    const auto files = c.list("transfer.perturbations");
    if (files.empty()) throw ConfigError("transfer.perturbations is empty");
    auto sources = c.list("transfer.sources");
    if (!sources.empty() && sources.size() != files.size()) {
      throw ConfigError("transfer.sources must name one source per perturbation");
    }
    std::vector<NamedPerturbation> perts;
    for (std::size_t j = 0; j < files.size(); ++j) {
      perts.push_back({sources.empty() ? fs::path(files[j]).stem().string() : sources[j],
                       read_perturbation(files[j])});
    }
    const cli::Outputs out(c);
    LoadedDataset data = cli::load_data(c, [&](const std::string& w) {
      io.err << "warning: " << w << "\n";
    });
    std::vector<const FlowEstimator*> ptrs;
    for (const auto& e : ests) ptrs.push_back(&e);
    const TransferMatrix m = transfer_matrix(ptrs, perts, frames_of(data), cli::jobs_of(c));

    std::string rows;
    for (std::size_t i = 0; i < m.estimators.size(); ++i) {
      for (std::size_t j = 0; j < m.sources.size(); ++j) {
        nlohmann::ordered_json r;
        r["estimator"] = m.estimators[i];
        r["source"] = m.sources[j];
        if (m.values[i][j]) {
          r["robustness"] = *m.values[i][j];
        } else {
          r["robustness"] = nullptr;
        }
        rows += r.dump() + "\n";
      }
    }
    const std::string table = format_transfer_table(m);
    out.prepare();
    cli::write_text(out.path("_transfer.txt"), table);
    cli::write_text(out.path("_transfer.jsonl"), rows);
    cli::write_text(out.path("_config.ini"), c.to_ini());
    io.out << table;
    return kExitOk;
  });
}

// viz: color-codes a flow file and/or renders a perturbation file.
inline int cmd_viz(RunConfig c, const CommandIo& io) {
  return guarded(io, [&] {
    if (!c.has("viz.flow") && !c.has("viz.perturbation")) {
      throw ConfigError("viz needs viz.flow or viz.perturbation");
    }
    const cli::Outputs out(c);
    std::optional<Image> flow_img;
    std::optional<Perturbation> pert;
    if (c.has("viz.flow")) {
      flow_img = flow_to_color(read_flow_any(c.str("viz.flow")).flow,
                               c.opt_double("viz.max"));
    }
    if (c.has("viz.perturbation")) pert = read_perturbation(c.str("viz.perturbation"));
    out.prepare();
    if (flow_img) {
      write_png(out.path("_flow.png"), *flow_img);
      io.out << out.path("_flow.png").string() << "\n";
    }
    if (pert) {
      cli::write_perturbation_images(out, *pert);
      io.out << out.path("_delta1.png").string() << "\n";
    }
    return kExitOk;
  });
}

// checkgrad: estimator x loss x box table of the worst relative gradient
// error; exits with the numeric status when any entry exceeds the tolerance.
inline int cmd_checkgrad(RunConfig c, const CommandIo& io) {
  return guarded(io, [&] {
    const double h = c.num("checkgrad.h");
    if (!(h > 0.0)) throw ConfigError("checkgrad.h must be > 0");
    const double tol = c.num("checkgrad.tolerance");
    const long long npairs = c.integer("checkgrad.pairs");
    const long long size = c.integer("checkgrad.size");
    const long long samples = c.integer("checkgrad.samples");
    if (npairs < 1 || size < 4 || samples < 1) {
      throw ConfigError("checkgrad needs pairs >= 1, size >= 4, samples >= 1");
    }
    std::vector<LossKind> losses;
    for (const auto& l : c.list("checkgrad.losses")) losses.push_back(parse_loss(l));
    std::vector<BoxConstraint> boxes;
    for (const auto& b : c.list("checkgrad.boxes")) boxes.push_back(parse_box(b));
    std::vector<FlowEstimator> ests;
    for (const auto& n : c.list("checkgrad.estimators")) ests.push_back(cli::make_estimator(c, n));
    const std::uint64_t seed = cli::seed_of(c);

    std::vector<SyntheticPair> pairs;
    for (long long k = 0; k < npairs; ++k) {
      pairs.push_back(random_pair(static_cast<int>(size), seed + static_cast<std::uint64_t>(k)));
    }
    bool ok = true;
    io.out << std::left << std::setw(14) << "estimator" << std::setw(6) << "loss"
           << std::setw(6) << "box" << "max_rel_error\n";
    for (const auto& e : ests) {
      for (LossKind l : losses) {
        for (BoxConstraint b : boxes) {
          double worst = 0.0;
          for (std::size_t k = 0; k < pairs.size(); ++k) {
            worst = std::max(worst, gradient_check_case(e, l, b, pairs[k].first,
                                                        pairs[k].second, h, seed + k,
                                                        static_cast<int>(samples)));
          }
          ok = ok && worst < tol;
          char buf[32];
          std::snprintf(buf, sizeof buf, "%.3e", worst);
          io.out << std::left << std::setw(14) << e.label() << std::setw(6)
                 << to_string(l) << std::setw(6) << to_string(b) << buf
                 << (worst < tol ? "" : "  FAIL") << "\n";
        }
      }
    }
    return ok ? kExitOk : kExitNumeric;
  });
}

}  // namespace flowattack

#endif  // FLOWATTACK_COMMANDS_HPP_
