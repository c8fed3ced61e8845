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

// Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any FAIL.
// Usage: acceptance [criterion ...]   (default: all)

#include <sys/wait.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <functional>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "flowattack/attack.hpp"
#include "flowattack/eval.hpp"
#include "flowattack/io.hpp"
#include "flowattack/optim.hpp"
#include "flowattack/synthetic.hpp"
#include "flowattack/universal.hpp"
#include "test_util.hpp"

namespace {

using namespace flowattack;
using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
  bool pass;
  std::string detail;
};

std::string fmt(const char* f, double a, double b = 0.0, double c = 0.0, double d = 0.0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c, d);
  return buf;
}

double mean(const std::vector<double>& v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

// ---------------------------------------------------------------------------

Outcome gradient_oracle() {
  const auto t0 = Clock::now();
  double worst = 0.0;
  std::string where;
  int cases = 0;
  for (const char* name : {"hs", "hs-pyramid"}) {
    const FlowEstimator e = builtin_estimator(name);
    for (LossKind l : {LossKind::kAee, LossKind::kMse, LossKind::kCs}) {
      for (BoxConstraint b : {BoxConstraint::kClipping, BoxConstraint::kChangeOfVariables}) {
        for (std::uint64_t k = 0; k < 5; ++k) {
          const SyntheticPair p = random_pair(16, 300 + k);
          const double err = gradient_check_case(e, l, b, p.first, p.second, 5e-4, 300 + k);
          ++cases;
          if (err > worst) {
            worst = err;
            where = std::string(name) + "/" + to_string(l) + "/" + to_string(b);
          }
        }
      }
    }
  }
  const double t = seconds_since(t0);
  return {worst < 1e-4 && t < 60.0,
          std::to_string(cases) + " checks, max rel error " + fmt("%.2e", worst) + " (" +
              where + "), " + fmt("%.1f s", t)};
}

Outcome constraint_exactness() {
  const FlowEstimator e = builtin_estimator("hs");
  const double eps_list[] = {5e-4, 1e-3, 5e-3, 1e-2, 5e-2};
  int runs = 0, bad_norm = 0, bad_box = 0;
  double worst_ratio = 0.0;
  for (int k = 0; k < 50; ++k) {
    const SyntheticPair s = random_pair(24, 1000 + static_cast<std::uint64_t>(k));
    PcfaConfig c;
    c.epsilon2 = eps_list[k % 5];
    c.box = (k / 5) % 2 == 0 ? BoxConstraint::kChangeOfVariables : BoxConstraint::kClipping;
    c.loss = static_cast<LossKind>(k % 3);
    c.target = c.loss == LossKind::kCs || k % 2 ? Target::negative_initial() : Target::zero();
    if (c.box == BoxConstraint::kClipping && (k / 10) % 2) c.mode = PerturbationMode::kJoint;
    c.seed = static_cast<std::uint64_t>(k);
    bool box_ok = true;
    AttackHooks hooks;
    hooks.on_evaluate = [&](const Field& a, const Field& b) {
      for (const Field* f : {&a, &b}) {
        for (double v : f->values()) {
          const bool ok = c.box == BoxConstraint::kChangeOfVariables ? (v > 0.0 && v < 1.0)
                                                                    : (v >= 0.0 && v <= 1.0);
          box_ok = box_ok && ok;
        }
      }
    };
    const AttackResult r = pcfa_attack(e, s.first, s.second, c, hooks);
    ++runs;
    const double ratio = r.l2_norm / r.bound;
    worst_ratio = std::max(worst_ratio, ratio);
    if (!(r.l2_norm <= 1.01 * r.bound)) ++bad_norm;
    if (!box_ok) ++bad_box;
  }
  return {runs == 50 && bad_norm == 0 && bad_box == 0,
          std::to_string(runs) + " runs, max |delta|/bound " + fmt("%.5f", worst_ratio) +
              ", norm violations " + std::to_string(bad_norm) + ", box violations " +
              std::to_string(bad_box)};
}

// Shared by criteria 3 to 5.
struct SuiteRuns {
  std::vector<SyntheticPair> suite;
  std::map<double, std::vector<AttackResult>> pcfa;  // by eps2
  std::vector<double> ifgsm_strength;                // matched L2, eps2 = 5e-3
  std::vector<double> ifgsm_l2;
  double seconds = 0.0;
};

const FlowEstimator& suite_estimator() {
  static const FlowEstimator e = builtin_estimator("hs");
  return e;
}

SuiteRuns& suite_runs() {
  static SuiteRuns runs = [] {
    SuiteRuns r;
    const auto t0 = Clock::now();
    const FlowEstimator& e = suite_estimator();
    r.suite = synthetic_suite(10, 64, 2026);
    for (double eps : {5e-4, 5e-3, 5e-2}) {
      for (const auto& s : r.suite) {
        PcfaConfig c;
        c.epsilon2 = eps;
        r.pcfa[eps].push_back(pcfa_attack(e, s.first, s.second, c));
      }
    }
    // Largest I-FGSM budget whose achieved L2 stays at or below PCFA's.
    for (std::size_t i = 0; i < r.suite.size(); ++i) {
      const auto& s = r.suite[i];
      const double target_l2 = r.pcfa[5e-3][i].l2_norm;
      double lo = 0.0, hi = 0.05;
      for (int it = 0; it < 14; ++it) {
        const double mid = 0.5 * (lo + hi);
        const AttackResult a =
            ifgsm_attack(e, s.first, s.second, mid, 10, LossKind::kAee, Target::zero());
        (a.l2_norm <= target_l2 ? lo : hi) = mid;
      }
      const AttackResult a =
          ifgsm_attack(e, s.first, s.second, lo, 10, LossKind::kAee, Target::zero());
      r.ifgsm_strength.push_back(attack_strength(a.adversarial_flow, a.target_flow));
      r.ifgsm_l2.push_back(a.l2_norm);
    }
    r.seconds = seconds_since(t0);
    return r;
  }();
  return runs;
}

double strength_of(const AttackResult& r) {
  return attack_strength(r.adversarial_flow, r.target_flow);
}

Outcome budget_sweep() {
  SuiteRuns& r = suite_runs();
  std::vector<double> m;
  for (double eps : {5e-4, 5e-3, 5e-2}) {
    std::vector<double> s;
    for (const auto& a : r.pcfa[eps]) s.push_back(strength_of(a));
    m.push_back(mean(s));
  }
  const bool decreasing = m[0] > m[1] && m[1] > m[2];
  int wins = 0;
  for (std::size_t i = 0; i < r.suite.size(); ++i) {
    if (strength_of(r.pcfa[5e-3][i]) <= r.ifgsm_strength[i]) ++wins;
  }
  return {decreasing && wins >= 8 && r.seconds < 300.0,
          "mean strength " + fmt("%.4f > %.4f > %.4f", m[0], m[1], m[2]) +
              ", PCFA <= I-FGSM on " + std::to_string(wins) + "/10 pairs, " +
              fmt("%.1f s", r.seconds)};
}

Outcome erase_motion() {
  SuiteRuns& r = suite_runs();
  std::vector<double> before, after;
  const FlowEstimator& e = suite_estimator();
  for (std::size_t i = 0; i < r.suite.size(); ++i) {
    const AttackResult& a = r.pcfa[5e-2][i];
    const FlowField zero(a.initial_flow.height(), a.initial_flow.width());
    before.push_back(loss_aee(e.estimate_flow(r.suite[i].first, r.suite[i].second), zero));
    after.push_back(loss_aee(a.adversarial_flow, zero));
  }
  const double ratio = mean(after) / mean(before);
  return {ratio < 0.25, "AEE(adv, 0) / AEE(init, 0) = " +
                            fmt("%.4f / %.4f = %.3f", mean(after), mean(before), ratio)};
}

Outcome universal_ordering() {
  SuiteRuns& r = suite_runs();
  const FlowEstimator& e = suite_estimator();
  const std::vector<FramePair> frames = frame_pairs(r.suite);
  UniversalTrainConfig u;
  u.epsilon2 = 5e-3;
  u.seed = 2026;
  const UniversalResult res = train_universal(e, frames, u);
  std::vector<double> uni, spec;
  for (std::size_t i = 0; i < frames.size(); ++i) {
    const FramePair adv = apply_universal(res.perturbation, frames[i].first, frames[i].second);
    const FlowField flow = e.estimate_flow(adv.first, adv.second);
    uni.push_back(attack_strength(flow, FlowField(flow.height(), flow.width())));
    spec.push_back(strength_of(r.pcfa[5e-3][i]));
  }
  return {mean(spec) < mean(uni),
          "frame-specific " + fmt("%.4f < universal %.4f", mean(spec), mean(uni))};
}

Outcome patch_formula() {
  const double lo = 100.0 * patch_equivalent_epsilon(8171, 465750, 0.03);
  const double hi = 100.0 * patch_equivalent_epsilon(8171, 465750, 0.30);
  const bool ok = std::abs(lo - 0.40) <= 0.01 && std::abs(hi - 3.97) <= 0.01;
  return {ok, fmt("%.4f%% and %.4f%% (expected 0.40%% and 3.97%%)", lo, hi)};
}

// Analytic examples of the attack and evaluation modules, exact where the
// value is exactly representable.
Outcome trivial_oracles() {
  std::vector<std::string> failed;
  auto check = [&](bool ok, const char* what) {
    if (!ok) failed.push_back(what);
  };
  auto px = [](std::initializer_list<std::pair<double, double>> uv) {
    FlowField f(1, static_cast<int>(uv.size()));
    int x = 0;
    for (auto [u, v] : uv) {
      f.u(0, x) = u;
      f.v(0, x) = v;
      ++x;
    }
    return f;
  };
  std::mt19937_64 rng(11);
  std::normal_distribution<double> nd;
  FlowField rnd(3, 4);
  for (double& v : rnd.values()) v = nd(rng);

  check(loss_aee(px({{3, 4}}), px({{0, 0}})) == 5.0, "aee 3-4-5");
  check(loss_aee(rnd, rnd) == 0.0, "aee identity");
  check(loss_aee(px({{1, 0}, {0, 1}}), px({{0, 0}, {0, 0}})) == 1.0, "aee unit mean");
  check(loss_mse(px({{3, 4}}), px({{0, 0}})) == 25.0, "mse 25");
  check(loss_mse(rnd, rnd) == 0.0, "mse identity");
  check(loss_mse(px({{1, 0}, {3, 4}}), px({{0, 0}, {0, 0}})) == 13.0, "mse 13");
  check(std::abs(loss_cs(rnd, rnd) - 1.0) < 1e-6, "cs parallel");
  check(std::abs(loss_cs(negated(rnd), rnd) + 1.0) < 1e-6, "cs antiparallel");
  check(loss_cs(px({{1, 0}}), px({{0, 1}})) == 0.0, "cs orthogonal");

  std::vector<double> d{std::sqrt(0.5)}, g(1, 3.0);
  check(penalty_value_grad(d, 1.0, 10.0, g) == 0.0 && g[0] == 0.0, "penalty interior");
  d = {1.0, 1.0};
  g.assign(2, 0.0);
  check(penalty_value_grad(d, 1.0, 10.0, g) == 10.0, "penalty value 10");
  d = {0.6, 0.8};
  g.assign(2, 7.0);
  check(penalty_value_grad(d, std::sqrt(0.6 * 0.6 + 0.8 * 0.8), 10.0, g) == 0.0 &&
            g[0] == 0.0 && g[1] == 0.0,
        "penalty kink");

  const Image mid(Field({1, 2, 2}, 0.3));
  const CovResult zero_w = apply_cov(Field({1, 2, 2}, 0.0), mid);
  bool half = true;
  for (double v : zero_w.perturbed.values()) half = half && v == 0.5;
  check(half, "cov w=0");
  const CovResult big_w = apply_cov(Field({1, 2, 2}, 40.0), mid);
  bool sat = true;
  for (double v : big_w.perturbed.values()) {
    sat = sat && v < 1.0 && std::abs(v - 1.0) < 1e-15;
  }
  check(sat, "cov saturation");
  Field ramp({1, 1, 5});
  for (int i = 0; i < 5; ++i) ramp.values()[static_cast<std::size_t>(i)] = 0.25 * i;
  const Image ramp_img(ramp);
  const CovResult back = apply_cov(cov_init(ramp_img), ramp_img);
  bool inv = true;
  for (double v : back.delta.values()) {
    inv = inv && std::abs(v) <= kCovClamp + 1e-12;
  }
  check(inv, "cov init inverse");

  const FlowEstimator e = builtin_estimator("hs");
  const SyntheticPair s = synthetic_suite(1, 24, 3)[0];
  for (BoxConstraint b : {BoxConstraint::kClipping, BoxConstraint::kChangeOfVariables}) {
    PcfaConfig c;
    c.epsilon2 = 0.0;
    c.box = b;
    const AttackResult r = pcfa_attack(e, s.first, s.second, c);
    check(r.l2_norm <= 1e-6 * std::sqrt(2.0 * s.first.shape().size()), "eps2 = 0 pinned");
  }
  const Image flat(Field({3, 8, 8}, 0.4));
  const AttackResult z = ifgsm_attack(e, flat, flat, 0.01, 10, LossKind::kAee, Target::zero());
  check(z.l2_norm == 0.0, "ifgsm zero gradient");
  const AttackResult fg =
      ifgsm_attack(e, s.first, s.second, 0.01, 10, LossKind::kAee, Target::zero());
  check(fg.linf_norm <= 0.01, "ifgsm linf bound");

  check(attack_strength(rnd, rnd) == 0.0, "strength identity");
  check(attack_strength(px({{1, 0}}), px({{0, 0}})) < attack_strength(px({{2, 0}}), px({{0, 0}})),
        "strength ordering");
  const FlowField init = e.estimate_flow(s.first, s.second);
  const FramePair same = apply_universal(
      Perturbation::zeros(PerturbationMode::kDisjoint, s.first.shape()), s.first, s.second);
  check(adversarial_robustness(e.estimate_flow(same.first, same.second), init) == 0.0,
        "robustness of zero perturbation");
  check(adversarial_robustness(fg.adversarial_flow, fg.initial_flow) ==
            adversarial_robustness(fg.adversarial_flow, fg.initial_flow),
        "robustness determinism");
  check(patch_equivalent_epsilon(100, 100, 0.07) == 0.07, "patch P = I");

  const std::vector<FramePair> data = frame_pairs(synthetic_suite(2, 16, 4));
  UniversalTrainConfig u;
  u.epochs = 2;
  u.batch_size = 2;
  const UniversalResult ur = train_universal(e, data, u);
  const TransferMatrix one = transfer_matrix({&e}, {{"hs", ur.perturbation}}, data);
  double white = 0.0;
  for (const auto& p : data) {
    const FramePair adv = apply_universal(ur.perturbation, p.first, p.second);
    white += adversarial_robustness(e.estimate_flow(adv.first, adv.second),
                                    e.estimate_flow(p.first, p.second));
  }
  white /= static_cast<double>(data.size());
  check(one.values.size() == 1 && one.values[0].size() == 1 && *one.values[0][0] == white,
        "transfer 1x1");
  const FlowEstimator ep = builtin_estimator("hs-pyramid");
  const Perturbation zp = Perturbation::zeros(PerturbationMode::kJoint, data[0].first.shape());
  const TransferMatrix zm = transfer_matrix({&e, &ep}, {{"a", zp}, {"b", zp}}, data);
  bool zeros = true;
  for (const auto& row : zm.values) {
    for (const auto& v : row) zeros = zeros && v && *v == 0.0;
  }
  check(zeros, "transfer zero perturbations");

  // Optimizer.
  auto quad = [](std::span<const double> x, std::span<double> gr) {
    const double a[] = {1.0, -2.0, 3.5, 0.25};
    double v = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      gr[i] = x[i] - a[i];
      v += 0.5 * gr[i] * gr[i];
    }
    return v;
  };
  LbfgsParams qp;
  qp.max_steps = 3;
  const LbfgsResult q = lbfgs_minimize(quad, {10.0, 4.0, -7.0, 0.0}, qp);
  const double qerr = std::hypot(q.x[0] - 1.0, q.x[1] + 2.0, q.x[2] - 3.5) + std::abs(q.x[3] - 0.25);
  check(qerr <= 1e-8 && q.trace.steps.size() <= 3, "lbfgs quadratic");
  auto rosen = [](std::span<const double> x, std::span<double> gr) {
    const double a = 1.0 - x[0], b = x[1] - x[0] * x[0];
    gr[0] = -2.0 * a - 400.0 * x[0] * b;
    gr[1] = 200.0 * b;
    return a * a + 100.0 * b * b;
  };
  LbfgsParams rp;
  rp.max_steps = 100;
  rp.grad_tol = 1e-12;
  const LbfgsResult ro = lbfgs_minimize(rosen, {-1.2, 1.0}, rp);
  check(std::hypot(ro.x[0] - 1.0, ro.x[1] - 1.0) <= 1e-5 && ro.trace.steps.size() <= 100,
        "lbfgs rosenbrock");
  const LbfgsResult st = lbfgs_minimize(quad, {1.0, -2.0, 3.5, 0.25}, qp);
  check(st.trace.steps.empty() && st.x[2] == 3.5, "lbfgs stationary start");

  std::string detail = failed.empty() ? "all examples exact" : "failed:";
  for (const auto& f : failed) detail += " [" + f + "]";
  return {failed.empty(), detail};
}

Outcome format_fidelity() {
  flowattack::testing::TempDir dir;
  std::mt19937_64 rng(8);
  std::uniform_int_distribution<int> dim(1, 40), code(0, 65535), flag(0, 1);
  std::normal_distribution<float> nd(0.0f, 20.0f);
  int flo_ok = 0, kitti_ok = 0;
  for (int i = 0; i < 100; ++i) {
    FlowField f(dim(rng), dim(rng));
    for (double& v : f.values()) v = nd(rng);  // .flo stores float32
    write_flo(dir / "f.flo", f);
    const FlowField g = read_flo(dir / "f.flo");
    flo_ok += g.height() == f.height() && g.width() == f.width() &&
              std::memcmp(f.values().data(), g.values().data(),
                          f.values().size() * sizeof(double)) == 0;

    FlowField k(dim(rng), dim(rng));
    for (double& v : k.values()) v = (code(rng) - 32768.0) / 64.0;
    std::vector<std::uint8_t> valid(k.pixels());
    for (auto& m : valid) m = static_cast<std::uint8_t>(flag(rng));
    write_kitti_flow(dir / "k.png", k, &valid);
    const KittiFlow back = read_kitti_flow(dir / "k.png");
    kitti_ok += back.flow.height() == k.height() && back.flow.width() == k.width() &&
                std::memcmp(k.values().data(), back.flow.values().data(),
                            k.values().size() * sizeof(double)) == 0 &&
                back.valid == valid;
  }
  const Image rendered = flow_to_color(FlowField(7, 9));
  bool white = true;
  for (double v : rendered.values()) white = white && v == 1.0;
  return {flo_ok == 100 && kitti_ok == 100 && white,
          ".flo " + std::to_string(flo_ok) + "/100, KITTI " + std::to_string(kitti_ok) +
              "/100 bitwise, zero flow " + (white ? "all white" : "NOT white")};
}

Outcome cli_determinism() {
  flowattack::testing::TempDir dir;
  const std::vector<std::string> runs = {
      "--seed 4 attack --synthetic 1 --set data.synthetic_size=32",
      "--seed 4 attack --synthetic 1 --set data.synthetic_size=32 --method ifgsm",
      "--seed 4 attack --synthetic 1 --set data.synthetic_size=32 --box clip --mode joint "
      "--loss cs --target negative",
      "--seed 4 universal --synthetic 4 --set data.synthetic_size=16 --epochs 3 "
      "--batch-size 2",
  };
  int same = 0;
  std::string failed;
  for (std::size_t i = 0; i < runs.size(); ++i) {
    std::string out[2];
    for (int rep = 0; rep < 2; ++rep) {
      const auto o = dir / ("r" + std::to_string(i) + "_" + std::to_string(rep));
      const std::string cmd = std::string(FLOWATTACK_CLI) + " --deterministic " + runs[i] +
                              " --out " + o.string() + " > " + (o.string() + ".log") +
                              " 2>&1";
      const int st = std::system(cmd.c_str());
      if (!WIFEXITED(st) || WEXITSTATUS(st) != 0) {
        failed += " [exit " + std::to_string(st) + ": " + runs[i] + "]";
      }
      out[rep] = flowattack::testing::slurp(o / "run_report.jsonl");
    }
    if (!out[0].empty() && out[0] == out[1]) ++same;
  }
  return {same == static_cast<int>(runs.size()) && failed.empty(),
          std::to_string(same) + "/" + std::to_string(runs.size()) +
              " repeated CLI runs byte-identical" + failed};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<int, std::function<Outcome()>>> all = {
      {1, gradient_oracle},    {2, constraint_exactness}, {3, budget_sweep},
      {4, erase_motion},       {5, universal_ordering},   {6, patch_formula},
      {7, trivial_oracles},    {8, format_fidelity},      {9, cli_determinism},
  };
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
  bool ok = true;
  for (const auto& [id, fn] : all) {
    if (!only.empty() && !only.count(id)) continue;
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    std::printf("criterion %d: %s  %s\n", id, o.pass ? "PASS" : "FAIL", o.detail.c_str());
    std::fflush(stdout);
    ok = ok && o.pass;
  }
  return ok ? 0 : 1;
}
