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

#ifndef FLOWATTACK_OPTIM_HPP_
#define FLOWATTACK_OPTIM_HPP_

#include <algorithm>
#include <cmath>
#include <concepts>
#include <deque>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "flowattack/core.hpp"

namespace flowattack {

struct LineSearchParams {
  double initial_step = 1.0;
  double contraction = 0.5;
  double sufficient_decrease = 1e-4;
  int max_backtracks = 30;  // t down to ~2e-9, then give up
};

struct LbfgsParams {
  int max_steps = 20;
  int history = 10;  // 0 degenerates to steepest descent
  LineSearchParams line_search;
  double grad_tol = 0.0;
};

inline void validate(const LbfgsParams& p) {
  if (p.max_steps < 1) throw ConfigError("L-BFGS max_steps must be >= 1");
  if (p.history < 0) throw ConfigError("L-BFGS history must be >= 0");
  const auto& ls = p.line_search;
  if (!(ls.contraction > 0.0 && ls.contraction < 1.0)) {
    throw ConfigError("line search contraction must lie in (0,1)");
  }
  if (!(ls.sufficient_decrease > 0.0 && ls.sufficient_decrease < 1.0)) {
    throw ConfigError("sufficient-decrease constant must lie in (0,1)");
  }
  if (!(ls.initial_step > 0.0)) {
    throw ConfigError("line search initial step must be > 0");
  }
  if (ls.max_backtracks < 1) {
    throw ConfigError("line search needs at least one backtrack");
  }
  if (!(p.grad_tol >= 0.0)) throw ConfigError("grad_tol must be >= 0");
}

struct OptimStep {
  double value = 0.0;
  double grad_norm = 0.0;
  double step_length = 0.0;
};

struct OptimTrace {
  double initial_value = 0.0;
  double initial_grad_norm = 0.0;
  std::vector<OptimStep> steps;

  double final_value() const {
    return steps.empty() ? initial_value : steps.back().value;
  }
};

class OptimizerError : public NumericError {
 public:
  OptimizerError(const std::string& what, OptimTrace trace)
      : NumericError(what), trace_(std::move(trace)) {}
  const OptimTrace& trace() const { return trace_; }

 private:
  OptimTrace trace_;
};

// Objective: writes the gradient into `grad` and returns the value.
template <typename F>
concept Objective = requires(F f, std::span<const double> x,
                             std::span<double> g) {
  { f(x, g) } -> std::convertible_to<double>;
};

enum class StepStatus { kAccepted, kConverged, kLineSearchFailed };

// Limited-memory BFGS with a backtracking Armijo line search. The curvature
// history persists across step() calls, so the same instance can be driven
// on a changing objective (minibatches).
class Lbfgs {
 public:
  explicit Lbfgs(LbfgsParams params) : params_(params) { validate(params_); }

  const LbfgsParams& params() const { return params_; }
  std::size_t history_size() const { return pairs_.size(); }

  // One iteration from (x, value, grad). On acceptance x, value and grad are
  // replaced by the new iterate and its evaluation.
  template <Objective F>
  StepStatus step(F& f, std::vector<double>& x, double& value,
                  std::vector<double>& grad, OptimStep* record) {
    const double gnorm = std::sqrt(l2_norm_squared(grad));
    if (gnorm <= params_.grad_tol || gnorm == 0.0) return StepStatus::kConverged;

    std::vector<double> d = direction(grad);
    double slope = dot(grad, d);
    if (!(slope < 0.0)) {
      pairs_.clear();
      d = direction(grad);
      slope = dot(grad, d);
    }

    const auto& ls = params_.line_search;
    std::vector<double> trial(x.size());
    std::vector<double> trial_grad(x.size());
    double t = ls.initial_step;
    for (int k = 0; k < ls.max_backtracks; ++k, t *= ls.contraction) {
      for (std::size_t i = 0; i < x.size(); ++i) trial[i] = x[i] + t * d[i];
      const double fv = f(std::span<const double>(trial),
                          std::span<double>(trial_grad));
      if (!std::isfinite(fv) || !all_finite(trial_grad)) {
        throw NumericError("non-finite objective or gradient in line search");
      }
      if (fv <= value + ls.sufficient_decrease * t * slope) {
        remember(trial, x, trial_grad, grad);
        x.swap(trial);
        grad.swap(trial_grad);
        value = fv;
        if (record) {
          *record = {fv, std::sqrt(l2_norm_squared(grad)), t};
        }
        return StepStatus::kAccepted;
      }
    }
    return StepStatus::kLineSearchFailed;
  }

 private:
  struct Pair {
    std::vector<double> s;
    std::vector<double> y;
    double rho;
  };

  static double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
  }

  void remember(const std::vector<double>& x_new,
                const std::vector<double>& x_old,
                const std::vector<double>& g_new,
                const std::vector<double>& g_old) {
    if (params_.history == 0) return;
    Pair p;
    p.s.resize(x_new.size());
    p.y.resize(x_new.size());
    for (std::size_t i = 0; i < x_new.size(); ++i) {
      p.s[i] = x_new[i] - x_old[i];
      p.y[i] = g_new[i] - g_old[i];
    }
    const double sy = dot(p.s, p.y);
    const double sn = std::sqrt(l2_norm_squared(p.s));
    const double yn = std::sqrt(l2_norm_squared(p.y));
    if (!(sy > 1e-10 * sn * yn) || sy <= 0.0) return;  // skip, keeps H > 0
    p.rho = 1.0 / sy;
    pairs_.push_back(std::move(p));
    if (pairs_.size() > static_cast<std::size_t>(params_.history)) {
      pairs_.pop_front();
    }
  }

  // Two-loop recursion: returns -H * grad.
  std::vector<double> direction(const std::vector<double>& grad) const {
    std::vector<double> q = grad;
    std::vector<double> alpha(pairs_.size());
    for (std::size_t k = pairs_.size(); k-- > 0;) {
      alpha[k] = pairs_[k].rho * dot(pairs_[k].s, q);
      for (std::size_t i = 0; i < q.size(); ++i) q[i] -= alpha[k] * pairs_[k].y[i];
    }
    // Without curvature pairs the trial step is capped at unit length;
    // H0 = I from a steep start lands in a region where Armijo-only
    // backtracking never recovers a useful scale (Rosenbrock stalls).
    double gamma = std::min(1.0, 1.0 / std::sqrt(l2_norm_squared(grad)));
    if (!pairs_.empty()) {
      const Pair& last = pairs_.back();
      gamma = 1.0 / (last.rho * l2_norm_squared(last.y));
    }
    for (double& v : q) v *= gamma;
    for (std::size_t k = 0; k < pairs_.size(); ++k) {
      const double beta = pairs_[k].rho * dot(pairs_[k].y, q);
      for (std::size_t i = 0; i < q.size(); ++i) {
        q[i] += (alpha[k] - beta) * pairs_[k].s[i];
      }
    }
    for (double& v : q) v = -v;
    return q;
  }

  LbfgsParams params_;
  std::deque<Pair> pairs_;
};

struct LbfgsResult {
  std::vector<double> x;
  OptimTrace trace;
};

// Minimizes f from x0 for at most params.max_steps accepted steps. Stops early
// when the gradient norm drops to grad_tol or the line search cannot make
// progress. Accepted values are non-increasing.
template <Objective F>
LbfgsResult lbfgs_minimize(F&& f, std::vector<double> x0,
                           const LbfgsParams& params) {
  Lbfgs opt(params);
  LbfgsResult r;
  r.x = std::move(x0);
  std::vector<double> grad(r.x.size());
  double value =
      f(std::span<const double>(r.x), std::span<double>(grad));
  if (!std::isfinite(value) || !all_finite(grad)) {
    throw OptimizerError("objective is not finite at the starting point",
                         r.trace);
  }
  r.trace.initial_value = value;
  r.trace.initial_grad_norm = std::sqrt(l2_norm_squared(grad));
  for (int k = 0; k < params.max_steps; ++k) {
    OptimStep rec;
    StepStatus st;
    try {
      st = opt.step(f, r.x, value, grad, &rec);
    } catch (const NumericError& e) {
      throw OptimizerError(e.what(), r.trace);
    }
    if (st != StepStatus::kAccepted) break;
    r.trace.steps.push_back(rec);
  }
  return r;
}

}  // namespace flowattack

#endif  // FLOWATTACK_OPTIM_HPP_
