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

// Differentiable optical flow: an unrolled Horn-Schunck solver (optionally
// coarse-to-fine with warping) together with its exact reverse-mode adjoint.
//
// Per level the solver linearizes the brightness constancy residual
//   r = Ix * u + Iy * v + It'
// and runs a fixed number of Jacobi sweeps on the Euler-Lagrange system of
//   E(u, v) = 1/2 sum r^2 + 1/2 alpha^2 sum_edges (|du|^2 + |dv|^2),
// which with a replicate-boundary 4-neighbour mean (ubar, vbar) reads
//   u <- ubar - Ix * P / D,   v <- vbar - Iy * P / D,
//   P = Ix * ubar + Iy * vbar + It',   D = 4 alpha^2 + Ix^2 + Iy^2.
// The iteration count is fixed, so the map frames -> flow is a static
// computation graph whose transpose is implemented by ForwardPass::backward.

#ifndef FLOWATTACK_DIFFFLOW_HPP_
#define FLOWATTACK_DIFFFLOW_HPP_

#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "flowattack/core.hpp"

namespace flowattack {

struct EstimatorConfig {
  double alpha = 0.02;   // smoothness weight
  int iterations = 80;   // Jacobi sweeps per pyramid level
  int pyramid_levels = 1;
  bool warp = false;     // warp the second frame by the coarse flow per level
};

inline void validate(const EstimatorConfig& c) {
  if (!(c.alpha > 0.0) || !std::isfinite(c.alpha)) {
    throw ConfigError("estimator alpha must be a positive finite number");
  }
  if (c.iterations < 1) throw ConfigError("estimator iterations must be >= 1");
  if (c.pyramid_levels < 1) throw ConfigError("pyramid levels must be >= 1");
}

struct FrameGradients {
  Field first;
  Field second;
};

namespace detail {

struct Plane {
  int h = 0;
  int w = 0;
  std::vector<double> v;

  Plane() = default;
  Plane(int height, int width, double fill = 0.0)
      : h(height), w(width),
        v(static_cast<std::size_t>(height) * width, fill) {}

  double& at(int y, int x) { return v[static_cast<std::size_t>(y) * w + x]; }
  double at(int y, int x) const {
    return v[static_cast<std::size_t>(y) * w + x];
  }
};

inline int clampi(int i, int n) { return i < 0 ? 0 : (i >= n ? n - 1 : i); }

inline Plane to_gray(const Field& f) {
  Plane g(f.height(), f.width());
  const double inv = 1.0 / f.channels();
  for (int c = 0; c < f.channels(); ++c) {
    for (int y = 0; y < f.height(); ++y) {
      for (int x = 0; x < f.width(); ++x) g.at(y, x) += inv * f(c, y, x);
    }
  }
  return g;
}

inline void to_gray_adjoint(const Plane& g, Field& out) {
  const double inv = 1.0 / out.channels();
  for (int c = 0; c < out.channels(); ++c) {
    for (int y = 0; y < out.height(); ++y) {
      for (int x = 0; x < out.width(); ++x) out(c, y, x) += inv * g.at(y, x);
    }
  }
}

// 2x2 box average; odd trailing rows/columns are replicated.
inline Plane downsample(const Plane& f) {
  Plane c((f.h + 1) / 2, (f.w + 1) / 2);
  for (int y = 0; y < c.h; ++y) {
    for (int x = 0; x < c.w; ++x) {
      double s = 0.0;
      for (int a = 0; a < 2; ++a) {
        for (int b = 0; b < 2; ++b) {
          s += f.at(clampi(2 * y + a, f.h), clampi(2 * x + b, f.w));
        }
      }
      c.at(y, x) = 0.25 * s;
    }
  }
  return c;
}

inline void downsample_adjoint(const Plane& gc, Plane& gf) {
  for (int y = 0; y < gc.h; ++y) {
    for (int x = 0; x < gc.w; ++x) {
      const double g = 0.25 * gc.at(y, x);
      for (int a = 0; a < 2; ++a) {
        for (int b = 0; b < 2; ++b) {
          gf.at(clampi(2 * y + a, gf.h), clampi(2 * x + b, gf.w)) += g;
        }
      }
    }
  }
}

// Nearest-neighbour expansion of a coarse flow component, rescaled to fine
// pixel units.
inline Plane upsample_flow(const Plane& c, int h, int w) {
  Plane f(h, w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) f.at(y, x) = 2.0 * c.at(y / 2, x / 2);
  }
  return f;
}

inline void upsample_flow_adjoint(const Plane& gf, Plane& gc) {
  for (int y = 0; y < gf.h; ++y) {
    for (int x = 0; x < gf.w; ++x) gc.at(y / 2, x / 2) += 2.0 * gf.at(y, x);
  }
}

// Central differences with replicated borders.
inline Plane diff_x(const Plane& p) {
  Plane d(p.h, p.w);
  for (int y = 0; y < p.h; ++y) {
    for (int x = 0; x < p.w; ++x) {
      d.at(y, x) =
          0.5 * (p.at(y, clampi(x + 1, p.w)) - p.at(y, clampi(x - 1, p.w)));
    }
  }
  return d;
}

inline Plane diff_y(const Plane& p) {
  Plane d(p.h, p.w);
  for (int y = 0; y < p.h; ++y) {
    for (int x = 0; x < p.w; ++x) {
      d.at(y, x) =
          0.5 * (p.at(clampi(y + 1, p.h), x) - p.at(clampi(y - 1, p.h), x));
    }
  }
  return d;
}

inline void diff_x_adjoint(const Plane& g, double scale, Plane& out) {
  for (int y = 0; y < g.h; ++y) {
    for (int x = 0; x < g.w; ++x) {
      const double t = 0.5 * scale * g.at(y, x);
      out.at(y, clampi(x + 1, g.w)) += t;
      out.at(y, clampi(x - 1, g.w)) -= t;
    }
  }
}

inline void diff_y_adjoint(const Plane& g, double scale, Plane& out) {
  for (int y = 0; y < g.h; ++y) {
    for (int x = 0; x < g.w; ++x) {
      const double t = 0.5 * scale * g.at(y, x);
      out.at(clampi(y + 1, g.h), x) += t;
      out.at(clampi(y - 1, g.h), x) -= t;
    }
  }
}

inline Plane average4(const Plane& p) {
  Plane a(p.h, p.w);
  for (int y = 0; y < p.h; ++y) {
    for (int x = 0; x < p.w; ++x) {
      a.at(y, x) = 0.25 * (p.at(y, clampi(x - 1, p.w)) +
                           p.at(y, clampi(x + 1, p.w)) +
                           p.at(clampi(y - 1, p.h), x) +
                           p.at(clampi(y + 1, p.h), x));
    }
  }
  return a;
}

inline void average4_adjoint(const Plane& g, Plane& out) {
  for (int y = 0; y < g.h; ++y) {
    for (int x = 0; x < g.w; ++x) {
      const double t = 0.25 * g.at(y, x);
      out.at(y, clampi(x - 1, g.w)) += t;
      out.at(y, clampi(x + 1, g.w)) += t;
      out.at(clampi(y - 1, g.h), x) += t;
      out.at(clampi(y + 1, g.h), x) += t;
    }
  }
}

// Uniform cubic B-spline kernel (C2) and its derivative.
inline double bspline(double t) {
  const double a = std::abs(t);
  if (a < 1.0) return (4.0 - 6.0 * a * a + 3.0 * a * a * a) / 6.0;
  if (a < 2.0) {
    const double b = 2.0 - a;
    return b * b * b / 6.0;
  }
  return 0.0;
}

inline double bspline_derivative(double t) {
  const double a = std::abs(t);
  if (a < 1.0) return -2.0 * t + 1.5 * t * a;
  if (a < 2.0) {
    const double b = 2.0 - a;
    return (t > 0 ? -0.5 : 0.5) * b * b;
  }
  return 0.0;
}

struct SplineTap {
  int base_x = 0;
  int base_y = 0;
  double wx[4];
  double wy[4];
  double dwx[4];
  double dwy[4];
};

inline SplineTap spline_tap(double px, double py) {
  SplineTap t;
  const double fx = std::floor(px);
  const double fy = std::floor(py);
  t.base_x = static_cast<int>(fx) - 1;
  t.base_y = static_cast<int>(fy) - 1;
  for (int k = 0; k < 4; ++k) {
    const double ox = px - (fx - 1 + k);
    const double oy = py - (fy - 1 + k);
    t.wx[k] = bspline(ox);
    t.wy[k] = bspline(oy);
    t.dwx[k] = bspline_derivative(ox);
    t.dwy[k] = bspline_derivative(oy);
  }
  return t;
}

// Samples img at (x + u, y + v) with the B-spline kernel; indices outside
// the grid are replicated from the border. u and v may be null (no shift).
inline Plane spline_sample(const Plane& img, const Plane* u, const Plane* v) {
  Plane out(img.h, img.w);
  for (int y = 0; y < img.h; ++y) {
    for (int x = 0; x < img.w; ++x) {
      const double px = x + (u ? u->at(y, x) : 0.0);
      const double py = y + (v ? v->at(y, x) : 0.0);
      const SplineTap t = spline_tap(px, py);
      double s = 0.0;
      for (int a = 0; a < 4; ++a) {
        const int yy = clampi(t.base_y + a, img.h);
        double row = 0.0;
        for (int b = 0; b < 4; ++b) {
          row += t.wx[b] * img.at(yy, clampi(t.base_x + b, img.w));
        }
        s += t.wy[a] * row;
      }
      out.at(y, x) = s;
    }
  }
  return out;
}

inline void spline_sample_adjoint(const Plane& img, const Plane* u,
                                  const Plane* v, const Plane& g, Plane& gimg,
                                  Plane* gu, Plane* gv) {
  for (int y = 0; y < img.h; ++y) {
    for (int x = 0; x < img.w; ++x) {
      const double gy = g.at(y, x);
      if (gy == 0.0) continue;
      const double px = x + (u ? u->at(y, x) : 0.0);
      const double py = y + (v ? v->at(y, x) : 0.0);
      const SplineTap t = spline_tap(px, py);
      double du = 0.0;
      double dv = 0.0;
      for (int a = 0; a < 4; ++a) {
        const int yy = clampi(t.base_y + a, img.h);
        for (int b = 0; b < 4; ++b) {
          const int xx = clampi(t.base_x + b, img.w);
          const double val = img.at(yy, xx);
          gimg.at(yy, xx) += gy * t.wy[a] * t.wx[b];
          du += t.wy[a] * t.dwx[b] * val;
          dv += t.dwy[a] * t.wx[b] * val;
        }
      }
      if (gu) gu->at(y, x) += gy * du;
      if (gv) gv->at(y, x) += gy * dv;
    }
  }
}

struct LevelTape {
  Plane gray1, gray2;
  Plane base1, warped2;
  Plane ix, iy, it, denom;
  Plane u0, v0;
  std::vector<Plane> u, v;  // Jacobi inputs, one per sweep
  Plane u_out, v_out;
};

}  // namespace detail

// Recorded forward evaluation; backward() applies the transpose Jacobian.
class ForwardPass {
 public:
  const FlowField& flow() const { return flow_; }

  // Vector-Jacobian product: gradient of <cotangent, flow> w.r.t. both
  // input frames.
  FrameGradients backward(const FlowField& cotangent) const {
    require_same_grid(cotangent, flow_, "input_gradient");
    using detail::Plane;
    const int levels = static_cast<int>(tapes_.size());
    std::vector<Plane> ggray1(levels), ggray2(levels);
    Plane gu(flow_.height(), flow_.width());
    Plane gv(flow_.height(), flow_.width());
    std::copy(cotangent.u_plane().begin(), cotangent.u_plane().end(),
              gu.v.begin());
    std::copy(cotangent.v_plane().begin(), cotangent.v_plane().end(),
              gv.v.begin());

    for (int l = 0; l < levels; ++l) {
      const detail::LevelTape& t = tapes_[l];
      const int h = t.ix.h;
      const int w = t.ix.w;
      Plane gix(h, w), giy(h, w), git(h, w);

      for (int k = static_cast<int>(t.u.size()) - 1; k >= 0; --k) {
        const Plane ub = detail::average4(t.u[k]);
        const Plane vb = detail::average4(t.v[k]);
        Plane gub(h, w), gvb(h, w);
        for (std::size_t p = 0; p < ub.v.size(); ++p) {
          const double ix = t.ix.v[p];
          const double iy = t.iy.v[p];
          const double d = t.denom.v[p];
          const double pr = ix * ub.v[p] + iy * vb.v[p] + t.it.v[p];
          const double s = (ix * gu.v[p] + iy * gv.v[p]) / d;
          gub.v[p] = gu.v[p] - ix * s;
          gvb.v[p] = gv.v[p] - iy * s;
          git.v[p] -= s;
          gix.v[p] += -gu.v[p] * pr / d - ub.v[p] * s + 2.0 * ix * pr * s / d;
          giy.v[p] += -gv.v[p] * pr / d - vb.v[p] * s + 2.0 * iy * pr * s / d;
        }
        Plane nu(h, w), nv(h, w);
        detail::average4_adjoint(gub, nu);
        detail::average4_adjoint(gvb, nv);
        gu = std::move(nu);
        gv = std::move(nv);
      }
      // gu, gv now hold the gradient w.r.t. the level's initial flow.
      Plane gbase1(h, w), gwarped2(h, w);
      for (std::size_t p = 0; p < git.v.size(); ++p) {
        gwarped2.v[p] += git.v[p];
        gbase1.v[p] -= git.v[p];
        if (config_.warp) {
          gix.v[p] -= git.v[p] * t.u0.v[p];
          giy.v[p] -= git.v[p] * t.v0.v[p];
          gu.v[p] -= git.v[p] * t.ix.v[p];
          gv.v[p] -= git.v[p] * t.iy.v[p];
        }
      }
      detail::diff_x_adjoint(gix, 0.5, gbase1);
      detail::diff_x_adjoint(gix, 0.5, gwarped2);
      detail::diff_y_adjoint(giy, 0.5, gbase1);
      detail::diff_y_adjoint(giy, 0.5, gwarped2);

      ggray1[l] = Plane(h, w);
      ggray2[l] = Plane(h, w);
      if (config_.warp) {
        detail::spline_sample_adjoint(t.gray1, nullptr, nullptr, gbase1,
                                      ggray1[l], nullptr, nullptr);
        detail::spline_sample_adjoint(t.gray2, &t.u0, &t.v0, gwarped2,
                                      ggray2[l], &gu, &gv);
      } else {
        ggray1[l].v = std::move(gbase1.v);
        ggray2[l].v = std::move(gwarped2.v);
      }

      if (l + 1 < levels) {
        const detail::LevelTape& coarse = tapes_[l + 1];
        Plane cu(coarse.ix.h, coarse.ix.w), cv(coarse.ix.h, coarse.ix.w);
        detail::upsample_flow_adjoint(gu, cu);
        detail::upsample_flow_adjoint(gv, cv);
        gu = std::move(cu);
        gv = std::move(cv);
      }
    }

    for (int l = levels - 1; l > 0; --l) {
      detail::downsample_adjoint(ggray1[l], ggray1[l - 1]);
      detail::downsample_adjoint(ggray2[l], ggray2[l - 1]);
    }
    FrameGradients out{Field(shape_), Field(shape_)};
    detail::to_gray_adjoint(ggray1[0], out.first);
    detail::to_gray_adjoint(ggray2[0], out.second);
    return out;
  }

 private:
  friend class FlowEstimator;
  EstimatorConfig config_;
  Shape shape_;
  std::vector<detail::LevelTape> tapes_;  // index 0 = finest
  FlowField flow_;
};

class FlowEstimator {
 public:
  FlowEstimator(std::string label, EstimatorConfig config)
      : label_(std::move(label)), config_(config) {
    validate(config_);
  }

  const std::string& label() const { return label_; }
  const EstimatorConfig& config() const { return config_; }

  FlowField estimate_flow(const Field& first, const Field& second) const {
    return run(first, second, /*record=*/false).flow();
  }
  FlowField estimate_flow(const Image& first, const Image& second) const {
    return estimate_flow(first.field(), second.field());
  }

  ForwardPass forward(const Field& first, const Field& second) const {
    return run(first, second, /*record=*/true);
  }

  FrameGradients input_gradient(const Field& first, const Field& second,
                                const FlowField& cotangent) const {
    return forward(first, second).backward(cotangent);
  }

 private:
  ForwardPass run(const Field& first, const Field& second, bool record) const {
    if (first.shape() != second.shape()) {
      throw StructuralError("estimate_flow: frame shapes differ " +
                            to_string(first.shape()) + " vs " +
                            to_string(second.shape()));
    }
    using detail::Plane;
    const int levels = config_.pyramid_levels;
    ForwardPass pass;
    pass.config_ = config_;
    pass.shape_ = first.shape();
    pass.tapes_.resize(levels);

    pass.tapes_[0].gray1 = detail::to_gray(first);
    pass.tapes_[0].gray2 = detail::to_gray(second);
    for (int l = 1; l < levels; ++l) {
      pass.tapes_[l].gray1 = detail::downsample(pass.tapes_[l - 1].gray1);
      pass.tapes_[l].gray2 = detail::downsample(pass.tapes_[l - 1].gray2);
    }

    const double a4 = 4.0 * config_.alpha * config_.alpha;
    for (int l = levels - 1; l >= 0; --l) {
      detail::LevelTape& t = pass.tapes_[l];
      const int h = t.gray1.h;
      const int w = t.gray1.w;
      if (l == levels - 1) {
        t.u0 = Plane(h, w);
        t.v0 = Plane(h, w);
      } else {
        t.u0 = detail::upsample_flow(pass.tapes_[l + 1].u_out, h, w);
        t.v0 = detail::upsample_flow(pass.tapes_[l + 1].v_out, h, w);
      }
      if (config_.warp) {
        t.base1 = detail::spline_sample(t.gray1, nullptr, nullptr);
        t.warped2 = detail::spline_sample(t.gray2, &t.u0, &t.v0);
      } else {
        t.base1 = t.gray1;
        t.warped2 = t.gray2;
      }
      const Plane dx1 = detail::diff_x(t.base1);
      const Plane dx2 = detail::diff_x(t.warped2);
      const Plane dy1 = detail::diff_y(t.base1);
      const Plane dy2 = detail::diff_y(t.warped2);
      t.ix = Plane(h, w);
      t.iy = Plane(h, w);
      t.it = Plane(h, w);
      t.denom = Plane(h, w);
      for (std::size_t p = 0; p < t.ix.v.size(); ++p) {
        const double ix = 0.5 * (dx1.v[p] + dx2.v[p]);
        const double iy = 0.5 * (dy1.v[p] + dy2.v[p]);
        double it = t.warped2.v[p] - t.base1.v[p];
        if (config_.warp) it -= ix * t.u0.v[p] + iy * t.v0.v[p];
        t.ix.v[p] = ix;
        t.iy.v[p] = iy;
        t.it.v[p] = it;
        t.denom.v[p] = a4 + ix * ix + iy * iy;
      }

      Plane u = t.u0;
      Plane v = t.v0;
      if (record) {
        t.u.reserve(config_.iterations);
        t.v.reserve(config_.iterations);
      }
      for (int k = 0; k < config_.iterations; ++k) {
        const Plane ub = detail::average4(u);
        const Plane vb = detail::average4(v);
        if (record) {
          t.u.push_back(std::move(u));
          t.v.push_back(std::move(v));
        }
        u = Plane(h, w);
        v = Plane(h, w);
        for (std::size_t p = 0; p < u.v.size(); ++p) {
          const double pr = t.ix.v[p] * ub.v[p] + t.iy.v[p] * vb.v[p] +
                            t.it.v[p];
          u.v[p] = ub.v[p] - t.ix.v[p] * pr / t.denom.v[p];
          v.v[p] = vb.v[p] - t.iy.v[p] * pr / t.denom.v[p];
        }
      }
      t.u_out = std::move(u);
      t.v_out = std::move(v);
    }

    const detail::LevelTape& fine = pass.tapes_[0];
    pass.flow_ = FlowField(fine.u_out.h, fine.u_out.w);
    std::copy(fine.u_out.v.begin(), fine.u_out.v.end(),
              pass.flow_.u_plane().begin());
    std::copy(fine.v_out.v.begin(), fine.v_out.v.end(),
              pass.flow_.v_plane().begin());
    if (!all_finite(pass.flow_.values())) {
      throw NumericError("estimate_flow produced non-finite values");
    }
    if (!record) pass.tapes_.clear();
    return pass;
  }

  std::string label_;
  EstimatorConfig config_;
};

// The two shipped estimators: a single-level solver and a three-level
// coarse-to-fine variant with warping.
inline FlowEstimator builtin_estimator(const std::string& name) {
  if (name == "hs") {
    return FlowEstimator("hs", EstimatorConfig{0.02, 80, 1, false});
  }
  if (name == "hs-pyramid") {
    return FlowEstimator("hs-pyramid", EstimatorConfig{0.02, 40, 3, true});
  }
  throw ConfigError("unknown built-in estimator '" + name +
                    "' (expected hs or hs-pyramid)");
}

inline std::vector<std::string> builtin_estimator_names() {
  return {"hs", "hs-pyramid"};
}

// Scalar loss on a flow field. Returns the value and, when grad is non-null,
// writes dL/dflow into it.
using FlowLoss = std::function<double(const FlowField&, FlowField* grad)>;

struct GradientCheckOptions {
  int samples = 64;
  std::uint64_t seed = 0;
  // Coordinates with |gradient| below this fraction of the largest sampled
  // magnitude are compared on that absolute scale instead.
  double floor_fraction = 1e-2;
};

// Max relative error between `analytic` and central differences of f at x,
// over a random sample of coordinates. Uses the five-point central stencil
// (error O(h^4)); the estimator varies fast enough in the intensities that the
// three-point stencil's truncation error alone is ~1e-3 at h = 1e-3.
inline double central_difference_check(
    const std::function<double(std::span<const double>)>& f,
    std::span<const double> x, std::span<const double> analytic, double h,
    const GradientCheckOptions& opts = {}) {
  if (!(h > 0.0)) throw ConfigError("finite difference step must be > 0");
  if (x.size() != analytic.size()) {
    throw StructuralError("gradient check: size mismatch");
  }
  std::vector<std::size_t> coords(x.size());
  for (std::size_t i = 0; i < coords.size(); ++i) coords[i] = i;
  std::mt19937_64 rng(opts.seed);
  std::shuffle(coords.begin(), coords.end(), rng);
  if (coords.size() > static_cast<std::size_t>(opts.samples)) {
    coords.resize(opts.samples);
  }

  std::vector<double> xp(x.begin(), x.end());
  std::vector<double> numeric(coords.size());
  double scale = 0.0;
  for (std::size_t k = 0; k < coords.size(); ++k) {
    const std::size_t i = coords[k];
    auto at = [&](double offset) {
      xp[i] = x[i] + offset;
      const double v = f(xp);
      xp[i] = x[i];
      return v;
    };
    numeric[k] = (8.0 * (at(h) - at(-h)) - (at(2.0 * h) - at(-2.0 * h))) /
                 (12.0 * h);
    scale = std::max(scale, std::abs(analytic[i]));
  }
  const double floor = opts.floor_fraction * scale;
  double worst = 0.0;
  for (std::size_t k = 0; k < coords.size(); ++k) {
    const double a = analytic[coords[k]];
    const double n = numeric[k];
    const double denom = std::max({std::abs(a), std::abs(n), floor});
    if (denom == 0.0) continue;
    worst = std::max(worst, std::abs(a - n) / denom);
  }
  return worst;
}

// Checks input_gradient of loss(estimate_flow(I1, I2)) against central
// differences on the frame values.
inline double finite_diff_check(const FlowEstimator& e, const Field& first,
                                const Field& second, const FlowLoss& loss,
                                double h, const GradientCheckOptions& opts = {}) {
  if (!(h > 0.0)) throw ConfigError("finite difference step must be > 0");
  const std::size_t n = first.size();
  std::vector<double> x(first.values().begin(), first.values().end());
  x.insert(x.end(), second.values().begin(), second.values().end());

  const ForwardPass pass = e.forward(first, second);
  FlowField cot(pass.flow().height(), pass.flow().width());
  loss(pass.flow(), &cot);
  const FrameGradients g = pass.backward(cot);
  std::vector<double> analytic(g.first.values().begin(),
                               g.first.values().end());
  analytic.insert(analytic.end(), g.second.values().begin(),
                  g.second.values().end());

  auto f = [&](std::span<const double> z) {
    Field a(first.shape(),
            std::vector<double>(z.begin(), z.begin() + static_cast<long>(n)));
    Field b(first.shape(),
            std::vector<double>(z.begin() + static_cast<long>(n), z.end()));
    return loss(e.estimate_flow(a, b), nullptr);
  };
  return central_difference_check(f, x, analytic, h, opts);
}

}  // namespace flowattack

#endif  // FLOWATTACK_DIFFFLOW_HPP_
