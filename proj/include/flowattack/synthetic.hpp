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

// Seeded synthetic frame pairs: smooth band-limited textures translated by a
// known sub-pixel displacement. Used by the test suites and the CLI demo.

#ifndef FLOWATTACK_SYNTHETIC_HPP_
#define FLOWATTACK_SYNTHETIC_HPP_

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <vector>

#include "flowattack/attack.hpp"
#include "flowattack/core.hpp"

namespace flowattack {

struct SyntheticPair {
  Image first;
  Image second;
  FlowField ground_truth;
};

struct TextureSpec {
  int waves = 6;
  double min_wavelength = 6.0;
  double max_wavelength = 20.0;
  double contrast = 0.35;  // peak deviation from mid-gray
  double noise = 0.0;      // iid uniform noise amplitude added per pixel
};

// Second frame is the first translated by (dx, dy): I2(x) = I1(x - d).
inline SyntheticPair translating_pair(Shape shape, double dx, double dy,
                                      std::uint64_t seed,
                                      const TextureSpec& spec = {}) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  struct Wave {
    double kx, ky, phase, amp;
  };
  std::vector<std::vector<Wave>> waves(shape.channels);
  for (auto& ch : waves) {
    double total = 0.0;
    for (int k = 0; k < spec.waves; ++k) {
      const double lambda = spec.min_wavelength +
                            (spec.max_wavelength - spec.min_wavelength) * unit(rng);
      const double theta = 2.0 * std::numbers::pi * unit(rng);
      const double freq = 2.0 * std::numbers::pi / lambda;
      Wave w{freq * std::cos(theta), freq * std::sin(theta),
             2.0 * std::numbers::pi * unit(rng), 0.5 + unit(rng)};
      total += w.amp;
      ch.push_back(w);
    }
    for (auto& w : ch) w.amp *= spec.contrast / total;
  }
  auto texture = [&](int c, double x, double y) {
    double s = 0.5;
    for (const Wave& w : waves[c]) s += w.amp * std::sin(w.kx * x + w.ky * y + w.phase);
    return s;
  };

  Field a(shape), b(shape);
  for (int c = 0; c < shape.channels; ++c) {
    for (int y = 0; y < shape.height; ++y) {
      for (int x = 0; x < shape.width; ++x) {
        a(c, y, x) = texture(c, x, y);
        b(c, y, x) = texture(c, x - dx, y - dy);
      }
    }
  }
  if (spec.noise > 0.0) {
    std::uniform_real_distribution<double> n(-spec.noise, spec.noise);
    for (double& v : a.values()) v += n(rng);
    for (double& v : b.values()) v += n(rng);
  }
  SyntheticPair p{clip01(a), clip01(b), FlowField(shape.height, shape.width)};
  for (double& u : p.ground_truth.u_plane()) u = dx;
  for (double& v : p.ground_truth.v_plane()) v = dy;
  return p;
}

// Fixed suite of `count` 3-channel pairs with displacements of 0.5 to 1.5 px
// in random directions.
inline std::vector<SyntheticPair> synthetic_suite(int count, int size,
                                                  std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<SyntheticPair> out;
  out.reserve(count);
  for (int i = 0; i < count; ++i) {
    const double mag = 0.5 + unit(rng);
    const double ang = 2.0 * std::numbers::pi * unit(rng);
    out.push_back(translating_pair(Shape{3, size, size}, mag * std::cos(ang),
                                   mag * std::sin(ang), rng()));
  }
  return out;
}

// A small noisy pair for gradient checks.
inline SyntheticPair random_pair(int size, std::uint64_t seed, int channels = 3) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> shift(-1.0, 1.0);
  TextureSpec spec;
  spec.noise = 0.02;
  const double dx = shift(rng);
  const double dy = shift(rng);
  return translating_pair(Shape{channels, size, size}, dx, dy, rng(), spec);
}

inline std::vector<FramePair> frame_pairs(const std::vector<SyntheticPair>& s) {
  std::vector<FramePair> out;
  out.reserve(s.size());
  for (const auto& p : s) out.push_back({p.first, p.second});
  return out;
}

}  // namespace flowattack

#endif  // FLOWATTACK_SYNTHETIC_HPP_
