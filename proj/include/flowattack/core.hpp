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

#ifndef FLOWATTACK_CORE_HPP_
#define FLOWATTACK_CORE_HPP_

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <exception>
#include <functional>
#include <mutex>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <variant>
#include <vector>

namespace flowattack {

// Error hierarchy. The CLI maps these onto process exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Shapes of two operands disagree, or a dimension is out of range.
class StructuralError : public Error {
 public:
  using Error::Error;
};

// Non-finite values or a failed numerical procedure.
class NumericError : public Error {
 public:
  using Error::Error;
};

// A file could not be opened, read or written.
class IoError : public Error {
 public:
  using Error::Error;
};

// A file was readable but its content does not follow the expected format.
class FormatError : public Error {
 public:
  using Error::Error;
};

// Invalid user configuration (unknown keys, out-of-range hyperparameters).
class ConfigError : public Error {
 public:
  using Error::Error;
};

struct Shape {
  int channels = 0;
  int height = 0;
  int width = 0;

  std::size_t size() const {
    return static_cast<std::size_t>(channels) * height * width;
  }
  std::size_t pixels() const {
    return static_cast<std::size_t>(height) * width;
  }
  friend bool operator==(const Shape&, const Shape&) = default;
};

inline std::string to_string(const Shape& s) {
  return std::to_string(s.channels) + "x" + std::to_string(s.height) + "x" +
         std::to_string(s.width);
}

// Dense C x M x N real array, channel-outermost then row-major. Values are
// unconstrained; see Image for the validated [0,1] frame type.
class Field {
 public:
  Field() = default;
  explicit Field(Shape shape, double fill = 0.0)
      : shape_(shape), data_(shape.size(), fill) {
    if (shape.channels < 1 || shape.height < 1 || shape.width < 1) {
      throw StructuralError("field dimensions must be positive, got " +
                            to_string(shape));
    }
  }
  Field(Shape shape, std::vector<double> data)
      : shape_(shape), data_(std::move(data)) {
    if (shape.channels < 1 || shape.height < 1 || shape.width < 1) {
      throw StructuralError("field dimensions must be positive, got " +
                            to_string(shape));
    }
    if (data_.size() != shape.size()) {
      throw StructuralError("field data length " +
                            std::to_string(data_.size()) +
                            " does not match shape " + to_string(shape));
    }
  }

  const Shape& shape() const { return shape_; }
  int channels() const { return shape_.channels; }
  int height() const { return shape_.height; }
  int width() const { return shape_.width; }
  std::size_t size() const { return data_.size(); }

  double& operator()(int c, int y, int x) {
    return data_[(static_cast<std::size_t>(c) * shape_.height + y) *
                     shape_.width +
                 x];
  }
  double operator()(int c, int y, int x) const {
    return data_[(static_cast<std::size_t>(c) * shape_.height + y) *
                     shape_.width +
                 x];
  }

  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }
  const std::vector<double>& data() const { return data_; }

  friend bool operator==(const Field&, const Field&) = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

inline bool all_finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(),
                     [](double x) { return std::isfinite(x); });
}

inline double l2_norm_squared(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return s;
}

inline double linf_norm(std::span<const double> v) {
  double m = 0.0;
  for (double x : v) m = std::max(m, std::abs(x));
  return m;
}

// A frame with every value in [0,1]. Construction validates; perturbed
// intermediates that may leave the range stay plain Fields.
class Image {
 public:
  Image() = default;
  explicit Image(Field field) : field_(std::move(field)) {
    for (double v : field_.values()) {
      if (!(v >= 0.0 && v <= 1.0)) {
        throw NumericError("image value outside [0,1]: " + std::to_string(v));
      }
    }
  }
  Image(Shape shape, std::vector<double> data)
      : Image(Field(shape, std::move(data))) {}

  const Field& field() const { return field_; }
  const Shape& shape() const { return field_.shape(); }
  int channels() const { return field_.channels(); }
  int height() const { return field_.height(); }
  int width() const { return field_.width(); }
  double operator()(int c, int y, int x) const { return field_(c, y, x); }
  std::span<const double> values() const { return field_.values(); }

  friend bool operator==(const Image&, const Image&) = default;

 private:
  Field field_;
};

// Displacement field in pixels: u (horizontal) plane followed by v (vertical).
class FlowField {
 public:
  FlowField() = default;
  FlowField(int height, int width)
      : height_(height), width_(width),
        data_(2 * static_cast<std::size_t>(height) * width, 0.0) {
    if (height < 1 || width < 1) {
      throw StructuralError("flow dimensions must be positive");
    }
  }

  int height() const { return height_; }
  int width() const { return width_; }
  std::size_t pixels() const {
    return static_cast<std::size_t>(height_) * width_;
  }

  double& u(int y, int x) {
    return data_[static_cast<std::size_t>(y) * width_ + x];
  }
  double u(int y, int x) const {
    return data_[static_cast<std::size_t>(y) * width_ + x];
  }
  double& v(int y, int x) {
    return data_[pixels() + static_cast<std::size_t>(y) * width_ + x];
  }
  double v(int y, int x) const {
    return data_[pixels() + static_cast<std::size_t>(y) * width_ + x];
  }

  std::span<double> u_plane() { return {data_.data(), pixels()}; }
  std::span<const double> u_plane() const { return {data_.data(), pixels()}; }
  std::span<double> v_plane() { return {data_.data() + pixels(), pixels()}; }
  std::span<const double> v_plane() const {
    return {data_.data() + pixels(), pixels()};
  }
  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }

  bool same_grid(const FlowField& o) const {
    return height_ == o.height_ && width_ == o.width_;
  }

  friend bool operator==(const FlowField&, const FlowField&) = default;

 private:
  int height_ = 0;
  int width_ = 0;
  std::vector<double> data_;
};

inline void require_same_grid(const FlowField& a, const FlowField& b,
                              const char* what) {
  if (!a.same_grid(b)) {
    throw StructuralError(std::string(what) + ": flow grids differ (" +
                          std::to_string(a.height()) + "x" +
                          std::to_string(a.width()) + " vs " +
                          std::to_string(b.height()) + "x" +
                          std::to_string(b.width()) + ")");
  }
}

inline FlowField negated(const FlowField& f) {
  FlowField out = f;
  for (double& x : out.values()) x = -x;
  return out;
}

enum class PerturbationMode { kDisjoint, kJoint };

// Additive input distortion. Disjoint holds one field per frame; Joint holds
// a single field added to both frames.
class Perturbation {
 public:
  struct Disjoint {
    Field first;
    Field second;
  };
  struct Joint {
    Field shared;
  };

  static Perturbation disjoint(Field first, Field second) {
    if (first.shape() != second.shape()) {
      throw StructuralError("disjoint perturbation fields differ in shape: " +
                            to_string(first.shape()) + " vs " +
                            to_string(second.shape()));
    }
    return Perturbation(Disjoint{std::move(first), std::move(second)});
  }
  static Perturbation joint(Field shared) {
    return Perturbation(Joint{std::move(shared)});
  }
  static Perturbation zeros(PerturbationMode mode, Shape shape) {
    return mode == PerturbationMode::kJoint
               ? joint(Field(shape))
               : disjoint(Field(shape), Field(shape));
  }

  PerturbationMode mode() const {
    return std::holds_alternative<Joint>(value_) ? PerturbationMode::kJoint
                                                 : PerturbationMode::kDisjoint;
  }
  const Shape& shape() const { return for_frame(0).shape(); }

  // Field added to frame z (0 = first, 1 = second).
  const Field& for_frame(int z) const {
    if (const auto* j = std::get_if<Joint>(&value_)) return j->shared;
    const auto& d = std::get<Disjoint>(value_);
    return z == 0 ? d.first : d.second;
  }

  // Distinct stored fields: two for Disjoint, one for Joint.
  std::vector<const Field*> stored_fields() const {
    if (const auto* j = std::get_if<Joint>(&value_)) return {&j->shared};
    const auto& d = std::get<Disjoint>(value_);
    return {&d.first, &d.second};
  }

  Perturbation scaled(double c) const {
    auto scale = [c](Field f) {
      for (double& x : f.values()) x *= c;
      return f;
    };
    if (const auto* j = std::get_if<Joint>(&value_)) {
      return joint(scale(j->shared));
    }
    const auto& d = std::get<Disjoint>(value_);
    return disjoint(scale(d.first), scale(d.second));
  }

  friend bool operator==(const Perturbation& a, const Perturbation& b) {
    if (a.mode() != b.mode()) return false;
    return a.for_frame(0) == b.for_frame(0) && a.for_frame(1) == b.for_frame(1);
  }

 private:
  explicit Perturbation(std::variant<Disjoint, Joint> v)
      : value_(std::move(v)) {}
  std::variant<Disjoint, Joint> value_;
};

// ||delta_t, delta_{t+1}||_2 over both frames. A joint field contributes once
// per frame so disjoint and joint budgets mean the same input energy.
inline double joint_l2_norm(const Perturbation& p) {
  const Field& a = p.for_frame(0);
  const Field& b = p.for_frame(1);
  if (a.shape() != b.shape()) {
    throw StructuralError("perturbation fields differ in shape");
  }
  return std::sqrt(l2_norm_squared(a.values()) + l2_norm_squared(b.values()));
}

inline double joint_linf_norm(const Perturbation& p) {
  return std::max(linf_norm(p.for_frame(0).values()),
                  linf_norm(p.for_frame(1).values()));
}

// Absolute bound for a per-pixel budget: eps2 * sqrt(2 I C).
inline double scale_bound(double eps2, std::size_t pixels, int channels) {
  if (!(eps2 >= 0.0) || pixels < 1 || channels < 1) {
    throw ConfigError("scale_bound requires eps2 >= 0, I >= 1, C >= 1");
  }
  return eps2 * std::sqrt(2.0 * static_cast<double>(pixels) * channels);
}

inline Image clip01(const Field& frame) {
  Field out = frame;
  for (double& v : out.values()) {
    if (!std::isfinite(v)) throw NumericError("clip01: non-finite input");
    v = std::clamp(v, 0.0, 1.0);
  }
  return Image(std::move(out));
}

inline Field add(const Field& a, const Field& b) {
  if (a.shape() != b.shape()) {
    throw StructuralError("add: shapes differ " + to_string(a.shape()) +
                          " vs " + to_string(b.shape()));
  }
  Field out = a;
  auto o = out.values();
  auto bv = b.values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] += bv[i];
  return out;
}

inline Field subtract(const Field& a, const Field& b) {
  if (a.shape() != b.shape()) {
    throw StructuralError("subtract: shapes differ " + to_string(a.shape()) +
                          " vs " + to_string(b.shape()));
  }
  Field out = a;
  auto o = out.values();
  auto bv = b.values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] -= bv[i];
  return out;
}

// Runs fn(i) for i in [0, n) on up to `jobs` threads. Exceptions from workers
// are rethrown on the calling thread (first one wins).
inline void parallel_for(std::size_t n, int jobs,
                         const std::function<void(std::size_t)>& fn) {
  if (jobs <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  const std::size_t workers = std::min<std::size_t>(jobs, n);
  std::exception_ptr failure;
  std::mutex mu;
  std::size_t next = 0;
  {
    std::vector<std::jthread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (;;) {
          std::size_t i;
          {
            std::lock_guard lock(mu);
            if (next >= n || failure) return;
            i = next++;
          }
          try {
            fn(i);
          } catch (...) {
            std::lock_guard lock(mu);
            if (!failure) failure = std::current_exception();
          }
        }
      });
    }
  }
  if (failure) std::rethrow_exception(failure);
}

}  // namespace flowattack

#endif  // FLOWATTACK_CORE_HPP_
