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

#include <cmath>
#include <cstring>
#include <random>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "flowattack/io.hpp"
#include "test_util.hpp"

namespace flowattack {
namespace {

using testing::TempDir;

// Values exactly representable in float32, as the .flo payload stores them.
FlowField random_float_flow(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> dim(1, 40);
  std::normal_distribution<float> d(0.0f, 20.0f);
  FlowField f(dim(rng), dim(rng));
  for (double& v : f.values()) v = d(rng);
  return f;
}

std::vector<std::uint8_t> bytes_of(const std::string& s) {
  return {s.begin(), s.end()};
}

TEST(Flo, OnePixelLayout) {
  FlowField f(1, 1);
  f.u(0, 0) = 1.5;
  f.v(0, 0) = -2.25;
  const auto b = encode_flo(f);
  ASSERT_EQ(b.size(), 20u);
  EXPECT_EQ(std::string(b.begin(), b.begin() + 4), "PIEH");
  float u, v;
  std::memcpy(&u, b.data() + 12, 4);
  std::memcpy(&v, b.data() + 16, 4);
  EXPECT_EQ(u, 1.5f);
  EXPECT_EQ(v, -2.25f);
  EXPECT_EQ(b[4], 1);
  EXPECT_EQ(b[8], 1);
}

TEST(Flo, RoundTripIsBitExact) {
  TempDir dir;
  std::mt19937_64 rng(42);
  for (int i = 0; i < 100; ++i) {
    const FlowField f = random_float_flow(rng);
    const auto path = dir / "f.flo";
    write_flo(path, f);
    const FlowField g = read_flo(path);
    ASSERT_EQ(g.height(), f.height());
    ASSERT_EQ(g.width(), f.width());
    EXPECT_EQ(std::memcmp(f.values().data(), g.values().data(),
                          f.values().size() * sizeof(double)),
              0);
    EXPECT_EQ(encode_flo(g), detail::read_file(path));
  }
}

TEST(Flo, RejectsMalformed) {
  auto good = encode_flo(FlowField(2, 3));
  auto bad = good;
  std::memcpy(bad.data(), "XXXX", 4);
  EXPECT_THROW(decode_flo(bad), FormatError);
  auto truncated = good;
  truncated.pop_back();
  EXPECT_THROW(decode_flo(truncated), FormatError);
  auto trailing = good;
  trailing.push_back(0);
  EXPECT_THROW(decode_flo(trailing), FormatError);
  auto negative = good;
  negative[4] = 0xff;
  negative[5] = 0xff;
  negative[6] = 0xff;
  negative[7] = 0xff;
  EXPECT_THROW(decode_flo(negative), FormatError);
  EXPECT_THROW(decode_flo(bytes_of("PIE")), FormatError);
  TempDir dir;
  EXPECT_THROW(read_flo(dir / "missing.flo"), IoError);
}

TEST(Kitti, StoredCodes) {
  RawImage raw{2, 1, 3, 16, {32768, 32832, 1, 32768 - 64, 32768, 0}};
  const KittiFlow k = decode_kitti_flow(encode_png(raw));
  EXPECT_EQ(k.flow.u(0, 0), 0.0);
  EXPECT_EQ(k.flow.v(0, 0), 1.0);
  EXPECT_EQ(k.flow.u(0, 1), -1.0);
  EXPECT_EQ(k.valid[0], 1);
  EXPECT_EQ(k.valid[1], 0);
}

TEST(Kitti, RoundTripIsBitExact) {
  TempDir dir;
  std::mt19937_64 rng(7);
  std::uniform_int_distribution<int> dim(1, 40), code(0, 65535), flag(0, 1);
  for (int i = 0; i < 100; ++i) {
    FlowField f(dim(rng), dim(rng));
    for (double& v : f.values()) v = (code(rng) - 32768.0) / 64.0;
    std::vector<std::uint8_t> valid(f.pixels());
    for (auto& m : valid) m = static_cast<std::uint8_t>(flag(rng));
    const auto path = dir / "k.png";
    write_kitti_flow(path, f, &valid);
    const KittiFlow k = read_kitti_flow(path);
    EXPECT_EQ(std::memcmp(f.values().data(), k.flow.values().data(),
                          f.values().size() * sizeof(double)),
              0);
    EXPECT_EQ(k.valid, valid);
    EXPECT_EQ(encode_kitti_flow(k.flow, &k.valid), detail::read_file(path));
  }
}

TEST(Kitti, RejectsWrongDepthOrChannels) {
  EXPECT_THROW(decode_kitti_flow(encode_png(RawImage{1, 1, 3, 8, {1, 2, 3}})), FormatError);
  EXPECT_THROW(decode_kitti_flow(encode_png(RawImage{1, 1, 1, 16, {1}})), FormatError);
  FlowField big(1, 1);
  big.u(0, 0) = 600.0;  // beyond +-512
  EXPECT_THROW(encode_kitti_flow(big), NumericError);
}

TEST(ReadFlowAny, FloGetsAllValidMask) {
  TempDir dir;
  FlowField f(2, 2);
  f.u(1, 1) = 0.5;
  write_flo(dir / "a.flo", f);
  const KittiFlow k = read_flow_any(dir / "a.flo");
  EXPECT_EQ(k.valid, std::vector<std::uint8_t>(4, 1));
  EXPECT_EQ(k.flow.u(1, 1), 0.5);
}

TEST(ReadImage, PpmScaling) {
  std::string ppm = "P6\n# comment\n2 1\n255\n";
  ppm += std::string("\xff\x00\x00\x00\x80\xff", 6);
  const Image img = decode_image(bytes_of(ppm));
  EXPECT_EQ(img.channels(), 3);
  EXPECT_EQ(img(0, 0, 0), 1.0);
  EXPECT_EQ(img(1, 0, 0), 0.0);
  EXPECT_EQ(img(2, 0, 0), 0.0);
  EXPECT_EQ(img(1, 0, 1), 128.0 / 255.0);
  EXPECT_EQ(img(2, 0, 1), 1.0);

  std::string wide = "P6 1 1 65535\n";
  wide += std::string("\xff\xff\x00\x00\x80\x00", 6);
  const Image w = decode_image(bytes_of(wide));
  EXPECT_EQ(w(0, 0, 0), 1.0);
  EXPECT_EQ(w(2, 0, 0), 32768.0 / 65535.0);
}

TEST(ReadImage, Png16Bit) {
  const Image img = decode_image(encode_png(RawImage{2, 1, 1, 16, {65535, 0}}));
  EXPECT_EQ(img.channels(), 1);
  EXPECT_EQ(img(0, 0, 0), 1.0);
  EXPECT_EQ(img(0, 0, 1), 0.0);
}

TEST(ReadImage, AlphaIsDropped) {
  const Image img = decode_image(encode_png(RawImage{1, 1, 4, 8, {255, 0, 51, 7}}));
  EXPECT_EQ(img.channels(), 3);
  EXPECT_EQ(img(2, 0, 0), 0.2);
}

TEST(ReadImage, TruncatedAndUnknownAreErrors) {
  auto png = encode_png(RawImage{8, 8, 3, 8, std::vector<std::uint16_t>(192, 9)});
  png.resize(png.size() / 2);
  EXPECT_THROW(decode_image(png), FormatError);
  std::string ppm = "P6\n2 2\n255\n";
  ppm += std::string(5, '\x01');
  EXPECT_THROW(decode_image(bytes_of(ppm)), FormatError);
  EXPECT_THROW(decode_image(bytes_of("GIF89a")), FormatError);
  EXPECT_THROW(decode_image(bytes_of("P6\n2 x\n255\n")), FormatError);
  TempDir dir;
  EXPECT_THROW(read_image(dir / "missing.png"), IoError);
}

TEST(WritePng, RoundTrip) {
  TempDir dir;
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<int> code(0, 65535);
  Field f({3, 5, 7});
  for (double& v : f.values()) v = code(rng) / 65535.0;
  write_png(dir / "a.png", Image(f), 16);
  EXPECT_EQ(read_image(dir / "a.png").field(), f);
  // No temporary files left behind by the atomic write.
  int files = 0;
  for (const auto& e : fs::directory_iterator(dir.path())) {
    (void)e;
    ++files;
  }
  EXPECT_EQ(files, 1);
}

TEST(PerturbationFile, RoundTrip) {
  TempDir dir;
  std::mt19937_64 rng(5);
  std::normal_distribution<double> d;
  Field a({2, 3, 4}), b({2, 3, 4});
  for (double& v : a.values()) v = d(rng);
  for (double& v : b.values()) v = d(rng);
  for (const Perturbation& p : {Perturbation::disjoint(a, b), Perturbation::joint(a)}) {
    write_perturbation(dir / "p.ptb", p);
    EXPECT_EQ(read_perturbation(dir / "p.ptb"), p);
  }
  auto bytes = encode_perturbation(Perturbation::joint(a));
  bytes.pop_back();
  EXPECT_THROW(decode_perturbation(bytes), FormatError);
  EXPECT_THROW(decode_perturbation(bytes_of("PTB2xxxxxxxxxxxxxxxxxxxx")), FormatError);
}

TEST(FlowToColor, ZeroFlowIsWhite) {
  const Image img = flow_to_color(FlowField(6, 9));
  for (double v : img.values()) EXPECT_EQ(v, 1.0);
  EXPECT_EQ(img.channels(), 3);
  const Image fixed = flow_to_color(FlowField(3, 3), 5.0);
  for (double v : fixed.values()) EXPECT_EQ(v, 1.0);
}

FlowField single(double u, double v) {
  FlowField f(1, 1);
  f.u(0, 0) = u;
  f.v(0, 0) = v;
  return f;
}

double saturation(const Image& img) {
  const double r = img(0, 0, 0), g = img(1, 0, 0), b = img(2, 0, 0);
  return std::max({r, g, b}) - std::min({r, g, b});
}

TEST(FlowToColor, HalfTurnGivesOppositeSector) {
  // Rightward motion is red, leftward cyan/blue; downward (v > 0) is
  // orange/yellow, upward blue/magenta.
  const Image right = flow_to_color(single(1, 0), 1.0);
  const Image left = flow_to_color(single(-1, 0), 1.0);
  EXPECT_EQ(right(0, 0, 0), 1.0);
  EXPECT_EQ(right(2, 0, 0), 0.0);
  EXPECT_EQ(left(0, 0, 0), 0.0);
  EXPECT_EQ(left(2, 0, 0), 1.0);
  const Image down = flow_to_color(single(0, 1), 1.0);
  const Image up = flow_to_color(single(0, -1), 1.0);
  EXPECT_EQ(down(0, 0, 0), 1.0);
  EXPECT_EQ(down(2, 0, 0), 0.0);
  EXPECT_EQ(up(2, 0, 0), 1.0);
  EXPECT_EQ(up(1, 0, 0), 0.0);

  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> ang(-3.14159, 3.14159);
  for (int i = 0; i < 50; ++i) {
    const double a = ang(rng);
    const Image p = flow_to_color(single(0.7 * std::cos(a), 0.7 * std::sin(a)), 1.0);
    const Image q = flow_to_color(single(-0.7 * std::cos(a), -0.7 * std::sin(a)), 1.0);
    EXPECT_NEAR(saturation(p), saturation(q), 1e-12);
    EXPECT_NE(p, q);
  }
}

TEST(FlowToColor, DoublingFlowDoublesSaturation) {
  for (double a : {0.3, 1.2, 2.5, -2.0}) {
    const Image one = flow_to_color(single(0.2 * std::cos(a), 0.2 * std::sin(a)), 1.0);
    const Image two = flow_to_color(single(0.4 * std::cos(a), 0.4 * std::sin(a)), 1.0);
    EXPECT_NEAR(saturation(two), 2.0 * saturation(one), 1e-12);
  }
}

TEST(FlowToColor, AutoMaxIs99thPercentile) {
  FlowField f(10, 10);
  for (int i = 0; i < 100; ++i) f.u_plane()[i] = i + 1;  // magnitudes 1..100
  EXPECT_EQ(auto_flow_max(f), 99.0);
  EXPECT_EQ(flow_to_color(f), flow_to_color(f, 99.0));
}

TEST(PerturbationImage, Normalization) {
  const auto zero = perturbation_to_image(Perturbation::zeros(PerturbationMode::kDisjoint, {3, 4, 4}));
  ASSERT_EQ(zero.size(), 2u);
  for (double v : zero[0].values()) EXPECT_EQ(v, 0.5);

  Field f({1, 1, 3});
  f.values()[0] = -0.02;
  f.values()[1] = 0.0;
  f.values()[2] = 0.02;
  const auto img = perturbation_to_image(Perturbation::joint(f));
  ASSERT_EQ(img.size(), 1u);
  EXPECT_EQ(img[0].values()[0], 0.0);
  EXPECT_EQ(img[0].values()[1], 0.5);
  EXPECT_EQ(img[0].values()[2], 1.0);
}

}  // namespace
}  // namespace flowattack
