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

// File formats: Middlebury .flo, KITTI 16-bit PNG flow, PPM/PNG frames, raw
// perturbation files, and the flow / perturbation visualizations.
// Every multi-byte quantity is little-endian on disk regardless of host,
// except inside PNG, which is big-endian by definition.

#ifndef FLOWATTACK_IO_HPP_
#define FLOWATTACK_IO_HPP_

#include <png.h>

#include <algorithm>
#include <array>
#include <atomic>
#include <bit>
#include <cmath>
#include <cctype>
#include <csetjmp>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "flowattack/core.hpp"

namespace flowattack {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Byte helpers.

namespace detail {

inline std::vector<std::uint8_t> read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("read error on '" + path.string() + "'");
  return bytes;
}

// Writes to a sibling temp file and renames it into place, so readers never
// observe a partial file.
inline void write_file_atomic(const fs::path& path,
                              const std::vector<std::uint8_t>& bytes) {
  static std::atomic<unsigned> counter{0};
  fs::path tmp = path;
  tmp += ".tmp" + std::to_string(counter++);
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + tmp.string() + "' for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) {
      out.close();
      std::error_code ec;
      fs::remove(tmp, ec);
      throw IoError("write error on '" + tmp.string() + "'");
    }
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp, ec);
    throw IoError("cannot move output into place at '" + path.string() + "'");
  }
}

inline void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
inline void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
inline std::uint32_t get_u32(const std::uint8_t* p) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[i]) << (8 * i);
  return v;
}
inline std::uint64_t get_u64(const std::uint8_t* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Middlebury .flo

inline constexpr float kFloMagic = 202021.25f;

inline std::vector<std::uint8_t> encode_flo(const FlowField& f) {
  if (!all_finite(f.values())) throw NumericError("cannot write non-finite flow");
  std::vector<std::uint8_t> out;
  out.reserve(12 + 8 * f.pixels());
  detail::put_u32(out, std::bit_cast<std::uint32_t>(kFloMagic));
  detail::put_u32(out, static_cast<std::uint32_t>(f.width()));
  detail::put_u32(out, static_cast<std::uint32_t>(f.height()));
  for (int y = 0; y < f.height(); ++y) {
    for (int x = 0; x < f.width(); ++x) {
      detail::put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(f.u(y, x))));
      detail::put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(f.v(y, x))));
    }
  }
  return out;
}

inline FlowField decode_flo(const std::vector<std::uint8_t>& b,
                            const std::string& name = "<memory>") {
  if (b.size() < 12) throw FormatError(name + ": truncated .flo header");
  if (std::bit_cast<float>(detail::get_u32(b.data())) != kFloMagic) {
    throw FormatError(name + ": bad .flo magic");
  }
  const auto w = static_cast<std::int32_t>(detail::get_u32(b.data() + 4));
  const auto h = static_cast<std::int32_t>(detail::get_u32(b.data() + 8));
  if (w <= 0 || h <= 0) {
    throw FormatError(name + ": non-positive .flo dimensions " +
                      std::to_string(w) + "x" + std::to_string(h));
  }
  const std::uint64_t need = 12 + 8ull * static_cast<std::uint64_t>(w) * h;
  if (b.size() < need) throw FormatError(name + ": truncated .flo payload");
  if (b.size() > need) throw FormatError(name + ": trailing bytes after .flo payload");
  FlowField f(h, w);
  const std::uint8_t* p = b.data() + 12;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x, p += 8) {
      f.u(y, x) = std::bit_cast<float>(detail::get_u32(p));
      f.v(y, x) = std::bit_cast<float>(detail::get_u32(p + 4));
    }
  }
  return f;
}

inline void write_flo(const fs::path& path, const FlowField& f) {
  detail::write_file_atomic(path, encode_flo(f));
}

inline FlowField read_flo(const fs::path& path) {
  return decode_flo(detail::read_file(path), path.string());
}

// ---------------------------------------------------------------------------
// PNG codec (classic libpng API; errors longjmp back into these functions).

struct RawImage {
  int width = 0;
  int height = 0;
  int channels = 0;
  int bit_depth = 8;                 // 8 or 16
  std::vector<std::uint16_t> samples;  // row-major, interleaved channels
};

namespace detail {

struct PngReadBuffer {
  const std::vector<std::uint8_t>* bytes;
  std::size_t offset;
};

inline void png_read_mem(png_structp png, png_bytep out, png_size_t n) {
  auto* buf = static_cast<PngReadBuffer*>(png_get_io_ptr(png));
  if (buf->offset + n > buf->bytes->size()) png_error(png, "truncated PNG stream");
  std::memcpy(out, buf->bytes->data() + buf->offset, n);
  buf->offset += n;
}

inline void png_write_mem(png_structp png, png_bytep in, png_size_t n) {
  auto* out = static_cast<std::vector<std::uint8_t>*>(png_get_io_ptr(png));
  out->insert(out->end(), in, in + n);
}

inline void png_flush_mem(png_structp) {}

struct PngError {
  char message[256] = "PNG error";
};

inline void png_error_fn(png_structp png, png_const_charp msg) {
  auto* e = static_cast<PngError*>(png_get_error_ptr(png));
  std::snprintf(e->message, sizeof e->message, "%s", msg);
  png_longjmp(png, 1);
}

inline void png_warning_fn(png_structp, png_const_charp) {}

}  // namespace detail

// Alpha is stripped and palettes are expanded; gray stays one channel.
inline RawImage decode_png(const std::vector<std::uint8_t>& bytes,
                           const std::string& name = "<memory>") {
  if (bytes.size() < 8 || png_sig_cmp(bytes.data(), 0, 8) != 0) {
    throw FormatError(name + ": not a PNG stream");
  }
  detail::PngError err;
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &err,
                                           detail::png_error_fn,
                                           detail::png_warning_fn);
  if (!png) throw IoError("png_create_read_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw IoError("png_create_info_struct failed");
  }
  detail::PngReadBuffer src{&bytes, 0};
  // Declared before setjmp so the longjmp path never skips a destructor.
  RawImage img;
  std::vector<png_bytep> rows;
  std::vector<std::uint8_t> buf;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw FormatError(name + ": " + err.message);
  }
  png_set_read_fn(png, &src, detail::png_read_mem);
  png_read_info(png, info);
  const int color = png_get_color_type(png, info);
  const int depth = png_get_bit_depth(png, info);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  png_set_strip_alpha(png);
  png_read_update_info(png, info);

  img.width = static_cast<int>(png_get_image_width(png, info));
  img.height = static_cast<int>(png_get_image_height(png, info));
  img.channels = png_get_channels(png, info);
  img.bit_depth = png_get_bit_depth(png, info);
  const std::size_t rowbytes = png_get_rowbytes(png, info);
  buf.resize(rowbytes * img.height);
  rows.resize(img.height);
  for (int y = 0; y < img.height; ++y) rows[y] = buf.data() + rowbytes * y;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  const std::size_t n = static_cast<std::size_t>(img.width) * img.height * img.channels;
  img.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    img.samples[i] = img.bit_depth == 16
                         ? static_cast<std::uint16_t>((buf[2 * i] << 8) | buf[2 * i + 1])
                         : buf[i];
  }
  return img;
}

inline std::vector<std::uint8_t> encode_png(const RawImage& img) {
  if (img.width < 1 || img.height < 1 || img.channels < 1 || img.channels > 4) {
    throw StructuralError("cannot encode a PNG with this geometry");
  }
  if (img.bit_depth != 8 && img.bit_depth != 16) {
    throw StructuralError("PNG bit depth must be 8 or 16");
  }
  const std::size_t n = static_cast<std::size_t>(img.width) * img.height * img.channels;
  if (img.samples.size() != n) throw StructuralError("PNG sample count mismatch");
  static constexpr int kColor[] = {PNG_COLOR_TYPE_GRAY, PNG_COLOR_TYPE_GRAY_ALPHA,
                                   PNG_COLOR_TYPE_RGB, PNG_COLOR_TYPE_RGB_ALPHA};
  const int bps = img.bit_depth / 8;
  std::vector<std::uint8_t> buf(n * bps);
  for (std::size_t i = 0; i < n; ++i) {
    if (bps == 2) {
      buf[2 * i] = static_cast<std::uint8_t>(img.samples[i] >> 8);  // big-endian
      buf[2 * i + 1] = static_cast<std::uint8_t>(img.samples[i] & 0xff);
    } else {
      buf[i] = static_cast<std::uint8_t>(img.samples[i]);
    }
  }

  detail::PngError err;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &err,
                                            detail::png_error_fn,
                                            detail::png_warning_fn);
  if (!png) throw IoError("png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw IoError("png_create_info_struct failed");
  }
  std::vector<std::uint8_t> out;
  std::vector<png_bytep> rows(img.height);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError(std::string("PNG encode failed: ") + err.message);
  }
  png_set_write_fn(png, &out, detail::png_write_mem, detail::png_flush_mem);
  png_set_IHDR(png, info, img.width, img.height, img.bit_depth,
               kColor[img.channels - 1], PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  const std::size_t rowbytes = static_cast<std::size_t>(img.width) * img.channels * bps;
  for (int y = 0; y < img.height; ++y) rows[y] = buf.data() + rowbytes * y;
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return out;
}

// ---------------------------------------------------------------------------
// Frames.

namespace detail {

inline Image raw_to_image(const RawImage& raw, int maxval) {
  Field f(Shape{raw.channels, raw.height, raw.width});
  for (int y = 0; y < raw.height; ++y) {
    for (int x = 0; x < raw.width; ++x) {
      for (int c = 0; c < raw.channels; ++c) {
        const std::size_t i =
            (static_cast<std::size_t>(y) * raw.width + x) * raw.channels + c;
        f(c, y, x) = static_cast<double>(raw.samples[i]) / maxval;
      }
    }
  }
  return Image(std::move(f));
}

// Netpbm header token, skipping whitespace and '#' comments.
inline std::string ppm_token(const std::vector<std::uint8_t>& b, std::size_t& pos) {
  for (;;) {
    while (pos < b.size() && std::isspace(b[pos])) ++pos;
    if (pos < b.size() && b[pos] == '#') {
      while (pos < b.size() && b[pos] != '\n') ++pos;
      continue;
    }
    break;
  }
  std::string tok;
  while (pos < b.size() && !std::isspace(b[pos])) tok.push_back(static_cast<char>(b[pos++]));
  return tok;
}

inline Image decode_ppm(const std::vector<std::uint8_t>& b, const std::string& name) {
  std::size_t pos = 2;
  auto number = [&](const char* what) {
    const std::string t = ppm_token(b, pos);
    if (t.empty() || !std::all_of(t.begin(), t.end(), ::isdigit) || t.size() > 9) {
      throw FormatError(name + ": bad PPM " + what);
    }
    return std::stoi(t);
  };
  const int w = number("width");
  const int h = number("height");
  const int maxval = number("maxval");
  if (w < 1 || h < 1 || maxval < 1 || maxval > 65535) {
    throw FormatError(name + ": PPM header out of range");
  }
  ++pos;  // the single whitespace byte before the raster
  const int bps = maxval > 255 ? 2 : 1;
  const std::size_t n = static_cast<std::size_t>(w) * h * 3;
  if (pos > b.size() || b.size() - pos < n * bps) {
    throw FormatError(name + ": truncated PPM raster");
  }
  RawImage raw{w, h, 3, bps * 8, std::vector<std::uint16_t>(n)};
  for (std::size_t i = 0; i < n; ++i) {
    raw.samples[i] = bps == 2 ? static_cast<std::uint16_t>((b[pos + 2 * i] << 8) |
                                                           b[pos + 2 * i + 1])
                              : b[pos + i];
    if (raw.samples[i] > maxval) throw FormatError(name + ": PPM sample above maxval");
  }
  return raw_to_image(raw, maxval);
}

}  // namespace detail

// Binary PPM (P6) or 8/16-bit PNG, scaled to [0,1] by the maximum code value.
inline Image decode_image(const std::vector<std::uint8_t>& bytes,
                          const std::string& name = "<memory>") {
  if (bytes.size() >= 2 && bytes[0] == 'P' && bytes[1] == '6') {
    return detail::decode_ppm(bytes, name);
  }
  if (bytes.size() >= 8 && png_sig_cmp(bytes.data(), 0, 8) == 0) {
    const RawImage raw = decode_png(bytes, name);
    return detail::raw_to_image(raw, raw.bit_depth == 16 ? 65535 : 255);
  }
  throw FormatError(name + ": unsupported image format (expected P6 PPM or PNG)");
}

inline Image read_image(const fs::path& path) {
  return decode_image(detail::read_file(path), path.string());
}

inline RawImage quantize(const Image& img, int bit_depth) {
  if (bit_depth != 8 && bit_depth != 16) throw StructuralError("bit depth must be 8 or 16");
  const double maxval = bit_depth == 16 ? 65535.0 : 255.0;
  RawImage raw{img.width(), img.height(), img.channels(), bit_depth, {}};
  raw.samples.resize(img.values().size());
  for (int y = 0; y < img.height(); ++y) {
    for (int x = 0; x < img.width(); ++x) {
      for (int c = 0; c < img.channels(); ++c) {
        raw.samples[(static_cast<std::size_t>(y) * img.width() + x) * img.channels() + c] =
            static_cast<std::uint16_t>(std::lround(img(c, y, x) * maxval));
      }
    }
  }
  return raw;
}

inline void write_png(const fs::path& path, const Image& img, int bit_depth = 8) {
  detail::write_file_atomic(path, encode_png(quantize(img, bit_depth)));
}

// ---------------------------------------------------------------------------
// KITTI flow PNG: 16-bit RGB, channel value 64 * component + 2^15, B = valid.

struct KittiFlow {
  FlowField flow;
  std::vector<std::uint8_t> valid;  // one flag per pixel, row-major
};

inline std::vector<std::uint8_t> encode_kitti_flow(
    const FlowField& f, const std::vector<std::uint8_t>* valid = nullptr) {
  if (!all_finite(f.values())) throw NumericError("cannot write non-finite flow");
  if (valid && valid->size() != f.pixels()) {
    throw StructuralError("validity mask does not match the flow grid");
  }
  RawImage raw{f.width(), f.height(), 3, 16, std::vector<std::uint16_t>(3 * f.pixels())};
  auto code = [](double c) {
    const double s = std::round(64.0 * c + 32768.0);
    if (s < 0.0 || s > 65535.0) {
      throw NumericError("flow component " + std::to_string(c) +
                         " outside the KITTI encodable range");
    }
    return static_cast<std::uint16_t>(s);
  };
  for (std::size_t i = 0; i < f.pixels(); ++i) {
    raw.samples[3 * i] = code(f.u_plane()[i]);
    raw.samples[3 * i + 1] = code(f.v_plane()[i]);
    raw.samples[3 * i + 2] = valid ? ((*valid)[i] ? 1 : 0) : 1;
  }
  return encode_png(raw);
}

inline KittiFlow decode_kitti_flow(const std::vector<std::uint8_t>& bytes,
                                   const std::string& name = "<memory>") {
  const RawImage raw = decode_png(bytes, name);
  if (raw.bit_depth != 16 || raw.channels != 3) {
    throw FormatError(name + ": KITTI flow must be a 16-bit 3-channel PNG");
  }
  KittiFlow k{FlowField(raw.height, raw.width),
              std::vector<std::uint8_t>(static_cast<std::size_t>(raw.width) * raw.height)};
  for (std::size_t i = 0; i < k.valid.size(); ++i) {
    k.flow.u_plane()[i] = (static_cast<double>(raw.samples[3 * i]) - 32768.0) / 64.0;
    k.flow.v_plane()[i] = (static_cast<double>(raw.samples[3 * i + 1]) - 32768.0) / 64.0;
    k.valid[i] = raw.samples[3 * i + 2] != 0 ? 1 : 0;
  }
  return k;
}

inline void write_kitti_flow(const fs::path& path, const FlowField& f,
                             const std::vector<std::uint8_t>* valid = nullptr) {
  detail::write_file_atomic(path, encode_kitti_flow(f, valid));
}

inline KittiFlow read_kitti_flow(const fs::path& path) {
  return decode_kitti_flow(detail::read_file(path), path.string());
}

// Ground truth from either format; .flo gets an all-valid mask.
inline KittiFlow read_flow_any(const fs::path& path) {
  if (path.extension() == ".flo") {
    FlowField f = read_flo(path);
    std::vector<std::uint8_t> valid(f.pixels(), 1);
    return {std::move(f), std::move(valid)};
  }
  return read_kitti_flow(path);
}

// ---------------------------------------------------------------------------
// Perturbation files: "PTB1", mode (0 disjoint, 1 joint), C, H, W as uint32,
// then every stored field as float64.

inline std::vector<std::uint8_t> encode_perturbation(const Perturbation& p) {
  std::vector<std::uint8_t> out{'P', 'T', 'B', '1'};
  const Shape s = p.shape();
  detail::put_u32(out, p.mode() == PerturbationMode::kJoint ? 1u : 0u);
  detail::put_u32(out, static_cast<std::uint32_t>(s.channels));
  detail::put_u32(out, static_cast<std::uint32_t>(s.height));
  detail::put_u32(out, static_cast<std::uint32_t>(s.width));
  for (const Field* f : p.stored_fields()) {
    for (double v : f->values()) detail::put_u64(out, std::bit_cast<std::uint64_t>(v));
  }
  return out;
}

inline Perturbation decode_perturbation(const std::vector<std::uint8_t>& b,
                                        const std::string& name = "<memory>") {
  if (b.size() < 20 || std::memcmp(b.data(), "PTB1", 4) != 0) {
    throw FormatError(name + ": not a perturbation file");
  }
  const std::uint32_t mode = detail::get_u32(b.data() + 4);
  const auto c = static_cast<std::int32_t>(detail::get_u32(b.data() + 8));
  const auto h = static_cast<std::int32_t>(detail::get_u32(b.data() + 12));
  const auto w = static_cast<std::int32_t>(detail::get_u32(b.data() + 16));
  if (mode > 1 || c < 1 || h < 1 || w < 1) {
    throw FormatError(name + ": bad perturbation header");
  }
  const Shape shape{c, h, w};
  const std::size_t fields = mode == 1 ? 1 : 2;
  if (b.size() != 20 + 8 * fields * shape.size()) {
    throw FormatError(name + ": perturbation payload has the wrong length");
  }
  const std::uint8_t* p = b.data() + 20;
  auto next = [&] {
    std::vector<double> v(shape.size());
    for (double& x : v) {
      x = std::bit_cast<double>(detail::get_u64(p));
      p += 8;
    }
    if (!all_finite(v)) throw FormatError(name + ": non-finite perturbation value");
    return Field(shape, std::move(v));
  };
  if (mode == 1) return Perturbation::joint(next());
  Field first = next();
  return Perturbation::disjoint(std::move(first), next());
}

inline void write_perturbation(const fs::path& path, const Perturbation& p) {
  detail::write_file_atomic(path, encode_perturbation(p));
}

inline Perturbation read_perturbation(const fs::path& path) {
  return decode_perturbation(detail::read_file(path), path.string());
}

// ---------------------------------------------------------------------------
// Visualization.

namespace detail {

// 55-bin Middlebury wheel: red-yellow, yellow-green, green-cyan, cyan-blue,
// blue-magenta, magenta-red.
inline const std::vector<std::array<double, 3>>& color_wheel() {
  static const std::vector<std::array<double, 3>> wheel = [] {
    constexpr int RY = 15, YG = 6, GC = 4, CB = 11, BM = 13, MR = 6;
    std::vector<std::array<double, 3>> w;
    for (int i = 0; i < RY; ++i) w.push_back({255.0, 255.0 * i / RY, 0.0});
    for (int i = 0; i < YG; ++i) w.push_back({255.0 - 255.0 * i / YG, 255.0, 0.0});
    for (int i = 0; i < GC; ++i) w.push_back({0.0, 255.0, 255.0 * i / GC});
    for (int i = 0; i < CB; ++i) w.push_back({0.0, 255.0 - 255.0 * i / CB, 255.0});
    for (int i = 0; i < BM; ++i) w.push_back({255.0 * i / BM, 0.0, 255.0});
    for (int i = 0; i < MR; ++i) w.push_back({255.0, 0.0, 255.0 - 255.0 * i / MR});
    for (auto& c : w) {
      for (double& v : c) v /= 255.0;
    }
    return w;
  }();
  return wheel;
}

}  // namespace detail

inline constexpr int kColorWheelBins = 55;

// 99th percentile (nearest rank) of the per-pixel magnitudes.
inline double auto_flow_max(const FlowField& f) {
  std::vector<double> mag(f.pixels());
  for (std::size_t i = 0; i < mag.size(); ++i) {
    mag[i] = std::hypot(f.u_plane()[i], f.v_plane()[i]);
  }
  const std::size_t rank = static_cast<std::size_t>(
      std::ceil(0.99 * static_cast<double>(mag.size())));
  const std::size_t k = rank == 0 ? 0 : rank - 1;
  std::nth_element(mag.begin(), mag.begin() + static_cast<long>(k), mag.end());
  return mag[k];
}

// Hue encodes direction, saturation magnitude / max_magnitude; zero flow is
// white and magnitudes beyond the maximum are darkened.
inline Image flow_to_color(const FlowField& f,
                           std::optional<double> max_magnitude = std::nullopt) {
  if (!all_finite(f.values())) throw NumericError("flow_to_color: non-finite flow");
  const double maxmag = max_magnitude ? *max_magnitude : auto_flow_max(f);
  if (!(maxmag >= 0.0)) throw ConfigError("max magnitude must be >= 0");
  const auto& wheel = detail::color_wheel();
  const int ncols = static_cast<int>(wheel.size());
  Field out(Shape{3, f.height(), f.width()}, 1.0);
  for (int y = 0; y < f.height(); ++y) {
    for (int x = 0; x < f.width(); ++x) {
      const double u = f.u(y, x), v = f.v(y, x);
      const double mag = std::hypot(u, v);
      if (mag == 0.0 || maxmag == 0.0) continue;  // white
      const double rad = mag / maxmag;
      const double a = std::atan2(-v, -u) / std::numbers::pi;
      const double fk = (a + 1.0) / 2.0 * (ncols - 1);
      const int k0 = static_cast<int>(std::floor(fk));
      const int k1 = (k0 + 1) % ncols;
      const double t = fk - k0;
      for (int c = 0; c < 3; ++c) {
        double col = (1.0 - t) * wheel[k0][c] + t * wheel[k1][c];
        col = rad <= 1.0 ? 1.0 - rad * (1.0 - col) : col * 0.75;
        out(c, y, x) = std::clamp(col, 0.0, 1.0);
      }
    }
  }
  return Image(std::move(out));
}

// Per-field affine min-max map to [0,1]; constant fields render 0.5.
inline Image normalize_field(const Field& f) {
  const auto [lo, hi] = std::minmax_element(f.values().begin(), f.values().end());
  Field out(f.shape(), 0.5);
  if (*hi > *lo) {
    const double a = *lo, span = *hi - *lo;
    for (std::size_t i = 0; i < f.size(); ++i) {
      out.values()[i] = std::clamp((f.values()[i] - a) / span, 0.0, 1.0);
    }
  }
  return Image(std::move(out));
}

// Zero perturbation with -a..a range: -a -> 0, 0 -> 0.5, a -> 1 follows from
// the min-max map. One image per stored field.
inline std::vector<Image> perturbation_to_image(const Perturbation& p) {
  std::vector<Image> out;
  for (const Field* f : p.stored_fields()) {
    if (!all_finite(f->values())) {
      throw NumericError("perturbation_to_image: non-finite perturbation");
    }
    out.push_back(normalize_field(*f));
  }
  return out;
}

}  // namespace flowattack

#endif  // FLOWATTACK_IO_HPP_
