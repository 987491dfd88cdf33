// Copyright 2026 The fundus-qc Authors
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

#include "fqc/image.hpp"

#include <png.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstring>

#include "fqc/checkpoint.hpp"

namespace fqc {

RawImage::RawImage(std::size_t w, std::size_t h)
    : width(w), height(h), pixels(3 * w * h, 0) {}

namespace {

void check_image(const RawImage& image) {
  if (image.width == 0 || image.height == 0) throw InputError("image is empty");
  if (image.pixels.size() != 3 * image.width * image.height) {
    throw InputError("pixel buffer holds " + std::to_string(image.pixels.size()) +
                     " bytes, expected " + std::to_string(3 * image.width * image.height));
  }
}

// Reads one unsigned decimal header field, skipping whitespace and comments.
std::size_t ppm_field(const std::vector<std::uint8_t>& b, std::size_t& pos) {
  while (pos < b.size()) {
    if (std::isspace(b[pos])) {
      ++pos;
    } else if (b[pos] == '#') {
      while (pos < b.size() && b[pos] != '\n') ++pos;
    } else {
      break;
    }
  }
  if (pos >= b.size() || !std::isdigit(b[pos])) {
    throw DecodeError("malformed PPM header at byte " + std::to_string(pos));
  }
  std::size_t v = 0;
  while (pos < b.size() && std::isdigit(b[pos])) {
    v = v * 10 + (b[pos++] - '0');
    if (v > (1u << 24)) throw DecodeError("PPM dimension too large");
  }
  return v;
}

}  // namespace

RawImage decode_ppm(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '6') {
    throw DecodeError("not a binary PPM (P6)");
  }
  std::size_t pos = 2;
  const std::size_t w = ppm_field(bytes, pos);
  const std::size_t h = ppm_field(bytes, pos);
  const std::size_t maxval = ppm_field(bytes, pos);
  if (w == 0 || h == 0) throw DecodeError("PPM has zero size");
  if (maxval != 255) throw DecodeError("only 8-bit PPM (maxval 255) is supported");
  if (pos >= bytes.size() || !std::isspace(bytes[pos])) {
    throw DecodeError("malformed PPM header");
  }
  ++pos;
  RawImage image(w, h);
  if (bytes.size() - pos < image.pixels.size()) {
    throw DecodeError("truncated PPM: expected " + std::to_string(image.pixels.size()) +
                      " pixel bytes, have " + std::to_string(bytes.size() - pos));
  }
  std::memcpy(image.pixels.data(), bytes.data() + pos, image.pixels.size());
  return image;
}

std::vector<std::uint8_t> encode_ppm(const RawImage& image) {
  check_image(image);
  const std::string header = "P6\n" + std::to_string(image.width) + " " +
                             std::to_string(image.height) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.insert(out.end(), image.pixels.begin(), image.pixels.end());
  return out;
}

RawImage decode_png(const std::vector<std::uint8_t>& bytes) {
  png_image png;
  std::memset(&png, 0, sizeof png);
  png.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&png, bytes.data(), bytes.size())) {
    throw DecodeError(std::string("PNG: ") + png.message);
  }
  png.format = PNG_FORMAT_RGB;
  RawImage image(png.width, png.height);
  if (!png_image_finish_read(&png, nullptr, image.pixels.data(), 0, nullptr)) {
    png_image_free(&png);
    throw DecodeError(std::string("PNG: ") + png.message);
  }
  return image;
}

std::vector<std::uint8_t> encode_png(const RawImage& image) {
  check_image(image);
  png_image png;
  std::memset(&png, 0, sizeof png);
  png.version = PNG_IMAGE_VERSION;
  png.width = static_cast<png_uint_32>(image.width);
  png.height = static_cast<png_uint_32>(image.height);
  png.format = PNG_FORMAT_RGB;
  png_alloc_size_t size = 0;
  if (!png_image_write_get_memory_size(png, size, 0, image.pixels.data(), 0, nullptr)) {
    throw Error(std::string("PNG encode: ") + png.message);
  }
  std::vector<std::uint8_t> out(size);
  if (!png_image_write_to_memory(&png, out.data(), &size, 0, image.pixels.data(), 0,
                                 nullptr)) {
    throw Error(std::string("PNG encode: ") + png.message);
  }
  out.resize(size);
  return out;
}

RawImage decode_image(const std::vector<std::uint8_t>& bytes) {
  static constexpr std::uint8_t kPng[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  if (bytes.size() >= 8 && std::memcmp(bytes.data(), kPng, 8) == 0) return decode_png(bytes);
  if (bytes.size() >= 2 && bytes[0] == 'P' && bytes[1] == '6') return decode_ppm(bytes);
  throw DecodeError("unrecognized image format (expected PPM P6 or PNG)");
}

RawImage load_image(const std::filesystem::path& path) {
  return decode_image(read_file_bytes(path));
}

void save_image(const RawImage& image, const std::filesystem::path& path) {
  write_file_bytes(path, path.extension() == ".png" ? encode_png(image) : encode_ppm(image));
}

Box detect_fov(const RawImage& image, int threshold) {
  check_image(image);
  Box box{image.width, image.height, 0, 0};
  for (std::size_t y = 0; y < image.height; ++y) {
    const std::uint8_t* row = image.at(0, y);
    for (std::size_t x = 0; x < image.width; ++x, row += 3) {
      if (std::max({row[0], row[1], row[2]}) > threshold) {
        box.x0 = std::min(box.x0, x);
        box.y0 = std::min(box.y0, y);
        box.x1 = std::max(box.x1, x + 1);
        box.y1 = std::max(box.y1, y + 1);
      }
    }
  }
  if (box.x1 == 0) throw NoFundusError();
  return box;
}

ModelTensor crop_resize(const RawImage& image, const Box& box, std::size_t side) {
  check_image(image);
  if (side == 0) throw InvalidBoxError("output side must be positive");
  if (box.width() == 0 || box.height() == 0) {
    throw InvalidBoxError("degenerate crop box");
  }
  if (box.x1 > image.width || box.y1 > image.height) {
    throw InvalidBoxError("crop box exceeds the image bounds");
  }
  // Pixel-center alignment: output sample i maps to source coordinate
  // (i + 0.5) * scale - 0.5 inside the box, clamped to the box edges.
  struct Tap {
    std::size_t lo, hi;
    float frac;
  };
  auto taps = [side](std::size_t origin, std::size_t extent) {
    std::vector<Tap> out(side);
    const double scale = static_cast<double>(extent) / static_cast<double>(side);
    for (std::size_t i = 0; i < side; ++i) {
      double s = (static_cast<double>(i) + 0.5) * scale - 0.5;
      s = std::clamp(s, 0.0, static_cast<double>(extent - 1));
      const auto lo = static_cast<std::size_t>(s);
      const std::size_t hi = std::min(lo + 1, extent - 1);
      out[i] = {origin + lo, origin + hi, static_cast<float>(s - static_cast<double>(lo))};
    }
    return out;
  };
  const auto xs = taps(box.x0, box.width());
  const auto ys = taps(box.y0, box.height());

  ModelTensor out({1, 3, side, side});
  auto data = out.data();
  const std::size_t plane = side * side;
  for (std::size_t i = 0; i < side; ++i) {
    const Tap& ty = ys[i];
    for (std::size_t j = 0; j < side; ++j) {
      const Tap& tx = xs[j];
      const std::uint8_t* p00 = image.at(tx.lo, ty.lo);
      const std::uint8_t* p01 = image.at(tx.hi, ty.lo);
      const std::uint8_t* p10 = image.at(tx.lo, ty.hi);
      const std::uint8_t* p11 = image.at(tx.hi, ty.hi);
      for (std::size_t c = 0; c < 3; ++c) {
        const float top = p00[c] + tx.frac * (float(p01[c]) - float(p00[c]));
        const float bottom = p10[c] + tx.frac * (float(p11[c]) - float(p10[c]));
        const float v = top + ty.frac * (bottom - top);
        data[c * plane + i * side + j] = v / 255.0f - 0.5f;
      }
    }
  }
  return out;
}

ModelTensor preprocess(const RawImage& image, std::size_t side, int threshold) {
  return crop_resize(image, detect_fov(image, threshold), side);
}

RawImage tensor_to_image(const ModelTensor& tensor) {
  if (tensor.rank() != 4 || tensor.dim(0) != 1 || tensor.dim(1) != 3) {
    throw ShapeError("expected [1,3,H,W], got " + to_string(tensor.shape()));
  }
  const std::size_t h = tensor.dim(2), w = tensor.dim(3);
  RawImage image(w, h);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        const double v = (static_cast<double>(tensor[(c * h + y) * w + x]) + 0.5) * 255.0;
        image.at(x, y)[c] = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
      }
  return image;
}

}  // namespace fqc
