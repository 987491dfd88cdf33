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

#pragma once

// Image decoding and the fundus field-of-view preprocessing.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "fqc/model.hpp"

namespace fqc {

/// 8-bit RGB, row-major, 3 bytes per pixel.
struct RawImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> pixels;

  RawImage() = default;
  /// Black image of the given size.
  RawImage(std::size_t w, std::size_t h);

  std::uint8_t* at(std::size_t x, std::size_t y) { return &pixels[3 * (y * width + x)]; }
  const std::uint8_t* at(std::size_t x, std::size_t y) const {
    return &pixels[3 * (y * width + x)];
  }
  bool operator==(const RawImage&) const = default;
};

/// Half-open pixel box [x0, x1) x [y0, y1).
struct Box {
  std::size_t x0 = 0, y0 = 0, x1 = 0, y1 = 0;
  std::size_t width() const { return x1 > x0 ? x1 - x0 : 0; }
  std::size_t height() const { return y1 > y0 ? y1 - y0 : 0; }
  bool operator==(const Box&) const = default;
};

RawImage decode_ppm(const std::vector<std::uint8_t>& bytes);
std::vector<std::uint8_t> encode_ppm(const RawImage& image);
RawImage decode_png(const std::vector<std::uint8_t>& bytes);
std::vector<std::uint8_t> encode_png(const RawImage& image);

/// Sniffs the magic bytes; PPM (P6) or PNG. DecodeError otherwise.
RawImage decode_image(const std::vector<std::uint8_t>& bytes);
RawImage load_image(const std::filesystem::path& path);
/// Format chosen by extension: .png, anything else PPM.
void save_image(const RawImage& image, const std::filesystem::path& path);

/// Tightest box around pixels with max(R,G,B) > threshold. Throws
/// NoFundusError when there is none.
Box detect_fov(const RawImage& image, int threshold = 20);

/// Crops to `box`, resamples bilinearly to side x side and maps each channel
/// value v to v/255 - 0.5. Returns [1,3,side,side].
ModelTensor crop_resize(const RawImage& image, const Box& box, std::size_t side = 256);

/// detect_fov followed by crop_resize.
ModelTensor preprocess(const RawImage& image, std::size_t side = 256,
                       int threshold = 20);

/// Inverse of the normalization, rounding to the nearest 8-bit value.
RawImage tensor_to_image(const ModelTensor& tensor);

}  // namespace fqc
