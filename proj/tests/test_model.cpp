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

#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <random>

#include "fqc/checkpoint.hpp"
#include "fqc/model.hpp"
#include "support/tempdir.hpp"

using fqc::ArchitectureSpec;
using fqc::ModelParams;
using fqc::ModelTensor;
using fqc::build_default_arch;

constexpr double kGoldenSum = 171.527852;  // captured from the seed-42 scale-4 run
constexpr double kGoldenSumSq = 90.175367;

namespace {

// Smooth deterministic test pattern in roughly [-0.5, 0.5].
ModelTensor pattern_image(const fqc::InputShape& in) {
  ModelTensor img({1, in.channels, in.height, in.width});
  std::size_t i = 0;
  for (std::size_t c = 0; c < in.channels; ++c)
    for (std::size_t y = 0; y < in.height; ++y)
      for (std::size_t x = 0; x < in.width; ++x)
        img[i++] = static_cast<float>(0.5 * std::sin(0.07 * double(x) + 0.11 * double(y) +
                                                     1.3 * double(c)));
  return img;
}

ModelTensor random_image(std::mt19937_64& rng, const fqc::InputShape& in) {
  std::uniform_real_distribution<float> dist(-0.5f, 0.5f);
  ModelTensor img({1, in.channels, in.height, in.width});
  for (auto& v : img.data()) v = dist(rng);
  return img;
}

}  // namespace

TEST_SUITE("architecture") {
  TEST_CASE("default architecture") {
    const auto arch = build_default_arch();
    CHECK(arch.conv_filters() == std::vector<std::size_t>{96, 256, 384, 384, 256});
    CHECK(arch.dense_widths() == std::vector<std::size_t>{4096, 4096});
    CHECK(arch.feature_width() == 4096);
    CHECK(arch.input == fqc::InputShape{3, 256, 256});
    CHECK(std::holds_alternative<fqc::ClassifierLayer>(arch.layers.back()));
    CHECK_NOTHROW(arch.validate());
  }

  TEST_CASE("conv stack output is computed from the 256x256 input") {
    // Independent chain: 256 -conv1(11,s4,p2)-> 63 -pool-> 31 -conv2-> 31
    // -pool-> 15 -conv3..5-> 15 -pool-> 7.
    std::size_t h = 256;
    h = (h + 4 - 11) / 4 + 1;
    h = (h - 3) / 2 + 1;
    h = (h + 4 - 5) / 1 + 1;
    h = (h - 3) / 2 + 1;
    for (int i = 0; i < 3; ++i) h = (h + 2 - 3) + 1;
    h = (h - 3) / 2 + 1;
    CHECK(h == 7);
    const auto arch = build_default_arch();
    CHECK(arch.conv_output_width() == 256 * h * h);
    const auto params = arch.parameters();
    const auto fc1 = std::find_if(params.begin(), params.end(),
                                  [](const auto& p) { return p.name == "fc1.weight"; });
    REQUIRE(fc1 != params.end());
    CHECK(fc1->shape == fqc::Shape{4096, arch.conv_output_width()});
  }

  TEST_CASE("reduced architectures") {
    const auto s4 = fqc::build_reduced_arch(4);
    CHECK(s4.conv_filters() == std::vector<std::size_t>{24, 64, 96, 96, 64});
    CHECK(s4.dense_widths() == std::vector<std::size_t>{1024, 1024});
    CHECK(s4.input == fqc::InputShape{3, 128, 128});
    CHECK(fqc::build_reduced_arch(2).input == fqc::InputShape{3, 256, 256});
    CHECK(fqc::reduce_arch(fqc::build_reduced_arch(2), 2) == s4);
    CHECK_THROWS_AS(fqc::build_reduced_arch(3), fqc::ConfigError);
    CHECK_THROWS_AS(fqc::build_reduced_arch(16), fqc::ConfigError);
  }

  TEST_CASE("classifier must be the single last layer") {
    auto arch = fqc::build_reduced_arch(8);
    auto moved = arch;
    std::swap(moved.layers[moved.layers.size() - 1], moved.layers[moved.layers.size() - 2]);
    CHECK_THROWS(moved.validate());
    auto doubled = arch;
    doubled.layers.push_back(doubled.layers.back());
    CHECK_THROWS(doubled.validate());
    auto none = arch;
    none.layers.pop_back();
    CHECK_THROWS(none.validate());
  }

  TEST_CASE("shapes that do not chain are rejected") {
    auto arch = fqc::build_reduced_arch(8);
    arch.input.height = arch.input.width = 8;
    CHECK_THROWS(arch.validate());
  }
}

TEST_SUITE("forward") {
  TEST_CASE("default-size encoding has 4096 entries") {
    const auto arch = build_default_arch();
    const auto params = ModelParams::init(arch, 1);
    const auto f = fqc::encode(arch, params, pattern_image(arch.input));
    CHECK(f.size() == 4096);
    CHECK(fqc::all_finite<float>(f));
  }

  TEST_CASE("zero parameters give zero features and zero score") {
    const auto arch = fqc::build_reduced_arch(8);
    const auto params = ModelParams::zeros(arch);
    const auto f = fqc::encode(arch, params, pattern_image(arch.input));
    for (float v : f.data()) CHECK(v == 0.0f);
    CHECK(fqc::score(arch, params, pattern_image(arch.input)) == 0.0);
  }

  TEST_CASE("score identities") {
    const auto arch = fqc::build_reduced_arch(8);
    auto params = ModelParams::init(arch, 5);
    std::mt19937_64 rng(5);
    const auto img = random_image(rng, arch.input);
    const auto f = fqc::encode(arch, params, img);

    for (float& v : params.classifier_w().data()) v = 0.0f;
    CHECK(fqc::score(arch, params, img) == 0.0);

    const std::size_t i = 3;
    params.classifier_w()[i] = 1.0f;
    CHECK(fqc::score(arch, params, img) == doctest::Approx(f[i]).epsilon(1e-6));

    auto fresh = ModelParams::init(arch, 6);
    const double s1 = fqc::score(arch, fresh, img);
    for (float& v : fresh.classifier_w().data()) v *= 2.0f;
    CHECK(fqc::score(arch, fresh, img) == doctest::Approx(2.0 * s1).epsilon(1e-5));
  }

  TEST_CASE("wrong image shape") {
    const auto arch = fqc::build_reduced_arch(8);
    const auto params = ModelParams::init(arch, 1);
    CHECK_THROWS_AS(fqc::encode(arch, params, ModelTensor({1, 3, 64, 64})), fqc::ShapeError);
    CHECK_THROWS_AS(fqc::encode(arch, params, ModelTensor({1, 1, 128, 128})), fqc::ShapeError);
  }

  TEST_CASE("inserting an identity LRN leaves the score unchanged") {
    const auto arch = fqc::build_reduced_arch(8);
    const auto params = ModelParams::init(arch, 9);
    std::mt19937_64 rng(9);
    for (std::size_t layer = 0; layer < 5; ++layer) {
      auto modified = arch;
      auto& conv = std::get<fqc::ConvLayer>(modified.layers[layer]);
      if (conv.lrn) continue;
      conv.lrn = fqc::kernels::LrnParams{5, 1.0, 0.0, 0.75};
      const auto img = random_image(rng, arch.input);
      CHECK(fqc::score(modified, params, img) == fqc::score(arch, params, img));
    }
  }

  TEST_CASE("batch scoring matches single-image scoring") {
    const auto arch = fqc::build_reduced_arch(8);
    const auto params = ModelParams::init(arch, 2);
    std::mt19937_64 rng(2);
    const auto a = random_image(rng, arch.input);
    const auto b = random_image(rng, arch.input);
    ModelTensor batch({2, 3, arch.input.height, arch.input.width});
    std::copy(a.data().begin(), a.data().end(), batch.data().begin());
    std::copy(b.data().begin(), b.data().end(), batch.data().begin() + a.size());
    const auto scores = fqc::forward_scores(arch, params, batch);
    CHECK(scores[0] == doctest::Approx(fqc::score(arch, params, a)).epsilon(1e-5));
    CHECK(scores[1] == doctest::Approx(fqc::score(arch, params, b)).epsilon(1e-5));
  }

  TEST_CASE("seeded golden feature checksum") {
    const auto arch = fqc::build_reduced_arch(4);
    const auto params = ModelParams::init(arch, 42);
    const auto f = fqc::encode(arch, params, pattern_image(arch.input));
    double sum = 0, sum_sq = 0;
    for (float v : f.data()) {
      sum += v;
      sum_sq += double(v) * v;
    }
    CHECK(sum == doctest::Approx(kGoldenSum).epsilon(1e-4));
    CHECK(sum_sq == doctest::Approx(kGoldenSumSq).epsilon(1e-4));
  }
}

TEST_SUITE("parameters") {
  TEST_CASE("initialization is deterministic in the seed") {
    const auto arch = fqc::build_reduced_arch(4);
    CHECK(fqc::identical(ModelParams::init(arch, 7), ModelParams::init(arch, 7)));
    CHECK_FALSE(fqc::identical(ModelParams::init(arch, 7), ModelParams::init(arch, 8)));
  }

  TEST_CASE("shapes follow the architecture") {
    const auto arch = fqc::build_reduced_arch(4);
    const auto params = ModelParams::init(arch, 1);
    const auto infos = arch.parameters();
    REQUIRE(params.size() == infos.size());
    for (std::size_t i = 0; i < infos.size(); ++i) {
      CHECK(params.names()[i] == infos[i].name);
      CHECK(params.tensors()[i].shape() == infos[i].shape);
    }
    CHECK(params.classifier_bias().size() == 1);
    CHECK(params.classifier_bias().item() == 0.0f);
    CHECK_NOTHROW(params.check_against(arch));
    CHECK_THROWS_AS(params.check_against(fqc::build_reduced_arch(8)), fqc::ConsistencyError);
  }

  TEST_CASE("non-finite values are inconsistent") {
    const auto arch = fqc::build_reduced_arch(8);
    auto params = ModelParams::init(arch, 1);
    params.at("fc1.bias")[0] = std::nanf("");
    CHECK_THROWS_AS(params.check_against(arch), fqc::ConsistencyError);
  }
}

TEST_SUITE("checkpoint") {
  TEST_CASE("default-arch round trip is bit exact") {
    fqc::testing::TempDir dir;
    const auto arch = build_default_arch();
    const auto params = ModelParams::init(arch, 11);
    fqc::save_checkpoint(params, arch, dir / "m.fqc", {11, 3, "2026-01-02T03:04:05Z"});
    const auto ck = fqc::load_checkpoint(dir / "m.fqc");
    CHECK(ck.arch == arch);
    CHECK(fqc::identical(ck.params, params));
    CHECK(ck.meta.seed == 11);
    CHECK(ck.meta.epoch == 3);
    CHECK(ck.meta.created_at == "2026-01-02T03:04:05Z");
  }

  TEST_CASE("encoding is deterministic") {
    const auto arch = fqc::build_reduced_arch(8);
    const auto params = ModelParams::init(arch, 4);
    CHECK(fqc::encode_checkpoint(params, arch) == fqc::encode_checkpoint(params, arch));
  }

  TEST_CASE("layout: magic, little-endian header length, JSON header") {
    const auto arch = fqc::build_reduced_arch(8);
    const auto bytes = fqc::encode_checkpoint(ModelParams::init(arch, 4), arch);
    CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "FQC1");
    const std::size_t len = bytes[4] | bytes[5] << 8 | bytes[6] << 16 | bytes[7] << 24;
    const auto header = nlohmann::json::parse(bytes.begin() + 8, bytes.begin() + 8 + len);
    std::size_t payload = 0;
    for (const auto& t : header.at("tensors")) payload += 4 * t.at("count").get<std::size_t>();
    CHECK(bytes.size() == 8 + len + payload);
    CHECK(header.at("metadata").contains("created_at"));
  }

  TEST_CASE("wrong magic") {
    const auto arch = fqc::build_reduced_arch(8);
    auto bytes = fqc::encode_checkpoint(ModelParams::init(arch, 4), arch);
    bytes[0] = 'X';
    try {
      fqc::decode_checkpoint(bytes);
      FAIL("expected FormatError");
    } catch (const fqc::FormatError& e) {
      CHECK(e.offset() == 0);
    }
  }

  TEST_CASE("payload truncated by one byte names both lengths") {
    const auto arch = fqc::build_reduced_arch(8);
    auto bytes = fqc::encode_checkpoint(ModelParams::init(arch, 4), arch);
    const auto full = bytes.size();
    bytes.pop_back();
    try {
      fqc::decode_checkpoint(bytes);
      FAIL("expected FormatError");
    } catch (const fqc::FormatError& e) {
      const std::string what = e.what();
      CAPTURE(what);
      CHECK(e.offset() == full - 1);
      CHECK(what.find("index expects") != std::string::npos);
    }
  }

  TEST_CASE("truncated header and garbage") {
    CHECK_THROWS_AS(fqc::decode_checkpoint({'F', 'Q'}), fqc::FormatError);
    std::vector<std::uint8_t> bad = {'F', 'Q', 'C', '1', 100, 0, 0, 0, '{'};
    CHECK_THROWS_AS(fqc::decode_checkpoint(bad), fqc::FormatError);
    std::vector<std::uint8_t> notjson = {'F', 'Q', 'C', '1', 3, 0, 0, 0, 'a', 'b', 'c'};
    CHECK_THROWS_AS(fqc::decode_checkpoint(notjson), fqc::FormatError);
  }

  TEST_CASE("missing file") {
    CHECK_THROWS_AS(fqc::load_checkpoint("/nonexistent/model.fqc"), fqc::NotFoundError);
  }

  TEST_CASE("architecture JSON round trip") {
    for (std::size_t s : {1, 2, 4, 8}) {
      const auto arch = s == 1 ? build_default_arch() : fqc::build_reduced_arch(s);
      CHECK(fqc::arch_from_json(fqc::arch_to_json(arch)) == arch);
    }
    CHECK_THROWS_AS(fqc::arch_from_json(nlohmann::json::object()), fqc::ConfigError);
  }
}
