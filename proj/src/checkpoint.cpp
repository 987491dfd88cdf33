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

#include "fqc/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace fqc {
namespace {

constexpr char kMagic[4] = {'F', 'Q', 'C', '1'};
constexpr std::size_t kPrefix = 8;  // magic + header length

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) | static_cast<std::uint32_t>(p[1]) << 8 |
         static_cast<std::uint32_t>(p[2]) << 16 | static_cast<std::uint32_t>(p[3]) << 24;
}

nlohmann::json lrn_to_json(const kernels::LrnParams& p) {
  return {{"depth", p.depth}, {"k", p.k}, {"alpha", p.alpha}, {"beta", p.beta}};
}

}  // namespace

nlohmann::json arch_to_json(const ArchitectureSpec& arch) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& layer : arch.layers) {
    if (const auto* conv = std::get_if<ConvLayer>(&layer)) {
      nlohmann::json j = {{"type", "conv"},          {"filters", conv->filters},
                          {"kernel_size", conv->kernel_size},
                          {"stride", conv->stride},  {"padding", conv->padding},
                          {"relu", conv->relu}};
      j["lrn"] = conv->lrn ? lrn_to_json(*conv->lrn) : nlohmann::json(nullptr);
      j["pool"] = conv->pool ? nlohmann::json{{"window", conv->pool->window},
                                              {"stride", conv->pool->stride}}
                             : nlohmann::json(nullptr);
      layers.push_back(std::move(j));
    } else if (const auto* dense = std::get_if<DenseLayer>(&layer)) {
      layers.push_back(
          {{"type", "fully_connected"}, {"width", dense->width}, {"relu", dense->relu}});
    } else {
      layers.push_back({{"type", "classifier"},
                        {"input_width", std::get<ClassifierLayer>(layer).input_width}});
    }
  }
  return {{"input_shape",
           {arch.input.channels, arch.input.height, arch.input.width}},
          {"reduction", arch.reduction},
          {"layers", std::move(layers)}};
}

ArchitectureSpec arch_from_json(const nlohmann::json& j) {
  ArchitectureSpec arch;
  try {
    const auto& shape = j.at("input_shape");
    arch.input = {shape.at(0).get<std::size_t>(), shape.at(1).get<std::size_t>(),
                  shape.at(2).get<std::size_t>()};
    arch.reduction = j.value("reduction", std::size_t{1});
    for (const auto& l : j.at("layers")) {
      const auto type = l.at("type").get<std::string>();
      if (type == "conv") {
        ConvLayer conv;
        conv.filters = l.at("filters").get<std::size_t>();
        conv.kernel_size = l.at("kernel_size").get<std::size_t>();
        conv.stride = l.at("stride").get<std::size_t>();
        conv.padding = l.at("padding").get<std::size_t>();
        conv.relu = l.at("relu").get<bool>();
        if (!l.at("lrn").is_null()) {
          const auto& p = l["lrn"];
          conv.lrn = kernels::LrnParams{p.at("depth").get<std::size_t>(),
                                        p.at("k").get<double>(),
                                        p.at("alpha").get<double>(),
                                        p.at("beta").get<double>()};
        }
        if (!l.at("pool").is_null()) {
          conv.pool = PoolSpec{l["pool"].at("window").get<std::size_t>(),
                               l["pool"].at("stride").get<std::size_t>()};
        }
        arch.layers.emplace_back(conv);
      } else if (type == "fully_connected") {
        arch.layers.emplace_back(
            DenseLayer{l.at("width").get<std::size_t>(), l.at("relu").get<bool>()});
      } else if (type == "classifier") {
        arch.layers.emplace_back(ClassifierLayer{l.at("input_width").get<std::size_t>()});
      } else {
        throw ConfigError("unknown layer type '" + type + "'");
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed architecture: ") + e.what());
  }
  arch.validate();
  return arch;
}

std::vector<std::uint8_t> encode_checkpoint(const ModelParams& params,
                                            const ArchitectureSpec& arch,
                                            const CheckpointMeta& meta) {
  params.check_against(arch);
  nlohmann::json index = nlohmann::json::array();
  std::size_t offset = 0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& t = params.tensors()[i];
    index.push_back({{"name", params.names()[i]},
                     {"shape", t.shape()},
                     {"offset", offset},
                     {"count", t.size()}});
    offset += t.size() * sizeof(float);
  }
  const nlohmann::json header = {
      {"architecture", arch_to_json(arch)},
      {"tensors", std::move(index)},
      {"metadata",
       {{"seed", meta.seed}, {"epoch", meta.epoch}, {"created_at", meta.created_at}}}};
  const std::string text = header.dump();

  std::vector<std::uint8_t> out;
  out.reserve(kPrefix + text.size() + offset);
  out.insert(out.end(), std::begin(kMagic), std::end(kMagic));
  put_u32(out, static_cast<std::uint32_t>(text.size()));
  out.insert(out.end(), text.begin(), text.end());
  const std::size_t payload_start = out.size();
  out.resize(payload_start + offset);
  std::uint8_t* dst = out.data() + payload_start;
  for (const auto& t : params.tensors()) {
    for (float v : t.data()) {
      auto bits = std::bit_cast<std::uint32_t>(v);
      for (int b = 0; b < 4; ++b) *dst++ = static_cast<std::uint8_t>(bits >> (8 * b));
    }
  }
  return out;
}

namespace {
Checkpoint decode_header_and_payload(const nlohmann::json& header,
                                     const std::vector<std::uint8_t>& bytes,
                                     std::size_t payload_start);
}  // namespace

Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < kPrefix) {
    throw FormatError("checkpoint shorter than its " + std::to_string(kPrefix) +
                          "-byte prefix",
                      bytes.size());
  }
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw FormatError("bad checkpoint magic (expected \"FQC1\")", 0);
  }
  const std::size_t header_len = get_u32(bytes.data() + 4);
  if (bytes.size() < kPrefix + header_len) {
    throw FormatError("truncated checkpoint header: expected " +
                          std::to_string(header_len) + " bytes, have " +
                          std::to_string(bytes.size() - kPrefix),
                      bytes.size());
  }
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.begin() + kPrefix,
                                   bytes.begin() + kPrefix + header_len);
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(std::string("checkpoint header is not JSON: ") + e.what(),
                      kPrefix + e.byte);
  }

  try {
    return decode_header_and_payload(header, bytes, kPrefix + header_len);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed checkpoint header: ") + e.what(), kPrefix);
  }
}

namespace {

Checkpoint decode_header_and_payload(const nlohmann::json& header,
                                     const std::vector<std::uint8_t>& bytes,
                                     std::size_t payload_start) {
  Checkpoint ck;
  ck.arch = arch_from_json(header.at("architecture"));
  const auto& meta = header.at("metadata");
  ck.meta.seed = meta.at("seed").get<std::uint64_t>();
  ck.meta.epoch = meta.at("epoch").get<std::uint32_t>();
  ck.meta.created_at = meta.at("created_at").get<std::string>();

  std::size_t expected = 0;
  for (const auto& entry : header.at("tensors")) {
    expected = std::max(expected, entry.at("offset").get<std::size_t>() +
                                      entry.at("count").get<std::size_t>() * sizeof(float));
  }
  const std::size_t actual = bytes.size() - payload_start;
  if (actual != expected) {
    throw FormatError("checkpoint payload is " + std::to_string(actual) +
                          " bytes, index expects " + std::to_string(expected),
                      bytes.size());
  }
  for (const auto& entry : header.at("tensors")) {
    Shape shape = entry.at("shape").get<Shape>();
    const auto count = entry.at("count").get<std::size_t>();
    const auto offset = entry.at("offset").get<std::size_t>();
    if (numel(shape) != count) {
      throw ConsistencyError("tensor " + entry.at("name").get<std::string>() +
                             " count does not match its shape");
    }
    std::vector<float> data(count);
    const std::uint8_t* src = bytes.data() + payload_start + offset;
    for (std::size_t i = 0; i < count; ++i, src += 4) {
      data[i] = std::bit_cast<float>(get_u32(src));
    }
    ck.params.add(entry.at("name").get<std::string>(),
                  ModelTensor(std::move(shape), std::move(data)));
  }
  ck.params.check_against(ck.arch);
  return ck;
}

}  // namespace

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw NotFoundError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), {}};
}

void write_file_bytes(const std::filesystem::path& path,
                      const std::vector<std::uint8_t>& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error("short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

void save_checkpoint(const ModelParams& params, const ArchitectureSpec& arch,
                     const std::filesystem::path& path, const CheckpointMeta& meta) {
  write_file_bytes(path, encode_checkpoint(params, arch, meta));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(read_file_bytes(path));
}

}  // namespace fqc
