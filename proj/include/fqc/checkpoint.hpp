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

// Checkpoint file layout:
//
//   "FQC1"                      4 bytes magic
//   header_length               uint32, little-endian
//   header                      UTF-8 JSON, header_length bytes
//   payload                     float32 little-endian, tensors in index order
//
// The header holds {"architecture", "tensors": [{name, shape, offset, count}],
// "metadata": {seed, epoch, created_at}}. Offsets are in bytes from the start
// of the payload.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

#include "fqc/model.hpp"

namespace fqc {

struct CheckpointMeta {
  std::uint64_t seed = 0;
  std::uint32_t epoch = 0;
  std::string created_at = "1970-01-01T00:00:00Z";
};

struct Checkpoint {
  ArchitectureSpec arch;
  ModelParams params;
  CheckpointMeta meta;
};

nlohmann::json arch_to_json(const ArchitectureSpec& arch);
ArchitectureSpec arch_from_json(const nlohmann::json& j);

std::vector<std::uint8_t> encode_checkpoint(const ModelParams& params,
                                            const ArchitectureSpec& arch,
                                            const CheckpointMeta& meta = {});
Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes);

/// Writes atomically (temporary file + rename).
void save_checkpoint(const ModelParams& params, const ArchitectureSpec& arch,
                     const std::filesystem::path& path,
                     const CheckpointMeta& meta = {});
Checkpoint load_checkpoint(const std::filesystem::path& path);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path,
                      const std::vector<std::uint8_t>& bytes);

}  // namespace fqc
