// Copyright 2026 The copyflow Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <filesystem>
#include <string>
#include <string_view>

#include "copyflow/param_store.hpp"

namespace copyflow {

/// On-disk layout (all integers little-endian):
///
///   magic      8 bytes  "CPFLOWCK"
///   version    u32      kCheckpointVersion
///   adam_step  u64
///   rng_state  u32 length + bytes (textual std::mt19937_64 state)
///   metadata   u32 length + bytes (JSON: model config, vocabulary, mode)
///   count      u32
///   count x { name: u32 length + bytes, rank: u32, dims: rank x u64,
///             payload: prod(dims) x IEEE-754 binary64, little-endian }
///
/// Entries appear in ParamStore insertion order. Adam moments are not stored.
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  ParamStore params;
  std::string rng_state;
  std::string metadata;
};

void save_checkpoint(const std::filesystem::path& path, const ParamStore& params,
                     std::string_view rng_state, std::string_view metadata);

/// Throws DataError on a malformed or truncated file.
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace copyflow
