/* Copyright 2026 The VirAAL Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#ifndef VIRAAL_CHECKPOINT_HPP_
#define VIRAAL_CHECKPOINT_HPP_

// Checkpoint container:
//
//   bytes 0..7   magic "VIRAALCK"
//   bytes 8..11  format version (uint32, little endian)
//   bytes 12..19 header length N (uint64, little endian)
//   N bytes      JSON header: dims, vocabulary, vocabulary hashes, run config,
//                tensor table [{name, rows, cols, offset}]
//   payload      float64 little-endian tensors, column-major, at `offset`
//                bytes from the start of the payload

#include <filesystem>
#include <stdexcept>

#include <json.hpp>

#include "viraal/corpus.hpp"
#include "viraal/model.hpp"

namespace viraal {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  ModelParams params;
  Vocabulary vocab;
  nlohmann::json run_config = nlohmann::json::object();
};

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace viraal

#endif  // VIRAAL_CHECKPOINT_HPP_
