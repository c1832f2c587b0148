// Copyright 2026 The zsclab Authors
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

// Checkpoint files: a text header followed by the raw little-endian float32
// parameter vector.
//
//   zsc-checkpoint
//   version = 1
//   kind = policy
//   <key> = <value>          (kind-specific shape fields, in order)
//   update = <n>
//   rng = <engine state>
//   layers = <L>
//   layer <name> <rows> <cols>   (L lines)
//   params = <count>
//   end
//   <count * 4 bytes>

#ifndef ZSC_CHECKPOINT_HPP_
#define ZSC_CHECKPOINT_HPP_

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "zsc/approximator.hpp"
#include "zsc/diversity.hpp"

namespace zsc {

inline constexpr int kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class CorruptHeader : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};
class UnsupportedVersion : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};
class ShapeMismatch : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};
class TruncatedPayload : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

struct Checkpoint {
  std::string kind;
  std::vector<std::pair<std::string, std::string>> meta;
  long update = 0;
  std::string rng_state;
  ParamLayout layout;
  Vec<float> values;

  const std::string& get(const std::string& key) const;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);
// Also verifies the layer table against `expected`; ShapeMismatch names the
// first differing layer.
Checkpoint load_checkpoint(const std::filesystem::path& path, const ParamLayout& expected);

std::string serialize_rng(const Rng& rng);
Rng deserialize_rng(const std::string& state);

Checkpoint policy_checkpoint(const PolicyParams<Real>& params, long update,
                             const Rng& rng);
PolicyParams<Real> policy_from_checkpoint(const Checkpoint& ckpt);
PolicyParams<Real> load_policy(const std::filesystem::path& path);

Checkpoint discriminator_checkpoint(const DiscriminatorParams<Real>& params, long update,
                                    const Rng& rng);
DiscriminatorParams<Real> discriminator_from_checkpoint(const Checkpoint& ckpt);

// FNV-1a over the parameter bytes.
std::uint64_t param_hash(const Vec<float>& values);

}  // namespace zsc

#endif  // ZSC_CHECKPOINT_HPP_
