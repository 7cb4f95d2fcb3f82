// SPDX-License-Identifier: Apache-2.0
//
// Binary checkpoint, all integers little-endian:
//
//   "CRRN" | u32 version | u64 n | n bytes of UTF-8 JSON metadata
//   then until end of file, one record per tensor:
//   u32 name length | name | u32 rank | rank x u64 extents | f64 values
//
// The metadata holds the model and training configuration, the optimizer
// state (completed epochs, current learning rate, best validation PA), the
// generator state and which running statistics are initialized. Running
// statistics are stored as tensors named "<set>stats.bn<k>.mean|var".

#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>

#include "crrn/train.hpp"

namespace crrn {

inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct Checkpoint {
    TrainConfig train;
    TrainState state;

    friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

std::string serialize_checkpoint(const Checkpoint& checkpoint);
/// Throws CheckpointError on a bad magic, unknown version, truncation or a
/// tensor that does not match the model configuration.
Checkpoint deserialize_checkpoint(const std::string& bytes);

/// Writes to a sibling temporary file, then renames it into place.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace crrn
