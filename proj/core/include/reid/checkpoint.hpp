#pragma once

#include <filesystem>
#include <string>

#include "reid/model.hpp"

namespace reid {

// Versioned binary container: magic, format version, a JSON header holding
// the model configuration, the training iteration counter and the tensor
// table, then raw little-endian doubles per tensor in header order. Loading
// fails loudly on any magic/version/backbone/shape mismatch.
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
    ModelConfig config;
    long iteration = 0;
};

void save_checkpoint(SiameseModel& model, long iteration, const std::filesystem::path& path);

struct LoadedCheckpoint {
    SiameseModel model;
    long iteration = 0;
};

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace reid
