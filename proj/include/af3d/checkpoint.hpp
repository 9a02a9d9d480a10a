#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "af3d/network.hpp"

namespace af3d {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct TrainingState {
    Network<float> network;
    SgdOptimizer<float> optimizer;
    std::int64_t step = 0;
    std::string extra_json = "{}";
};

/// Writes magic "AF3D", version, length-prefixed JSON config, then parameter and optimizer
/// records ({name, rank, dims, f32 payload}), each section preceded by its record count.
/// `extra` is stored under "extra" in the JSON block.
void save_checkpoint(const Network<float>& net, const SgdOptimizer<float>& opt, std::int64_t step,
                     const std::filesystem::path& path, const std::string& extra_json = "{}");

TrainingState load_checkpoint(const std::filesystem::path& path);

/// The JSON block of a checkpoint, for inspection.
std::string read_checkpoint_config(const std::filesystem::path& path);

}  // namespace af3d
