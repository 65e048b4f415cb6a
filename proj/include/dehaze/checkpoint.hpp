#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "json.hpp"

#include "dehaze/diffusion.hpp"
#include "dehaze/nn/params.hpp"
#include "dehaze/region_segmenter.hpp"

namespace dehaze {

/// Versioned binary container: the 8-byte magic "DHZCKPT\0", a u32 format
/// version, a u64 header length, a JSON header (metadata plus a tensor
/// directory), then little-endian float32 tensor data.
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointContents {
    nlohmann::json meta;
    /// Named parameter sets, e.g. "theta" and "theta_ema".
    std::map<std::string, nn::ParameterSet> sets;
};

void write_checkpoint(const std::filesystem::path& path, const nlohmann::json& meta,
                      const std::vector<std::pair<std::string, const nn::ParameterSet*>>& sets);
CheckpointContents read_checkpoint(const std::filesystem::path& path);

nlohmann::json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j);

struct LoadedDenoiser {
    std::unique_ptr<UNetDenoiser> denoiser;
    NoiseSchedule schedule;
    TrainConfig train;
    nlohmann::json meta;
};

/// Stores theta, theta_ema, architecture, schedule, data variance and TrainConfig.
void save_denoiser(const std::filesystem::path& path, const UNetDenoiser& denoiser, const NoiseSchedule& schedule,
                   const TrainConfig& train, const nlohmann::json& extra = nlohmann::json::object());
/// With `use_ema` the returned model runs on the EMA weights.
LoadedDenoiser load_denoiser(const std::filesystem::path& path, bool use_ema = true);

void save_segmenter(const std::filesystem::path& path, const LearnedSegmenter& model, const SegmenterConfig& config,
                    const nlohmann::json& extra = nlohmann::json::object());
std::unique_ptr<LearnedSegmenter> load_segmenter(const std::filesystem::path& path);

} // namespace dehaze
