#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dehaze/diffusion.hpp"
#include "dehaze/metrics.hpp"
#include "dehaze/region_segmenter.hpp"
#include "dehaze/sampler.hpp"
#include "dehaze/segmentation.hpp"

namespace dehaze {

struct PathsConfig {
    std::string data;          // clean training images, or phantom root with clean/ hazy/ masks/
    std::string pretrain_data; // optional broader set for the pretraining phase
    std::string checkpoint;
    std::string segmenter;     // learned segmenter checkpoint; empty means the mask oracle
    std::string output;

    bool operator==(const PathsConfig&) const = default;
};

/// One searched parameter: a config key and its sampling range.
struct SweepParam {
    std::string key;
    double low = 0.0;
    double high = 1.0;
    bool log_scale = false;

    bool operator==(const SweepParam&) const = default;
};

struct SweepConfig {
    int trials = 20;
    std::vector<SweepParam> params{{"guidance.eta", 1e-4, 1e-1, true}};
    int images = 8;                 // size of the generated validation set
    int image_size = 64;
    std::uint64_t data_seed = 1000; // validation set seed
    int steps = 0;                  // sampler steps during the sweep; 0 keeps guidance.steps

    void validate() const;
    bool operator==(const SweepConfig&) const = default;
};

struct RunConfig {
    SegWeights seg;
    GuidanceConfig guidance;
    TrainConfig train;
    UNetConfig model;
    SegmenterConfig segmenter;
    MetricSettings metrics;
    SweepConfig sweep;
    PathsConfig paths;
    std::uint64_t seed = 0;

    /// Throws ConfigError naming the offending field.
    void validate() const;
    bool operator==(const RunConfig&) const = default;
};

/// Parses `key = value` lines ('#' starts a comment). Keys are dotted
/// (guidance.eta, seg.omega_s, ...); a bare final segment such as `eta` is
/// accepted when it names exactly one key.
RunConfig parse_config(const std::string& text, const std::string& origin = "<config>");
RunConfig load_config(const std::filesystem::path& path);

/// Every key in canonical form. Reals are printed with 17 significant digits
/// so that parsing the text gives back an equal config.
std::string to_text(const RunConfig& config);
void save_config(const std::filesystem::path& path, const RunConfig& config);

/// Canonical keys in output order.
std::vector<std::string> config_keys();
/// Sets a single key, with the same validation as parsing.
void set_config_value(RunConfig& config, const std::string& key, const std::string& value);
std::string get_config_value(const RunConfig& config, const std::string& key);

std::string format_real(double v);

} // namespace dehaze
