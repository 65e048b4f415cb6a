#pragma once

#include <cstdint>
#include <vector>

#include "dehaze/nn/params.hpp"
#include "dehaze/segmentation.hpp"

namespace dehaze {

struct SegmenterConfig {
    int channels = 8;
    double learning_rate = 5e-4;
    int steps = 500;
    int batch_size = 4;
    std::uint64_t seed = 0;

    void validate() const;
    bool operator==(const SegmenterConfig&) const = default;
};

struct SegExample {
    Raster hazy;
    Mask ventricle;
    Mask septum;
};

/// Two-level encoder-decoder producing ventricle and septum logits. The input
/// size is fixed at construction; other sizes are rejected.
class LearnedSegmenter final : public RegionSegmenter {
public:
    LearnedSegmenter(int height, int width, int channels, std::uint64_t seed);

    RegionLogits segment(const Raster& y) const override;

    /// Logits for a batch {N,1,H,W}, as {N,2,H,W} (ventricle, septum).
    nn::Var forward(nn::Tape& tape, nn::Var images) const;

    int height() const { return height_; }
    int width() const { return width_; }
    int channels() const { return channels_; }
    nn::ParameterSet& parameters() { return params_; }
    const nn::ParameterSet& parameters() const { return params_; }

private:
    int height_, width_, channels_;
    nn::ParameterSet params_;
};

struct SegTrainReport {
    std::vector<double> loss_trace; // per step, mean BCE per pixel
    double train_dice_ventricle = 0.0;
    double validation_dice_ventricle = 0.0;
    double validation_dice_septum = 0.0;
};

/// Adam on summed BCE-with-logits of both regions. Dice is measured at `theta`.
LearnedSegmenter train_region_segmenter(const std::vector<SegExample>& train,
                                        const std::vector<SegExample>& validation,
                                        const SegmenterConfig& config, double theta,
                                        SegTrainReport* report = nullptr);

/// Mean ventricle and septum Dice of `model` over `set` at threshold `theta`.
std::pair<double, double> mean_dice(const RegionSegmenter& model, const std::vector<SegExample>& set,
                                    double theta);

} // namespace dehaze
