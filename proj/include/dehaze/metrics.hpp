#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "dehaze/diffusion.hpp"
#include "dehaze/raster.hpp"

namespace dehaze {

struct RoiPair {
    std::vector<double> septum;
    std::vector<double> ventricle;
};

RoiPair roi_pair(const Raster& image, const Mask& septum, const Mask& ventricle);

/// |mu_s - mu_v| / sqrt(var_s + var_v) with population variances.
double cnr(const RoiPair& roi);

/// 1 - sum_k min(h_s(k), h_v(k)) over `bins` equal bins spanning [0,1].
/// Values outside [0,1] fall into the end bins.
double gcnr(const RoiPair& roi, int bins = 100);

/// Two-sample Kolmogorov-Smirnov statistic sup |F_a - F_b|.
double ks_statistic(std::span<const double> a, std::span<const double> b);

/// Unbiased MMD^2 of embedder features, multiplied by 1000.
double kid_score(std::span<const Raster> set_a, std::span<const Raster> set_b, const Embedder& embedder);

/// Clipping range used to map a raw metric onto [0,1].
struct Anchor {
    double min = 0.0;
    double max = 1.0;

    void validate(const std::string& name) const;
    double normalize(double v) const;
    bool operator==(const Anchor&) const = default;
};

struct ScoreAnchors {
    Anchor cnr{0.0, 5.0};
    Anchor gcnr{0.0, 1.0};
    Anchor ks{0.0, 1.0};
    Anchor kid{0.0, 1.0};

    void validate() const;
    bool operator==(const ScoreAnchors&) const = default;
};

struct ScoreWeights {
    double denoise = 5.0;
    double structure = 3.0;
    double downstream = 2.0;
};

/// Sub-scores in [0,1]. A NaN component counts as missing.
struct ScoreComponents {
    double denoise = 0.0;
    double structure = 0.0;
    double downstream = 0.0;
};

double final_score(const ScoreComponents& c, const ScoreWeights& w = {});

struct MetricReport {
    double cnr = 0.0;
    double gcnr = 0.0;
    double ks_septum = 0.0;
    double ks_ventricle = 0.0;
    double kid = 0.0; // x1000; NaN when no set-level value is available
    double final_score = 0.0;
};

struct MetricSettings {
    ScoreAnchors anchors;
    int gcnr_bins = 100;
    double downstream = 0.5; // stand-in for the external segmentation-quality score

    void validate() const;
    bool operator==(const MetricSettings&) const = default;
};

/// denoise = mean of normalised (1 - kid), cnr, gcnr and (1 - ks_ventricle),
/// leaving out kid when it is NaN; structure = 1 - ks_septum.
ScoreComponents score_components(const MetricReport& r, const MetricSettings& s);

/// Per-image metrics: contrast on `output`, KS of its ventricle against
/// `clean` and of its septum against `hazy`. Outputs are clamped to [0,1] first.
MetricReport evaluate_image(const Raster& output, const Raster& clean, const Raster& hazy, const Mask& ventricle,
                            const Mask& septum, const MetricSettings& settings, double kid = std::nan(""));

/// Mean of the per-image fields, with the set-level KID and a recomputed final score.
MetricReport aggregate(std::span<const MetricReport> reports, double kid, const MetricSettings& settings);

} // namespace dehaze
