#pragma once

#include <vector>

#include "dehaze/raster.hpp"

namespace dehaze {

/// Raw per-region scores from a segmenter; thresholded later by theta.
struct RegionLogits {
    Raster ventricle;
    Raster septum;
};

/// Anything that maps a hazy image to ventricle and septum logits.
/// Implementations must be safe for concurrent const use.
class RegionSegmenter {
public:
    virtual ~RegionSegmenter() = default;
    virtual RegionLogits segment(const Raster& y) const = 0;
};

/// Returns +/- `magnitude` logits from known masks.
class OracleSegmenter final : public RegionSegmenter {
public:
    OracleSegmenter(Mask ventricle, Mask septum, float magnitude = 10.0f);
    RegionLogits segment(const Raster& y) const override;

private:
    Mask ventricle_;
    Mask septum_;
    float magnitude_;
};

/// Mask weights and thresholds. Defaults are the published inference settings.
struct SegWeights {
    double omega = 1.0;      // background
    double omega_v = 0.3;    // ventricle
    double omega_s = 2.0;    // septum, skeleton and dark pixels
    double theta = 0.176;    // logit threshold
    double sigma_blur = 4.2; // pixels

    void validate() const;
    bool operator==(const SegWeights&) const = default;
};

struct FixedBands {
    int top = 0;
    int bottom = 0;
};

struct MaskBundle {
    Raster ventricle;     // v(y), blurred
    Raster septum;        // s(y), blurred
    Mask ventricle_bin;   // pre-blur thresholded
    Mask septum_bin;
    Mask skeleton;        // t(y)
    Mask background;      // b(y)
    Mask dark;            // d(y)
    FixedBands bands;
};

struct GuidanceMap {
    Raster precision; // diagonal of the inverse haze covariance
    MaskBundle bundle;
    double effective_omega_v = 0.0;
    bool ventricle_split = false;
};

/// Separable Gaussian blur, kernel radius ceil(3 sigma), replicate borders.
/// sigma == 0 returns the input unchanged.
Raster gaussian_blur(const Raster& in, double sigma);

Mask threshold(const Raster& logits, double theta);
Raster threshold_and_blur(const Raster& logits, double theta, double sigma_blur);

/// Otsu threshold over a 256-bin histogram of [0,1] intensities.
double otsu_threshold(const Raster& y);
Mask binarize_for_skeleton(const Raster& y);

/// Zhang-Suen two-subiteration thinning until no pixel changes.
/// Pixels outside the raster count as background.
Mask skeletonize(const Mask& binary);

/// Sizes of the 8-connected foreground components, in discovery order.
std::vector<std::size_t> component_areas(const Mask& m);

struct PixelClasses {
    Mask background;
    Mask dark;
};

inline constexpr float kDarkThreshold = 1e-6f;

PixelClasses classify_pixels(const Raster& y, const Mask& ventricle_bin, const Mask& septum_bin,
                             const Mask& skeleton);

/// True when removing skeleton pixels leaves the ventricle in two or more
/// 8-connected pieces, each at least `min_fraction` of the ventricle area.
bool ventricle_split_by_skeleton(const Mask& ventricle_bin, const Mask& skeleton,
                                 double min_fraction = 0.01);

/// precision = omega*b + omega_v_eff*v + omega_s*(s + t + d), zero on fixed bands.
GuidanceMap compose_guidance(const MaskBundle& bundle, const SegWeights& weights);

MaskBundle build_masks(const Raster& y, const RegionLogits& logits, const SegWeights& weights,
                       FixedBands bands = {});

/// Full chain: segment, threshold/blur, skeletonise, classify, compose.
GuidanceMap build_guidance(const Raster& y, const RegionSegmenter& segmenter,
                           const SegWeights& weights, FixedBands bands = {});

double dice(const Mask& a, const Mask& b);

} // namespace dehaze
