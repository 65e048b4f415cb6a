#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "dehaze/raster.hpp"

namespace dehaze {

/// Ellipse in normalised image coordinates (x = column / width, y = row / height).
struct Ellipse {
    double cx = 0.58;
    double cy = 0.52;
    double ax = 0.12;
    double ay = 0.25;
    double rotation = -0.15; // radians
};

/// Thick polyline, normalised coordinates.
struct Band {
    std::vector<std::array<double, 2>> polyline{{0.40, 0.10}, {0.43, 0.50}, {0.45, 0.88}};
    double thickness = 0.07;
};

/// Haze standard-deviation field: a smooth bump centred above the ventricle
/// over a flat floor, confined to the imaging sector.
struct HazeField {
    double base_sigma = 0.02;
    double peak_sigma = 0.22;
    double decay = 0.16; // bump radius, normalised units
    double lift = 0.4;   // bump centre offset above the ventricle centre, in ventricle half-heights
};

struct PhantomSpec {
    int height = 128;
    int width = 128;
    Ellipse ventricle;
    Band septum;
    double tissue_brightness = 0.8;
    double speckle_strength = 0.35;
    HazeField haze;
    std::uint64_t seed = 0;
};

struct PhantomSample {
    Raster clean;
    Raster hazy;
    Mask ventricle_mask;
    Mask septum_mask;
    Raster true_haze;  // hazy - clean before clamping
    Raster true_sigma;
};

/// Per-sample variation applied by `generate_dataset`, as half-widths or factor ranges.
struct PhantomRanges {
    double center_jitter = 0.04;
    double axis_scale_min = 0.85;
    double axis_scale_max = 1.15;
    double rotation_jitter = 0.2;
    double septum_shift = 0.03;
    double thickness_scale_min = 0.8;
    double thickness_scale_max = 1.2;
    double brightness_min = 0.65;
    double brightness_max = 0.9;
    double haze_scale_min = 0.7;
    double haze_scale_max = 1.3;

    /// Same centre, every width multiplied by `factor`.
    PhantomRanges narrowed(double factor) const;
};

PhantomSample generate_phantom(const PhantomSpec& spec);

/// PhantomSpec for sample `index` of a dataset, drawn from `ranges` around `base`.
PhantomSpec vary_spec(const PhantomSpec& base, const PhantomRanges& ranges, std::uint64_t seed,
                      std::uint64_t index);

std::vector<PhantomSample> generate_dataset(const PhantomSpec& spec_template, int count,
                                            std::uint64_t seed, const PhantomRanges& ranges = {});

/// True inside the fan-shaped imaging sector.
bool in_sector(double x, double y);

} // namespace dehaze
