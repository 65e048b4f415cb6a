#include "dehaze/phantom.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "dehaze/rng.hpp"

namespace dehaze {
namespace {

constexpr double kApexX = 0.5;
constexpr double kApexY = 0.02;
constexpr double kSectorHalfAngle = 0.78;
constexpr double kSectorRadius = 0.97;
constexpr double kSoftTissueLevel = 0.18;
constexpr double kWallLevel = 0.85;
constexpr double kWallThickness = 0.045;
constexpr double kBloodFloor = 0.02;
constexpr double kBloodRise = 0.04;

bool inside_unit(double v) { return v >= 0.0 && v <= 1.0; }

void validate(const PhantomSpec& s) {
    if (s.height < 32 || s.width < 32)
        throw ParameterError("phantom: image must be at least 32x32, got " +
                             std::to_string(s.height) + "x" + std::to_string(s.width));
    const Ellipse& v = s.ventricle;
    if (!(v.ax > 0.0) || !(v.ay > 0.0)) throw ParameterError("phantom: ventricle axes must be > 0");
    if (!inside_unit(v.cx) || !inside_unit(v.cy))
        throw ParameterError("phantom: ventricle centre outside the unit square");
    if (!(s.septum.thickness > 0.0)) throw ParameterError("phantom: septum thickness must be > 0");
    if (s.septum.polyline.size() < 2) throw ParameterError("phantom: septum polyline needs >= 2 points");
    for (const auto& p : s.septum.polyline)
        if (!inside_unit(p[0]) || !inside_unit(p[1]))
            throw ParameterError("phantom: septum control point outside the unit square");
    if (!(s.tissue_brightness >= 0.0 && s.tissue_brightness <= 1.0))
        throw ParameterError("phantom: tissue_brightness must lie in [0,1]");
    if (!(s.speckle_strength >= 0.0)) throw ParameterError("phantom: speckle_strength must be >= 0");
    const HazeField& h = s.haze;
    if (!(h.base_sigma >= 0.0) || !(h.peak_sigma >= 0.0) || !(h.decay > 0.0))
        throw ParameterError("phantom: haze sigmas must be >= 0 and decay > 0");
}

/// Normalised elliptical radius: < 1 inside.
double ellipse_radius(const Ellipse& e, double x, double y, double grow = 0.0) {
    const double dx = x - e.cx, dy = y - e.cy;
    const double c = std::cos(e.rotation), s = std::sin(e.rotation);
    const double u = c * dx + s * dy;
    const double v = -s * dx + c * dy;
    const double a = e.ax + grow, b = e.ay + grow;
    return std::sqrt((u * u) / (a * a) + (v * v) / (b * b));
}

double distance_to_polyline(const std::vector<std::array<double, 2>>& line, double x, double y) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i + 1 < line.size(); ++i) {
        const double ax = line[i][0], ay = line[i][1];
        const double bx = line[i + 1][0], by = line[i + 1][1];
        const double vx = bx - ax, vy = by - ay;
        const double len2 = vx * vx + vy * vy;
        double t = len2 > 0.0 ? ((x - ax) * vx + (y - ay) * vy) / len2 : 0.0;
        t = std::clamp(t, 0.0, 1.0);
        const double px = ax + t * vx - x, py = ay + t * vy - y;
        best = std::min(best, std::sqrt(px * px + py * py));
    }
    return best;
}

} // namespace

bool in_sector(double x, double y) {
    const double dx = x - kApexX, dy = y - kApexY;
    if (dy <= 0.0) return false;
    const double r = std::sqrt(dx * dx + dy * dy);
    return r <= kSectorRadius && std::abs(std::atan2(dx, dy)) <= kSectorHalfAngle;
}

PhantomSample generate_phantom(const PhantomSpec& spec) {
    validate(spec);
    const int H = spec.height, W = spec.width;
    PhantomSample out{Raster(H, W), Raster(H, W), Mask(H, W), Mask(H, W), Raster(H, W), Raster(H, W)};
    Rng rng(spec.seed);

    const Ellipse& lv = spec.ventricle;
    double septum_x = 0.0;
    for (const auto& p : spec.septum.polyline) septum_x += p[0];
    septum_x /= static_cast<double>(spec.septum.polyline.size());
    const Ellipse rv{std::max(0.0, septum_x - 0.17), lv.cy - 0.02, 0.09, 0.19, 0.1};
    const double haze_cx = lv.cx;
    const double haze_cy = lv.cy - spec.haze.lift * lv.ay;

    const double s = spec.speckle_strength;
    for (int r = 0; r < H; ++r) {
        for (int c = 0; c < W; ++c) {
            const double x = (c + 0.5) / W, y = (r + 0.5) / H;
            // Speckle and haze draws are made for every pixel so the stream layout
            // does not depend on geometry.
            const double z_speckle = rng.normal();
            const double z_haze = rng.normal();
            if (!in_sector(x, y)) continue;

            const double speckle = std::exp(s * z_speckle - 0.5 * s * s);
            const double lv_r = ellipse_radius(lv, x, y);
            const bool in_lv = lv_r < 1.0;
            const bool in_septum =
                !in_lv && distance_to_polyline(spec.septum.polyline, x, y) <= 0.5 * spec.septum.thickness;
            double value;
            if (in_lv) {
                value = kBloodFloor + kBloodRise * lv_r * lv_r;
                out.ventricle_mask(r, c) = 1;
            } else if (in_septum) {
                value = spec.tissue_brightness * speckle;
                out.septum_mask(r, c) = 1;
            } else if (ellipse_radius(lv, x, y, kWallThickness) < 1.0) {
                value = kWallLevel * spec.tissue_brightness * speckle;
            } else if (const double rv_r = ellipse_radius(rv, x, y); rv_r < 1.0) {
                value = kBloodFloor + kBloodRise * rv_r * rv_r;
            } else {
                value = kSoftTissueLevel * spec.tissue_brightness * speckle;
            }
            const float clean = static_cast<float>(std::clamp(value, 0.0, 1.0));

            const double dx = x - haze_cx, dy = y - haze_cy;
            const double bump = std::exp(-(dx * dx + dy * dy) / (2.0 * spec.haze.decay * spec.haze.decay));
            const float sigma = static_cast<float>(spec.haze.base_sigma + spec.haze.peak_sigma * bump);
            const float raw = clean + sigma * static_cast<float>(z_haze);

            out.clean(r, c) = clean;
            out.true_sigma(r, c) = sigma;
            out.true_haze(r, c) = raw - clean;
            out.hazy(r, c) = std::clamp(raw, 0.0f, 1.0f);
        }
    }
    return out;
}

PhantomRanges PhantomRanges::narrowed(double factor) const {
    auto squeeze = [factor](double lo, double hi, double& out_lo, double& out_hi) {
        const double mid = 0.5 * (lo + hi), half = 0.5 * (hi - lo) * factor;
        out_lo = mid - half;
        out_hi = mid + half;
    };
    PhantomRanges r = *this;
    r.center_jitter *= factor;
    r.rotation_jitter *= factor;
    r.septum_shift *= factor;
    squeeze(axis_scale_min, axis_scale_max, r.axis_scale_min, r.axis_scale_max);
    squeeze(thickness_scale_min, thickness_scale_max, r.thickness_scale_min, r.thickness_scale_max);
    squeeze(brightness_min, brightness_max, r.brightness_min, r.brightness_max);
    squeeze(haze_scale_min, haze_scale_max, r.haze_scale_min, r.haze_scale_max);
    return r;
}

PhantomSpec vary_spec(const PhantomSpec& base, const PhantomRanges& ranges, std::uint64_t seed,
                      std::uint64_t index) {
    const std::uint64_t sample_seed = derive_seed(seed, index);
    Rng rng(sample_seed);
    PhantomSpec s = base;
    s.seed = derive_seed(sample_seed, 1);
    s.ventricle.cx += rng.uniform(-ranges.center_jitter, ranges.center_jitter);
    s.ventricle.cy += rng.uniform(-ranges.center_jitter, ranges.center_jitter);
    s.ventricle.ax *= rng.uniform(ranges.axis_scale_min, ranges.axis_scale_max);
    s.ventricle.ay *= rng.uniform(ranges.axis_scale_min, ranges.axis_scale_max);
    s.ventricle.rotation += rng.uniform(-ranges.rotation_jitter, ranges.rotation_jitter);
    const double shift = rng.uniform(-ranges.septum_shift, ranges.septum_shift);
    for (auto& p : s.septum.polyline) p[0] = std::clamp(p[0] + shift, 0.0, 1.0);
    s.septum.thickness *= rng.uniform(ranges.thickness_scale_min, ranges.thickness_scale_max);
    s.tissue_brightness = rng.uniform(ranges.brightness_min, ranges.brightness_max);
    const double haze_scale = rng.uniform(ranges.haze_scale_min, ranges.haze_scale_max);
    s.haze.base_sigma *= haze_scale;
    s.haze.peak_sigma *= haze_scale;
    return s;
}

std::vector<PhantomSample> generate_dataset(const PhantomSpec& spec_template, int count,
                                            std::uint64_t seed, const PhantomRanges& ranges) {
    if (count < 1) throw ParameterError("generate_dataset: count must be >= 1");
    std::vector<PhantomSample> out;
    out.reserve(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i)
        out.push_back(generate_phantom(vary_spec(spec_template, ranges, seed, static_cast<std::uint64_t>(i))));
    return out;
}

} // namespace dehaze
