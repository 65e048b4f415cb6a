#include "dehaze/segmentation.hpp"

#include <array>
#include <cmath>
#include <string>

namespace dehaze {

OracleSegmenter::OracleSegmenter(Mask ventricle, Mask septum, float magnitude)
    : ventricle_(std::move(ventricle)), septum_(std::move(septum)), magnitude_(magnitude) {
    require_same_shape(ventricle_, septum_, "OracleSegmenter");
}

RegionLogits OracleSegmenter::segment(const Raster& y) const {
    require_same_shape(y, ventricle_, "OracleSegmenter::segment");
    RegionLogits out{Raster(y.height(), y.width()), Raster(y.height(), y.width())};
    for (std::size_t i = 0; i < y.size(); ++i) {
        out.ventricle[i] = ventricle_[i] ? magnitude_ : -magnitude_;
        out.septum[i] = septum_[i] ? magnitude_ : -magnitude_;
    }
    return out;
}

void SegWeights::validate() const {
    auto check = [](double v, const char* name) {
        if (!(v >= 0.0) || !std::isfinite(v))
            throw ParameterError(std::string("segmentation weight ") + name + " must be finite and >= 0");
    };
    check(omega, "omega");
    check(omega_v, "omega_v");
    check(omega_s, "omega_s");
    check(sigma_blur, "sigma_blur");
    if (!std::isfinite(theta)) throw ParameterError("segmentation threshold theta must be finite");
}

Raster gaussian_blur(const Raster& in, double sigma) {
    if (sigma < 0.0) throw ParameterError("gaussian_blur: sigma must be >= 0");
    if (sigma == 0.0 || in.empty()) return in;
    const int radius = static_cast<int>(std::ceil(3.0 * sigma));
    std::vector<double> kernel(static_cast<std::size_t>(2 * radius + 1));
    double total = 0.0;
    for (int k = -radius; k <= radius; ++k) {
        const double v = std::exp(-0.5 * k * k / (sigma * sigma));
        kernel[static_cast<std::size_t>(k + radius)] = v;
        total += v;
    }
    for (double& v : kernel) v /= total;

    const int H = in.height(), W = in.width();
    std::vector<double> tmp(in.size());
    for (int r = 0; r < H; ++r)
        for (int c = 0; c < W; ++c) {
            double acc = 0.0;
            for (int k = -radius; k <= radius; ++k) {
                const int cc = std::clamp(c + k, 0, W - 1);
                acc += kernel[static_cast<std::size_t>(k + radius)] * in(r, cc);
            }
            tmp[static_cast<std::size_t>(r) * W + c] = acc;
        }
    Raster out(H, W);
    for (int r = 0; r < H; ++r)
        for (int c = 0; c < W; ++c) {
            double acc = 0.0;
            for (int k = -radius; k <= radius; ++k) {
                const int rr = std::clamp(r + k, 0, H - 1);
                acc += kernel[static_cast<std::size_t>(k + radius)] * tmp[static_cast<std::size_t>(rr) * W + c];
            }
            out(r, c) = static_cast<float>(acc);
        }
    return out;
}

Mask threshold(const Raster& logits, double theta) {
    Mask m(logits.height(), logits.width());
    for (std::size_t i = 0; i < logits.size(); ++i) m[i] = logits[i] > theta ? 1 : 0;
    return m;
}

Raster threshold_and_blur(const Raster& logits, double theta, double sigma_blur) {
    if (sigma_blur < 0.0) throw ParameterError("threshold_and_blur: sigma_blur must be >= 0");
    Raster out = gaussian_blur(to_raster(threshold(logits, theta)), sigma_blur);
    for (auto& v : out.storage()) v = std::clamp(v, 0.0f, 1.0f);
    return out;
}

double otsu_threshold(const Raster& y) {
    std::array<double, 256> hist{};
    for (float v : y.storage()) {
        const int b = std::clamp(static_cast<int>(std::clamp(v, 0.0f, 1.0f) * 255.0f + 0.5f), 0, 255);
        hist[static_cast<std::size_t>(b)] += 1.0;
    }
    const double n = static_cast<double>(y.size());
    double sum_all = 0.0;
    for (int i = 0; i < 256; ++i) sum_all += i * hist[static_cast<std::size_t>(i)];
    double w0 = 0.0, sum0 = 0.0, best = -1.0;
    int best_t = 0;
    for (int t = 0; t < 256; ++t) {
        w0 += hist[static_cast<std::size_t>(t)];
        sum0 += t * hist[static_cast<std::size_t>(t)];
        const double w1 = n - w0;
        if (w0 == 0.0 || w1 == 0.0) continue;
        const double m0 = sum0 / w0, m1 = (sum_all - sum0) / w1;
        const double between = w0 * w1 * (m0 - m1) * (m0 - m1);
        if (between > best) {
            best = between;
            best_t = t;
        }
    }
    // Pixels in bins <= best_t form the lower class.
    return (best_t + 0.5) / 255.0;
}

Mask binarize_for_skeleton(const Raster& y) {
    const double t = otsu_threshold(y);
    Mask m(y.height(), y.width());
    for (std::size_t i = 0; i < y.size(); ++i) m[i] = y[i] > t ? 1 : 0;
    return m;
}

namespace {

// Neighbour bit k (0..7) is P2..P9: N, NE, E, SE, S, SW, W, NW.
constexpr int kDr[8] = {-1, -1, 0, 1, 1, 1, 0, -1};
constexpr int kDc[8] = {0, 1, 1, 1, 0, -1, -1, -1};

struct ThinningTables {
    std::array<std::uint8_t, 256> first{};
    std::array<std::uint8_t, 256> second{};
};

ThinningTables make_tables() {
    ThinningTables t;
    for (int code = 0; code < 256; ++code) {
        auto p = [code](int k) { return (code >> k) & 1; }; // p(0) == P2
        int count = 0, transitions = 0;
        for (int k = 0; k < 8; ++k) {
            count += p(k);
            if (!p(k) && p((k + 1) % 8)) ++transitions;
        }
        const bool base = count >= 2 && count <= 6 && transitions == 1;
        const int P2 = p(0), P4 = p(2), P6 = p(4), P8 = p(6);
        t.first[static_cast<std::size_t>(code)] = base && P2 * P4 * P6 == 0 && P4 * P6 * P8 == 0;
        t.second[static_cast<std::size_t>(code)] = base && P2 * P4 * P8 == 0 && P2 * P6 * P8 == 0;
    }
    return t;
}

const ThinningTables& tables() {
    static const ThinningTables t = make_tables();
    return t;
}

} // namespace

Mask skeletonize(const Mask& binary) {
    for (auto v : binary.storage())
        if (v > 1) throw ParameterError("skeletonize: input must be strictly binary");
    Mask img = binary;
    const int H = img.height(), W = img.width();
    const auto& lut = tables();
    std::vector<std::size_t> remove;
    auto neighbourhood = [&](int r, int c) {
        int code = 0;
        for (int k = 0; k < 8; ++k) {
            const int rr = r + kDr[k], cc = c + kDc[k];
            if (rr >= 0 && rr < H && cc >= 0 && cc < W && img(rr, cc)) code |= 1 << k;
        }
        return code;
    };
    bool changed = true;
    while (changed) {
        changed = false;
        for (int pass = 0; pass < 2; ++pass) {
            const auto& table = pass == 0 ? lut.first : lut.second;
            remove.clear();
            for (int r = 0; r < H; ++r)
                for (int c = 0; c < W; ++c)
                    if (img(r, c) && table[static_cast<std::size_t>(neighbourhood(r, c))])
                        remove.push_back(static_cast<std::size_t>(r) * W + c);
            for (std::size_t i : remove) img[i] = 0;
            changed = changed || !remove.empty();
        }
    }
    return img;
}

std::vector<std::size_t> component_areas(const Mask& m) {
    const int H = m.height(), W = m.width();
    std::vector<std::uint8_t> seen(m.size(), 0);
    std::vector<std::size_t> areas;
    std::vector<std::size_t> stack;
    for (std::size_t start = 0; start < m.size(); ++start) {
        if (!m[start] || seen[start]) continue;
        std::size_t area = 0;
        stack.push_back(start);
        seen[start] = 1;
        while (!stack.empty()) {
            const std::size_t i = stack.back();
            stack.pop_back();
            ++area;
            const int r = static_cast<int>(i / static_cast<std::size_t>(W));
            const int c = static_cast<int>(i % static_cast<std::size_t>(W));
            for (int k = 0; k < 8; ++k) {
                const int rr = r + kDr[k], cc = c + kDc[k];
                if (rr < 0 || rr >= H || cc < 0 || cc >= W) continue;
                const std::size_t j = static_cast<std::size_t>(rr) * W + cc;
                if (m[j] && !seen[j]) {
                    seen[j] = 1;
                    stack.push_back(j);
                }
            }
        }
        areas.push_back(area);
    }
    return areas;
}

PixelClasses classify_pixels(const Raster& y, const Mask& ventricle_bin, const Mask& septum_bin,
                             const Mask& skeleton) {
    require_same_shape(y, ventricle_bin, "classify_pixels");
    require_same_shape(y, septum_bin, "classify_pixels");
    require_same_shape(y, skeleton, "classify_pixels");
    PixelClasses out{Mask(y.height(), y.width()), Mask(y.height(), y.width())};
    for (std::size_t i = 0; i < y.size(); ++i) {
        out.background[i] = (!ventricle_bin[i] && !septum_bin[i] && !skeleton[i]) ? 1 : 0;
        out.dark[i] = y[i] < kDarkThreshold ? 1 : 0;
    }
    return out;
}

bool ventricle_split_by_skeleton(const Mask& ventricle_bin, const Mask& skeleton, double min_fraction) {
    require_same_shape(ventricle_bin, skeleton, "ventricle_split_by_skeleton");
    const std::size_t total = count_nonzero(ventricle_bin);
    if (total == 0) return false;
    Mask cut = ventricle_bin;
    for (std::size_t i = 0; i < cut.size(); ++i)
        if (skeleton[i]) cut[i] = 0;
    const double floor = min_fraction * static_cast<double>(total);
    int pieces = 0;
    for (std::size_t a : component_areas(cut))
        if (static_cast<double>(a) >= floor) ++pieces;
    return pieces >= 2;
}

GuidanceMap compose_guidance(const MaskBundle& b, const SegWeights& w) {
    w.validate();
    const Raster& ref = b.ventricle;
    require_same_shape(ref, b.septum, "compose_guidance");
    require_same_shape(ref, b.ventricle_bin, "compose_guidance");
    require_same_shape(ref, b.septum_bin, "compose_guidance");
    require_same_shape(ref, b.skeleton, "compose_guidance");
    require_same_shape(ref, b.background, "compose_guidance");
    require_same_shape(ref, b.dark, "compose_guidance");
    const int H = ref.height();
    if (b.bands.top < 0 || b.bands.bottom < 0 || b.bands.top + b.bands.bottom > H)
        throw ParameterError("compose_guidance: fixed bands exceed the image height");

    GuidanceMap g;
    g.bundle = b;
    g.ventricle_split = ventricle_split_by_skeleton(b.ventricle_bin, b.skeleton);
    g.effective_omega_v = g.ventricle_split ? 0.0 : w.omega_v;
    g.precision = Raster(H, ref.width());
    for (std::size_t i = 0; i < ref.size(); ++i) {
        const double p = w.omega * b.background[i] + g.effective_omega_v * b.ventricle[i] +
                         w.omega_s * (static_cast<double>(b.septum[i]) + b.skeleton[i] + b.dark[i]);
        g.precision[i] = static_cast<float>(p);
    }
    for (int r = 0; r < H; ++r) {
        if (r >= b.bands.top && r < H - b.bands.bottom) continue;
        for (int c = 0; c < ref.width(); ++c) g.precision(r, c) = 0.0f;
    }
    return g;
}

MaskBundle build_masks(const Raster& y, const RegionLogits& logits, const SegWeights& weights,
                       FixedBands bands) {
    weights.validate();
    require_same_shape(y, logits.ventricle, "build_masks");
    require_same_shape(y, logits.septum, "build_masks");
    MaskBundle b;
    b.ventricle_bin = threshold(logits.ventricle, weights.theta);
    b.septum_bin = threshold(logits.septum, weights.theta);
    b.ventricle = threshold_and_blur(logits.ventricle, weights.theta, weights.sigma_blur);
    b.septum = threshold_and_blur(logits.septum, weights.theta, weights.sigma_blur);
    b.skeleton = skeletonize(binarize_for_skeleton(y));
    auto classes = classify_pixels(y, b.ventricle_bin, b.septum_bin, b.skeleton);
    b.background = std::move(classes.background);
    b.dark = std::move(classes.dark);
    b.bands = bands;
    return b;
}

GuidanceMap build_guidance(const Raster& y, const RegionSegmenter& segmenter,
                           const SegWeights& weights, FixedBands bands) {
    const RegionLogits logits = segmenter.segment(y);
    for (const Raster* r : {&logits.ventricle, &logits.septum})
        for (float v : r->storage())
            if (!std::isfinite(v)) throw NumericalError("segmenter produced non-finite logits");
    return compose_guidance(build_masks(y, logits, weights, bands), weights);
}

double dice(const Mask& a, const Mask& b) {
    require_same_shape(a, b, "dice");
    std::size_t inter = 0, na = 0, nb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        na += a[i] != 0;
        nb += b[i] != 0;
        inter += (a[i] && b[i]);
    }
    if (na + nb == 0) return 1.0;
    return 2.0 * static_cast<double>(inter) / static_cast<double>(na + nb);
}

} // namespace dehaze
