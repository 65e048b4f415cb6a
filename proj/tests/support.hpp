#pragma once

// Test doubles and independent reference implementations shared by the unit
// tests and the acceptance runner.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include "dehaze/diffusion.hpp"
#include "dehaze/nn/ops.hpp"
#include "dehaze/raster.hpp"
#include "dehaze/rng.hpp"
#include "dehaze/segmentation.hpp"

namespace testing {

using namespace dehaze;

/// Small convolutional noise predictor: conv3x3 -> tanh -> conv3x3, with the
/// output scaled per sample by (1 + tau). Smooth, so finite differences apply.
class ToyDenoiser final : public TrainableDenoiser {
public:
    explicit ToyDenoiser(std::uint64_t seed = 3, int hidden = 4) {
        params_.add_normal("c1.w", nn::Shape{hidden, 1, 3, 3}, 9, 1.0f, derive_seed(seed, 1));
        params_.add_normal("c1.b", nn::Shape{1, hidden, 1, 1}, 1, 0.1f, derive_seed(seed, 2));
        params_.add_normal("c2.w", nn::Shape{1, hidden, 3, 3}, 9 * hidden, 1.0f, derive_seed(seed, 3));
        params_.add_normal("c2.b", nn::Shape{1, 1, 1, 1}, 1, 0.1f, derive_seed(seed, 4));
        ema_ = params_;
    }

    nn::Var forward(nn::Tape& tape, nn::Var x, std::span<const float> tau) const override {
        nn::Var h = nn::tanh(nn::conv2d(x, tape.parameter(params_[0]), tape.parameter(params_[1]), 1));
        nn::Var out = nn::conv2d(h, tape.parameter(params_[2]), tape.parameter(params_[3]), 1);
        std::vector<float> a(tau.size()), b(tau.size(), 0.0f);
        for (std::size_t i = 0; i < tau.size(); ++i) a[i] = 1.0f + tau[i];
        return nn::affine_per_sample(out, a, b);
    }
    double data_variance() const override { return 0.05; }

    nn::ParameterSet& parameters() override { return params_; }
    const nn::ParameterSet& parameters() const override { return params_; }
    nn::ParameterSet& ema_parameters() override { return ema_; }
    const nn::ParameterSet& ema_parameters() const override { return ema_; }

private:
    nn::ParameterSet params_;
    nn::ParameterSet ema_;
};

/// eps_hat = a * x + b with two scalar parameters.
class AffineDenoiser final : public TrainableDenoiser {
public:
    AffineDenoiser(float a, float b) {
        params_.add("a", nn::Tensor(nn::Shape{1, 1, 1, 1}, a));
        params_.add("b", nn::Tensor(nn::Shape{1, 1, 1, 1}, b));
        ema_ = params_;
    }
    nn::Var forward(nn::Tape& tape, nn::Var x, std::span<const float>) const override {
        return nn::conv2d(x, tape.parameter(params_[0]), tape.parameter(params_[1]), 0);
    }
    double data_variance() const override { return 0.05; }
    nn::ParameterSet& parameters() override { return params_; }
    const nn::ParameterSet& parameters() const override { return params_; }
    nn::ParameterSet& ema_parameters() override { return ema_; }
    const nn::ParameterSet& ema_parameters() const override { return ema_; }

private:
    nn::ParameterSet params_;
    nn::ParameterSet ema_;
};

/// Returns a fixed tensor regardless of input.
class ConstantDenoiser final : public Denoiser {
public:
    explicit ConstantDenoiser(nn::Tensor value) : value_(std::move(value)) {}
    nn::Var forward(nn::Tape& tape, nn::Var x, std::span<const float>) const override {
        if (!(x.shape() == value_.shape)) throw ContractError("ConstantDenoiser: shape mismatch");
        return tape.constant(value_);
    }
    double data_variance() const override { return 0.05; }

private:
    nn::Tensor value_;
};

// ------------------------------------------------------------ reference oracles

/// Zhang-Suen thinning written directly from the published rule table.
inline Mask zhang_suen_reference(const Mask& in) {
    Mask img = in;
    const int H = img.height(), W = img.width();
    auto px = [&](int r, int c) -> int {
        if (r < 0 || c < 0 || r >= H || c >= W) return 0;
        return img(r, c) ? 1 : 0;
    };
    bool changed = true;
    while (changed) {
        changed = false;
        for (int pass = 0; pass < 2; ++pass) {
            std::vector<std::pair<int, int>> remove;
            for (int r = 0; r < H; ++r)
                for (int c = 0; c < W; ++c) {
                    if (!px(r, c)) continue;
                    const int p2 = px(r - 1, c), p3 = px(r - 1, c + 1), p4 = px(r, c + 1), p5 = px(r + 1, c + 1);
                    const int p6 = px(r + 1, c), p7 = px(r + 1, c - 1), p8 = px(r, c - 1), p9 = px(r - 1, c - 1);
                    const int b = p2 + p3 + p4 + p5 + p6 + p7 + p8 + p9;
                    const int seq[9] = {p2, p3, p4, p5, p6, p7, p8, p9, p2};
                    int a = 0;
                    for (int k = 0; k < 8; ++k) a += seq[k] == 0 && seq[k + 1] == 1;
                    if (b < 2 || b > 6 || a != 1) continue;
                    if (pass == 0 && p2 * p4 * p6 == 0 && p4 * p6 * p8 == 0) remove.emplace_back(r, c);
                    if (pass == 1 && p2 * p4 * p8 == 0 && p2 * p6 * p8 == 0) remove.emplace_back(r, c);
                }
            for (auto [r, c] : remove) img(r, c) = 0;
            changed = changed || !remove.empty();
        }
    }
    return img;
}

/// Histogram overlap evaluated bin by bin from the bin edges.
inline double gcnr_reference(const std::vector<double>& a, const std::vector<double>& b, int bins) {
    double overlap = 0.0;
    for (int k = 0; k < bins; ++k) {
        const double lo = static_cast<double>(k) / bins, hi = static_cast<double>(k + 1) / bins;
        auto frac = [&](const std::vector<double>& v) {
            int n = 0;
            for (double x : v) {
                const double c = std::clamp(x, 0.0, 1.0);
                n += (c >= lo && c < hi) || (k == bins - 1 && c == 1.0);
            }
            return static_cast<double>(n) / static_cast<double>(v.size());
        };
        overlap += std::min(frac(a), frac(b));
    }
    return 1.0 - overlap;
}

/// Both empirical CDFs evaluated at every sample point.
inline double ks_reference(const std::vector<double>& a, const std::vector<double>& b) {
    auto ecdf = [](const std::vector<double>& v, double t) {
        int n = 0;
        for (double x : v) n += x <= t;
        return static_cast<double>(n) / static_cast<double>(v.size());
    };
    double d = 0.0;
    for (const auto* s : {&a, &b})
        for (double t : *s) d = std::max(d, std::abs(ecdf(a, t) - ecdf(b, t)));
    return d;
}

/// Unbiased MMD^2 with k(u, v) = (u.v / d + 1)^3 as an explicit double loop.
inline double mmd2_reference(const std::vector<std::vector<double>>& x, const std::vector<std::vector<double>>& y) {
    const std::size_t d = x.front().size();
    auto k = [d](const std::vector<double>& u, const std::vector<double>& v) {
        double dot = 0.0;
        for (std::size_t i = 0; i < d; ++i) dot += u[i] * v[i];
        return std::pow(dot / static_cast<double>(d) + 1.0, 3);
    };
    const double m = static_cast<double>(x.size()), n = static_cast<double>(y.size());
    double sxx = 0.0, syy = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i)
        for (std::size_t j = 0; j < x.size(); ++j)
            if (i != j) sxx += k(x[i], x[j]);
    for (std::size_t i = 0; i < y.size(); ++i)
        for (std::size_t j = 0; j < y.size(); ++j)
            if (i != j) syy += k(y[i], y[j]);
    for (const auto& u : x)
        for (const auto& v : y) sxy += k(u, v);
    return sxx / (m * (m - 1)) + syy / (n * (n - 1)) - 2.0 * sxy / (m * n);
}

inline Mask random_mask(int h, int w, double fill, Rng& rng) {
    Mask m(h, w);
    for (auto& v : m.storage()) v = rng.uniform() < fill ? 1 : 0;
    return m;
}

/// Union of a few random filled discs and rectangles.
inline Mask random_blobs(int h, int w, Rng& rng) {
    Mask m(h, w);
    const int shapes = rng.integer(1, 4);
    for (int k = 0; k < shapes; ++k) {
        const double cy = rng.uniform(0, h), cx = rng.uniform(0, w);
        const double ry = rng.uniform(1.0, h / 3.0), rx = rng.uniform(1.0, w / 3.0);
        const bool disc = rng.uniform() < 0.5;
        for (int r = 0; r < h; ++r)
            for (int c = 0; c < w; ++c) {
                const double dy = (r - cy) / ry, dx = (c - cx) / rx;
                if (disc ? dx * dx + dy * dy <= 1.0 : std::abs(dx) <= 1.0 && std::abs(dy) <= 1.0) m(r, c) = 1;
            }
    }
    return m;
}

inline Raster random_raster(int h, int w, Rng& rng, double lo = 0.0, double hi = 1.0) {
    Raster r(h, w);
    for (auto& v : r.storage()) v = static_cast<float>(rng.uniform(lo, hi));
    return r;
}

/// All-zero bundle of the given size, for hand-built guidance cases.
inline MaskBundle empty_bundle(int h, int w) {
    MaskBundle b;
    b.ventricle = b.septum = Raster(h, w);
    b.ventricle_bin = b.septum_bin = b.skeleton = b.background = b.dark = Mask(h, w);
    return b;
}

/// Ellipse-shaped ventricle cut by a one-pixel vertical skeleton line through its centre.
inline MaskBundle bisected_ventricle_bundle(int size = 32) {
    MaskBundle b = empty_bundle(size, size);
    const double c = 0.5 * (size - 1);
    for (int r = 0; r < size; ++r)
        for (int col = 0; col < size; ++col) {
            const double dy = (r - c) / (0.35 * size), dx = (col - c) / (0.25 * size);
            if (dx * dx + dy * dy <= 1.0) {
                b.ventricle_bin(r, col) = 1;
                b.ventricle(r, col) = 1.0f;
            }
        }
    for (int r = 0; r < size; ++r) b.skeleton(r, size / 2) = 1;
    for (std::size_t i = 0; i < b.background.size(); ++i)
        b.background[i] = !b.ventricle_bin[i] && !b.skeleton[i];
    return b;
}

/// Fresh empty directory under the system temp location.
inline std::filesystem::path scratch_dir(const std::string& name) {
    const auto p = std::filesystem::temp_directory_path() / ("dehaze-test-" + name);
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

} // namespace testing
