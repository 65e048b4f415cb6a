#include <cmath>
#include <string>

#include "dehaze/diffusion.hpp"
#include "dehaze/nn/ops.hpp"

namespace dehaze {
namespace {

using nn::Shape;
using nn::Tensor;
using nn::Var;

struct Builder {
    nn::ParameterSet& set;
    std::uint64_t seed;
    std::uint64_t counter = 0;

    void conv(const std::string& name, int cin, int cout, int k, float gain = 1.4f) {
        set.add_normal(name + ".w", Shape{cout, cin, k, k}, cin * k * k, gain, derive_seed(seed, counter++));
        set.add_zeros(name + ".b", Shape{1, cout, 1, 1});
    }
    void dense(const std::string& name, int din, int dout, float gain = 1.0f) {
        if (gain == 0.0f)
            set.add_zeros(name + ".w", Shape{dout, din, 1, 1});
        else
            set.add_normal(name + ".w", Shape{dout, din, 1, 1}, din, gain, derive_seed(seed, counter++));
        set.add_zeros(name + ".b", Shape{1, dout, 1, 1});
    }
    void block(const std::string& name, int cin, int cout, int tdim) {
        conv(name + ".conv1", cin, cout, 3);
        dense(name + ".gamma", tdim, cout, 0.0f);
        dense(name + ".beta", tdim, cout, 0.0f);
        conv(name + ".conv2", cout, cout, 3, 0.5f);
        if (cin != cout) conv(name + ".skip", cin, cout, 1, 1.0f);
    }
};

struct Forward {
    nn::Tape& tape;
    const nn::ParameterSet& set;

    Var p(const std::string& name) const { return tape.parameter(set.get(name)); }
    Var conv(const std::string& name, Var x) const {
        const int k = set.get(name + ".w").value.shape.h;
        return nn::conv2d(x, p(name + ".w"), p(name + ".b"), k / 2);
    }
    Var dense(const std::string& name, Var x) const {
        return nn::linear(x, p(name + ".w"), p(name + ".b"));
    }
    Var block(const std::string& name, Var x, Var temb) const {
        Var h = conv(name + ".conv1", nn::silu(x));
        // linear() yields {N, C, 1, 1}, the modulation layout film() expects.
        h = nn::film(h, dense(name + ".gamma", temb), dense(name + ".beta", temb));
        h = conv(name + ".conv2", nn::silu(h));
        Var skip = has(name + ".skip.w") ? conv(name + ".skip", x) : x;
        return nn::add(skip, h);
    }
    bool has(const std::string& name) const {
        for (std::size_t i = 0; i < set.size(); ++i)
            if (set[i].name == name) return true;
        return false;
    }
};

Tensor time_features(std::span<const float> tau, int features) {
    const int half = features / 2;
    Tensor t(Shape{static_cast<int>(tau.size()), features, 1, 1});
    for (std::size_t n = 0; n < tau.size(); ++n)
        for (int k = 0; k < half; ++k) {
            const double freq = std::exp(std::log(1000.0) * k / std::max(half - 1, 1));
            const double arg = static_cast<double>(tau[n]) * freq;
            t.at(static_cast<int>(n), k, 0, 0) = static_cast<float>(std::sin(arg));
            t.at(static_cast<int>(n), half + k, 0, 0) = static_cast<float>(std::cos(arg));
        }
    return t;
}

} // namespace

UNetDenoiser::UNetDenoiser(UNetConfig config) : config_(config) {
    if (config.base_channels < 1 || config.time_features < 2 || config.time_features % 2 || config.time_dim < 1)
        throw ParameterError("UNetDenoiser: sizes must be positive and time_features even");
    const int c = config.base_channels, td = config.time_dim;
    Builder b{params_, config.seed};
    b.dense("temb.fc1", config.time_features, td);
    b.dense("temb.fc2", td, td);
    b.conv("conv_in", 1, c, 3, 1.0f);
    b.block("enc1", c, c, td);
    b.block("enc2", c, 2 * c, td);
    b.block("mid1", 2 * c, 4 * c, td);
    b.block("mid2", 4 * c, 4 * c, td);
    b.block("dec2", 6 * c, 2 * c, td);
    b.block("dec1", 3 * c, c, td);
    b.conv("conv_out", c, 1, 3, 0.1f);
    ema_ = params_;
}

nn::Var UNetDenoiser::forward(nn::Tape& tape, nn::Var x_tau, std::span<const float> tau) const {
    const Shape s = x_tau.shape();
    if (s.c != 1) throw ContractError("UNetDenoiser: expects single-channel input");
    if (s.h % 4 || s.w % 4)
        throw ContractError("UNetDenoiser: image extents must be multiples of 4, got " + nn::to_string(s));
    if (static_cast<int>(tau.size()) != s.n)
        throw ContractError("UNetDenoiser: one noise level per batch item required");

    const Forward f{tape, params_};
    Var temb = tape.constant(time_features(tau, config_.time_features));
    temb = nn::silu(f.dense("temb.fc1", temb));
    temb = nn::silu(f.dense("temb.fc2", temb));

    Var h0 = f.conv("conv_in", x_tau);
    Var e1 = f.block("enc1", h0, temb);
    Var e2 = f.block("enc2", nn::avg_pool2(e1), temb);
    Var m = f.block("mid1", nn::avg_pool2(e2), temb);
    m = f.block("mid2", m, temb);
    Var d2 = f.block("dec2", nn::concat_channels(nn::upsample2(m), e2), temb);
    Var d1 = f.block("dec1", nn::concat_channels(nn::upsample2(d2), e1), temb);
    return f.conv("conv_out", nn::silu(d1));
}

} // namespace dehaze
