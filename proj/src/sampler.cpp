#include "dehaze/sampler.hpp"

#include <cmath>
#include <string>

#include "dehaze/nn/ops.hpp"

namespace dehaze {

using nn::Shape;
using nn::Tensor;
using nn::Var;

std::string to_string(GradientMode m) {
    return m == GradientMode::through_denoiser ? "through-denoiser" : "at-estimate";
}
std::string to_string(StepRule r) { return r == StepRule::posterior ? "posterior" : "literal"; }
std::string to_string(RenoiseRule r) { return r == RenoiseRule::consistent ? "consistent" : "reuse"; }

GradientMode parse_gradient_mode(const std::string& s) {
    if (s == "through-denoiser") return GradientMode::through_denoiser;
    if (s == "at-estimate") return GradientMode::at_estimate;
    throw ParameterError("gradient_mode must be through-denoiser or at-estimate, got '" + s + "'");
}
StepRule parse_step_rule(const std::string& s) {
    if (s == "posterior") return StepRule::posterior;
    if (s == "literal") return StepRule::literal;
    throw ParameterError("step_rule must be posterior or literal, got '" + s + "'");
}
RenoiseRule parse_renoise_rule(const std::string& s) {
    if (s == "consistent") return RenoiseRule::consistent;
    if (s == "reuse") return RenoiseRule::reuse;
    throw ParameterError("renoise must be consistent or reuse, got '" + s + "'");
}

void GuidanceConfig::validate() const {
    if (steps < 1) throw ParameterError("guidance.steps must be >= 1");
    if (!(eta >= 0.0) || !std::isfinite(eta)) throw ParameterError("guidance.eta must be finite and >= 0");
    if (!(beta > 0.0) || !std::isfinite(beta)) throw ParameterError("guidance.beta must be finite and > 0");
    if (fixed_top < 0 || fixed_bottom < 0) throw ParameterError("guidance.fixed_top/fixed_bottom must be >= 0");
    if (!(precision_scale >= 0.0) || !std::isfinite(precision_scale))
        throw ParameterError("guidance.precision_scale must be finite and >= 0");
}

double smooth_l1(double r, double beta) {
    const double a = std::abs(r);
    return a < beta ? r * r / (2.0 * beta) : a - 0.5 * beta;
}

double smooth_l1_grad(double r, double beta) {
    if (std::abs(r) < beta) return r / beta;
    return r > 0.0 ? 1.0 : (r < 0.0 ? -1.0 : 0.0);
}

namespace {

Tensor as_tensor(const Raster& r) {
    Tensor t(Shape{1, 1, r.height(), r.width()});
    std::copy(r.pixels().begin(), r.pixels().end(), t.data.begin());
    return t;
}

Raster as_raster(const Tensor& t) { return unstack(t, 0); }

Raster scaled(const Raster& r, double s) {
    if (s == 1.0) return r;
    Raster out = r;
    for (float& v : out.storage()) v = static_cast<float>(v * s);
    return out;
}

bool all_zero(const Raster& r) {
    for (float v : r.pixels())
        if (v != 0.0f) return false;
    return true;
}

void require_finite(const Raster& r, const char* what, int step) {
    for (float v : r.pixels())
        if (!std::isfinite(v))
            throw NumericalError(std::string("dehaze: non-finite ") + what + " at step " + std::to_string(step));
}

} // namespace

Raster estimate_x0(const Raster& x_tau, double tau, const Denoiser& denoiser, const NoiseSchedule& schedule) {
    if (!(tau > 0.0 && tau <= schedule.horizon())) throw ParameterError("estimate_x0: tau must lie in (0, T]");
    const Tensor x = as_tensor(x_tau);
    const float t = static_cast<float>(tau);
    const Tensor eps = denoiser.predict(x, std::span<const float>(&t, 1));
    return as_raster(x0_from_eps(x, eps, schedule.alpha(tau), schedule.sigma(tau)));
}

GuidanceTerms guidance_terms_at_estimate(const Raster& x0_hat, const Raster& y, const Raster& precision,
                                         const Raster& v_mask, double beta) {
    require_same_shape(x0_hat, y, "guidance_terms");
    require_same_shape(x0_hat, precision, "guidance_terms");
    require_same_shape(x0_hat, v_mask, "guidance_terms");
    GuidanceTerms g{Raster(y.height(), y.width()), Raster(y.height(), y.width())};
    for (std::size_t i = 0; i < y.size(); ++i) {
        const double r = static_cast<double>(x0_hat[i]) - y[i];
        g.fidelity += 0.5 * precision[i] * r * r;
        g.fidelity_grad[i] = static_cast<float>(precision[i] * r);
        if (v_mask[i] != 0.0f) {
            g.penalty += v_mask[i] * smooth_l1(x0_hat[i], beta);
            g.penalty_grad[i] = static_cast<float>(v_mask[i] * smooth_l1_grad(x0_hat[i], beta));
        }
    }
    return g;
}

GuidedEstimate guidance_terms(const Raster& x_tau, double tau, const Raster& y, const Raster& precision,
                              const Raster& v_mask, const Denoiser& denoiser, const NoiseSchedule& schedule,
                              const GuidanceConfig& config) {
    require_same_shape(x_tau, y, "guidance_terms");
    const double al = schedule.alpha(tau), si = schedule.sigma(tau);
    const float t = static_cast<float>(tau);
    const std::span<const float> taus(&t, 1);

    nn::Tape tape(false);
    Var x = tape.input(as_tensor(x_tau));
    Var eps = denoiser.forward(tape, x, taus);
    GuidedEstimate out;
    out.eps_hat = eps.value();
    // The numeric estimate is shared with unguided sampling so the two agree bitwise.
    out.x0_hat = as_raster(x0_from_eps(x.value(), out.eps_hat, al, si));
    out.terms = guidance_terms_at_estimate(out.x0_hat, y, precision, v_mask, config.beta);

    if (config.gradient_mode == GradientMode::through_denoiser) {
        const float inv_a = static_cast<float>(1.0 / al), neg = static_cast<float>(-si / al);
        Var x0 = nn::axpby_per_sample(x, std::span<const float>(&inv_a, 1), eps, std::span<const float>(&neg, 1));
        auto pull_back = [&](Raster& g) {
            if (all_zero(g)) return;
            tape.backward(x0, as_tensor(g));
            g = as_raster(tape.grad(x));
        };
        pull_back(out.terms.fidelity_grad);
        if (config.eta > 0.0) pull_back(out.terms.penalty_grad);
    }
    return out;
}

Raster dps_step(const Raster& x_tau, double tau, double tau_next, const Raster& y, const Raster& precision,
                const Raster& v_mask, const Denoiser& denoiser, const NoiseSchedule& schedule,
                const GuidanceConfig& config, StepRecord* record) {
    if (!(tau_next >= 0.0 && tau_next < tau && tau <= schedule.horizon()))
        throw ParameterError("dps_step: need 0 <= tau_next < tau <= T");
    const double al = schedule.alpha(tau), si = schedule.sigma(tau);
    GuidedEstimate est = guidance_terms(x_tau, tau, y, precision, v_mask, denoiser, schedule, config);

    const double c = denoiser.data_variance();
    const double vbar = si * si * c / (al * al * c + si * si);
    const double kappa = config.gradient_mode == GradientMode::at_estimate ? vbar : si * si / al;

    Raster x0c = est.x0_hat;
    double norm2 = 0.0;
    for (std::size_t i = 0; i < x0c.size(); ++i) {
        const double g = static_cast<double>(est.terms.fidelity_grad[i]) + config.eta * est.terms.penalty_grad[i];
        norm2 += g * g;
        if (g == 0.0) continue;
        const double gain = config.step_rule == StepRule::posterior ? kappa / (1.0 + vbar * precision[i]) : 1.0;
        x0c[i] = static_cast<float>(x0c[i] - gain * g);
    }
    const int H = y.height();
    const int top = std::min(config.fixed_top, H), bottom = std::min(config.fixed_bottom, H - top);
    for (int r = 0; r < H; ++r) {
        if (r >= top && r < H - bottom) continue;
        for (int col = 0; col < y.width(); ++col) x0c(r, col) = y(r, col);
    }

    if (record) *record = StepRecord{0, tau, est.terms.fidelity, est.terms.penalty, std::sqrt(norm2)};
    if (!std::isfinite(norm2)) throw NumericalError("dps_step: non-finite guidance gradient");
    if (tau_next == 0.0) return x0c;

    Tensor eps = std::move(est.eps_hat);
    if (config.renoise == RenoiseRule::consistent && si > 0.0) {
        const double k = al / si;
        for (std::size_t i = 0; i < x0c.size(); ++i) {
            const double d = static_cast<double>(x0c[i]) - est.x0_hat[i];
            if (d != 0.0) eps.data[i] = static_cast<float>(eps.data[i] - k * d);
        }
    }
    return as_raster(renoise(as_tensor(x0c), eps, schedule.alpha(tau_next), schedule.sigma(tau_next)));
}

DehazeResult dehaze(const Raster& y, const GuidanceMap& guidance, const Raster& v_mask, const Denoiser& denoiser,
                    const NoiseSchedule& schedule, const GuidanceConfig& config, std::uint64_t seed) {
    config.validate();
    require_same_shape(y, guidance.precision, "dehaze");
    require_same_shape(y, v_mask, "dehaze");
    const Raster precision = scaled(guidance.precision, config.precision_scale);
    const std::vector<double> grid = schedule.grid(config.steps);

    DehazeResult result;
    result.guidance = guidance;
    result.trajectory_stats.reserve(static_cast<std::size_t>(config.steps));
    Raster x = as_raster(initial_noise(Shape{1, 1, y.height(), y.width()}, seed));
    for (int i = 0; i < config.steps; ++i) {
        StepRecord rec;
        try {
            x = dps_step(x, grid[static_cast<std::size_t>(i)], grid[static_cast<std::size_t>(i) + 1], y, precision,
                         v_mask, denoiser, schedule, config, &rec);
        } catch (const NumericalError& e) {
            throw NumericalError(std::string(e.what()) + " (step " + std::to_string(i) + ")");
        }
        rec.step = i;
        result.trajectory_stats.push_back(rec);
        require_finite(x, "state", i);
    }
    result.dehazed = std::move(x);
    result.haze = Field(y.height(), y.width());
    for (std::size_t i = 0; i < y.size(); ++i)
        result.haze[i] = static_cast<double>(y[i]) - static_cast<double>(result.dehazed[i]);
    return result;
}

DehazeResult dehaze(const Raster& y, const GuidanceMap& guidance, const Denoiser& denoiser,
                    const NoiseSchedule& schedule, const GuidanceConfig& config, std::uint64_t seed) {
    return dehaze(y, guidance, guidance.bundle.ventricle, denoiser, schedule, config, seed);
}

bool decomposition_exact(const Raster& y, const DehazeResult& r) {
    if (!y.same_shape(r.dehazed) || !y.same_shape(r.haze)) return false;
    for (std::size_t i = 0; i < y.size(); ++i)
        if (static_cast<double>(r.dehazed[i]) + r.haze[i] != static_cast<double>(y[i])) return false;
    return true;
}

} // namespace dehaze
