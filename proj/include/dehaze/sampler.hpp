#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dehaze/diffusion.hpp"
#include "dehaze/raster.hpp"
#include "dehaze/segmentation.hpp"

namespace dehaze {

/// How the guidance gradient reaches x_tau.
enum class GradientMode {
    through_denoiser, // differentiate x0_hat(x_tau) through the noise predictor
    at_estimate,      // take gradients with respect to x0_hat directly
};

/// How the gradient is turned into a correction of x0_hat.
enum class StepRule {
    /// delta = -kappa / (1 + vbar * p) * grad, where vbar is the prior's
    /// posterior variance of x0 given x_tau and kappa maps the gradient back
    /// onto the x0 scale (vbar at the estimate, sigma^2/alpha through the denoiser).
    posterior,
    /// delta = -grad with no preconditioning.
    literal,
};

/// Noise carried into the re-noising step.
enum class RenoiseRule {
    /// eps is recomputed so that x_tau is consistent with the corrected x0_hat.
    consistent,
    /// eps_hat from before the correction is reused.
    reuse,
};

std::string to_string(GradientMode m);
std::string to_string(StepRule r);
std::string to_string(RenoiseRule r);
GradientMode parse_gradient_mode(const std::string& s);
StepRule parse_step_rule(const std::string& s);
RenoiseRule parse_renoise_rule(const std::string& s);

struct GuidanceConfig {
    int steps = 480;
    double eta = 0.007; // ventricle penalty scale
    double beta = 1.6;  // smoothed-L1 transition
    int fixed_top = 0;
    int fixed_bottom = 0;
    GradientMode gradient_mode = GradientMode::at_estimate;
    StepRule step_rule = StepRule::posterior;
    RenoiseRule renoise = RenoiseRule::consistent;
    /// Multiplies the relative guidance weights to give an absolute noise
    /// precision. 500 is roughly 1 / (mean haze std)^2 for the phantom haze.
    double precision_scale = 500.0;

    void validate() const;
    bool operator==(const GuidanceConfig&) const = default;
};

/// Smoothed L1: r^2 / (2 beta) for |r| < beta, else |r| - beta / 2.
double smooth_l1(double r, double beta);
double smooth_l1_grad(double r, double beta);

/// (x_tau - sigma * eps_hat) / alpha.
Raster estimate_x0(const Raster& x_tau, double tau, const Denoiser& denoiser, const NoiseSchedule& schedule);

struct GuidanceTerms {
    Raster fidelity_grad;
    Raster penalty_grad;
    double fidelity = 0.0; // 1/2 sum p (y - x0_hat)^2
    double penalty = 0.0;  // sum v * rho_beta(x0_hat)
};

/// Gradients of the fidelity and penalty with respect to x0_hat itself.
GuidanceTerms guidance_terms_at_estimate(const Raster& x0_hat, const Raster& y, const Raster& precision,
                                         const Raster& v_mask, double beta);

/// One evaluation of the denoiser at (x_tau, tau) together with the guidance
/// gradients in the configured mode.
struct GuidedEstimate {
    nn::Tensor eps_hat;
    Raster x0_hat;
    GuidanceTerms terms;
};

GuidedEstimate guidance_terms(const Raster& x_tau, double tau, const Raster& y, const Raster& precision,
                              const Raster& v_mask, const Denoiser& denoiser, const NoiseSchedule& schedule,
                              const GuidanceConfig& config);

struct StepRecord {
    int step = 0;
    double tau = 0.0;
    double fidelity = 0.0;
    double penalty = 0.0;
    double grad_norm = 0.0;
};

/// One guided DDIM step from tau to tau_next. The precision map is used as is
/// (precision_scale is applied by `dehaze`).
Raster dps_step(const Raster& x_tau, double tau, double tau_next, const Raster& y, const Raster& precision,
                const Raster& v_mask, const Denoiser& denoiser, const NoiseSchedule& schedule,
                const GuidanceConfig& config, StepRecord* record = nullptr);

using Field = Grid<double>;

struct DehazeResult {
    Raster dehazed;
    /// y - dehazed, held in double so that dehazed + haze reproduces y exactly.
    Field haze;
    GuidanceMap guidance;
    std::vector<StepRecord> trajectory_stats;
};

/// Guided sampling from a seeded standard-normal start on the uniform grid.
DehazeResult dehaze(const Raster& y, const GuidanceMap& guidance, const Raster& v_mask, const Denoiser& denoiser,
                    const NoiseSchedule& schedule, const GuidanceConfig& config, std::uint64_t seed);

/// As above with v_mask taken from the guidance bundle.
DehazeResult dehaze(const Raster& y, const GuidanceMap& guidance, const Denoiser& denoiser,
                    const NoiseSchedule& schedule, const GuidanceConfig& config, std::uint64_t seed);

/// True when dehazed + haze == y holds bitwise at every pixel.
bool decomposition_exact(const Raster& y, const DehazeResult& r);

} // namespace dehaze
