#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "dehaze/error.hpp"
#include "dehaze/nn/params.hpp"
#include "dehaze/raster.hpp"
#include "dehaze/rng.hpp"

namespace dehaze {

/// Variance-preserving cosine schedule over tau in [0, 1]:
/// alpha = cos(phi * tau), sigma = sin(phi * tau), with phi chosen so that
/// alpha(1) equals `terminal_alpha` (> 0, which keeps the clean-image
/// estimate defined at the start of sampling).
class NoiseSchedule {
public:
    explicit NoiseSchedule(double terminal_alpha = 1e-2);

    double alpha(double tau) const;
    double sigma(double tau) const;
    double horizon() const { return 1.0; }
    double terminal_alpha() const { return terminal_alpha_; }
    std::string name() const { return "cosine"; }

    /// N + 1 uniformly spaced nodes from the horizon down to exactly 0.
    std::vector<double> grid(int steps) const;

private:
    double terminal_alpha_;
    double phi_;
};

/// Noise predictor eps(x_tau, tau). Implementations record their computation
/// on the supplied tape so callers can differentiate through them.
class Denoiser {
public:
    virtual ~Denoiser() = default;

    /// `x_tau` is {N, 1, H, W}; `tau` holds one level per batch item.
    virtual nn::Var forward(nn::Tape& tape, nn::Var x_tau, std::span<const float> tau) const = 0;

    /// Per-pixel variance of the clean-image prior.
    virtual double data_variance() const = 0;

    /// Inference-only evaluation.
    nn::Tensor predict(const nn::Tensor& x_tau, std::span<const float> tau) const;
};

class TrainableDenoiser : public Denoiser {
public:
    virtual nn::ParameterSet& parameters() = 0;
    virtual const nn::ParameterSet& parameters() const = 0;
    virtual nn::ParameterSet& ema_parameters() = 0;
    virtual const nn::ParameterSet& ema_parameters() const = 0;
};

/// Exact noise predictor for an i.i.d. per-pixel Gaussian prior N(mean, stddev^2).
class GaussianPriorDenoiser final : public Denoiser {
public:
    GaussianPriorDenoiser(double mean, double stddev, NoiseSchedule schedule = NoiseSchedule());

    nn::Var forward(nn::Tape& tape, nn::Var x_tau, std::span<const float> tau) const override;
    double data_variance() const override { return stddev_ * stddev_; }

    /// E[x0 | x_tau] in closed form.
    double posterior_mean(double x_tau, double tau) const;
    double mean() const { return mean_; }
    double stddev() const { return stddev_; }

private:
    double mean_;
    double stddev_;
    NoiseSchedule schedule_;
};

struct UNetConfig {
    int base_channels = 16;
    int time_features = 32;
    int time_dim = 64;
    std::uint64_t seed = 0;

    bool operator==(const UNetConfig&) const = default;
};

/// Three-level encoder-decoder with skip connections; the noise level enters
/// every residual block through a per-channel scale and shift.
class UNetDenoiser final : public TrainableDenoiser {
public:
    explicit UNetDenoiser(UNetConfig config = {});

    nn::Var forward(nn::Tape& tape, nn::Var x_tau, std::span<const float> tau) const override;
    double data_variance() const override { return data_variance_; }
    void set_data_variance(double v) { data_variance_ = v; }

    nn::ParameterSet& parameters() override { return params_; }
    const nn::ParameterSet& parameters() const override { return params_; }
    nn::ParameterSet& ema_parameters() override { return ema_; }
    const nn::ParameterSet& ema_parameters() const override { return ema_; }

    /// Replace the live weights by the EMA copy (used for inference).
    void use_ema_weights() { params_.assign(ema_); }
    const UNetConfig& config() const { return config_; }

private:
    UNetConfig config_;
    nn::ParameterSet params_;
    nn::ParameterSet ema_;
    double data_variance_ = 0.05;
};

/// Maps an image batch {N,1,H,W} to feature rows {N, D, 1, 1}.
class Embedder {
public:
    virtual ~Embedder() = default;
    virtual nn::Var embed(nn::Tape& tape, nn::Var images) const = 0;
};

/// Fixed random convolutional projection. The weights are a pure function of
/// the seed, so scores are comparable across runs.
class RandomConvEmbedder final : public Embedder {
public:
    static constexpr std::uint64_t kDefaultSeed = 20250521;
    explicit RandomConvEmbedder(std::uint64_t seed = kDefaultSeed, int dim = 256);
    nn::Var embed(nn::Tape& tape, nn::Var images) const override;

private:
    nn::ParameterSet weights_;
};

/// Flattened pixels as features.
class IdentityEmbedder final : public Embedder {
public:
    nn::Var embed(nn::Tape& tape, nn::Var images) const override;
};

// DDIM building blocks shared by unconditional and guided sampling.

/// (x - sigma * eps) / alpha, elementwise.
nn::Tensor x0_from_eps(const nn::Tensor& x_tau, const nn::Tensor& eps, double alpha, double sigma);
/// alpha * x0 + sigma * eps, elementwise.
nn::Tensor renoise(const nn::Tensor& x0, const nn::Tensor& eps, double alpha, double sigma);
/// Standard normal starting point for a seeded trajectory.
nn::Tensor initial_noise(nn::Shape shape, std::uint64_t seed);

nn::Tensor stack(std::span<const Raster> images);
Raster unstack(const nn::Tensor& t, int index);

// Losses.

/// Noise levels and noise drawn for one denoising-score-matching evaluation.
struct DsmDraw {
    std::vector<float> tau;
    nn::Tensor eps;
};

DsmDraw draw_dsm_noise(const nn::Shape& shape, const NoiseSchedule& schedule, Rng& rng);

/// Mean over the batch of ||eps_hat - eps||^2, recorded on `tape`.
nn::Var dsm_loss(nn::Tape& tape, const Denoiser& denoiser, const nn::Tensor& batch,
                 const NoiseSchedule& schedule, const DsmDraw& draw);
double dsm_loss(const Denoiser& denoiser, const nn::Tensor& batch, const NoiseSchedule& schedule,
                Rng& rng);

/// Unbiased MMD^2 with the cubic polynomial kernel over embedder features.
nn::Var kid_loss(nn::Tape& tape, nn::Var generated, const nn::Tensor& real, const Embedder& embedder);
double kid_loss(const nn::Tensor& generated, const nn::Tensor& real, const Embedder& embedder);

/// Deterministic DDIM generation recorded on `tape` so gradients reach the
/// denoiser parameters; returns the final unclamped estimate.
nn::Var generate_on_tape(nn::Tape& tape, const Denoiser& denoiser, const NoiseSchedule& schedule,
                         nn::Shape shape, int steps, Rng& rng);

struct TrainConfig {
    double lambda_kid = 0.05;
    int n_kid = 15;
    double ema_decay = 0.999;
    double lr_pretrain = 1e-4;
    double lr_finetune = 1e-5;
    int batch_size = 8;
    int steps = 1000;
    int finetune_steps = 0;
    int kid_every = 10;  // KID term evaluated on every k-th step
    int kid_batch = 4;
    bool kid_in_pretrain = true; // false: the KID term only enters the finetune phase
    std::uint64_t seed = 0;

    void validate() const;
    bool operator==(const TrainConfig&) const = default;
};

struct LossParts {
    double dsm = 0.0;
    double kid = 0.0;
    double total = 0.0;
    bool kid_evaluated = false;
};

/// dsm + lambda_kid * kid. The KID term is skipped when lambda_kid == 0 or
/// `with_kid` is false. Gradients flow into the trainable parameters.
nn::Var total_loss(nn::Tape& tape, const Denoiser& denoiser, const nn::Tensor& batch,
                   const nn::Tensor& real_reference, const NoiseSchedule& schedule,
                   const TrainConfig& config, const Embedder& embedder, Rng& rng, bool with_kid,
                   LossParts* parts = nullptr);

struct TrainRecord {
    int step = 0;
    std::string phase;
    double learning_rate = 0.0;
    LossParts loss;
};

struct TrainPhase {
    std::string name = "pretrain";
    double learning_rate = 1e-4;
    int steps = 1000;
    bool use_kid = true;
};

class TrainingDiverged : public NumericalError {
public:
    using NumericalError::NumericalError;
};

using TrainCallback = std::function<void(const TrainRecord&)>;

/// Adam on total_loss with EMA tracking. Aborts with TrainingDiverged when the
/// loss exceeds 1e3 times its first value.
std::vector<TrainRecord> train(TrainableDenoiser& denoiser, std::span<const Raster> dataset,
                               const TrainConfig& config, const NoiseSchedule& schedule,
                               const Embedder& embedder, const TrainPhase& phase,
                               const TrainCallback& on_step = {});

/// Pretrain on `broad` at lr_pretrain, then finetune on `narrow` at lr_finetune.
std::vector<TrainRecord> pretrain_finetune(UNetDenoiser& denoiser, std::span<const Raster> broad,
                                           std::span<const Raster> narrow, const TrainConfig& config,
                                           const NoiseSchedule& schedule, const Embedder& embedder,
                                           const TrainCallback& on_step = {});

double pixel_variance(std::span<const Raster> images);

/// Unclamped DDIM trajectory end points for `count` images.
nn::Tensor sample_unconditional_raw(const Denoiser& denoiser, const NoiseSchedule& schedule,
                                    int steps, std::uint64_t seed, int count, int height, int width);
/// As above, clamped to [0,1].
std::vector<Raster> sample_unconditional(const Denoiser& denoiser, const NoiseSchedule& schedule,
                                         int steps, std::uint64_t seed, int count, int height,
                                         int width);

} // namespace dehaze
