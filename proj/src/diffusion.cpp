#include "dehaze/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "dehaze/hash.hpp"
#include "dehaze/nn/ops.hpp"

namespace dehaze {

using nn::Shape;
using nn::Tensor;
using nn::Var;

// ---------------------------------------------------------------- schedule

NoiseSchedule::NoiseSchedule(double terminal_alpha) : terminal_alpha_(terminal_alpha) {
    if (!(terminal_alpha > 0.0 && terminal_alpha < 1.0))
        throw ParameterError("NoiseSchedule: terminal_alpha must lie in (0, 1)");
    phi_ = std::acos(terminal_alpha);
}

double NoiseSchedule::alpha(double tau) const {
    if (!(tau >= 0.0 && tau <= horizon())) throw ParameterError("NoiseSchedule: tau outside [0, T]");
    return std::cos(phi_ * tau);
}

double NoiseSchedule::sigma(double tau) const {
    if (!(tau >= 0.0 && tau <= horizon())) throw ParameterError("NoiseSchedule: tau outside [0, T]");
    return std::sin(phi_ * tau);
}

std::vector<double> NoiseSchedule::grid(int steps) const {
    if (steps < 1) throw ParameterError("NoiseSchedule::grid: steps must be >= 1");
    std::vector<double> g(static_cast<std::size_t>(steps) + 1);
    for (int i = 0; i <= steps; ++i)
        g[static_cast<std::size_t>(i)] = horizon() * static_cast<double>(steps - i) / steps;
    g.back() = 0.0;
    return g;
}

// ---------------------------------------------------------------- denoisers

Tensor Denoiser::predict(const Tensor& x_tau, std::span<const float> tau) const {
    nn::Tape tape(false);
    Var x = tape.constant(x_tau);
    return forward(tape, x, tau).value();
}

GaussianPriorDenoiser::GaussianPriorDenoiser(double mean, double stddev, NoiseSchedule schedule)
    : mean_(mean), stddev_(stddev), schedule_(schedule) {
    if (!(stddev > 0.0) || !std::isfinite(mean))
        throw ParameterError("GaussianPriorDenoiser: stddev must be > 0 and mean finite");
}

Var GaussianPriorDenoiser::forward(nn::Tape&, Var x_tau, std::span<const float> tau) const {
    const int n = x_tau.shape().n;
    if (static_cast<int>(tau.size()) != n)
        throw ContractError("GaussianPriorDenoiser: one noise level per batch item required");
    // eps_hat = sigma * (x - alpha * mu) / (alpha^2 s^2 + sigma^2)
    std::vector<float> a(static_cast<std::size_t>(n)), b(static_cast<std::size_t>(n));
    const double var = stddev_ * stddev_;
    for (int i = 0; i < n; ++i) {
        const double al = schedule_.alpha(tau[static_cast<std::size_t>(i)]);
        const double si = schedule_.sigma(tau[static_cast<std::size_t>(i)]);
        const double denom = al * al * var + si * si;
        a[static_cast<std::size_t>(i)] = static_cast<float>(si / denom);
        b[static_cast<std::size_t>(i)] = static_cast<float>(-si * al * mean_ / denom);
    }
    return nn::affine_per_sample(x_tau, a, b);
}

double GaussianPriorDenoiser::posterior_mean(double x_tau, double tau) const {
    const double al = schedule_.alpha(tau), si = schedule_.sigma(tau);
    const double var = stddev_ * stddev_;
    return mean_ + al * var * (x_tau - al * mean_) / (al * al * var + si * si);
}

// ---------------------------------------------------------------- embedders

RandomConvEmbedder::RandomConvEmbedder(std::uint64_t seed, int dim) {
    if (dim < 1) throw ParameterError("RandomConvEmbedder: dim must be >= 1");
    weights_.add_normal("conv1.w", Shape{16, 1, 3, 3}, 9, 1.4f, derive_seed(seed, 0));
    weights_.add_zeros("conv1.b", Shape{1, 16, 1, 1});
    weights_.add_normal("conv2.w", Shape{32, 16, 3, 3}, 144, 1.4f, derive_seed(seed, 1));
    weights_.add_zeros("conv2.b", Shape{1, 32, 1, 1});
    weights_.add_normal("proj.w", Shape{dim, 32 * 16, 1, 1}, 32 * 16, 1.0f, derive_seed(seed, 2));
    weights_.add_zeros("proj.b", Shape{1, dim, 1, 1});
}

Var RandomConvEmbedder::embed(nn::Tape& tape, Var images) const {
    const Shape s = images.shape();
    if (s.c != 1 || s.h % 16 || s.w % 16)
        throw ContractError("RandomConvEmbedder: expects {N,1,H,W} with H, W multiples of 16, got " +
                            nn::to_string(s));
    auto w = [&](const char* name) { return tape.frozen(weights_.get(name).value); };
    Var h = nn::silu(nn::conv2d(images, w("conv1.w"), w("conv1.b"), 1));
    h = nn::avg_pool2(h);
    h = nn::silu(nn::conv2d(h, w("conv2.w"), w("conv2.b"), 1));
    h = nn::avg_pool2(h);
    h = nn::flatten(nn::pool_to(h, 4, 4));
    return nn::linear(h, w("proj.w"), w("proj.b"));
}

Var IdentityEmbedder::embed(nn::Tape&, Var images) const { return nn::flatten(images); }

// ---------------------------------------------------------------- DDIM primitives

Tensor x0_from_eps(const Tensor& x_tau, const Tensor& eps, double alpha, double sigma) {
    if (!(x_tau.shape == eps.shape)) throw ContractError("x0_from_eps: shape mismatch");
    if (!(alpha >= 1e-8))
        throw NumericalError("x0_from_eps: alpha " + std::to_string(alpha) + " below 1e-8");
    Tensor out(x_tau.shape);
    for (std::size_t i = 0; i < out.data.size(); ++i)
        out.data[i] = static_cast<float>((static_cast<double>(x_tau.data[i]) - sigma * eps.data[i]) / alpha);
    return out;
}

Tensor renoise(const Tensor& x0, const Tensor& eps, double alpha, double sigma) {
    if (!(x0.shape == eps.shape)) throw ContractError("renoise: shape mismatch");
    Tensor out(x0.shape);
    for (std::size_t i = 0; i < out.data.size(); ++i)
        out.data[i] = static_cast<float>(alpha * x0.data[i] + sigma * eps.data[i]);
    return out;
}

Tensor initial_noise(Shape shape, std::uint64_t seed) {
    Rng rng(seed);
    Tensor t(shape);
    for (float& v : t.data) v = static_cast<float>(rng.normal());
    return t;
}

Tensor stack(std::span<const Raster> images) {
    if (images.empty()) throw ParameterError("stack: no images");
    const int h = images[0].height(), w = images[0].width();
    Tensor t(Shape{static_cast<int>(images.size()), 1, h, w});
    for (std::size_t i = 0; i < images.size(); ++i) {
        if (images[i].height() != h || images[i].width() != w)
            throw ContractError("stack: images differ in shape");
        std::copy(images[i].pixels().begin(), images[i].pixels().end(), t.sample(static_cast<int>(i)));
    }
    return t;
}

Raster unstack(const Tensor& t, int index) {
    if (t.shape.c != 1 || index < 0 || index >= t.shape.n) throw ContractError("unstack: bad index or channels");
    Raster r(t.shape.h, t.shape.w);
    std::copy_n(t.sample(index), t.shape.per_sample(), r.pixels().begin());
    return r;
}

// ---------------------------------------------------------------- losses

DsmDraw draw_dsm_noise(const Shape& shape, const NoiseSchedule& schedule, Rng& rng) {
    DsmDraw d;
    d.tau.resize(static_cast<std::size_t>(shape.n));
    for (float& t : d.tau) t = static_cast<float>(rng.uniform(0.0, schedule.horizon()));
    d.eps = Tensor(shape);
    for (float& v : d.eps.data) v = static_cast<float>(rng.normal());
    return d;
}

Var dsm_loss(nn::Tape& tape, const Denoiser& denoiser, const Tensor& batch, const NoiseSchedule& schedule,
             const DsmDraw& draw) {
    const Shape s = batch.shape;
    if (s.n < 1) throw ParameterError("dsm_loss: empty batch");
    if (!(draw.eps.shape == s) || static_cast<int>(draw.tau.size()) != s.n)
        throw ContractError("dsm_loss: noise draw does not match the batch");
    Tensor x_tau(s);
    for (int n = 0; n < s.n; ++n) {
        const double al = schedule.alpha(draw.tau[static_cast<std::size_t>(n)]);
        const double si = schedule.sigma(draw.tau[static_cast<std::size_t>(n)]);
        const float* x0 = batch.sample(n);
        const float* e = draw.eps.sample(n);
        float* out = x_tau.sample(n);
        for (std::size_t i = 0; i < s.per_sample(); ++i)
            out[i] = static_cast<float>(al * x0[i] + si * e[i]);
    }
    Var eps_hat = denoiser.forward(tape, tape.constant(std::move(x_tau)), draw.tau);
    if (!nn::all_finite(eps_hat.value())) throw NumericalError("dsm_loss: non-finite denoiser output");
    Var loss = nn::scale(nn::squared_error_sum(eps_hat, tape.constant(draw.eps)), 1.0f / static_cast<float>(s.n));
    if (!std::isfinite(loss.value().data[0])) throw NumericalError("dsm_loss: non-finite loss");
    return loss;
}

double dsm_loss(const Denoiser& denoiser, const Tensor& batch, const NoiseSchedule& schedule, Rng& rng) {
    nn::Tape tape(false);
    const DsmDraw draw = draw_dsm_noise(batch.shape, schedule, rng);
    return dsm_loss(tape, denoiser, batch, schedule, draw).value().data[0];
}

Var kid_loss(nn::Tape& tape, Var generated, const Tensor& real, const Embedder& embedder) {
    if (generated.shape().n < 2 || real.shape.n < 2)
        throw ParameterError("kid_loss: both batches need at least 2 samples");
    Var fx = embedder.embed(tape, generated);
    Var fy = embedder.embed(tape, tape.constant(real));
    return nn::mmd2_unbiased_poly3(fx, fy);
}

double kid_loss(const Tensor& generated, const Tensor& real, const Embedder& embedder) {
    if (generated.shape.n < 2 || real.shape.n < 2)
        throw ParameterError("kid_loss: both batches need at least 2 samples");
    nn::Tape tape(false);
    const Var fx = embedder.embed(tape, tape.constant(generated));
    const Var fy = embedder.embed(tape, tape.constant(real));
    return nn::mmd2_unbiased_poly3_value(fx.value(), fy.value());
}

Var generate_on_tape(nn::Tape& tape, const Denoiser& denoiser, const NoiseSchedule& schedule, Shape shape,
                     int steps, Rng& rng) {
    const std::vector<double> g = schedule.grid(steps);
    Var x = tape.constant(initial_noise(shape, rng.next()));
    const auto per_sample = [&](double v) { return std::vector<float>(static_cast<std::size_t>(shape.n), static_cast<float>(v)); };
    for (int i = 0; i < steps; ++i) {
        const double tau = g[static_cast<std::size_t>(i)], next = g[static_cast<std::size_t>(i) + 1];
        const double al = schedule.alpha(tau), si = schedule.sigma(tau);
        if (al < 1e-8) throw NumericalError("generate_on_tape: alpha below 1e-8");
        Var eps = denoiser.forward(tape, x, per_sample(tau));
        Var x0 = nn::axpby_per_sample(x, per_sample(1.0 / al), eps, per_sample(-si / al));
        if (next == 0.0) return x0;
        x = nn::axpby_per_sample(x0, per_sample(schedule.alpha(next)), eps, per_sample(schedule.sigma(next)));
    }
    return x;
}

void TrainConfig::validate() const {
    if (!(lambda_kid >= 0.0)) throw ParameterError("train.lambda_kid must be >= 0");
    if (n_kid < 1) throw ParameterError("train.n_kid must be >= 1");
    if (!(ema_decay >= 0.0 && ema_decay < 1.0)) throw ParameterError("train.ema_decay must lie in [0, 1)");
    if (!(lr_pretrain > 0.0)) throw ParameterError("train.lr_pretrain must be > 0");
    if (!(lr_finetune > 0.0)) throw ParameterError("train.lr_finetune must be > 0");
    if (batch_size < 1) throw ParameterError("train.batch_size must be >= 1");
    if (steps < 0) throw ParameterError("train.steps must be >= 0");
    if (finetune_steps < 0) throw ParameterError("train.finetune_steps must be >= 0");
    if (kid_every < 1) throw ParameterError("train.kid_every must be >= 1");
    if (kid_batch < 2) throw ParameterError("train.kid_batch must be >= 2");
}

Var total_loss(nn::Tape& tape, const Denoiser& denoiser, const Tensor& batch, const Tensor& real_reference,
               const NoiseSchedule& schedule, const TrainConfig& config, const Embedder& embedder, Rng& rng,
               bool with_kid, LossParts* parts) {
    const DsmDraw draw = draw_dsm_noise(batch.shape, schedule, rng);
    Var dsm = dsm_loss(tape, denoiser, batch, schedule, draw);
    LossParts local;
    local.dsm = dsm.value().data[0];
    local.total = local.dsm;
    Var total = dsm;
    if (config.lambda_kid > 0.0 && with_kid) {
        const Shape gen_shape{config.kid_batch, 1, batch.shape.h, batch.shape.w};
        Var generated = generate_on_tape(tape, denoiser, schedule, gen_shape, config.n_kid, rng);
        Var kid = kid_loss(tape, generated, real_reference, embedder);
        local.kid = kid.value().data[0];
        local.kid_evaluated = true;
        local.total = local.dsm + config.lambda_kid * local.kid;
        total = nn::add(dsm, nn::scale(kid, static_cast<float>(config.lambda_kid)));
    }
    if (parts) *parts = local;
    return total;
}

// ---------------------------------------------------------------- training

namespace {

Tensor gather(std::span<const Raster> dataset, int count, Rng& rng) {
    std::vector<Raster> picked;
    picked.reserve(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i)
        picked.push_back(dataset[static_cast<std::size_t>(rng.integer(0, static_cast<int>(dataset.size()) - 1))]);
    return stack(picked);
}

} // namespace

std::vector<TrainRecord> train(TrainableDenoiser& denoiser, std::span<const Raster> dataset,
                               const TrainConfig& config, const NoiseSchedule& schedule, const Embedder& embedder,
                               const TrainPhase& phase, const TrainCallback& on_step) {
    config.validate();
    if (dataset.empty()) throw ParameterError("train: dataset is empty");
    if (!(phase.learning_rate > 0.0) || phase.steps < 0) throw ParameterError("train: invalid phase settings");
    for (const Raster& r : dataset)
        if (!r.same_shape(dataset[0])) throw ContractError("train: dataset images differ in shape");

    Rng rng(derive_seed(config.seed, fnv1a(phase.name)));
    nn::Adam adam(phase.learning_rate);
    nn::ParameterSet& params = denoiser.parameters();
    std::vector<TrainRecord> trace;
    trace.reserve(static_cast<std::size_t>(phase.steps));
    double first_total = 0.0;

    for (int step = 1; step <= phase.steps; ++step) {
        const Tensor batch = gather(dataset, config.batch_size, rng);
        const bool with_kid = phase.use_kid && step % config.kid_every == 0;
        const Tensor reference = with_kid ? gather(dataset, config.kid_batch, rng) : Tensor{};

        nn::Tape tape(true);
        LossParts parts;
        Var loss = total_loss(tape, denoiser, batch, reference, schedule, config, embedder, rng, with_kid, &parts);
        tape.backward(loss);

        std::vector<Tensor> grads;
        grads.reserve(params.size());
        for (std::size_t i = 0; i < params.size(); ++i) {
            grads.push_back(tape.parameter_grad(params[i]));
            if (!nn::all_finite(grads.back()))
                throw NumericalError("train: non-finite gradient for " + params[i].name + " at step " +
                                     std::to_string(step));
        }
        adam.step(params, grads);
        nn::ema_update(denoiser.ema_parameters(), params, config.ema_decay);

        if (step == 1) first_total = parts.total;
        if (first_total > 0.0 && parts.total > 1e3 * first_total)
            throw TrainingDiverged("train: loss " + std::to_string(parts.total) + " exceeds 1e3 x initial " +
                                   std::to_string(first_total) + " at step " + std::to_string(step) +
                                   " (phase " + phase.name + ")");

        TrainRecord rec{step, phase.name, phase.learning_rate, parts};
        if (on_step) on_step(rec);
        trace.push_back(std::move(rec));
    }
    return trace;
}

double pixel_variance(std::span<const Raster> images) {
    double sum = 0.0, sum2 = 0.0;
    std::size_t n = 0;
    for (const Raster& r : images)
        for (float v : r.pixels()) {
            sum += v;
            sum2 += static_cast<double>(v) * v;
            ++n;
        }
    if (n == 0) throw ParameterError("pixel_variance: no pixels");
    const double mean = sum / static_cast<double>(n);
    return std::max(sum2 / static_cast<double>(n) - mean * mean, 0.0);
}

std::vector<TrainRecord> pretrain_finetune(UNetDenoiser& denoiser, std::span<const Raster> broad,
                                           std::span<const Raster> narrow, const TrainConfig& config,
                                           const NoiseSchedule& schedule, const Embedder& embedder,
                                           const TrainCallback& on_step) {
    const TrainPhase pretrain{"pretrain", config.lr_pretrain, config.steps, config.kid_in_pretrain};
    std::vector<TrainRecord> trace = train(denoiser, broad, config, schedule, embedder, pretrain, on_step);
    if (config.finetune_steps > 0) {
        if (narrow.empty()) throw ParameterError("pretrain_finetune: finetune set is empty");
        auto fine = train(denoiser, narrow, config, schedule, embedder,
                          TrainPhase{"finetune", config.lr_finetune, config.finetune_steps}, on_step);
        trace.insert(trace.end(), fine.begin(), fine.end());
    }
    denoiser.set_data_variance(pixel_variance(narrow.empty() ? broad : narrow));
    return trace;
}

// ---------------------------------------------------------------- sampling

Tensor sample_unconditional_raw(const Denoiser& denoiser, const NoiseSchedule& schedule, int steps,
                                std::uint64_t seed, int count, int height, int width) {
    if (count < 1) throw ParameterError("sample_unconditional: count must be >= 1");
    const std::vector<double> g = schedule.grid(steps);
    Tensor x = initial_noise(Shape{count, 1, height, width}, seed);
    for (int i = 0; i < steps; ++i) {
        const double tau = g[static_cast<std::size_t>(i)], next = g[static_cast<std::size_t>(i) + 1];
        const std::vector<float> taus(static_cast<std::size_t>(count), static_cast<float>(tau));
        const Tensor eps = denoiser.predict(x, taus);
        Tensor x0 = x0_from_eps(x, eps, schedule.alpha(tau), schedule.sigma(tau));
        x = next == 0.0 ? std::move(x0) : renoise(x0, eps, schedule.alpha(next), schedule.sigma(next));
    }
    return x;
}

std::vector<Raster> sample_unconditional(const Denoiser& denoiser, const NoiseSchedule& schedule, int steps,
                                         std::uint64_t seed, int count, int height, int width) {
    const Tensor x = sample_unconditional_raw(denoiser, schedule, steps, seed, count, height, width);
    std::vector<Raster> out;
    out.reserve(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) out.push_back(clamp01(unstack(x, i)));
    return out;
}

} // namespace dehaze
