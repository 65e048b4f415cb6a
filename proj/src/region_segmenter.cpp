#include "dehaze/region_segmenter.hpp"

#include <cmath>
#include <string>

#include "dehaze/diffusion.hpp"
#include "dehaze/nn/ops.hpp"
#include "dehaze/rng.hpp"

namespace dehaze {

using nn::Shape;
using nn::Tensor;
using nn::Var;

void SegmenterConfig::validate() const {
    if (channels < 1) throw ParameterError("segmenter.channels must be >= 1");
    if (!(learning_rate > 0.0)) throw ParameterError("segmenter.learning_rate must be > 0");
    if (steps < 0) throw ParameterError("segmenter.steps must be >= 0");
    if (batch_size < 1) throw ParameterError("segmenter.batch_size must be >= 1");
}

LearnedSegmenter::LearnedSegmenter(int height, int width, int channels, std::uint64_t seed)
    : height_(height), width_(width), channels_(channels) {
    if (height < 4 || width < 4 || height % 4 || width % 4)
        throw ParameterError("LearnedSegmenter: input extents must be positive multiples of 4");
    if (channels < 1) throw ParameterError("LearnedSegmenter: channels must be >= 1");
    const int c = channels;
    std::uint64_t k = 0;
    auto conv = [&](const std::string& name, int cin, int cout, int ksize) {
        params_.add_normal(name + ".w", Shape{cout, cin, ksize, ksize}, cin * ksize * ksize, 1.4f,
                           derive_seed(seed, k++));
        params_.add_zeros(name + ".b", Shape{1, cout, 1, 1});
    };
    conv("enc1a", 1, c, 3);
    conv("enc1b", c, c, 3);
    conv("enc2a", c, 2 * c, 3);
    conv("enc2b", 2 * c, 2 * c, 3);
    conv("mid_a", 2 * c, 4 * c, 3);
    conv("mid_b", 4 * c, 4 * c, 3);
    conv("dec2", 6 * c, 2 * c, 3);
    conv("dec1", 3 * c, c, 3);
    conv("head", c, 2, 1);
}

Var LearnedSegmenter::forward(nn::Tape& tape, Var images) const {
    const Shape s = images.shape();
    if (s.c != 1 || s.h != height_ || s.w != width_)
        throw ContractError("LearnedSegmenter: input " + nn::to_string(s) + " does not match the trained size " +
                            std::to_string(height_) + "x" + std::to_string(width_));
    auto conv = [&](const std::string& name, Var x) {
        const nn::Parameter& w = params_.get(name + ".w");
        return nn::conv2d(x, tape.parameter(w), tape.parameter(params_.get(name + ".b")), w.value.shape.h / 2);
    };
    auto stage = [&](const std::string& a, const std::string& b, Var x) {
        return nn::silu(conv(b, nn::silu(conv(a, x))));
    };
    Var x = nn::add_scalar(nn::scale(images, 2.0f), -1.0f);
    Var e1 = stage("enc1a", "enc1b", x);
    Var e2 = stage("enc2a", "enc2b", nn::avg_pool2(e1));
    Var m = stage("mid_a", "mid_b", nn::avg_pool2(e2));
    Var d2 = nn::silu(conv("dec2", nn::concat_channels(nn::upsample2(m), e2)));
    Var d1 = nn::silu(conv("dec1", nn::concat_channels(nn::upsample2(d2), e1)));
    return conv("head", d1);
}

RegionLogits LearnedSegmenter::segment(const Raster& y) const {
    if (!y.same_shape(height_, width_))
        throw ContractError("LearnedSegmenter: image " + std::to_string(y.height()) + "x" +
                            std::to_string(y.width()) + " does not match the trained size " +
                            std::to_string(height_) + "x" + std::to_string(width_));
    nn::Tape tape(false);
    const Raster images[] = {y};
    const Tensor out = forward(tape, tape.constant(stack(images))).value();
    RegionLogits logits{Raster(height_, width_), Raster(height_, width_)};
    const std::size_t plane = out.shape.plane();
    std::copy_n(out.data.begin(), plane, logits.ventricle.pixels().begin());
    std::copy_n(out.data.begin() + static_cast<std::ptrdiff_t>(plane), plane, logits.septum.pixels().begin());
    return logits;
}

std::pair<double, double> mean_dice(const RegionSegmenter& model, const std::vector<SegExample>& set,
                                    double theta) {
    if (set.empty()) return {0.0, 0.0};
    double dv = 0.0, ds = 0.0;
    for (const SegExample& ex : set) {
        const RegionLogits l = model.segment(ex.hazy);
        dv += dice(threshold(l.ventricle, theta), ex.ventricle);
        ds += dice(threshold(l.septum, theta), ex.septum);
    }
    return {dv / static_cast<double>(set.size()), ds / static_cast<double>(set.size())};
}

LearnedSegmenter train_region_segmenter(const std::vector<SegExample>& train,
                                        const std::vector<SegExample>& validation, const SegmenterConfig& config,
                                        double theta, SegTrainReport* report) {
    config.validate();
    if (train.empty()) throw ParameterError("train_region_segmenter: training set is empty");
    const int H = train[0].hazy.height(), W = train[0].hazy.width();
    for (const SegExample& ex : train) {
        require_same_shape(ex.hazy, train[0].hazy, "train_region_segmenter");
        require_same_shape(ex.hazy, ex.ventricle, "train_region_segmenter");
        require_same_shape(ex.hazy, ex.septum, "train_region_segmenter");
    }

    LearnedSegmenter model(H, W, config.channels, derive_seed(config.seed, 0));
    nn::Adam adam(config.learning_rate);
    Rng rng(derive_seed(config.seed, 1));
    SegTrainReport local;
    const std::size_t plane = static_cast<std::size_t>(H) * static_cast<std::size_t>(W);

    for (int step = 0; step < config.steps; ++step) {
        std::vector<Raster> images;
        Tensor targets(Shape{config.batch_size, 2, H, W});
        for (int n = 0; n < config.batch_size; ++n) {
            const SegExample& ex = train[static_cast<std::size_t>(rng.integer(0, static_cast<int>(train.size()) - 1))];
            images.push_back(ex.hazy);
            float* t = targets.sample(n);
            for (std::size_t i = 0; i < plane; ++i) {
                t[i] = ex.ventricle[i] ? 1.0f : 0.0f;
                t[plane + i] = ex.septum[i] ? 1.0f : 0.0f;
            }
        }
        nn::Tape tape(true);
        Var logits = model.forward(tape, tape.constant(stack(images)));
        Var loss = nn::bce_with_logits_sum(logits, targets);
        const double per_pixel = loss.value().data[0] / static_cast<double>(targets.numel());
        if (!std::isfinite(per_pixel))
            throw NumericalError("train_region_segmenter: non-finite loss at step " + std::to_string(step));
        tape.backward(loss);
        std::vector<Tensor> grads;
        for (std::size_t i = 0; i < model.parameters().size(); ++i) {
            Tensor g = tape.parameter_grad(model.parameters()[i]);
            for (float& v : g.data) v /= static_cast<float>(config.batch_size);
            grads.push_back(std::move(g));
        }
        adam.step(model.parameters(), grads);
        local.loss_trace.push_back(per_pixel);
    }

    local.train_dice_ventricle = mean_dice(model, train, theta).first;
    const auto [dv, ds] = mean_dice(model, validation, theta);
    local.validation_dice_ventricle = dv;
    local.validation_dice_septum = ds;
    if (report) *report = std::move(local);
    return model;
}

} // namespace dehaze
