#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "dehaze/nn/tape.hpp"

namespace dehaze::nn {

/// Ordered collection of parameters with stable addresses.
class ParameterSet {
public:
    ParameterSet() = default;
    ParameterSet(const ParameterSet& other);
    ParameterSet& operator=(const ParameterSet& other);
    ParameterSet(ParameterSet&&) noexcept = default;
    ParameterSet& operator=(ParameterSet&&) noexcept = default;

    Parameter& add(std::string name, Tensor value);
    /// He-style normal init scaled by `gain / sqrt(fan_in)`.
    Parameter& add_normal(std::string name, Shape shape, int fan_in, float gain, std::uint64_t seed);
    Parameter& add_zeros(std::string name, Shape shape);

    std::size_t size() const { return params_.size(); }
    Parameter& operator[](std::size_t i) { return *params_[i]; }
    const Parameter& operator[](std::size_t i) const { return *params_[i]; }
    const Parameter& get(const std::string& name) const;
    Parameter& get(const std::string& name);
    std::size_t scalar_count() const;

    /// Copies values from `other`, which must have identical names and shapes.
    void assign(const ParameterSet& other);
    double distance(const ParameterSet& other) const;

private:
    std::vector<std::unique_ptr<Parameter>> params_;
};

/// Adam with bias correction.
class Adam {
public:
    explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

    void set_learning_rate(double lr) { lr_ = lr; }
    double learning_rate() const { return lr_; }
    void step(ParameterSet& params, const std::vector<Tensor>& grads);

private:
    double lr_, beta1_, beta2_, eps_;
    long t_ = 0;
    std::vector<std::vector<double>> m_, v_;
};

/// theta_ema <- decay * theta_ema + (1 - decay) * theta
void ema_update(ParameterSet& ema, const ParameterSet& live, double decay);

} // namespace dehaze::nn
