#include "dehaze/nn/params.hpp"

#include <cmath>

#include "dehaze/error.hpp"
#include "dehaze/rng.hpp"

namespace dehaze::nn {

ParameterSet::ParameterSet(const ParameterSet& other) {
    for (const auto& p : other.params_) params_.push_back(std::make_unique<Parameter>(*p));
}

ParameterSet& ParameterSet::operator=(const ParameterSet& other) {
    if (this != &other) {
        params_.clear();
        for (const auto& p : other.params_) params_.push_back(std::make_unique<Parameter>(*p));
    }
    return *this;
}

Parameter& ParameterSet::add(std::string name, Tensor value) {
    for (const auto& p : params_)
        if (p->name == name) throw ContractError("duplicate parameter name: " + name);
    params_.push_back(std::make_unique<Parameter>(Parameter{std::move(name), std::move(value)}));
    return *params_.back();
}

Parameter& ParameterSet::add_normal(std::string name, Shape shape, int fan_in, float gain,
                                    std::uint64_t seed) {
    Rng rng(seed);
    Tensor t(shape);
    const double s = gain / std::sqrt(static_cast<double>(std::max(fan_in, 1)));
    for (float& v : t.data) v = static_cast<float>(s * rng.normal());
    return add(std::move(name), std::move(t));
}

Parameter& ParameterSet::add_zeros(std::string name, Shape shape) {
    return add(std::move(name), Tensor(shape, 0.0f));
}

const Parameter& ParameterSet::get(const std::string& name) const {
    for (const auto& p : params_)
        if (p->name == name) return *p;
    throw ContractError("unknown parameter: " + name);
}

Parameter& ParameterSet::get(const std::string& name) {
    return const_cast<Parameter&>(static_cast<const ParameterSet&>(*this).get(name));
}

std::size_t ParameterSet::scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p->value.numel();
    return n;
}

void ParameterSet::assign(const ParameterSet& other) {
    if (other.size() != size()) throw ContractError("assign: parameter count differs");
    for (std::size_t i = 0; i < size(); ++i) {
        if (other[i].name != params_[i]->name || !(other[i].value.shape == params_[i]->value.shape))
            throw ContractError("assign: parameter layout differs at " + other[i].name);
        params_[i]->value.data = other[i].value.data;
    }
}

double ParameterSet::distance(const ParameterSet& other) const {
    if (other.size() != size()) throw ContractError("distance: parameter count differs");
    double acc = 0.0;
    for (std::size_t i = 0; i < size(); ++i) {
        const auto& a = params_[i]->value.data;
        const auto& b = other[i].value.data;
        for (std::size_t j = 0; j < a.size(); ++j) {
            const double d = static_cast<double>(a[j]) - b[j];
            acc += d * d;
        }
    }
    return std::sqrt(acc);
}

void Adam::step(ParameterSet& params, const std::vector<Tensor>& grads) {
    if (grads.size() != params.size()) throw ContractError("Adam: one gradient per parameter expected");
    if (m_.empty()) {
        for (std::size_t i = 0; i < params.size(); ++i) {
            m_.emplace_back(params[i].value.numel(), 0.0);
            v_.emplace_back(params[i].value.numel(), 0.0);
        }
    }
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& value = params[i].value.data;
        const auto& g = grads[i].data;
        auto& m = m_[i];
        auto& v = v_[i];
        for (std::size_t j = 0; j < value.size(); ++j) {
            m[j] = beta1_ * m[j] + (1.0 - beta1_) * g[j];
            v[j] = beta2_ * v[j] + (1.0 - beta2_) * static_cast<double>(g[j]) * g[j];
            const double mh = m[j] / c1, vh = v[j] / c2;
            value[j] -= static_cast<float>(lr_ * mh / (std::sqrt(vh) + eps_));
        }
    }
}

void ema_update(ParameterSet& ema, const ParameterSet& live, double decay) {
    if (ema.size() != live.size()) throw ContractError("ema_update: parameter count differs");
    const double keep = decay, take = 1.0 - decay;
    for (std::size_t i = 0; i < ema.size(); ++i) {
        auto& e = ema[i].value.data;
        const auto& l = live[i].value.data;
        for (std::size_t j = 0; j < e.size(); ++j)
            e[j] = static_cast<float>(keep * e[j] + take * l[j]);
    }
}

} // namespace dehaze::nn
