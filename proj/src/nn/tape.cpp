#include "dehaze/nn/tape.hpp"

#include <cmath>
#include <sstream>

#if defined(__SSE__)
#include <xmmintrin.h>
#endif

#include "dehaze/error.hpp"

namespace dehaze::nn {

#if defined(__SSE__)
// MXCSR bits: flush-to-zero (15) and denormals-are-zero (6).
FlushSubnormals::FlushSubnormals() : saved_(_mm_getcsr()) { _mm_setcsr(saved_ | 0x8040u); }
FlushSubnormals::~FlushSubnormals() { _mm_setcsr(saved_); }
#else
FlushSubnormals::FlushSubnormals() = default;
FlushSubnormals::~FlushSubnormals() = default;
#endif

std::string to_string(const Shape& s) {
    std::ostringstream os;
    os << "[" << s.n << "," << s.c << "," << s.h << "," << s.w << "]";
    return os.str();
}

Tensor::Tensor(Shape s, std::vector<float> values) : shape(s), data(values.begin(), values.end()) {
    if (data.size() != shape.numel())
        throw ContractError("tensor data size does not match shape " + to_string(shape));
}

double squared_norm(const Tensor& t) {
    double acc = 0.0;
    for (float v : t.data) acc += static_cast<double>(v) * v;
    return acc;
}

bool all_finite(const Tensor& t) {
    for (float v : t.data)
        if (!std::isfinite(v)) return false;
    return true;
}

const Tensor& Var::value() const { return tape->value(id); }
const Shape& Var::shape() const { return tape->value(id).shape; }

Var Tape::constant(Tensor value) {
    Node n;
    n.owned = std::move(value);
    nodes_.push_back(std::move(n));
    return {this, static_cast<int>(nodes_.size() - 1)};
}

Var Tape::input(Tensor value) {
    Node n;
    n.owned = std::move(value);
    n.requires_grad = true;
    nodes_.push_back(std::move(n));
    return {this, static_cast<int>(nodes_.size() - 1)};
}

Var Tape::parameter(const Parameter& p) {
    Node n;
    n.external = &p.value;
    n.param = &p;
    n.requires_grad = track_parameters_;
    nodes_.push_back(std::move(n));
    return {this, static_cast<int>(nodes_.size() - 1)};
}

Var Tape::frozen(const Tensor& value) {
    Node n;
    n.external = &value;
    nodes_.push_back(std::move(n));
    return {this, static_cast<int>(nodes_.size() - 1)};
}

const Tensor& Tape::value(int id) const {
    const Node& n = nodes_.at(static_cast<std::size_t>(id));
    return n.external ? *n.external : n.owned;
}

Var Tape::record(Tensor value, bool requires_grad, Backward backward) {
    Node n;
    n.owned = std::move(value);
    n.requires_grad = requires_grad;
    if (requires_grad) n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return {this, static_cast<int>(nodes_.size() - 1)};
}

Tensor& Tape::grad_buffer(int id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.has_grad) {
        n.grad = Tensor(value(id).shape, 0.0f);
        n.has_grad = true;
    }
    return n.grad;
}

const Tensor* Tape::grad_if_any(int id) const {
    const Node& n = nodes_[static_cast<std::size_t>(id)];
    return n.has_grad ? &n.grad : nullptr;
}

Tensor Tape::grad(Var v) const {
    const Tensor* g = grad_if_any(v.id);
    return g ? *g : Tensor(value(v.id).shape, 0.0f);
}

Tensor Tape::parameter_grad(const Parameter& p) const {
    Tensor acc(p.value.shape, 0.0f);
    for (const Node& n : nodes_) {
        if (n.param != &p || !n.has_grad) continue;
        for (std::size_t i = 0; i < acc.data.size(); ++i) acc.data[i] += n.grad.data[i];
    }
    return acc;
}

void Tape::backward(Var root) {
    if (value(root.id).numel() != 1)
        throw ContractError("backward(root) needs a scalar root; pass a seed for tensors");
    backward(root, Tensor(value(root.id).shape, 1.0f));
}

void Tape::backward(Var root, const Tensor& seed) {
    if (root.tape != this) throw ContractError("backward: variable from another tape");
    if (!(seed.shape == value(root.id).shape))
        throw ContractError("backward: seed shape " + to_string(seed.shape) +
                            " does not match root " + to_string(value(root.id).shape));
    zero_grad();
    Tensor& g = grad_buffer(root.id);
    g.data = seed.data;
    for (int id = root.id; id >= 0; --id) {
        Node& n = nodes_[static_cast<std::size_t>(id)];
        if (n.has_grad && n.backward) n.backward(*this, id);
    }
}

void Tape::zero_grad() {
    for (Node& n : nodes_) {
        n.has_grad = false;
        n.grad = Tensor();
    }
}

} // namespace dehaze::nn
