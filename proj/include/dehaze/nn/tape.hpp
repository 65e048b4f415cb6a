#pragma once

#include <deque>
#include <functional>
#include <string>
#include <vector>

#include "dehaze/nn/tensor.hpp"

namespace dehaze::nn {

/// Named trainable tensor. Ownership lives in a ParameterSet.
struct Parameter {
    std::string name;
    Tensor value;
};

class Tape;

/// Flushes subnormal floats to zero while alive and restores the previous
/// floating-point mode on exit. Subnormals from saturated activations can
/// slow SSE arithmetic by two orders of magnitude.
class FlushSubnormals {
public:
    FlushSubnormals();
    ~FlushSubnormals();
    FlushSubnormals(const FlushSubnormals&) = delete;
    FlushSubnormals& operator=(const FlushSubnormals&) = delete;

private:
    unsigned saved_ = 0;
};

/// Handle to a node recorded on a Tape.
struct Var {
    Tape* tape = nullptr;
    int id = -1;

    const Tensor& value() const;
    const Shape& shape() const;
};

/// Reverse-mode autodiff tape. Nodes are appended in evaluation order, so the
/// recording order is already a topological order for the backward sweep.
///
/// A tape is single-use and not thread-safe; concurrent inference uses one
/// tape per thread over shared, immutable parameters.
class Tape {
public:
    using Backward = std::function<void(Tape&, int self)>;

    /// With `track_parameters` false, parameters enter as constants and no
    /// weight gradients are formed (input-gradient only passes).
    explicit Tape(bool track_parameters = true) : track_parameters_(track_parameters) {}
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var constant(Tensor value);
    Var input(Tensor value);
    /// References the parameter's storage; it must outlive the tape.
    Var parameter(const Parameter& p);
    /// References external storage that never receives gradients.
    Var frozen(const Tensor& value);

    const Tensor& value(int id) const;
    bool requires_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].requires_grad; }
    bool requires_grad(Var v) const { return requires_grad(v.id); }

    /// Gradient of the last backward root with respect to `v` (zeros if unreached).
    Tensor grad(Var v) const;
    Tensor parameter_grad(const Parameter& p) const;

    /// Seeds a scalar root with 1.
    void backward(Var root);
    /// Seeds `root` with an arbitrary cotangent of matching shape (vector-Jacobian product).
    void backward(Var root, const Tensor& seed);
    void zero_grad();

    std::size_t size() const { return nodes_.size(); }

    // Op-author interface.
    Var record(Tensor value, bool requires_grad, Backward backward);
    Tensor& grad_buffer(int id);
    const Tensor* grad_if_any(int id) const;

private:
    FlushSubnormals float_mode_;

    struct Node {
        Tensor owned;
        const Tensor* external = nullptr;
        const Parameter* param = nullptr;
        Tensor grad;
        bool has_grad = false;
        bool requires_grad = false;
        Backward backward;
    };

    std::deque<Node> nodes_;
    bool track_parameters_;
};

} // namespace dehaze::nn
