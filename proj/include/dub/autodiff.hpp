#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "dub/tensor.hpp"

namespace dub {

/// Handle to a node in a Graph.
struct Var {
    std::size_t id = 0;
};

/// What an operator's backward rule sees. `input_grads[i]` is null when input
/// i does not require a gradient; non-null buffers are accumulated into.
struct BackwardContext {
    std::span<const Tensor* const> inputs;
    const Tensor& output;
    const Tensor& grad_output;
    std::span<Tensor* const> input_grads;
};

using BackwardFn = std::function<void(const BackwardContext&)>;

/// Tape of operation records for reverse-mode differentiation. Nodes are
/// appended in evaluation order, so the tape order is already topological.
class Graph {
public:
    Var constant(Tensor value);
    Var parameter(Tensor value);

    /// Appends an operation node; used by the operator implementations.
    Var record(Tensor value, std::vector<Var> inputs, BackwardFn backward);

    const Tensor& value(Var v) const { return nodes_.at(v.id).value; }
    bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }

    /// Gradient of the last backward() target with respect to v. Zero-filled
    /// when v did not influence the loss.
    const Tensor& grad(Var v) const;

    /// Throws std::invalid_argument if `loss` is not a scalar.
    void backward(Var loss);

    std::size_t size() const noexcept { return nodes_.size(); }

private:
    struct Node {
        Tensor value;
        std::vector<std::size_t> inputs;
        BackwardFn backward;
        bool requires_grad = false;
        mutable Tensor grad;
    };

    std::vector<Node> nodes_;
};

namespace ops {

/// SAME-padded stride-1 convolution. input [C_in,H,W], kernel [C_out,C_in,k,k]
/// with k odd. Zero padding of (k-1)*dilation/2 on every side.
Var conv2d(Graph& g, Var input, Var kernel, int dilation = 1);

/// Adds bias[c] to every pixel of channel c. input [C,H,W], bias [C].
Var bias_add(Graph& g, Var input, Var bias);

/// 2x2 max-pool with stride 2. Gradient goes to the first maximum in
/// row-major order within each window.
Var maxpool2(Graph& g, Var input);

Var relu(Graph& g, Var x);
Var softplus(Graph& g, Var x);
Var exp(Graph& g, Var x);
Var log(Graph& g, Var x);
/// Gradient is passed through only where lo < x < hi.
Var clamp(Graph& g, Var x, double lo, double hi);
Var square(Graph& g, Var x);

Var add(Graph& g, Var a, Var b);
Var sub(Graph& g, Var a, Var b);
Var mul(Graph& g, Var a, Var b);
Var scale(Graph& g, Var x, double factor);
Var add_scalar(Graph& g, Var x, double offset);

/// Selects channel c of a [C,H,W] tensor as a [1,H,W] tensor.
Var channel(Graph& g, Var x, std::size_t c);

Var sum(Graph& g, Var x);
Var mean(Graph& g, Var x);

}  // namespace ops

// Forward-only kernels shared with inference paths that do not need a tape.
namespace kernels {

Tensor conv2d(const Tensor& input, const Tensor& kernel, int dilation);
void conv2d_backward(const Tensor& input, const Tensor& kernel, int dilation,
                     const Tensor& grad_output, Tensor* grad_input, Tensor* grad_kernel);
Tensor maxpool2(const Tensor& input);

}  // namespace kernels

}  // namespace dub
