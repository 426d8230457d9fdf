#include "dub/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace dub {

Var Graph::constant(Tensor value) {
    nodes_.push_back(Node{std::move(value), {}, {}, false, {}});
    return Var{nodes_.size() - 1};
}

Var Graph::parameter(Tensor value) {
    nodes_.push_back(Node{std::move(value), {}, {}, true, {}});
    return Var{nodes_.size() - 1};
}

Var Graph::record(Tensor value, std::vector<Var> inputs, BackwardFn backward) {
    Node node;
    node.value = std::move(value);
    node.inputs.reserve(inputs.size());
    for (Var v : inputs) {
        if (v.id >= nodes_.size()) throw std::invalid_argument("graph input does not exist");
        node.inputs.push_back(v.id);
        node.requires_grad = node.requires_grad || nodes_[v.id].requires_grad;
    }
    if (node.requires_grad) node.backward = std::move(backward);
    nodes_.push_back(std::move(node));
    return Var{nodes_.size() - 1};
}

const Tensor& Graph::grad(Var v) const {
    const Node& node = nodes_.at(v.id);
    if (node.grad.shape() != node.value.shape()) node.grad = Tensor(node.value.shape());
    return node.grad;
}

void Graph::backward(Var loss) {
    Node& target = nodes_.at(loss.id);
    if (target.value.size() != 1) {
        throw std::invalid_argument("backward() needs a scalar loss, got shape " +
                                    shape_string(target.value.shape()));
    }
    for (Node& node : nodes_) node.grad = Tensor();
    target.grad = Tensor(target.value.shape(), 1.0);

    std::vector<const Tensor*> inputs;
    std::vector<Tensor*> input_grads;
    for (std::size_t i = loss.id + 1; i-- > 0;) {
        Node& node = nodes_[i];
        if (!node.requires_grad || !node.backward || node.grad.empty()) continue;
        inputs.clear();
        input_grads.clear();
        for (std::size_t in : node.inputs) {
            Node& parent = nodes_[in];
            inputs.push_back(&parent.value);
            if (parent.requires_grad) {
                if (parent.grad.empty()) parent.grad = Tensor(parent.value.shape());
                input_grads.push_back(&parent.grad);
            } else {
                input_grads.push_back(nullptr);
            }
        }
        node.backward(BackwardContext{inputs, node.value, node.grad, input_grads});
    }
}

namespace kernels {

namespace {

struct ConvGeometry {
    std::size_t cin, cout, h, w, k;
    long pad;
};

ConvGeometry conv_geometry(const Tensor& input, const Tensor& kernel, int dilation) {
    if (input.rank() != 3) {
        throw std::invalid_argument("conv2d input must be [C,H,W], got " + shape_string(input.shape()));
    }
    if (kernel.rank() != 4 || kernel.dim(2) != kernel.dim(3)) {
        throw std::invalid_argument("conv2d kernel must be [C_out,C_in,k,k], got " +
                                    shape_string(kernel.shape()));
    }
    if (kernel.dim(1) != input.dim(0)) {
        throw std::invalid_argument("conv2d channel mismatch: input " + shape_string(input.shape()) +
                                    " kernel " + shape_string(kernel.shape()));
    }
    if (kernel.dim(2) % 2 == 0) throw std::invalid_argument("conv2d kernel size must be odd");
    if (dilation < 1) throw std::invalid_argument("conv2d dilation must be >= 1");
    const std::size_t k = kernel.dim(2);
    return {input.dim(0), kernel.dim(0), input.dim(1), input.dim(2), k,
            static_cast<long>((k - 1) * static_cast<std::size_t>(dilation) / 2)};
}

// Calls fn(co, ci, weight_index, dy, dx, y0, y1, x0, x1) for each kernel tap
// with the output-row/column range whose shifted source lies inside the input.
template <typename Fn>
void for_each_tap(const ConvGeometry& geo, int dilation, Fn&& fn) {
    const long h = static_cast<long>(geo.h);
    const long w = static_cast<long>(geo.w);
    for (std::size_t co = 0; co < geo.cout; ++co) {
        for (std::size_t ci = 0; ci < geo.cin; ++ci) {
            for (std::size_t ky = 0; ky < geo.k; ++ky) {
                const long dy = static_cast<long>(ky) * dilation - geo.pad;
                const long y0 = std::max(0L, -dy);
                const long y1 = std::min(h, h - dy);
                if (y0 >= y1) continue;
                for (std::size_t kx = 0; kx < geo.k; ++kx) {
                    const long dx = static_cast<long>(kx) * dilation - geo.pad;
                    const long x0 = std::max(0L, -dx);
                    const long x1 = std::min(w, w - dx);
                    if (x0 >= x1) continue;
                    const std::size_t widx = ((co * geo.cin + ci) * geo.k + ky) * geo.k + kx;
                    fn(co, ci, widx, dy, dx, y0, y1, x0, x1);
                }
            }
        }
    }
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& kernel, int dilation) {
    const ConvGeometry geo = conv_geometry(input, kernel, dilation);
    Tensor out(Shape{geo.cout, geo.h, geo.w});
    const double* in = input.data().data();
    const double* wt = kernel.data().data();
    double* dst = out.data().data();
    const long w = static_cast<long>(geo.w);
    const long h = static_cast<long>(geo.h);
    for_each_tap(geo, dilation,
                 [&](std::size_t co, std::size_t ci, std::size_t widx, long dy, long dx, long y0,
                     long y1, long x0, long x1) {
                     const double weight = wt[widx];
                     if (weight == 0.0) return;
                     for (long y = y0; y < y1; ++y) {
                         const double* src = in + (static_cast<long>(ci) * h + y + dy) * w + dx;
                         double* row = dst + (static_cast<long>(co) * h + y) * w;
                         for (long x = x0; x < x1; ++x) row[x] += weight * src[x];
                     }
                 });
    return out;
}

void conv2d_backward(const Tensor& input, const Tensor& kernel, int dilation,
                     const Tensor& grad_output, Tensor* grad_input, Tensor* grad_kernel) {
    const ConvGeometry geo = conv_geometry(input, kernel, dilation);
    const double* in = input.data().data();
    const double* wt = kernel.data().data();
    const double* gout = grad_output.data().data();
    double* gin = grad_input ? grad_input->data().data() : nullptr;
    double* gk = grad_kernel ? grad_kernel->data().data() : nullptr;
    const long w = static_cast<long>(geo.w);
    const long h = static_cast<long>(geo.h);
    for_each_tap(geo, dilation,
                 [&](std::size_t co, std::size_t ci, std::size_t widx, long dy, long dx, long y0,
                     long y1, long x0, long x1) {
                     const double weight = wt[widx];
                     double acc = 0.0;
                     for (long y = y0; y < y1; ++y) {
                         const long src_off = (static_cast<long>(ci) * h + y + dy) * w + dx;
                         const double* grow = gout + (static_cast<long>(co) * h + y) * w;
                         if (gin) {
                             double* irow = gin + src_off;
                             for (long x = x0; x < x1; ++x) irow[x] += weight * grow[x];
                         }
                         if (gk) {
                             const double* src = in + src_off;
                             for (long x = x0; x < x1; ++x) acc += grow[x] * src[x];
                         }
                     }
                     if (gk) gk[widx] += acc;
                 });
}

Tensor maxpool2(const Tensor& input) {
    if (input.rank() != 3) {
        throw std::invalid_argument("maxpool2 input must be [C,H,W], got " + shape_string(input.shape()));
    }
    const std::size_t c = input.dim(0), h = input.dim(1), w = input.dim(2);
    if (h % 2 != 0 || w % 2 != 0) {
        throw std::invalid_argument("maxpool2 needs even H and W, got " + shape_string(input.shape()));
    }
    Tensor out(Shape{c, h / 2, w / 2});
    for (std::size_t ch = 0; ch < c; ++ch) {
        for (std::size_t y = 0; y < h / 2; ++y) {
            for (std::size_t x = 0; x < w / 2; ++x) {
                const double a = input.at(ch, 2 * y, 2 * x);
                const double b = input.at(ch, 2 * y, 2 * x + 1);
                const double cc = input.at(ch, 2 * y + 1, 2 * x);
                const double d = input.at(ch, 2 * y + 1, 2 * x + 1);
                out.at(ch, y, x) = std::max(std::max(a, b), std::max(cc, d));
            }
        }
    }
    return out;
}

}  // namespace kernels

namespace ops {

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_string(a.shape()) +
                                    " vs " + shape_string(b.shape()));
    }
}

// Elementwise unary op: value f(x), derivative df(x, y).
template <typename F, typename DF>
Var unary(Graph& g, Var x, F f, DF df) {
    const Tensor& in = g.value(x);
    Tensor out(in.shape());
    for (std::size_t i = 0; i < in.size(); ++i) out[i] = f(in[i]);
    return g.record(std::move(out), {x}, [df](const BackwardContext& ctx) {
        Tensor* gx = ctx.input_grads[0];
        if (!gx) return;
        const Tensor& xin = *ctx.inputs[0];
        for (std::size_t i = 0; i < xin.size(); ++i) {
            (*gx)[i] += ctx.grad_output[i] * df(xin[i], ctx.output[i]);
        }
    });
}

double stable_softplus(double x) {
    return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

}  // namespace

Var conv2d(Graph& g, Var input, Var kernel, int dilation) {
    Tensor out = kernels::conv2d(g.value(input), g.value(kernel), dilation);
    return g.record(std::move(out), {input, kernel}, [dilation](const BackwardContext& ctx) {
        kernels::conv2d_backward(*ctx.inputs[0], *ctx.inputs[1], dilation, ctx.grad_output,
                                 ctx.input_grads[0], ctx.input_grads[1]);
    });
}

Var bias_add(Graph& g, Var input, Var bias) {
    const Tensor& in = g.value(input);
    const Tensor& b = g.value(bias);
    if (in.rank() != 3 || b.rank() != 1 || b.dim(0) != in.dim(0)) {
        throw std::invalid_argument("bias_add: expected [C,H,W] and [C], got " + shape_string(in.shape()) +
                                    " and " + shape_string(b.shape()));
    }
    const std::size_t plane = in.dim(1) * in.dim(2);
    Tensor out = in;
    for (std::size_t c = 0; c < in.dim(0); ++c) {
        for (std::size_t i = 0; i < plane; ++i) out[c * plane + i] += b[c];
    }
    return g.record(std::move(out), {input, bias}, [plane](const BackwardContext& ctx) {
        if (Tensor* gi = ctx.input_grads[0]) {
            for (std::size_t i = 0; i < gi->size(); ++i) (*gi)[i] += ctx.grad_output[i];
        }
        if (Tensor* gb = ctx.input_grads[1]) {
            for (std::size_t c = 0; c < gb->size(); ++c) {
                double acc = 0.0;
                for (std::size_t i = 0; i < plane; ++i) acc += ctx.grad_output[c * plane + i];
                (*gb)[c] += acc;
            }
        }
    });
}

Var maxpool2(Graph& g, Var input) {
    Tensor out = kernels::maxpool2(g.value(input));
    return g.record(std::move(out), {input}, [](const BackwardContext& ctx) {
        Tensor* gi = ctx.input_grads[0];
        if (!gi) return;
        const Tensor& in = *ctx.inputs[0];
        const std::size_t c = in.dim(0), h = in.dim(1) / 2, w = in.dim(2) / 2;
        for (std::size_t ch = 0; ch < c; ++ch) {
            for (std::size_t y = 0; y < h; ++y) {
                for (std::size_t x = 0; x < w; ++x) {
                    const double m = ctx.output.at(ch, y, x);
                    // first maximum in row-major order within the window
                    std::size_t by = 2 * y, bx = 2 * x;
                    for (std::size_t j = 0; j < 4; ++j) {
                        const std::size_t yy = 2 * y + j / 2, xx = 2 * x + j % 2;
                        if (in.at(ch, yy, xx) == m) {
                            by = yy;
                            bx = xx;
                            break;
                        }
                    }
                    gi->at(ch, by, bx) += ctx.grad_output.at(ch, y, x);
                }
            }
        }
    });
}

Var relu(Graph& g, Var x) {
    return unary(
        g, x, [](double v) { return v > 0.0 ? v : 0.0; },
        [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Var softplus(Graph& g, Var x) {
    return unary(g, x, stable_softplus, [](double v, double) { return sigmoid(v); });
}

Var exp(Graph& g, Var x) {
    return unary(
        g, x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Var log(Graph& g, Var x) {
    for (double v : g.value(x).data()) {
        if (!(v > 0.0)) throw std::invalid_argument("log of a non-positive value");
    }
    return unary(
        g, x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Var clamp(Graph& g, Var x, double lo, double hi) {
    if (lo > hi) throw std::invalid_argument("clamp: lo > hi");
    return unary(
        g, x, [lo, hi](double v) { return std::clamp(v, lo, hi); },
        [lo, hi](double v, double) { return (v > lo && v < hi) ? 1.0 : 0.0; });
}

Var square(Graph& g, Var x) {
    return unary(
        g, x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

Var scale(Graph& g, Var x, double factor) {
    return unary(
        g, x, [factor](double v) { return factor * v; }, [factor](double, double) { return factor; });
}

Var add_scalar(Graph& g, Var x, double offset) {
    return unary(
        g, x, [offset](double v) { return v + offset; }, [](double, double) { return 1.0; });
}

Var add(Graph& g, Var a, Var b) {
    const Tensor& va = g.value(a);
    const Tensor& vb = g.value(b);
    require_same_shape(va, vb, "add");
    Tensor out = va;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += vb[i];
    return g.record(std::move(out), {a, b}, [](const BackwardContext& ctx) {
        for (Tensor* gx : ctx.input_grads) {
            if (!gx) continue;
            for (std::size_t i = 0; i < gx->size(); ++i) (*gx)[i] += ctx.grad_output[i];
        }
    });
}

Var sub(Graph& g, Var a, Var b) {
    const Tensor& va = g.value(a);
    const Tensor& vb = g.value(b);
    require_same_shape(va, vb, "sub");
    Tensor out = va;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] -= vb[i];
    return g.record(std::move(out), {a, b}, [](const BackwardContext& ctx) {
        if (Tensor* ga = ctx.input_grads[0]) {
            for (std::size_t i = 0; i < ga->size(); ++i) (*ga)[i] += ctx.grad_output[i];
        }
        if (Tensor* gb = ctx.input_grads[1]) {
            for (std::size_t i = 0; i < gb->size(); ++i) (*gb)[i] -= ctx.grad_output[i];
        }
    });
}

Var mul(Graph& g, Var a, Var b) {
    const Tensor& va = g.value(a);
    const Tensor& vb = g.value(b);
    require_same_shape(va, vb, "mul");
    Tensor out = va;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= vb[i];
    return g.record(std::move(out), {a, b}, [](const BackwardContext& ctx) {
        const Tensor& xa = *ctx.inputs[0];
        const Tensor& xb = *ctx.inputs[1];
        if (Tensor* ga = ctx.input_grads[0]) {
            for (std::size_t i = 0; i < ga->size(); ++i) (*ga)[i] += ctx.grad_output[i] * xb[i];
        }
        if (Tensor* gb = ctx.input_grads[1]) {
            for (std::size_t i = 0; i < gb->size(); ++i) (*gb)[i] += ctx.grad_output[i] * xa[i];
        }
    });
}

Var channel(Graph& g, Var x, std::size_t c) {
    const Tensor& in = g.value(x);
    if (in.rank() != 3 || c >= in.dim(0)) {
        throw std::invalid_argument("channel: index " + std::to_string(c) + " out of range for " +
                                    shape_string(in.shape()));
    }
    const std::size_t plane = in.dim(1) * in.dim(2);
    Tensor out(Shape{1, in.dim(1), in.dim(2)});
    std::copy_n(in.data().begin() + static_cast<long>(c * plane), plane, out.data().begin());
    return g.record(std::move(out), {x}, [c, plane](const BackwardContext& ctx) {
        Tensor* gx = ctx.input_grads[0];
        if (!gx) return;
        for (std::size_t i = 0; i < plane; ++i) (*gx)[c * plane + i] += ctx.grad_output[i];
    });
}

Var sum(Graph& g, Var x) {
    return g.record(Tensor::scalar(g.value(x).sum()), {x}, [](const BackwardContext& ctx) {
        Tensor* gx = ctx.input_grads[0];
        if (!gx) return;
        const double go = ctx.grad_output[0];
        for (std::size_t i = 0; i < gx->size(); ++i) (*gx)[i] += go;
    });
}

Var mean(Graph& g, Var x) {
    const Tensor& in = g.value(x);
    if (in.empty()) throw std::invalid_argument("mean of an empty tensor");
    const double n = static_cast<double>(in.size());
    return g.record(Tensor::scalar(in.sum() / n), {x}, [n](const BackwardContext& ctx) {
        Tensor* gx = ctx.input_grads[0];
        if (!gx) return;
        const double go = ctx.grad_output[0] / n;
        for (std::size_t i = 0; i < gx->size(); ++i) (*gx)[i] += go;
    });
}

}  // namespace ops

}  // namespace dub
