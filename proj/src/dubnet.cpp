#include "dub/dubnet.hpp"

#include <random>
#include <stdexcept>
#include <string>

#include "dub/io.hpp"

namespace dub {

void ArchConfig::validate() const {
    if (heads < 1) throw std::invalid_argument("arch: K (heads) must be >= 1");
    if (!(init_std > 0.0)) throw std::invalid_argument("arch: init_std must be > 0");
    if (dilation < 1) throw std::invalid_argument("arch: dilation must be >= 1");
    if (kernel_size < 1 || kernel_size % 2 == 0) throw std::invalid_argument("arch: kernel_size must be odd");
    if (back_channels.empty() && front_channels.empty()) throw std::invalid_argument("arch: empty trunk");
    for (int c : front_channels) {
        if (c < 1) throw std::invalid_argument("arch: channel counts must be >= 1");
    }
    for (int c : back_channels) {
        if (c < 1) throw std::invalid_argument("arch: channel counts must be >= 1");
    }
}

namespace {

template <typename Params, typename Ptr>
std::vector<Ptr> collect_tensors(Params& p) {
    std::vector<Ptr> out;
    out.reserve(2 * (p.trunk.size() + p.heads.size() + 1));
    for (auto& l : p.trunk) {
        out.push_back(&l.weight);
        out.push_back(&l.bias);
    }
    for (auto& l : p.heads) {
        out.push_back(&l.weight);
        out.push_back(&l.bias);
    }
    out.push_back(&p.logvar.weight);
    out.push_back(&p.logvar.bias);
    return out;
}

}  // namespace

std::vector<Tensor*> DubNetParams::tensors() { return collect_tensors<DubNetParams, Tensor*>(*this); }

std::vector<const Tensor*> DubNetParams::tensors() const {
    return collect_tensors<const DubNetParams, const Tensor*>(*this);
}

namespace {

// Expected [weight, bias] shapes in checkpoint order.
std::vector<Shape> expected_shapes(const ArchConfig& arch) {
    std::vector<Shape> shapes;
    const auto k = static_cast<std::size_t>(arch.kernel_size);
    std::size_t in = 1;
    auto add_conv = [&](std::size_t out, std::size_t ksize) {
        shapes.push_back(Shape{out, in, ksize, ksize});
        shapes.push_back(Shape{out});
        in = out;
    };
    for (int c : arch.front_channels) add_conv(static_cast<std::size_t>(c), k);
    for (int c : arch.back_channels) add_conv(static_cast<std::size_t>(c), k);
    const std::size_t features = in;
    for (int h = 0; h < arch.heads + 1; ++h) {
        shapes.push_back(Shape{1, features, 1, 1});
        shapes.push_back(Shape{1});
    }
    return shapes;
}

DubNetParams empty_params(const ArchConfig& arch) {
    arch.validate();
    DubNetParams p;
    p.arch = arch;
    p.trunk.resize(arch.front_channels.size() + arch.back_channels.size());
    p.heads.resize(static_cast<std::size_t>(arch.heads));
    const std::vector<Shape> shapes = expected_shapes(arch);
    std::vector<Tensor*> slots = p.tensors();
    for (std::size_t i = 0; i < slots.size(); ++i) *slots[i] = Tensor(shapes[i]);
    return p;
}

struct BoundNet {
    std::vector<ConvVars> trunk;
    Var features;
};

BoundNet bind_trunk(Graph& g, const DubNetParams& params, const Tensor& image) {
    const std::size_t f = params.arch.downsample_factor();
    if (image.rank() != 3 || image.dim(0) != 1) {
        throw std::invalid_argument("network input must be [1,H,W], got " + shape_string(image.shape()));
    }
    if (image.dim(1) % f != 0 || image.dim(2) % f != 0 || image.dim(1) == 0 || image.dim(2) == 0) {
        throw std::invalid_argument("image " + shape_string(image.shape()) + " not divisible by downsample factor " +
                                    std::to_string(f));
    }
    BoundNet net;
    for (const ConvLayer& l : params.trunk) net.trunk.push_back({g.constant(l.weight), g.constant(l.bias)});
    net.features = trunk_forward(g, params.arch, net.trunk, g.constant(image));
    return net;
}

}  // namespace

void validate_params(const DubNetParams& params) {
    params.arch.validate();
    if (params.heads.size() != static_cast<std::size_t>(params.arch.heads)) {
        throw std::invalid_argument("params: head count does not match arch");
    }
    if (params.trunk.size() != params.arch.front_channels.size() + params.arch.back_channels.size()) {
        throw std::invalid_argument("params: trunk depth does not match arch");
    }
    const std::vector<Shape> shapes = expected_shapes(params.arch);
    const std::vector<const Tensor*> tensors = params.tensors();
    for (std::size_t i = 0; i < shapes.size(); ++i) {
        if (tensors[i]->shape() != shapes[i]) {
            throw std::invalid_argument("params: tensor " + std::to_string(i) + " has shape " +
                                        shape_string(tensors[i]->shape()) + ", expected " + shape_string(shapes[i]));
        }
    }
}

DubNetParams init_params(const ArchConfig& arch, std::uint64_t seed) {
    DubNetParams p = empty_params(arch);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, arch.init_std);
    auto init_layer = [&](ConvLayer& l) {
        for (double& w : l.weight.data()) w = normal(rng);
    };
    for (ConvLayer& l : p.trunk) init_layer(l);
    for (ConvLayer& l : p.heads) init_layer(l);
    init_layer(p.logvar);
    return p;
}

Var trunk_forward(Graph& g, const ArchConfig& arch, std::span<const ConvVars> trunk, Var image) {
    Var x = image;
    std::size_t layer = 0;
    for (std::size_t i = 0; i < arch.front_channels.size(); ++i, ++layer) {
        x = ops::conv2d(g, x, trunk[layer].weight, 1);
        x = ops::relu(g, ops::bias_add(g, x, trunk[layer].bias));
        x = ops::maxpool2(g, x);
    }
    for (std::size_t i = 0; i < arch.back_channels.size(); ++i, ++layer) {
        x = ops::conv2d(g, x, trunk[layer].weight, arch.dilation);
        x = ops::relu(g, ops::bias_add(g, x, trunk[layer].bias));
    }
    return x;
}

Var density_head_forward(Graph& g, const ConvVars& head, Var features) {
    Var y = ops::bias_add(g, ops::conv2d(g, features, head.weight, 1), head.bias);
    return ops::softplus(g, y);
}

Var logvar_head_forward(Graph& g, const ConvVars& head, Var features) {
    Var s = ops::bias_add(g, ops::conv2d(g, features, head.weight, 1), head.bias);
    return ops::clamp(g, s, kLogvarMin, kLogvarMax);
}

HeadOutput forward_head(const DubNetParams& params, const Tensor& image, std::size_t head) {
    if (head >= params.heads.size()) {
        throw std::invalid_argument("head index " + std::to_string(head) + " out of range for K=" +
                                    std::to_string(params.heads.size()));
    }
    Graph g;
    BoundNet net = bind_trunk(g, params, image);
    const ConvLayer& h = params.heads[head];
    Var y = density_head_forward(g, {g.constant(h.weight), g.constant(h.bias)}, net.features);
    Var s = logvar_head_forward(g, {g.constant(params.logvar.weight), g.constant(params.logvar.bias)}, net.features);
    return HeadOutput{g.value(y), g.value(s)};
}

EnsembleOutput forward_all(const DubNetParams& params, const Tensor& image) {
    Graph g;
    BoundNet net = bind_trunk(g, params, image);
    EnsembleOutput out;
    out.densities.reserve(params.heads.size());
    for (const ConvLayer& h : params.heads) {
        Var y = density_head_forward(g, {g.constant(h.weight), g.constant(h.bias)}, net.features);
        out.densities.push_back(g.value(y));
    }
    Var s = logvar_head_forward(g, {g.constant(params.logvar.weight), g.constant(params.logvar.bias)}, net.features);
    out.logvar = g.value(s);
    return out;
}

namespace {

constexpr std::uint32_t kCheckpointVersion = 1;

enum FieldTag : std::uint32_t {
    kFrontChannels = 1,
    kBackChannels = 2,
    kDilation = 3,
    kHeads = 4,
    kInitStd = 5,
    kKernelSize = 6,
};

void put_field(std::string& out, std::uint32_t tag, const std::string& payload) {
    detail::put_u32(out, tag);
    detail::put_u32(out, static_cast<std::uint32_t>(payload.size()));
    out += payload;
}

std::string int_list(const std::vector<int>& values) {
    std::string s;
    detail::put_u32(s, static_cast<std::uint32_t>(values.size()));
    for (int v : values) detail::put_u32(s, static_cast<std::uint32_t>(v));
    return s;
}

std::string u32_payload(int v) {
    std::string s;
    detail::put_u32(s, static_cast<std::uint32_t>(v));
    return s;
}

std::vector<int> read_int_list(detail::ByteReader& r) {
    const std::uint32_t n = r.u32();
    if (n > r.remaining() / 4) throw FormatError("checkpoint: bad channel list length");
    std::vector<int> out(n);
    for (int& v : out) v = static_cast<int>(r.u32());
    return out;
}

}  // namespace

void save_checkpoint(const DubNetParams& params, const std::filesystem::path& path) {
    validate_params(params);
    std::string bytes = "DUBN";
    detail::put_u32(bytes, kCheckpointVersion);
    detail::put_u32(bytes, 6);
    const ArchConfig& a = params.arch;
    put_field(bytes, kFrontChannels, int_list(a.front_channels));
    put_field(bytes, kBackChannels, int_list(a.back_channels));
    put_field(bytes, kDilation, u32_payload(a.dilation));
    put_field(bytes, kHeads, u32_payload(a.heads));
    std::string std_payload;
    detail::put_f64(std_payload, a.init_std);
    put_field(bytes, kInitStd, std_payload);
    put_field(bytes, kKernelSize, u32_payload(a.kernel_size));

    const std::vector<const Tensor*> tensors = params.tensors();
    detail::put_u32(bytes, static_cast<std::uint32_t>(tensors.size()));
    for (const Tensor* t : tensors) {
        detail::put_u32(bytes, static_cast<std::uint32_t>(t->rank()));
        for (std::size_t d : t->shape()) detail::put_u32(bytes, static_cast<std::uint32_t>(d));
        for (double v : t->data()) detail::put_f64(bytes, v);
    }
    detail::write_file(path, bytes);
}

DubNetParams load_checkpoint(const std::filesystem::path& path) {
    detail::ByteReader r(detail::read_file(path));
    if (r.raw(4) != "DUBN") throw FormatError(path.string() + ": bad checkpoint magic");
    const std::uint32_t version = r.u32();
    if (version != kCheckpointVersion) {
        throw UnsupportedVersionError(path.string() + ": unsupported checkpoint version " + std::to_string(version));
    }
    ArchConfig arch;
    const std::uint32_t fields = r.u32();
    for (std::uint32_t i = 0; i < fields; ++i) {
        const std::uint32_t tag = r.u32();
        const std::uint32_t len = r.u32();
        detail::ByteReader field(r.raw(len));
        switch (tag) {
            case kFrontChannels: arch.front_channels = read_int_list(field); break;
            case kBackChannels: arch.back_channels = read_int_list(field); break;
            case kDilation: arch.dilation = static_cast<int>(field.u32()); break;
            case kHeads: arch.heads = static_cast<int>(field.u32()); break;
            case kInitStd: arch.init_std = field.f64(); break;
            case kKernelSize: arch.kernel_size = static_cast<int>(field.u32()); break;
            default: continue;
        }
        if (!field.at_end()) throw FormatError(path.string() + ": malformed arch field " + std::to_string(tag));
    }
    DubNetParams params;
    try {
        params = empty_params(arch);
    } catch (const std::invalid_argument& e) {
        throw FormatError(path.string() + ": invalid arch: " + e.what());
    }
    std::vector<Tensor*> tensors = params.tensors();
    if (r.u32() != tensors.size()) throw FormatError(path.string() + ": tensor count does not match arch");
    for (Tensor* t : tensors) {
        const std::uint32_t rank = r.u32();
        Shape shape(rank);
        for (std::size_t& d : shape) d = r.u32();
        if (shape != t->shape()) {
            throw FormatError(path.string() + ": tensor shape " + shape_string(shape) + " does not match arch " +
                              shape_string(t->shape()));
        }
        for (double& v : t->data()) v = r.f64();
    }
    if (!r.at_end()) throw FormatError(path.string() + ": trailing bytes after checkpoint");
    return params;
}

}  // namespace dub
