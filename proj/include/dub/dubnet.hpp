#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "dub/autodiff.hpp"
#include "dub/tensor.hpp"

namespace dub {

inline constexpr double kLogvarMin = -10.0;
inline constexpr double kLogvarMax = 10.0;

struct ArchConfig {
    std::vector<int> front_channels{8, 16};
    std::vector<int> back_channels{16, 16};
    int dilation = 2;
    int heads = 10;
    double init_std = 0.01;
    int kernel_size = 3;

    /// 2^(number of pooling layers); one pool follows each front conv.
    std::size_t downsample_factor() const { return std::size_t{1} << front_channels.size(); }
    void validate() const;

    friend bool operator==(const ArchConfig&, const ArchConfig&) = default;
};

struct ConvLayer {
    Tensor weight;  // [C_out, C_in, k, k]
    Tensor bias;    // [C_out]
    friend bool operator==(const ConvLayer&, const ConvLayer&) = default;
};

struct DubNetParams {
    ArchConfig arch;
    std::vector<ConvLayer> trunk;  // front convs, then dilated back convs
    std::vector<ConvLayer> heads;  // K density heads, 1x1
    ConvLayer logvar;              // shared log-variance head, 1x1

    /// Every tensor in checkpoint order: trunk (weight, bias)..., heads
    /// (weight, bias)..., logvar weight, logvar bias.
    std::vector<Tensor*> tensors();
    std::vector<const Tensor*> tensors() const;

    std::size_t trunk_slot(std::size_t layer) const { return 2 * layer; }
    std::size_t head_slot(std::size_t head) const { return 2 * (trunk.size() + head); }
    std::size_t logvar_slot() const { return 2 * (trunk.size() + heads.size()); }

    friend bool operator==(const DubNetParams&, const DubNetParams&) = default;
};

/// ŷ (softplus, non-negative) and ŝ = log σ² (clamped to [-10, 10]),
/// both [1, H/f, W/f] for downsample factor f.
struct HeadOutput {
    Tensor density;
    Tensor logvar;
};

struct EnsembleOutput {
    std::vector<Tensor> densities;
    Tensor logvar;
};

/// Gaussian(0, init_std²) weights, zero biases; deterministic in `seed`.
DubNetParams init_params(const ArchConfig& arch, std::uint64_t seed);

/// Throws std::invalid_argument if the tensors do not match `params.arch`.
void validate_params(const DubNetParams& params);

/// `head` is zero-based.
HeadOutput forward_head(const DubNetParams& params, const Tensor& image, std::size_t head);

/// Trunk evaluated once; every head applied to the shared features.
EnsembleOutput forward_all(const DubNetParams& params, const Tensor& image);

// Graph-level building blocks, shared by inference and training.
struct ConvVars {
    Var weight;
    Var bias;
};

Var trunk_forward(Graph& g, const ArchConfig& arch, std::span<const ConvVars> trunk, Var image);
Var density_head_forward(Graph& g, const ConvVars& head, Var features);
Var logvar_head_forward(Graph& g, const ConvVars& head, Var features);

/// Checkpoint layout (all little-endian):
///   "DUBN", u32 version = 1,
///   u32 field_count, then per field: u32 tag, u32 payload_bytes, payload
///     tag 1 front_channels  u32 n, n x u32
///     tag 2 back_channels   u32 n, n x u32
///     tag 3 dilation        u32
///     tag 4 heads (K)       u32
///     tag 5 init_std        f64
///     tag 6 kernel_size     u32
///   u32 tensor_count, then per tensor in DubNetParams::tensors() order:
///     u32 rank, rank x u32 dims, f64 data
/// Unknown field tags are skipped.
void save_checkpoint(const DubNetParams& params, const std::filesystem::path& path);
DubNetParams load_checkpoint(const std::filesystem::path& path);

}  // namespace dub
