#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "dub/autodiff.hpp"
#include "dub/density_gt.hpp"
#include "dub/dubnet.hpp"

namespace dub {

/// Ablation variants. base: plain MSE, one head. aleatoric_only: heteroscedastic NLL
/// with one head. epistemic_only: fixed-variance NLL with K heads.
/// combined: heteroscedastic NLL with K heads.
enum class Variant { base, aleatoric_only, epistemic_only, combined };

std::string variant_name(Variant v);
/// Accepts "base", "aleatoric", "aleatoric_only", "epistemic",
/// "epistemic_only", "combined".
Variant parse_variant(const std::string& name);
bool uses_predicted_variance(Variant v);
bool uses_all_heads(Variant v);

enum class HeadSampling {
    per_image,          // head drawn uniformly per image, every image every epoch
    resampled_datasets  // each head owns a with-replacement resample of the data
};

struct TrainConfig {
    int epochs = 40;
    double learning_rate = 1e-3;
    std::uint64_t seed = 0;
    Variant variant = Variant::combined;
    double fixed_sigma2 = 1.0;
    HeadSampling sampling = HeadSampling::per_image;

    void validate() const;
};

struct LossRecord {
    int epoch = 0;
    double mean_loss = 0.0;
    std::vector<std::size_t> head_histogram;
};

struct TrainingExample {
    DotAnnotatedImage image;
    DensityMap target;  // at the trunk's output resolution
};

struct TrainResult {
    DubNetParams params;
    std::vector<LossRecord> history;
};

// Graph-level losses.
Var heteroscedastic_loss(Graph& g, Var density, Var logvar, Var target);
Var homoscedastic_loss(Graph& g, Var density, Var target, double sigma2);
Var mse_loss(Graph& g, Var density, Var target);

/// (1/D) sum_i [ ½ exp(-ŝ_i) (y_i - ŷ_i)² + ½ ŝ_i ]
double loss_heteroscedastic(const HeadOutput& pred, const DensityMap& target);
/// (1/D) sum_i (y_i - ŷ_i)² / (2σ²) + ½ log σ²
double loss_homoscedastic(const Tensor& density, const DensityMap& target, double sigma2);

/// Architecture actually trained for a variant (K forced to 1 for the
/// single-network variants).
ArchConfig effective_arch(const ArchConfig& arch, Variant variant);

/// Pins the log-variance head to the constant log(sigma2).
void fix_logvar_head(DubNetParams& params, double sigma2);

/// Parameters train() starts from: init_params under the "init" sub-seed,
/// with the log-variance head pinned for fixed-variance variants.
DubNetParams initial_params(const ArchConfig& arch, const TrainConfig& cfg);

using EpochCallback = std::function<void(const LossRecord&)>;

/// Single-image Adam updates. For each image a head k is drawn uniformly;
/// only the trunk, head k and (for heteroscedastic variants) the
/// log-variance head are updated.
TrainResult train(const std::vector<TrainingExample>& dataset, const ArchConfig& arch, const TrainConfig& cfg,
                  const EpochCallback& on_epoch = {});

/// CSV: epoch,mean_loss,head_0,...,head_{K-1}
void write_loss_log(const std::filesystem::path& path, const std::vector<LossRecord>& history);

}  // namespace dub
