#pragma once

#include <filesystem>
#include <string>

#include "dub/density_gt.hpp"
#include "dub/dubnet.hpp"
#include "dub/synth_eval.hpp"
#include "dub/trainer.hpp"

namespace dub {

/// Everything the command-line pipeline can be configured with.
///
/// INI schema (every key optional, defaults shown by `dubcount config`):
///
///   [arch]    front_channels = 8,16   back_channels = 16,16   dilation
///             heads   init_std   kernel_size
///   [train]   epochs   learning_rate   variant   fixed_sigma2
///             sampling = per_image | resampled_datasets
///   [scene]   height width count_min count_max blob_sigma blob_amplitude
///             background_level background_noise_std glare_probability
///             glare_strength glare_min_size glare_max_size min_center_distance
///   [kernel]  beta k sigma_floor sigma_default truncate
///   [data]    train val test          (split sizes)
///
/// Unknown sections or keys are rejected.
struct PipelineConfig {
    ArchConfig arch;
    TrainConfig train;
    SceneConfig scene;
    KernelConfig kernel;
    SplitSizes sizes;
};

/// Applies the file's values on top of `base`.
PipelineConfig load_config(const std::filesystem::path& path, PipelineConfig base = {});
PipelineConfig parse_config(const std::string& text, PipelineConfig base = {});

/// The configuration in the same INI format, every key written out.
std::string format_config(const PipelineConfig& cfg);

}  // namespace dub
