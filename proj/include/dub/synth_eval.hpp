#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "dub/density_gt.hpp"
#include "dub/dubnet.hpp"
#include "dub/recalib.hpp"
#include "dub/trainer.hpp"
#include "dub/uncertainty.hpp"

namespace dub {

/// Synthetic dot-annotated scenes: Gaussian blobs on a noisy background,
/// optionally washed out by a bright, noisy "glare" rectangle.
struct SceneConfig {
    std::size_t height = 64;
    std::size_t width = 64;
    int count_min = 5;
    int count_max = 60;
    double blob_sigma = 1.5;
    double blob_amplitude = 0.8;
    double background_level = 0.1;
    double background_noise_std = 0.03;
    double glare_probability = 0.2;
    double glare_strength = 0.6;
    std::size_t glare_min_size = 12;
    std::size_t glare_max_size = 32;
    /// Minimum distance between blob centres, in pixels.
    double min_center_distance = 1.5;

    void validate() const;
};

/// Glare rectangles are reported so tests can measure the noise they inject.
struct Scene {
    DotAnnotatedImage image;
    std::vector<Rect> glare;
};

Scene generate_scene_with_glare(const SceneConfig& cfg, std::uint64_t seed, std::string id = "scene");
DotAnnotatedImage generate_scene(const SceneConfig& cfg, std::uint64_t seed, std::string id = "scene");

enum class Split { train, val, test };
std::string split_name(Split s);
Split parse_split(const std::string& name);

struct SplitSizes {
    std::size_t train = 300;
    std::size_t val = 100;
    std::size_t test = 200;
};

struct SyntheticDataset {
    std::vector<DotAnnotatedImage> images;
    std::vector<Split> splits;

    std::vector<DotAnnotatedImage> subset(Split s) const;
};

/// Scene i is generated from derive_seed(seed, "scene", i); the first
/// `train` scenes form the training split, then validation, then test.
SyntheticDataset generate_dataset(const SceneConfig& cfg, const SplitSizes& sizes, std::uint64_t seed);

/// Dataset directory: images/<id>.pgm, annotations.csv, split.csv (id,split).
void write_dataset(const std::filesystem::path& dir, const SyntheticDataset& data);
SyntheticDataset read_dataset(const std::filesystem::path& dir);

/// Ground-truth density at the trunk output resolution for each image.
std::vector<TrainingExample> make_examples(std::span<const DotAnnotatedImage> images, const KernelConfig& kernel,
                                           std::size_t downsample_factor);

struct MetricsReport {
    std::size_t n = 0;
    double mae = 0.0;
    double rmse = 0.0;
    std::map<double, double> coverage_at;
};

MetricsReport metrics(std::span<const double> pred_counts, std::span<const double> gt_counts);
double coverage(std::span<const Interval> intervals, std::span<const double> gt_counts);

/// `n,mae,rmse,coverage_<p>...` header and one data row.
void write_metrics(const std::filesystem::path& path, const MetricsReport& report);

/// Predictive summaries for every image, reduced to report rows.
std::vector<PredictionRow> predict_images(const DubNetParams& params, std::span<const DotAnnotatedImage> images,
                                          const RecalibrationMap* recal, double coverage);

std::vector<ResidualRecord> residual_records(const DubNetParams& params, std::span<const DotAnnotatedImage> images);

struct AblationConfig {
    TrainConfig train;  // variant field is overridden per run
    SplitSizes sizes;
    KernelConfig kernel;
};

struct AblationRow {
    std::uint64_t seed = 0;
    Variant variant = Variant::base;
    double mae = 0.0;
    double rmse = 0.0;
};

inline constexpr Variant kAllVariants[] = {Variant::base, Variant::aleatoric_only, Variant::epistemic_only,
                                           Variant::combined};

/// For each seed: one dataset, all four variants trained with identical data
/// and budget, test MAE/RMSE of the ensemble-mean count. Training seeds are
/// shared across variants of the same seed.
std::vector<AblationRow> ablation_run(const ArchConfig& arch, const SceneConfig& scene,
                                      std::span<const std::uint64_t> seeds, const AblationConfig& cfg);

/// `seed,variant,mae,rmse`
void write_ablation(const std::filesystem::path& path, const std::vector<AblationRow>& rows);

}  // namespace dub
