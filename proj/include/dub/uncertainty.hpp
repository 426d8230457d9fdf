#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "dub/dubnet.hpp"
#include "dub/recalib.hpp"
#include "dub/tensor.hpp"

namespace dub {

struct PredictiveSummary {
    Tensor mean_map;       // E(y) per pixel
    Tensor epistemic_map;  // head-disagreement variance per pixel, >= 0
    Tensor aleatoric_map;  // exp(ŝ) per pixel, > 0
    double count_mean = 0.0;
    double count_std = 0.0;
};

/// Pixel-wise decomposition of already computed head outputs.
PredictiveSummary decompose(const EnsembleOutput& outputs);
PredictiveSummary decompose(const DubNetParams& params, const Tensor& image);

struct Interval {
    double lo = 0.0;
    double hi = 0.0;
};

/// Two-sided interval of coverage p around the count: C̄ + σ̄ Z^((1-p)/2)
/// and C̄ + σ̄ Z^((1+p)/2), with Z from the recalibration map when given and
/// standard normal quantiles otherwise.
Interval count_interval(double count_mean, double count_std, const RecalibrationMap* recal, double p);
Interval count_interval(const PredictiveSummary& summary, const RecalibrationMap* recal, double p);

/// Standard normal quantile.
double normal_quantile(double p);

// Per-image prediction report.
struct PredictionRow {
    std::string id;
    double count_mean = 0.0;
    double count_std = 0.0;
    Interval interval;
};

/// First line is `# intervals=<calibrated|uncalibrated> coverage=<p>`,
/// then `id,count_mean,count_std,lo,hi`.
void write_predictions(const std::filesystem::path& path, const std::vector<PredictionRow>& rows, bool calibrated,
                       double coverage);

struct PredictionReport {
    bool calibrated = false;
    double coverage = 0.0;
    std::vector<PredictionRow> rows;
};
PredictionReport read_predictions(const std::filesystem::path& path);

/// `<id>_mean.pgm`, `<id>_epistemic.pgm`, `<id>_aleatoric.pgm` with values
/// mapped affinely onto 0..255, and `<id>_heatmaps.txt` holding the
/// `map,min,max` of each mapping.
void write_heatmaps(const std::filesystem::path& dir, const std::string& id, const PredictiveSummary& summary);

// Adaptive zoom partition of a large image.

struct Rect {
    std::size_t row = 0;
    std::size_t col = 0;
    std::size_t height = 0;
    std::size_t width = 0;
    friend bool operator==(const Rect&, const Rect&) = default;
};

struct TileEstimate {
    double count_mean = 0.0;
    double count_std = 0.0;
};

/// Counts objects in an image already rescaled to the model input size.
using TileEvaluator = std::function<TileEstimate(const Tensor& image)>;

struct PartitionConfig {
    double threshold = 20.0;
    /// Subdivisions per side at each zoom level, coarsest first: increasing
    /// powers of two.
    std::vector<int> levels{1, 2, 4};
    double coverage = 0.90;
};

struct PartitionTile {
    Rect region;
    int zoom = 1;  // entry of PartitionConfig::levels the tile was kept at
    double count_mean = 0.0;
    double count_std = 0.0;
    Interval interval;
};

struct PartitionReport {
    std::vector<PartitionTile> tiles;
    double total_count = 0.0;
    double total_std = 0.0;
    Interval total_interval;
};

/// Quadtree refinement from the coarsest level. Every region is evaluated at
/// each level by block-mean rescaling it to the finest tile size. A region
/// may be kept whole when its predicted count reaches the threshold (always,
/// at the root); between keeping it and the best admissible refinement, the
/// option with the lower summed predictive variance wins, ties going to the
/// finer tiling.
PartitionReport adaptive_partition(const Tensor& image, const TileEvaluator& evaluate, const PartitionConfig& cfg,
                                   const RecalibrationMap* recal = nullptr);
PartitionReport adaptive_partition(const DubNetParams& params, const Tensor& image, const PartitionConfig& cfg,
                                   const RecalibrationMap* recal = nullptr);

/// `tile,row,col,height,width,zoom,count_mean,count_std,lo,hi`, one row per
/// tile and a final `total` row.
void write_partition_report(const std::filesystem::path& path, const PartitionReport& report, std::size_t height,
                            std::size_t width);

}  // namespace dub
