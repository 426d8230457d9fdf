#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>

#include "dub/density_gt.hpp"
#include "dub/io.hpp"
#include "dub/uncertainty.hpp"

namespace dub {

namespace {

Tensor crop(const Tensor& image, const Rect& r) {
    Tensor out(Shape{1, r.height, r.width});
    for (std::size_t y = 0; y < r.height; ++y) {
        for (std::size_t x = 0; x < r.width; ++x) out.at(0, y, x) = image.at(0, r.row + y, r.col + x);
    }
    return out;
}

struct Selection {
    std::vector<PartitionTile> tiles;
    double variance = 0.0;
};

class Partitioner {
public:
    Partitioner(const Tensor& image, const TileEvaluator& evaluate, const PartitionConfig& cfg,
                std::size_t tile_h, std::size_t tile_w)
        : image_(image), evaluate_(evaluate), cfg_(cfg), tile_h_(tile_h), tile_w_(tile_w) {}

    std::optional<Selection> decide(const Rect& region, std::size_t level) const {
        const TileEstimate est = estimate(region);
        const bool keep_ok = level == 0 || est.count_mean >= cfg_.threshold;

        std::optional<Selection> refined;
        if (level + 1 < cfg_.levels.size()) {
            const auto ratio = static_cast<std::size_t>(cfg_.levels[level + 1] / cfg_.levels[level]);
            const std::size_t ch = region.height / ratio, cw = region.width / ratio;
            Selection merged;
            bool ok = true;
            for (std::size_t i = 0; i < ratio && ok; ++i) {
                for (std::size_t j = 0; j < ratio && ok; ++j) {
                    auto child = decide(Rect{region.row + i * ch, region.col + j * cw, ch, cw}, level + 1);
                    if (!child) {
                        ok = false;
                        break;
                    }
                    merged.variance += child->variance;
                    merged.tiles.insert(merged.tiles.end(), child->tiles.begin(), child->tiles.end());
                }
            }
            if (ok) refined = std::move(merged);
        }

        if (keep_ok && (!refined || est.count_std * est.count_std < refined->variance)) {
            Selection whole;
            whole.variance = est.count_std * est.count_std;
            whole.tiles.push_back(PartitionTile{region, cfg_.levels[level], est.count_mean, est.count_std, {}});
            return whole;
        }
        return refined;
    }

private:
    TileEstimate estimate(const Rect& region) const {
        Tensor tile = crop(image_, region);
        const std::size_t factor = region.height / tile_h_;
        if (factor > 1) tile = downsample_blockmean(tile, factor);
        return evaluate_(tile);
    }

    const Tensor& image_;
    const TileEvaluator& evaluate_;
    const PartitionConfig& cfg_;
    std::size_t tile_h_, tile_w_;
};

}  // namespace

PartitionReport adaptive_partition(const Tensor& image, const TileEvaluator& evaluate, const PartitionConfig& cfg,
                                   const RecalibrationMap* recal) {
    if (image.rank() != 3 || image.dim(0) != 1) {
        throw std::invalid_argument("adaptive_partition: image must be [1,H,W], got " + shape_string(image.shape()));
    }
    if (cfg.levels.empty()) throw std::invalid_argument("adaptive_partition: no zoom levels");
    for (std::size_t i = 0; i < cfg.levels.size(); ++i) {
        const int l = cfg.levels[i];
        if (l < 1 || (l & (l - 1)) != 0 || (i > 0 && l <= cfg.levels[i - 1])) {
            throw std::invalid_argument("adaptive_partition: zoom levels must be increasing powers of two");
        }
    }
    const auto finest = static_cast<std::size_t>(cfg.levels.back());
    const auto coarsest = static_cast<std::size_t>(cfg.levels.front());
    const std::size_t h = image.dim(1), w = image.dim(2);
    if (h % finest != 0 || w % finest != 0) {
        throw std::invalid_argument("adaptive_partition: image " + shape_string(image.shape()) +
                                    " not divisible into " + std::to_string(finest) + "x" + std::to_string(finest) +
                                    " tiles");
    }

    const Partitioner partitioner(image, evaluate, cfg, h / finest, w / finest);
    PartitionReport report;
    const std::size_t rh = h / coarsest, rw = w / coarsest;
    for (std::size_t i = 0; i < coarsest; ++i) {
        for (std::size_t j = 0; j < coarsest; ++j) {
            auto sel = partitioner.decide(Rect{i * rh, j * rw, rh, rw}, 0);
            report.tiles.insert(report.tiles.end(), sel->tiles.begin(), sel->tiles.end());
        }
    }

    double variance = 0.0;
    for (PartitionTile& t : report.tiles) {
        t.interval = count_interval(t.count_mean, t.count_std, recal, cfg.coverage);
        report.total_count += t.count_mean;
        variance += t.count_std * t.count_std;
    }
    report.total_std = std::sqrt(variance);
    report.total_interval = count_interval(report.total_count, report.total_std, recal, cfg.coverage);
    return report;
}

PartitionReport adaptive_partition(const DubNetParams& params, const Tensor& image, const PartitionConfig& cfg,
                                   const RecalibrationMap* recal) {
    const TileEvaluator evaluate = [&params](const Tensor& tile) {
        const PredictiveSummary s = decompose(params, tile);
        return TileEstimate{s.count_mean, s.count_std};
    };
    return adaptive_partition(image, evaluate, cfg, recal);
}

void write_partition_report(const std::filesystem::path& path, const PartitionReport& report, std::size_t height,
                            std::size_t width) {
    using detail::format_double;
    std::string text = "tile,row,col,height,width,zoom,count_mean,count_std,lo,hi\n";
    for (std::size_t i = 0; i < report.tiles.size(); ++i) {
        const PartitionTile& t = report.tiles[i];
        text += std::to_string(i) + "," + std::to_string(t.region.row) + "," + std::to_string(t.region.col) + "," +
                std::to_string(t.region.height) + "," + std::to_string(t.region.width) + "," +
                std::to_string(t.zoom) + "," + format_double(t.count_mean) + "," + format_double(t.count_std) + "," +
                format_double(t.interval.lo) + "," + format_double(t.interval.hi) + "\n";
    }
    text += "total,0,0," + std::to_string(height) + "," + std::to_string(width) + ",," +
            format_double(report.total_count) + "," + format_double(report.total_std) + "," +
            format_double(report.total_interval.lo) + "," + format_double(report.total_interval.hi) + "\n";
    detail::write_file(path, text);
}

}  // namespace dub
