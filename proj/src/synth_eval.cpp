#include "dub/synth_eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <stdexcept>

#include "dub/io.hpp"
#include "dub/random.hpp"

namespace dub {

void SceneConfig::validate() const {
    if (height == 0 || width == 0) throw std::invalid_argument("scene: empty image size");
    if (count_min < 0 || count_max < count_min) throw std::invalid_argument("scene: need 0 <= count_min <= count_max");
    if (!(blob_sigma > 0.0)) throw std::invalid_argument("scene: blob_sigma must be > 0");
    if (background_noise_std < 0.0) throw std::invalid_argument("scene: background_noise_std must be >= 0");
    if (!(glare_probability >= 0.0 && glare_probability <= 1.0)) {
        throw std::invalid_argument("scene: glare_probability must lie in [0,1]");
    }
    if (glare_min_size == 0 || glare_max_size < glare_min_size) {
        throw std::invalid_argument("scene: need 1 <= glare_min_size <= glare_max_size");
    }
    if (min_center_distance < 0.0) throw std::invalid_argument("scene: min_center_distance must be >= 0");
    const double cell = std::max(min_center_distance, 1.0);
    const double capacity = static_cast<double>(height * width) / (cell * cell);
    if (static_cast<double>(count_max) > capacity) {
        throw std::invalid_argument("scene: count_max " + std::to_string(count_max) + " cannot fit in a " +
                                    std::to_string(height) + "x" + std::to_string(width) + " image");
    }
}

Scene generate_scene_with_glare(const SceneConfig& cfg, std::uint64_t seed, std::string id) {
    cfg.validate();
    std::mt19937_64 rng(seed);
    const double h = static_cast<double>(cfg.height);
    const double w = static_cast<double>(cfg.width);

    Scene scene;
    scene.image.id = std::move(id);
    const int count = std::uniform_int_distribution<int>(cfg.count_min, cfg.count_max)(rng);
    std::uniform_real_distribution<double> urow(0.0, h), ucol(0.0, w);
    const double min_d2 = cfg.min_center_distance * cfg.min_center_distance;
    auto& points = scene.image.points;
    for (int n = 0; n < count; ++n) {
        bool placed = false;
        for (int attempt = 0; attempt < 10000 && !placed; ++attempt) {
            const Point p{urow(rng), ucol(rng)};
            placed = std::none_of(points.begin(), points.end(), [&](const Point& q) {
                const double dr = p.row - q.row, dc = p.col - q.col;
                return dr * dr + dc * dc < min_d2;
            });
            if (placed) points.push_back(p);
        }
        if (!placed) throw std::invalid_argument("scene: could not place " + std::to_string(count) + " points");
    }

    Tensor px(Shape{1, cfg.height, cfg.width});
    std::normal_distribution<double> noise(0.0, 1.0);
    for (double& v : px.data()) v = cfg.background_level + cfg.background_noise_std * noise(rng);

    const double radius = std::ceil(4.0 * cfg.blob_sigma);
    const double inv2s2 = 1.0 / (2.0 * cfg.blob_sigma * cfg.blob_sigma);
    for (const Point& p : points) {
        const long r0 = std::max(0L, static_cast<long>(p.row - radius));
        const long r1 = std::min(static_cast<long>(cfg.height), static_cast<long>(p.row + radius) + 1);
        const long c0 = std::max(0L, static_cast<long>(p.col - radius));
        const long c1 = std::min(static_cast<long>(cfg.width), static_cast<long>(p.col + radius) + 1);
        for (long r = r0; r < r1; ++r) {
            for (long c = c0; c < c1; ++c) {
                const double dy = static_cast<double>(r) + 0.5 - p.row;
                const double dx = static_cast<double>(c) + 0.5 - p.col;
                px.at(0, static_cast<std::size_t>(r), static_cast<std::size_t>(c)) +=
                    cfg.blob_amplitude * std::exp(-(dy * dy + dx * dx) * inv2s2);
            }
        }
    }

    if (std::uniform_real_distribution<double>(0.0, 1.0)(rng) < cfg.glare_probability) {
        std::uniform_int_distribution<std::size_t> size(cfg.glare_min_size, cfg.glare_max_size);
        const std::size_t gh = std::min(size(rng), cfg.height);
        const std::size_t gw = std::min(size(rng), cfg.width);
        const std::size_t gr = std::uniform_int_distribution<std::size_t>(0, cfg.height - gh)(rng);
        const std::size_t gc = std::uniform_int_distribution<std::size_t>(0, cfg.width - gw)(rng);
        std::uniform_real_distribution<double> flicker(0.5, 1.5);
        for (std::size_t r = gr; r < gr + gh; ++r) {
            for (std::size_t c = gc; c < gc + gw; ++c) px.at(0, r, c) += cfg.glare_strength * flicker(rng);
        }
        scene.glare.push_back(Rect{gr, gc, gh, gw});
    }

    for (double& v : px.data()) v = std::clamp(v, 0.0, 1.0);
    scene.image.pixels = std::move(px);
    return scene;
}

DotAnnotatedImage generate_scene(const SceneConfig& cfg, std::uint64_t seed, std::string id) {
    return generate_scene_with_glare(cfg, seed, std::move(id)).image;
}

std::string split_name(Split s) {
    switch (s) {
        case Split::train: return "train";
        case Split::val: return "val";
        case Split::test: return "test";
    }
    return "unknown";
}

Split parse_split(const std::string& name) {
    if (name == "train") return Split::train;
    if (name == "val") return Split::val;
    if (name == "test") return Split::test;
    throw std::invalid_argument("unknown split '" + name + "'");
}

std::vector<DotAnnotatedImage> SyntheticDataset::subset(Split s) const {
    std::vector<DotAnnotatedImage> out;
    for (std::size_t i = 0; i < images.size(); ++i) {
        if (splits[i] == s) out.push_back(images[i]);
    }
    return out;
}

SyntheticDataset generate_dataset(const SceneConfig& cfg, const SplitSizes& sizes, std::uint64_t seed) {
    SyntheticDataset data;
    const std::size_t total = sizes.train + sizes.val + sizes.test;
    data.images.reserve(total);
    for (std::size_t i = 0; i < total; ++i) {
        char id[32];
        std::snprintf(id, sizeof(id), "img_%05zu", i);
        data.images.push_back(generate_scene(cfg, derive_seed(seed, "scene", i), id));
        data.splits.push_back(i < sizes.train ? Split::train : i < sizes.train + sizes.val ? Split::val : Split::test);
    }
    return data;
}

void write_dataset(const std::filesystem::path& dir, const SyntheticDataset& data) {
    std::filesystem::create_directories(dir / "images");
    std::vector<std::pair<std::string, std::vector<Point>>> annotations;
    std::string split_csv = "id,split\n";
    for (std::size_t i = 0; i < data.images.size(); ++i) {
        const DotAnnotatedImage& img = data.images[i];
        write_pgm(dir / "images" / (img.id + ".pgm"), img.pixels);
        annotations.emplace_back(img.id, img.points);
        split_csv += img.id + "," + split_name(data.splits[i]) + "\n";
    }
    write_annotations(dir / "annotations.csv", annotations);
    detail::write_file(dir / "split.csv", split_csv);
}

SyntheticDataset read_dataset(const std::filesystem::path& dir) {
    const auto annotations = read_annotations(dir / "annotations.csv");
    std::ifstream in(dir / "split.csv");
    if (!in) throw std::runtime_error("cannot open " + (dir / "split.csv").string());
    std::string line;
    if (!std::getline(in, line) || detail::split_csv_line(line) != std::vector<std::string>{"id", "split"}) {
        throw FormatError((dir / "split.csv").string() + ": expected header id,split");
    }
    SyntheticDataset data;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto f = detail::split_csv_line(line);
        if (f.size() != 2) throw FormatError((dir / "split.csv").string() + ": expected 2 fields per row");
        DotAnnotatedImage img;
        img.id = f[0];
        img.pixels = read_pgm(dir / "images" / (f[0] + ".pgm"));
        if (auto it = annotations.find(f[0]); it != annotations.end()) img.points = it->second;
        validate_image(img);
        data.images.push_back(std::move(img));
        data.splits.push_back(parse_split(f[1]));
    }
    return data;
}

std::vector<TrainingExample> make_examples(std::span<const DotAnnotatedImage> images, const KernelConfig& kernel,
                                           std::size_t downsample_factor) {
    std::vector<TrainingExample> out;
    out.reserve(images.size());
    for (const DotAnnotatedImage& img : images) {
        const DensityMap full = render_density(img.height(), img.width(), img.points, kernel);
        out.push_back(TrainingExample{img, downsample_blocksum(full, downsample_factor)});
    }
    return out;
}

MetricsReport metrics(std::span<const double> pred_counts, std::span<const double> gt_counts) {
    if (pred_counts.size() != gt_counts.size()) throw std::invalid_argument("metrics: length mismatch");
    if (pred_counts.empty()) throw std::invalid_argument("metrics: empty input");
    MetricsReport r;
    r.n = pred_counts.size();
    double abs_sum = 0.0, sq_sum = 0.0;
    for (std::size_t i = 0; i < r.n; ++i) {
        const double e = pred_counts[i] - gt_counts[i];
        abs_sum += std::abs(e);
        sq_sum += e * e;
    }
    r.mae = abs_sum / static_cast<double>(r.n);
    r.rmse = std::sqrt(sq_sum / static_cast<double>(r.n));
    return r;
}

double coverage(std::span<const Interval> intervals, std::span<const double> gt_counts) {
    if (intervals.size() != gt_counts.size()) throw std::invalid_argument("coverage: length mismatch");
    if (intervals.empty()) throw std::invalid_argument("coverage: empty input");
    std::size_t inside = 0;
    for (std::size_t i = 0; i < intervals.size(); ++i) {
        if (intervals[i].lo <= gt_counts[i] && gt_counts[i] <= intervals[i].hi) ++inside;
    }
    return static_cast<double>(inside) / static_cast<double>(intervals.size());
}

void write_metrics(const std::filesystem::path& path, const MetricsReport& report) {
    std::string header = "n,mae,rmse";
    std::string row = std::to_string(report.n) + "," + detail::format_double(report.mae) + "," +
                      detail::format_double(report.rmse);
    for (const auto& [level, frac] : report.coverage_at) {
        header += ",coverage_" + detail::format_double(level);
        row += "," + detail::format_double(frac);
    }
    detail::write_file(path, header + "\n" + row + "\n");
}

std::vector<PredictionRow> predict_images(const DubNetParams& params, std::span<const DotAnnotatedImage> images,
                                          const RecalibrationMap* recal, double coverage_level) {
    std::vector<PredictionRow> rows;
    rows.reserve(images.size());
    for (const DotAnnotatedImage& img : images) {
        const PredictiveSummary s = decompose(params, img.pixels);
        rows.push_back(PredictionRow{img.id, s.count_mean, s.count_std, count_interval(s, recal, coverage_level)});
    }
    return rows;
}

std::vector<ResidualRecord> residual_records(const DubNetParams& params, std::span<const DotAnnotatedImage> images) {
    std::vector<ResidualRecord> out;
    out.reserve(images.size());
    for (const DotAnnotatedImage& img : images) {
        const PredictiveSummary s = decompose(params, img.pixels);
        out.push_back(ResidualRecord{img.count(), s.count_mean, s.count_std});
    }
    return out;
}

std::vector<AblationRow> ablation_run(const ArchConfig& arch, const SceneConfig& scene,
                                      std::span<const std::uint64_t> seeds, const AblationConfig& cfg) {
    if (seeds.empty()) throw std::invalid_argument("ablation_run: need at least one seed");
    std::vector<AblationRow> rows;
    for (std::uint64_t seed : seeds) {
        const SyntheticDataset data = generate_dataset(scene, cfg.sizes, derive_seed(seed, "data"));
        const std::vector<DotAnnotatedImage> train_images = data.subset(Split::train);
        const std::vector<DotAnnotatedImage> test_images = data.subset(Split::test);
        const std::vector<TrainingExample> examples = make_examples(train_images, cfg.kernel, arch.downsample_factor());
        std::vector<double> gt;
        for (const DotAnnotatedImage& img : test_images) gt.push_back(img.count());

        for (Variant variant : kAllVariants) {
            TrainConfig tc = cfg.train;
            tc.variant = variant;
            tc.seed = derive_seed(seed, "train");
            const TrainResult trained = train(examples, arch, tc);
            std::vector<double> pred;
            for (const PredictionRow& r : predict_images(trained.params, test_images, nullptr, 0.9)) {
                pred.push_back(r.count_mean);
            }
            const MetricsReport m = metrics(pred, gt);
            rows.push_back(AblationRow{seed, variant, m.mae, m.rmse});
        }
    }
    return rows;
}

void write_ablation(const std::filesystem::path& path, const std::vector<AblationRow>& rows) {
    std::string text = "seed,variant,mae,rmse\n";
    for (const AblationRow& r : rows) {
        text += std::to_string(r.seed) + "," + variant_name(r.variant) + "," + detail::format_double(r.mae) + "," +
                detail::format_double(r.rmse) + "\n";
    }
    detail::write_file(path, text);
}

}  // namespace dub
