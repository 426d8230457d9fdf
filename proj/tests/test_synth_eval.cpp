#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <random>
#include <set>

#include "dub/io.hpp"
#include "dub/synth_eval.hpp"

using namespace dub;

namespace {

SceneConfig small_scene() {
    SceneConfig sc;
    sc.height = sc.width = 32;
    sc.count_min = 3;
    sc.count_max = 15;
    sc.glare_min_size = 6;
    sc.glare_max_size = 14;
    return sc;
}

struct Moments {
    double sum = 0.0, sq = 0.0;
    std::size_t n = 0;
    void add(double v) {
        sum += v;
        sq += v * v;
        ++n;
    }
    double variance() const {
        const double m = sum / static_cast<double>(n);
        return sq / static_cast<double>(n) - m * m;
    }
};

}  // namespace

TEST_CASE("scenes are deterministic in the seed") {
    const SceneConfig sc;
    const DotAnnotatedImage a = generate_scene(sc, 42, "x");
    const DotAnnotatedImage b = generate_scene(sc, 42, "x");
    CHECK(a.pixels == b.pixels);
    CHECK(a.points == b.points);
    CHECK_FALSE(generate_scene(sc, 43, "x").pixels == a.pixels);
}

TEST_CASE("scene contents respect the configuration") {
    const SceneConfig sc;
    for (std::uint64_t seed = 0; seed < 200; ++seed) {
        const DotAnnotatedImage img = generate_scene(sc, seed);
        CHECK(img.pixels.shape() == Shape{1, 64, 64});
        CHECK(img.points.size() >= 5);
        CHECK(img.points.size() <= 60);
        const auto [lo, hi] = std::minmax_element(img.pixels.data().begin(), img.pixels.data().end());
        CHECK(*lo >= 0.0);
        CHECK(*hi <= 1.0);
        double closest = 1e300;
        for (std::size_t i = 0; i < img.points.size(); ++i) {
            for (std::size_t j = i + 1; j < img.points.size(); ++j) {
                const double dr = img.points[i].row - img.points[j].row, dc = img.points[i].col - img.points[j].col;
                closest = std::min(closest, std::hypot(dr, dc));
            }
        }
        CHECK(closest >= sc.min_center_distance);
        // Ground truth rendered from the annotations integrates to the count.
        const DensityMap gt = render_density(64, 64, img.points, KernelConfig{});
        CHECK(std::abs(gt.count() - static_cast<double>(img.points.size())) < 1e-6);
    }
}

TEST_CASE("glare regions are noisier than the rest of the image") {
    SceneConfig sc;
    sc.glare_probability = 1.0;
    double inside = 0.0, outside = 0.0;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        const Scene s = generate_scene_with_glare(sc, seed);
        REQUIRE_FALSE(s.glare.empty());
        Moments in, out;
        for (std::size_t y = 0; y < sc.height; ++y) {
            for (std::size_t x = 0; x < sc.width; ++x) {
                bool g = false;
                for (const Rect& r : s.glare) {
                    g = g || (y >= r.row && y < r.row + r.height && x >= r.col && x < r.col + r.width);
                }
                (g ? in : out).add(s.image.pixels.at(0, y, x));
            }
        }
        inside += in.variance();
        outside += out.variance();
    }
    CHECK(inside > outside);
}

TEST_CASE("scene config validation") {
    SceneConfig sc;
    sc.count_min = 10;
    sc.count_max = 5;
    CHECK_THROWS_AS(sc.validate(), std::invalid_argument);
    sc = SceneConfig{};
    sc.height = sc.width = 8;
    sc.count_min = sc.count_max = 500;
    CHECK_THROWS_AS(generate_scene(sc, 1), std::invalid_argument);
    sc = SceneConfig{};
    sc.glare_probability = 1.5;
    CHECK_THROWS_AS(sc.validate(), std::invalid_argument);
}

TEST_CASE("dataset splits are disjoint and complete") {
    const SyntheticDataset d = generate_dataset(small_scene(), SplitSizes{6, 3, 4}, 9);
    REQUIRE(d.images.size() == 13);
    std::set<std::string> ids;
    std::size_t total = 0;
    for (Split s : {Split::train, Split::val, Split::test}) {
        for (const auto& img : d.subset(s)) {
            CHECK(ids.insert(img.id).second);
            ++total;
        }
    }
    CHECK(total == 13);
    CHECK(d.subset(Split::val).size() == 3);
    CHECK(parse_split(split_name(Split::test)) == Split::test);
    CHECK_THROWS_AS(parse_split("holdout"), std::invalid_argument);
}

TEST_CASE("dataset directory round trip") {
    const auto dir = std::filesystem::temp_directory_path() / "dub_test_dataset";
    std::filesystem::remove_all(dir);
    const SyntheticDataset d = generate_dataset(small_scene(), SplitSizes{3, 1, 2}, 4);
    write_dataset(dir, d);
    const SyntheticDataset back = read_dataset(dir);
    REQUIRE(back.images.size() == d.images.size());
    CHECK(back.splits == d.splits);
    for (std::size_t i = 0; i < d.images.size(); ++i) {
        CHECK(back.images[i].id == d.images[i].id);
        CHECK(back.images[i].pixels == quantize_8bit(d.images[i].pixels));
        CHECK(back.images[i].points == d.images[i].points);
    }
    std::filesystem::remove_all(dir);
}

TEST_CASE("MAE and RMSE") {
    const std::vector<double> gt{10, 20};
    const auto perfect = metrics(gt, gt);
    CHECK(perfect.mae == 0.0);
    CHECK(perfect.rmse == 0.0);
    const auto sym = metrics(std::vector<double>{11, 19}, gt);
    CHECK(sym.mae == 1.0);
    CHECK(sym.rmse == 1.0);
    const auto skew = metrics(std::vector<double>{10, 22}, gt);
    CHECK(skew.mae == 1.0);
    CHECK(skew.rmse == doctest::Approx(std::sqrt(2.0)));
    CHECK(skew.n == 2);
    CHECK_THROWS_AS(metrics(std::vector<double>{1}, gt), std::invalid_argument);
    CHECK_THROWS_AS(metrics(std::vector<double>{}, std::vector<double>{}), std::invalid_argument);
}

TEST_CASE("RMSE never falls below MAE") {
    std::mt19937_64 rng(3);
    std::normal_distribution<double> n(0.0, 5.0);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<double> p(1 + trial % 17), g(p.size());
        for (std::size_t i = 0; i < p.size(); ++i) {
            p[i] = n(rng);
            g[i] = n(rng);
        }
        const auto m = metrics(p, g);
        CHECK(m.rmse >= m.mae * (1.0 - 1e-12));
        CHECK(m.mae >= 0.0);
    }
}

TEST_CASE("coverage fraction") {
    const std::vector<Interval> iv{{0, 2}, {5, 6}, {1, 1}, {-1, 0}};
    CHECK(coverage(iv, std::vector<double>{1, 5.5, 1, -0.5}) == 1.0);
    CHECK(coverage(iv, std::vector<double>{1, 7, 1.5, -0.5}) == 0.5);
    CHECK_THROWS_AS(coverage(iv, std::vector<double>{1}), std::invalid_argument);
}

TEST_CASE("metrics file") {
    const auto dir = std::filesystem::temp_directory_path() / "dub_test_metrics";
    MetricsReport r;
    r.n = 4;
    r.mae = 1.5;
    r.rmse = 2.0;
    r.coverage_at[0.9] = 0.75;
    write_metrics(dir / "m.csv", r);
    CHECK(detail::read_file(dir / "m.csv") == "n,mae,rmse,coverage_0.9\n4,1.5,2,0.75\n");
    std::filesystem::remove_all(dir);
}

TEST_CASE("ablation emits four rows per seed and is reproducible") {
    AblationConfig cfg;
    cfg.train.epochs = 1;
    cfg.sizes = SplitSizes{4, 0, 3};
    ArchConfig arch;
    arch.front_channels = {4, 4};
    arch.back_channels = {4};
    arch.heads = 3;
    const std::vector<std::uint64_t> seeds{1, 2};
    const auto rows = ablation_run(arch, small_scene(), seeds, cfg);
    REQUIRE(rows.size() == 8);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        CHECK(rows[i].seed == seeds[i / 4]);
        CHECK(rows[i].variant == kAllVariants[i % 4]);
        CHECK(rows[i].rmse >= rows[i].mae);
    }
    const auto again = ablation_run(arch, small_scene(), seeds, cfg);
    for (std::size_t i = 0; i < rows.size(); ++i) CHECK(again[i].mae == rows[i].mae);

    const auto dir = std::filesystem::temp_directory_path() / "dub_test_ablation";
    write_ablation(dir / "a.csv", rows);
    const std::string text = detail::read_file(dir / "a.csv");
    CHECK(text.rfind("seed,variant,mae,rmse\n1,base,", 0) == 0);
    std::filesystem::remove_all(dir);
}
