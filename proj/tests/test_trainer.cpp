#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "dub/io.hpp"
#include "dub/synth_eval.hpp"
#include "dub/trainer.hpp"
#include "support/gradcheck.hpp"

using namespace dub;
using dub::testing::gradcheck;
using dub::testing::random_tensor;

namespace {

HeadOutput constant_pred(double y, double s, std::size_t h = 4, std::size_t w = 4) {
    return {Tensor(Shape{1, h, w}, y), Tensor(Shape{1, h, w}, s)};
}

DensityMap constant_target(double y, std::size_t h = 4, std::size_t w = 4) { return {Tensor(Shape{1, h, w}, y)}; }

ArchConfig tiny_arch(int heads) {
    ArchConfig a;
    a.front_channels = {4, 4};
    a.back_channels = {4};
    a.heads = heads;
    return a;
}

std::vector<TrainingExample> tiny_dataset(std::size_t n, std::size_t side, std::uint64_t seed) {
    SceneConfig sc;
    sc.height = sc.width = side;
    sc.count_min = 2;
    sc.count_max = 12;
    sc.glare_min_size = 4;
    sc.glare_max_size = side / 2;
    std::vector<DotAnnotatedImage> imgs;
    for (std::size_t i = 0; i < n; ++i) imgs.push_back(generate_scene(sc, seed + i, "t" + std::to_string(i)));
    return make_examples(imgs, KernelConfig{}, 4);
}

}  // namespace

TEST_CASE("heteroscedastic loss reference values") {
    CHECK(loss_heteroscedastic(constant_pred(0.7, 0.0), constant_target(0.7)) == doctest::Approx(0.0));
    CHECK(loss_heteroscedastic(constant_pred(1.0, 0.0), constant_target(0.0)) == doctest::Approx(0.5));
    CHECK(loss_heteroscedastic(constant_pred(2.0, std::log(4.0)), constant_target(0.0)) ==
          doctest::Approx(0.5 + 0.5 * std::log(4.0)));
}

TEST_CASE("residual 2: brute-force minimum over s sits at log 4") {
    double best_s = 0.0, best = 1e300;
    for (int i = -40000; i <= 40000; ++i) {
        const double s = i * 1e-4;
        const double l = loss_heteroscedastic(constant_pred(2.0, s, 1, 1), constant_target(0.0, 1, 1));
        if (l < best) {
            best = l;
            best_s = s;
        }
    }
    CHECK(best_s == doctest::Approx(std::log(4.0)).epsilon(1e-3));
    CHECK(best == doctest::Approx(1.1931).epsilon(1e-4));
}

TEST_CASE("homoscedastic loss identities") {
    const HeadOutput pred = constant_pred(1.5, 0.0);
    const DensityMap target = constant_target(0.5);
    // sigma2 = 1: half the mean squared residual.
    CHECK(loss_homoscedastic(pred.density, target, 1.0) == doctest::Approx(0.5));
    // sigma2 = e: residual term scaled by 1/e, plus exactly one half.
    CHECK(loss_homoscedastic(pred.density, target, std::exp(1.0)) == doctest::Approx(0.5 / std::exp(1.0) + 0.5));

    std::mt19937_64 rng(4);
    const Tensor y = random_tensor(Shape{1, 3, 5}, rng, 0.0, 2.0);
    const DensityMap t{random_tensor(Shape{1, 3, 5}, rng, 0.0, 2.0)};
    for (double sigma2 : {0.1, 1.0, 3.7}) {
        const HeadOutput h{y, Tensor(Shape{1, 3, 5}, std::log(sigma2))};
        CHECK(loss_homoscedastic(y, t, sigma2) == doctest::Approx(loss_heteroscedastic(h, t)).epsilon(1e-12));
    }
    CHECK_THROWS_AS(loss_homoscedastic(y, t, 0.0), std::invalid_argument);
    CHECK_THROWS_AS(loss_homoscedastic(y, t, -1.0), std::invalid_argument);
}

TEST_CASE("loss shape mismatch is rejected") {
    CHECK_THROWS_AS(loss_heteroscedastic(constant_pred(1.0, 0.0, 4, 4), constant_target(1.0, 4, 3)),
                    std::invalid_argument);
    CHECK_THROWS_AS(loss_homoscedastic(Tensor(Shape{1, 2, 2}), constant_target(1.0, 4, 4), 1.0),
                    std::invalid_argument);
}

TEST_CASE("loss gradients match finite differences, including the log-variance path") {
    std::mt19937_64 rng(31);
    for (int trial = 0; trial < 5; ++trial) {
        const Tensor y = random_tensor(Shape{1, 3, 4}, rng, 0.0, 2.0);
        const Tensor s = random_tensor(Shape{1, 3, 4}, rng, -3.0, 3.0);
        const Tensor t = random_tensor(Shape{1, 3, 4}, rng, 0.0, 2.0);
        const auto hetero = gradcheck(
            [](Graph& g, std::span<const Var> v) { return heteroscedastic_loss(g, v[0], v[1], v[2]); }, {y, s, t});
        CHECK(hetero.max_rel_error < 1e-3);
        const auto homo = gradcheck(
            [](Graph& g, std::span<const Var> v) { return homoscedastic_loss(g, v[0], v[1], 2.5); }, {y, t});
        CHECK(homo.max_rel_error < 1e-3);
        const auto mse = gradcheck([](Graph& g, std::span<const Var> v) { return mse_loss(g, v[0], v[1]); }, {y, t});
        CHECK(mse.max_rel_error < 1e-3);
    }
}

TEST_CASE("attenuation: the weight on a squared residual shrinks as s grows") {
    const std::size_t d = 6;
    auto loss_at = [&](double r2, double s) {
        return loss_heteroscedastic(constant_pred(std::sqrt(r2), s, 1, d), constant_target(0.0, 1, d));
    };
    double prev = 1e300;
    for (double s = -4.0; s <= 4.0; s += 0.5) {
        const double h = 1e-4, r2 = 1.3;
        const double slope = (loss_at(r2 + h, s) - loss_at(r2 - h, s)) / (2 * h);
        // Every pixel shares the residual, so D pixels each contribute 1/D.
        CHECK(slope == doctest::Approx(std::exp(-s) / 2.0).epsilon(1e-6));
        CHECK(slope < prev);
        prev = slope;
    }
}

TEST_CASE("variant plumbing") {
    CHECK(parse_variant("aleatoric") == Variant::aleatoric_only);
    CHECK(parse_variant("epistemic_only") == Variant::epistemic_only);
    CHECK_THROWS_AS(parse_variant("both"), std::invalid_argument);
    for (Variant v : {Variant::base, Variant::aleatoric_only, Variant::epistemic_only, Variant::combined}) {
        CHECK(parse_variant(variant_name(v)) == v);
    }
    const ArchConfig a;
    CHECK(effective_arch(a, Variant::base).heads == 1);
    CHECK(effective_arch(a, Variant::aleatoric_only).heads == 1);
    CHECK(effective_arch(a, Variant::epistemic_only).heads == 10);
    CHECK(effective_arch(a, Variant::combined).heads == 10);
}

TEST_CASE("combined with frozen log-variance reduces to epistemic_only at K=1") {
    const auto data = tiny_dataset(3, 16, 70);
    const double sigma2 = 2.0;
    DubNetParams p = init_params(tiny_arch(1), 12);
    fix_logvar_head(p, sigma2);
    for (const TrainingExample& ex : data) {
        const HeadOutput out = forward_head(p, ex.image.pixels, 0);
        for (double s : out.logvar.data()) CHECK(s == std::log(sigma2));
        CHECK(loss_heteroscedastic(out, ex.target) ==
              doctest::Approx(loss_homoscedastic(out.density, ex.target, sigma2)).epsilon(1e-12));
    }
}

TEST_CASE("an update touches only the drawn head") {
    const auto data = tiny_dataset(1, 16, 80);
    TrainConfig cfg;
    cfg.epochs = 1;
    cfg.seed = 5;
    for (Variant v : {Variant::combined, Variant::epistemic_only}) {
        cfg.variant = v;
        const DubNetParams before = initial_params(tiny_arch(4), cfg);
        const TrainResult r = train(data, tiny_arch(4), cfg);
        std::size_t drawn = 4;
        for (std::size_t k = 0; k < 4; ++k) {
            if (r.history[0].head_histogram[k] == 1) drawn = k;
        }
        REQUIRE(drawn < 4);
        for (std::size_t k = 0; k < 4; ++k) {
            if (k == drawn) {
                CHECK_FALSE(r.params.heads[k] == before.heads[k]);
            } else {
                CHECK(r.params.heads[k] == before.heads[k]);
            }
        }
        CHECK_FALSE(r.params.trunk[0] == before.trunk[0]);
        // The log-variance head only learns when the loss uses it.
        CHECK((r.params.logvar == before.logvar) == (v == Variant::epistemic_only));
    }
}

TEST_CASE("head draws are uniform") {
    const auto data = tiny_dataset(4, 8, 90);
    ArchConfig arch = tiny_arch(4);
    arch.front_channels = {2, 2};
    arch.back_channels = {2};
    TrainConfig cfg;
    cfg.epochs = 2500;
    cfg.seed = 17;
    std::vector<std::size_t> totals(4, 0);
    std::size_t draws = 0;
    const TrainResult r = train(data, arch, cfg);
    for (const LossRecord& rec : r.history) {
        std::size_t epoch_total = 0;
        for (std::size_t k = 0; k < 4; ++k) {
            totals[k] += rec.head_histogram[k];
            epoch_total += rec.head_histogram[k];
        }
        CHECK(epoch_total == data.size());
        draws += epoch_total;
    }
    REQUIRE(draws == 10000);
    for (std::size_t c : totals) {
        const double freq = static_cast<double>(c) / static_cast<double>(draws);
        CHECK(std::abs(freq - 0.25) < 0.05 * 0.25);
    }
}

TEST_CASE("training is deterministic in the seed") {
    const auto data = tiny_dataset(4, 16, 100);
    TrainConfig cfg;
    cfg.epochs = 3;
    cfg.seed = 8;
    const TrainResult a = train(data, tiny_arch(3), cfg);
    const TrainResult b = train(data, tiny_arch(3), cfg);
    CHECK(a.params == b.params);
    REQUIRE(a.history.size() == b.history.size());
    for (std::size_t i = 0; i < a.history.size(); ++i) {
        CHECK(a.history[i].mean_loss == b.history[i].mean_loss);
        CHECK(a.history[i].head_histogram == b.history[i].head_histogram);
    }
    cfg.seed = 9;
    CHECK_FALSE(train(data, tiny_arch(3), cfg).params == a.params);

    cfg.seed = 8;
    cfg.sampling = HeadSampling::resampled_datasets;
    CHECK(train(data, tiny_arch(3), cfg).params == train(data, tiny_arch(3), cfg).params);
}

TEST_CASE("overfitting ten images halves the loss") {
    const auto data = tiny_dataset(10, 32, 200);
    for (std::uint64_t seed : {1u, 2u, 3u}) {
        TrainConfig cfg;
        cfg.epochs = 200;
        cfg.seed = seed;
        cfg.variant = Variant::combined;
        const TrainResult r = train(data, ArchConfig{}, cfg);
        const double first = r.history.front().mean_loss;
        const double last = r.history.back().mean_loss;
        INFO("seed " << seed << " first " << first << " last " << last);
        REQUIRE(first > 0.0);
        CHECK(last <= 0.5 * first);
    }
}

TEST_CASE("train rejects bad inputs") {
    TrainConfig cfg;
    CHECK_THROWS_AS(train({}, ArchConfig{}, cfg), std::invalid_argument);
    auto data = tiny_dataset(1, 16, 3);
    cfg.epochs = 0;
    CHECK_THROWS_AS(train(data, ArchConfig{}, cfg), std::invalid_argument);
    cfg = TrainConfig{};
    data[0].target = DensityMap{Tensor(Shape{1, 3, 3})};
    CHECK_THROWS_AS(train(data, ArchConfig{}, cfg), std::invalid_argument);
}

TEST_CASE("loss log format") {
    const auto dir = std::filesystem::temp_directory_path() / "dub_test_losslog";
    write_loss_log(dir / "loss.csv", {{1, 0.5, {2, 1}}, {2, 0.25, {0, 3}}});
    CHECK(detail::read_file(dir / "loss.csv") == "epoch,mean_loss,head_0,head_1\n1,0.5,2,1\n2,0.25,0,3\n");
    std::filesystem::remove_all(dir);
}
