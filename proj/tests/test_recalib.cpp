#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <random>
#include <sstream>

#include <boost/math/distributions/normal.hpp>

#include "dub/io.hpp"
#include "dub/recalib.hpp"
#include "support/isotonic_oracle.hpp"

using namespace dub;

namespace {

std::vector<double> fitted_at_pairs(const std::vector<CdfPoint>& pairs) {
    const RecalibrationMap map = fit_isotonic(pairs);
    std::vector<double> out;
    for (const CdfPoint& c : pairs) out.push_back(map.evaluate(c.z));
    return out;
}

// Captures std::cerr for the lifetime of the object.
struct CerrCapture {
    std::ostringstream buffer;
    std::streambuf* old = std::cerr.rdbuf(buffer.rdbuf());
    ~CerrCapture() { std::cerr.rdbuf(old); }
};

}  // namespace

TEST_CASE("standardized residuals") {
    const std::vector<ResidualRecord> recs{{5, 5, 1}, {10, 8, 2}, {3, 7, 0.5}};
    CHECK(standardized_residuals(recs) == std::vector<double>{0.0, 1.0, -8.0});

    CHECK_THROWS_AS(standardized_residuals(std::vector<ResidualRecord>{{1, 1, -1}}), std::invalid_argument);
    CHECK_THROWS_AS(standardized_residuals(std::vector<ResidualRecord>{{1, 1, std::nan("")}}), std::invalid_argument);
}

TEST_CASE("tiny sigma is floored with a warning") {
    CerrCapture capture;
    std::size_t floored = 0;
    const auto z = standardized_residuals(std::vector<ResidualRecord>{{2, 1, 0.0}, {2, 1, 1e-9}, {2, 1, 1.0}}, &floored);
    CHECK(floored == 2);
    CHECK(z[0] == doctest::Approx(1.0 / kSigmaFloor));
    CHECK(z[1] == doctest::Approx(1.0 / kSigmaFloor));
    CHECK(z[2] == 1.0);
    CHECK_FALSE(capture.buffer.str().empty());
}

TEST_CASE("empirical CDF") {
    const std::vector<double> z{2, -1, 1, 0};
    const auto cdf = empirical_cdf(z);
    REQUIRE(cdf.size() == 4);
    const double expect_z[] = {-1, 0, 1, 2}, expect_p[] = {0.25, 0.5, 0.75, 1.0};
    for (std::size_t i = 0; i < 4; ++i) {
        CHECK(cdf[i].z == expect_z[i]);
        CHECK(cdf[i].p == expect_p[i]);
    }

    const auto ties = empirical_cdf(std::vector<double>{1, 0, 1, 3});
    CHECK(ties[1].p == 0.75);
    CHECK(ties[2].p == 0.75);

    const auto one = empirical_cdf(std::vector<double>{4.5});
    REQUIRE(one.size() == 1);
    CHECK(one[0].z == 4.5);
    CHECK(one[0].p == 1.0);

    CHECK_THROWS_AS(empirical_cdf(std::vector<double>{}), std::invalid_argument);
}

TEST_CASE("PAVA reference cases") {
    CHECK(pava(std::vector<double>{1, 3, 2}) == std::vector<double>{1, 2.5, 2.5});
    CHECK(pava(std::vector<double>{0.1, 0.2, 0.2, 0.9}) == std::vector<double>{0.1, 0.2, 0.2, 0.9});
    CHECK(pava(std::vector<double>{0.4, 0.4, 0.4}) == std::vector<double>{0.4, 0.4, 0.4});
    CHECK(pava(std::vector<double>{3, 2, 1}) == std::vector<double>{2, 2, 2});
    // Weighted: the heavy 1 pulls the pooled value down.
    const auto w = pava(std::vector<double>{4, 1}, std::vector<double>{1, 3});
    CHECK(w[0] == doctest::Approx(1.75));
    CHECK(w[1] == doctest::Approx(1.75));
    CHECK_THROWS_AS(pava(std::vector<double>{1, 2}, std::vector<double>{1}), std::invalid_argument);
}

TEST_CASE("PAVA matches exhaustive monotone search on random grid instances") {
    std::mt19937_64 rng(77);
    std::uniform_int_distribution<int> grid(0, 10);
    for (std::size_t n = 1; n <= 6; ++n) {
        for (int trial = 0; trial < 400; ++trial) {
            std::vector<double> t(n);
            for (double& v : t) v = grid(rng) / 10.0;
            const auto fit = pava(t);
            const auto oracle = dub::testing::exhaustive_monotone_fit(t);
            CHECK(std::abs(dub::testing::sse(t, fit) - oracle.sse) < 1e-9);
            for (std::size_t i = 0; i < n; ++i) CHECK(fit[i] == doctest::Approx(oracle.values[i]).epsilon(1e-9));
            CHECK(std::is_sorted(fit.begin(), fit.end()));
        }
    }
}

TEST_CASE("isotonic fit over CDF pairs") {
    const std::vector<CdfPoint> monotone{{-1, 0.2}, {0, 0.5}, {1, 0.9}};
    CHECK(fitted_at_pairs(monotone) == std::vector<double>{0.2, 0.5, 0.9});

    const std::vector<CdfPoint> flat{{-1, 0.5}, {0, 0.5}, {1, 0.5}};
    CHECK(fitted_at_pairs(flat) == std::vector<double>{0.5, 0.5, 0.5});

    // Equal z values are averaged before fitting.
    const std::vector<CdfPoint> dup{{0, 0.2}, {0, 0.6}, {1, 0.7}};
    const RecalibrationMap m = fit_isotonic(dup);
    CHECK(m.size() == 2);
    CHECK(m.evaluate(0) == doctest::Approx(0.4));

    const std::vector<CdfPoint> unsorted{{1, 0.2}, {0, 0.5}};
    CHECK_THROWS_AS(fit_isotonic(unsorted), std::invalid_argument);
}

TEST_CASE("quantile inversion") {
    const RecalibrationMap m({{0, 0.4}, {2, 0.8}});
    CHECK(invert_quantile(m, 0.6) == doctest::Approx(1.0));
    CHECK(invert_quantile(m, 0.4) == 0.0);
    CHECK(invert_quantile(m, 0.8) == 2.0);
    CHECK(invert_quantile(m, 0.99) == 2.0);
    CHECK(invert_quantile(m, 0.01) == 0.0);
    CHECK_THROWS_AS(invert_quantile(RecalibrationMap({{0, 0.4}}), 0.5), std::invalid_argument);
    CHECK_THROWS_AS(invert_quantile(m, 0.0), std::invalid_argument);
    CHECK_THROWS_AS(invert_quantile(m, 1.0), std::invalid_argument);

    const RecalibrationMap plateau({{-1, 0.2}, {0, 0.5}, {3, 0.5}, {4, 0.9}});
    CHECK(invert_quantile(plateau, 0.5) == 0.0);
    CHECK(invert_quantile(plateau, 0.7) == doctest::Approx(3.5));
}

TEST_CASE("round trip through fitted knots and monotone inversion") {
    std::mt19937_64 rng(5);
    std::normal_distribution<double> n01(0.0, 1.0);
    std::vector<double> z(300);
    for (double& v : z) v = 1.7 * n01(rng) + 0.3;
    const RecalibrationMap map = fit_isotonic(empirical_cdf(z));
    for (const Knot& k : map.knots()) {
        if (k.quantile <= 0.0 || k.quantile >= 1.0) continue;
        CHECK(map.evaluate(invert_quantile(map, k.quantile)) == k.quantile);
    }
    double prev = -1e300;
    for (double p = 0.01; p < 1.0; p += 0.01) {
        const double q = invert_quantile(map, p);
        CHECK(q >= prev);
        prev = q;
    }
    for (std::size_t i = 1; i < map.size(); ++i) {
        CHECK(map.knots()[i].quantile >= map.knots()[i - 1].quantile);
        CHECK(map.knots()[i].z > map.knots()[i - 1].z);
    }
}

TEST_CASE("scaling every sigma rescales z but keeps the fitted quantiles") {
    std::mt19937_64 rng(6);
    std::uniform_real_distribution<double> u(0.5, 3.0);
    std::normal_distribution<double> n01(0.0, 1.0);
    std::vector<ResidualRecord> recs(120), scaled;
    for (auto& r : recs) r = {20.0 + 4.0 * n01(rng), 20.0, u(rng)};
    const double c = 3.5;
    for (auto r : recs) {
        r.pred_std *= c;
        scaled.push_back(r);
    }
    const auto z1 = standardized_residuals(recs), z2 = standardized_residuals(scaled);
    for (std::size_t i = 0; i < z1.size(); ++i) CHECK(z2[i] == doctest::Approx(z1[i] / c).epsilon(1e-12));

    const RecalibrationMap a = recalibrate(recs), b = recalibrate(scaled);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(b.knots()[i].quantile == a.knots()[i].quantile);
        CHECK(b.knots()[i].z == doctest::Approx(a.knots()[i].z / c).epsilon(1e-12));
    }
    // Intervals C̄ + σ̄ Z^p are therefore identical, and so is coverage.
    for (double p : {0.05, 0.5, 0.95}) {
        CHECK(c * invert_quantile(b, p) == doctest::Approx(invert_quantile(a, p)).epsilon(1e-12));
    }
}

TEST_CASE("normal residuals recover normal quantiles") {
    std::mt19937_64 rng(2024);
    std::normal_distribution<double> n01(0.0, 1.0);
    const std::size_t n = 10000;
    std::vector<double> z(n);
    for (double& v : z) v = n01(rng);
    const RecalibrationMap map = fit_isotonic(empirical_cdf(z));
    const boost::math::normal standard;
    for (double p : {0.05, 0.1, 0.5, 0.9, 0.95}) {
        const double zp = invert_quantile(map, p);
        CHECK(std::abs(map.evaluate(zp) - p) <= 1.0 / n);
        // Sampling error of an empirical quantile, plus one step of the ECDF.
        const double tol = 3.0 * std::sqrt(p * (1 - p) / n) + 1.0 / n;
        CHECK(std::abs(boost::math::cdf(standard, zp) - p) <= tol);
    }
}

TEST_CASE("recalibration file round trip") {
    const auto dir = std::filesystem::temp_directory_path() / "dub_test_recal";
    const RecalibrationMap map({{-1.25, 0.1}, {0.0, 0.5}, {2.5, 0.95}});
    write_recalibration(dir / "r.csv", map);
    CHECK(detail::read_file(dir / "r.csv") == "z,quantile\n-1.25,0.1\n0,0.5\n2.5,0.95\n");
    CHECK(read_recalibration(dir / "r.csv") == map);

    detail::write_file(dir / "bad.csv", "z,quantile\n1,0.5\n0,0.6\n");
    CHECK_THROWS(read_recalibration(dir / "bad.csv"));
    detail::write_file(dir / "hdr.csv", "a,b\n1,0.5\n");
    CHECK_THROWS_AS(read_recalibration(dir / "hdr.csv"), FormatError);
    std::filesystem::remove_all(dir);
}
