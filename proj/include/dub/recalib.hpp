#pragma once

#include <filesystem>
#include <span>
#include <utility>
#include <vector>

namespace dub {

/// Floor applied to predicted count standard deviations before dividing.
inline constexpr double kSigmaFloor = 1e-6;

struct ResidualRecord {
    double gt_count = 0.0;    // C
    double pred_count = 0.0;  // C̄
    double pred_std = 0.0;    // σ̄
};

/// z_n = (C_n - C̄_n) / max(σ̄_n, floor). Negative or non-finite σ̄ is an
/// error; σ̄ in [0, floor) is floored with a warning on stderr. The number
/// of floored records is written to `floored` when given.
std::vector<double> standardized_residuals(std::span<const ResidualRecord> records,
                                           std::size_t* floored = nullptr);

struct CdfPoint {
    double z = 0.0;
    double p = 0.0;
};

/// (z_n, |{m : z_m <= z_n}| / N) for every input, sorted by z.
std::vector<CdfPoint> empirical_cdf(std::span<const double> z_values);

/// Weighted least-squares non-decreasing fit (pool adjacent violators).
std::vector<double> pava(std::span<const double> values, std::span<const double> weights = {});

struct Knot {
    double z = 0.0;
    double quantile = 0.0;
    friend bool operator==(const Knot&, const Knot&) = default;
};

/// Monotone map from standardized residual to quantile, piecewise linear
/// between knots and flat beyond them.
class RecalibrationMap {
public:
    RecalibrationMap() = default;
    /// Knots must have non-decreasing z and quantile.
    explicit RecalibrationMap(std::vector<Knot> knots);

    const std::vector<Knot>& knots() const noexcept { return knots_; }
    std::size_t size() const noexcept { return knots_.size(); }

    double evaluate(double z) const;

    friend bool operator==(const RecalibrationMap&, const RecalibrationMap&) = default;

private:
    std::vector<Knot> knots_;
};

/// Isotonic fit over (z, target) pairs sorted by z. Pairs sharing a z are
/// averaged first and fitted with their multiplicity as weight.
RecalibrationMap fit_isotonic(std::span<const CdfPoint> pairs);

/// Z^p with R(Z^p) = p: linear interpolation between bracketing knots,
/// clamped to the first/last knot z outside the fitted quantile range.
/// On plateaus the smallest z reaching p is returned.
double invert_quantile(const RecalibrationMap& map, double p);

/// Full recalibration from validation records.
RecalibrationMap recalibrate(std::span<const ResidualRecord> records);

/// CSV `z,quantile`, one row per knot.
void write_recalibration(const std::filesystem::path& path, const RecalibrationMap& map);
RecalibrationMap read_recalibration(const std::filesystem::path& path);

}  // namespace dub
