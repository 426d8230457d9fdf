#include "dub/recalib.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iostream>
#include <stdexcept>
#include <string>

#include "dub/io.hpp"

namespace dub {

std::vector<double> standardized_residuals(std::span<const ResidualRecord> records, std::size_t* floored) {
    std::vector<double> z;
    z.reserve(records.size());
    std::size_t n_floored = 0;
    for (const ResidualRecord& r : records) {
        if (!std::isfinite(r.pred_std) || r.pred_std < 0.0) {
            throw std::invalid_argument("standardized_residuals: predicted std must be finite and >= 0");
        }
        double s = r.pred_std;
        if (s < kSigmaFloor) {
            s = kSigmaFloor;
            ++n_floored;
        }
        z.push_back((r.gt_count - r.pred_count) / s);
    }
    if (n_floored > 0) {
        std::cerr << "warning: " << n_floored << " predicted std value(s) below " << kSigmaFloor
                  << " were floored\n";
    }
    if (floored) *floored = n_floored;
    return z;
}

std::vector<CdfPoint> empirical_cdf(std::span<const double> z_values) {
    if (z_values.empty()) throw std::invalid_argument("empirical_cdf: empty input");
    std::vector<double> sorted(z_values.begin(), z_values.end());
    std::sort(sorted.begin(), sorted.end());
    const double n = static_cast<double>(sorted.size());
    std::vector<CdfPoint> out;
    out.reserve(sorted.size());
    for (double z : sorted) {
        const auto at_or_below = std::upper_bound(sorted.begin(), sorted.end(), z) - sorted.begin();
        out.push_back({z, static_cast<double>(at_or_below) / n});
    }
    return out;
}

std::vector<double> pava(std::span<const double> values, std::span<const double> weights) {
    if (!weights.empty() && weights.size() != values.size()) {
        throw std::invalid_argument("pava: weights and values differ in length");
    }
    struct Block {
        double mean;
        double weight;
        std::size_t count;
    };
    std::vector<Block> blocks;
    blocks.reserve(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) {
        const double w = weights.empty() ? 1.0 : weights[i];
        if (!(w > 0.0)) throw std::invalid_argument("pava: weights must be > 0");
        blocks.push_back({values[i], w, 1});
        while (blocks.size() > 1 && blocks[blocks.size() - 2].mean > blocks.back().mean) {
            Block top = blocks.back();
            blocks.pop_back();
            Block& prev = blocks.back();
            const double w_sum = prev.weight + top.weight;
            prev.mean = (prev.mean * prev.weight + top.mean * top.weight) / w_sum;
            prev.weight = w_sum;
            prev.count += top.count;
        }
    }
    std::vector<double> fitted;
    fitted.reserve(values.size());
    for (const Block& b : blocks) fitted.insert(fitted.end(), b.count, b.mean);
    return fitted;
}

RecalibrationMap::RecalibrationMap(std::vector<Knot> knots) : knots_(std::move(knots)) {
    for (std::size_t i = 0; i < knots_.size(); ++i) {
        if (!std::isfinite(knots_[i].z) || !std::isfinite(knots_[i].quantile)) {
            throw std::invalid_argument("recalibration knot is not finite");
        }
        if (i > 0 && (knots_[i].z < knots_[i - 1].z || knots_[i].quantile < knots_[i - 1].quantile)) {
            throw std::invalid_argument("recalibration knots must be non-decreasing in z and quantile");
        }
    }
}

double RecalibrationMap::evaluate(double z) const {
    if (knots_.empty()) throw std::invalid_argument("evaluate on an empty recalibration map");
    if (z <= knots_.front().z) return knots_.front().quantile;
    if (z >= knots_.back().z) return knots_.back().quantile;
    const auto hi = std::lower_bound(knots_.begin(), knots_.end(), z,
                                     [](const Knot& k, double v) { return k.z < v; });
    if (hi->z == z) return hi->quantile;
    const auto lo = hi - 1;
    const double t = (z - lo->z) / (hi->z - lo->z);
    return lo->quantile + t * (hi->quantile - lo->quantile);
}

RecalibrationMap fit_isotonic(std::span<const CdfPoint> pairs) {
    for (std::size_t i = 1; i < pairs.size(); ++i) {
        if (pairs[i].z < pairs[i - 1].z) throw std::invalid_argument("fit_isotonic: pairs must be sorted by z");
    }
    std::vector<double> zs, means, weights;
    for (std::size_t i = 0; i < pairs.size();) {
        std::size_t j = i;
        double acc = 0.0;
        while (j < pairs.size() && pairs[j].z == pairs[i].z) acc += pairs[j++].p;
        zs.push_back(pairs[i].z);
        means.push_back(acc / static_cast<double>(j - i));
        weights.push_back(static_cast<double>(j - i));
        i = j;
    }
    const std::vector<double> fitted = pava(means, weights);
    std::vector<Knot> knots;
    knots.reserve(zs.size());
    for (std::size_t i = 0; i < zs.size(); ++i) knots.push_back({zs[i], fitted[i]});
    return RecalibrationMap(std::move(knots));
}

double invert_quantile(const RecalibrationMap& map, double p) {
    const auto& k = map.knots();
    if (k.size() < 2) throw std::invalid_argument("invert_quantile needs at least 2 knots");
    if (!(p > 0.0 && p < 1.0)) throw std::invalid_argument("invert_quantile: p must lie in (0, 1)");
    if (p < k.front().quantile) return k.front().z;
    if (p > k.back().quantile) return k.back().z;
    const auto hi = std::lower_bound(k.begin(), k.end(), p,
                                     [](const Knot& knot, double v) { return knot.quantile < v; });
    if (hi->quantile == p) return hi->z;
    const auto lo = hi - 1;
    const double t = (p - lo->quantile) / (hi->quantile - lo->quantile);
    return lo->z + t * (hi->z - lo->z);
}

RecalibrationMap recalibrate(std::span<const ResidualRecord> records) {
    const std::vector<double> z = standardized_residuals(records);
    const std::vector<CdfPoint> cdf = empirical_cdf(z);
    return fit_isotonic(cdf);
}

void write_recalibration(const std::filesystem::path& path, const RecalibrationMap& map) {
    std::string text = "z,quantile\n";
    for (const Knot& k : map.knots()) {
        text += detail::format_double(k.z) + "," + detail::format_double(k.quantile) + "\n";
    }
    detail::write_file(path, text);
}

RecalibrationMap read_recalibration(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    std::string line;
    if (!std::getline(in, line) || detail::split_csv_line(line) != std::vector<std::string>{"z", "quantile"}) {
        throw FormatError(path.string() + ": expected header z,quantile");
    }
    std::vector<Knot> knots;
    while (std::getline(in, line)) {
        if (line.empty() || line == "\r") continue;
        const auto f = detail::split_csv_line(line);
        if (f.size() != 2) throw FormatError(path.string() + ": expected 2 fields per row");
        Knot k;
        for (int i = 0; i < 2; ++i) {
            double& dst = i == 0 ? k.z : k.quantile;
            auto [end, ec] = std::from_chars(f[i].data(), f[i].data() + f[i].size(), dst);
            if (ec != std::errc{} || end != f[i].data() + f[i].size()) {
                throw FormatError(path.string() + ": bad number '" + f[i] + "'");
            }
        }
        knots.push_back(k);
    }
    try {
        return RecalibrationMap(std::move(knots));
    } catch (const std::invalid_argument& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

}  // namespace dub
