#include "dub/uncertainty.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include <boost/math/distributions/normal.hpp>

#include "dub/io.hpp"

namespace dub {

PredictiveSummary decompose(const EnsembleOutput& outputs) {
    if (outputs.densities.empty()) throw std::invalid_argument("decompose: no head outputs");
    const Shape& shape = outputs.logvar.shape();
    for (const Tensor& d : outputs.densities) {
        if (d.shape() != shape) throw std::invalid_argument("decompose: head output shapes differ");
    }
    const double k = static_cast<double>(outputs.densities.size());
    PredictiveSummary s;
    s.mean_map = Tensor(shape);
    s.epistemic_map = Tensor(shape);
    s.aleatoric_map = Tensor(shape);
    // Moments are taken about head 0's output, which leaves the variance
    // unchanged and makes it exactly 0 when every head agrees.
    const Tensor& pivot = outputs.densities.front();
    Tensor first(shape), second(shape);
    for (const Tensor& d : outputs.densities) {
        for (std::size_t i = 0; i < d.size(); ++i) {
            const double dev = d[i] - pivot[i];
            first[i] += dev;
            second[i] += dev * dev;
        }
    }
    double variance = 0.0;
    for (std::size_t i = 0; i < shape_size(shape); ++i) {
        const double m1 = first[i] / k;
        s.mean_map[i] = pivot[i] + m1;
        // (1/K) Σ f_k² − E(y)², clamped at 0 against round-off
        s.epistemic_map[i] = std::max(0.0, second[i] / k - m1 * m1);
        s.aleatoric_map[i] = std::exp(outputs.logvar[i]);
    }
    s.count_mean = s.mean_map.sum();
    for (std::size_t i = 0; i < s.mean_map.size(); ++i) variance += s.epistemic_map[i] + s.aleatoric_map[i];
    s.count_std = std::sqrt(variance);
    return s;
}

PredictiveSummary decompose(const DubNetParams& params, const Tensor& image) {
    return decompose(forward_all(params, image));
}

double normal_quantile(double p) {
    if (!(p > 0.0 && p < 1.0)) throw std::invalid_argument("normal_quantile: p must lie in (0,1)");
    return boost::math::quantile(boost::math::normal_distribution<double>(), p);
}

Interval count_interval(double count_mean, double count_std, const RecalibrationMap* recal, double p) {
    if (!(p > 0.0 && p < 1.0)) throw std::invalid_argument("count_interval: coverage must lie in (0,1)");
    if (!(count_std >= 0.0)) throw std::invalid_argument("count_interval: count_std must be >= 0");
    const double lo_q = (1.0 - p) / 2.0;
    const double hi_q = (1.0 + p) / 2.0;
    double z_lo, z_hi;
    if (recal) {
        z_lo = invert_quantile(*recal, lo_q);
        z_hi = invert_quantile(*recal, hi_q);
    } else {
        z_lo = normal_quantile(lo_q);
        z_hi = normal_quantile(hi_q);
    }
    return Interval{count_mean + count_std * z_lo, count_mean + count_std * z_hi};
}

Interval count_interval(const PredictiveSummary& summary, const RecalibrationMap* recal, double p) {
    return count_interval(summary.count_mean, summary.count_std, recal, p);
}

void write_predictions(const std::filesystem::path& path, const std::vector<PredictionRow>& rows, bool calibrated,
                       double coverage) {
    std::string text = std::string("# intervals=") + (calibrated ? "calibrated" : "uncalibrated") +
                       " coverage=" + detail::format_double(coverage) + "\n";
    text += "id,count_mean,count_std,lo,hi\n";
    for (const PredictionRow& r : rows) {
        text += r.id + "," + detail::format_double(r.count_mean) + "," + detail::format_double(r.count_std) + "," +
                detail::format_double(r.interval.lo) + "," + detail::format_double(r.interval.hi) + "\n";
    }
    detail::write_file(path, text);
}

namespace {

double parse_number(const std::string& s, const std::filesystem::path& path) {
    double v = 0.0;
    auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || end != s.data() + s.size()) throw FormatError(path.string() + ": bad number '" + s + "'");
    return v;
}

}  // namespace

PredictionReport read_predictions(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    PredictionReport report;
    std::string line;
    if (!std::getline(in, line) || line.rfind("# intervals=", 0) != 0) {
        throw FormatError(path.string() + ": missing '# intervals=' header line");
    }
    report.calibrated = line.find("intervals=calibrated") != std::string::npos;
    const auto cov = line.find("coverage=");
    if (cov == std::string::npos) throw FormatError(path.string() + ": missing coverage in header");
    report.coverage = parse_number(line.substr(cov + 9), path);
    if (!std::getline(in, line) ||
        detail::split_csv_line(line) != std::vector<std::string>{"id", "count_mean", "count_std", "lo", "hi"}) {
        throw FormatError(path.string() + ": expected header id,count_mean,count_std,lo,hi");
    }
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto f = detail::split_csv_line(line);
        if (f.size() != 5) throw FormatError(path.string() + ": expected 5 fields per row");
        report.rows.push_back(PredictionRow{f[0], parse_number(f[1], path), parse_number(f[2], path),
                                            Interval{parse_number(f[3], path), parse_number(f[4], path)}});
    }
    return report;
}

void write_heatmaps(const std::filesystem::path& dir, const std::string& id, const PredictiveSummary& summary) {
    std::string sidecar = "map,min,max\n";
    auto emit = [&](const char* name, const Tensor& map) {
        const auto [lo_it, hi_it] = std::minmax_element(map.data().begin(), map.data().end());
        const double lo = *lo_it, hi = *hi_it;
        Tensor scaled(map.shape());
        if (hi > lo) {
            for (std::size_t i = 0; i < map.size(); ++i) scaled[i] = (map[i] - lo) / (hi - lo);
        }
        write_pgm(dir / (id + "_" + name + ".pgm"), scaled);
        sidecar += std::string(name) + "," + detail::format_double(lo) + "," + detail::format_double(hi) + "\n";
    };
    emit("mean", summary.mean_map);
    emit("epistemic", summary.epistemic_map);
    emit("aleatoric", summary.aleatoric_map);
    detail::write_file(dir / (id + "_heatmaps.txt"), sidecar);
}

}  // namespace dub
