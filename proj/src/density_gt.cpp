#include "dub/density_gt.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace dub {

void KernelConfig::validate() const {
    if (!(beta > 0.0)) throw std::invalid_argument("kernel beta must be > 0");
    if (k < 1) throw std::invalid_argument("kernel k must be >= 1");
    if (!(sigma_floor > 0.0)) throw std::invalid_argument("kernel sigma_floor must be > 0");
    if (!(sigma_default > 0.0)) throw std::invalid_argument("kernel sigma_default must be > 0");
    if (!(truncate > 0.0)) throw std::invalid_argument("kernel truncate must be > 0");
}

void validate_image(const DotAnnotatedImage& image) {
    if (image.pixels.rank() != 3 || image.pixels.dim(0) != 1) {
        throw std::invalid_argument("image '" + image.id + "' must be [1,H,W], got " +
                                    shape_string(image.pixels.shape()));
    }
    for (double v : image.pixels.data()) {
        if (!(v >= 0.0 && v <= 1.0)) throw std::invalid_argument("image '" + image.id + "' has pixel outside [0,1]");
    }
    const double h = static_cast<double>(image.height());
    const double w = static_cast<double>(image.width());
    for (const Point& p : image.points) {
        if (!(p.row >= 0.0 && p.row < h && p.col >= 0.0 && p.col < w)) {
            throw std::invalid_argument("image '" + image.id + "' has a point outside its bounds");
        }
    }
}

std::vector<double> knn_mean_distance(std::span<const Point> points, int k, double isolated_value) {
    if (k < 1) throw std::invalid_argument("knn_mean_distance: k must be >= 1");
    const std::size_t n = points.size();
    std::vector<double> out(n, isolated_value);
    if (n < 2) return out;
    std::vector<double> dist;
    dist.reserve(n - 1);
    for (std::size_t i = 0; i < n; ++i) {
        dist.clear();
        for (std::size_t j = 0; j < n; ++j) {
            if (j == i) continue;
            dist.push_back(std::hypot(points[i].row - points[j].row, points[i].col - points[j].col));
        }
        const std::size_t take = std::min(dist.size(), static_cast<std::size_t>(k));
        std::partial_sort(dist.begin(), dist.begin() + static_cast<long>(take), dist.end());
        double acc = 0.0;
        for (std::size_t t = 0; t < take; ++t) acc += dist[t];
        out[i] = acc / static_cast<double>(take);
    }
    return out;
}

std::vector<double> kernel_sigmas(std::span<const Point> points, const KernelConfig& config) {
    config.validate();
    std::vector<double> sig = knn_mean_distance(points, config.k, config.sigma_default / config.beta);
    for (double& s : sig) s = std::max(config.beta * s, config.sigma_floor);
    return sig;
}

DensityMap render_density(std::size_t height, std::size_t width, std::span<const Point> points,
                          const KernelConfig& config) {
    config.validate();
    if (height == 0 || width == 0) throw std::invalid_argument("render_density: empty image shape");
    const double h = static_cast<double>(height);
    const double w = static_cast<double>(width);
    for (const Point& p : points) {
        if (!(p.row >= 0.0 && p.row < h && p.col >= 0.0 && p.col < w)) {
            throw std::invalid_argument("render_density: point (" + std::to_string(p.row) + ", " +
                                        std::to_string(p.col) + ") outside " + std::to_string(height) +
                                        "x" + std::to_string(width));
        }
    }

    // Canonical order makes the accumulation independent of input order.
    std::vector<Point> sorted(points.begin(), points.end());
    std::sort(sorted.begin(), sorted.end(), [](const Point& a, const Point& b) {
        return a.row != b.row ? a.row < b.row : a.col < b.col;
    });
    const std::vector<double> sigmas = kernel_sigmas(sorted, config);

    DensityMap map{Tensor(Shape{1, height, width})};
    std::vector<double> patch;
    for (std::size_t j = 0; j < sorted.size(); ++j) {
        const Point& p = sorted[j];
        const double sigma = sigmas[j];
        const double radius = std::ceil(config.truncate * sigma);
        const long r0 = std::max(0L, static_cast<long>(std::floor(p.row - radius)));
        const long r1 = std::min(static_cast<long>(height), static_cast<long>(std::ceil(p.row + radius)) + 1);
        const long c0 = std::max(0L, static_cast<long>(std::floor(p.col - radius)));
        const long c1 = std::min(static_cast<long>(width), static_cast<long>(std::ceil(p.col + radius)) + 1);
        const double inv2s2 = 1.0 / (2.0 * sigma * sigma);

        patch.assign(static_cast<std::size_t>((r1 - r0) * (c1 - c0)), 0.0);
        double mass = 0.0;
        std::size_t idx = 0;
        for (long r = r0; r < r1; ++r) {
            const double dy = static_cast<double>(r) + 0.5 - p.row;
            for (long c = c0; c < c1; ++c, ++idx) {
                const double dx = static_cast<double>(c) + 0.5 - p.col;
                const double d2 = dy * dy + dx * dx;
                if (d2 > (config.truncate * sigma) * (config.truncate * sigma)) continue;
                patch[idx] = std::exp(-d2 * inv2s2);
                mass += patch[idx];
            }
        }
        idx = 0;
        for (long r = r0; r < r1; ++r) {
            for (long c = c0; c < c1; ++c, ++idx) {
                map.values.at(0, static_cast<std::size_t>(r), static_cast<std::size_t>(c)) += patch[idx] / mass;
            }
        }
    }
    return map;
}

DensityMap downsample_blocksum(const DensityMap& map, std::size_t factor) {
    const Tensor& v = map.values;
    if (v.rank() != 3) throw std::invalid_argument("downsample_blocksum: map must be [C,H,W]");
    if (factor == 0 || v.dim(1) % factor != 0 || v.dim(2) % factor != 0) {
        throw std::invalid_argument("downsample_blocksum: shape " + shape_string(v.shape()) +
                                    " not divisible by " + std::to_string(factor));
    }
    const std::size_t c = v.dim(0), h = v.dim(1) / factor, w = v.dim(2) / factor;
    Tensor out(Shape{c, h, w});
    for (std::size_t ch = 0; ch < c; ++ch) {
        for (std::size_t y = 0; y < v.dim(1); ++y) {
            for (std::size_t x = 0; x < v.dim(2); ++x) out.at(ch, y / factor, x / factor) += v.at(ch, y, x);
        }
    }
    return DensityMap{std::move(out)};
}

Tensor downsample_blockmean(const Tensor& image, std::size_t factor) {
    Tensor sums = downsample_blocksum(DensityMap{image}, factor).values;
    const double inv = 1.0 / static_cast<double>(factor * factor);
    for (double& x : sums.data()) x *= inv;
    return sums;
}

}  // namespace dub
