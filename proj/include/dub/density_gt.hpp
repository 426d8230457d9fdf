#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "dub/tensor.hpp"

namespace dub {

/// (row, col) in pixel units; pixel (i, j) covers [i, i+1) x [j, j+1).
struct Point {
    double row = 0.0;
    double col = 0.0;
    friend bool operator==(const Point&, const Point&) = default;
};

/// Grayscale image in [0,1] stored as a [1,H,W] tensor, plus its head dots.
struct DotAnnotatedImage {
    std::string id;
    Tensor pixels;
    std::vector<Point> points;

    std::size_t height() const { return pixels.dim(1); }
    std::size_t width() const { return pixels.dim(2); }
    double count() const { return static_cast<double>(points.size()); }
};

/// Non-negative [1,H,W] grid whose sum is the object count of the region.
struct DensityMap {
    Tensor values;

    std::size_t height() const { return values.dim(1); }
    std::size_t width() const { return values.dim(2); }
    std::size_t pixel_count() const { return values.size(); }
    double count() const { return values.sum(); }
};

struct KernelConfig {
    double beta = 0.3;
    int k = 3;
    double sigma_floor = 1.0;
    double sigma_default = 4.0;
    /// Kernel support radius in units of sigma.
    double truncate = 4.0;

    void validate() const;
};

/// Throws std::invalid_argument when the image is not [1,H,W], a pixel is
/// outside [0,1], or a point lies outside [0,H)x[0,W).
void validate_image(const DotAnnotatedImage& image);

/// Mean Euclidean distance from each point to its k nearest other points.
/// Uses all other points when fewer than k exist; isolated points get
/// `isolated_value` (callers pass sigma_default/beta).
std::vector<double> knn_mean_distance(std::span<const Point> points, int k, double isolated_value);

/// Per-point kernel standard deviation max(beta * dbar_j, sigma_floor).
std::vector<double> kernel_sigmas(std::span<const Point> points, const KernelConfig& config);

/// Sum of one truncated, renormalised Gaussian per point. Each kernel is
/// clipped to the image and rescaled so that its own mass is exactly 1.
DensityMap render_density(std::size_t height, std::size_t width, std::span<const Point> points,
                          const KernelConfig& config);

/// Sums factor x factor blocks; H and W must be divisible by factor.
DensityMap downsample_blocksum(const DensityMap& map, std::size_t factor);

/// Averages factor x factor blocks of a [C,H,W] tensor.
Tensor downsample_blockmean(const Tensor& image, std::size_t factor);

}  // namespace dub
