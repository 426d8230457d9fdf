#pragma once

#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "dub/density_gt.hpp"
#include "dub/tensor.hpp"

namespace dub {

/// Malformed, truncated or mislabelled file content.
class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A well-formed file written by a newer or unknown format version.
class UnsupportedVersionError : public FormatError {
public:
    using FormatError::FormatError;
};

/// Binary PGM (P5), maxval <= 255, scaled to [0,1]. Returns [1,H,W].
Tensor read_pgm(const std::filesystem::path& path);

/// Writes a [1,H,W] tensor in [0,1] as 8-bit P5 (values clamped, rounded).
void write_pgm(const std::filesystem::path& path, const Tensor& image);

/// Rounds to the nearest 8-bit level, the same quantisation write_pgm applies.
Tensor quantize_8bit(const Tensor& image);

/// `id,row,col` CSV, grouped by id.
std::map<std::string, std::vector<Point>> read_annotations(const std::filesystem::path& path);
void write_annotations(const std::filesystem::path& path,
                       const std::vector<std::pair<std::string, std::vector<Point>>>& annotations);

/// Density file: magic "DMAP", u32 version (1), u32 H, u32 W, then H*W
/// little-endian float32 values in row-major order.
void write_density(const std::filesystem::path& path, const DensityMap& map);
DensityMap read_density(const std::filesystem::path& path);

namespace detail {

/// Shortest decimal text that round-trips to the same double.
std::string format_double(double v);

/// Splits one CSV line on commas (no quoting).
std::vector<std::string> split_csv_line(const std::string& line);

void put_u32(std::string& out, std::uint32_t v);
void put_f32(std::string& out, float v);
void put_f64(std::string& out, double v);

/// Cursor over a byte buffer that throws FormatError on overrun.
class ByteReader {
public:
    explicit ByteReader(std::string bytes) : bytes_(std::move(bytes)) {}
    std::uint32_t u32();
    float f32();
    double f64();
    std::string raw(std::size_t n);
    bool at_end() const { return pos_ == bytes_.size(); }
    std::size_t remaining() const { return bytes_.size() - pos_; }

private:
    std::string bytes_;
    std::size_t pos_ = 0;
};

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::string& bytes);

}  // namespace detail

}  // namespace dub
