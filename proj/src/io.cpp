#include "dub/io.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>

namespace dub {

namespace detail {

std::string format_double(double v) {
    char buf[64];
    auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    if (ec != std::errc{}) throw std::runtime_error("format_double failed");
    return std::string(buf, end);
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string field;
    std::istringstream in(line);
    while (std::getline(in, field, ',')) {
        if (!field.empty() && field.back() == '\r') field.pop_back();
        out.push_back(field);
    }
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
}

void put_f32(std::string& out, float v) { put_u32(out, std::bit_cast<std::uint32_t>(v)); }

void put_f64(std::string& out, double v) {
    const auto bits = std::bit_cast<std::uint64_t>(v);
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xFFu));
}

std::string ByteReader::raw(std::size_t n) {
    if (remaining() < n) throw FormatError("truncated file");
    std::string out = bytes_.substr(pos_, n);
    pos_ += n;
    return out;
}

std::uint32_t ByteReader::u32() {
    const std::string b = raw(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(b[i])) << (8 * i);
    return v;
}

float ByteReader::f32() { return std::bit_cast<float>(u32()); }

double ByteReader::f64() {
    const std::string b = raw(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(b[i])) << (8 * i);
    return std::bit_cast<double>(v);
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const std::filesystem::path& path, const std::string& bytes) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("write failed for " + path.string());
}

}  // namespace detail

namespace {

// Reads the next whitespace-delimited PGM header token, skipping comments.
std::string pgm_token(const std::string& bytes, std::size_t& pos) {
    while (pos < bytes.size()) {
        const char c = bytes[pos];
        if (c == '#') {
            while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
        } else if (std::isspace(static_cast<unsigned char>(c))) {
            ++pos;
        } else {
            break;
        }
    }
    const std::size_t start = pos;
    while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
    if (start == pos) throw FormatError("truncated PGM header");
    return bytes.substr(start, pos - start);
}

std::size_t parse_size(const std::string& text, const std::string& what) {
    std::size_t v = 0;
    auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    if (ec != std::errc{} || end != text.data() + text.size()) throw FormatError("bad " + what + ": " + text);
    return v;
}

double parse_double(const std::string& text, const std::string& what) {
    double v = 0.0;
    auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    if (ec != std::errc{} || end != text.data() + text.size()) throw FormatError("bad " + what + ": '" + text + "'");
    return v;
}

}  // namespace

Tensor read_pgm(const std::filesystem::path& path) {
    const std::string bytes = detail::read_file(path);
    std::size_t pos = 0;
    if (pgm_token(bytes, pos) != "P5") throw FormatError(path.string() + ": not a binary PGM (P5)");
    const std::size_t width = parse_size(pgm_token(bytes, pos), "PGM width");
    const std::size_t height = parse_size(pgm_token(bytes, pos), "PGM height");
    const std::size_t maxval = parse_size(pgm_token(bytes, pos), "PGM maxval");
    if (maxval == 0 || maxval > 255) throw FormatError(path.string() + ": only 8-bit PGM is supported");
    ++pos;  // single whitespace byte after maxval
    if (bytes.size() < pos + width * height) throw FormatError(path.string() + ": truncated PGM data");
    Tensor out(Shape{1, height, width});
    for (std::size_t i = 0; i < width * height; ++i) {
        out[i] = static_cast<double>(static_cast<unsigned char>(bytes[pos + i])) / static_cast<double>(maxval);
    }
    return out;
}

Tensor quantize_8bit(const Tensor& image) {
    Tensor out = image;
    for (double& v : out.data()) v = std::round(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0;
    return out;
}

void write_pgm(const std::filesystem::path& path, const Tensor& image) {
    if (image.rank() != 3 || image.dim(0) != 1) {
        throw std::invalid_argument("write_pgm expects [1,H,W], got " + shape_string(image.shape()));
    }
    std::string bytes = "P5\n" + std::to_string(image.dim(2)) + " " + std::to_string(image.dim(1)) + "\n255\n";
    bytes.reserve(bytes.size() + image.size());
    for (double v : image.data()) {
        bytes.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0))));
    }
    detail::write_file(path, bytes);
}

std::map<std::string, std::vector<Point>> read_annotations(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    std::string line;
    if (!std::getline(in, line)) throw FormatError(path.string() + ": empty annotation file");
    const auto header = detail::split_csv_line(line);
    if (header != std::vector<std::string>{"id", "row", "col"}) {
        throw FormatError(path.string() + ": expected header id,row,col");
    }
    std::map<std::string, std::vector<Point>> out;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line == "\r") continue;
        const auto f = detail::split_csv_line(line);
        if (f.size() != 3) throw FormatError(path.string() + ":" + std::to_string(lineno) + ": expected 3 fields");
        out[f[0]].push_back(Point{parse_double(f[1], "row"), parse_double(f[2], "col")});
    }
    return out;
}

void write_annotations(const std::filesystem::path& path,
                       const std::vector<std::pair<std::string, std::vector<Point>>>& annotations) {
    std::string text = "id,row,col\n";
    for (const auto& [id, points] : annotations) {
        for (const Point& p : points) {
            text += id + "," + detail::format_double(p.row) + "," + detail::format_double(p.col) + "\n";
        }
    }
    detail::write_file(path, text);
}

void write_density(const std::filesystem::path& path, const DensityMap& map) {
    const Tensor& v = map.values;
    if (v.rank() != 3 || v.dim(0) != 1) throw std::invalid_argument("write_density expects [1,H,W]");
    std::string bytes = "DMAP";
    detail::put_u32(bytes, 1);
    detail::put_u32(bytes, static_cast<std::uint32_t>(v.dim(1)));
    detail::put_u32(bytes, static_cast<std::uint32_t>(v.dim(2)));
    for (double x : v.data()) detail::put_f32(bytes, static_cast<float>(x));
    detail::write_file(path, bytes);
}

DensityMap read_density(const std::filesystem::path& path) {
    detail::ByteReader in(detail::read_file(path));
    if (in.raw(4) != "DMAP") throw FormatError(path.string() + ": bad density magic");
    const std::uint32_t version = in.u32();
    if (version != 1) throw UnsupportedVersionError(path.string() + ": unsupported density version " + std::to_string(version));
    const std::size_t h = in.u32();
    const std::size_t w = in.u32();
    if (in.remaining() != h * w * 4) throw FormatError(path.string() + ": density payload size mismatch");
    Tensor values(Shape{1, h, w});
    for (double& x : values.data()) x = static_cast<double>(in.f32());
    return DensityMap{std::move(values)};
}

}  // namespace dub
