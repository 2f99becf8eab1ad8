#include "actidx/image.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

#include "actidx/errors.hpp"

namespace actidx {

Image::Image(int h, int w, float fill) : height(h), width(w) {
    if (h < 1 || w < 1) throw std::invalid_argument("image dimensions must be positive");
    data.assign(static_cast<std::size_t>(h) * w * 3, fill);
}

void Image::clamp() {
    for (float& v : data) v = std::min(255.0f, std::max(0.0f, v));
}

double psnr(const Image& a, const Image& b) {
    if (!a.same_shape(b)) throw std::invalid_argument("psnr: dimension mismatch");
    double se = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        double d = static_cast<double>(a.data[i]) - b.data[i];
        se += d * d;
    }
    double mse = se / static_cast<double>(a.data.size());
    if (mse == 0.0) return 99.0;
    return std::min(99.0, 10.0 * std::log10(255.0 * 255.0 / mse));
}

double linf(const Image& a, const Image& b) {
    if (!a.same_shape(b)) throw std::invalid_argument("linf: dimension mismatch");
    double m = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i)
        m = std::max(m, std::abs(static_cast<double>(a.data[i]) - b.data[i]));
    return m;
}

QualityStats quality_stats(const Image& reference, const Image& candidate) {
    return QualityStats{psnr(reference, candidate), linf(reference, candidate)};
}

std::vector<float> luminance(const Image& img) {
    std::vector<float> y(static_cast<std::size_t>(img.height) * img.width);
    const float* p = img.data.data();
    for (std::size_t i = 0; i < y.size(); ++i, p += 3)
        y[i] = 0.299f * p[0] + 0.587f * p[1] + 0.114f * p[2];
    return y;
}

std::vector<std::uint8_t> encode_ppm(const Image& img) {
    char header[64];
    int n = std::snprintf(header, sizeof(header), "P6\n%d %d\n255\n", img.width, img.height);
    std::vector<std::uint8_t> out;
    out.reserve(static_cast<std::size_t>(n) + img.data.size());
    out.insert(out.end(), header, header + n);
    for (float v : img.data) {
        long q = std::lround(v);
        q = std::min(255L, std::max(0L, q));
        out.push_back(static_cast<std::uint8_t>(q));
    }
    return out;
}

namespace {

// Reads one whitespace-delimited header token, skipping '#' comments.
// Returns the non-negative integer value or throws FormatError at pos.
long ppm_token(std::span<const std::uint8_t> bytes, std::size_t& pos) {
    while (pos < bytes.size()) {
        std::uint8_t c = bytes[pos];
        if (c == '#') {
            while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
        } else if (c == ' ' || c == '\t' || c == '\r' || c == '\n') {
            ++pos;
        } else {
            break;
        }
    }
    if (pos >= bytes.size() || bytes[pos] < '0' || bytes[pos] > '9')
        throw FormatError("ppm: expected integer header field", static_cast<long>(pos));
    long value = 0;
    while (pos < bytes.size() && bytes[pos] >= '0' && bytes[pos] <= '9') {
        value = value * 10 + (bytes[pos] - '0');
        if (value > 1000000) throw FormatError("ppm: header field out of range", static_cast<long>(pos));
        ++pos;
    }
    return value;
}

} // namespace

Image decode_ppm(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '6')
        throw FormatError("ppm: missing P6 magic", 0);
    std::size_t pos = 2;
    long w = ppm_token(bytes, pos);
    long h = ppm_token(bytes, pos);
    long maxval = ppm_token(bytes, pos);
    if (w < 1 || h < 1) throw FormatError("ppm: invalid dimensions", static_cast<long>(pos));
    if (maxval != 255) throw FormatError("ppm: only maxval 255 supported", static_cast<long>(pos));
    if (pos >= bytes.size()) throw FormatError("ppm: truncated after header", static_cast<long>(pos));
    std::uint8_t sep = bytes[pos];
    if (sep != ' ' && sep != '\t' && sep != '\r' && sep != '\n')
        throw FormatError("ppm: missing whitespace after maxval", static_cast<long>(pos));
    ++pos;
    const std::size_t expected = static_cast<std::size_t>(w) * h * 3;
    if (bytes.size() - pos < expected)
        throw FormatError("ppm: truncated payload", static_cast<long>(bytes.size()));
    Image img(static_cast<int>(h), static_cast<int>(w));
    for (std::size_t i = 0; i < expected; ++i)
        img.data[i] = static_cast<float>(bytes[pos + i]);
    return img;
}

Image load_ppm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                    std::istreambuf_iterator<char>());
    return decode_ppm(bytes);
}

void save_ppm(const Image& img, const std::string& path) {
    auto bytes = encode_ppm(img);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("short write to " + path);
}

} // namespace actidx
