#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace actidx {

// 3-channel float raster, values in [0, 255], row-major with interleaved
// RGB samples: data[(y*width + x)*3 + c].  Operations that return images
// clamp to [0, 255]; pipeline inputs (corpus, extractor, activation) are at
// least 8x8.  The struct itself allows any positive size so that tiny codec
// fixtures remain constructible.
struct Image {
    int height = 0;
    int width = 0;
    static constexpr int channels = 3;
    std::vector<float> data;

    Image() = default;
    Image(int h, int w, float fill = 0.0f);

    float& at(int y, int x, int c) {
        return data[(static_cast<std::size_t>(y) * width + x) * 3 + c];
    }
    float at(int y, int x, int c) const {
        return data[(static_cast<std::size_t>(y) * width + x) * 3 + c];
    }
    std::size_t size() const { return data.size(); }
    bool same_shape(const Image& o) const { return height == o.height && width == o.width; }

    void clamp();
};

// minimum side length for pipeline images (corpus generation, extraction)
inline constexpr int kMinImageSide = 8;

struct QualityStats {
    double psnr_db = 0.0;
    double linf = 0.0;
};

// PSNR in dB over all pixels and channels, capped at 99.0 (the documented
// value for identical images).
double psnr(const Image& a, const Image& b);

// max_{p,c} |a - b|
double linf(const Image& a, const Image& b);

QualityStats quality_stats(const Image& reference, const Image& candidate);

// per-pixel luminance, Y = 0.299 R + 0.587 G + 0.114 B
std::vector<float> luminance(const Image& img);

// Binary PPM (P6, maxval 255).  Encoding rounds to the nearest integer in
// [0, 255]; decode(encode(x)) == round(x).
std::vector<std::uint8_t> encode_ppm(const Image& img);
Image decode_ppm(std::span<const std::uint8_t> bytes);

Image load_ppm(const std::string& path);
void save_ppm(const Image& img, const std::string& path);

} // namespace actidx
