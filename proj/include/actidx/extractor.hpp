#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "actidx/image.hpp"

namespace actidx {

// unit-norm embedding; dimension fixed by the extractor (default 64)
using FeatureVector = std::vector<float>;

// d(loss)/d(pixel value), same raster shape as the source image
struct PixelGradient {
    int height = 0;
    int width = 0;
    std::vector<float> data; // interleaved RGB like Image

    float at(int y, int x, int c) const {
        return data[(static_cast<std::size_t>(y) * width + x) * 3 + c];
    }
};

struct ExtractorConfig {
    int input_resolution = 64; // must be a multiple of 8
    int feature_dim = 64;
};

// Parameters are a pure function of (seed, architecture); reinitializing
// with the same seed reproduces them bit-exactly.
struct ExtractorWeights {
    std::uint64_t seed = 0;
    int input_resolution = 64;
    int feature_dim = 64;
    std::vector<float> parameters;
};

ExtractorWeights init_weights(std::uint64_t seed, const ExtractorConfig& cfg = {});

std::size_t extractor_param_count(const ExtractorConfig& cfg);

// little-endian binary: "AXWT", u32 version, u64 seed, u32 resolution,
// u32 feature dim, u64 param count, raw f32 parameters
void save_weights(const ExtractorWeights& w, const std::string& path);
ExtractorWeights load_weights(const std::string& path);

// Small fixed conv net: bilinear resize to RxR, per-channel affine
// normalization, three stride-2 tanh conv layers (3->16->32->64), global
// average pool, linear projection, L2 normalization.  Forward and backward
// run in double precision; the reverse pass is the exact adjoint of the
// forward pipeline including the resize and the normalization Jacobian.
class Extractor {
public:
    explicit Extractor(ExtractorWeights weights);

    const ExtractorWeights& weights() const { return weights_; }
    int feature_dim() const { return weights_.feature_dim; }
    int input_resolution() const { return weights_.input_resolution; }

    // Cached activations from one forward pass, reusable for backward.
    struct Trace {
        int in_h = 0, in_w = 0;
        std::vector<double> input;   // 3 * R * R, normalized
        std::vector<double> act1, act2, act3;
        std::vector<double> pooled;  // conv3 channels
        std::vector<double> pre_norm;
        std::vector<double> feature; // unit norm
        double pre_norm_len = 0.0;
    };

    Trace forward(const Image& image) const;
    FeatureVector extract(const Image& image) const;

    // gradient of <f(image), upstream> with respect to every input pixel
    PixelGradient backward(const Image& image, std::span<const float> upstream) const;
    PixelGradient backward(const Trace& trace, std::span<const double> upstream) const;

private:
    ExtractorWeights weights_;
    std::vector<double> params_; // double copy used for arithmetic
};

} // namespace actidx
