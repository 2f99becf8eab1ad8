#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "actidx/image.hpp"

namespace actidx {

enum class TransformKind {
    identity,
    brightness,
    contrast,
    hue,
    blur,
    rotate,
    center_crop,
    resize,
    gaussian_noise,
};

// parameter semantics per kind: brightness/contrast factor, hue shift in
// turns, blur sigma, rotate degrees, crop/resize area ratio, noise sigma.
struct TransformSpec {
    TransformKind kind = TransformKind::identity;
    double parameter = 0.0;
    std::uint64_t seed = 0; // gaussian_noise only

    static TransformSpec make(TransformKind k, double p = 0.0, std::uint64_t s = 0) {
        return TransformSpec{k, p, s};
    }
};

TransformKind transform_kind_from_name(std::string_view name);
std::string_view transform_kind_name(TransformKind kind);
// short label like "blur_2" used in reports and CSV rows
std::string transform_label(const TransformSpec& spec);

// throws std::invalid_argument on out-of-range or non-finite parameters
void validate_transform(const TransformSpec& spec);

Image apply_transform(const Image& image, const TransformSpec& spec);

// truncated Gaussian taps, radius ceil(3*sigma), normalized to sum 1
std::vector<double> gaussian_kernel(double sigma);

// separable Gaussian blur with edge-clamp padding (shared with EoT)
Image gaussian_blur(const Image& image, double sigma);

// bilinear resize with half-pixel centers; exact identity when sizes match
Image resize_bilinear(const Image& image, int out_h, int out_w);

// bilinear rotation by `degrees` about the image center, black fill,
// canvas size preserved; exact permutation at multiples of 90 degrees
Image rotate_bilinear(const Image& image, double degrees);

} // namespace actidx
