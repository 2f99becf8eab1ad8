#pragma once

#include <vector>

#include "actidx/image.hpp"

namespace actidx {

// Per-pixel, per-channel just-noticeable-difference amplitudes in pixel
// units; entries are strictly positive.
struct JndMap {
    int height = 0;
    int width = 0;
    std::vector<float> data; // interleaved RGB, like Image

    float at(int y, int x, int c) const {
        return data[(static_cast<std::size_t>(y) * width + x) * 3 + c];
    }
    float max_value() const;
};

// Luminance JND combining contrast masking (Sobel gradient magnitude) and
// luminance adaptation (5x5 background mean), merged with the nonlinear
// additivity rule and rescaled per channel by the inverse luminance mixing
// coefficients.
JndMap jnd_map(const Image& image);

} // namespace actidx
