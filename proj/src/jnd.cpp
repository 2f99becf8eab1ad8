#include "actidx/jnd.hpp"

#include <algorithm>
#include <cmath>

namespace actidx {

float JndMap::max_value() const {
    float m = 0.0f;
    for (float v : data) m = std::max(m, v);
    return m;
}

JndMap jnd_map(const Image& img) {
    const int h = img.height, w = img.width;
    const std::vector<float> lum = luminance(img);
    auto Y = [&](int y, int x) {
        y = std::clamp(y, 0, h - 1);
        x = std::clamp(x, 0, w - 1);
        return static_cast<double>(lum[static_cast<std::size_t>(y) * w + x]);
    };

    JndMap map;
    map.height = h;
    map.width = w;
    map.data.resize(img.data.size());

    // channel scalings 0.072 / (0.299, 0.587, 0.114)
    const double chan[3] = {0.072 / 0.299, 0.072 / 0.587, 0.072 / 0.114};

    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            // 3x3 Sobel, edge clamp
            const double gx = -Y(y - 1, x - 1) + Y(y - 1, x + 1) - 2.0 * Y(y, x - 1) +
                              2.0 * Y(y, x + 1) - Y(y + 1, x - 1) + Y(y + 1, x + 1);
            const double gy = -Y(y - 1, x - 1) - 2.0 * Y(y - 1, x) - Y(y - 1, x + 1) +
                              Y(y + 1, x - 1) + 2.0 * Y(y + 1, x) + Y(y + 1, x + 1);
            const double cl = std::sqrt(gx * gx + gy * gy);
            const double mc = 0.115 * (16.0 * std::pow(cl, 2.4)) / (cl * cl + 26.0 * 26.0);

            double b = 0.0;
            for (int dy = -2; dy <= 2; ++dy)
                for (int dx = -2; dx <= 2; ++dx) b += Y(y + dy, x + dx);
            b /= 25.0;
            const double la = b < 127.0 ? 17.0 * (1.0 - std::sqrt(b / 127.0))
                                        : 3.0 * (b - 127.0) / 128.0 + 3.0;

            const double hjnd = la + mc - 0.3 * std::min(la, mc);
            for (int c = 0; c < 3; ++c)
                map.data[(static_cast<std::size_t>(y) * w + x) * 3 + c] =
                    static_cast<float>(chan[c] * hjnd);
        }
    }
    return map;
}

} // namespace actidx
