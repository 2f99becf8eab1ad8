#include "actidx/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "actidx/rng.hpp"
#include "actidx/transforms.hpp"

namespace actidx {

namespace {

// bilinearly interpolated random lattice, values in [-1, 1]
struct ValueNoise {
    int cells;
    std::vector<double> grid; // (cells+1)^2

    ValueNoise(int cells_, Rng& rng) : cells(cells_), grid((cells_ + 1) * (cells_ + 1)) {
        for (double& v : grid) v = rng.uniform(-1.0, 1.0);
    }

    double sample(double u, double v) const {
        double gu = u * cells, gv = v * cells;
        int x0 = std::min(static_cast<int>(gu), cells - 1);
        int y0 = std::min(static_cast<int>(gv), cells - 1);
        double fx = gu - x0, fy = gv - y0;
        auto g = [&](int y, int x) { return grid[y * (cells + 1) + x]; };
        return (1 - fy) * ((1 - fx) * g(y0, x0) + fx * g(y0, x0 + 1)) +
               fy * ((1 - fx) * g(y0 + 1, x0) + fx * g(y0 + 1, x0 + 1));
    }
};

void fill_gradient(Image& img, Rng& rng) {
    double angle = rng.uniform(0.0, 6.283185307179586);
    double dx = std::cos(angle), dy = std::sin(angle);
    double c0[3], c1[3];
    for (int c = 0; c < 3; ++c) {
        c0[c] = rng.uniform(50.0, 210.0);
        c1[c] = rng.uniform(50.0, 210.0);
    }
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) {
            double u = x / static_cast<double>(img.width - 1) - 0.5;
            double v = y / static_cast<double>(img.height - 1) - 0.5;
            double t = std::clamp(0.5 + u * dx + v * dy, 0.0, 1.0);
            for (int c = 0; c < 3; ++c)
                img.at(y, x, c) = static_cast<float>(c0[c] + t * (c1[c] - c0[c]));
        }
    }
}

void fill_noise_texture(Image& img, Rng& rng) {
    double base[3];
    for (int c = 0; c < 3; ++c) base[c] = rng.uniform(90.0, 170.0);
    // octaves from very coarse to per-pixel, amplitude decaying per octave;
    // separate lattices per channel so chroma varies too
    std::vector<ValueNoise> octaves[3];
    double chroma = rng.uniform(0.2, 1.0); // how independently channels move
    for (int c = 0; c < 3; ++c)
        for (int cells : {4, 8, 16, 32, 64})
            octaves[c].emplace_back(std::min(cells, img.width), rng);
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) {
            double u = x / static_cast<double>(img.width);
            double v = y / static_cast<double>(img.height);
            double shared = 0.0;
            for (int c = 0; c < 3; ++c) {
                double n = 0.0, amp = 1.0;
                for (const auto& o : octaves[c]) {
                    n += amp * o.sample(u, v);
                    amp *= 0.55;
                }
                if (c == 0) shared = n;
                n = chroma * n + (1.0 - chroma) * shared;
                img.at(y, x, c) = static_cast<float>(base[c] + 38.0 * n);
            }
        }
    }
}

void fill_flat(Image& img, Rng& rng) {
    float col[3];
    for (int c = 0; c < 3; ++c) col[c] = static_cast<float>(rng.uniform(60.0, 200.0));
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
            for (int c = 0; c < 3; ++c) img.at(y, x, c) = col[c];
}

void fill_grating(Image& img, Rng& rng) {
    double c0[3], c1[3];
    for (int c = 0; c < 3; ++c) {
        c0[c] = rng.uniform(60.0, 200.0);
        c1[c] = rng.uniform(60.0, 200.0);
    }
    double angle = rng.uniform(0.0, 6.283185307179586);
    double freq = rng.uniform(1.5, 6.0) * 6.283185307179586; // cycles over the image
    double phase = rng.uniform(0.0, 6.283185307179586);
    bool square = rng.next_below(2) == 0; // hard stripes or smooth waves
    double dx = std::cos(angle), dy = std::sin(angle);
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) {
            double u = x / static_cast<double>(img.width);
            double v = y / static_cast<double>(img.height);
            double s = std::sin(freq * (u * dx + v * dy) + phase);
            double t = square ? (s >= 0.0 ? 1.0 : 0.0) : 0.5 + 0.5 * s;
            for (int c = 0; c < 3; ++c)
                img.at(y, x, c) = static_cast<float>(c0[c] + t * (c1[c] - c0[c]));
        }
    }
}

void draw_shapes(Image& img, Rng& rng) {
    int count = 2 + static_cast<int>(rng.next_below(5));
    for (int s = 0; s < count; ++s) {
        double col[3];
        for (int c = 0; c < 3; ++c) col[c] = rng.uniform(50.0, 210.0);
        bool circle = rng.next_below(2) == 0;
        double cxp = rng.uniform(0.1, 0.9) * img.width;
        double cyp = rng.uniform(0.1, 0.9) * img.height;
        double r = rng.uniform(0.06, 0.35) * std::min(img.width, img.height);
        double aspect = circle ? 1.0 : rng.uniform(0.3, 2.5);
        double angle = rng.uniform(0.0, 6.283185307179586);
        double ca = std::cos(angle), sa = std::sin(angle);
        for (int y = 0; y < img.height; ++y) {
            for (int x = 0; x < img.width; ++x) {
                double rx = (x - cxp) * ca - (y - cyp) * sa;
                double ry = (x - cxp) * sa + (y - cyp) * ca;
                double dx = rx / r, dy = ry / (r * aspect);
                bool inside = circle ? (dx * dx + dy * dy <= 1.0)
                                     : (std::abs(dx) <= 1.0 && std::abs(dy) <= 1.0);
                if (inside)
                    for (int c = 0; c < 3; ++c) img.at(y, x, c) = static_cast<float>(col[c]);
            }
        }
    }
}

} // namespace

Image generate_corpus_image(std::uint64_t seed, int index, int size) {
    if (size < 16) throw std::invalid_argument("corpus image size must be >= 16");
    Rng rng = derive_rng(seed, "corpus", static_cast<std::uint64_t>(index));
    Image img(size, size);
    switch (rng.next_below(4)) {
        case 0: fill_gradient(img, rng); break;
        case 1: fill_noise_texture(img, rng); break;
        case 2: fill_grating(img, rng); break;
        default: fill_flat(img, rng); break;
    }
    draw_shapes(img, rng);
    // half the images get a light fine-grain overlay; the rest keep their
    // flat regions untouched
    if (rng.next_below(2) == 0) {
        ValueNoise grain(std::min(size, 64), rng);
        for (int y = 0; y < img.height; ++y)
            for (int x = 0; x < img.width; ++x) {
                const double g = 9.0 * grain.sample(x / static_cast<double>(img.width),
                                                    y / static_cast<double>(img.height));
                for (int c = 0; c < 3; ++c) img.at(y, x, c) += static_cast<float>(g);
            }
    }
    // soft focus over most of the corpus keeps edge sharpness varied
    std::uint64_t blur_pick = rng.next_below(4);
    img.clamp();
    if (blur_pick == 1) img = apply_transform(img, TransformSpec::make(TransformKind::blur, 0.8));
    if (blur_pick == 2) img = apply_transform(img, TransformSpec::make(TransformKind::blur, 1.3));
    if (blur_pick == 3) img = apply_transform(img, TransformSpec::make(TransformKind::blur, 1.8));
    return img;
}

std::vector<Image> generate_corpus(std::uint64_t seed, int count, int size) {
    if (count < 1) throw std::invalid_argument("corpus count must be >= 1");
    std::vector<Image> out;
    out.reserve(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) out.push_back(generate_corpus_image(seed, i, size));
    return out;
}

} // namespace actidx
