#include "actidx/transforms.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "actidx/rng.hpp"

namespace actidx {

namespace {

constexpr double kPi = 3.14159265358979323846;

struct KindName {
    TransformKind kind;
    std::string_view name;
};

constexpr KindName kKindNames[] = {
    {TransformKind::identity, "identity"},
    {TransformKind::brightness, "brightness"},
    {TransformKind::contrast, "contrast"},
    {TransformKind::hue, "hue"},
    {TransformKind::blur, "blur"},
    {TransformKind::rotate, "rotate"},
    {TransformKind::center_crop, "center_crop"},
    {TransformKind::resize, "resize"},
    {TransformKind::gaussian_noise, "gaussian_noise"},
};

double image_mean_luminance(const Image& img) {
    double sum = 0.0;
    const float* p = img.data.data();
    const std::size_t n = static_cast<std::size_t>(img.height) * img.width;
    for (std::size_t i = 0; i < n; ++i, p += 3)
        sum += 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2];
    return sum / static_cast<double>(n);
}

void rgb_to_hsv(double r, double g, double b, double& h, double& s, double& v) {
    double maxc = std::max(r, std::max(g, b));
    double minc = std::min(r, std::min(g, b));
    double delta = maxc - minc;
    v = maxc;
    s = maxc > 0.0 ? delta / maxc : 0.0;
    if (delta == 0.0) {
        h = 0.0;
    } else if (maxc == r) {
        h = std::fmod((g - b) / delta, 6.0);
        if (h < 0.0) h += 6.0;
        h /= 6.0;
    } else if (maxc == g) {
        h = ((b - r) / delta + 2.0) / 6.0;
    } else {
        h = ((r - g) / delta + 4.0) / 6.0;
    }
}

void hsv_to_rgb(double h, double s, double v, double& r, double& g, double& b) {
    if (s == 0.0) {
        r = g = b = v;
        return;
    }
    double h6 = h * 6.0;
    if (h6 >= 6.0) h6 -= 6.0;
    int sector = static_cast<int>(h6);
    double f = h6 - sector;
    double p = v * (1.0 - s);
    double q = v * (1.0 - s * f);
    double t = v * (1.0 - s * (1.0 - f));
    switch (sector) {
        case 0: r = v; g = t; b = p; break;
        case 1: r = q; g = v; b = p; break;
        case 2: r = p; g = v; b = t; break;
        case 3: r = p; g = q; b = v; break;
        case 4: r = t; g = p; b = v; break;
        default: r = v; g = p; b = q; break;
    }
}

Image hue_shift(const Image& img, double turns) {
    Image out(img.height, img.width);
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) {
            double r = img.at(y, x, 0) / 255.0;
            double g = img.at(y, x, 1) / 255.0;
            double b = img.at(y, x, 2) / 255.0;
            double h, s, v;
            rgb_to_hsv(r, g, b, h, s, v);
            h = std::fmod(h + turns, 1.0);
            if (h < 0.0) h += 1.0;
            hsv_to_rgb(h, s, v, r, g, b);
            out.at(y, x, 0) = static_cast<float>(r * 255.0);
            out.at(y, x, 1) = static_cast<float>(g * 255.0);
            out.at(y, x, 2) = static_cast<float>(b * 255.0);
        }
    }
    return out;
}

Image center_crop(const Image& img, double area_ratio) {
    double side = std::sqrt(area_ratio);
    int nh = std::max(1, static_cast<int>(std::lround(img.height * side)));
    int nw = std::max(1, static_cast<int>(std::lround(img.width * side)));
    nh = std::min(nh, img.height);
    nw = std::min(nw, img.width);
    int oy = (img.height - nh) / 2;
    int ox = (img.width - nw) / 2;
    Image out(nh, nw);
    for (int y = 0; y < nh; ++y)
        for (int x = 0; x < nw; ++x)
            for (int c = 0; c < 3; ++c)
                out.at(y, x, c) = img.at(oy + y, ox + x, c);
    return out;
}

Image add_gaussian_noise(const Image& img, double sigma, std::uint64_t seed) {
    if (sigma == 0.0) return img;
    Image out = img;
    Rng rng = derive_rng(seed, "gaussian_noise");
    for (float& v : out.data)
        v = static_cast<float>(v + sigma * rng.normal());
    out.clamp();
    return out;
}

} // namespace

TransformKind transform_kind_from_name(std::string_view name) {
    for (const auto& kn : kKindNames)
        if (kn.name == name) return kn.kind;
    throw std::invalid_argument("unknown transform kind: " + std::string(name));
}

std::string_view transform_kind_name(TransformKind kind) {
    for (const auto& kn : kKindNames)
        if (kn.kind == kind) return kn.name;
    return "unknown";
}

std::string transform_label(const TransformSpec& spec) {
    if (spec.kind == TransformKind::identity) return "identity";
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%s_%g", std::string(transform_kind_name(spec.kind)).c_str(),
                  spec.parameter);
    return buf;
}

void validate_transform(const TransformSpec& spec) {
    if (spec.kind != TransformKind::identity && !std::isfinite(spec.parameter))
        throw std::invalid_argument("transform parameter must be finite");
    switch (spec.kind) {
        case TransformKind::brightness:
        case TransformKind::contrast:
            if (spec.parameter <= 0.0)
                throw std::invalid_argument("brightness/contrast factor must be > 0");
            break;
        case TransformKind::center_crop:
        case TransformKind::resize:
            if (spec.parameter <= 0.0 || spec.parameter > 1.0)
                throw std::invalid_argument("crop/resize area ratio must be in (0, 1]");
            break;
        case TransformKind::blur:
        case TransformKind::gaussian_noise:
            if (spec.parameter < 0.0)
                throw std::invalid_argument("sigma must be >= 0");
            break;
        default:
            break;
    }
}

std::vector<double> gaussian_kernel(double sigma) {
    if (sigma <= 0.0) return {1.0};
    int radius = static_cast<int>(std::ceil(3.0 * sigma));
    std::vector<double> k(2 * radius + 1);
    double sum = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        k[i + radius] = std::exp(-0.5 * (i * i) / (sigma * sigma));
        sum += k[i + radius];
    }
    for (double& v : k) v /= sum;
    return k;
}

Image gaussian_blur(const Image& img, double sigma) {
    const auto kernel = gaussian_kernel(sigma);
    const int radius = static_cast<int>(kernel.size() / 2);
    if (radius == 0) return img;
    const int h = img.height, w = img.width;
    // horizontal then vertical; edge clamp in each pass matches a dense
    // 2-D convolution with per-axis clamped indices
    std::vector<double> tmp(static_cast<std::size_t>(h) * w * 3);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            for (int c = 0; c < 3; ++c) {
                double acc = 0.0;
                for (int i = -radius; i <= radius; ++i) {
                    int sx = std::clamp(x + i, 0, w - 1);
                    acc += kernel[i + radius] * img.at(y, sx, c);
                }
                tmp[(static_cast<std::size_t>(y) * w + x) * 3 + c] = acc;
            }
        }
    }
    Image out(h, w);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            for (int c = 0; c < 3; ++c) {
                double acc = 0.0;
                for (int i = -radius; i <= radius; ++i) {
                    int sy = std::clamp(y + i, 0, h - 1);
                    acc += kernel[i + radius] * tmp[(static_cast<std::size_t>(sy) * w + x) * 3 + c];
                }
                out.at(y, x, c) = static_cast<float>(acc);
            }
        }
    }
    return out;
}

Image resize_bilinear(const Image& img, int out_h, int out_w) {
    if (out_h < 1 || out_w < 1) throw std::invalid_argument("resize: output too small");
    if (out_h == img.height && out_w == img.width) return img;
    Image out(out_h, out_w);
    const double sy_scale = static_cast<double>(img.height) / out_h;
    const double sx_scale = static_cast<double>(img.width) / out_w;
    for (int y = 0; y < out_h; ++y) {
        double sy = (y + 0.5) * sy_scale - 0.5;
        sy = std::clamp(sy, 0.0, static_cast<double>(img.height - 1));
        int y0 = static_cast<int>(sy);
        int y1 = std::min(y0 + 1, img.height - 1);
        double fy = sy - y0;
        for (int x = 0; x < out_w; ++x) {
            double sx = (x + 0.5) * sx_scale - 0.5;
            sx = std::clamp(sx, 0.0, static_cast<double>(img.width - 1));
            int x0 = static_cast<int>(sx);
            int x1 = std::min(x0 + 1, img.width - 1);
            double fx = sx - x0;
            for (int c = 0; c < 3; ++c) {
                double v = (1.0 - fy) * ((1.0 - fx) * img.at(y0, x0, c) + fx * img.at(y0, x1, c)) +
                           fy * ((1.0 - fx) * img.at(y1, x0, c) + fx * img.at(y1, x1, c));
                out.at(y, x, c) = static_cast<float>(v);
            }
        }
    }
    return out;
}

Image rotate_bilinear(const Image& img, double degrees) {
    double turns = std::fmod(degrees, 360.0);
    if (turns < 0.0) turns += 360.0;
    if (turns == 0.0) return img;
    double c, s;
    // exact trig at right angles so they stay pixel permutations
    if (turns == 90.0) {
        c = 0.0;
        s = 1.0;
    } else if (turns == 180.0) {
        c = -1.0;
        s = 0.0;
    } else if (turns == 270.0) {
        c = 0.0;
        s = -1.0;
    } else {
        double rad = turns * kPi / 180.0;
        c = std::cos(rad);
        s = std::sin(rad);
    }
    const int h = img.height, w = img.width;
    const double cy = (h - 1) / 2.0;
    const double cx = (w - 1) / 2.0;
    Image out(h, w);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            // inverse mapping of a counterclockwise rotation
            double dx = x - cx, dy = y - cy;
            double sx = cx + c * dx + s * dy;
            double sy = cy - s * dx + c * dy;
            int x0 = static_cast<int>(std::floor(sx));
            int y0 = static_cast<int>(std::floor(sy));
            double fx = sx - x0;
            double fy = sy - y0;
            for (int ch = 0; ch < 3; ++ch) {
                auto tap = [&](int yy, int xx) -> double {
                    if (yy < 0 || yy >= h || xx < 0 || xx >= w) return 0.0; // black fill
                    return img.at(yy, xx, ch);
                };
                double v = (1.0 - fy) * ((1.0 - fx) * tap(y0, x0) + fx * tap(y0, x0 + 1)) +
                           fy * ((1.0 - fx) * tap(y0 + 1, x0) + fx * tap(y0 + 1, x0 + 1));
                out.at(y, x, ch) = static_cast<float>(v);
            }
        }
    }
    return out;
}

Image apply_transform(const Image& img, const TransformSpec& spec) {
    validate_transform(spec);
    switch (spec.kind) {
        case TransformKind::identity:
            return img;
        case TransformKind::brightness: {
            if (spec.parameter == 1.0) return img;
            Image out = img;
            float f = static_cast<float>(spec.parameter);
            for (float& v : out.data) v *= f;
            out.clamp();
            return out;
        }
        case TransformKind::contrast: {
            if (spec.parameter == 1.0) return img;
            Image out = img;
            double mean = image_mean_luminance(img);
            double f = spec.parameter;
            for (float& v : out.data) v = static_cast<float>(mean + f * (v - mean));
            out.clamp();
            return out;
        }
        case TransformKind::hue: {
            if (spec.parameter == 0.0) return img;
            Image out = hue_shift(img, spec.parameter);
            out.clamp();
            return out;
        }
        case TransformKind::blur: {
            Image out = gaussian_blur(img, spec.parameter);
            out.clamp();
            return out;
        }
        case TransformKind::rotate: {
            Image out = rotate_bilinear(img, spec.parameter);
            out.clamp();
            return out;
        }
        case TransformKind::center_crop:
            return center_crop(img, spec.parameter);
        case TransformKind::resize: {
            double side = std::sqrt(spec.parameter);
            int nh = std::max(1, static_cast<int>(std::lround(img.height * side)));
            int nw = std::max(1, static_cast<int>(std::lround(img.width * side)));
            Image out = resize_bilinear(img, nh, nw);
            out.clamp();
            return out;
        }
        case TransformKind::gaussian_noise:
            return add_gaussian_noise(img, spec.parameter, spec.seed);
    }
    throw std::invalid_argument("unreachable transform kind");
}

} // namespace actidx
