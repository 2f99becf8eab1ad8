#include "actidx/extractor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "actidx/errors.hpp"
#include "actidx/rng.hpp"

namespace actidx {

namespace {

struct ConvSpec {
    int in_ch, out_ch, ksize, stride, pad;
};

constexpr ConvSpec kConvs[3] = {
    {3, 16, 5, 2, 2},
    {16, 32, 5, 2, 2},
    {32, 64, 3, 2, 1},
};

constexpr int kPoolChannels = 64; // conv3 output channels

// Input normalization: (v - kInputShift) / kInputScale.  Inputs are
// centered but not rescaled, so the first tanh layer operates as a soft
// sign of local contrast; descriptors are carried by those sign patterns.
constexpr double kInputShift = 127.5;
constexpr double kInputScale = 1.0;

int conv_out_side(int in, const ConvSpec& c) {
    return (in + 2 * c.pad - c.ksize) / c.stride + 1;
}

struct Layout {
    // parameter offsets: conv weights/biases then fc weight/bias
    std::size_t conv_w[3], conv_b[3], fc_w, fc_b, total;
    int side[4]; // spatial side before conv1 and after each conv
};

Layout make_layout(int resolution, int feature_dim) {
    Layout l{};
    std::size_t off = 0;
    l.side[0] = resolution;
    for (int i = 0; i < 3; ++i) {
        const auto& c = kConvs[i];
        l.conv_w[i] = off;
        off += static_cast<std::size_t>(c.out_ch) * c.in_ch * c.ksize * c.ksize;
        l.conv_b[i] = off;
        off += static_cast<std::size_t>(c.out_ch);
        l.side[i + 1] = conv_out_side(l.side[i], c);
    }
    l.fc_w = off;
    off += static_cast<std::size_t>(feature_dim) * kPoolChannels;
    l.fc_b = off;
    off += static_cast<std::size_t>(feature_dim);
    l.total = off;
    return l;
}

void check_config(int resolution, int feature_dim) {
    if (resolution < 16 || resolution % 8 != 0)
        throw std::invalid_argument("extractor resolution must be a multiple of 8, >= 16");
    if (feature_dim < 1) throw std::invalid_argument("feature_dim must be >= 1");
}

// bilinear resize of an interleaved float image into planar doubles,
// half-pixel centers, with the per-channel affine normalization fused in
void resize_normalize(const Image& img, int res, std::vector<double>& out) {
    out.assign(static_cast<std::size_t>(3) * res * res, 0.0);
    const double sy_scale = static_cast<double>(img.height) / res;
    const double sx_scale = static_cast<double>(img.width) / res;
    const std::size_t plane = static_cast<std::size_t>(res) * res;
    for (int y = 0; y < res; ++y) {
        double sy = std::clamp((y + 0.5) * sy_scale - 0.5, 0.0, static_cast<double>(img.height - 1));
        int y0 = static_cast<int>(sy);
        int y1 = std::min(y0 + 1, img.height - 1);
        double fy = sy - y0;
        for (int x = 0; x < res; ++x) {
            double sx = std::clamp((x + 0.5) * sx_scale - 0.5, 0.0, static_cast<double>(img.width - 1));
            int x0 = static_cast<int>(sx);
            int x1 = std::min(x0 + 1, img.width - 1);
            double fx = sx - x0;
            for (int c = 0; c < 3; ++c) {
                double v = (1.0 - fy) * ((1.0 - fx) * img.at(y0, x0, c) + fx * img.at(y0, x1, c)) +
                           fy * ((1.0 - fx) * img.at(y1, x0, c) + fx * img.at(y1, x1, c));
                out[c * plane + static_cast<std::size_t>(y) * res + x] = (v - kInputShift) / kInputScale;
            }
        }
    }
}

// adjoint of resize_normalize: scatters gradients back to pixel space
void resize_normalize_adjoint(const std::vector<double>& grad, int res, int in_h, int in_w,
                              std::vector<double>& out) {
    out.assign(static_cast<std::size_t>(in_h) * in_w * 3, 0.0);
    const double sy_scale = static_cast<double>(in_h) / res;
    const double sx_scale = static_cast<double>(in_w) / res;
    const std::size_t plane = static_cast<std::size_t>(res) * res;
    auto pix = [&](int y, int x, int c) -> double& {
        return out[(static_cast<std::size_t>(y) * in_w + x) * 3 + c];
    };
    for (int y = 0; y < res; ++y) {
        double sy = std::clamp((y + 0.5) * sy_scale - 0.5, 0.0, static_cast<double>(in_h - 1));
        int y0 = static_cast<int>(sy);
        int y1 = std::min(y0 + 1, in_h - 1);
        double fy = sy - y0;
        for (int x = 0; x < res; ++x) {
            double sx = std::clamp((x + 0.5) * sx_scale - 0.5, 0.0, static_cast<double>(in_w - 1));
            int x0 = static_cast<int>(sx);
            int x1 = std::min(x0 + 1, in_w - 1);
            double fx = sx - x0;
            for (int c = 0; c < 3; ++c) {
                double g = grad[c * plane + static_cast<std::size_t>(y) * res + x] / kInputScale;
                pix(y0, x0, c) += (1.0 - fy) * (1.0 - fx) * g;
                pix(y0, x1, c) += (1.0 - fy) * fx * g;
                pix(y1, x0, c) += fy * (1.0 - fx) * g;
                pix(y1, x1, c) += fy * fx * g;
            }
        }
    }
}

void conv_tanh_forward(const std::vector<double>& in, int in_side, const ConvSpec& spec,
                       const double* w, const double* b, std::vector<double>& out) {
    const int out_side = conv_out_side(in_side, spec);
    const std::size_t in_plane = static_cast<std::size_t>(in_side) * in_side;
    const std::size_t out_plane = static_cast<std::size_t>(out_side) * out_side;
    out.assign(static_cast<std::size_t>(spec.out_ch) * out_plane, 0.0);
    for (int oc = 0; oc < spec.out_ch; ++oc) {
        double* op = out.data() + oc * out_plane;
        for (std::size_t i = 0; i < out_plane; ++i) op[i] = b[oc];
        for (int ic = 0; ic < spec.in_ch; ++ic) {
            const double* ip = in.data() + ic * in_plane;
            const double* wp = w + ((static_cast<std::size_t>(oc) * spec.in_ch + ic) * spec.ksize) * spec.ksize;
            for (int ky = 0; ky < spec.ksize; ++ky) {
                for (int kx = 0; kx < spec.ksize; ++kx) {
                    const double wv = wp[ky * spec.ksize + kx];
                    for (int oy = 0; oy < out_side; ++oy) {
                        const int iy = oy * spec.stride - spec.pad + ky;
                        if (iy < 0 || iy >= in_side) continue;
                        double* orow = op + static_cast<std::size_t>(oy) * out_side;
                        const double* irow = ip + static_cast<std::size_t>(iy) * in_side;
                        for (int ox = 0; ox < out_side; ++ox) {
                            const int ix = ox * spec.stride - spec.pad + kx;
                            if (ix < 0 || ix >= in_side) continue;
                            orow[ox] += wv * irow[ix];
                        }
                    }
                }
            }
        }
    }
    for (double& v : out) v = std::tanh(v);
}

// gradient through tanh and the convolution, back to the layer input
void conv_tanh_backward(const std::vector<double>& act_out, const std::vector<double>& grad_out,
                        int in_side, const ConvSpec& spec, const double* w,
                        std::vector<double>& grad_in) {
    const int out_side = conv_out_side(in_side, spec);
    const std::size_t in_plane = static_cast<std::size_t>(in_side) * in_side;
    const std::size_t out_plane = static_cast<std::size_t>(out_side) * out_side;
    grad_in.assign(static_cast<std::size_t>(spec.in_ch) * in_plane, 0.0);
    std::vector<double> gpre(out_plane);
    for (int oc = 0; oc < spec.out_ch; ++oc) {
        const double* ap = act_out.data() + oc * out_plane;
        const double* gp = grad_out.data() + oc * out_plane;
        for (std::size_t i = 0; i < out_plane; ++i) gpre[i] = gp[i] * (1.0 - ap[i] * ap[i]);
        for (int ic = 0; ic < spec.in_ch; ++ic) {
            double* gip = grad_in.data() + ic * in_plane;
            const double* wp = w + ((static_cast<std::size_t>(oc) * spec.in_ch + ic) * spec.ksize) * spec.ksize;
            for (int ky = 0; ky < spec.ksize; ++ky) {
                for (int kx = 0; kx < spec.ksize; ++kx) {
                    const double wv = wp[ky * spec.ksize + kx];
                    for (int oy = 0; oy < out_side; ++oy) {
                        const int iy = oy * spec.stride - spec.pad + ky;
                        if (iy < 0 || iy >= in_side) continue;
                        const double* grow = gpre.data() + static_cast<std::size_t>(oy) * out_side;
                        double* girow = gip + static_cast<std::size_t>(iy) * in_side;
                        for (int ox = 0; ox < out_side; ++ox) {
                            const int ix = ox * spec.stride - spec.pad + kx;
                            if (ix < 0 || ix >= in_side) continue;
                            girow[ix] += wv * grow[ox];
                        }
                    }
                }
            }
        }
    }
}

} // namespace

std::size_t extractor_param_count(const ExtractorConfig& cfg) {
    check_config(cfg.input_resolution, cfg.feature_dim);
    return make_layout(cfg.input_resolution, cfg.feature_dim).total;
}

ExtractorWeights init_weights(std::uint64_t seed, const ExtractorConfig& cfg) {
    check_config(cfg.input_resolution, cfg.feature_dim);
    const Layout layout = make_layout(cfg.input_resolution, cfg.feature_dim);
    ExtractorWeights w;
    w.seed = seed;
    w.input_resolution = cfg.input_resolution;
    w.feature_dim = cfg.feature_dim;
    w.parameters.assign(layout.total, 0.0f);
    Rng rng = derive_rng(seed, "extractor-init");
    // He-scaled normals; most of each kernel slice's DC response is removed
    // so channels react to spatial structure rather than collapsing onto
    // the image mean, a small retained fraction keeps coarse luminance.
    constexpr double kDcRetention = 0.3;
    for (int i = 0; i < 3; ++i) {
        const auto& c = kConvs[i];
        const double stddev = std::sqrt(2.0 / (static_cast<double>(c.in_ch) * c.ksize * c.ksize));
        const int taps = c.ksize * c.ksize;
        for (int slice = 0; slice < c.out_ch * c.in_ch; ++slice) {
            double mean = 0.0;
            std::vector<double> vals(taps);
            for (int t = 0; t < taps; ++t) {
                vals[t] = stddev * rng.normal();
                mean += vals[t];
            }
            mean /= taps;
            for (int t = 0; t < taps; ++t)
                w.parameters[layout.conv_w[i] + static_cast<std::size_t>(slice) * taps + t] =
                    static_cast<float>(vals[t] - (1.0 - kDcRetention) * mean);
        }
        // biases stay zero
    }
    const double fc_std = std::sqrt(2.0 / kPoolChannels);
    for (std::size_t j = 0; j < static_cast<std::size_t>(cfg.feature_dim) * kPoolChannels; ++j)
        w.parameters[layout.fc_w + j] = static_cast<float>(fc_std * rng.normal());
    return w;
}

Extractor::Extractor(ExtractorWeights weights) : weights_(std::move(weights)) {
    check_config(weights_.input_resolution, weights_.feature_dim);
    const Layout layout = make_layout(weights_.input_resolution, weights_.feature_dim);
    if (weights_.parameters.size() != layout.total)
        throw std::invalid_argument("extractor parameter count does not match architecture");
    params_.assign(weights_.parameters.begin(), weights_.parameters.end());
    for (double v : params_)
        if (!std::isfinite(v)) throw std::invalid_argument("extractor parameters must be finite");
}

Extractor::Trace Extractor::forward(const Image& image) const {
    if (image.height < kMinImageSide || image.width < kMinImageSide)
        throw std::invalid_argument("extractor input must be at least 8x8");
    const Layout layout = make_layout(weights_.input_resolution, weights_.feature_dim);
    Trace t;
    t.in_h = image.height;
    t.in_w = image.width;
    resize_normalize(image, weights_.input_resolution, t.input);
    conv_tanh_forward(t.input, layout.side[0], kConvs[0], params_.data() + layout.conv_w[0],
                      params_.data() + layout.conv_b[0], t.act1);
    conv_tanh_forward(t.act1, layout.side[1], kConvs[1], params_.data() + layout.conv_w[1],
                      params_.data() + layout.conv_b[1], t.act2);
    conv_tanh_forward(t.act2, layout.side[2], kConvs[2], params_.data() + layout.conv_w[2],
                      params_.data() + layout.conv_b[2], t.act3);
    const int s3 = layout.side[3];
    const std::size_t plane = static_cast<std::size_t>(s3) * s3;
    t.pooled.assign(kPoolChannels, 0.0);
    for (int c = 0; c < kPoolChannels; ++c) {
        double acc = 0.0;
        const double* p = t.act3.data() + c * plane;
        for (std::size_t i = 0; i < plane; ++i) acc += p[i];
        t.pooled[c] = acc / static_cast<double>(plane);
    }
    t.pre_norm.assign(weights_.feature_dim, 0.0);
    const double* fw = params_.data() + layout.fc_w;
    const double* fb = params_.data() + layout.fc_b;
    for (int d = 0; d < weights_.feature_dim; ++d) {
        double acc = fb[d];
        const double* row = fw + static_cast<std::size_t>(d) * kPoolChannels;
        for (int c = 0; c < kPoolChannels; ++c) acc += row[c] * t.pooled[c];
        t.pre_norm[d] = acc;
    }
    double len2 = 0.0;
    for (double v : t.pre_norm) len2 += v * v;
    t.pre_norm_len = std::sqrt(len2);
    if (!(t.pre_norm_len > 1e-12) || !std::isfinite(t.pre_norm_len))
        throw NumericError("extractor produced a degenerate pre-normalization vector");
    t.feature.assign(weights_.feature_dim, 0.0);
    for (int d = 0; d < weights_.feature_dim; ++d) t.feature[d] = t.pre_norm[d] / t.pre_norm_len;
    return t;
}

FeatureVector Extractor::extract(const Image& image) const {
    Trace t = forward(image);
    FeatureVector out(t.feature.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<float>(t.feature[i]);
    return out;
}

PixelGradient Extractor::backward(const Image& image, std::span<const float> upstream) const {
    if (static_cast<int>(upstream.size()) != weights_.feature_dim)
        throw std::invalid_argument("upstream gradient dimension mismatch");
    Trace t = forward(image);
    std::vector<double> up(upstream.begin(), upstream.end());
    return backward(t, up);
}

PixelGradient Extractor::backward(const Trace& t, std::span<const double> upstream) const {
    if (static_cast<int>(upstream.size()) != weights_.feature_dim)
        throw std::invalid_argument("upstream gradient dimension mismatch");
    for (double v : upstream)
        if (!std::isfinite(v)) throw std::invalid_argument("upstream gradient must be finite");
    const Layout layout = make_layout(weights_.input_resolution, weights_.feature_dim);

    // L2 normalization Jacobian: (I - ff^T) / |z|
    double dot = 0.0;
    for (int d = 0; d < weights_.feature_dim; ++d) dot += upstream[d] * t.feature[d];
    std::vector<double> g_z(weights_.feature_dim);
    for (int d = 0; d < weights_.feature_dim; ++d)
        g_z[d] = (upstream[d] - dot * t.feature[d]) / t.pre_norm_len;

    std::vector<double> g_pool(kPoolChannels, 0.0);
    const double* fw = params_.data() + layout.fc_w;
    for (int d = 0; d < weights_.feature_dim; ++d) {
        const double* row = fw + static_cast<std::size_t>(d) * kPoolChannels;
        for (int c = 0; c < kPoolChannels; ++c) g_pool[c] += row[c] * g_z[d];
    }

    const int s3 = layout.side[3];
    const std::size_t plane = static_cast<std::size_t>(s3) * s3;
    std::vector<double> g_act3(static_cast<std::size_t>(kPoolChannels) * plane);
    for (int c = 0; c < kPoolChannels; ++c) {
        const double g = g_pool[c] / static_cast<double>(plane);
        double* p = g_act3.data() + c * plane;
        for (std::size_t i = 0; i < plane; ++i) p[i] = g;
    }

    std::vector<double> g_act2, g_act1, g_input;
    conv_tanh_backward(t.act3, g_act3, layout.side[2], kConvs[2],
                       params_.data() + layout.conv_w[2], g_act2);
    conv_tanh_backward(t.act2, g_act2, layout.side[1], kConvs[1],
                       params_.data() + layout.conv_w[1], g_act1);
    conv_tanh_backward(t.act1, g_act1, layout.side[0], kConvs[0],
                       params_.data() + layout.conv_w[0], g_input);

    std::vector<double> g_pixels;
    resize_normalize_adjoint(g_input, weights_.input_resolution, t.in_h, t.in_w, g_pixels);

    PixelGradient out;
    out.height = t.in_h;
    out.width = t.in_w;
    out.data.resize(g_pixels.size());
    for (std::size_t i = 0; i < g_pixels.size(); ++i) out.data[i] = static_cast<float>(g_pixels[i]);
    return out;
}

namespace {

template <typename T>
void put_le(std::vector<std::uint8_t>& buf, T value) {
    for (std::size_t i = 0; i < sizeof(T); ++i)
        buf.push_back(static_cast<std::uint8_t>((static_cast<std::uint64_t>(value) >> (8 * i)) & 0xff));
}

template <typename T>
T get_le(const std::vector<std::uint8_t>& buf, std::size_t& pos) {
    if (pos + sizeof(T) > buf.size()) throw FormatError("weights: truncated file", static_cast<long>(pos));
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<std::uint64_t>(buf[pos + i]) << (8 * i);
    pos += sizeof(T);
    return static_cast<T>(v);
}

constexpr std::uint32_t kWeightsVersion = 1;

} // namespace

void save_weights(const ExtractorWeights& w, const std::string& path) {
    std::vector<std::uint8_t> buf;
    buf.reserve(32 + w.parameters.size() * 4);
    buf.insert(buf.end(), {'A', 'X', 'W', 'T'});
    put_le<std::uint32_t>(buf, kWeightsVersion);
    put_le<std::uint64_t>(buf, w.seed);
    put_le<std::uint32_t>(buf, static_cast<std::uint32_t>(w.input_resolution));
    put_le<std::uint32_t>(buf, static_cast<std::uint32_t>(w.feature_dim));
    put_le<std::uint64_t>(buf, w.parameters.size());
    for (float f : w.parameters) {
        std::uint32_t bits;
        std::memcpy(&bits, &f, 4);
        put_le<std::uint32_t>(buf, bits);
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (!out) throw IoError("short write to " + path);
}

ExtractorWeights load_weights(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    std::vector<std::uint8_t> buf((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
    if (buf.size() < 4 || buf[0] != 'A' || buf[1] != 'X' || buf[2] != 'W' || buf[3] != 'T')
        throw FormatError("weights: bad magic", 0);
    std::size_t pos = 4;
    const auto version = get_le<std::uint32_t>(buf, pos);
    if (version != kWeightsVersion)
        throw FormatError("weights: unsupported version " + std::to_string(version), 4);
    ExtractorWeights w;
    w.seed = get_le<std::uint64_t>(buf, pos);
    w.input_resolution = static_cast<int>(get_le<std::uint32_t>(buf, pos));
    w.feature_dim = static_cast<int>(get_le<std::uint32_t>(buf, pos));
    const auto count = get_le<std::uint64_t>(buf, pos);
    check_config(w.input_resolution, w.feature_dim);
    const Layout layout = make_layout(w.input_resolution, w.feature_dim);
    if (count != layout.total)
        throw FormatError("weights: parameter count does not match architecture",
                          static_cast<long>(pos));
    w.parameters.resize(count);
    for (std::size_t i = 0; i < count; ++i) {
        const auto bits = get_le<std::uint32_t>(buf, pos);
        std::memcpy(&w.parameters[i], &bits, 4);
    }
    return w;
}

} // namespace actidx
