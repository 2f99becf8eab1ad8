#include "actidx/activation.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "actidx/errors.hpp"
#include "actidx/rng.hpp"

namespace actidx {

namespace {

// L_i measures pixel differences on the unit range (divided by 255).  In
// native 8-bit units the lambda=1 distortion gradient would exceed the
// feature-loss gradient by four orders of magnitude and pin the whole
// trajectory to a regularizer-only oscillation; unit-range differences
// keep both terms comparable at the default lambda.
constexpr double kImageLossPixelScale = 1.0 / 255.0;

struct KindName {
    LossKind kind;
    std::string_view name;
};

constexpr KindName kLossNames[] = {
    {LossKind::ivfpq, "ivfpq"}, {LossKind::ivf, "ivf"},   {LossKind::pq, "pq"},
    {LossKind::opq, "opq"},     {LossKind::lsh, "lsh"},
};

bool is_target_kind(LossKind k) {
    return k == LossKind::ivfpq || k == LossKind::ivf || k == LossKind::pq || k == LossKind::opq;
}

} // namespace

LossKind loss_kind_from_name(std::string_view name) {
    for (const auto& kn : kLossNames)
        if (kn.name == name) return kn.kind;
    throw std::invalid_argument("unknown loss kind: " + std::string(name));
}

std::string_view loss_kind_name(LossKind kind) {
    for (const auto& kn : kLossNames)
        if (kn.kind == kind) return kn.name;
    return "unknown";
}

LossContext make_loss_context(const IvfPqIndex& index, std::uint32_t id, LossKind kind) {
    if (kind != LossKind::ivfpq && kind != LossKind::ivf)
        throw std::invalid_argument("ivfpq index provides ivfpq or ivf loss targets");
    LossContext ctx;
    ctx.kind = kind;
    ctx.dim = index.dim();
    if (kind == LossKind::ivfpq) {
        ctx.target = index.reconstruct(id);
    } else {
        auto row = index.coarse().row(index.cell_of(id));
        ctx.target.assign(row.begin(), row.end());
    }
    return ctx;
}

LossContext make_loss_context(const IvfFlatIndex& index, std::uint32_t id) {
    LossContext ctx;
    ctx.kind = LossKind::ivf;
    ctx.dim = index.coarse().dim;
    auto row = index.coarse().row(index.cell_of(id));
    ctx.target.assign(row.begin(), row.end());
    return ctx;
}

LossContext make_loss_context(const PqFlatIndex& index, std::uint32_t id) {
    LossContext ctx;
    ctx.kind = index.has_rotation() ? LossKind::opq : LossKind::pq;
    ctx.dim = index.pq().dim;
    ctx.target = index.reconstruct(id);
    return ctx;
}

LossContext make_loss_context(const LshIndex& index, std::uint32_t id) {
    LossContext ctx;
    ctx.kind = LossKind::lsh;
    ctx.dim = index.dim();
    const int bits = index.bits();
    const int out_dim = index.out_dim();
    const int dim = index.dim();
    const std::uint64_t h = index.stored_hash(id);
    ctx.lsh_signs.resize(bits);
    ctx.lsh_dirs.assign(static_cast<std::size_t>(bits) * dim, 0.0f);
    ctx.lsh_offsets.resize(bits);
    for (int j = 0; j < bits; ++j) {
        ctx.lsh_signs[j] = (h >> j) & 1 ? 1.0f : -1.0f;
        // effective input-space hyperplane u_j = basis^T w_j
        const float* w = index.hyperplanes().data() + static_cast<std::size_t>(j) * out_dim;
        float* u = ctx.lsh_dirs.data() + static_cast<std::size_t>(j) * dim;
        for (int r = 0; r < out_dim; ++r) {
            const float* brow = index.basis().data() + static_cast<std::size_t>(r) * dim;
            for (int c = 0; c < dim; ++c) u[c] += w[r] * brow[c];
        }
        double off = 0.0;
        for (int c = 0; c < dim; ++c) off += static_cast<double>(u[c]) * index.mean()[c];
        ctx.lsh_offsets[j] = static_cast<float>(off);
    }
    return ctx;
}

std::pair<double, std::vector<double>> indexation_loss(std::span<const double> x,
                                                       const LossContext& ctx) {
    if (static_cast<int>(x.size()) != ctx.dim)
        throw std::invalid_argument("indexation_loss: dimension mismatch");
    std::vector<double> grad(x.size(), 0.0);
    if (is_target_kind(ctx.kind)) {
        double loss = 0.0;
        for (std::size_t i = 0; i < x.size(); ++i) {
            const double d = x[i] - ctx.target[i];
            loss += d * d;
            grad[i] = 2.0 * d;
        }
        return {loss, std::move(grad)};
    }
    // lsh: -(1/L) sum_j s_j (u_j . x - o_j)
    const int bits = static_cast<int>(ctx.lsh_signs.size());
    double loss = 0.0;
    for (int j = 0; j < bits; ++j) {
        const float* u = ctx.lsh_dirs.data() + static_cast<std::size_t>(j) * ctx.dim;
        double proj = -ctx.lsh_offsets[j];
        for (int c = 0; c < ctx.dim; ++c) proj += static_cast<double>(u[c]) * x[c];
        const double s = ctx.lsh_signs[j];
        loss -= s * proj / bits;
        for (int c = 0; c < ctx.dim; ++c) grad[c] -= s * u[c] / bits;
    }
    return {loss, std::move(grad)};
}

std::pair<double, std::vector<double>> indexation_loss(std::span<const double> x,
                                                       const LossContext& ctx, LossKind kind) {
    if (kind != ctx.kind)
        throw std::invalid_argument("indexation_loss: context was built for kind '" +
                                    std::string(loss_kind_name(ctx.kind)) + "'");
    return indexation_loss(x, ctx);
}

double indexation_loss(std::span<const float> x, const LossContext& ctx,
                       std::vector<float>* gradient) {
    std::vector<double> xd(x.begin(), x.end());
    auto [value, grad] = indexation_loss(std::span<const double>(xd), ctx);
    if (gradient) {
        gradient->resize(grad.size());
        for (std::size_t i = 0; i < grad.size(); ++i) (*gradient)[i] = static_cast<float>(grad[i]);
    }
    return value;
}

void AdamState::init(std::size_t n) {
    m.assign(n, 0.0);
    v.assign(n, 0.0);
    t = 0;
}

void AdamState::step(std::vector<double>& params, const std::vector<double>& grad, double lr) {
    if (params.size() != grad.size() || params.size() != m.size())
        throw std::invalid_argument("adam: size mismatch");
    constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    ++t;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    for (std::size_t i = 0; i < params.size(); ++i) {
        const double g = grad[i];
        if (!std::isfinite(g)) throw NumericError("adam: non-finite gradient");
        m[i] = beta1 * m[i] + (1.0 - beta1) * g;
        v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
        const double mhat = m[i] / bc1;
        const double vhat = v[i] / bc2;
        params[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
}

bool eot_transform_supported(TransformKind k) {
    switch (k) {
        case TransformKind::identity:
        case TransformKind::brightness:
        case TransformKind::blur:
        case TransformKind::rotate:
        case TransformKind::gaussian_noise:
            return true;
        default:
            return false; // size-changing edits have no in-place adjoint here
    }
}

Image eot_transform(const Image& img, const TransformSpec& spec) {
    switch (spec.kind) {
        case TransformKind::identity:
            return img;
        case TransformKind::brightness: {
            Image out = img;
            const float f = static_cast<float>(spec.parameter);
            for (float& v : out.data) v *= f;
            return out;
        }
        case TransformKind::blur:
            return gaussian_blur(img, spec.parameter);
        case TransformKind::rotate:
            return rotate_bilinear(img, spec.parameter);
        case TransformKind::gaussian_noise: {
            Image out = img;
            Rng rng = derive_rng(spec.seed, "eot-noise");
            for (float& v : out.data) v = static_cast<float>(v + spec.parameter * rng.normal());
            return out;
        }
        default:
            throw std::invalid_argument("eot: unsupported transform kind");
    }
}

// accumulates the adjoint of the transform applied to `grad` into `acc`
void eot_transform_adjoint(const PixelGradient& grad, const TransformSpec& spec, int h, int w,
                           std::vector<double>& acc) {
    switch (spec.kind) {
        case TransformKind::identity:
        case TransformKind::gaussian_noise:
            for (std::size_t i = 0; i < grad.data.size(); ++i) acc[i] += grad.data[i];
            return;
        case TransformKind::brightness: {
            const double f = spec.parameter;
            for (std::size_t i = 0; i < grad.data.size(); ++i) acc[i] += f * grad.data[i];
            return;
        }
        case TransformKind::blur: {
            const auto kernel = gaussian_kernel(spec.parameter);
            const int radius = static_cast<int>(kernel.size() / 2);
            if (radius == 0) {
                for (std::size_t i = 0; i < grad.data.size(); ++i) acc[i] += grad.data[i];
                return;
            }
            // forward is horizontal then vertical with clamped taps; the
            // adjoint scatters through the passes in reverse order
            std::vector<double> tmp(static_cast<std::size_t>(h) * w * 3, 0.0);
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x)
                    for (int c = 0; c < 3; ++c) {
                        const double g = grad.at(y, x, c);
                        for (int i = -radius; i <= radius; ++i) {
                            const int sy = std::clamp(y + i, 0, h - 1);
                            tmp[(static_cast<std::size_t>(sy) * w + x) * 3 + c] +=
                                kernel[i + radius] * g;
                        }
                    }
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x)
                    for (int c = 0; c < 3; ++c) {
                        const double g = tmp[(static_cast<std::size_t>(y) * w + x) * 3 + c];
                        if (g == 0.0) continue;
                        for (int i = -radius; i <= radius; ++i) {
                            const int sx = std::clamp(x + i, 0, w - 1);
                            acc[(static_cast<std::size_t>(y) * w + sx) * 3 + c] +=
                                kernel[i + radius] * g;
                        }
                    }
            return;
        }
        case TransformKind::rotate: {
            double turns = std::fmod(spec.parameter, 360.0);
            if (turns < 0.0) turns += 360.0;
            if (turns == 0.0) {
                for (std::size_t i = 0; i < grad.data.size(); ++i) acc[i] += grad.data[i];
                return;
            }
            double c, s;
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
                const double rad = turns * 3.14159265358979323846 / 180.0;
                c = std::cos(rad);
                s = std::sin(rad);
            }
            const double cy = (h - 1) / 2.0, cx = (w - 1) / 2.0;
            for (int y = 0; y < h; ++y) {
                for (int x = 0; x < w; ++x) {
                    const double dx = x - cx, dy = y - cy;
                    const double sx = cx + c * dx + s * dy;
                    const double sy = cy - s * dx + c * dy;
                    const int x0 = static_cast<int>(std::floor(sx));
                    const int y0 = static_cast<int>(std::floor(sy));
                    const double fx = sx - x0, fy = sy - y0;
                    const double wts[4] = {(1 - fy) * (1 - fx), (1 - fy) * fx, fy * (1 - fx),
                                           fy * fx};
                    const int ys[4] = {y0, y0, y0 + 1, y0 + 1};
                    const int xs[4] = {x0, x0 + 1, x0, x0 + 1};
                    for (int ch = 0; ch < 3; ++ch) {
                        const double g = grad.at(y, x, ch);
                        if (g == 0.0) continue;
                        for (int tap = 0; tap < 4; ++tap) {
                            if (ys[tap] < 0 || ys[tap] >= h || xs[tap] < 0 || xs[tap] >= w)
                                continue;
                            acc[(static_cast<std::size_t>(ys[tap]) * w + xs[tap]) * 3 + ch] +=
                                wts[tap] * g;
                        }
                    }
                }
            }
            return;
        }
        default:
            throw std::invalid_argument("eot: unsupported transform kind");
    }
}

namespace {

void validate_config(const ActivationConfig& config) {
    if (config.alpha < 0.0) throw std::invalid_argument("activation: alpha must be >= 0");
    if (config.lambda < 0.0) throw std::invalid_argument("activation: lambda must be >= 0");
    if (!(config.lr > 0.0)) throw std::invalid_argument("activation: lr must be > 0");
    if (config.steps < 0) throw std::invalid_argument("activation: steps must be >= 0");
    if (config.eot) {
        if (config.eot->samples < 1)
            throw std::invalid_argument("activation: eot samples must be >= 1");
        if (config.eot->samples > 1 && config.eot->pool.empty())
            throw std::invalid_argument("activation: eot pool must not be empty");
        for (const auto& spec : config.eot->pool) {
            validate_transform(spec);
            if (!eot_transform_supported(spec.kind))
                throw std::invalid_argument("activation: transform '" +
                                            std::string(transform_kind_name(spec.kind)) +
                                            "' is not usable under eot");
        }
    }
}

} // namespace

ActivationResult activate(const Image& original, const Extractor& extractor,
                          const LossContext& ctx, const ActivationConfig& config) {
    validate_config(config);
    if (ctx.dim != extractor.feature_dim())
        throw std::invalid_argument("activation: context dimension mismatch");
    if (original.height < kMinImageSide || original.width < kMinImageSide)
        throw std::invalid_argument("activation: image too small");

    const std::size_t n = original.data.size();
    const JndMap jnd = jnd_map(original);
    const int samples = config.eot ? config.eot->samples : 1;
    Rng eot_rng = derive_rng(config.eot ? config.eot->seed : 0, "eot-schedule");

    std::vector<double> delta(n, 0.0);
    std::vector<double> pert(n, 0.0);
    std::vector<double> sech2(n, 1.0); // 1 - tanh(delta)^2
    AdamState adam;
    adam.init(n);

    ActivationResult result;
    result.feature_before = extractor.extract(original);

    std::vector<double> g_image(n);
    std::vector<double> g_delta(n);
    for (int step = 0; step < config.steps; ++step) {
        for (std::size_t i = 0; i < n; ++i) {
            const double th = std::tanh(delta[i]);
            pert[i] = config.alpha * jnd.data[i] * th;
            sech2[i] = 1.0 - th * th;
        }
        Image candidate = original;
        for (std::size_t i = 0; i < n; ++i)
            candidate.data[i] = static_cast<float>(original.data[i] + pert[i]);

        std::fill(g_image.begin(), g_image.end(), 0.0);
        double loss_f = 0.0;
        for (int sample = 0; sample < samples; ++sample) {
            TransformSpec spec; // slot 0 stays the un-augmented image
            if (sample > 0) {
                spec = config.eot->pool[eot_rng.next_below(config.eot->pool.size())];
                if (spec.kind == TransformKind::gaussian_noise) spec.seed = eot_rng.next_u64();
            }
            const Image transformed = eot_transform(candidate, spec);
            const Extractor::Trace trace = extractor.forward(transformed);
            auto [value, grad_x] = indexation_loss(std::span<const double>(trace.feature), ctx);
            loss_f += value;
            const PixelGradient pix = extractor.backward(trace, grad_x);
            eot_transform_adjoint(pix, spec, original.height, original.width, g_image);
        }
        loss_f /= samples;

        double loss_i = 0.0;
        const double s2 = kImageLossPixelScale * kImageLossPixelScale;
        for (std::size_t i = 0; i < n; ++i) {
            loss_i += pert[i] * pert[i] * s2;
            const double g_pix =
                g_image[i] / samples + config.lambda * 2.0 * s2 * pert[i];
            g_delta[i] = g_pix * config.alpha * jnd.data[i] * sech2[i];
        }
        result.loss_trace.emplace_back(loss_f, loss_i);
        adam.step(delta, g_delta, config.lr);
    }

    result.activated = original;
    for (std::size_t i = 0; i < n; ++i) {
        const double th = std::tanh(delta[i]);
        result.activated.data[i] =
            static_cast<float>(original.data[i] + config.alpha * jnd.data[i] * th);
    }
    result.activated.clamp();
    result.quality = quality_stats(original, result.activated);
    result.feature_after = extractor.extract(result.activated);
    return result;
}

ActivationResult activate(const Image& original, const Extractor& extractor,
                          const IvfPqIndex& index, std::uint32_t id,
                          const ActivationConfig& config) {
    if (config.loss_kind != LossKind::ivfpq && config.loss_kind != LossKind::ivf)
        throw std::invalid_argument("activation: ivfpq index supports ivfpq or ivf losses");
    return activate(original, extractor, make_loss_context(index, id, config.loss_kind), config);
}

ActivationResult activate_eot(const Image& original, const Extractor& extractor,
                              const LossContext& ctx, const ActivationConfig& config) {
    if (!config.eot) throw std::invalid_argument("activate_eot: config.eot is required");
    return activate(original, extractor, ctx, config);
}

} // namespace actidx
