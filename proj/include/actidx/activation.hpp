#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string_view>
#include <utility>
#include <vector>

#include "actidx/extractor.hpp"
#include "actidx/image.hpp"
#include "actidx/index.hpp"
#include "actidx/jnd.hpp"
#include "actidx/transforms.hpp"

namespace actidx {

enum class LossKind { ivfpq, ivf, pq, opq, lsh };

LossKind loss_kind_from_name(std::string_view name);
std::string_view loss_kind_name(LossKind kind);

// Frozen activation target, computed from the stored entry at add-time.
// Target kinds carry the reproduction vector; lsh carries the stored sign
// pattern together with the effective input-space hyperplanes.
struct LossContext {
    LossKind kind = LossKind::ivfpq;
    int dim = 0;
    std::vector<float> target;       // ivfpq: q(x_o); ivf: q_c(x_o); pq/opq: R^T q_f(R x_o)
    std::vector<float> lsh_dirs;     // bits x dim
    std::vector<float> lsh_offsets;  // bits
    std::vector<float> lsh_signs;    // bits, +-1
};

LossContext make_loss_context(const IvfPqIndex& index, std::uint32_t id, LossKind kind);
LossContext make_loss_context(const IvfFlatIndex& index, std::uint32_t id);
LossContext make_loss_context(const PqFlatIndex& index, std::uint32_t id);
LossContext make_loss_context(const LshIndex& index, std::uint32_t id);

// loss value and its analytic gradient with respect to x
std::pair<double, std::vector<double>> indexation_loss(std::span<const double> x,
                                                       const LossContext& ctx);
std::pair<double, std::vector<double>> indexation_loss(std::span<const double> x,
                                                       const LossContext& ctx, LossKind kind);
double indexation_loss(std::span<const float> x, const LossContext& ctx,
                       std::vector<float>* gradient);

// Adam with beta1=0.9, beta2=0.999, eps=1e-8 and bias correction, applied
// as a descent update.
struct AdamState {
    std::vector<double> m, v;
    long t = 0;

    void init(std::size_t n);
    void step(std::vector<double>& params, const std::vector<double>& grad, double lr);
};

struct EotConfig {
    int samples = 8; // A; the identity slot is always included
    std::vector<TransformSpec> pool;
    std::uint64_t seed = 0;
};

struct ActivationConfig {
    double alpha = 3.0;  // perturbation strength
    double lambda = 1.0; // image-loss weight
    double lr = 1.0;     // Adam learning rate
    int steps = 10;
    LossKind loss_kind = LossKind::ivfpq;
    std::optional<EotConfig> eot;
};

struct ActivationResult {
    Image activated;
    std::vector<std::pair<double, double>> loss_trace; // (L_f, L_i) per step
    QualityStats quality;                              // against the original
    FeatureVector feature_before, feature_after;
};

// Iterative image optimization: delta starts at zero, the perturbation is
// alpha * H_JND(original) * tanh(delta), and Adam descends on
// L_f(f(I_t), target) + lambda * L_i.  The index is never touched; the
// target comes frozen inside the context.
ActivationResult activate(const Image& original, const Extractor& extractor,
                          const LossContext& ctx, const ActivationConfig& config);

// convenience overload matching the IVF-PQ pipeline (kind ivfpq or ivf)
ActivationResult activate(const Image& original, const Extractor& extractor,
                          const IvfPqIndex& index, std::uint32_t id,
                          const ActivationConfig& config);

// as activate, but requires config.eot and averages the feature loss over
// sampled transforms of the candidate image (identity always included)
ActivationResult activate_eot(const Image& original, const Extractor& extractor,
                              const LossContext& ctx, const ActivationConfig& config);

// The differentiable transform path used inside the EoT loop: a linear
// (in pixels) forward without clamping, and its exact adjoint.  Only
// size-preserving kinds are supported (identity, brightness, blur, rotate,
// gaussian_noise).
bool eot_transform_supported(TransformKind kind);
Image eot_transform(const Image& image, const TransformSpec& spec);
// accumulates the adjoint applied to `grad` into `acc` (size h*w*3)
void eot_transform_adjoint(const PixelGradient& grad, const TransformSpec& spec, int h, int w,
                           std::vector<double>& acc);

} // namespace actidx
