#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "actidx/activation.hpp"
#include "actidx/corpus.hpp"
#include "actidx/errors.hpp"
#include "actidx/extractor.hpp"
#include "actidx/index.hpp"
#include "actidx/jnd.hpp"
#include "actidx/rng.hpp"

using namespace actidx;

namespace {

Image uniform_image(int side, float r, float g, float b) {
    Image img(side, side);
    for (int y = 0; y < side; ++y)
        for (int x = 0; x < side; ++x) {
            img.at(y, x, 0) = r;
            img.at(y, x, 1) = g;
            img.at(y, x, 2) = b;
        }
    return img;
}

// scalar reference of the JND model, written independently of jnd_map
double jnd_reference(const Image& img, int py, int px, int ch) {
    auto lum = [&](int y, int x) {
        y = std::min(std::max(y, 0), img.height - 1);
        x = std::min(std::max(x, 0), img.width - 1);
        return 0.299 * img.at(y, x, 0) + 0.587 * img.at(y, x, 1) + 0.114 * img.at(y, x, 2);
    };
    double gx = 0, gy = 0;
    const int sx[3][3] = {{-1, 0, 1}, {-2, 0, 2}, {-1, 0, 1}};
    const int sy[3][3] = {{-1, -2, -1}, {0, 0, 0}, {1, 2, 1}};
    for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
            gx += sx[dy + 1][dx + 1] * lum(py + dy, px + dx);
            gy += sy[dy + 1][dx + 1] * lum(py + dy, px + dx);
        }
    const double cl = std::hypot(gx, gy);
    const double mc = 0.115 * 16.0 * std::pow(cl, 2.4) / (cl * cl + 676.0);
    double bg = 0;
    for (int dy = -2; dy <= 2; ++dy)
        for (int dx = -2; dx <= 2; ++dx) bg += lum(py + dy, px + dx);
    bg /= 25.0;
    const double la = bg < 127.0 ? 17.0 * (1.0 - std::sqrt(bg / 127.0)) : 3.0 * (bg - 127.0) / 128.0 + 3.0;
    const double h = la + mc - 0.3 * std::min(la, mc);
    const double chan[3] = {0.072 / 0.299, 0.072 / 0.587, 0.072 / 0.114};
    return chan[ch] * h;
}

struct DeskIndex {
    Extractor extractor;
    IvfPqIndex index;
    std::vector<Image> images;

    DeskIndex() : extractor(init_weights(1)) {
        const int n = 1200, d = 64;
        std::vector<float> train;
        train.reserve(n * d);
        for (int i = 0; i < n; ++i) {
            auto f = extractor.extract(generate_corpus_image(99, i, 64));
            train.insert(train.end(), f.begin(), f.end());
        }
        index = IvfPqIndex::train(train.data(), n, d, 16, 8, 64, 10, 5);
        images = generate_corpus(7, 12, 64);
        for (int i = 0; i < static_cast<int>(images.size()); ++i)
            index.add(extractor.extract(images[i]), static_cast<std::uint32_t>(i));
    }
};

DeskIndex& desk() {
    static DeskIndex d;
    return d;
}

} // namespace

TEST_CASE("jnd closed forms on uniform images") {
    // mid-gray: C_l = 0, B = 127 -> L_A = 3, H = 3
    auto gray = uniform_image(16, 127.0f, 127.0f, 127.0f);
    auto map = jnd_map(gray);
    CHECK(map.at(8, 8, 0) == doctest::Approx(3.0 * 0.072 / 0.299).epsilon(1e-4));
    CHECK(map.at(8, 8, 1) == doctest::Approx(3.0 * 0.072 / 0.587).epsilon(1e-4));
    CHECK(map.at(8, 8, 2) == doctest::Approx(3.0 * 0.072 / 0.114).epsilon(1e-4));

    // black: L_A = 17, M_C = 0 -> H = 17
    auto black = uniform_image(16, 0.0f, 0.0f, 0.0f);
    auto bmap = jnd_map(black);
    CHECK(bmap.at(8, 8, 0) * 0.299 / 0.072 == doctest::Approx(17.0).epsilon(1e-6));
}

TEST_CASE("jnd matches an independent scalar reference on textured input") {
    auto img = generate_corpus_image(31, 0, 32);
    auto map = jnd_map(img);
    double worst = 0;
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
            for (int c = 0; c < 3; ++c)
                worst = std::max(worst, std::abs(map.at(y, x, c) - jnd_reference(img, y, x, c)));
    CHECK(worst < 1e-4);
}

TEST_CASE("jnd map entries are strictly positive") {
    for (int i = 0; i < 5; ++i) {
        auto map = jnd_map(generate_corpus_image(32, i, 32));
        float lo = 1e30f;
        for (float v : map.data) lo = std::min(lo, v);
        CHECK(lo > 0.0f);
    }
}

TEST_CASE("indexation losses and gradients") {
    auto& d = desk();
    SUBCASE("ivfpq loss vanishes at the reproduction value") {
        auto ctx = make_loss_context(d.index, 0, LossKind::ivfpq);
        std::vector<double> x(ctx.target.begin(), ctx.target.end());
        auto [value, grad] = indexation_loss(std::span<const double>(x), ctx);
        CHECK(value == doctest::Approx(0.0).epsilon(1e-12));
        for (double g : grad) CHECK(std::abs(g) < 1e-9);
    }
    SUBCASE("kind/context mismatch is rejected") {
        auto ctx = make_loss_context(d.index, 0, LossKind::ivfpq);
        std::vector<double> x(64, 0.1);
        CHECK_THROWS_AS(indexation_loss(std::span<const double>(x), ctx, LossKind::lsh),
                        std::invalid_argument);
        CHECK_THROWS_AS(make_loss_context(d.index, 0, LossKind::pq), std::invalid_argument);
    }
    SUBCASE("lsh loss at the stored point is minus the mean projection magnitude") {
        const int n = 300, dim = 64;
        std::vector<float> train;
        Rng rng(8);
        for (int i = 0; i < n * dim; ++i) train.push_back(static_cast<float>(rng.normal()));
        auto lsh = LshIndex::train(train.data(), n, dim, 16, 32, 3);
        std::vector<float> x0(dim);
        for (auto& v : x0) v = static_cast<float>(rng.normal());
        lsh.add(x0, 77);
        auto ctx = make_loss_context(lsh, 77);
        std::vector<double> xd(x0.begin(), x0.end());
        auto [value, grad] = indexation_loss(std::span<const double>(xd), ctx);
        double expect = 0;
        for (int j = 0; j < 32; ++j) {
            double proj = -ctx.lsh_offsets[j];
            for (int c = 0; c < dim; ++c) proj += static_cast<double>(ctx.lsh_dirs[j * dim + c]) * x0[c];
            expect -= std::abs(proj) / 32.0;
        }
        CHECK(value == doctest::Approx(expect).epsilon(1e-9));
        CHECK(value < 0.0);
    }
    SUBCASE("analytic gradients match finite differences to 1e-6") {
        Rng rng(9);
        std::vector<LossContext> contexts;
        contexts.push_back(make_loss_context(d.index, 1, LossKind::ivfpq));
        contexts.push_back(make_loss_context(d.index, 1, LossKind::ivf));
        {
            const int n = 300, dim = 64;
            std::vector<float> train;
            for (int i = 0; i < n * dim; ++i) train.push_back(static_cast<float>(rng.normal()));
            auto pq = PqFlatIndex::train(train.data(), n, dim, 4, 16, 8, 4);
            auto opq = PqFlatIndex::train_opq(train.data(), n, dim, 4, 16, 3, 8, 4);
            std::vector<float> x0(dim);
            for (auto& v : x0) v = static_cast<float>(rng.normal());
            pq.add(x0, 5);
            opq.add(x0, 5);
            auto lsh = LshIndex::train(train.data(), n, dim, 16, 48, 6);
            lsh.add(x0, 5);
            contexts.push_back(make_loss_context(pq, 5));
            contexts.push_back(make_loss_context(opq, 5));
            contexts.push_back(make_loss_context(lsh, 5));
        }
        for (const auto& ctx : contexts) {
            std::vector<double> x(64);
            for (auto& v : x) v = rng.normal();
            auto [value, grad] = indexation_loss(std::span<const double>(x), ctx);
            (void)value;
            for (int k = 0; k < 12; ++k) {
                int i = static_cast<int>(rng.next_below(64));
                const double h = 1e-5;
                auto xp = x, xm = x;
                xp[i] += h;
                xm[i] -= h;
                double fd = (indexation_loss(std::span<const double>(xp), ctx).first -
                             indexation_loss(std::span<const double>(xm), ctx).first) /
                            (2 * h);
                double rel = std::abs(fd - grad[i]) / std::max({std::abs(fd), std::abs(grad[i]), 1e-9});
                CHECK(rel < 1e-6);
            }
        }
    }
}

TEST_CASE("adam steps") {
    SUBCASE("zero gradient leaves parameters unchanged") {
        AdamState adam;
        adam.init(4);
        std::vector<double> params = {1.0, -2.0, 3.0, 0.5};
        auto before = params;
        adam.step(params, {0, 0, 0, 0}, 1.0);
        CHECK(params == before);
    }
    SUBCASE("first step magnitude is lr * |g| / (|g| + eps)") {
        AdamState adam;
        adam.init(3);
        std::vector<double> params = {0, 0, 0};
        const std::vector<double> grad = {0.5, -2.0, 1e-7};
        const double lr = 0.25;
        adam.step(params, grad, lr);
        for (int i = 0; i < 3; ++i) {
            double expect = -lr * grad[i] / (std::abs(grad[i]) + 1e-8);
            CHECK(params[i] == doctest::Approx(expect).epsilon(1e-12));
        }
    }
    SUBCASE("second identical step is no larger than the first") {
        AdamState adam;
        adam.init(1);
        std::vector<double> params = {0};
        const std::vector<double> grad = {0.3};
        adam.step(params, grad, 1.0);
        double first = std::abs(params[0]);
        double at1 = params[0];
        adam.step(params, grad, 1.0);
        double second = std::abs(params[0] - at1);
        CHECK(second <= first + 1e-12);
    }
    SUBCASE("non-finite gradients raise") {
        AdamState adam;
        adam.init(1);
        std::vector<double> params = {0};
        CHECK_THROWS_AS(adam.step(params, {std::nan("")}, 1.0), NumericError);
    }
}

TEST_CASE("activation basics") {
    auto& d = desk();
    auto ctx = make_loss_context(d.index, 2, LossKind::ivfpq);

    SUBCASE("alpha = 0 is a no-op") {
        ActivationConfig cfg;
        cfg.alpha = 0.0;
        auto res = activate(d.images[2], d.extractor, ctx, cfg);
        CHECK(res.activated.data == d.images[2].data);
        CHECK(res.feature_before == res.feature_after);
        CHECK(res.quality.psnr_db == doctest::Approx(99.0));
    }
    SUBCASE("steps = 0 is a no-op with an empty trace") {
        ActivationConfig cfg;
        cfg.steps = 0;
        auto res = activate(d.images[2], d.extractor, ctx, cfg);
        CHECK(res.activated.data == d.images[2].data);
        CHECK(res.loss_trace.empty());
    }
    SUBCASE("defaults: trace layout, perceptual bound, determinism") {
        ActivationConfig cfg;
        auto res = activate(d.images[2], d.extractor, ctx, cfg);
        REQUIRE(res.loss_trace.size() == 10);
        CHECK(res.loss_trace[0].second == 0.0); // L_i at delta=0
        for (auto [lf, li] : res.loss_trace) {
            CHECK(std::isfinite(lf));
            CHECK(li >= 0.0);
        }
        // |I* - I_o| <= alpha * max H, channelwise at every pixel
        auto map = jnd_map(d.images[2]);
        const double budget = cfg.alpha * map.max_value();
        double linf_seen = 0;
        for (std::size_t i = 0; i < res.activated.data.size(); ++i)
            linf_seen = std::max(linf_seen, std::abs(static_cast<double>(res.activated.data[i]) -
                                                     d.images[2].data[i]));
        CHECK(linf_seen <= budget);
        CHECK(res.quality.linf == doctest::Approx(linf_seen));

        auto res2 = activate(d.images[2], d.extractor, ctx, cfg);
        CHECK(res.activated.data == res2.activated.data);
    }
    SUBCASE("per-pixel perceptual bound is tight to the channel map") {
        ActivationConfig cfg;
        auto res = activate(d.images[3], d.extractor,
                            make_loss_context(d.index, 3, LossKind::ivfpq), cfg);
        auto map = jnd_map(d.images[3]);
        for (std::size_t i = 0; i < res.activated.data.size(); ++i) {
            double moved = std::abs(static_cast<double>(res.activated.data[i]) - d.images[3].data[i]);
            CHECK(moved <= cfg.alpha * map.data[i] + 1e-4);
        }
    }
    SUBCASE("a small first step decreases the feature loss on most images") {
        ActivationConfig cfg;
        cfg.steps = 1;
        cfg.lr = 0.01;
        int better = 0;
        for (int i = 0; i < static_cast<int>(d.images.size()); ++i) {
            auto c = make_loss_context(d.index, static_cast<std::uint32_t>(i), LossKind::ivfpq);
            auto res = activate(d.images[i], d.extractor, c, cfg);
            double before = indexation_loss(std::span<const float>(res.feature_before), c, nullptr);
            double after = indexation_loss(std::span<const float>(res.feature_after), c, nullptr);
            if (after < before) ++better;
        }
        CHECK(better >= static_cast<int>(d.images.size()) - 1);
    }
    SUBCASE("the index is oblivious to activation") {
        auto before = d.index.serialize();
        ActivationConfig cfg;
        auto probe = d.index.search(d.extractor.extract(d.images[5]), 3, d.index.cells());
        for (int i = 0; i < 5; ++i)
            activate(d.images[i], d.extractor,
                     make_loss_context(d.index, static_cast<std::uint32_t>(i), LossKind::ivfpq), cfg);
        CHECK(d.index.serialize() == before);
        auto probe2 = d.index.search(d.extractor.extract(d.images[5]), 3, d.index.cells());
        REQUIRE(probe.size() == probe2.size());
        for (std::size_t i = 0; i < probe.size(); ++i) {
            CHECK(probe[i].id == probe2[i].id);
            CHECK(probe[i].distance == probe2[i].distance);
        }
    }
    SUBCASE("config validation") {
        ActivationConfig cfg;
        cfg.lr = 0.0;
        CHECK_THROWS_AS(activate(d.images[0], d.extractor, ctx, cfg), std::invalid_argument);
        cfg = {};
        cfg.alpha = -1.0;
        CHECK_THROWS_AS(activate(d.images[0], d.extractor, ctx, cfg), std::invalid_argument);
        cfg = {};
        CHECK_THROWS_AS(activate(d.images[0], d.extractor, d.index, 999999, cfg), NotFoundError);
    }
}

TEST_CASE("eot transforms are exact adjoints") {
    Rng rng(40);
    const int side = 24;
    const TransformSpec specs[] = {
        TransformSpec::make(TransformKind::identity),
        TransformSpec::make(TransformKind::brightness, 1.4),
        TransformSpec::make(TransformKind::blur, 1.1),
        TransformSpec::make(TransformKind::rotate, 17.0),
    };
    for (const auto& spec : specs) {
        // <T u, v> == <u, T^T v> for the linear part
        Image u(side, side);
        for (float& p : u.data) p = static_cast<float>(rng.normal());
        PixelGradient v;
        v.height = side;
        v.width = side;
        v.data.resize(u.data.size());
        for (float& p : v.data) p = static_cast<float>(rng.normal());

        Image zero(side, side, 0.0f);
        Image tu = eot_transform(u, spec);
        Image t0 = eot_transform(zero, spec); // additive offset (noise kind)
        double lhs = 0;
        for (std::size_t i = 0; i < tu.data.size(); ++i)
            lhs += (static_cast<double>(tu.data[i]) - t0.data[i]) * v.data[i];

        std::vector<double> tv(u.data.size(), 0.0);
        eot_transform_adjoint(v, spec, side, side, tv);
        double rhs = 0;
        for (std::size_t i = 0; i < u.data.size(); ++i) rhs += static_cast<double>(u.data[i]) * tv[i];
        CHECK(lhs == doctest::Approx(rhs).epsilon(1e-6));
    }
    CHECK_FALSE(eot_transform_supported(TransformKind::center_crop));
}

TEST_CASE("eot with a single sample reproduces plain activation bitwise") {
    auto& d = desk();
    auto ctx = make_loss_context(d.index, 4, LossKind::ivfpq);
    ActivationConfig plain;
    auto base = activate(d.images[4], d.extractor, ctx, plain);

    ActivationConfig with_eot = plain;
    EotConfig eot;
    eot.samples = 1;
    eot.seed = 99;
    eot.pool = {TransformSpec::make(TransformKind::blur, 1.0)};
    with_eot.eot = eot;
    auto same = activate_eot(d.images[4], d.extractor, ctx, with_eot);
    CHECK(same.activated.data == base.activated.data);

    // pool of identities changes nothing either
    with_eot.eot->samples = 3;
    with_eot.eot->pool = {TransformSpec::make(TransformKind::identity)};
    auto idpool = activate_eot(d.images[4], d.extractor, ctx, with_eot);
    CHECK(idpool.activated.data == base.activated.data);
}

TEST_CASE("eot requires a usable configuration") {
    auto& d = desk();
    auto ctx = make_loss_context(d.index, 0, LossKind::ivfpq);
    ActivationConfig cfg;
    CHECK_THROWS_AS(activate_eot(d.images[0], d.extractor, ctx, cfg), std::invalid_argument);
    EotConfig eot;
    eot.samples = 4;
    eot.pool = {TransformSpec::make(TransformKind::center_crop, 0.5)};
    cfg.eot = eot;
    CHECK_THROWS_AS(activate(d.images[0], d.extractor, ctx, cfg), std::invalid_argument);
    cfg.eot->pool.clear();
    CHECK_THROWS_AS(activate(d.images[0], d.extractor, ctx, cfg), std::invalid_argument);
}
