#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "actidx/errors.hpp"
#include "actidx/index.hpp"
#include "actidx/rng.hpp"

using namespace actidx;

namespace {

std::vector<float> random_vectors(std::uint64_t seed, std::size_t n, int dim, double scale = 1.0) {
    Rng rng(seed);
    std::vector<float> v(n * dim);
    for (auto& x : v) x = static_cast<float>(scale * rng.normal());
    return v;
}

std::vector<float> random_unit_vectors(std::uint64_t seed, std::size_t n, int dim) {
    auto v = random_vectors(seed, n, dim);
    for (std::size_t i = 0; i < n; ++i) {
        double norm = 0;
        for (int d = 0; d < dim; ++d) norm += static_cast<double>(v[i * dim + d]) * v[i * dim + d];
        norm = std::sqrt(norm);
        for (int d = 0; d < dim; ++d) v[i * dim + d] = static_cast<float>(v[i * dim + d] / norm);
    }
    return v;
}

double l2_sq(const float* a, const float* b, int dim) {
    double acc = 0;
    for (int i = 0; i < dim; ++i) {
        double d = static_cast<double>(a[i]) - b[i];
        acc += d * d;
    }
    return acc;
}

// plain Lloyd oracle, independent update/assignment code path
double lloyd_oracle_objective(const float* data, std::size_t n, int dim,
                              std::vector<float> centroids, int k, int iterations) {
    std::vector<int> assign(n);
    for (int it = 0; it < iterations; ++it) {
        for (std::size_t i = 0; i < n; ++i) {
            int best = 0;
            double bd = l2_sq(data + i * dim, centroids.data(), dim);
            for (int c = 1; c < k; ++c) {
                double d = l2_sq(data + i * dim, centroids.data() + c * dim, dim);
                if (d < bd) {
                    bd = d;
                    best = c;
                }
            }
            assign[i] = best;
        }
        for (int c = 0; c < k; ++c) {
            std::vector<double> sum(dim, 0.0);
            std::size_t count = 0;
            for (std::size_t i = 0; i < n; ++i) {
                if (assign[i] != c) continue;
                for (int d = 0; d < dim; ++d) sum[d] += data[i * dim + d];
                ++count;
            }
            if (count)
                for (int d = 0; d < dim; ++d)
                    centroids[c * dim + d] = static_cast<float>(sum[d] / count);
        }
    }
    double obj = 0;
    for (std::size_t i = 0; i < n; ++i) {
        double bd = l2_sq(data + i * dim, centroids.data(), dim);
        for (int c = 1; c < k; ++c)
            bd = std::min(bd, l2_sq(data + i * dim, centroids.data() + c * dim, dim));
        obj += bd;
    }
    return obj / static_cast<double>(n);
}

} // namespace

TEST_CASE("kmeans k=1 returns the mean") {
    auto data = random_vectors(1, 50, 4);
    Codebook cb = kmeans(data.data(), 50, 4, 1, 5, 7);
    for (int d = 0; d < 4; ++d) {
        double mean = 0;
        for (int i = 0; i < 50; ++i) mean += data[i * 4 + d];
        mean /= 50;
        CHECK(cb.centroids[d] == doctest::Approx(mean).epsilon(1e-6));
    }
}

TEST_CASE("kmeans recovers duplicated points exactly") {
    const int k = 5, dim = 3;
    auto points = random_vectors(2, k, dim, 10.0);
    std::vector<float> data;
    for (int rep = 0; rep < 10; ++rep)
        for (int i = 0; i < k; ++i)
            data.insert(data.end(), points.begin() + i * dim, points.begin() + (i + 1) * dim);
    Codebook cb = kmeans(data.data(), data.size() / dim, dim, k, 10, 3);
    CHECK(quantization_objective(cb, data.data(), data.size() / dim) ==
          doctest::Approx(0.0).epsilon(1e-10));
    // every source point appears as a centroid
    for (int i = 0; i < k; ++i) {
        double best = 1e30;
        for (int c = 0; c < k; ++c)
            best = std::min(best, l2_sq(points.data() + i * dim, cb.row(c).data(), dim));
        CHECK(best == doctest::Approx(0.0).epsilon(1e-10));
    }
}

TEST_CASE("kmeans matches an independent Lloyd oracle from identical seeding") {
    const std::size_t n = 200;
    const int dim = 2, k = 4, iters = 12;
    auto data = random_vectors(3, n, dim);
    const std::uint64_t seed = 11;
    Codebook cb = kmeans(data.data(), n, dim, k, iters, seed);

    Rng seeding = derive_rng(seed, "kmeans-init");
    auto init = kmeans_pp_init(data.data(), n, dim, k, seeding);
    double oracle = lloyd_oracle_objective(data.data(), n, dim, init, k, iters);
    CHECK(quantization_objective(cb, data.data(), n) == doctest::Approx(oracle).epsilon(1e-6));
}

TEST_CASE("kmeans objective is non-increasing per iteration") {
    const std::size_t n = 300;
    const int dim = 8, k = 6;
    auto data = random_vectors(4, n, dim);
    double prev = 1e30;
    // identical seeding means run with i iterations is the prefix of i+1
    for (int iters = 1; iters <= 8; ++iters) {
        Codebook cb = kmeans(data.data(), n, dim, k, iters, 21);
        double obj = quantization_objective(cb, data.data(), n);
        CHECK(obj <= prev + 1e-9);
        prev = obj;
    }
}

TEST_CASE("kmeans rejects bad arguments") {
    auto data = random_vectors(5, 3, 2);
    CHECK_THROWS_AS(kmeans(data.data(), 3, 2, 4, 5, 1), std::invalid_argument);
    CHECK_THROWS_AS(kmeans(data.data(), 3, 2, 2, 0, 1), std::invalid_argument);
}

TEST_CASE("pq encode/decode") {
    SUBCASE("decode(encode) is a fixed point on codeword concatenations") {
        auto data = random_vectors(6, 300, 8);
        PqCodebook pq = train_pq(data.data(), 300, 8, 2, 16, 8, 5);
        std::vector<float> r(8);
        auto cw0 = pq.codeword(0, 7);
        auto cw1 = pq.codeword(1, 3);
        std::copy(cw0.begin(), cw0.end(), r.begin());
        std::copy(cw1.begin(), cw1.end(), r.begin() + 4);
        auto code = pq_encode(pq, r.data());
        auto dec = pq_decode(pq, code.data());
        for (int i = 0; i < 8; ++i) CHECK(dec[i] == r[i]);
    }
    SUBCASE("encode is idempotent through decode") {
        auto data = random_vectors(7, 500, 16);
        PqCodebook pq = train_pq(data.data(), 500, 16, 4, 32, 8, 5);
        auto probe = random_vectors(8, 20, 16);
        for (int i = 0; i < 20; ++i) {
            auto code = pq_encode(pq, probe.data() + i * 16);
            auto dec = pq_decode(pq, code.data());
            CHECK(pq_encode(pq, dec.data()) == code);
        }
    }
    SUBCASE("encode matches exhaustive search over all codeword combinations") {
        // hand-built codebook: m=2, ksub=4, dim=4
        PqCodebook pq;
        pq.m = 2;
        pq.ksub = 4;
        pq.dim = 4;
        Rng rng(9);
        pq.codebooks.resize(2 * 4 * 2);
        for (auto& v : pq.codebooks) v = static_cast<float>(rng.normal());
        for (int trial = 0; trial < 25; ++trial) {
            std::vector<float> x(4);
            for (auto& v : x) v = static_cast<float>(rng.normal());
            auto code = pq_encode(pq, x.data());
            double best = 1e30;
            int best_c0 = -1, best_c1 = -1;
            for (int c0 = 0; c0 < 4; ++c0)
                for (int c1 = 0; c1 < 4; ++c1) {
                    double d = l2_sq(x.data(), pq.codeword(0, c0).data(), 2) +
                               l2_sq(x.data() + 2, pq.codeword(1, c1).data(), 2);
                    if (d < best - 1e-12) {
                        best = d;
                        best_c0 = c0;
                        best_c1 = c1;
                    }
                }
            CHECK(code[0] == best_c0);
            CHECK(code[1] == best_c1);
        }
    }
    SUBCASE("corrupt code bytes are rejected") {
        auto data = random_vectors(10, 100, 8);
        PqCodebook pq = train_pq(data.data(), 100, 8, 2, 16, 5, 5);
        std::uint8_t bad[2] = {16, 0};
        CHECK_THROWS_AS(pq_decode(pq, bad), CorruptIndexError);
    }
    SUBCASE("dimension validation") {
        auto data = random_vectors(11, 100, 6);
        CHECK_THROWS_AS(train_pq(data.data(), 100, 6, 4, 8, 5, 1), std::invalid_argument);
        CHECK_THROWS_AS(train_pq(data.data(), 4, 6, 2, 8, 5, 1), std::invalid_argument);
    }
}

TEST_CASE("adc tables") {
    auto data = random_vectors(12, 400, 8);
    PqCodebook pq = train_pq(data.data(), 400, 8, 2, 16, 8, 5);

    SUBCASE("summed table distance is zero on a decoded code") {
        std::uint8_t code[2] = {5, 11};
        auto dec = pq_decode(pq, code);
        auto tables = adc_tables(pq, dec.data());
        CHECK(adc_distance(pq, tables, code) == doctest::Approx(0.0).epsilon(1e-10));
    }
    SUBCASE("table sum equals decode-and-measure") {
        auto queries = random_vectors(13, 30, 8);
        Rng rng(14);
        for (int i = 0; i < 30; ++i) {
            std::uint8_t code[2] = {static_cast<std::uint8_t>(rng.next_below(16)),
                                    static_cast<std::uint8_t>(rng.next_below(16))};
            auto tables = adc_tables(pq, queries.data() + i * 8);
            auto dec = pq_decode(pq, code);
            double direct = l2_sq(queries.data() + i * 8, dec.data(), 8);
            CHECK(adc_distance(pq, tables, code) == doctest::Approx(direct).epsilon(1e-5));
        }
    }
    SUBCASE("all-zero codebook yields subvector norms") {
        PqCodebook zero;
        zero.m = 2;
        zero.ksub = 4;
        zero.dim = 4;
        zero.codebooks.assign(2 * 4 * 2, 0.0f);
        std::vector<float> q = {1.0f, 2.0f, 3.0f, 4.0f};
        auto tables = adc_tables(zero, q.data());
        for (int c = 0; c < 4; ++c) {
            CHECK(tables[c] == doctest::Approx(5.0));
            CHECK(tables[4 + c] == doctest::Approx(25.0));
        }
    }
}

TEST_CASE("ivfpq add/search/reconstruct") {
    const int dim = 16, cells = 8, m = 4, ksub = 16;
    auto train = random_unit_vectors(15, 600, dim);
    auto index = IvfPqIndex::train(train.data(), 600, dim, cells, m, ksub, 10, 33);

    auto vecs = random_unit_vectors(16, 400, dim);
    for (int i = 0; i < 400; ++i)
        index.add(std::span(vecs.data() + i * dim, dim), static_cast<std::uint32_t>(i));

    SUBCASE("duplicate ids are rejected") {
        CHECK_THROWS_AS(index.add(std::span(vecs.data(), dim), 0), std::invalid_argument);
    }
    SUBCASE("cell assignment matches brute force") {
        for (int i = 0; i < 400; ++i) {
            const float* x = vecs.data() + i * dim;
            int best = 0;
            double bd = l2_sq(x, index.coarse().row(0).data(), dim);
            for (int c = 1; c < cells; ++c) {
                double d = l2_sq(x, index.coarse().row(c).data(), dim);
                if (d < bd) {
                    bd = d;
                    best = c;
                }
            }
            CHECK(index.cell_of(static_cast<std::uint32_t>(i)) == best);
        }
    }
    SUBCASE("a centroid vector lands in its own cell") {
        auto row = index.coarse().row(3);
        IvfPqIndex copy = IvfPqIndex::deserialize(index.serialize());
        copy.add(row, 9999);
        CHECK(copy.cell_of(9999) == 3);
    }
    SUBCASE("identical vectors share cell and code") {
        IvfPqIndex copy = IvfPqIndex::deserialize(index.serialize());
        copy.add(std::span(vecs.data(), dim), 1000);
        CHECK(copy.cell_of(1000) == copy.cell_of(0));
        auto r0 = copy.reconstruct(0);
        auto r1 = copy.reconstruct(1000);
        CHECK(r0 == r1);
    }
    SUBCASE("full-probe search equals an exhaustive ADC oracle") {
        auto queries = random_unit_vectors(17, 25, dim);
        for (int qi = 0; qi < 25; ++qi) {
            const float* q = queries.data() + qi * dim;
            SearchResult got = index.search(std::span(q, dim), 10, cells);

            // oracle: ADC distance against every stored code
            std::vector<Neighbor> all;
            for (int c = 0; c < cells; ++c) {
                std::vector<float> residual(dim);
                for (int d = 0; d < dim; ++d) residual[d] = q[d] - index.coarse().row(c)[d];
                auto tables = adc_tables(index.pq(), residual.data());
                const auto& ids = index.cell_ids(c);
                for (std::size_t i = 0; i < ids.size(); ++i) {
                    double dist = adc_distance(index.pq(), tables,
                                               index.cell_codes(c).data() + i * m);
                    all.push_back({ids[i], static_cast<float>(dist)});
                }
            }
            std::sort(all.begin(), all.end(), [](const Neighbor& a, const Neighbor& b) {
                if (a.distance != b.distance) return a.distance < b.distance;
                return a.id < b.id;
            });
            REQUIRE(got.size() == 10);
            for (int i = 0; i < 10; ++i) {
                CHECK(got[i].id == all[i].id);
                CHECK(got[i].distance == doctest::Approx(all[i].distance).epsilon(1e-5));
            }
        }
    }
    SUBCASE("a stored reconstruction queries back to itself with distance 0") {
        auto rec = index.reconstruct(42);
        SearchResult r = index.search(rec, 1, cells);
        REQUIRE(r.size() == 1);
        CHECK(r[0].id == 42);
        CHECK(r[0].distance == doctest::Approx(0.0).epsilon(1e-10));
    }
    SUBCASE("reconstruct is centroid plus decoded residual and a projection") {
        auto rec = index.reconstruct(7);
        const int cell = index.cell_of(7);
        auto dec = pq_decode(index.pq(), index.cell_codes(cell).data() +
                                             static_cast<std::size_t>(index.cell_ids(cell).size()
                                                 ? std::distance(index.cell_ids(cell).begin(),
                                                                 std::find(index.cell_ids(cell).begin(),
                                                                           index.cell_ids(cell).end(), 7u))
                                                 : 0) * m);
        for (int d = 0; d < dim; ++d)
            CHECK(rec[d] == doctest::Approx(index.coarse().row(cell)[d] + dec[d]).epsilon(1e-6));

        // adding the reconstruction yields an identical code
        IvfPqIndex copy = IvfPqIndex::deserialize(index.serialize());
        copy.add(rec, 4242);
        CHECK(copy.reconstruct(4242) == rec);
    }
    SUBCASE("errors") {
        CHECK_THROWS_AS(index.reconstruct(99999), NotFoundError);
        CHECK_THROWS_AS(index.search(std::span(vecs.data(), dim), 5, 0), std::invalid_argument);
        CHECK_THROWS_AS(index.search(std::span(vecs.data(), dim), 5, cells + 1),
                        std::invalid_argument);
        std::vector<float> short_vec(dim - 1, 0.0f);
        CHECK_THROWS_AS(index.search(short_vec, 5, 1), std::invalid_argument);
    }
    SUBCASE("empty index returns an empty result") {
        auto empty = IvfPqIndex::train(train.data(), 600, dim, cells, m, ksub, 5, 33);
        CHECK(empty.search(std::span(vecs.data(), dim), 5, 1).empty());
    }
}

TEST_CASE("ivfpq k=1 degenerates to centered PQ") {
    const int dim = 8;
    auto train = random_vectors(18, 300, dim);
    auto index = IvfPqIndex::train(train.data(), 300, dim, 1, 2, 16, 8, 5);
    // the single centroid is the mean
    std::vector<double> mean(dim, 0.0);
    for (int i = 0; i < 300; ++i)
        for (int d = 0; d < dim; ++d) mean[d] += train[i * dim + d];
    for (int d = 0; d < dim; ++d)
        CHECK(index.coarse().row(0)[d] == doctest::Approx(mean[d] / 300).epsilon(1e-5));
}

TEST_CASE("ivfpq serialization") {
    const int dim = 8, cells = 4, m = 2, ksub = 16;
    auto train = random_unit_vectors(19, 200, dim);
    auto index = IvfPqIndex::train(train.data(), 200, dim, cells, m, ksub, 8, 3);
    auto vecs = random_unit_vectors(20, 60, dim);
    for (int i = 0; i < 60; ++i)
        index.add(std::span(vecs.data() + i * dim, dim), static_cast<std::uint32_t>(i));

    SUBCASE("round trip re-serializes byte-identically") {
        auto bytes = index.serialize();
        auto reloaded = IvfPqIndex::deserialize(bytes);
        CHECK(reloaded.serialize() == bytes);
    }
    SUBCASE("searches match after reload") {
        auto bytes = index.serialize();
        auto reloaded = IvfPqIndex::deserialize(bytes);
        auto q = random_unit_vectors(21, 1, dim);
        auto a = index.search(std::span(q.data(), dim), 10, cells);
        auto b = reloaded.search(std::span(q.data(), dim), 10, cells);
        REQUIRE(a.size() == b.size());
        for (std::size_t i = 0; i < a.size(); ++i) {
            CHECK(a[i].id == b[i].id);
            CHECK(a[i].distance == b[i].distance);
        }
    }
    SUBCASE("corrupting a code byte surfaces on search, not load") {
        auto bytes = index.serialize();
        // header: magic+version+4 geometry fields, then centroid and
        // codebook floats, then cell 0: u64 count, (u32 id, m bytes)
        std::size_t offset = 4 + 4 + 16 + 4 * (cells * dim) + 4 * (m * ksub * (dim / m));
        REQUIRE(bytes.size() > offset + 8);
        std::uint64_t count = 0;
        for (int i = 0; i < 8; ++i) count |= static_cast<std::uint64_t>(bytes[offset + i]) << (8 * i);
        REQUIRE(count > 0); // cell 0 must be non-empty for this fixture
        bytes[offset + 8 + 4] = 0xff; // first entry, first code byte
        auto corrupted = IvfPqIndex::deserialize(bytes); // load succeeds
        auto q = random_unit_vectors(22, 1, dim);
        CHECK_THROWS_AS(corrupted.search(std::span(q.data(), dim), 5, cells), CorruptIndexError);
    }
    SUBCASE("format errors") {
        auto bytes = index.serialize();
        auto bad_magic = bytes;
        bad_magic[0] = 'B';
        CHECK_THROWS_AS(IvfPqIndex::deserialize(bad_magic), FormatError);
        CHECK_THROWS_AS(IvfPqIndex::deserialize(std::span(bytes).subspan(0, bytes.size() / 2)),
                        FormatError);
        auto trailing = bytes;
        trailing.push_back(0);
        CHECK_THROWS_AS(IvfPqIndex::deserialize(trailing), FormatError);
        auto bad_version = bytes;
        bad_version[4] = 9;
        CHECK_THROWS_AS(IvfPqIndex::deserialize(bad_version), FormatError);
    }
}

TEST_CASE("opq training") {
    const int dim = 16, m = 4, ksub = 16;
    // anisotropic correlated data: random rotation of a decaying spectrum
    Rng rng(23);
    const std::size_t n = 1200;
    std::vector<float> data(n * dim);
    std::vector<double> mix(dim * dim);
    for (auto& v : mix) v = rng.normal();
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<double> z(dim);
        for (int d = 0; d < dim; ++d) z[d] = rng.normal() * std::pow(0.8, d);
        for (int r = 0; r < dim; ++r) {
            double acc = 0;
            for (int c = 0; c < dim; ++c) acc += mix[r * dim + c] * z[c];
            data[i * dim + r] = static_cast<float>(acc * 0.25);
        }
    }

    SUBCASE("one round with identity initialization equals plain PQ") {
        auto opq = train_opq(data.data(), n, dim, m, ksub, 1, 8, 77);
        auto pq = train_pq(data.data(), n, dim, m, ksub, 8, 77);
        CHECK(opq.pq.codebooks == pq.codebooks);
        for (int r = 0; r < dim; ++r)
            for (int c = 0; c < dim; ++c)
                CHECK(opq.rotation[r * dim + c] == (r == c ? 1.0f : 0.0f));
    }
    SUBCASE("rotation stays orthonormal") {
        auto opq = train_opq(data.data(), n, dim, m, ksub, 4, 8, 78);
        double max_dev = 0;
        for (int r = 0; r < dim; ++r)
            for (int c = 0; c < dim; ++c) {
                double acc = 0;
                for (int k = 0; k < dim; ++k)
                    acc += static_cast<double>(opq.rotation[r * dim + k]) *
                           opq.rotation[c * dim + k];
                max_dev = std::max(max_dev, std::abs(acc - (r == c ? 1.0 : 0.0)));
            }
        CHECK(max_dev < 1e-5);
    }
    SUBCASE("error after 5 rounds is no worse than after 1 round") {
        auto r1 = train_opq(data.data(), n, dim, m, ksub, 1, 8, 79);
        auto r5 = train_opq(data.data(), n, dim, m, ksub, 5, 8, 79);
        CHECK(r5.round_errors.back() <= r1.round_errors.back() + 1e-9);
        // and the recorded trajectory is non-increasing
        for (std::size_t i = 1; i < r5.round_errors.size(); ++i)
            CHECK(r5.round_errors[i] <= r5.round_errors[i - 1] + 1e-9);
    }
    SUBCASE("opq beats plain pq on correlated data across seeds") {
        double opq_mean = 0, pq_mean = 0;
        for (std::uint64_t seed = 100; seed < 105; ++seed) {
            auto opq = train_opq(data.data(), n, dim, m, ksub, 5, 8, seed);
            auto pq = train_pq(data.data(), n, dim, m, ksub, 8, seed);
            double pq_err = 0;
            for (std::size_t i = 0; i < n; ++i) {
                auto code = pq_encode(pq, data.data() + i * dim);
                auto dec = pq_decode(pq, code.data());
                pq_err += l2_sq(data.data() + i * dim, dec.data(), dim);
            }
            opq_mean += opq.round_errors.back();
            pq_mean += pq_err / static_cast<double>(n);
        }
        CHECK(opq_mean / 5.0 <= pq_mean / 5.0 + 1e-9);
    }
    SUBCASE("rounds must be positive") {
        CHECK_THROWS_AS(train_opq(data.data(), n, dim, m, ksub, 0, 8, 1), std::invalid_argument);
    }
}

TEST_CASE("pq flat index with and without rotation") {
    const int dim = 16, m = 4, ksub = 16;
    auto train = random_unit_vectors(24, 800, dim);
    auto vecs = random_unit_vectors(25, 100, dim);

    auto plain = PqFlatIndex::train(train.data(), 800, dim, m, ksub, 8, 5);
    auto opq = PqFlatIndex::train_opq(train.data(), 800, dim, m, ksub, 4, 8, 5);
    for (int i = 0; i < 100; ++i) {
        plain.add(std::span(vecs.data() + i * dim, dim), static_cast<std::uint32_t>(i));
        opq.add(std::span(vecs.data() + i * dim, dim), static_cast<std::uint32_t>(i));
    }
    CHECK_FALSE(plain.has_rotation());
    CHECK(opq.has_rotation());

    // reconstruct(id) round-trips through the rotation: re-adding the
    // reconstruction reproduces the same code
    for (const auto* index : {&plain, &opq}) {
        auto rec = index->reconstruct(3);
        SearchResult r = index->search(rec, 1);
        REQUIRE(!r.empty());
        CHECK(r[0].id == 3);
        CHECK(r[0].distance == doctest::Approx(0.0).epsilon(1e-9));
    }
}

TEST_CASE("lsh index") {
    const int dim = 16, out_dim = 8, bits = 32;
    auto train = random_vectors(26, 500, dim);
    auto index = LshIndex::train(train.data(), 500, dim, out_dim, bits, 99);

    SUBCASE("pca basis rows are orthonormal") {
        double max_dev = 0;
        for (int r = 0; r < out_dim; ++r)
            for (int c = 0; c < out_dim; ++c) {
                double acc = 0;
                for (int d = 0; d < dim; ++d)
                    acc += static_cast<double>(index.basis()[r * dim + d]) *
                           index.basis()[c * dim + d];
                max_dev = std::max(max_dev, std::abs(acc - (r == c ? 1.0 : 0.0)));
            }
        CHECK(max_dev < 1e-5);
    }
    SUBCASE("hashes are invariant to positive scaling about the mean") {
        // sign(w . P(x - mean)) is scale-invariant when the mean is zero;
        // center the probe so scaling acts on the projected coordinates
        std::vector<float> x(dim);
        Rng rng(27);
        for (int d = 0; d < dim; ++d)
            x[d] = static_cast<float>(index.mean()[d] + rng.normal());
        std::vector<float> x2(dim);
        for (int d = 0; d < dim; ++d)
            x2[d] = static_cast<float>(index.mean()[d] + 2.0 * (x[d] - index.mean()[d]));
        CHECK(index.hash(x) == index.hash(x2));
    }
    SUBCASE("search matches a brute-force Hamming scan") {
        auto stored = random_vectors(28, 200, dim);
        auto idx = LshIndex::train(train.data(), 500, dim, out_dim, bits, 99);
        for (int i = 0; i < 200; ++i)
            idx.add(std::span(stored.data() + i * dim, dim), static_cast<std::uint32_t>(i));
        auto queries = random_vectors(29, 10, dim);
        for (int qi = 0; qi < 10; ++qi) {
            std::span<const float> q(queries.data() + qi * dim, dim);
            auto got = idx.search(q, 7);
            std::uint64_t qh = idx.hash(q);
            std::vector<Neighbor> all;
            for (int i = 0; i < 200; ++i) {
                std::uint64_t sh = idx.stored_hash(static_cast<std::uint32_t>(i));
                all.push_back({static_cast<std::uint32_t>(i),
                               static_cast<float>(__builtin_popcountll(qh ^ sh))});
            }
            std::sort(all.begin(), all.end(), [](const Neighbor& a, const Neighbor& b) {
                if (a.distance != b.distance) return a.distance < b.distance;
                return a.id < b.id;
            });
            REQUIRE(got.size() == 7);
            for (int i = 0; i < 7; ++i) {
                CHECK(got[i].id == all[i].id);
                CHECK(got[i].distance == all[i].distance);
            }
        }
    }
    SUBCASE("a stored vector is its own nearest neighbor at distance 0") {
        auto idx = LshIndex::train(train.data(), 500, dim, out_dim, bits, 99);
        auto stored = random_vectors(30, 50, dim);
        for (int i = 0; i < 50; ++i)
            idx.add(std::span(stored.data() + i * dim, dim), static_cast<std::uint32_t>(i));
        auto r = idx.search(std::span(stored.data(), dim), 1);
        REQUIRE(!r.empty());
        CHECK(r[0].id == 0);
        CHECK(r[0].distance == 0.0f);
    }
    SUBCASE("a complement-hash adversary ranks last") {
        // with centered inputs, negating a vector flips every projection
        std::vector<float> centered(dim);
        Rng rng(31);
        for (int d = 0; d < dim; ++d) centered[d] = static_cast<float>(rng.normal());
        std::vector<float> probe(dim), anti(dim);
        for (int d = 0; d < dim; ++d) {
            probe[d] = index.mean()[d] + centered[d];
            anti[d] = index.mean()[d] - centered[d];
        }
        auto idx = LshIndex::train(train.data(), 500, dim, out_dim, bits, 99);
        idx.add(probe, 0);
        auto others = random_vectors(32, 20, dim);
        for (int i = 0; i < 20; ++i)
            idx.add(std::span(others.data() + i * dim, dim), static_cast<std::uint32_t>(i + 1));
        auto r = idx.search(anti, 21);
        REQUIRE(r.size() == 21);
        CHECK(r.back().id == 0);
        CHECK(r.back().distance == static_cast<float>(bits));
    }
    SUBCASE("small perturbations below the bit margins keep the hash") {
        std::vector<float> x(dim);
        Rng rng(33);
        for (int d = 0; d < dim; ++d) x[d] = static_cast<float>(rng.normal());
        // measure the smallest projection margin, then perturb well below it
        std::vector<double> proj(out_dim, 0.0);
        for (int r = 0; r < out_dim; ++r)
            for (int d = 0; d < dim; ++d)
                proj[r] += static_cast<double>(index.basis()[r * dim + d]) *
                           (x[d] - index.mean()[d]);
        double margin = 1e30;
        double max_w = 0;
        for (int j = 0; j < bits; ++j) {
            double acc = 0, wn = 0;
            for (int r = 0; r < out_dim; ++r) {
                acc += static_cast<double>(index.hyperplanes()[j * out_dim + r]) * proj[r];
                wn += static_cast<double>(index.hyperplanes()[j * out_dim + r]) *
                      index.hyperplanes()[j * out_dim + r];
            }
            margin = std::min(margin, std::abs(acc) / std::sqrt(wn));
        }
        (void)max_w;
        REQUIRE(margin > 0);
        // ||P delta|| <= ||delta||, so cap the input perturbation norm
        double eps = 0.5 * margin / std::sqrt(static_cast<double>(dim));
        std::vector<float> xp = x;
        for (int d = 0; d < dim; ++d) xp[d] += static_cast<float>(eps * ((d % 2) ? 1 : -1) / 2.0);
        CHECK(index.hash(x) == index.hash(xp));
    }
    SUBCASE("argument validation") {
        CHECK_THROWS_AS(LshIndex::train(train.data(), 10, dim, 16, 32, 1),
                        std::invalid_argument);
        CHECK_THROWS_AS(LshIndex::train(train.data(), 500, dim, dim + 1, 32, 1),
                        std::invalid_argument);
        CHECK_THROWS_AS(LshIndex::train(train.data(), 500, dim, 8, 65, 1),
                        std::invalid_argument);
    }
}
