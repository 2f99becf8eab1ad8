#include "actidx/index.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <stdexcept>

#include <Eigen/Dense>

#include "actidx/errors.hpp"

namespace actidx {

namespace {

double l2_sq(const float* a, const float* b, int dim) {
    double acc = 0.0;
    for (int i = 0; i < dim; ++i) {
        double d = static_cast<double>(a[i]) - b[i];
        acc += d * d;
    }
    return acc;
}

void sort_neighbors(SearchResult& r) {
    std::sort(r.begin(), r.end(), [](const Neighbor& a, const Neighbor& b) {
        if (a.distance != b.distance) return a.distance < b.distance;
        return a.id < b.id;
    });
}

// smallest `probes` cells by centroid distance, ties to the lower index
std::vector<int> probe_order(const Codebook& cb, const float* q, int probes) {
    std::vector<std::pair<double, int>> dists(cb.k);
    for (int i = 0; i < cb.k; ++i) dists[i] = {l2_sq(cb.row(i).data(), q, cb.dim), i};
    std::partial_sort(dists.begin(), dists.begin() + probes, dists.end());
    std::vector<int> out(probes);
    for (int i = 0; i < probes; ++i) out[i] = dists[i].second;
    return out;
}

} // namespace

std::vector<float> kmeans_pp_init(const float* data, std::size_t n, int dim, int k, Rng& rng) {
    std::vector<float> centroids(static_cast<std::size_t>(k) * dim);
    std::vector<double> d2(n, std::numeric_limits<double>::max());
    std::size_t first = rng.next_below(n);
    std::copy_n(data + first * dim, dim, centroids.begin());
    for (int c = 1; c < k; ++c) {
        const float* prev = centroids.data() + static_cast<std::size_t>(c - 1) * dim;
        double total = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            d2[i] = std::min(d2[i], l2_sq(data + i * dim, prev, dim));
            total += d2[i];
        }
        std::size_t pick;
        if (total <= 0.0) {
            pick = rng.next_below(n);
        } else {
            double r = rng.next_double() * total;
            double acc = 0.0;
            pick = n - 1;
            for (std::size_t i = 0; i < n; ++i) {
                acc += d2[i];
                if (acc >= r) {
                    pick = i;
                    break;
                }
            }
        }
        std::copy_n(data + pick * dim, dim, centroids.begin() + static_cast<std::size_t>(c) * dim);
    }
    return centroids;
}

namespace {

int assign_nearest(const float* x, const float* centroids, int k, int dim) {
    int best = 0;
    double best_d = l2_sq(x, centroids, dim);
    for (int c = 1; c < k; ++c) {
        double d = l2_sq(x, centroids + static_cast<std::size_t>(c) * dim, dim);
        if (d < best_d) {
            best_d = d;
            best = c;
        }
    }
    return best;
}

// Lloyd iterations from given centroids; shared by kmeans and OPQ warm
// restarts.  Empty cells steal the point farthest from its own centroid.
void lloyd_iterate(const float* data, std::size_t n, int dim, int k, int iterations,
                   std::vector<float>& centroids) {
    std::vector<int> assign(n);
    std::vector<double> sums(static_cast<std::size_t>(k) * dim);
    std::vector<std::size_t> counts(k);
    std::vector<double> point_d2(n);
    for (int it = 0; it < iterations; ++it) {
        for (std::size_t i = 0; i < n; ++i) {
            assign[i] = assign_nearest(data + i * dim, centroids.data(), k, dim);
            point_d2[i] = l2_sq(data + i * dim, centroids.data() + static_cast<std::size_t>(assign[i]) * dim, dim);
        }
        std::fill(sums.begin(), sums.end(), 0.0);
        std::fill(counts.begin(), counts.end(), 0);
        for (std::size_t i = 0; i < n; ++i) {
            const float* x = data + i * dim;
            double* s = sums.data() + static_cast<std::size_t>(assign[i]) * dim;
            for (int d = 0; d < dim; ++d) s[d] += x[d];
            ++counts[assign[i]];
        }
        for (int c = 0; c < k; ++c) {
            if (counts[c] == 0) continue;
            float* row = centroids.data() + static_cast<std::size_t>(c) * dim;
            const double* s = sums.data() + static_cast<std::size_t>(c) * dim;
            for (int d = 0; d < dim; ++d) row[d] = static_cast<float>(s[d] / counts[c]);
        }
        for (int c = 0; c < k; ++c) {
            if (counts[c] != 0) continue;
            std::size_t far = 0;
            double far_d = -1.0;
            for (std::size_t i = 0; i < n; ++i) {
                if (point_d2[i] > far_d) {
                    far_d = point_d2[i];
                    far = i;
                }
            }
            std::copy_n(data + far * dim, dim, centroids.begin() + static_cast<std::size_t>(c) * dim);
            point_d2[far] = -1.0; // each empty cell takes a distinct point
        }
    }
}

} // namespace

Codebook kmeans(const float* data, std::size_t n, int dim, int k, int iterations,
                std::uint64_t seed) {
    if (k < 1) throw std::invalid_argument("kmeans: k must be >= 1");
    if (n < static_cast<std::size_t>(k))
        throw std::invalid_argument("kmeans: need at least k training vectors");
    if (iterations < 1) throw std::invalid_argument("kmeans: iterations must be >= 1");
    Rng rng = derive_rng(seed, "kmeans-init");
    Codebook cb;
    cb.k = k;
    cb.dim = dim;
    cb.centroids = kmeans_pp_init(data, n, dim, k, rng);
    lloyd_iterate(data, n, dim, k, iterations, cb.centroids);
    return cb;
}

int nearest_centroid(const Codebook& cb, const float* x) {
    return assign_nearest(x, cb.centroids.data(), cb.k, cb.dim);
}

double quantization_objective(const Codebook& cb, const float* data, std::size_t n) {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        int c = nearest_centroid(cb, data + i * static_cast<std::size_t>(cb.dim));
        total += l2_sq(data + i * static_cast<std::size_t>(cb.dim), cb.row(c).data(), cb.dim);
    }
    return total / static_cast<double>(n);
}

PqCodebook train_pq(const float* data, std::size_t n, int dim, int m, int ksub, int iterations,
                    std::uint64_t seed) {
    if (m < 1 || dim % m != 0) throw std::invalid_argument("pq: dim must be divisible by m");
    if (ksub < 1 || ksub > 256) throw std::invalid_argument("pq: ksub must be in [1, 256]");
    if (n < static_cast<std::size_t>(ksub))
        throw std::invalid_argument("pq: need at least ksub training vectors");
    const int ds = dim / m;
    PqCodebook pq;
    pq.m = m;
    pq.ksub = ksub;
    pq.dim = dim;
    pq.codebooks.resize(static_cast<std::size_t>(m) * ksub * ds);
    std::vector<float> sub(n * static_cast<std::size_t>(ds));
    for (int j = 0; j < m; ++j) {
        for (std::size_t i = 0; i < n; ++i)
            std::copy_n(data + i * dim + static_cast<std::size_t>(j) * ds, ds,
                        sub.begin() + i * ds);
        Codebook cb = kmeans(sub.data(), n, ds, ksub, iterations, seed + static_cast<std::uint64_t>(j));
        std::copy(cb.centroids.begin(), cb.centroids.end(),
                  pq.codebooks.begin() + static_cast<std::size_t>(j) * ksub * ds);
    }
    return pq;
}

std::vector<std::uint8_t> pq_encode(const PqCodebook& pq, const float* vec) {
    const int ds = pq.dsub();
    std::vector<std::uint8_t> code(pq.m);
    for (int j = 0; j < pq.m; ++j) {
        const float* sub = vec + static_cast<std::size_t>(j) * ds;
        int best = 0;
        double best_d = l2_sq(sub, pq.codeword(j, 0).data(), ds);
        for (int c = 1; c < pq.ksub; ++c) {
            double d = l2_sq(sub, pq.codeword(j, c).data(), ds);
            if (d < best_d) {
                best_d = d;
                best = c;
            }
        }
        code[j] = static_cast<std::uint8_t>(best);
    }
    return code;
}

std::vector<float> pq_decode(const PqCodebook& pq, const std::uint8_t* code) {
    const int ds = pq.dsub();
    std::vector<float> out(static_cast<std::size_t>(pq.dim));
    for (int j = 0; j < pq.m; ++j) {
        if (code[j] >= pq.ksub)
            throw CorruptIndexError("pq code byte " + std::to_string(code[j]) +
                                    " out of range (ksub=" + std::to_string(pq.ksub) + ")");
        auto cw = pq.codeword(j, code[j]);
        std::copy(cw.begin(), cw.end(), out.begin() + static_cast<std::size_t>(j) * ds);
    }
    return out;
}

std::vector<float> adc_tables(const PqCodebook& pq, const float* query) {
    const int ds = pq.dsub();
    std::vector<float> tables(static_cast<std::size_t>(pq.m) * pq.ksub);
    for (int j = 0; j < pq.m; ++j) {
        const float* sub = query + static_cast<std::size_t>(j) * ds;
        for (int c = 0; c < pq.ksub; ++c)
            tables[static_cast<std::size_t>(j) * pq.ksub + c] =
                static_cast<float>(l2_sq(sub, pq.codeword(j, c).data(), ds));
    }
    return tables;
}

double adc_distance(const PqCodebook& pq, const std::vector<float>& tables,
                    const std::uint8_t* code) {
    double acc = 0.0;
    for (int j = 0; j < pq.m; ++j) {
        if (code[j] >= pq.ksub)
            throw CorruptIndexError("pq code byte " + std::to_string(code[j]) +
                                    " out of range (ksub=" + std::to_string(pq.ksub) + ")");
        acc += tables[static_cast<std::size_t>(j) * pq.ksub + code[j]];
    }
    return acc;
}

IvfPqIndex IvfPqIndex::train(const float* train_vecs, std::size_t n, int dim, int k_cells, int m,
                             int ksub, int kmeans_iterations, std::uint64_t seed) {
    if (dim % m != 0) throw std::invalid_argument("ivfpq: dim must be divisible by m");
    if (n < static_cast<std::size_t>(std::max(k_cells, ksub)))
        throw std::invalid_argument("ivfpq: need at least max(k, ksub) training vectors");
    IvfPqIndex index;
    index.coarse_ = kmeans(train_vecs, n, dim, k_cells, kmeans_iterations, seed);
    // PQ is trained on coarse residuals (IVFADC)
    std::vector<float> residuals(n * static_cast<std::size_t>(dim));
    for (std::size_t i = 0; i < n; ++i) {
        const float* x = train_vecs + i * dim;
        int cell = nearest_centroid(index.coarse_, x);
        auto cent = index.coarse_.row(cell);
        for (int d = 0; d < dim; ++d) residuals[i * dim + d] = x[d] - cent[d];
    }
    index.pq_ = train_pq(residuals.data(), n, dim, m, ksub, kmeans_iterations,
                         seed + 0x9e3779b9ULL);
    index.ids_.resize(k_cells);
    index.codes_.resize(k_cells);
    return index;
}

void IvfPqIndex::add(std::span<const float> x, std::uint32_t id) {
    if (static_cast<int>(x.size()) != coarse_.dim)
        throw std::invalid_argument("ivfpq add: dimension mismatch");
    if (locations_.count(id)) throw std::invalid_argument("ivfpq add: duplicate id");
    const int cell = nearest_centroid(coarse_, x.data());
    auto cent = coarse_.row(cell);
    std::vector<float> residual(coarse_.dim);
    for (int d = 0; d < coarse_.dim; ++d) residual[d] = x[d] - cent[d];
    auto code = pq_encode(pq_, residual.data());
    locations_[id] = {static_cast<std::uint32_t>(cell),
                      static_cast<std::uint32_t>(ids_[cell].size())};
    ids_[cell].push_back(id);
    codes_[cell].insert(codes_[cell].end(), code.begin(), code.end());
}

SearchResult IvfPqIndex::search(std::span<const float> query, int k, int probes) const {
    if (static_cast<int>(query.size()) != coarse_.dim)
        throw std::invalid_argument("ivfpq search: dimension mismatch");
    if (probes < 1 || probes > coarse_.k)
        throw std::invalid_argument("ivfpq search: probes must be in [1, cells]");
    if (k < 1) throw std::invalid_argument("ivfpq search: k must be >= 1");
    if (locations_.empty()) return {};
    SearchResult candidates;
    std::vector<float> residual(coarse_.dim);
    for (int cell : probe_order(coarse_, query.data(), probes)) {
        if (ids_[cell].empty()) continue;
        auto cent = coarse_.row(cell);
        for (int d = 0; d < coarse_.dim; ++d) residual[d] = query[d] - cent[d];
        const auto tables = adc_tables(pq_, residual.data());
        const auto& ids = ids_[cell];
        const auto& codes = codes_[cell];
        for (std::size_t i = 0; i < ids.size(); ++i) {
            double dist = adc_distance(pq_, tables, codes.data() + i * pq_.m);
            candidates.push_back({ids[i], static_cast<float>(dist)});
        }
    }
    sort_neighbors(candidates);
    if (candidates.size() > static_cast<std::size_t>(k)) candidates.resize(k);
    return candidates;
}

std::vector<float> IvfPqIndex::reconstruct(std::uint32_t id) const {
    auto it = locations_.find(id);
    if (it == locations_.end())
        throw NotFoundError("ivfpq: id " + std::to_string(id) + " not in index");
    const auto [cell, pos] = it->second;
    auto decoded = pq_decode(pq_, codes_[cell].data() + static_cast<std::size_t>(pos) * pq_.m);
    auto cent = coarse_.row(static_cast<int>(cell));
    for (int d = 0; d < coarse_.dim; ++d) decoded[d] += cent[d];
    return decoded;
}

int IvfPqIndex::coarse_assign(std::span<const float> x) const {
    if (static_cast<int>(x.size()) != coarse_.dim)
        throw std::invalid_argument("ivfpq: dimension mismatch");
    return nearest_centroid(coarse_, x.data());
}

int IvfPqIndex::cell_of(std::uint32_t id) const {
    auto it = locations_.find(id);
    if (it == locations_.end())
        throw NotFoundError("ivfpq: id " + std::to_string(id) + " not in index");
    return static_cast<int>(it->second.first);
}

namespace {

void put_u32(std::vector<std::uint8_t>& buf, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
}

void put_u64(std::vector<std::uint8_t>& buf, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
}

void put_f32(std::vector<std::uint8_t>& buf, float f) {
    std::uint32_t bits;
    std::memcpy(&bits, &f, 4);
    put_u32(buf, bits);
}

struct ByteReader {
    std::span<const std::uint8_t> bytes;
    std::size_t pos = 0;

    void need(std::size_t n, const char* what) const {
        if (pos + n > bytes.size())
            throw FormatError(std::string("index: truncated reading ") + what,
                              static_cast<long>(pos));
    }
    std::uint32_t u32(const char* what) {
        need(4, what);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes[pos + i]) << (8 * i);
        pos += 4;
        return v;
    }
    std::uint64_t u64(const char* what) {
        need(8, what);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes[pos + i]) << (8 * i);
        pos += 8;
        return v;
    }
    float f32(const char* what) {
        std::uint32_t bits = u32(what);
        float f;
        std::memcpy(&f, &bits, 4);
        return f;
    }
};

constexpr std::uint32_t kIndexVersion = 1;

} // namespace

std::vector<std::uint8_t> IvfPqIndex::serialize() const {
    std::vector<std::uint8_t> buf;
    buf.insert(buf.end(), {'A', 'I', 'D', 'X'});
    put_u32(buf, kIndexVersion);
    put_u32(buf, static_cast<std::uint32_t>(coarse_.k));
    put_u32(buf, static_cast<std::uint32_t>(coarse_.dim));
    put_u32(buf, static_cast<std::uint32_t>(pq_.m));
    put_u32(buf, static_cast<std::uint32_t>(pq_.ksub));
    for (float f : coarse_.centroids) put_f32(buf, f);
    for (float f : pq_.codebooks) put_f32(buf, f);
    for (int cell = 0; cell < coarse_.k; ++cell) {
        put_u64(buf, ids_[cell].size());
        for (std::size_t i = 0; i < ids_[cell].size(); ++i) {
            put_u32(buf, ids_[cell][i]);
            const std::uint8_t* code = codes_[cell].data() + i * pq_.m;
            buf.insert(buf.end(), code, code + pq_.m);
        }
    }
    return buf;
}

IvfPqIndex IvfPqIndex::deserialize(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < 4 || bytes[0] != 'A' || bytes[1] != 'I' || bytes[2] != 'D' ||
        bytes[3] != 'X')
        throw FormatError("index: bad magic", 0);
    ByteReader r{bytes, 4};
    const auto version = r.u32("version");
    if (version != kIndexVersion)
        throw FormatError("index: unsupported version " + std::to_string(version), 4);
    IvfPqIndex index;
    const auto k = r.u32("cell count");
    const auto dim = r.u32("dimension");
    const auto m = r.u32("subquantizer count");
    const auto ksub = r.u32("codewords per subquantizer");
    if (k == 0 || dim == 0 || m == 0 || ksub == 0 || ksub > 256 || dim % m != 0)
        throw FormatError("index: invalid geometry header", 8);
    index.coarse_.k = static_cast<int>(k);
    index.coarse_.dim = static_cast<int>(dim);
    index.coarse_.centroids.resize(static_cast<std::size_t>(k) * dim);
    for (auto& f : index.coarse_.centroids) f = r.f32("coarse centroids");
    index.pq_.m = static_cast<int>(m);
    index.pq_.ksub = static_cast<int>(ksub);
    index.pq_.dim = static_cast<int>(dim);
    index.pq_.codebooks.resize(static_cast<std::size_t>(m) * ksub * (dim / m));
    for (auto& f : index.pq_.codebooks) f = r.f32("pq codebooks");
    index.ids_.resize(k);
    index.codes_.resize(k);
    for (std::uint32_t cell = 0; cell < k; ++cell) {
        const auto count = r.u64("list length");
        for (std::uint64_t i = 0; i < count; ++i) {
            const auto id = r.u32("entry id");
            r.need(m, "entry code");
            if (index.locations_.count(id))
                throw FormatError("index: duplicate id " + std::to_string(id),
                                  static_cast<long>(r.pos));
            index.locations_[id] = {cell, static_cast<std::uint32_t>(index.ids_[cell].size())};
            index.ids_[cell].push_back(id);
            index.codes_[cell].insert(index.codes_[cell].end(), r.bytes.data() + r.pos,
                                      r.bytes.data() + r.pos + m);
            r.pos += m;
        }
    }
    if (r.pos != bytes.size())
        throw FormatError("index: trailing bytes", static_cast<long>(r.pos));
    return index;
}

void IvfPqIndex::save(const std::string& path) const {
    auto bytes = serialize();
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("short write to " + path);
}

IvfPqIndex IvfPqIndex::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                    std::istreambuf_iterator<char>());
    return deserialize(bytes);
}

IvfFlatIndex IvfFlatIndex::train(const float* train_vecs, std::size_t n, int dim, int k_cells,
                                 int kmeans_iterations, std::uint64_t seed) {
    IvfFlatIndex index;
    index.coarse_ = kmeans(train_vecs, n, dim, k_cells, kmeans_iterations, seed);
    index.ids_.resize(k_cells);
    index.vecs_.resize(k_cells);
    return index;
}

void IvfFlatIndex::add(std::span<const float> x, std::uint32_t id) {
    if (static_cast<int>(x.size()) != coarse_.dim)
        throw std::invalid_argument("ivfflat add: dimension mismatch");
    if (locations_.count(id)) throw std::invalid_argument("ivfflat add: duplicate id");
    const int cell = nearest_centroid(coarse_, x.data());
    locations_[id] = {static_cast<std::uint32_t>(cell),
                      static_cast<std::uint32_t>(ids_[cell].size())};
    ids_[cell].push_back(id);
    vecs_[cell].insert(vecs_[cell].end(), x.begin(), x.end());
}

SearchResult IvfFlatIndex::search(std::span<const float> query, int k, int probes) const {
    if (static_cast<int>(query.size()) != coarse_.dim)
        throw std::invalid_argument("ivfflat search: dimension mismatch");
    if (probes < 1 || probes > coarse_.k)
        throw std::invalid_argument("ivfflat search: probes must be in [1, cells]");
    if (locations_.empty()) return {};
    SearchResult candidates;
    for (int cell : probe_order(coarse_, query.data(), probes)) {
        const auto& ids = ids_[cell];
        for (std::size_t i = 0; i < ids.size(); ++i) {
            double d = l2_sq(vecs_[cell].data() + i * coarse_.dim, query.data(), coarse_.dim);
            candidates.push_back({ids[i], static_cast<float>(d)});
        }
    }
    sort_neighbors(candidates);
    if (candidates.size() > static_cast<std::size_t>(k)) candidates.resize(k);
    return candidates;
}

std::vector<float> IvfFlatIndex::reconstruct(std::uint32_t id) const {
    auto it = locations_.find(id);
    if (it == locations_.end())
        throw NotFoundError("ivfflat: id " + std::to_string(id) + " not in index");
    const auto [cell, pos] = it->second;
    const float* v = vecs_[cell].data() + static_cast<std::size_t>(pos) * coarse_.dim;
    return std::vector<float>(v, v + coarse_.dim);
}

int IvfFlatIndex::coarse_assign(std::span<const float> x) const {
    if (static_cast<int>(x.size()) != coarse_.dim)
        throw std::invalid_argument("ivfflat: dimension mismatch");
    return nearest_centroid(coarse_, x.data());
}

int IvfFlatIndex::cell_of(std::uint32_t id) const {
    auto it = locations_.find(id);
    if (it == locations_.end())
        throw NotFoundError("ivfflat: id " + std::to_string(id) + " not in index");
    return static_cast<int>(it->second.first);
}

namespace {

// warm Lloyd refresh of an existing PQ on new data (OPQ inner loop)
void refresh_pq(PqCodebook& pq, const float* data, std::size_t n, int iterations) {
    const int ds = pq.dsub();
    std::vector<float> sub(n * static_cast<std::size_t>(ds));
    for (int j = 0; j < pq.m; ++j) {
        for (std::size_t i = 0; i < n; ++i)
            std::copy_n(data + i * pq.dim + static_cast<std::size_t>(j) * ds, ds,
                        sub.begin() + i * ds);
        std::vector<float> centroids(
            pq.codebooks.begin() + static_cast<std::size_t>(j) * pq.ksub * ds,
            pq.codebooks.begin() + static_cast<std::size_t>(j + 1) * pq.ksub * ds);
        lloyd_iterate(sub.data(), n, ds, pq.ksub, iterations, centroids);
        std::copy(centroids.begin(), centroids.end(),
                  pq.codebooks.begin() + static_cast<std::size_t>(j) * pq.ksub * ds);
    }
}

double pq_mean_error(const PqCodebook& pq, const float* data, std::size_t n) {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        auto code = pq_encode(pq, data + i * pq.dim);
        auto dec = pq_decode(pq, code.data());
        total += l2_sq(data + i * pq.dim, dec.data(), pq.dim);
    }
    return total / static_cast<double>(n);
}

} // namespace

OpqResult train_opq(const float* data, std::size_t n, int dim, int m, int ksub, int rounds,
                    int kmeans_iterations, std::uint64_t seed) {
    if (rounds < 1) throw std::invalid_argument("opq: rounds must be >= 1");
    OpqResult result;
    result.rotation.assign(static_cast<std::size_t>(dim) * dim, 0.0f);
    for (int i = 0; i < dim; ++i) result.rotation[static_cast<std::size_t>(i) * dim + i] = 1.0f;

    std::vector<float> rotated(n * static_cast<std::size_t>(dim));
    std::vector<float> decoded(n * static_cast<std::size_t>(dim));
    for (int round = 0; round < rounds; ++round) {
        for (std::size_t i = 0; i < n; ++i) {
            const float* x = data + i * dim;
            float* y = rotated.data() + i * dim;
            for (int r = 0; r < dim; ++r) {
                double acc = 0.0;
                const float* row = result.rotation.data() + static_cast<std::size_t>(r) * dim;
                for (int c = 0; c < dim; ++c) acc += static_cast<double>(row[c]) * x[c];
                y[r] = static_cast<float>(acc);
            }
        }
        if (round == 0)
            result.pq = train_pq(rotated.data(), n, dim, m, ksub, kmeans_iterations, seed);
        else
            refresh_pq(result.pq, rotated.data(), n, kmeans_iterations);

        for (std::size_t i = 0; i < n; ++i) {
            auto code = pq_encode(result.pq, rotated.data() + i * dim);
            auto dec = pq_decode(result.pq, code.data());
            std::copy(dec.begin(), dec.end(), decoded.begin() + i * dim);
        }
        result.round_errors.push_back(pq_mean_error(result.pq, rotated.data(), n));

        if (round + 1 < rounds) {
            // orthogonal Procrustes: R = V U^T with svd(X^T Y) = U S V^T,
            // where rows of X are inputs and rows of Y their codewords
            Eigen::MatrixXd cross = Eigen::MatrixXd::Zero(dim, dim);
            for (std::size_t i = 0; i < n; ++i)
                for (int r = 0; r < dim; ++r)
                    for (int c = 0; c < dim; ++c)
                        cross(r, c) += static_cast<double>(data[i * dim + r]) * decoded[i * dim + c];
            Eigen::JacobiSVD<Eigen::MatrixXd> svd(cross,
                                                  Eigen::ComputeFullU | Eigen::ComputeFullV);
            if (svd.info() != Eigen::Success)
                throw NumericError("opq: SVD failed on degenerate cross-covariance");
            Eigen::MatrixXd rot = svd.matrixV() * svd.matrixU().transpose();
            for (int r = 0; r < dim; ++r)
                for (int c = 0; c < dim; ++c)
                    result.rotation[static_cast<std::size_t>(r) * dim + c] =
                        static_cast<float>(rot(r, c));
        }
    }
    return result;
}

PqFlatIndex PqFlatIndex::train(const float* train_vecs, std::size_t n, int dim, int m, int ksub,
                               int kmeans_iterations, std::uint64_t seed) {
    PqFlatIndex index;
    index.pq_ = train_pq(train_vecs, n, dim, m, ksub, kmeans_iterations, seed);
    return index;
}

PqFlatIndex PqFlatIndex::train_opq(const float* train_vecs, std::size_t n, int dim, int m,
                                   int ksub, int rounds, int kmeans_iterations,
                                   std::uint64_t seed) {
    auto opq = actidx::train_opq(train_vecs, n, dim, m, ksub, rounds, kmeans_iterations, seed);
    PqFlatIndex index;
    index.pq_ = std::move(opq.pq);
    index.rotation_ = std::move(opq.rotation);
    return index;
}

std::vector<float> PqFlatIndex::rotate(std::span<const float> x) const {
    if (rotation_.empty()) return std::vector<float>(x.begin(), x.end());
    const int dim = pq_.dim;
    std::vector<float> out(dim);
    for (int r = 0; r < dim; ++r) {
        double acc = 0.0;
        const float* row = rotation_.data() + static_cast<std::size_t>(r) * dim;
        for (int c = 0; c < dim; ++c) acc += static_cast<double>(row[c]) * x[c];
        out[r] = static_cast<float>(acc);
    }
    return out;
}

void PqFlatIndex::add(std::span<const float> x, std::uint32_t id) {
    if (static_cast<int>(x.size()) != pq_.dim)
        throw std::invalid_argument("pqflat add: dimension mismatch");
    if (positions_.count(id)) throw std::invalid_argument("pqflat add: duplicate id");
    auto code = pq_encode(pq_, rotate(x).data());
    positions_[id] = static_cast<std::uint32_t>(ids_.size());
    ids_.push_back(id);
    codes_.insert(codes_.end(), code.begin(), code.end());
}

SearchResult PqFlatIndex::search(std::span<const float> query, int k) const {
    if (static_cast<int>(query.size()) != pq_.dim)
        throw std::invalid_argument("pqflat search: dimension mismatch");
    if (ids_.empty()) return {};
    const auto tables = adc_tables(pq_, rotate(query).data());
    SearchResult candidates;
    candidates.reserve(ids_.size());
    for (std::size_t i = 0; i < ids_.size(); ++i) {
        double d = adc_distance(pq_, tables, codes_.data() + i * pq_.m);
        candidates.push_back({ids_[i], static_cast<float>(d)});
    }
    sort_neighbors(candidates);
    if (candidates.size() > static_cast<std::size_t>(k)) candidates.resize(k);
    return candidates;
}

std::vector<float> PqFlatIndex::reconstruct(std::uint32_t id) const {
    auto it = positions_.find(id);
    if (it == positions_.end())
        throw NotFoundError("pqflat: id " + std::to_string(id) + " not in index");
    auto decoded = pq_decode(pq_, codes_.data() + static_cast<std::size_t>(it->second) * pq_.m);
    if (rotation_.empty()) return decoded;
    const int dim = pq_.dim;
    std::vector<float> out(dim);
    for (int c = 0; c < dim; ++c) {
        double acc = 0.0; // R^T y: column dot
        for (int r = 0; r < dim; ++r)
            acc += static_cast<double>(rotation_[static_cast<std::size_t>(r) * dim + c]) * decoded[r];
        out[c] = static_cast<float>(acc);
    }
    return out;
}

LshIndex LshIndex::train(const float* train_vecs, std::size_t n, int dim, int out_dim, int n_bits,
                         std::uint64_t seed) {
    if (out_dim < 1 || out_dim > dim)
        throw std::invalid_argument("lsh: out_dim must be in [1, dim]");
    if (n_bits < 1 || n_bits > 64) throw std::invalid_argument("lsh: bits must be in [1, 64]");
    if (n <= static_cast<std::size_t>(out_dim))
        throw std::invalid_argument("lsh: need more than out_dim training vectors");
    LshIndex index;
    index.dim_ = dim;
    index.out_dim_ = out_dim;
    index.n_bits_ = n_bits;

    index.mean_.assign(dim, 0.0f);
    std::vector<double> mean(dim, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (int d = 0; d < dim; ++d) mean[d] += train_vecs[i * dim + d];
    for (int d = 0; d < dim; ++d) {
        mean[d] /= static_cast<double>(n);
        index.mean_[d] = static_cast<float>(mean[d]);
    }

    Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(dim, dim);
    for (std::size_t i = 0; i < n; ++i) {
        for (int r = 0; r < dim; ++r) {
            const double xr = train_vecs[i * dim + r] - mean[r];
            for (int c = r; c < dim; ++c)
                cov(r, c) += xr * (train_vecs[i * dim + c] - mean[c]);
        }
    }
    for (int r = 0; r < dim; ++r)
        for (int c = 0; c < r; ++c) cov(r, c) = cov(c, r);
    cov /= static_cast<double>(n);

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
    if (eig.info() != Eigen::Success) throw NumericError("lsh: eigendecomposition failed");

    // eigenvalues come ascending; keep the out_dim leading components
    const auto& evals = eig.eigenvalues();
    const auto& evecs = eig.eigenvectors();
    const double rank_floor = std::max(evals(dim - 1), 0.0) * 1e-10;
    int deficient = 0;
    index.basis_.resize(static_cast<std::size_t>(out_dim) * dim);
    for (int r = 0; r < out_dim; ++r) {
        const int src = dim - 1 - r;
        if (evals(src) <= rank_floor) ++deficient;
        for (int c = 0; c < dim; ++c)
            index.basis_[static_cast<std::size_t>(r) * dim + c] = static_cast<float>(evecs(c, src));
    }
    if (deficient > 0) {
        // rank-deficient covariance: replace null-space rows with seeded
        // random directions re-orthonormalized against the kept basis
        std::fprintf(stderr,
                     "lsh: covariance rank deficient, padding %d basis rows with random "
                     "orthonormal completions\n",
                     deficient);
        Rng rng = derive_rng(seed, "lsh-basis-completion");
        for (int r = out_dim - deficient; r < out_dim; ++r) {
            std::vector<double> v(dim);
            for (;;) {
                for (int c = 0; c < dim; ++c) v[c] = rng.normal();
                for (int prev = 0; prev < r; ++prev) {
                    double dot = 0.0;
                    const float* row = index.basis_.data() + static_cast<std::size_t>(prev) * dim;
                    for (int c = 0; c < dim; ++c) dot += v[c] * row[c];
                    for (int c = 0; c < dim; ++c) v[c] -= dot * row[c];
                }
                double len = 0.0;
                for (double x : v) len += x * x;
                len = std::sqrt(len);
                if (len > 1e-6) {
                    for (int c = 0; c < dim; ++c)
                        index.basis_[static_cast<std::size_t>(r) * dim + c] =
                            static_cast<float>(v[c] / len);
                    break;
                }
            }
        }
    }

    Rng rng = derive_rng(seed, "lsh-hyperplanes");
    index.hyperplanes_.resize(static_cast<std::size_t>(n_bits) * out_dim);
    for (auto& h : index.hyperplanes_) h = static_cast<float>(rng.normal());
    return index;
}

std::uint64_t LshIndex::hash(std::span<const float> x) const {
    if (static_cast<int>(x.size()) != dim_) throw std::invalid_argument("lsh: dimension mismatch");
    std::vector<double> proj(out_dim_, 0.0);
    for (int r = 0; r < out_dim_; ++r) {
        const float* row = basis_.data() + static_cast<std::size_t>(r) * dim_;
        double acc = 0.0;
        for (int c = 0; c < dim_; ++c) acc += static_cast<double>(row[c]) * (x[c] - mean_[c]);
        proj[r] = acc;
    }
    std::uint64_t h = 0;
    for (int j = 0; j < n_bits_; ++j) {
        const float* w = hyperplanes_.data() + static_cast<std::size_t>(j) * out_dim_;
        double acc = 0.0;
        for (int r = 0; r < out_dim_; ++r) acc += static_cast<double>(w[r]) * proj[r];
        if (acc >= 0.0) h |= (1ULL << j);
    }
    return h;
}

void LshIndex::add(std::span<const float> x, std::uint32_t id) {
    if (positions_.count(id)) throw std::invalid_argument("lsh add: duplicate id");
    const std::uint64_t h = hash(x);
    positions_[id] = static_cast<std::uint32_t>(ids_.size());
    ids_.push_back(id);
    hashes_.push_back(h);
}

std::uint64_t LshIndex::stored_hash(std::uint32_t id) const {
    auto it = positions_.find(id);
    if (it == positions_.end())
        throw NotFoundError("lsh: id " + std::to_string(id) + " not in index");
    return hashes_[it->second];
}

SearchResult LshIndex::search(std::span<const float> query, int k) const {
    if (ids_.empty()) return {};
    const std::uint64_t q = hash(query);
    SearchResult candidates;
    candidates.reserve(ids_.size());
    for (std::size_t i = 0; i < ids_.size(); ++i) {
        const int d = std::popcount(q ^ hashes_[i]);
        candidates.push_back({ids_[i], static_cast<float>(d)});
    }
    sort_neighbors(candidates);
    if (candidates.size() > static_cast<std::size_t>(k)) candidates.resize(k);
    return candidates;
}

} // namespace actidx
