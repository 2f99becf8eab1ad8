#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "actidx/rng.hpp"

namespace actidx {

struct Neighbor {
    std::uint32_t id = 0;
    float distance = 0.0f; // squared L2 (Hamming bits for LSH)
};
// ascending by distance, ties broken by lower id
using SearchResult = std::vector<Neighbor>;

struct Codebook {
    int k = 0;
    int dim = 0;
    std::vector<float> centroids; // k * dim, row-major

    std::span<const float> row(int i) const {
        return {centroids.data() + static_cast<std::size_t>(i) * dim, static_cast<std::size_t>(dim)};
    }
};

// k-means++ seeding; returns k * dim centroid values
std::vector<float> kmeans_pp_init(const float* data, std::size_t n, int dim, int k, Rng& rng);

// Lloyd's algorithm with k-means++ seeding; empty clusters are re-seeded
// from the point currently farthest from its centroid.  The quantization
// objective is non-increasing per iteration.
Codebook kmeans(const float* data, std::size_t n, int dim, int k, int iterations,
                std::uint64_t seed);

// nearest centroid by squared L2, ties resolved to the lowest index
int nearest_centroid(const Codebook& cb, const float* x);

// mean squared quantization error of data under cb (test/diagnostic aid)
double quantization_objective(const Codebook& cb, const float* data, std::size_t n);

struct PqCodebook {
    int m = 0;    // subquantizers
    int ksub = 0; // reproduction values per subquantizer, <= 256
    int dim = 0;  // total dimension, divisible by m
    std::vector<float> codebooks; // m * ksub * (dim/m)

    int dsub() const { return dim / m; }
    std::span<const float> codeword(int j, int c) const {
        const int ds = dsub();
        return {codebooks.data() + (static_cast<std::size_t>(j) * ksub + c) * ds,
                static_cast<std::size_t>(ds)};
    }
};

PqCodebook train_pq(const float* data, std::size_t n, int dim, int m, int ksub, int iterations,
                    std::uint64_t seed);

// per-subvector nearest codeword, ties to the lowest code
std::vector<std::uint8_t> pq_encode(const PqCodebook& pq, const float* vec);
// throws CorruptIndexError when a code byte is >= ksub
std::vector<float> pq_decode(const PqCodebook& pq, const std::uint8_t* code);

// ADC lookup table: entry [j*ksub + c] = ||codeword(j,c) - query_sub(j)||^2.
// Summing entries along a code equals the decoded squared distance.
std::vector<float> adc_tables(const PqCodebook& pq, const float* query);
double adc_distance(const PqCodebook& pq, const std::vector<float>& tables,
                    const std::uint8_t* code);

// IVFADC: coarse k-means cells with product-quantized residuals.
class IvfPqIndex {
public:
    IvfPqIndex() = default;

    static IvfPqIndex train(const float* train_vecs, std::size_t n, int dim, int k_cells, int m,
                            int ksub, int kmeans_iterations, std::uint64_t seed);

    void add(std::span<const float> x, std::uint32_t id);
    SearchResult search(std::span<const float> query, int k, int probes) const;
    // stored approximation q(x) = cell centroid + decoded residual
    std::vector<float> reconstruct(std::uint32_t id) const;
    int coarse_assign(std::span<const float> x) const;
    // cell the id was assigned to at add-time
    int cell_of(std::uint32_t id) const;

    std::size_t size() const { return locations_.size(); }
    bool contains(std::uint32_t id) const { return locations_.count(id) != 0; }
    int dim() const { return coarse_.dim; }
    int cells() const { return coarse_.k; }
    const Codebook& coarse() const { return coarse_; }
    const PqCodebook& pq() const { return pq_; }
    const std::vector<std::uint32_t>& cell_ids(int cell) const { return ids_[cell]; }
    const std::vector<std::uint8_t>& cell_codes(int cell) const { return codes_[cell]; }

    // little-endian container, magic "AIDX"; round-trips bit-exactly
    std::vector<std::uint8_t> serialize() const;
    static IvfPqIndex deserialize(std::span<const std::uint8_t> bytes);
    void save(const std::string& path) const;
    static IvfPqIndex load(const std::string& path);

private:
    Codebook coarse_;
    PqCodebook pq_;
    std::vector<std::vector<std::uint32_t>> ids_;
    std::vector<std::vector<std::uint8_t>> codes_; // per cell, m bytes per entry
    std::unordered_map<std::uint32_t, std::pair<std::uint32_t, std::uint32_t>> locations_;
};

// IVF with raw vectors in the cells (space partitioning only).
class IvfFlatIndex {
public:
    IvfFlatIndex() = default;
    static IvfFlatIndex train(const float* train_vecs, std::size_t n, int dim, int k_cells,
                              int kmeans_iterations, std::uint64_t seed);
    void add(std::span<const float> x, std::uint32_t id);
    SearchResult search(std::span<const float> query, int k, int probes) const;
    std::vector<float> reconstruct(std::uint32_t id) const;
    int coarse_assign(std::span<const float> x) const;
    int cell_of(std::uint32_t id) const;
    const Codebook& coarse() const { return coarse_; }
    int cells() const { return coarse_.k; }
    std::size_t size() const { return locations_.size(); }

private:
    Codebook coarse_;
    std::vector<std::vector<std::uint32_t>> ids_;
    std::vector<std::vector<float>> vecs_;
    std::unordered_map<std::uint32_t, std::pair<std::uint32_t, std::uint32_t>> locations_;
};

struct OpqResult {
    std::vector<float> rotation; // dim * dim row-major, orthonormal
    PqCodebook pq;               // trained in the rotated space
    std::vector<double> round_errors;
};

// Alternating optimization: train/refresh PQ on rotated data, then update
// the rotation by orthogonal Procrustes on the cross-covariance.  With one
// round the rotation stays identity and the result equals plain PQ.
OpqResult train_opq(const float* data, std::size_t n, int dim, int m, int ksub, int rounds,
                    int kmeans_iterations, std::uint64_t seed);

// Exhaustive ADC over PQ codes, optionally in an OPQ-rotated space.
class PqFlatIndex {
public:
    PqFlatIndex() = default;
    static PqFlatIndex train(const float* train_vecs, std::size_t n, int dim, int m, int ksub,
                             int kmeans_iterations, std::uint64_t seed);
    static PqFlatIndex train_opq(const float* train_vecs, std::size_t n, int dim, int m, int ksub,
                                 int rounds, int kmeans_iterations, std::uint64_t seed);
    void add(std::span<const float> x, std::uint32_t id);
    SearchResult search(std::span<const float> query, int k) const;
    // R^T q_f(R x): the stored approximation mapped back to input space
    std::vector<float> reconstruct(std::uint32_t id) const;
    bool has_rotation() const { return !rotation_.empty(); }
    const std::vector<float>& rotation() const { return rotation_; }
    const PqCodebook& pq() const { return pq_; }
    std::size_t size() const { return ids_.size(); }

private:
    std::vector<float> rotate(std::span<const float> x) const;
    std::vector<float> rotation_; // empty means identity
    PqCodebook pq_;
    std::vector<std::uint32_t> ids_;
    std::vector<std::uint8_t> codes_;
    std::unordered_map<std::uint32_t, std::uint32_t> positions_;
};

// PCA to out_dim dimensions followed by signed random projections.
class LshIndex {
public:
    LshIndex() = default;
    static LshIndex train(const float* train_vecs, std::size_t n, int dim, int out_dim, int n_bits,
                          std::uint64_t seed);
    void add(std::span<const float> x, std::uint32_t id);
    std::uint64_t hash(std::span<const float> x) const;
    // Hamming distance metric, ties by lower id
    SearchResult search(std::span<const float> query, int k) const;

    int bits() const { return n_bits_; }
    int dim() const { return dim_; }
    int out_dim() const { return out_dim_; }
    const std::vector<float>& mean() const { return mean_; }
    const std::vector<float>& basis() const { return basis_; }             // out_dim x dim
    const std::vector<float>& hyperplanes() const { return hyperplanes_; } // n_bits x out_dim
    std::uint64_t stored_hash(std::uint32_t id) const;
    std::size_t size() const { return ids_.size(); }

private:
    int dim_ = 0, out_dim_ = 0, n_bits_ = 0;
    std::vector<float> mean_, basis_, hyperplanes_;
    std::vector<std::uint32_t> ids_;
    std::vector<std::uint64_t> hashes_;
    std::unordered_map<std::uint32_t, std::uint32_t> positions_;
};

} // namespace actidx
