#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "actidx/activation.hpp"
#include "actidx/corpus.hpp"
#include "actidx/extractor.hpp"
#include "actidx/image.hpp"
#include "actidx/index.hpp"
#include "actidx/transforms.hpp"

namespace actidx {

using SearchFn = std::function<SearchResult(const FeatureVector&, int)>;

struct GroundTruthQuery {
    std::uint32_t gt_id = 0;
    FeatureVector feature;
};

// fraction of queries whose top-1 result is the ground truth
double recall_at_1(const SearchFn& search, const std::vector<GroundTruthQuery>& queries);
double recall_at_1(const IvfPqIndex& index, const std::vector<GroundTruthQuery>& queries,
                   int probes);

struct MatchPair {
    double distance = 0.0; // lower = more confident
    bool correct = false;
};

struct PrPoint {
    double tau = 0.0, precision = 0.0, recall = 0.0;
};

struct PrCurve {
    std::vector<PrPoint> points;
    double micro_ap = 0.0;
    double max_recall = 0.0;
};

// one best-scoring candidate pair per query from its top-k shortlist;
// a pair is correct iff the query is positive and the ids match
std::vector<MatchPair> collect_match_pairs(const SearchFn& search,
                                           const std::vector<GroundTruthQuery>& positives,
                                           const std::vector<FeatureVector>& negatives, int k);

// area under the precision-recall curve by the rectangle rule, sweeping a
// global threshold over all observed distances
PrCurve micro_ap(std::vector<MatchPair> pairs, std::size_t n_positive);

// relative residual of ||xh-q||^2 = ||x-q||^2 + ||xh-x||^2 + 2(x-q).(xh-x)
double decomposition_residual(std::span<const float> x, std::span<const float> x_hat,
                              std::span<const float> q_x);

// Monte Carlo fraction of paired features with differing cell assignments
double ivf_failure_rate(const std::function<int(const FeatureVector&)>& assign,
                        const std::vector<FeatureVector>& references,
                        const std::vector<FeatureVector>& transformed);

struct RecallBoundCheck {
    bool ok = false;
    double max_recall = 0.0;
    double p_f = 0.0;
    double eps_mc = 0.0;
    double bound = 0.0;
    double margin = 0.0;
};

// single-probe bound: max recall <= 1 - p_f + 3*sqrt(p_f(1-p_f)/n)
RecallBoundCheck recall_bound_check(double max_recall, double p_f, std::size_t n);

enum class IndexPreset { ivfpq, ivfpq_dagger, ivf_flat, pq, opq, lsh };

IndexPreset index_preset_from_name(std::string_view name);
std::string_view index_preset_name(IndexPreset preset);

struct ExperimentConfig {
    std::uint64_t seed = 42;
    int image_size = 64;
    int train_count = 10000;
    int reference_count = 10000;
    int negative_count = 2000;
    int query_count = 500;

    IndexPreset preset = IndexPreset::ivfpq;
    int cells = 64;
    int m = 8;
    int ksub = 256;
    int probes = 1;
    int kmeans_iters = 20;
    int opq_rounds = 5;
    int lsh_out_dim = 64;
    int lsh_bits = 64;
    int top_k = 10;

    bool active = false;
    ActivationConfig activation;

    std::vector<TransformSpec> transforms; // empty selects the default suite
    unsigned threads = 0;                  // 0 = hardware concurrency
};

// preset-specific geometry defaults on top of the struct defaults
ExperimentConfig make_experiment_config(IndexPreset preset);

// nine-transform evaluation suite, one per transform kind
std::vector<TransformSpec> default_transform_suite();

struct TransformReport {
    std::string label;
    double r_at_1 = 0.0;
    double micro_ap = 0.0;
    double p_f = -1.0; // -1 when the preset has no coarse quantizer
    double max_recall = 0.0;
    bool bound_checked = false;
    bool bound_ok = false;
    double bound_margin = 0.0;
};

struct EvalReport {
    ExperimentConfig config;
    std::string mode;                     // "passive" or "active"
    std::vector<TransformReport> per_transform;
    double mean_r_at_1 = 0.0;
    PrCurve pooled;                       // pairs pooled over all transforms
    // quality of activated queries vs originals (active mode only)
    double psnr_mean = 0.0, psnr_std = 0.0, linf_mean = 0.0, linf_max = 0.0;
    // mean feature distance to the activation target, before/after
    double feat_dist_before = 0.0, feat_dist_after = 0.0;
};

// Shared expensive state for running several experiments on one corpus:
// images plus extracted features for train/reference/negative sets.
struct CorpusCache {
    std::uint64_t seed = 0;
    int image_size = 0;
    ExtractorWeights weights;
    std::vector<Image> references;
    std::vector<Image> negatives;
    std::vector<FeatureVector> train_features;
    std::vector<FeatureVector> ref_features;
};

CorpusCache build_corpus_cache(const ExperimentConfig& config);

EvalReport run_experiment(const ExperimentConfig& config);
EvalReport run_experiment(const ExperimentConfig& config, const CorpusCache& cache);

// validates the k'=1 precondition and returns the worst-margin check
RecallBoundCheck recall_bound_check(const EvalReport& report);

// report files; the JSON is byte-stable across reruns with equal seeds
void write_report_json(const std::vector<EvalReport>& reports, const std::string& path);
void write_report_csv(const std::vector<EvalReport>& reports, const std::string& path);
void write_pr_csv(const std::vector<EvalReport>& reports, const std::string& path);

} // namespace actidx
