#include "actidx/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "actidx/errors.hpp"
#include "actidx/parallel.hpp"
#include "actidx/rng.hpp"

namespace actidx {

double recall_at_1(const SearchFn& search, const std::vector<GroundTruthQuery>& queries) {
    if (queries.empty()) throw std::invalid_argument("recall_at_1: empty query set");
    std::size_t hits = 0;
    for (const auto& q : queries) {
        const SearchResult r = search(q.feature, 1);
        if (!r.empty() && r.front().id == q.gt_id) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(queries.size());
}

double recall_at_1(const IvfPqIndex& index, const std::vector<GroundTruthQuery>& queries,
                   int probes) {
    return recall_at_1(
        [&](const FeatureVector& f, int k) { return index.search(f, k, probes); }, queries);
}

std::vector<MatchPair> collect_match_pairs(const SearchFn& search,
                                           const std::vector<GroundTruthQuery>& positives,
                                           const std::vector<FeatureVector>& negatives, int k) {
    std::vector<MatchPair> pairs;
    pairs.reserve(positives.size() + negatives.size());
    for (const auto& q : positives) {
        const SearchResult r = search(q.feature, k);
        if (r.empty()) continue; // missed positive: caps achievable recall
        pairs.push_back({static_cast<double>(r.front().distance), r.front().id == q.gt_id});
    }
    for (const auto& q : negatives) {
        const SearchResult r = search(q, k);
        if (r.empty()) continue;
        pairs.push_back({static_cast<double>(r.front().distance), false});
    }
    return pairs;
}

PrCurve micro_ap(std::vector<MatchPair> pairs, std::size_t n_positive) {
    PrCurve curve;
    if (pairs.empty() || n_positive == 0) return curve;
    std::sort(pairs.begin(), pairs.end(), [](const MatchPair& a, const MatchPair& b) {
        return a.distance < b.distance;
    });
    std::size_t declared = 0, correct = 0;
    double ap = 0.0, prev_recall = 0.0;
    std::size_t i = 0;
    while (i < pairs.size()) {
        // all pairs at the same distance cross the threshold together
        std::size_t j = i;
        while (j < pairs.size() && pairs[j].distance == pairs[i].distance) {
            ++declared;
            if (pairs[j].correct) ++correct;
            ++j;
        }
        const double precision = static_cast<double>(correct) / static_cast<double>(declared);
        const double recall = static_cast<double>(correct) / static_cast<double>(n_positive);
        ap += precision * (recall - prev_recall);
        curve.points.push_back({pairs[i].distance, precision, recall});
        prev_recall = recall;
        i = j;
    }
    curve.micro_ap = ap;
    curve.max_recall = prev_recall;
    return curve;
}

double decomposition_residual(std::span<const float> x, std::span<const float> x_hat,
                              std::span<const float> q_x) {
    if (x.size() != x_hat.size() || x.size() != q_x.size())
        throw std::invalid_argument("decomposition_residual: dimension mismatch");
    double lhs = 0.0, quant = 0.0, noise = 0.0, cross = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double xq = static_cast<double>(x_hat[i]) - q_x[i];
        const double dq = static_cast<double>(x[i]) - q_x[i];
        const double dn = static_cast<double>(x_hat[i]) - x[i];
        lhs += xq * xq;
        quant += dq * dq;
        noise += dn * dn;
        cross += dq * dn;
    }
    const double rhs = quant + noise + 2.0 * cross;
    const double scale = std::max({std::abs(lhs), std::abs(rhs), 1e-12});
    return std::abs(lhs - rhs) / scale;
}

double ivf_failure_rate(const std::function<int(const FeatureVector&)>& assign,
                        const std::vector<FeatureVector>& references,
                        const std::vector<FeatureVector>& transformed) {
    if (references.size() != transformed.size() || references.empty())
        throw std::invalid_argument("ivf_failure_rate: inputs must be non-empty and paired");
    std::size_t mismatches = 0;
    for (std::size_t i = 0; i < references.size(); ++i)
        if (assign(references[i]) != assign(transformed[i])) ++mismatches;
    return static_cast<double>(mismatches) / static_cast<double>(references.size());
}

RecallBoundCheck recall_bound_check(double max_recall, double p_f, std::size_t n) {
    RecallBoundCheck c;
    c.max_recall = max_recall;
    c.p_f = p_f;
    c.eps_mc = n > 0 ? 3.0 * std::sqrt(p_f * (1.0 - p_f) / static_cast<double>(n)) : 0.0;
    c.bound = 1.0 - p_f + c.eps_mc;
    c.margin = c.bound - max_recall;
    c.ok = max_recall <= c.bound + 1e-12;
    return c;
}

namespace {

struct PresetName {
    IndexPreset preset;
    std::string_view name;
};

constexpr PresetName kPresetNames[] = {
    {IndexPreset::ivfpq, "ivfpq"},   {IndexPreset::ivfpq_dagger, "ivfpq_dagger"},
    {IndexPreset::ivf_flat, "ivf"},  {IndexPreset::pq, "pq"},
    {IndexPreset::opq, "opq"},       {IndexPreset::lsh, "lsh"},
};

} // namespace

IndexPreset index_preset_from_name(std::string_view name) {
    for (const auto& pn : kPresetNames)
        if (pn.name == name) return pn.preset;
    throw std::invalid_argument("unknown index preset: " + std::string(name));
}

std::string_view index_preset_name(IndexPreset preset) {
    for (const auto& pn : kPresetNames)
        if (pn.preset == preset) return pn.name;
    return "unknown";
}

ExperimentConfig make_experiment_config(IndexPreset preset) {
    ExperimentConfig cfg;
    cfg.preset = preset;
    switch (preset) {
        case IndexPreset::ivfpq:
            cfg.activation.loss_kind = LossKind::ivfpq;
            break;
        case IndexPreset::ivfpq_dagger:
            // scaled-down counterpart of the wide-probe variant
            cfg.cells = 8;
            cfg.m = 32;
            cfg.probes = 2;
            cfg.activation.loss_kind = LossKind::ivfpq;
            break;
        case IndexPreset::ivf_flat:
            cfg.activation.loss_kind = LossKind::ivf;
            break;
        case IndexPreset::pq:
            cfg.activation.loss_kind = LossKind::pq;
            break;
        case IndexPreset::opq:
            cfg.activation.loss_kind = LossKind::opq;
            break;
        case IndexPreset::lsh:
            cfg.activation.loss_kind = LossKind::lsh;
            break;
    }
    return cfg;
}

std::vector<TransformSpec> default_transform_suite() {
    // one transform per kind; strengths sized for the desk extractor the
    // way the reference suite is sized for a trained network
    using TK = TransformKind;
    return {
        TransformSpec::make(TK::identity),
        TransformSpec::make(TK::brightness, 1.5),
        TransformSpec::make(TK::contrast, 0.6),
        TransformSpec::make(TK::hue, 0.1),
        TransformSpec::make(TK::blur, 2.0),
        TransformSpec::make(TK::rotate, 5.0),
        TransformSpec::make(TK::center_crop, 0.8),
        TransformSpec::make(TK::resize, 0.5),
        TransformSpec::make(TK::gaussian_noise, 6.0, 1234),
    };
}

namespace {

// noise realizations vary per query but stay reproducible
TransformSpec per_query_spec(const TransformSpec& spec, std::uint32_t query_id) {
    if (spec.kind != TransformKind::gaussian_noise) return spec;
    TransformSpec out = spec;
    Rng mix = derive_rng(spec.seed, "per-query-noise", query_id);
    out.seed = mix.next_u64();
    return out;
}

struct BuiltIndex {
    IndexPreset preset;
    IvfPqIndex ivfpq;
    IvfFlatIndex ivfflat;
    PqFlatIndex pqflat;
    LshIndex lsh;

    bool has_coarse() const {
        return preset == IndexPreset::ivfpq || preset == IndexPreset::ivfpq_dagger ||
               preset == IndexPreset::ivf_flat;
    }

    void add(const FeatureVector& x, std::uint32_t id) {
        switch (preset) {
            case IndexPreset::ivfpq:
            case IndexPreset::ivfpq_dagger:
                ivfpq.add(x, id);
                break;
            case IndexPreset::ivf_flat:
                ivfflat.add(x, id);
                break;
            case IndexPreset::pq:
            case IndexPreset::opq:
                pqflat.add(x, id);
                break;
            case IndexPreset::lsh:
                lsh.add(x, id);
                break;
        }
    }

    SearchFn searcher(int probes) const {
        switch (preset) {
            case IndexPreset::ivfpq:
            case IndexPreset::ivfpq_dagger:
                return [this, probes](const FeatureVector& q, int k) {
                    return ivfpq.search(q, k, probes);
                };
            case IndexPreset::ivf_flat:
                return [this, probes](const FeatureVector& q, int k) {
                    return ivfflat.search(q, k, probes);
                };
            case IndexPreset::pq:
            case IndexPreset::opq:
                return [this](const FeatureVector& q, int k) { return pqflat.search(q, k); };
            case IndexPreset::lsh:
                return [this](const FeatureVector& q, int k) { return lsh.search(q, k); };
        }
        throw std::logic_error("unreachable");
    }

    std::function<int(const FeatureVector&)> assigner() const {
        switch (preset) {
            case IndexPreset::ivfpq:
            case IndexPreset::ivfpq_dagger:
                return [this](const FeatureVector& x) { return ivfpq.coarse_assign(x); };
            case IndexPreset::ivf_flat:
                return [this](const FeatureVector& x) { return ivfflat.coarse_assign(x); };
            default:
                return {};
        }
    }

    LossContext loss_context(std::uint32_t id, LossKind requested) const {
        switch (preset) {
            case IndexPreset::ivfpq:
            case IndexPreset::ivfpq_dagger:
                return make_loss_context(
                    ivfpq, id, requested == LossKind::ivf ? LossKind::ivf : LossKind::ivfpq);
            case IndexPreset::ivf_flat:
                return make_loss_context(ivfflat, id);
            case IndexPreset::pq:
            case IndexPreset::opq:
                return make_loss_context(pqflat, id);
            case IndexPreset::lsh:
                return make_loss_context(lsh, id);
        }
        throw std::logic_error("unreachable");
    }
};

BuiltIndex build_index(const ExperimentConfig& cfg, const std::vector<FeatureVector>& train) {
    const int dim = static_cast<int>(train.front().size());
    std::vector<float> flat(train.size() * static_cast<std::size_t>(dim));
    for (std::size_t i = 0; i < train.size(); ++i)
        std::copy(train[i].begin(), train[i].end(), flat.begin() + i * dim);
    BuiltIndex built;
    built.preset = cfg.preset;
    const std::uint64_t seed = derive_rng(cfg.seed, "index-train").next_u64();
    switch (cfg.preset) {
        case IndexPreset::ivfpq:
        case IndexPreset::ivfpq_dagger:
            built.ivfpq = IvfPqIndex::train(flat.data(), train.size(), dim, cfg.cells, cfg.m,
                                            cfg.ksub, cfg.kmeans_iters, seed);
            break;
        case IndexPreset::ivf_flat:
            built.ivfflat = IvfFlatIndex::train(flat.data(), train.size(), dim, cfg.cells,
                                                cfg.kmeans_iters, seed);
            break;
        case IndexPreset::pq:
            built.pqflat = PqFlatIndex::train(flat.data(), train.size(), dim, cfg.m, cfg.ksub,
                                              cfg.kmeans_iters, seed);
            break;
        case IndexPreset::opq:
            built.pqflat = PqFlatIndex::train_opq(flat.data(), train.size(), dim, cfg.m, cfg.ksub,
                                                  cfg.opq_rounds, cfg.kmeans_iters, seed);
            break;
        case IndexPreset::lsh:
            built.lsh = LshIndex::train(flat.data(), train.size(), dim, cfg.lsh_out_dim,
                                        cfg.lsh_bits, seed);
            break;
    }
    return built;
}

void validate_experiment(const ExperimentConfig& cfg) {
    if (cfg.reference_count < 1 || cfg.train_count < 1)
        throw std::invalid_argument("experiment: corpus counts must be >= 1");
    if (cfg.query_count < 1 || cfg.query_count > cfg.reference_count)
        throw std::invalid_argument("experiment: query ids must be a subset of reference ids");
    if (cfg.negative_count < 0) throw std::invalid_argument("experiment: negative count < 0");
    if (cfg.image_size < 16) throw std::invalid_argument("experiment: image size too small");
}

} // namespace

CorpusCache build_corpus_cache(const ExperimentConfig& cfg) {
    validate_experiment(cfg);
    CorpusCache cache;
    cache.seed = cfg.seed;
    cache.image_size = cfg.image_size;
    cache.weights = init_weights(derive_rng(cfg.seed, "extractor-seed").next_u64());
    const Extractor extractor(cache.weights);

    const std::uint64_t train_seed = derive_rng(cfg.seed, "train-corpus").next_u64();
    const std::uint64_t ref_seed = derive_rng(cfg.seed, "ref-corpus").next_u64();
    const std::uint64_t neg_seed = derive_rng(cfg.seed, "neg-corpus").next_u64();

    cache.references.resize(cfg.reference_count);
    cache.negatives.resize(cfg.negative_count);
    cache.ref_features.resize(cfg.reference_count);
    cache.train_features.resize(cfg.train_count);

    parallel_for(static_cast<std::size_t>(cfg.train_count), cfg.threads, [&](std::size_t i) {
        const Image img = generate_corpus_image(train_seed, static_cast<int>(i), cfg.image_size);
        cache.train_features[i] = extractor.extract(img);
    });
    parallel_for(static_cast<std::size_t>(cfg.reference_count), cfg.threads, [&](std::size_t i) {
        cache.references[i] = generate_corpus_image(ref_seed, static_cast<int>(i), cfg.image_size);
        cache.ref_features[i] = extractor.extract(cache.references[i]);
    });
    parallel_for(static_cast<std::size_t>(cfg.negative_count), cfg.threads, [&](std::size_t i) {
        cache.negatives[i] = generate_corpus_image(neg_seed, static_cast<int>(i), cfg.image_size);
    });
    return cache;
}

EvalReport run_experiment(const ExperimentConfig& cfg) {
    return run_experiment(cfg, build_corpus_cache(cfg));
}

EvalReport run_experiment(const ExperimentConfig& cfg, const CorpusCache& cache) {
    validate_experiment(cfg);
    if (cache.seed != cfg.seed || cache.image_size != cfg.image_size ||
        static_cast<int>(cache.references.size()) < cfg.reference_count ||
        static_cast<int>(cache.train_features.size()) < cfg.train_count ||
        static_cast<int>(cache.negatives.size()) < cfg.negative_count)
        throw std::invalid_argument("experiment: corpus cache does not cover the config");

    const Extractor extractor(cache.weights);
    std::vector<FeatureVector> train(cache.train_features.begin(),
                                     cache.train_features.begin() + cfg.train_count);
    BuiltIndex index = build_index(cfg, train);
    for (int i = 0; i < cfg.reference_count; ++i)
        index.add(cache.ref_features[i], static_cast<std::uint32_t>(i));

    EvalReport report;
    report.config = cfg;
    report.mode = cfg.active ? "active" : "passive";

    // query images: the first query_count references, optionally activated
    std::vector<Image> query_images(cfg.query_count);
    std::vector<double> dist_before(cfg.query_count, 0.0), dist_after(cfg.query_count, 0.0);
    std::vector<QualityStats> quality(cfg.query_count);
    if (cfg.active) {
        parallel_for(static_cast<std::size_t>(cfg.query_count), cfg.threads, [&](std::size_t i) {
            const auto id = static_cast<std::uint32_t>(i);
            const LossContext ctx = index.loss_context(id, cfg.activation.loss_kind);
            ActivationConfig acfg = cfg.activation;
            if (acfg.eot) acfg.eot->seed = derive_rng(cfg.seed, "eot-seed", id).next_u64();
            ActivationResult res = activate(cache.references[i], extractor, ctx, acfg);
            const double before = indexation_loss(std::span<const float>(res.feature_before), ctx,
                                                  nullptr);
            const double after = indexation_loss(std::span<const float>(res.feature_after), ctx,
                                                 nullptr);
            const bool normed = ctx.kind != LossKind::lsh;
            dist_before[i] = normed ? std::sqrt(std::max(0.0, before)) : before;
            dist_after[i] = normed ? std::sqrt(std::max(0.0, after)) : after;
            quality[i] = res.quality;
            query_images[i] = std::move(res.activated);
        });
        double psum = 0, psq = 0, lsum = 0, lmax = 0;
        for (const auto& q : quality) {
            psum += q.psnr_db;
            psq += q.psnr_db * q.psnr_db;
            lsum += q.linf;
            lmax = std::max(lmax, q.linf);
        }
        const double n = cfg.query_count;
        report.psnr_mean = psum / n;
        report.psnr_std = std::sqrt(std::max(0.0, psq / n - report.psnr_mean * report.psnr_mean));
        report.linf_mean = lsum / n;
        report.linf_max = lmax;
        report.feat_dist_before = 0;
        report.feat_dist_after = 0;
        for (int i = 0; i < cfg.query_count; ++i) {
            report.feat_dist_before += dist_before[i] / n;
            report.feat_dist_after += dist_after[i] / n;
        }
    } else {
        for (int i = 0; i < cfg.query_count; ++i) query_images[i] = cache.references[i];
    }

    const auto transforms = cfg.transforms.empty() ? default_transform_suite() : cfg.transforms;
    const SearchFn search = index.searcher(cfg.probes);
    const auto assign = index.assigner();

    std::vector<FeatureVector> ref_subset(cache.ref_features.begin(),
                                          cache.ref_features.begin() + cfg.query_count);
    std::vector<MatchPair> pooled_pairs;
    double r1_sum = 0.0;

    for (const auto& spec : transforms) {
        std::vector<GroundTruthQuery> positives(cfg.query_count);
        parallel_for(static_cast<std::size_t>(cfg.query_count), cfg.threads, [&](std::size_t i) {
            const Image t = apply_transform(query_images[i],
                                            per_query_spec(spec, static_cast<std::uint32_t>(i)));
            positives[i] = {static_cast<std::uint32_t>(i), extractor.extract(t)};
        });
        std::vector<FeatureVector> negatives(cfg.negative_count);
        parallel_for(static_cast<std::size_t>(cfg.negative_count), cfg.threads, [&](std::size_t i) {
            const Image t = apply_transform(
                cache.negatives[i],
                per_query_spec(spec, static_cast<std::uint32_t>(0x80000000u + i)));
            negatives[i] = extractor.extract(t);
        });

        // one top-k search per query feeds both R@1 and the match pairs
        std::vector<SearchResult> results(positives.size());
        parallel_for(positives.size(), cfg.threads, [&](std::size_t i) {
            results[i] = search(positives[i].feature, cfg.top_k);
        });
        std::vector<SearchResult> neg_results(negatives.size());
        parallel_for(negatives.size(), cfg.threads, [&](std::size_t i) {
            neg_results[i] = search(negatives[i], cfg.top_k);
        });

        TransformReport tr;
        tr.label = transform_label(spec);
        std::size_t hits = 0;
        std::vector<MatchPair> pairs;
        pairs.reserve(positives.size() + negatives.size());
        for (std::size_t i = 0; i < positives.size(); ++i) {
            if (results[i].empty()) continue;
            const bool correct = results[i].front().id == positives[i].gt_id;
            if (correct) ++hits;
            pairs.push_back({static_cast<double>(results[i].front().distance), correct});
        }
        for (const auto& r : neg_results) {
            if (r.empty()) continue;
            pairs.push_back({static_cast<double>(r.front().distance), false});
        }
        tr.r_at_1 = static_cast<double>(hits) / static_cast<double>(positives.size());
        const PrCurve curve = micro_ap(pairs, positives.size());
        tr.micro_ap = curve.micro_ap;
        tr.max_recall = curve.max_recall;
        if (assign) {
            std::vector<FeatureVector> pos_feats(positives.size());
            for (std::size_t i = 0; i < positives.size(); ++i) pos_feats[i] = positives[i].feature;
            tr.p_f = ivf_failure_rate(assign, ref_subset, pos_feats);
            if (cfg.probes == 1) {
                const auto check = recall_bound_check(tr.max_recall, tr.p_f, positives.size());
                tr.bound_checked = true;
                tr.bound_ok = check.ok;
                tr.bound_margin = check.margin;
            }
        }
        r1_sum += tr.r_at_1;
        pooled_pairs.insert(pooled_pairs.end(), pairs.begin(), pairs.end());
        report.per_transform.push_back(std::move(tr));
    }

    report.mean_r_at_1 = r1_sum / static_cast<double>(transforms.size());
    report.pooled = micro_ap(std::move(pooled_pairs),
                             static_cast<std::size_t>(cfg.query_count) * transforms.size());
    return report;
}

RecallBoundCheck recall_bound_check(const EvalReport& report) {
    if (report.config.probes != 1)
        throw std::invalid_argument("recall_bound_check: report must come from a k'=1 run");
    RecallBoundCheck worst;
    worst.ok = true;
    worst.margin = 1e30;
    for (const auto& tr : report.per_transform) {
        if (tr.p_f < 0.0) continue;
        const auto check = recall_bound_check(tr.max_recall, tr.p_f,
                                              static_cast<std::size_t>(report.config.query_count));
        if (check.margin < worst.margin) worst = check;
        if (!check.ok) worst.ok = false;
    }
    return worst;
}

namespace {

using ordered_json = nlohmann::ordered_json;

ordered_json transform_to_json(const TransformSpec& spec) {
    ordered_json j;
    j["kind"] = std::string(transform_kind_name(spec.kind));
    j["parameter"] = spec.parameter;
    if (spec.kind == TransformKind::gaussian_noise) j["seed"] = spec.seed;
    return j;
}

ordered_json config_to_json(const ExperimentConfig& cfg) {
    ordered_json j;
    j["seed"] = cfg.seed;
    j["image_size"] = cfg.image_size;
    j["train_count"] = cfg.train_count;
    j["reference_count"] = cfg.reference_count;
    j["negative_count"] = cfg.negative_count;
    j["query_count"] = cfg.query_count;
    j["preset"] = std::string(index_preset_name(cfg.preset));
    j["cells"] = cfg.cells;
    j["m"] = cfg.m;
    j["ksub"] = cfg.ksub;
    j["probes"] = cfg.probes;
    j["kmeans_iters"] = cfg.kmeans_iters;
    j["opq_rounds"] = cfg.opq_rounds;
    j["lsh_out_dim"] = cfg.lsh_out_dim;
    j["lsh_bits"] = cfg.lsh_bits;
    j["top_k"] = cfg.top_k;
    j["active"] = cfg.active;
    ordered_json act;
    act["alpha"] = cfg.activation.alpha;
    act["lambda"] = cfg.activation.lambda;
    act["lr"] = cfg.activation.lr;
    act["steps"] = cfg.activation.steps;
    act["loss_kind"] = std::string(loss_kind_name(cfg.activation.loss_kind));
    if (cfg.activation.eot) {
        ordered_json eot;
        eot["samples"] = cfg.activation.eot->samples;
        ordered_json pool = ordered_json::array();
        for (const auto& t : cfg.activation.eot->pool) pool.push_back(transform_to_json(t));
        eot["pool"] = pool;
        act["eot"] = eot;
    }
    j["activation"] = act;
    ordered_json suite = ordered_json::array();
    for (const auto& t : (cfg.transforms.empty() ? default_transform_suite() : cfg.transforms))
        suite.push_back(transform_to_json(t));
    j["transforms"] = suite;
    return j;
}

// PR curves are downsampled for the report files; micro-AP itself is
// always computed on the full sweep
std::vector<PrPoint> downsample_curve(const std::vector<PrPoint>& points, std::size_t cap = 512) {
    if (points.size() <= cap) return points;
    std::vector<PrPoint> out;
    out.reserve(cap);
    const double stride = static_cast<double>(points.size() - 1) / static_cast<double>(cap - 1);
    for (std::size_t i = 0; i < cap; ++i)
        out.push_back(points[static_cast<std::size_t>(std::lround(i * stride))]);
    return out;
}

ordered_json report_to_json(const EvalReport& r) {
    ordered_json j;
    j["mode"] = r.mode;
    j["config"] = config_to_json(r.config);
    ordered_json rows = ordered_json::array();
    for (const auto& tr : r.per_transform) {
        ordered_json row;
        row["transform"] = tr.label;
        row["r_at_1"] = tr.r_at_1;
        row["micro_ap"] = tr.micro_ap;
        if (tr.p_f >= 0.0) {
            row["p_f"] = tr.p_f;
            row["max_recall"] = tr.max_recall;
            if (tr.bound_checked) {
                row["recall_bound_ok"] = tr.bound_ok;
                row["recall_bound_margin"] = tr.bound_margin;
            }
        }
        rows.push_back(row);
    }
    j["per_transform"] = rows;
    j["mean_r_at_1"] = r.mean_r_at_1;
    j["micro_ap"] = r.pooled.micro_ap;
    if (r.mode == "active") {
        ordered_json q;
        q["psnr_mean"] = r.psnr_mean;
        q["psnr_std"] = r.psnr_std;
        q["linf_mean"] = r.linf_mean;
        q["linf_max"] = r.linf_max;
        q["feat_dist_before"] = r.feat_dist_before;
        q["feat_dist_after"] = r.feat_dist_after;
        j["quality"] = q;
    }
    ordered_json curve = ordered_json::array();
    for (const auto& p : downsample_curve(r.pooled.points)) {
        ordered_json pt;
        pt["tau"] = p.tau;
        pt["precision"] = p.precision;
        pt["recall"] = p.recall;
        curve.push_back(pt);
    }
    j["pr_curve"] = curve;
    return j;
}

std::ofstream open_out(const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path + " for writing");
    return out;
}

} // namespace

void write_report_json(const std::vector<EvalReport>& reports, const std::string& path) {
    ordered_json j = ordered_json::array();
    for (const auto& r : reports) j.push_back(report_to_json(r));
    auto out = open_out(path);
    out << j.dump(2) << "\n";
    if (!out) throw IoError("short write to " + path);
}

void write_report_csv(const std::vector<EvalReport>& reports, const std::string& path) {
    auto out = open_out(path);
    out << "transform,mode,r_at_1,micro_ap,p_f,max_recall,psnr_mean,psnr_std,linf_mean,linf_max\n";
    char line[512];
    for (const auto& r : reports) {
        for (const auto& tr : r.per_transform) {
            std::snprintf(line, sizeof(line), "%s,%s,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g\n",
                          tr.label.c_str(), r.mode.c_str(), tr.r_at_1, tr.micro_ap, tr.p_f,
                          tr.max_recall, r.psnr_mean, r.psnr_std, r.linf_mean, r.linf_max);
            out << line;
        }
        std::snprintf(line, sizeof(line), "all,%s,%.9g,%.9g,,,%.9g,%.9g,%.9g,%.9g\n",
                      r.mode.c_str(), r.mean_r_at_1, r.pooled.micro_ap, r.psnr_mean, r.psnr_std,
                      r.linf_mean, r.linf_max);
        out << line;
    }
    if (!out) throw IoError("short write to " + path);
}

void write_pr_csv(const std::vector<EvalReport>& reports, const std::string& path) {
    auto out = open_out(path);
    out << "mode,tau,precision,recall\n";
    char line[256];
    for (const auto& r : reports) {
        for (const auto& p : downsample_curve(r.pooled.points)) {
            std::snprintf(line, sizeof(line), "%s,%.9g,%.9g,%.9g\n", r.mode.c_str(), p.tau,
                          p.precision, p.recall);
            out << line;
        }
    }
    if (!out) throw IoError("short write to " + path);
}

} // namespace actidx
