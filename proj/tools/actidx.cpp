#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "actidx/activation.hpp"
#include "actidx/corpus.hpp"
#include "actidx/errors.hpp"
#include "actidx/eval.hpp"
#include "actidx/extractor.hpp"
#include "actidx/image.hpp"
#include "actidx/index.hpp"
#include "actidx/parallel.hpp"
#include "actidx/rng.hpp"
#include "actidx/transforms.hpp"

namespace fs = std::filesystem;
using nlohmann::ordered_json;
using namespace actidx;

namespace {

// exit codes: 0 ok, 2 usage, 3 format, 4 numeric, 5 io
constexpr int kExitUsage = 2;
constexpr int kExitFormat = 3;
constexpr int kExitNumeric = 4;
constexpr int kExitIo = 5;

struct CorpusEntry {
    std::uint32_t id;
    fs::path file;
};

std::vector<CorpusEntry> list_corpus(const fs::path& dir) {
    std::vector<CorpusEntry> entries;
    const fs::path manifest = dir / "manifest.json";
    if (fs::exists(manifest)) {
        std::ifstream in(manifest);
        if (!in) throw IoError("cannot open " + manifest.string());
        ordered_json j;
        try {
            in >> j;
        } catch (const nlohmann::json::exception& e) {
            throw FormatError("manifest: " + std::string(e.what()));
        }
        for (const auto& img : j.at("images"))
            entries.push_back({img.at("id").get<std::uint32_t>(),
                               dir / img.at("file").get<std::string>()});
        return entries;
    }
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.path().extension() == ".ppm") files.push_back(e.path());
    std::sort(files.begin(), files.end());
    for (std::size_t i = 0; i < files.size(); ++i)
        entries.push_back({static_cast<std::uint32_t>(i), files[i]});
    return entries;
}

Extractor make_extractor(const std::string& weights_path, std::uint64_t seed) {
    if (!weights_path.empty()) return Extractor(load_weights(weights_path));
    return Extractor(init_weights(derive_rng(seed, "extractor-seed").next_u64()));
}

std::vector<FeatureVector> extract_all(const Extractor& ex, const std::vector<CorpusEntry>& entries,
                                       unsigned threads) {
    std::vector<FeatureVector> feats(entries.size());
    parallel_for(entries.size(), threads, [&](std::size_t i) {
        feats[i] = ex.extract(load_ppm(entries[i].file.string()));
    });
    return feats;
}

TransformSpec parse_transform_token(const std::string& token) {
    const auto colon = token.find(':');
    TransformSpec spec;
    spec.kind = transform_kind_from_name(colon == std::string::npos ? token
                                                                    : token.substr(0, colon));
    if (colon != std::string::npos) spec.parameter = std::stod(token.substr(colon + 1));
    validate_transform(spec);
    return spec;
}

int cmd_gen(std::uint64_t seed, int count, int size, const std::string& out_dir) {
    fs::create_directories(out_dir);
    ordered_json manifest;
    manifest["seed"] = seed;
    manifest["size"] = size;
    ordered_json images = ordered_json::array();
    for (int i = 0; i < count; ++i) {
        char name[32];
        std::snprintf(name, sizeof(name), "corpus_%05d.ppm", i);
        save_ppm(generate_corpus_image(seed, i, size), (fs::path(out_dir) / name).string());
        ordered_json row;
        row["id"] = i;
        row["file"] = name;
        images.push_back(row);
    }
    manifest["images"] = images;
    std::ofstream out(fs::path(out_dir) / "manifest.json", std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write manifest in " + out_dir);
    out << manifest.dump(2) << "\n";
    std::fprintf(stderr, "gen: wrote %d images to %s\n", count, out_dir.c_str());
    return 0;
}

int cmd_train(const std::string& corpus_dir, const std::string& index_out,
              const std::string& weights_in, const std::string& weights_out, std::uint64_t seed,
              int cells, int m, int ksub, int iters, unsigned threads) {
    Extractor ex = make_extractor(weights_in, seed);
    const auto entries = list_corpus(corpus_dir);
    if (entries.empty()) throw std::invalid_argument("train: corpus is empty");
    const auto feats = extract_all(ex, entries, threads);
    const int dim = ex.feature_dim();
    std::vector<float> flat;
    flat.reserve(feats.size() * dim);
    for (const auto& f : feats) flat.insert(flat.end(), f.begin(), f.end());
    auto index = IvfPqIndex::train(flat.data(), feats.size(), dim, cells, m, ksub, iters,
                                   derive_rng(seed, "index-train").next_u64());
    index.save(index_out);
    if (!weights_out.empty()) save_weights(ex.weights(), weights_out);
    std::fprintf(stderr, "train: %zu vectors -> %s (IVF%d,PQ%dx%d)\n", feats.size(),
                 index_out.c_str(), cells, m, static_cast<int>(std::log2(ksub)));
    return 0;
}

int cmd_add(const std::string& index_path, const std::string& corpus_dir,
            const std::string& index_out, const std::string& weights_in, std::uint64_t seed,
            unsigned threads) {
    auto index = IvfPqIndex::load(index_path);
    Extractor ex = make_extractor(weights_in, seed);
    const auto entries = list_corpus(corpus_dir);
    const auto feats = extract_all(ex, entries, threads);
    for (std::size_t i = 0; i < entries.size(); ++i) index.add(feats[i], entries[i].id);
    index.save(index_out.empty() ? index_path : index_out);
    std::fprintf(stderr, "add: %zu entries -> %s\n", entries.size(),
                 (index_out.empty() ? index_path : index_out).c_str());
    return 0;
}

int cmd_activate(const std::string& index_path, const std::string& corpus_dir,
                 const std::string& out_dir, const std::string& csv_path,
                 const std::string& weights_in, std::uint64_t seed, const ActivationConfig& base,
                 const std::vector<std::string>& eot_pool, int eot_samples, unsigned threads) {
    auto index = IvfPqIndex::load(index_path);
    Extractor ex = make_extractor(weights_in, seed);
    const auto entries = list_corpus(corpus_dir);
    fs::create_directories(out_dir);

    ActivationConfig cfg = base;
    if (!eot_pool.empty()) {
        EotConfig eot;
        eot.samples = eot_samples;
        for (const auto& token : eot_pool) eot.pool.push_back(parse_transform_token(token));
        cfg.eot = eot;
    }

    struct Row {
        std::uint32_t id;
        double psnr, linf, lf_before, lf_after;
    };
    std::vector<Row> rows(entries.size());
    parallel_for(entries.size(), threads, [&](std::size_t i) {
        const Image img = load_ppm(entries[i].file.string());
        const LossContext ctx = make_loss_context(index, entries[i].id, cfg.loss_kind);
        ActivationConfig local = cfg;
        if (local.eot)
            local.eot->seed = derive_rng(seed, "eot-seed", entries[i].id).next_u64();
        ActivationResult res = activate(img, ex, ctx, local);
        const double before =
            indexation_loss(std::span<const float>(res.feature_before), ctx, nullptr);
        const double after =
            indexation_loss(std::span<const float>(res.feature_after), ctx, nullptr);
        save_ppm(res.activated, (fs::path(out_dir) / entries[i].file.filename()).string());
        rows[i] = {entries[i].id, res.quality.psnr_db, res.quality.linf, before, after};
    });

    if (!csv_path.empty()) {
        std::ofstream csv(csv_path, std::ios::binary | std::ios::trunc);
        if (!csv) throw IoError("cannot open " + csv_path);
        csv << "id,psnr_db,linf,lf_before,lf_after\n";
        char line[160];
        for (const auto& r : rows) {
            std::snprintf(line, sizeof(line), "%u,%.6f,%.6f,%.9g,%.9g\n", r.id, r.psnr, r.linf,
                          r.lf_before, r.lf_after);
            csv << line;
        }
    }
    std::fprintf(stderr, "activate: %zu images -> %s\n", entries.size(), out_dir.c_str());
    return 0;
}

int cmd_query(const std::string& index_path, const std::string& image_path,
              const std::string& weights_in, std::uint64_t seed, int k, int probes) {
    auto index = IvfPqIndex::load(index_path);
    Extractor ex = make_extractor(weights_in, seed);
    const auto feature = ex.extract(load_ppm(image_path));
    for (const auto& n : index.search(feature, k, probes))
        std::printf("%u %.6f\n", n.id, n.distance);
    return 0;
}

void apply_eval_json(const ordered_json& j, ExperimentConfig& cfg) {
    if (j.contains("preset")) cfg = make_experiment_config(
        index_preset_from_name(j.at("preset").get<std::string>()));
    auto get = [&](const char* key, auto& field) {
        if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
    };
    get("seed", cfg.seed);
    get("image_size", cfg.image_size);
    get("train_count", cfg.train_count);
    get("reference_count", cfg.reference_count);
    get("negative_count", cfg.negative_count);
    get("query_count", cfg.query_count);
    get("cells", cfg.cells);
    get("m", cfg.m);
    get("ksub", cfg.ksub);
    get("probes", cfg.probes);
    get("kmeans_iters", cfg.kmeans_iters);
    get("opq_rounds", cfg.opq_rounds);
    get("lsh_out_dim", cfg.lsh_out_dim);
    get("lsh_bits", cfg.lsh_bits);
    get("top_k", cfg.top_k);
    if (j.contains("activation")) {
        const auto& a = j.at("activation");
        if (a.contains("alpha")) cfg.activation.alpha = a.at("alpha").get<double>();
        if (a.contains("lambda")) cfg.activation.lambda = a.at("lambda").get<double>();
        if (a.contains("lr")) cfg.activation.lr = a.at("lr").get<double>();
        if (a.contains("steps")) cfg.activation.steps = a.at("steps").get<int>();
        if (a.contains("loss_kind"))
            cfg.activation.loss_kind = loss_kind_from_name(a.at("loss_kind").get<std::string>());
        if (a.contains("eot")) {
            EotConfig eot;
            const auto& e = a.at("eot");
            if (e.contains("samples")) eot.samples = e.at("samples").get<int>();
            for (const auto& t : e.at("pool")) {
                TransformSpec spec;
                spec.kind = transform_kind_from_name(t.at("kind").get<std::string>());
                if (t.contains("parameter")) spec.parameter = t.at("parameter").get<double>();
                validate_transform(spec);
                eot.pool.push_back(spec);
            }
            cfg.activation.eot = eot;
        }
    }
    if (j.contains("transforms")) {
        cfg.transforms.clear();
        for (const auto& t : j.at("transforms")) {
            TransformSpec spec;
            spec.kind = transform_kind_from_name(t.at("kind").get<std::string>());
            if (t.contains("parameter")) spec.parameter = t.at("parameter").get<double>();
            if (t.contains("seed")) spec.seed = t.at("seed").get<std::uint64_t>();
            validate_transform(spec);
            cfg.transforms.push_back(spec);
        }
    }
}

int cmd_eval(const std::string& config_path, const std::string& preset_name,
             const std::string& mode, std::uint64_t seed, const std::string& out_dir,
             unsigned threads, std::optional<int> refs, std::optional<int> queries) {
    ExperimentConfig cfg = make_experiment_config(
        preset_name.empty() ? IndexPreset::ivfpq : index_preset_from_name(preset_name));
    cfg.seed = seed;
    if (!config_path.empty()) {
        std::ifstream in(config_path);
        if (!in) throw IoError("cannot open " + config_path);
        ordered_json j;
        try {
            in >> j;
        } catch (const nlohmann::json::exception& e) {
            throw FormatError("eval config: " + std::string(e.what()));
        }
        apply_eval_json(j, cfg);
        if (!preset_name.empty()) {
            // flag wins over the file
            auto preset_cfg = make_experiment_config(index_preset_from_name(preset_name));
            cfg.preset = preset_cfg.preset;
        }
    }
    if (refs) {
        cfg.reference_count = *refs;
        cfg.train_count = *refs;
    }
    if (queries) cfg.query_count = *queries;
    cfg.threads = threads;

    fs::create_directories(out_dir);
    auto cache = build_corpus_cache(cfg);
    std::vector<EvalReport> reports;
    if (mode == "passive" || mode == "both") {
        cfg.active = false;
        std::fprintf(stderr, "eval: passive run\n");
        reports.push_back(run_experiment(cfg, cache));
    }
    if (mode == "active" || mode == "both") {
        cfg.active = true;
        std::fprintf(stderr, "eval: active run\n");
        reports.push_back(run_experiment(cfg, cache));
    }
    if (reports.empty()) throw std::invalid_argument("eval: mode must be passive, active or both");

    write_report_json(reports, (fs::path(out_dir) / "report.json").string());
    write_report_csv(reports, (fs::path(out_dir) / "report.csv").string());
    write_pr_csv(reports, (fs::path(out_dir) / "pr_curve.csv").string());
    for (const auto& r : reports)
        std::fprintf(stderr, "eval: %s mean R@1 %.3f, micro-AP %.3f\n", r.mode.c_str(),
                     r.mean_r_at_1, r.pooled.micro_ap);
    std::fprintf(stderr, "eval: reports in %s\n", out_dir.c_str());
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"active image indexing toolkit"};
    app.require_subcommand(1);

    std::uint64_t seed = 42;
    unsigned threads = 0;
    std::string weights;
    app.add_option("--seed", seed, "global seed; all stage seeds derive from it");
    app.add_option("--threads", threads, "worker threads (0 = hardware)");
    app.add_option("--weights", weights, "extractor weight file (default: derived from seed)");

    // gen
    auto* gen = app.add_subcommand("gen", "generate a procedural corpus");
    int gen_count = 100, gen_size = 64;
    std::string gen_out;
    gen->add_option("--count", gen_count, "number of images")->capture_default_str();
    gen->add_option("--size", gen_size, "image side length")->capture_default_str();
    gen->add_option("--out", gen_out, "output directory")->required();

    // train
    auto* train = app.add_subcommand("train", "train an empty IVF-PQ index");
    std::string train_corpus, train_out, train_weights_out;
    int cells = 64, m = 8, ksub = 256, iters = 20;
    train->add_option("--corpus", train_corpus, "training corpus directory")->required();
    train->add_option("--out", train_out, "index output file")->required();
    train->add_option("--weights-out", train_weights_out, "also save extractor weights here");
    train->add_option("--cells", cells, "IVF cells")->capture_default_str();
    train->add_option("--m", m, "PQ subquantizers")->capture_default_str();
    train->add_option("--ksub", ksub, "codewords per subquantizer")->capture_default_str();
    train->add_option("--kmeans-iters", iters, "Lloyd iterations")->capture_default_str();

    // add
    auto* add = app.add_subcommand("add", "add corpus images to an index");
    std::string add_index, add_corpus, add_out;
    add->add_option("--index", add_index, "index file")->required();
    add->add_option("--corpus", add_corpus, "corpus directory")->required();
    add->add_option("--out", add_out, "output index (default: in place)");

    // activate
    auto* act = app.add_subcommand("activate", "optimize already-indexed images");
    std::string act_index, act_corpus, act_out, act_csv, act_loss = "ivfpq";
    ActivationConfig act_cfg;
    std::vector<std::string> act_eot_pool;
    int act_eot_samples = 8;
    act->add_option("--index", act_index, "index file")->required();
    act->add_option("--corpus", act_corpus, "corpus directory (ids must be indexed)")->required();
    act->add_option("--out", act_out, "directory for activated images")->required();
    act->add_option("--csv", act_csv, "per-image results CSV");
    act->add_option("--alpha", act_cfg.alpha, "perturbation strength")->capture_default_str();
    act->add_option("--lambda", act_cfg.lambda, "image-loss weight")->capture_default_str();
    act->add_option("--lr", act_cfg.lr, "Adam learning rate")->capture_default_str();
    act->add_option("--steps", act_cfg.steps, "optimization steps")->capture_default_str();
    act->add_option("--loss", act_loss, "loss kind: ivfpq or ivf")->capture_default_str();
    act->add_option("--eot-pool", act_eot_pool,
                    "EoT transforms, e.g. blur:1.0 rotate:5 (empty = no EoT)");
    act->add_option("--eot-samples", act_eot_samples, "EoT sample count A")->capture_default_str();

    // query
    auto* query = app.add_subcommand("query", "search an index with one image");
    std::string q_index, q_image;
    int q_k = 10, q_probes = 1;
    query->add_option("--index", q_index, "index file")->required();
    query->add_option("--image", q_image, "query PPM")->required();
    query->add_option("--k", q_k, "results")->capture_default_str();
    query->add_option("--probes", q_probes, "IVF cells to probe")->capture_default_str();

    // eval
    auto* eval = app.add_subcommand("eval", "run the retrieval experiment");
    std::string e_config, e_preset, e_mode = "both", e_out = "eval_out";
    std::optional<int> e_refs, e_queries;
    eval->add_option("--config", e_config, "experiment config JSON");
    eval->add_option("--preset", e_preset, "index preset: ivfpq ivfpq_dagger ivf pq opq lsh");
    eval->add_option("--mode", e_mode, "passive, active or both")->capture_default_str();
    eval->add_option("--out", e_out, "report directory")->capture_default_str();
    eval->add_option("--refs", e_refs, "reference (and training) corpus size");
    eval->add_option("--queries", e_queries, "positive query count");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitUsage;
    }

    try {
        if (*gen) return cmd_gen(seed, gen_count, gen_size, gen_out);
        if (*train)
            return cmd_train(train_corpus, train_out, weights, train_weights_out, seed, cells, m,
                             ksub, iters, threads);
        if (*add) return cmd_add(add_index, add_corpus, add_out, weights, seed, threads);
        if (*act) {
            act_cfg.loss_kind = loss_kind_from_name(act_loss);
            return cmd_activate(act_index, act_corpus, act_out, act_csv, weights, seed, act_cfg,
                                act_eot_pool, act_eot_samples, threads);
        }
        if (*query) return cmd_query(q_index, q_image, weights, seed, q_k, q_probes);
        if (*eval) return cmd_eval(e_config, e_preset, e_mode, seed, e_out, threads, e_refs,
                                   e_queries);
    } catch (const FormatError& e) {
        std::fprintf(stderr, "error (format): %s\n", e.what());
        return kExitFormat;
    } catch (const CorruptIndexError& e) {
        std::fprintf(stderr, "error (corrupt index): %s\n", e.what());
        return kExitFormat;
    } catch (const NumericError& e) {
        std::fprintf(stderr, "error (numeric): %s\n", e.what());
        return kExitNumeric;
    } catch (const IoError& e) {
        std::fprintf(stderr, "error (io): %s\n", e.what());
        return kExitIo;
    } catch (const std::filesystem::filesystem_error& e) {
        std::fprintf(stderr, "error (io): %s\n", e.what());
        return kExitIo;
    } catch (const NotFoundError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitUsage;
    } catch (const std::invalid_argument& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitUsage;
    }
    return kExitUsage;
}
