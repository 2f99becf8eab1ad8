#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "actidx/image.hpp"

namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    explicit TempDir(const char* name) : path(fs::temp_directory_path() / name) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string str() const { return path.string(); }
};

int run(const std::string& args) {
    const std::string cmd = std::string(ACTIDX_BIN) + " " + args + " 2>/dev/null >/dev/null";
    const int status = std::system(cmd.c_str());
    return WEXITSTATUS(status);
}

std::vector<unsigned char> slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

bool trees_equal(const fs::path& a, const fs::path& b) {
    std::vector<fs::path> fa, fb;
    for (const auto& e : fs::recursive_directory_iterator(a)) fa.push_back(fs::relative(e, a));
    for (const auto& e : fs::recursive_directory_iterator(b)) fb.push_back(fs::relative(e, b));
    std::sort(fa.begin(), fa.end());
    std::sort(fb.begin(), fb.end());
    if (fa != fb) return false;
    for (const auto& rel : fa)
        if (fs::is_regular_file(a / rel) && slurp(a / rel) != slurp(b / rel)) return false;
    return true;
}

} // namespace

TEST_CASE("gen is deterministic at the byte level") {
    TempDir d1("actidx_cli_gen1"), d2("actidx_cli_gen2");
    REQUIRE(run("gen --seed 5 --count 4 --size 32 --out " + d1.str()) == 0);
    REQUIRE(run("gen --seed 5 --count 4 --size 32 --out " + d2.str()) == 0);
    CHECK(trees_equal(d1.path, d2.path));
    CHECK(fs::exists(d1.path / "manifest.json"));
    CHECK(fs::exists(d1.path / "corpus_00003.ppm"));
}

TEST_CASE("gen with count 0 writes an empty manifest and succeeds") {
    TempDir d("actidx_cli_gen0");
    CHECK(run("gen --count 0 --out " + d.str()) == 0);
    CHECK(fs::exists(d.path / "manifest.json"));
}

TEST_CASE("exit codes distinguish failure classes") {
    TempDir d("actidx_cli_codes");
    CHECK(run("--no-such-flag") == 2);
    CHECK(run("nonexistent-command") == 2);
    // missing index file -> io error
    CHECK(run("query --index " + d.str() + "/missing.aidx --image x.ppm") == 5);
    // malformed index file -> format error
    std::ofstream(d.path / "bad.aidx") << "not an index";
    std::ofstream(d.path / "img.ppm") << "also wrong";
    CHECK(run("query --index " + d.str() + "/bad.aidx --image " + d.str() + "/img.ppm") == 3);
}

TEST_CASE("pipeline: gen, train, add, query, activate") {
    TempDir d("actidx_cli_pipe");
    const std::string corpus = d.str() + "/corpus";
    const std::string index = d.str() + "/index.aidx";
    REQUIRE(run("gen --seed 9 --count 40 --size 64 --out " + corpus) == 0);
    REQUIRE(run("--seed 9 train --corpus " + corpus + " --out " + index +
                " --cells 4 --ksub 32 --kmeans-iters 8") == 0);
    REQUIRE(run("--seed 9 add --index " + index + " --corpus " + corpus) == 0);

    SUBCASE("query prints its own id first") {
        const std::string out = d.str() + "/hits.txt";
        const std::string cmd = std::string(ACTIDX_BIN) + " --seed 9 query --index " + index +
                                " --image " + corpus + "/corpus_00007.ppm --k 3 --probes 4 > " +
                                out + " 2>/dev/null";
        REQUIRE(WEXITSTATUS(std::system(cmd.c_str())) == 0);
        std::ifstream in(out);
        unsigned id;
        double dist;
        REQUIRE((in >> id >> dist));
        CHECK(id == 7);
    }
    SUBCASE("activate with alpha 0 round-trips the images") {
        const std::string act = d.str() + "/activated";
        REQUIRE(run("--seed 9 activate --index " + index + " --corpus " + corpus + " --out " +
                    act + " --alpha 0 --csv " + d.str() + "/act.csv") == 0);
        // inputs are integer-valued PPMs, so a zero perturbation must
        // reproduce them byte-identically
        CHECK(slurp(fs::path(corpus) / "corpus_00000.ppm") ==
              slurp(fs::path(act) / "corpus_00000.ppm"));
        std::ifstream csv(d.path / "act.csv");
        std::string header;
        std::getline(csv, header);
        CHECK(header == "id,psnr_db,linf,lf_before,lf_after");
    }
    SUBCASE("duplicate add is an argument error") {
        CHECK(run("--seed 9 add --index " + index + " --corpus " + corpus) == 2);
    }
}

TEST_CASE("eval smoke run writes byte-stable reports") {
    TempDir d("actidx_cli_eval");
    const std::string base = " eval --refs 200 --queries 20 --out ";
    const std::string common = "--seed 21 --threads 2";
    // tiny geometry via config file
    std::ofstream cfg(d.path / "cfg.json");
    cfg << R"({"cells": 4, "ksub": 32, "negative_count": 40, "kmeans_iters": 6,
               "transforms": [{"kind": "identity"}, {"kind": "blur", "parameter": 1.0}]})";
    cfg.close();
    const std::string args = common + " eval --config " + d.str() + "/cfg.json" +
                             " --refs 200 --queries 20 --mode both --out ";
    REQUIRE(run(args + d.str() + "/r1") == 0);
    REQUIRE(run(args + d.str() + "/r2") == 0);
    CHECK(slurp(d.path / "r1/report.json") == slurp(d.path / "r2/report.json"));
    CHECK(slurp(d.path / "r1/report.csv") == slurp(d.path / "r2/report.csv"));
    CHECK(fs::exists(d.path / "r1/pr_curve.csv"));
    CHECK(!slurp(d.path / "r1/report.json").empty());
}
