#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "talk/bench.hpp"
#include "talk/cli.hpp"
#include "talk/tensor_io.hpp"

using namespace talk;

namespace {

int run(std::initializer_list<const char*> args) {
    std::vector<const char*> argv{"talk"};
    argv.insert(argv.end(), args.begin(), args.end());
    return cli_main(static_cast<int>(argv.size()), argv.data());
}

std::string temp_path(const char* name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("unknown flags exit with usage code 2") {
    CHECK(run({"--definitely-not-a-flag"}) == 2);
    CHECK(run({"bench", "--bogus"}) == 2);
}

TEST_CASE("help exits cleanly") { CHECK(run({"--help"}) == 0); }

TEST_CASE("bench emits the documented CSV schema") {
    const std::string csv = temp_path("talk_cli_bench.csv");
    CHECK(run({"bench", "--core", "talk", "--n", "64", "--batch", "2", "--dim", "16", "--heads", "2",
               "--iters", "3", "--warmup", "1", "--out", csv.c_str()}) == 0);
    std::ifstream f(csv);
    REQUIRE(f.good());
    std::string header, row;
    std::getline(f, header);
    std::getline(f, row);
    CHECK(header == "core,n,iters_per_sec,peak_bytes,status");
    CHECK(row.substr(0, 8) == "talk,64,");
    std::remove(csv.c_str());
}

TEST_CASE("bench rows track working memory when hooks are linked") {
    REQUIRE(allocstats::hooks_active());
    BenchSpec spec;
    spec.core = BenchCoreKind::SelfAttention;
    spec.lengths = {128};
    spec.batch = 2;
    spec.dim = 32;
    spec.heads = 2;
    spec.iterations = 3;
    spec.warmup = 1;
    auto rows = run_bench<float>(spec);
    REQUIRE(rows.size() == 1);
    // the score tensor alone is B*H*n*n floats
    CHECK(rows[0].peak_bytes >= 2 * 2 * 128 * 128 * sizeof(float));
    CHECK(rows[0].status == "ok");
}

TEST_CASE("attention rows report OOM under a tiny memory budget") {
    BenchSpec spec;
    spec.core = BenchCoreKind::SelfAttention;
    spec.lengths = {4096};
    spec.batch = 4;
    spec.dim = 64;
    spec.heads = 8;
    spec.iterations = 1;
    spec.mem_limit_bytes = 1 << 20;
    auto rows = run_bench<float>(spec);
    REQUIRE(rows.size() == 1);
    CHECK(rows[0].status == "OOM");
    CHECK(rows[0].iters_per_sec == 0.0);
}

TEST_CASE("gradcheck subcommand passes and the corrupt fixture fails") {
    CHECK(run({"gradcheck", "--seed", "7", "--trials", "3"}) == 0);
    auto broken = run_gradcheck(7, 1, true);
    CHECK_FALSE(broken.pass);
}

TEST_CASE("oracle-diff subcommand") {
    CHECK(run({"oracle-diff", "--seed", "3", "--trials", "10"}) == 0);
    CHECK(run({"oracle-diff", "--seed", "3", "--trials", "5", "--dtype", "f64"}) == 0);
}

TEST_CASE("train subcommand runs a JSON config end to end") {
    const std::string cfg_path = temp_path("talk_cli_train.json");
    const std::string report = temp_path("talk_cli_report.csv");
    const std::string ck = temp_path("talk_cli_ck.talk");
    {
        std::ofstream f(cfg_path);
        f << R"({
            "task": "copy", "layers": 1, "d": 8, "d_ff": 16, "heads": 2,
            "l_max": 4, "r_max": 0, "vocab": 8, "seq_len": 8, "batch_size": 2,
            "warmup_steps": 2, "total_steps": 8, "log_every": 4, "seed": 3,
            "report": ")" << report << R"(", "checkpoint": ")" << ck << R"("
        })";
    }
    CHECK(run({"train", "--config", cfg_path.c_str()}) == 0);
    std::ifstream rf(report);
    std::string header;
    std::getline(rf, header);
    CHECK(header == "step,loss,lr,accuracy");
    CHECK(std::filesystem::exists(ck));
    // checkpoint parses back
    CHECK_NOTHROW(load_tensors(ck));
    std::remove(cfg_path.c_str());
    std::remove(report.c_str());
    std::remove(ck.c_str());

    CHECK(run({"train", "--config", "/does/not/exist.json"}) == 1);
}
