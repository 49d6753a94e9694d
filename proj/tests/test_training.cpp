#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "talk/training.hpp"

using namespace talk;

namespace {

std::string temp_path(const char* name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

TrainConfig tiny_config() {
    TrainConfig cfg;
    cfg.task = TaskKind::Copy;
    cfg.layers = 1;
    cfg.d = 8;
    cfg.d_ff = 16;
    cfg.heads = 2;
    cfg.left_max = {4};
    cfg.right_max = {0};
    cfg.vocab = 8;
    cfg.seq_len = 8;
    cfg.batch_size = 2;
    cfg.warmup_steps = 2;
    cfg.total_steps = 12;
    cfg.log_every = 3;
    cfg.seed = 5;
    return cfg;
}

}  // namespace

TEST_CASE("lr schedule endpoints") {
    LrSchedule s{1e-3, 1e-7, 10000, 30000};
    CHECK(s.at(0) == 1e-7);
    CHECK(s.at(10000) == doctest::Approx(1e-3).epsilon(1e-12));
    CHECK(s.at(30000) == doctest::Approx(1e-7).epsilon(1e-6));
    CHECK(s.at(20000) == doctest::Approx(1e-7 + 0.5 * (1e-3 - 1e-7)).epsilon(1e-9));
    CHECK(s.at(5000) == doctest::Approx(1e-7 + 0.5 * (1e-3 - 1e-7)).epsilon(1e-9));
    for (std::int64_t step = 0; step <= 30000; step += 500) {
        CHECK(s.at(step) >= 1e-7 * (1 - 1e-9));
        CHECK(s.at(step) <= 1e-3 * (1 + 1e-9));
    }
}

TEST_CASE("adam zero gradient leaves parameters unchanged") {
    Tensor<double> p({3}, 1.5);
    Tensor<double> g({3}, 0.0);
    std::vector<std::pair<std::string, Tensor<double>*>> params{{"p", &p}};
    auto state = AdamState<double>::init(params);
    CHECK(adam_step<double>({&p}, {&g}, state, 0.1));
    CHECK(state.t == 1);
    for (double v : p) CHECK(v == 1.5);
}

TEST_CASE("adam single step from zero state matches the closed form") {
    Tensor<double> p({1}, 0.0);
    Tensor<double> g({1}, 0.5);
    std::vector<std::pair<std::string, Tensor<double>*>> params{{"p", &p}};
    auto state = AdamState<double>::init(params);
    adam_step<double>({&p}, {&g}, state, 0.1);
    const double want = -0.1 * 0.5 / (0.5 + 1e-8);
    CHECK(p[0] == doctest::Approx(want).epsilon(1e-9));
}

TEST_CASE("adam skips non-finite gradients and counts them") {
    Tensor<double> p({2}, 1.0);
    Tensor<double> g({2}, 0.0);
    g[1] = std::numeric_limits<double>::quiet_NaN();
    std::vector<std::pair<std::string, Tensor<double>*>> params{{"p", &p}};
    auto state = AdamState<double>::init(params);
    CHECK_FALSE(adam_step<double>({&p}, {&g}, state, 0.1));
    CHECK(state.skipped == 1);
    CHECK(state.t == 0);
    for (double v : p) CHECK(v == 1.0);
}

TEST_CASE("copy batches have the documented structure") {
    Rng rng(3);
    auto b = make_copy_batch(rng, 3, 32, 16);
    for (std::int64_t row = 0; row < 3; ++row) {
        for (std::int64_t t = 0; t < 16; ++t) {
            CHECK(b.mask.at2(row, t) == 0);
            CHECK(b.inputs.at2(row, t) >= 1);
            CHECK(b.inputs.at2(row, t) < 16);
        }
        for (std::int64_t t = 16; t < 32; ++t) {
            CHECK(b.mask.at2(row, t) == 1);
            CHECK(b.inputs.at2(row, t) == 0);
            CHECK(b.targets.at2(row, t) == b.inputs.at2(row, t - 16));
        }
    }
    Rng r1(9), r2(9);
    auto b1 = make_copy_batch(r1, 2, 8, 8);
    auto b2 = make_copy_batch(r2, 2, 8, 8);
    for (std::int64_t i = 0; i < b1.inputs.numel(); ++i) CHECK(b1.inputs[i] == b2.inputs[i]);

    CHECK_THROWS_AS(make_copy_batch(rng, 1, 8, 3), config_error);
    CHECK_THROWS_AS(make_copy_batch(rng, 1, 7, 8), config_error);
}

TEST_CASE("reverse and char_lm batches") {
    Rng rng(5);
    auto b = make_reverse_batch(rng, 2, 9, 12);
    for (std::int64_t row = 0; row < 2; ++row)
        for (std::int64_t t = 0; t < 9; ++t) {
            CHECK(b.targets.at2(row, t) == b.inputs.at2(row, 8 - t));
            CHECK(b.mask.at2(row, t) == 1);
        }

    std::vector<std::uint8_t> text;
    for (int i = 0; i < 100; ++i) text.push_back(static_cast<std::uint8_t>('a' + i % 20));
    auto lm = make_char_lm_batch(rng, text, 2, 16);
    for (std::int64_t row = 0; row < 2; ++row)
        for (std::int64_t t = 0; t < 15; ++t)
            CHECK(lm.targets.at2(row, t) == lm.inputs.at2(row, t + 1));
    CHECK_THROWS_AS(make_char_lm_batch(rng, std::vector<std::uint8_t>(4), 1, 16), config_error);
}

TEST_CASE("training is deterministic per seed") {
    TrainConfig cfg = tiny_config();
    auto r1 = train_loop<float>(cfg);
    auto r2 = train_loop<float>(cfg);
    REQUIRE(r1.log.size() == r2.log.size());
    for (std::size_t i = 0; i < r1.log.size(); ++i) {
        CHECK(r1.log[i].loss == r2.log[i].loss);
        CHECK(r1.log[i].accuracy == r2.log[i].accuracy);
    }
}

TEST_CASE("config validation") {
    TrainConfig cfg = tiny_config();
    cfg.warmup_steps = cfg.total_steps;
    CHECK_THROWS_AS(train_loop<float>(cfg), config_error);
    cfg = tiny_config();
    cfg.left_max = {1, 2};
    CHECK_THROWS_AS(train_loop<float>(cfg), config_error);
}

TEST_CASE("checkpoint save-load-save is byte identical") {
    TrainConfig cfg = tiny_config();
    cfg.checkpoint_path = temp_path("talk_ck_a.talk");
    train_loop<double>(cfg);

    NamedTensors once = load_tensors(cfg.checkpoint_path);
    const std::string again = temp_path("talk_ck_b.talk");
    save_tensors(once, again);

    std::ifstream f1(cfg.checkpoint_path, std::ios::binary);
    std::ifstream f2(again, std::ios::binary);
    std::vector<char> b1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
    std::vector<char> b2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
    REQUIRE(!b1.empty());
    CHECK(b1 == b2);
    std::remove(cfg.checkpoint_path.c_str());
    std::remove(again.c_str());
}

TEST_CASE("resume reproduces the uninterrupted run") {
    // reference: 12 steps straight through
    TrainConfig ref = tiny_config();
    auto full = train_loop<double>(ref);

    // same run interrupted after 6 steps (schedule still spans 12)
    TrainConfig first = tiny_config();
    first.stop_after_steps = 6;
    first.checkpoint_path = temp_path("talk_resume.talk");
    auto interrupted = train_loop<double>(first);
    CHECK(interrupted.steps_run == 6);

    // resume to 12
    TrainConfig second = tiny_config();
    second.resume_from = first.checkpoint_path;
    auto resumed = train_loop<double>(second);

    REQUIRE(!full.log.empty());
    REQUIRE(!resumed.log.empty());
    const auto& want = full.log.back();   // step 12
    const auto& got = resumed.log.back();
    CHECK(got.step == want.step);
    CHECK(got.loss == doctest::Approx(want.loss).epsilon(1e-12));
    CHECK(full.final_loss == resumed.final_loss);
    // the interrupted run's logged prefix matches the reference exactly
    for (std::size_t i = 0; i < interrupted.log.size(); ++i)
        CHECK(interrupted.log[i].loss == full.log[i].loss);
    std::remove(first.checkpoint_path.c_str());
}

TEST_CASE("report csv has the documented schema") {
    TrainConfig cfg = tiny_config();
    cfg.report_path = temp_path("talk_report.csv");
    train_loop<float>(cfg);
    std::ifstream f(cfg.report_path);
    std::string header;
    std::getline(f, header);
    CHECK(header == "step,loss,lr,accuracy");
    int lines = 0;
    std::string line;
    while (std::getline(f, line))
        if (!line.empty()) ++lines;
    CHECK(lines == 4);  // 12 steps / log_every 3
    std::remove(cfg.report_path.c_str());
}

TEST_CASE("exploding training sets the divergence flag") {
    TrainConfig cfg = tiny_config();
    cfg.lr_peak = 1e5;  // blow past any reasonable basin
    cfg.warmup_steps = 1;
    cfg.total_steps = 300;
    cfg.normalize = false;
    auto report = train_loop<float>(cfg);
    CHECK(report.diverged);
    CHECK(report.steps_run < 300);
}
