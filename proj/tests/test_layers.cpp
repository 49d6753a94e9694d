#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "talk/gradcheck.hpp"
#include "talk/layers.hpp"

using namespace talk;

TEST_CASE("offset generator basics") {
    Rng rng(1);
    auto x = tensor_rand_uniform<double>({2, 5, 6}, -1.0, 1.0, rng);

    SUBCASE("zero weights and bias give 0.5 everywhere") {
        OffsetGenerator<double> gen{Tensor<double>({2, 3, 2}, 0.0), Tensor<double>({2, 2}, 0.0)};
        auto rel = offsets_generate(x, gen);
        CHECK(rel.values.shape() == Shape{2, 5, 2, 2});
        for (double v : rel.values) CHECK(v == 0.5);
    }
    SUBCASE("large bias saturates toward 1") {
        OffsetGenerator<double> gen{Tensor<double>({2, 3, 2}, 0.0), Tensor<double>({2, 2}, 20.0)};
        auto rel = offsets_generate(x, gen);
        for (double v : rel.values) CHECK(v > 0.999);
    }
    SUBCASE("single head uses all channels") {
        OffsetGenerator<double> gen{Tensor<double>({1, 6, 2}, 0.1), Tensor<double>({1, 2}, 0.0)};
        auto rel = offsets_generate(x, gen);
        CHECK(rel.values.shape() == Shape{2, 5, 1, 2});
        for (double v : rel.values) {
            CHECK(v > 0.0);
            CHECK(v < 1.0);
        }
    }
    SUBCASE("head/channel mismatch is a config error") {
        OffsetGenerator<double> gen{Tensor<double>({4, 2, 2}, 0.0), Tensor<double>({4, 2}, 0.0)};
        CHECK_THROWS_AS(offsets_generate(x, gen), config_error);  // 4*2 != 6
    }
}

TEST_CASE("offsets dropout") {
    Rng rng(2);
    RelativeOffsets<double> rel{tensor_rand_uniform<double>({2, 5, 2, 2}, 0.1, 0.9, rng)};

    SUBCASE("p=0 is a bit-exact identity and consumes no draws") {
        Rng r(7);
        const auto before = r.state();
        auto out = offsets_dropout(rel, 0.0, r, true);
        CHECK(r.state() == before);
        for (std::int64_t i = 0; i < rel.values.numel(); ++i)
            CHECK(out.values.values[i] == rel.values[i]);
        CHECK(out.kept.empty());
    }
    SUBCASE("eval mode is an identity for any p") {
        Rng r(7);
        auto out = offsets_dropout(rel, 0.7, r, false);
        for (std::int64_t i = 0; i < rel.values.numel(); ++i)
            CHECK(out.values.values[i] == rel.values[i]);
    }
    SUBCASE("empirical drop rate approaches p") {
        RelativeOffsets<double> big{Tensor<double>({1, 2500, 1, 2}, 0.5)};  // 5000 draws... use 10000
        RelativeOffsets<double> big2{Tensor<double>({1, 2500, 2, 2}, 0.5)};
        Rng r(11);
        auto out = offsets_dropout(big2, 0.5, r, true);
        std::int64_t dropped = 0;
        for (double v : out.values.values) dropped += (v == 0.0);
        const double rate = static_cast<double>(dropped) / 10000.0;
        CHECK(std::abs(rate - 0.5) < 0.02);
    }
    SUBCASE("invalid p is rejected") {
        Rng r(7);
        CHECK_THROWS_AS(offsets_dropout(rel, 1.0, r, true), config_error);
        CHECK_THROWS_AS(offsets_dropout(rel, -0.1, r, true), config_error);
    }
    SUBCASE("backward zeroes dropped slots") {
        Rng r(13);
        auto out = offsets_dropout(rel, 0.5, r, true);
        Tensor<double> g(rel.values.shape(), 1.0);
        auto gb = offsets_dropout_backward(g, out.kept);
        for (std::int64_t i = 0; i < g.numel(); ++i)
            CHECK(gb[i] == (out.kept[static_cast<std::size_t>(i)] ? 1.0 : 0.0));
    }
}

TEST_CASE("activation identities") {
    // GLU with zero gate logits halves the value half
    Tensor<double> x = Tensor<double>::from_data({1, 1, 4}, {3.0, -2.0, 0.0, 0.0});
    auto y = glu_forward(x);
    CHECK(y.at3(0, 0, 0) == 1.5);
    CHECK(y.at3(0, 0, 1) == -1.0);

    CHECK(swish_forward(Tensor<double>({1}, 0.0))[0] == 0.0);
    CHECK(swish_forward(Tensor<double>({1}, 30.0))[0] == doctest::Approx(30.0).epsilon(1e-9));
    CHECK(swish_forward(Tensor<double>({1}, -30.0))[0] == doctest::Approx(0.0).epsilon(1e-9));
}

TEST_CASE("every layer backward matches finite differences") {
    Rng rng(3);
    CHECK(gradcheck::check_linear(rng).worst < 1e-6);
    CHECK(gradcheck::check_glu(rng).worst < 1e-6);
    CHECK(gradcheck::check_swish(rng).worst < 1e-6);
    CHECK(gradcheck::check_layernorm(rng).worst < 1e-6);
    CHECK(gradcheck::check_embedding(rng).worst < 1e-6);
    CHECK(gradcheck::check_softmax_xent(rng).worst < 1e-6);
    CHECK(gradcheck::check_offset_generator(rng).worst < 1e-6);
}

TEST_CASE("full block gradients match finite differences") {
    Rng rng(5);
    CHECK(gradcheck::check_block(rng, true, false).worst < 1e-5);
    CHECK(gradcheck::check_block(rng, true, true).worst < 1e-5);
    CHECK(gradcheck::check_block(rng, false, false).worst < 1e-5);
    CHECK(gradcheck::check_block(rng, true, false, NormPlacement::Post).worst < 1e-5);
    CHECK(gradcheck::check_block(rng, false, true, NormPlacement::Post).worst < 1e-5);
}

TEST_CASE("block keeps shape and is deterministic per seed") {
    Rng rng(7);
    TalkConfig cfg{8, 2, 3, 3, 0.3, true};
    auto block = TalkBlock<float>::init(cfg, 16, true, false, rng);
    auto x = tensor_rand_uniform<float>({2, 6, 8}, -1.0f, 1.0f, rng);
    Rng d1(99), d2(99);
    auto [y1, s1] = talk_block_forward(x, block, true, d1);
    auto [y2, s2] = talk_block_forward(x, block, true, d2);
    CHECK(y1.shape() == x.shape());
    for (std::int64_t i = 0; i < y1.numel(); ++i) CHECK(y1[i] == y2[i]);
}

TEST_CASE("block collapses to wiring algebra with inert pieces") {
    // in_proj = [I | 0] so GLU yields ln1(x)/2; offsets pinned to ~0 make the
    // kernel an identity; out_proj = I; FFN weights zeroed. Then
    // y = x + 0.5 * ln1(x).
    Rng rng(9);
    const std::int64_t d = 4;
    TalkConfig cfg{d, 1, 2, 2, 0.0, false};
    auto block = TalkBlock<double>::init(cfg, 8, true, false, rng);
    for (auto& v : block.in_proj.weight) v = 0.0;
    for (std::int64_t k = 0; k < d; ++k) block.in_proj.weight.at2(k, k) = 1.0;
    for (auto& v : block.in_proj.bias) v = 0.0;
    for (auto& v : block.offset_gen.weight) v = 0.0;
    for (auto& v : block.offset_gen.bias) v = -100.0;
    for (auto& v : block.out_proj.weight) v = 0.0;
    for (std::int64_t k = 0; k < d; ++k) block.out_proj.weight.at2(k, k) = 1.0;
    for (auto& v : block.out_proj.bias) v = 0.0;
    for (auto& v : block.ffn1.weight) v = 0.0;
    for (auto& v : block.ffn2.weight) v = 0.0;

    auto x = tensor_rand_uniform<double>({1, 5, d}, -1.0, 1.0, rng);
    Rng drng(0);
    auto [y, saved] = talk_block_forward(x, block, false, drng);
    auto [ln_out, ln_saved] = layernorm_forward(x, block.ln1_gain, block.ln1_bias);
    for (std::int64_t i = 0; i < y.numel(); ++i)
        CHECK(y[i] == doctest::Approx(x[i] + 0.5 * ln_out[i]).epsilon(1e-9));
}

TEST_CASE("stacks without output normalization grow in magnitude") {
    // wide-open windows (saturated offsets) on a 4-block stack
    Rng rng(21);
    const std::int64_t d = 8, n = 16;
    auto mean_abs = [](const Tensor<float>& t) {
        double acc = 0;
        for (float v : t) acc += std::abs(v);
        return acc / static_cast<double>(t.numel());
    };
    auto run_stack = [&](bool normalize) {
        Rng init(33);
        std::vector<TalkBlock<float>> blocks;
        for (int i = 0; i < 4; ++i) {
            TalkConfig cfg{d, 1, 15, 15, 0.0, normalize};
            auto b = TalkBlock<float>::init(cfg, 16, true, false, init);
            for (auto& v : b.offset_gen.bias) v = 20.0f;  // windows at max reach
            blocks.push_back(std::move(b));
        }
        Rng data(55);
        auto x = tensor_rand_uniform<float>({1, n, d}, -1.0f, 1.0f, data);
        Rng drng(0);
        std::vector<double> magnitudes{mean_abs(x)};
        Tensor<float> h = x;
        for (auto& b : blocks) {
            auto [y, s] = talk_block_forward(h, b, false, drng);
            h = std::move(y);
            magnitudes.push_back(mean_abs(h));
        }
        return magnitudes;
    };
    auto off = run_stack(false);
    auto on = run_stack(true);
    CHECK(off.back() > 2.0 * off.front());     // depth inflates unnormalized activations
    CHECK(off.back() > 3.0 * on.back());       // normalization keeps them bounded
    CHECK(off[2] > off[1]);                    // growth shows up early in the stack
}
