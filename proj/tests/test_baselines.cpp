#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "talk/baselines.hpp"
#include "talk/gradcheck.hpp"

using namespace talk;

TEST_CASE("attention with a single position returns the value row") {
    Rng rng(1);
    auto x = tensor_rand_uniform<double>({2, 1, 6}, -1.0, 1.0, rng);
    auto o = attention_core(x, 2);
    for (std::int64_t i = 0; i < x.numel(); ++i) CHECK(o[i] == doctest::Approx(x[i]).epsilon(1e-12));
}

TEST_CASE("identical rows make attention the mean of values") {
    Tensor<double> x({1, 5, 4});
    for (std::int64_t t = 0; t < 5; ++t)
        for (std::int64_t c = 0; c < 4; ++c) x.at3(0, t, c) = 0.3 * static_cast<double>(c) - 0.5;
    auto o = attention_core(x, 2);
    for (std::int64_t t = 0; t < 5; ++t)
        for (std::int64_t c = 0; c < 4; ++c)
            CHECK(o.at3(0, t, c) == doctest::Approx(x.at3(0, t, c)).epsilon(1e-12));
}

TEST_CASE("attention matches an independent textbook evaluation") {
    Rng rng(3);
    const std::int64_t batch = 2, n = 7, d = 8, heads = 2, width = d / heads;
    auto x = tensor_rand_uniform<double>({batch, n, d}, -1.0, 1.0, rng);
    auto o = attention_core(x, heads, 3);
    for (std::int64_t b = 0; b < batch; ++b)
        for (std::int64_t h = 0; h < heads; ++h)
            for (std::int64_t i = 0; i < n; ++i) {
                std::vector<double> w(static_cast<std::size_t>(n));
                double z = 0;
                for (std::int64_t j = 0; j < n; ++j) {
                    double dot = 0;
                    for (std::int64_t c = 0; c < width; ++c)
                        dot += x.at3(b, i, h * width + c) * x.at3(b, j, h * width + c);
                    w[static_cast<std::size_t>(j)] = std::exp(dot / std::sqrt(double(width)));
                    z += w[static_cast<std::size_t>(j)];
                }
                for (std::int64_t c = 0; c < width; ++c) {
                    double want = 0;
                    for (std::int64_t j = 0; j < n; ++j)
                        want += w[static_cast<std::size_t>(j)] / z * x.at3(b, j, h * width + c);
                    CHECK(o.at3(b, i, h * width + c) == doctest::Approx(want).epsilon(1e-10));
                }
            }
}

TEST_CASE("attention surfaces oversized score buffers as bad_alloc") {
    Rng rng(5);
    auto x = tensor_rand_uniform<float>({1, 64, 8}, -1.0f, 1.0f, rng);
    CHECK_THROWS_AS(attention_core(x, 2, 1, 1024), std::bad_alloc);  // 2*64*64*4 > 1KiB
}

TEST_CASE("dynamic conv with k=1 is the identity") {
    Rng rng(7);
    auto x = tensor_rand_uniform<double>({2, 6, 4}, -1.0, 1.0, rng);
    auto logits = tensor_rand_uniform<double>({2, 6, 2, 1}, -3.0, 3.0, rng);
    auto o = dynamic_conv_core(x, logits, 2);
    for (std::int64_t i = 0; i < x.numel(); ++i) CHECK(o[i] == doctest::Approx(x[i]).epsilon(1e-12));
}

TEST_CASE("uniform kernel logits average the window at interior positions") {
    Rng rng(9);
    auto x = tensor_rand_uniform<double>({1, 9, 2}, -1.0, 1.0, rng);
    auto logits = Tensor<double>({1, 9, 1, 3}, 0.7);  // equal logits -> softmax 1/3
    auto o = dynamic_conv_core(x, logits, 1);
    for (std::int64_t t = 1; t < 8; ++t)
        for (std::int64_t c = 0; c < 2; ++c) {
            const double want = (x.at3(0, t - 1, c) + x.at3(0, t, c) + x.at3(0, t + 1, c)) / 3.0;
            CHECK(o.at3(0, t, c) == doctest::Approx(want).epsilon(1e-12));
        }
}

TEST_CASE("dynamic conv matches a direct per-position loop") {
    Rng rng(11);
    const std::int64_t batch = 2, n = 8, d = 6, heads = 3, k = 3, half = k / 2;
    auto x = tensor_rand_uniform<double>({batch, n, d}, -1.0, 1.0, rng);
    auto logits = tensor_rand_uniform<double>({batch, n, heads, k}, -2.0, 2.0, rng);
    auto o = dynamic_conv_core(x, logits, heads, 2);
    const std::int64_t width = d / heads;
    for (std::int64_t b = 0; b < batch; ++b)
        for (std::int64_t t = 0; t < n; ++t)
            for (std::int64_t c = 0; c < d; ++c) {
                const std::int64_t h = c / width;
                double z = 0;
                std::vector<double> w(static_cast<std::size_t>(k));
                for (std::int64_t j = 0; j < k; ++j) {
                    w[static_cast<std::size_t>(j)] = std::exp(logits.at4(b, t, h, j));
                    z += w[static_cast<std::size_t>(j)];
                }
                double want = 0;
                for (std::int64_t j = 0; j < k; ++j) {
                    const std::int64_t src = t + j - half;
                    if (src < 0 || src >= n) continue;
                    want += w[static_cast<std::size_t>(j)] / z * x.at3(b, src, c);
                }
                CHECK(o.at3(b, t, c) == doctest::Approx(want).epsilon(1e-10));
            }
    CHECK_THROWS_AS(dynamic_conv_core(x, tensor_rand_uniform<double>({batch, n, heads, 4}, 0.0, 1.0, rng), heads),
                    config_error);
}

TEST_CASE("oracle respects the identity and integer-offset special cases") {
    Rng rng(13);
    const std::int64_t n = 10;
    Tensor<double> x({1, n, 2});
    for (auto& v : x) v = static_cast<double>(rng.uniform_int(9) - 4);
    TalkConfig cfg{2, 1, 3, 3, 0.0, false};
    RelativeOffsets<double> rel{Tensor<double>({1, n, 1, 2}, 0.0)};
    auto o = talk_oracle(x, rel, cfg);
    for (std::int64_t i = 0; i < x.numel(); ++i) CHECK(o[i] == x[i]);

    // integer offsets (0.25 steps are exact in binary): direct window sum
    TalkConfig cfg4{2, 1, 4, 4, 0.0, false};
    for (std::int64_t t = 0; t < n; ++t) {
        rel.values.at4(0, t, 0, 0) = 0.25 * rng.uniform_int(5);
        rel.values.at4(0, t, 0, 1) = 0.25 * rng.uniform_int(5);
    }
    o = talk_oracle(x, rel, cfg4);
    for (std::int64_t t = 0; t < n; ++t) {
        const std::int64_t i1 = t + 1;
        std::int64_t a_l = i1 - static_cast<std::int64_t>(std::llround(rel.values.at4(0, t, 0, 0) * 4));
        std::int64_t a_r = i1 + static_cast<std::int64_t>(std::llround(rel.values.at4(0, t, 0, 1) * 4));
        a_l = std::max<std::int64_t>(1, a_l);
        a_r = std::min<std::int64_t>(n, a_r);
        for (std::int64_t c = 0; c < 2; ++c) {
            double want = 0;
            for (std::int64_t j = a_l; j <= a_r; ++j) want += x.at3(0, j - 1, c);
            CHECK(o.at3(0, t, c) == doctest::Approx(want).epsilon(1e-12));
        }
    }
}
