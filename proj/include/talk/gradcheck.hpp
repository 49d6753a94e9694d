#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "talk/layers.hpp"
#include "talk/talk_kernel.hpp"
#include "talk/tensor.hpp"

// Central finite-difference checks for every hand-written backward pass.
// All checks run in f64 with the probe step h = 1e-5.
namespace talk::gradcheck {

constexpr double kStep = 1e-5;

inline double rel_err(double a, double b) {
    return std::abs(a - b) / std::max(std::abs(a) + std::abs(b), 1e-6);
}

// Error relative to the larger of the pair and the instance's output scale.
// Plain elementwise relative error is unbounded where a window sum cancels
// to ~0, so value comparisons normalize by the scale the values live at.
inline double scale_rel_err(double a, double b, double scale) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), scale, 1e-12});
}

template <class T>
double max_abs(const Tensor<T>& t) {
    double m = 0;
    for (const T& v : t) m = std::max(m, std::abs(static_cast<double>(v)));
    return m;
}

// Worst relative error between an analytic gradient tensor and central
// differences of `loss` as each slot of `param` is perturbed.
inline double check_tensor(Tensor<double>& param, const Tensor<double>& analytic,
                           const std::function<double()>& loss, double h = kStep) {
    double worst = 0;
    for (std::int64_t i = 0; i < param.numel(); ++i) {
        const double orig = param[i];
        param[i] = orig + h;
        const double up = loss();
        param[i] = orig - h;
        const double down = loss();
        param[i] = orig;
        const double fd = (up - down) / (2 * h);
        worst = std::max(worst, rel_err(analytic[i], fd));
    }
    return worst;
}

// Fixed random weights turn a tensor-valued op into a scalar loss with O(1)
// magnitude so relative comparisons stay meaningful.
inline Tensor<double> loss_weights(const Shape& shape, Rng& rng) {
    Tensor<double> w(shape);
    for (auto& v : w) v = rng.uniform(0.5, 1.5) * (rng.bernoulli(0.5) ? 1.0 : -1.0);
    return w;
}

inline double weighted(const Tensor<double>& y, const Tensor<double>& w) {
    double acc = 0;
    for (std::int64_t i = 0; i < y.numel(); ++i) acc += y[i] * w[i];
    return acc;
}

struct CheckResult {
    std::string name;
    double worst = 0;
};

// --- kernel ---------------------------------------------------------------

// Offsets are drawn away from 0/1 so no probe crosses an interpolation-cell
// edge or a clamp boundary; those kink points get dedicated exact tests.
inline CheckResult check_kernel(Rng& rng, int64_t batch, int64_t n, int64_t d, int64_t heads,
                                bool normalize) {
    TalkConfig cfg{d, heads, 1 + rng.uniform_int(5), 1 + rng.uniform_int(5), 0.0, normalize};
    auto x = tensor_rand_uniform<double>({batch, n, d}, -1.0, 1.0, rng);
    RelativeOffsets<double> rel{tensor_rand_uniform<double>({batch, n, heads, 2}, 0.05, 0.95, rng)};
    const Tensor<double> w = loss_weights({batch, n, d}, rng);

    auto [y, saved] = talk_forward(x, rel, cfg);
    (void)y;
    auto grads = talk_backward(w, saved);

    double worst = 0;
    const auto loss_x = [&] { return weighted(talk_forward(x, rel, cfg).first, w); };
    worst = std::max(worst, check_tensor(x, grads.input, loss_x));
    const auto loss_rel = [&] { return weighted(talk_forward(x, rel, cfg).first, w); };
    // skip probes whose +-h window could cross a cell edge
    for (std::int64_t i = 0; i < rel.values.numel(); ++i) {
        const double orig = rel.values[i];
        rel.values[i] = orig + kStep;
        const double up = loss_rel();
        rel.values[i] = orig - kStep;
        const double down = loss_rel();
        rel.values[i] = orig;
        const double fd = (up - down) / (2 * kStep);
        worst = std::max(worst, rel_err(grads.rel.values[i], fd));
    }
    return {"talk_kernel", worst};
}

// --- layers ----------------------------------------------------------------

inline CheckResult check_linear(Rng& rng) {
    Linear<double> layer = Linear<double>::init(5, 4, rng);
    auto x = tensor_rand_uniform<double>({2, 3, 5}, -1.0, 1.0, rng);
    const Tensor<double> w = loss_weights({2, 3, 4}, rng);
    auto g = linear_backward(w, x, layer);
    const auto loss = [&] { return weighted(linear_forward(x, layer), w); };
    double worst = check_tensor(x, g.input, loss);
    worst = std::max(worst, check_tensor(layer.weight, g.weight, loss));
    worst = std::max(worst, check_tensor(layer.bias, g.bias, loss));
    return {"linear", worst};
}

inline CheckResult check_glu(Rng& rng) {
    auto x = tensor_rand_uniform<double>({2, 3, 8}, -2.0, 2.0, rng);
    const Tensor<double> w = loss_weights({2, 3, 4}, rng);
    auto g = glu_backward(w, x);
    const auto loss = [&] { return weighted(glu_forward(x), w); };
    return {"glu", check_tensor(x, g, loss)};
}

inline CheckResult check_swish(Rng& rng) {
    auto x = tensor_rand_uniform<double>({3, 7}, -3.0, 3.0, rng);
    const Tensor<double> w = loss_weights({3, 7}, rng);
    auto g = swish_backward(w, x);
    const auto loss = [&] { return weighted(swish_forward(x), w); };
    return {"swish", check_tensor(x, g, loss)};
}

inline CheckResult check_layernorm(Rng& rng) {
    auto x = tensor_rand_uniform<double>({2, 3, 6}, -1.0, 1.0, rng);
    auto gain = tensor_rand_uniform<double>({6}, 0.5, 1.5, rng);
    auto bias = tensor_rand_uniform<double>({6}, -0.5, 0.5, rng);
    const Tensor<double> w = loss_weights({2, 3, 6}, rng);
    auto [y, saved] = layernorm_forward(x, gain, bias);
    (void)y;
    auto g = layernorm_backward(w, saved, gain);
    const auto loss = [&] { return weighted(layernorm_forward(x, gain, bias).first, w); };
    double worst = check_tensor(x, g.input, loss);
    worst = std::max(worst, check_tensor(gain, g.gain, loss));
    worst = std::max(worst, check_tensor(bias, g.bias, loss));
    return {"layernorm", worst};
}

inline CheckResult check_embedding(Rng& rng) {
    const std::int64_t vocab = 7, d = 4;
    auto table = tensor_rand_uniform<double>({vocab, d}, -1.0, 1.0, rng);
    Tensor<std::int32_t> ids({2, 3});
    for (auto& v : ids) v = static_cast<std::int32_t>(rng.uniform_int(vocab));
    const Tensor<double> w = loss_weights({2, 3, d}, rng);
    auto g = embedding_backward(w, ids, table);
    const auto loss = [&] { return weighted(embedding_forward(ids, table), w); };
    return {"embedding", check_tensor(table, g, loss)};
}

inline CheckResult check_softmax_xent(Rng& rng) {
    const std::int64_t vocab = 9;
    auto logits = tensor_rand_uniform<double>({2, 4, vocab}, -2.0, 2.0, rng);
    Tensor<std::int32_t> targets({2, 4});
    for (auto& v : targets) v = static_cast<std::int32_t>(rng.uniform_int(vocab));
    Tensor<std::uint8_t> mask({2, 4}, 1);
    mask[0] = 0;  // exercise the masked path
    auto res = softmax_xent_forward(logits, targets, mask);
    auto g = softmax_xent_backward(res, targets, mask);
    const auto loss = [&] {
        return static_cast<double>(softmax_xent_forward(logits, targets, mask).loss);
    };
    return {"softmax_xent", check_tensor(logits, g, loss)};
}

inline CheckResult check_offset_generator(Rng& rng) {
    const std::int64_t heads = 2, width = 3;
    OffsetGenerator<double> gen = OffsetGenerator<double>::init(heads, width, rng);
    auto x = tensor_rand_uniform<double>({2, 3, heads * width}, -1.0, 1.0, rng);
    const Tensor<double> w = loss_weights({2, 3, heads, 2}, rng);
    auto rel = offsets_generate(x, gen);
    auto g = offsets_generate_backward(w, x, gen, rel);
    const auto loss = [&] { return weighted(offsets_generate(x, gen).values, w); };
    double worst = check_tensor(x, g.input, loss);
    worst = std::max(worst, check_tensor(gen.weight, g.weight, loss));
    worst = std::max(worst, check_tensor(gen.bias, g.bias, loss));
    return {"offset_generator", worst};
}

// Full block in eval mode (dropout off keeps the loss deterministic).
inline CheckResult check_block(Rng& rng, bool use_glu, bool causal,
                               NormPlacement placement = NormPlacement::Pre) {
    const std::int64_t d = 8, n = 6, batch = 2;
    TalkConfig cfg{d, 2, 2, causal ? 0 : 2, 0.0, true};
    TalkBlock<double> block = TalkBlock<double>::init(cfg, 12, use_glu, causal, rng, placement);
    auto x = tensor_rand_uniform<double>({batch, n, d}, -1.0, 1.0, rng);
    const Tensor<double> w = loss_weights({batch, n, d}, rng);
    Rng fwd_rng(0);
    auto [y, saved] = talk_block_forward(x, block, false, fwd_rng, 1);
    (void)y;
    auto [gx, grads] = talk_block_backward(w, saved, block, 1);
    const auto loss = [&] {
        Rng r(0);
        return weighted(talk_block_forward(x, block, false, r, 1).first, w);
    };
    double worst = check_tensor(x, gx, loss);
    auto params = block.parameters();
    auto gparams = grads.parameters();
    for (std::size_t i = 0; i < params.size(); ++i)
        worst = std::max(worst, check_tensor(*params[i].second, *gparams[i].second, loss));
    return {std::string("talk_block") + (use_glu ? "" : "_noglu") + (causal ? "_causal" : "") +
                (placement == NormPlacement::Post ? "_postnorm" : ""),
            worst};
}

}  // namespace talk::gradcheck
