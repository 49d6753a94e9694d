#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "talk/parallel.hpp"
#include "talk/talk_kernel.hpp"
#include "talk/tensor.hpp"

namespace talk {

// ---------------------------------------------------------------------------
// linear
// ---------------------------------------------------------------------------

template <class T>
struct Linear {
    Tensor<T> weight;  // [in, out]
    Tensor<T> bias;    // [out]

    static Linear init(std::int64_t in, std::int64_t out, Rng& rng) {
        const double bound = std::sqrt(1.0 / static_cast<double>(in));
        return Linear{tensor_rand_uniform<T>({in, out}, static_cast<T>(-bound), static_cast<T>(bound), rng),
                      Tensor<T>({out}, T(0))};
    }
    std::int64_t in() const { return weight.extent(0); }
    std::int64_t out() const { return weight.extent(1); }
};

namespace detail {

template <class T>
std::int64_t leading_rows(const Tensor<T>& x, std::int64_t last) {
    if (x.rank() < 2 || x.extent(x.rank() - 1) != last)
        throw shape_error("expected trailing extent " + std::to_string(last) + ", got " +
                          shape_to_string(x.shape()));
    return x.numel() / last;
}

template <class T>
Shape with_last(const Tensor<T>& x, std::int64_t last) {
    Shape s = x.shape();
    s.back() = last;
    return s;
}

}  // namespace detail

template <class T>
Tensor<T> linear_forward(const Tensor<T>& x, const Linear<T>& layer, int workers = 1) {
    const std::int64_t in = layer.in(), out = layer.out();
    const std::int64_t rows = detail::leading_rows(x, in);
    Tensor<T> y(detail::with_last(x, out));
    const T* px = x.data();
    const T* pw = layer.weight.data();
    const T* pb = layer.bias.data();
    T* py = y.data();
    parallel_for(0, rows, workers, [&](std::int64_t m) {
        T* yrow = py + m * out;
        for (std::int64_t o = 0; o < out; ++o) yrow[o] = pb[o];
        const T* xrow = px + m * in;
        for (std::int64_t k = 0; k < in; ++k) {
            const T xv = xrow[k];
            const T* wrow = pw + k * out;
            for (std::int64_t o = 0; o < out; ++o) yrow[o] += xv * wrow[o];
        }
    });
    return y;
}

template <class T>
struct LinearGrads {
    Tensor<T> input, weight, bias;
};

template <class T>
LinearGrads<T> linear_backward(const Tensor<T>& grad_y, const Tensor<T>& x, const Linear<T>& layer,
                               int workers = 1) {
    const std::int64_t in = layer.in(), out = layer.out();
    const std::int64_t rows = detail::leading_rows(x, in);
    if (detail::leading_rows(grad_y, out) != rows) throw shape_error("linear backward row mismatch");
    LinearGrads<T> g{Tensor<T>(x.shape()), Tensor<T>({in, out}), Tensor<T>({out})};
    const T* pgy = grad_y.data();
    const T* px = x.data();
    const T* pw = layer.weight.data();
    parallel_for(0, rows, workers, [&](std::int64_t m) {
        T* gx = g.input.data() + m * in;
        const T* gyrow = pgy + m * out;
        for (std::int64_t k = 0; k < in; ++k) {
            const T* wrow = pw + k * out;
            T acc = T(0);
            for (std::int64_t o = 0; o < out; ++o) acc += gyrow[o] * wrow[o];
            gx[k] = acc;
        }
    });
    // weight gradient: each k-row accumulates over rows in a fixed order
    parallel_for(0, in, workers, [&](std::int64_t k) {
        T* gw = g.weight.data() + k * out;
        for (std::int64_t m = 0; m < rows; ++m) {
            const T xv = px[m * in + k];
            const T* gyrow = pgy + m * out;
            for (std::int64_t o = 0; o < out; ++o) gw[o] += xv * gyrow[o];
        }
    });
    T* gb = g.bias.data();
    for (std::int64_t m = 0; m < rows; ++m) {
        const T* gyrow = pgy + m * out;
        for (std::int64_t o = 0; o < out; ++o) gb[o] += gyrow[o];
    }
    return g;
}

// ---------------------------------------------------------------------------
// gated linear unit: first half of the trailing axis is the value, second
// half the gate; y = a * sigmoid(g)
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> glu_forward(const Tensor<T>& x) {
    const std::int64_t two_d = x.extent(x.rank() - 1);
    if (two_d % 2 != 0) throw shape_error("glu input trailing extent must be even");
    const std::int64_t d = two_d / 2;
    const std::int64_t rows = x.numel() / two_d;
    Tensor<T> y(detail::with_last(x, d));
    const T* px = x.data();
    T* py = y.data();
    for (std::int64_t m = 0; m < rows; ++m)
        for (std::int64_t c = 0; c < d; ++c)
            py[m * d + c] = px[m * two_d + c] * sigmoid_scalar(px[m * two_d + d + c]);
    return y;
}

template <class T>
Tensor<T> glu_backward(const Tensor<T>& grad_y, const Tensor<T>& x) {
    const std::int64_t two_d = x.extent(x.rank() - 1);
    const std::int64_t d = two_d / 2;
    const std::int64_t rows = x.numel() / two_d;
    Tensor<T> gx(x.shape());
    const T* pgy = grad_y.data();
    const T* px = x.data();
    T* pgx = gx.data();
    for (std::int64_t m = 0; m < rows; ++m) {
        for (std::int64_t c = 0; c < d; ++c) {
            const T a = px[m * two_d + c];
            const T s = sigmoid_scalar(px[m * two_d + d + c]);
            const T gy = pgy[m * d + c];
            pgx[m * two_d + c] = gy * s;
            pgx[m * two_d + d + c] = gy * a * s * (T(1) - s);
        }
    }
    return gx;
}

// ---------------------------------------------------------------------------
// swish: y = x * sigmoid(x)
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> swish_forward(const Tensor<T>& x) {
    return map(x, [](T v) { return v * sigmoid_scalar(v); });
}

template <class T>
Tensor<T> swish_backward(const Tensor<T>& grad_y, const Tensor<T>& x) {
    return zip(grad_y, x, [](T gy, T v) {
        const T s = sigmoid_scalar(v);
        return gy * (s + v * s * (T(1) - s));
    });
}

// ---------------------------------------------------------------------------
// layer norm over the trailing axis
// ---------------------------------------------------------------------------

template <class T>
struct LayerNormSaved {
    Tensor<T> xhat;     // normalized input, same shape as x
    std::vector<T> inv; // 1/sqrt(var + eps) per row
};

template <class T>
std::pair<Tensor<T>, LayerNormSaved<T>> layernorm_forward(const Tensor<T>& x, const Tensor<T>& gain,
                                                          const Tensor<T>& bias, T eps = T(1e-5)) {
    const std::int64_t d = gain.numel();
    const std::int64_t rows = detail::leading_rows(x, d);
    LayerNormSaved<T> saved{Tensor<T>(x.shape()), std::vector<T>(static_cast<std::size_t>(rows))};
    Tensor<T> y(x.shape());
    const T* px = x.data();
    const T* pg = gain.data();
    const T* pb = bias.data();
    T* ph = saved.xhat.data();
    T* py = y.data();
    for (std::int64_t m = 0; m < rows; ++m) {
        const T* xrow = px + m * d;
        T mean = T(0);
        for (std::int64_t c = 0; c < d; ++c) mean += xrow[c];
        mean /= static_cast<T>(d);
        T var = T(0);
        for (std::int64_t c = 0; c < d; ++c) {
            const T dv = xrow[c] - mean;
            var += dv * dv;
        }
        var /= static_cast<T>(d);
        const T inv = T(1) / std::sqrt(var + eps);
        saved.inv[static_cast<std::size_t>(m)] = inv;
        for (std::int64_t c = 0; c < d; ++c) {
            const T h = (xrow[c] - mean) * inv;
            ph[m * d + c] = h;
            py[m * d + c] = h * pg[c] + pb[c];
        }
    }
    return {std::move(y), std::move(saved)};
}

template <class T>
struct LayerNormGrads {
    Tensor<T> input, gain, bias;
};

template <class T>
LayerNormGrads<T> layernorm_backward(const Tensor<T>& grad_y, const LayerNormSaved<T>& saved,
                                     const Tensor<T>& gain) {
    const std::int64_t d = gain.numel();
    const std::int64_t rows = detail::leading_rows(grad_y, d);
    LayerNormGrads<T> g{Tensor<T>(grad_y.shape()), Tensor<T>({d}), Tensor<T>({d})};
    const T* pgy = grad_y.data();
    const T* ph = saved.xhat.data();
    const T* pg = gain.data();
    T* pgx = g.input.data();
    for (std::int64_t m = 0; m < rows; ++m) {
        const T* gyrow = pgy + m * d;
        const T* hrow = ph + m * d;
        T sum_g = T(0), sum_gh = T(0);
        for (std::int64_t c = 0; c < d; ++c) {
            const T gc = gyrow[c] * pg[c];
            sum_g += gc;
            sum_gh += gc * hrow[c];
        }
        const T inv = saved.inv[static_cast<std::size_t>(m)];
        const T mean_g = sum_g / static_cast<T>(d);
        const T mean_gh = sum_gh / static_cast<T>(d);
        for (std::int64_t c = 0; c < d; ++c) {
            const T gc = gyrow[c] * pg[c];
            pgx[m * d + c] = inv * (gc - mean_g - hrow[c] * mean_gh);
        }
    }
    T* pgg = g.gain.data();
    T* pgb = g.bias.data();
    for (std::int64_t m = 0; m < rows; ++m)
        for (std::int64_t c = 0; c < d; ++c) {
            pgg[c] += pgy[m * d + c] * ph[m * d + c];
            pgb[c] += pgy[m * d + c];
        }
    return g;
}

// ---------------------------------------------------------------------------
// embedding lookup
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> embedding_forward(const Tensor<std::int32_t>& ids, const Tensor<T>& table) {
    const std::int64_t vocab = table.extent(0), d = table.extent(1);
    Tensor<T> out({ids.extent(0), ids.extent(1), d});
    for (std::int64_t i = 0; i < ids.numel(); ++i) {
        const std::int64_t id = ids[i];
        if (id < 0 || id >= vocab) throw shape_error("token id " + std::to_string(id) + " out of range");
        const T* src = table.data() + id * d;
        T* dst = out.data() + i * d;
        for (std::int64_t c = 0; c < d; ++c) dst[c] = src[c];
    }
    return out;
}

template <class T>
Tensor<T> embedding_backward(const Tensor<T>& grad_y, const Tensor<std::int32_t>& ids,
                             const Tensor<T>& table) {
    const std::int64_t d = table.extent(1);
    Tensor<T> g(table.shape());
    for (std::int64_t i = 0; i < ids.numel(); ++i) {
        const T* src = grad_y.data() + i * d;
        T* dst = g.data() + static_cast<std::int64_t>(ids[i]) * d;
        for (std::int64_t c = 0; c < d; ++c) dst[c] += src[c];
    }
    return g;
}

// ---------------------------------------------------------------------------
// masked softmax cross-entropy over the trailing vocab axis
// ---------------------------------------------------------------------------

template <class T>
struct SoftmaxXentResult {
    T loss = T(0);             // mean over masked positions
    double accuracy = 0.0;     // argmax == target over masked positions
    std::int64_t masked = 0;
    Tensor<T> probs;           // saved for the backward pass
};

template <class T>
SoftmaxXentResult<T> softmax_xent_forward(const Tensor<T>& logits, const Tensor<std::int32_t>& targets,
                                          const Tensor<std::uint8_t>& mask) {
    const std::int64_t vocab = logits.extent(logits.rank() - 1);
    const std::int64_t rows = logits.numel() / vocab;
    if (targets.numel() != rows || mask.numel() != rows)
        throw shape_error("softmax_xent targets/mask must match logits rows");
    SoftmaxXentResult<T> res;
    res.probs = Tensor<T>(logits.shape());
    const T* pl = logits.data();
    T* pp = res.probs.data();
    T loss = T(0);
    std::int64_t correct = 0;
    for (std::int64_t m = 0; m < rows; ++m) {
        const T* row = pl + m * vocab;
        T mx = row[0];
        std::int64_t argmax = 0;
        for (std::int64_t v = 1; v < vocab; ++v)
            if (row[v] > mx) {
                mx = row[v];
                argmax = v;
            }
        T z = T(0);
        T* prow = pp + m * vocab;
        for (std::int64_t v = 0; v < vocab; ++v) {
            prow[v] = std::exp(row[v] - mx);
            z += prow[v];
        }
        for (std::int64_t v = 0; v < vocab; ++v) prow[v] /= z;
        if (mask[m]) {
            const std::int64_t tgt = targets[m];
            loss -= std::log(prow[tgt] + std::numeric_limits<T>::min());
            res.masked += 1;
            if (argmax == tgt) ++correct;
        }
    }
    if (res.masked == 0) throw config_error("loss mask selects no positions");
    res.loss = loss / static_cast<T>(res.masked);
    res.accuracy = static_cast<double>(correct) / static_cast<double>(res.masked);
    return res;
}

template <class T>
Tensor<T> softmax_xent_backward(const SoftmaxXentResult<T>& res, const Tensor<std::int32_t>& targets,
                                const Tensor<std::uint8_t>& mask) {
    const std::int64_t vocab = res.probs.extent(res.probs.rank() - 1);
    const std::int64_t rows = res.probs.numel() / vocab;
    Tensor<T> g(res.probs.shape());
    const T* pp = res.probs.data();
    T* pg = g.data();
    const T inv = T(1) / static_cast<T>(res.masked);
    for (std::int64_t m = 0; m < rows; ++m) {
        if (!mask[m]) continue;
        const T* prow = pp + m * vocab;
        T* grow = pg + m * vocab;
        for (std::int64_t v = 0; v < vocab; ++v) grow[v] = prow[v] * inv;
        grow[targets[m]] -= inv;
    }
    return g;
}

// ---------------------------------------------------------------------------
// offset generator: per head, an affine map from the head's channel slice to
// two logits followed by a sigmoid
// ---------------------------------------------------------------------------

template <class T>
struct OffsetGenerator {
    Tensor<T> weight;  // [H, R, 2]
    Tensor<T> bias;    // [H, 2]

    static OffsetGenerator init(std::int64_t heads, std::int64_t width, Rng& rng) {
        const double bound = std::sqrt(1.0 / static_cast<double>(width));
        // zero bias starts every window at half of its maximum reach
        return OffsetGenerator{
            tensor_rand_uniform<T>({heads, width, 2}, static_cast<T>(-bound), static_cast<T>(bound), rng),
            Tensor<T>({heads, 2}, T(0))};
    }
    std::int64_t heads() const { return weight.extent(0); }
    std::int64_t width() const { return weight.extent(1); }
};

template <class T>
RelativeOffsets<T> offsets_generate(const Tensor<T>& x, const OffsetGenerator<T>& gen) {
    const std::int64_t heads = gen.heads(), width = gen.width();
    if (x.rank() != 3) throw shape_error("offset generator input must be [batch, time, channels]");
    if (x.extent(2) != heads * width)
        throw config_error("offset generator expects " + std::to_string(heads * width) + " channels, got " +
                           std::to_string(x.extent(2)));
    const std::int64_t batch = x.extent(0), n = x.extent(1), d = x.extent(2);
    RelativeOffsets<T> rel{Tensor<T>({batch, n, heads, 2})};
    const T* px = x.data();
    const T* pw = gen.weight.data();
    const T* pb = gen.bias.data();
    T* pr = rel.values.data();
    for (std::int64_t bt = 0; bt < batch * n; ++bt) {
        const T* xrow = px + bt * d;
        for (std::int64_t h = 0; h < heads; ++h) {
            T acc0 = pb[h * 2 + 0], acc1 = pb[h * 2 + 1];
            const T* wh = pw + h * width * 2;
            const T* xh = xrow + h * width;
            for (std::int64_t r = 0; r < width; ++r) {
                acc0 += xh[r] * wh[r * 2 + 0];
                acc1 += xh[r] * wh[r * 2 + 1];
            }
            pr[(bt * heads + h) * 2 + 0] = sigmoid_scalar(acc0);
            pr[(bt * heads + h) * 2 + 1] = sigmoid_scalar(acc1);
        }
    }
    return rel;
}

template <class T>
struct OffsetGeneratorGrads {
    Tensor<T> input, weight, bias;
};

template <class T>
OffsetGeneratorGrads<T> offsets_generate_backward(const Tensor<T>& grad_rel, const Tensor<T>& x,
                                                  const OffsetGenerator<T>& gen,
                                                  const RelativeOffsets<T>& rel) {
    const std::int64_t heads = gen.heads(), width = gen.width();
    const std::int64_t batch = x.extent(0), n = x.extent(1), d = x.extent(2);
    OffsetGeneratorGrads<T> g{Tensor<T>(x.shape()), Tensor<T>({heads, width, 2}), Tensor<T>({heads, 2})};
    const T* pgr = grad_rel.data();
    const T* pr = rel.values.data();
    const T* px = x.data();
    const T* pw = gen.weight.data();
    T* pgx = g.input.data();
    T* pgw = g.weight.data();
    T* pgb = g.bias.data();
    for (std::int64_t bt = 0; bt < batch * n; ++bt) {
        const T* xrow = px + bt * d;
        for (std::int64_t h = 0; h < heads; ++h) {
            const std::int64_t base = (bt * heads + h) * 2;
            T dl[2];
            for (int s = 0; s < 2; ++s) {
                const T sv = pr[base + s];
                dl[s] = pgr[base + s] * sv * (T(1) - sv);
                pgb[h * 2 + s] += dl[s];
            }
            const T* wh = pw + h * width * 2;
            const T* xh = xrow + h * width;
            T* gxh = pgx + bt * d + h * width;
            T* gwh = pgw + h * width * 2;
            for (std::int64_t r = 0; r < width; ++r) {
                gxh[r] += dl[0] * wh[r * 2 + 0] + dl[1] * wh[r * 2 + 1];
                gwh[r * 2 + 0] += dl[0] * xh[r];
                gwh[r * 2 + 1] += dl[1] * xh[r];
            }
        }
    }
    return g;
}

// ---------------------------------------------------------------------------
// offsets dropout: in training each predicted offset is independently set to
// zero with probability p, with no rescaling (a zero offset shrinks the
// window toward the identity token, keeping the [0,1] range invariant).
// p == 0 and eval mode are exact identities and consume no RNG draws.
// ---------------------------------------------------------------------------

template <class T>
struct OffsetsDropoutResult {
    RelativeOffsets<T> values;
    std::vector<std::uint8_t> kept;  // empty when the identity path was taken
};

template <class T>
OffsetsDropoutResult<T> offsets_dropout(const RelativeOffsets<T>& rel, double p, Rng& rng,
                                        bool training) {
    if (p < 0.0 || p >= 1.0) throw config_error("offsets dropout probability must be in [0, 1)");
    if (!training || p == 0.0) return {RelativeOffsets<T>{rel.values}, {}};
    OffsetsDropoutResult<T> out{RelativeOffsets<T>{Tensor<T>(rel.values.shape())},
                                std::vector<std::uint8_t>(static_cast<std::size_t>(rel.values.numel()))};
    const T* src = rel.values.data();
    T* dst = out.values.values.data();
    for (std::int64_t i = 0; i < rel.values.numel(); ++i) {
        const bool drop = rng.bernoulli(p);
        out.kept[static_cast<std::size_t>(i)] = drop ? 0 : 1;
        dst[i] = drop ? T(0) : src[i];
    }
    return out;
}

template <class T>
Tensor<T> offsets_dropout_backward(const Tensor<T>& grad, const std::vector<std::uint8_t>& kept) {
    if (kept.empty()) return grad;
    Tensor<T> g(grad.shape());
    for (std::int64_t i = 0; i < grad.numel(); ++i)
        g[i] = kept[static_cast<std::size_t>(i)] ? grad[i] : T(0);
    return g;
}

// ---------------------------------------------------------------------------
// TaLK block: residual unit around the adaptive kernel plus a Swish FFN.
// Norm placement is switchable:
//   pre:   y1 = x + OutProj(TaLK(GLU(InProj(LN1(x)))));  y = y1 + FFN(LN2(y1))
//   post:  y1 = LN1(x + OutProj(TaLK(GLU(InProj(x)))));  y = LN2(y1 + FFN(y1))
// Offsets are generated from the kernel input (the GLU output).
// ---------------------------------------------------------------------------

enum class NormPlacement { Pre, Post };

template <class T>
struct TalkBlock {
    TalkConfig cfg;
    bool use_glu = true;
    bool causal = false;
    NormPlacement norm_placement = NormPlacement::Pre;
    Linear<T> in_proj;   // d -> 2d with GLU, d -> d without
    OffsetGenerator<T> offset_gen;
    Linear<T> out_proj;  // d -> d
    Linear<T> ffn1, ffn2;
    Tensor<T> ln1_gain, ln1_bias, ln2_gain, ln2_bias;

    static TalkBlock init(const TalkConfig& cfg, std::int64_t ffn_hidden, bool use_glu, bool causal,
                          Rng& rng, NormPlacement placement = NormPlacement::Pre) {
        cfg.validate();
        const std::int64_t d = cfg.channels;
        TalkBlock b{cfg,
                    use_glu,
                    causal,
                    placement,
                    Linear<T>::init(d, use_glu ? 2 * d : d, rng),
                    OffsetGenerator<T>::init(cfg.heads, cfg.head_width(), rng),
                    Linear<T>::init(d, d, rng),
                    Linear<T>::init(d, ffn_hidden, rng),
                    Linear<T>::init(ffn_hidden, d, rng),
                    Tensor<T>({d}, T(1)),
                    Tensor<T>({d}, T(0)),
                    Tensor<T>({d}, T(1)),
                    Tensor<T>({d}, T(0))};
        return b;
    }

    std::vector<std::pair<std::string, Tensor<T>*>> parameters() {
        return {{"ln1.gain", &ln1_gain},         {"ln1.bias", &ln1_bias},
                {"in_proj.weight", &in_proj.weight},   {"in_proj.bias", &in_proj.bias},
                {"offsets.weight", &offset_gen.weight}, {"offsets.bias", &offset_gen.bias},
                {"out_proj.weight", &out_proj.weight}, {"out_proj.bias", &out_proj.bias},
                {"ln2.gain", &ln2_gain},         {"ln2.bias", &ln2_bias},
                {"ffn1.weight", &ffn1.weight},   {"ffn1.bias", &ffn1.bias},
                {"ffn2.weight", &ffn2.weight},   {"ffn2.bias", &ffn2.bias}};
    }
};

template <class T>
struct BlockSaved {
    Tensor<T> proj_in;       // input to in_proj (LN1 output when pre-norm, x when post-norm)
    LayerNormSaved<T> ln1;
    Tensor<T> proj_out;      // in_proj output (GLU input when enabled)
    Tensor<T> conv_in;       // kernel input after optional GLU
    RelativeOffsets<T> rel;  // sigmoid outputs before dropout
    std::vector<std::uint8_t> drop_kept;
    TalkSaved<T> kernel;
    Tensor<T> conv_out;
    LayerNormSaved<T> ln2;
    Tensor<T> ffn_in;        // input to ffn1 (LN2 output when pre-norm, y1 when post-norm)
    Tensor<T> ffn1_out;      // pre-activation
    Tensor<T> swish_out;
};

template <class T>
std::pair<Tensor<T>, BlockSaved<T>> talk_block_forward(const Tensor<T>& x, const TalkBlock<T>& block,
                                                       bool training, Rng& rng, int workers = 1) {
    const bool pre = block.norm_placement == NormPlacement::Pre;
    BlockSaved<T> s{};
    if (pre) {
        auto [ln1_out, ln1_saved] = layernorm_forward(x, block.ln1_gain, block.ln1_bias);
        s.ln1 = std::move(ln1_saved);
        s.proj_in = std::move(ln1_out);
    } else {
        s.proj_in = x;
    }
    s.proj_out = linear_forward(s.proj_in, block.in_proj, workers);
    s.conv_in = block.use_glu ? glu_forward(s.proj_out) : s.proj_out;
    s.rel = offsets_generate(s.conv_in, block.offset_gen);
    auto dropped = offsets_dropout(s.rel, block.cfg.offset_dropout, rng, training);
    s.drop_kept = std::move(dropped.kept);
    auto [conv_out, ksaved] = block.causal
                                  ? talk_forward_causal(s.conv_in, dropped.values, block.cfg, workers)
                                  : talk_forward(s.conv_in, dropped.values, block.cfg, workers);
    s.kernel = std::move(ksaved);
    s.conv_out = std::move(conv_out);
    Tensor<T> o = linear_forward(s.conv_out, block.out_proj, workers);
    Tensor<T> y1;
    if (pre) {
        y1 = add(x, o);
        auto [ln2_out, ln2_saved] = layernorm_forward(y1, block.ln2_gain, block.ln2_bias);
        s.ln2 = std::move(ln2_saved);
        s.ffn_in = std::move(ln2_out);
    } else {
        Tensor<T> summed = add(x, o);
        auto [ln1_out, ln1_saved] = layernorm_forward(summed, block.ln1_gain, block.ln1_bias);
        s.ln1 = std::move(ln1_saved);
        y1 = std::move(ln1_out);
        s.ffn_in = y1;
    }
    s.ffn1_out = linear_forward(s.ffn_in, block.ffn1, workers);
    s.swish_out = swish_forward(s.ffn1_out);
    Tensor<T> f = linear_forward(s.swish_out, block.ffn2, workers);
    if (pre) return {add(y1, f), std::move(s)};
    Tensor<T> summed = add(y1, f);
    auto [y, ln2_saved] = layernorm_forward(summed, block.ln2_gain, block.ln2_bias);
    s.ln2 = std::move(ln2_saved);
    return {std::move(y), std::move(s)};
}

template <class T>
struct BlockGrads {
    Tensor<T> ln1_gain, ln1_bias;
    LinearGrads<T> in_proj;
    OffsetGeneratorGrads<T> offsets;
    LinearGrads<T> out_proj;
    Tensor<T> ln2_gain, ln2_bias;
    LinearGrads<T> ffn1, ffn2;

    std::vector<std::pair<std::string, Tensor<T>*>> parameters() {
        return {{"ln1.gain", &ln1_gain},           {"ln1.bias", &ln1_bias},
                {"in_proj.weight", &in_proj.weight},     {"in_proj.bias", &in_proj.bias},
                {"offsets.weight", &offsets.weight},     {"offsets.bias", &offsets.bias},
                {"out_proj.weight", &out_proj.weight},   {"out_proj.bias", &out_proj.bias},
                {"ln2.gain", &ln2_gain},           {"ln2.bias", &ln2_bias},
                {"ffn1.weight", &ffn1.weight},     {"ffn1.bias", &ffn1.bias},
                {"ffn2.weight", &ffn2.weight},     {"ffn2.bias", &ffn2.bias}};
    }
};

template <class T>
std::pair<Tensor<T>, BlockGrads<T>> talk_block_backward(const Tensor<T>& grad_y, const BlockSaved<T>& s,
                                                        const TalkBlock<T>& block, int workers = 1) {
    const bool pre = block.norm_placement == NormPlacement::Pre;
    BlockGrads<T> g{};

    // FFN sublayer
    Tensor<T> g_ffn_total;  // gradient w.r.t. (ffn input + ffn output) sum point
    if (pre) {
        g_ffn_total = grad_y;
    } else {
        LayerNormGrads<T> ln2g = layernorm_backward(grad_y, s.ln2, block.ln2_gain);
        g.ln2_gain = std::move(ln2g.gain);
        g.ln2_bias = std::move(ln2g.bias);
        g_ffn_total = std::move(ln2g.input);
    }
    g.ffn2 = linear_backward(g_ffn_total, s.swish_out, block.ffn2, workers);
    Tensor<T> g_ffn1out = swish_backward(g.ffn2.input, s.ffn1_out);
    g.ffn1 = linear_backward(g_ffn1out, s.ffn_in, block.ffn1, workers);
    Tensor<T> g_y1;
    if (pre) {
        LayerNormGrads<T> ln2g = layernorm_backward(g.ffn1.input, s.ln2, block.ln2_gain);
        g.ln2_gain = std::move(ln2g.gain);
        g.ln2_bias = std::move(ln2g.bias);
        g_y1 = add(g_ffn_total, ln2g.input);
    } else {
        g_y1 = add(g_ffn_total, g.ffn1.input);
    }

    // convolution sublayer
    Tensor<T> g_conv_total;  // gradient w.r.t. (x + out_proj(conv)) sum point
    if (pre) {
        g_conv_total = g_y1;
    } else {
        LayerNormGrads<T> ln1g = layernorm_backward(g_y1, s.ln1, block.ln1_gain);
        g.ln1_gain = std::move(ln1g.gain);
        g.ln1_bias = std::move(ln1g.bias);
        g_conv_total = std::move(ln1g.input);
    }
    g.out_proj = linear_backward(g_conv_total, s.conv_out, block.out_proj, workers);
    TalkGrads<T> kg = talk_backward(g.out_proj.input, s.kernel, workers);
    Tensor<T> g_rel = offsets_dropout_backward(kg.rel.values, s.drop_kept);
    g.offsets = offsets_generate_backward(g_rel, s.conv_in, block.offset_gen, s.rel);
    Tensor<T> g_conv_in = add(kg.input, g.offsets.input);
    Tensor<T> g_proj = block.use_glu ? glu_backward(g_conv_in, s.proj_out) : std::move(g_conv_in);
    g.in_proj = linear_backward(g_proj, s.proj_in, block.in_proj, workers);
    Tensor<T> grad_x;
    if (pre) {
        LayerNormGrads<T> ln1g = layernorm_backward(g.in_proj.input, s.ln1, block.ln1_gain);
        g.ln1_gain = std::move(ln1g.gain);
        g.ln1_bias = std::move(ln1g.bias);
        grad_x = add(g_conv_total, ln1g.input);
    } else {
        grad_x = add(g_conv_total, g.in_proj.input);
    }
    return {std::move(grad_x), std::move(g)};
}

}  // namespace talk
