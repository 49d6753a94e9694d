#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <utility>

#include "talk/parallel.hpp"
#include "talk/scan.hpp"
#include "talk/tensor.hpp"

namespace talk {

// Layer geometry for the adaptive summation kernel. Channels are split into
// `heads` contiguous groups of channels/heads members; each group shares one
// pair of offsets per time-step.
struct TalkConfig {
    std::int64_t channels = 0;   // d
    std::int64_t heads = 1;      // H
    std::int64_t left_max = 0;   // max tokens reachable to the left
    std::int64_t right_max = 0;  // max tokens reachable to the right
    double offset_dropout = 0.0;
    bool normalize = true;

    std::int64_t head_width() const { return channels / heads; }
    double norm_factor() const { return 1.0 / static_cast<double>(left_max + right_max + 1); }

    void validate() const {
        if (channels < 1) throw config_error("channels must be >= 1");
        if (heads < 1) throw config_error("heads must be >= 1");
        if (channels % heads != 0)
            throw config_error("heads (" + std::to_string(heads) + ") must divide channels (" +
                               std::to_string(channels) + ")");
        if (left_max < 0 || right_max < 0) throw config_error("reach limits must be >= 0");
        if (offset_dropout < 0.0 || offset_dropout >= 1.0)
            throw config_error("offset dropout must be in [0, 1)");
        if (normalize && left_max + right_max < 1)
            throw config_error("normalized layer with zero reach is a pure identity; use normalize=false");
    }
};

// Sigmoid-bounded per-time-step, per-head offsets. values: [B, n, H, 2] with
// the last axis ordered {left, right}, every entry in [0, 1].
template <class T>
struct RelativeOffsets {
    Tensor<T> values;

    static constexpr std::int64_t kLeft = 0;
    static constexpr std::int64_t kRight = 1;
};

// Real-valued window boundaries after clamping to 1 <= a_l <= i <= a_r <= n
// (1-based time). The clamp flags mark entries whose raw value sat at or
// outside the legal range; offset gradients are zero there.
template <class T>
struct AbsoluteOffsets {
    Tensor<T> left, right;  // [B, n, H]
    std::vector<std::uint8_t> left_clamped, right_clamped;
};

namespace detail {

// Floor/fraction split with the interpolation cell fixed to [floor(a), floor(a)+1],
// so frac stays in [0, 1) and the upper-entry weight is 0 at integer a. Non-finite
// a yields a safe index and a propagating NaN fraction.
template <class T>
inline void split_offset(T a, std::int64_t safe_floor, std::int64_t& fl, T& frac) {
    if (!(a == a)) {
        fl = safe_floor;
        frac = std::numeric_limits<T>::quiet_NaN();
        return;
    }
    const T f = std::floor(a);
    fl = static_cast<std::int64_t>(f);
    frac = a - f;
}

template <class T>
inline std::int64_t floor_index(T a, std::int64_t safe_floor) {
    if (!(a == a)) return safe_floor;
    return static_cast<std::int64_t>(std::floor(a));
}

template <class T>
void check_kernel_inputs(const Tensor<T>& x, const RelativeOffsets<T>& rel, const TalkConfig& cfg) {
    cfg.validate();
    if (x.rank() != 3) throw shape_error("kernel input must be [batch, time, channels]");
    if (x.extent(2) != cfg.channels)
        throw shape_error("input has " + std::to_string(x.extent(2)) + " channels, config expects " +
                          std::to_string(cfg.channels));
    const Shape want{x.extent(0), x.extent(1), cfg.heads, 2};
    if (rel.values.shape() != want)
        throw shape_error("relative offsets must be " + shape_to_string(want) + ", got " +
                          shape_to_string(rel.values.shape()));
}

}  // namespace detail

// a_l = clamp(i - rel_l * l_max, 1, i), a_r = clamp(i + rel_r * r_max, i, n),
// with i 1-based. A raw value at or beyond the legal boundary marks the entry
// clamped (the window cannot grow in that direction, so its offset gradient
// is identically zero there).
template <class T>
AbsoluteOffsets<T> offsets_to_absolute(const RelativeOffsets<T>& rel, const TalkConfig& cfg,
                                       std::int64_t n) {
    const std::int64_t batch = rel.values.extent(0);
    const std::int64_t heads = rel.values.extent(2);
    AbsoluteOffsets<T> out{Tensor<T>({batch, n, heads}), Tensor<T>({batch, n, heads}),
                           std::vector<std::uint8_t>(static_cast<std::size_t>(batch * n * heads)),
                           std::vector<std::uint8_t>(static_cast<std::size_t>(batch * n * heads))};
    const T* rv = rel.values.data();
    T* al = out.left.data();
    T* ar = out.right.data();
    for (std::int64_t idx = 0; idx < batch * n * heads; ++idx) {
        const std::int64_t t = (idx / heads) % n;
        const T i1 = static_cast<T>(t + 1);
        const T raw_l = i1 - rv[idx * 2 + 0] * static_cast<T>(cfg.left_max);
        const T raw_r = i1 + rv[idx * 2 + 1] * static_cast<T>(cfg.right_max);

        bool cl = false, cr = false;
        T a_l = raw_l, a_r = raw_r;
        if (raw_l <= T(1)) {
            a_l = T(1);
            cl = true;
        } else if (raw_l > i1) {
            a_l = i1;
            cl = true;
        }
        if (raw_r >= static_cast<T>(n)) {
            a_r = static_cast<T>(n);
            cr = true;
        } else if (raw_r < i1) {
            a_r = i1;
            cr = true;
        }
        al[idx] = a_l;
        ar[idx] = a_r;
        out.left_clamped[static_cast<std::size_t>(idx)] = cl ? 1 : 0;
        out.right_clamped[static_cast<std::size_t>(idx)] = cr ? 1 : 0;
    }
    return out;
}

template <class T>
struct TalkSaved {
    SummedAreaTable<T> table;        // built over all d channels once
    AbsoluteOffsets<T> offsets;
    Tensor<T> frac_left, frac_right; // [B, n, H], each in [0, 1)
    TalkConfig cfg;                  // as executed (causal mode stores right_max = 0)
};

// Adaptive summation-kernel forward: o_i = S(a_r) - S(a_l - 1) with linear
// interpolation at fractional boundaries, per head group, optionally scaled
// by 1/(l_max + r_max + 1). Cost is O(B*n*d) independent of the reach limits.
// Non-finite inputs propagate into the output.
template <class T>
std::pair<Tensor<T>, TalkSaved<T>> talk_forward(const Tensor<T>& x, const RelativeOffsets<T>& rel,
                                                const TalkConfig& cfg, int workers = 1) {
    detail::check_kernel_inputs(x, rel, cfg);
    const std::int64_t batch = x.extent(0), n = x.extent(1), d = x.extent(2);
    const std::int64_t heads = cfg.heads, width = cfg.head_width();

    TalkSaved<T> saved{sat_build_sequential(x, workers), offsets_to_absolute(rel, cfg, n),
                       Tensor<T>({batch, n, heads}), Tensor<T>({batch, n, heads}), cfg};
    Tensor<T> out({batch, n, d});

    const T norm = static_cast<T>(cfg.norm_factor());
    const bool normalize = cfg.normalize;
    const T* table = saved.table.values.data();
    const T* al = saved.offsets.left.data();
    const T* ar = saved.offsets.right.data();
    T* fl_frac = saved.frac_left.data();
    T* fr_frac = saved.frac_right.data();
    T* po = out.data();

    parallel_for(0, batch * heads, workers, [&](std::int64_t bh) {
        const std::int64_t b = bh / heads, h = bh % heads;
        const std::int64_t c0 = h * width;
        for (std::int64_t t = 0; t < n; ++t) {
            const std::int64_t idx = (b * n + t) * heads + h;
            std::int64_t lo_l, lo_r;
            T gl, gr;
            detail::split_offset(al[idx], 1, lo_l, gl);
            detail::split_offset(ar[idx], t + 1, lo_r, gr);
            fl_frac[idx] = gl;
            fr_frac[idx] = gr;

            const T* row_ll = table + (b * (n + 1) + lo_l - 1) * d;  // S_{floor(a_l)-1}
            const T* row_lh = table + (b * (n + 1) + lo_l) * d;      // S_{floor(a_l)}
            const T* row_rl = table + (b * (n + 1) + lo_r) * d;      // S_{floor(a_r)}
            const T* row_rh = table + (b * (n + 1) + std::min(lo_r + 1, n)) * d;
            T* orow = po + (b * n + t) * d;
            if (gl == T(0) && gr == T(0)) {
                for (std::int64_t c = c0; c < c0 + width; ++c) {
                    T v = row_rl[c] - row_ll[c];
                    if (normalize) v *= norm;
                    orow[c] = v;
                }
            } else {
                for (std::int64_t c = c0; c < c0 + width; ++c) {
                    const T left = (gl == T(0)) ? row_ll[c] : (T(1) - gl) * row_ll[c] + gl * row_lh[c];
                    const T right = (gr == T(0)) ? row_rl[c] : (T(1) - gr) * row_rl[c] + gr * row_rh[c];
                    T v = right - left;
                    if (normalize) v *= norm;
                    orow[c] = v;
                }
            }
        }
    });
    return {std::move(out), std::move(saved)};
}

template <class T>
struct TalkGrads {
    Tensor<T> input;          // [B, n, d]
    RelativeOffsets<T> rel;   // [B, n, H, 2]
};

// Reverse pass. Offset gradients follow the interpolation-cell difference
// (reach * (S_hi - S_lo) summed over the head's channels) and are zeroed
// where clamping was active. Input gradients scatter the four interpolation
// weights per (i, h) into a table-shaped buffer; one suffix sum per column
// then yields dL/dx, keeping the whole pass O(B*n*d).
template <class T>
TalkGrads<T> talk_backward(const Tensor<T>& grad_out, const TalkSaved<T>& saved, int workers = 1) {
    const TalkConfig& cfg = saved.cfg;
    const std::int64_t batch = saved.table.batch(), n = saved.table.length(), d = saved.table.channels();
    if (grad_out.shape() != Shape{batch, n, d})
        throw shape_error("grad_out shape " + shape_to_string(grad_out.shape()) +
                          " does not match forward state");
    const std::int64_t heads = cfg.heads, width = cfg.head_width();

    Tensor<T> table_grad({batch, n + 1, d});  // zero-initialized scatter buffer
    TalkGrads<T> grads{Tensor<T>({batch, n, d}), RelativeOffsets<T>{Tensor<T>({batch, n, heads, 2})}};

    const T norm = static_cast<T>(cfg.norm_factor());
    const bool normalize = cfg.normalize;
    const T* table = saved.table.values.data();
    const T* al = saved.offsets.left.data();
    const T* ar = saved.offsets.right.data();
    const T* fl_frac = saved.frac_left.data();
    const T* fr_frac = saved.frac_right.data();
    const T* go = grad_out.data();
    T* tg = table_grad.data();
    T* gr_rel = grads.rel.values.data();

    // Each (b, h) owns a disjoint channel slice of the scatter buffer, so the
    // parallel loop is race-free and the per-column accumulation order is fixed.
    parallel_for(0, batch * heads, workers, [&](std::int64_t bh) {
        const std::int64_t b = bh / heads, h = bh % heads;
        const std::int64_t c0 = h * width;
        for (std::int64_t t = 0; t < n; ++t) {
            const std::int64_t idx = (b * n + t) * heads + h;
            const std::int64_t lo_l = detail::floor_index(al[idx], 1);
            const std::int64_t lo_r = detail::floor_index(ar[idx], t + 1);
            const T gl = fl_frac[idx];
            const T gr = fr_frac[idx];
            const std::int64_t hi_r = std::min(lo_r + 1, n);

            const T* row_ll = table + (b * (n + 1) + lo_l - 1) * d;
            const T* row_lh = table + (b * (n + 1) + lo_l) * d;
            const T* row_rl = table + (b * (n + 1) + lo_r) * d;
            const T* row_rh = table + (b * (n + 1) + hi_r) * d;
            T* buf_ll = tg + (b * (n + 1) + lo_l - 1) * d;
            T* buf_lh = tg + (b * (n + 1) + lo_l) * d;
            T* buf_rl = tg + (b * (n + 1) + lo_r) * d;
            T* buf_rh = tg + (b * (n + 1) + hi_r) * d;
            const T* grow = go + (b * n + t) * d;

            T acc_l = T(0), acc_r = T(0);
            for (std::int64_t c = c0; c < c0 + width; ++c) {
                T u = grow[c];
                if (normalize) u *= norm;
                acc_l += u * (row_lh[c] - row_ll[c]);
                acc_r += u * (row_rh[c] - row_rl[c]);
                if (gr == T(0)) {
                    buf_rl[c] += u;
                } else {
                    buf_rl[c] += (T(1) - gr) * u;
                    buf_rh[c] += gr * u;
                }
                if (gl == T(0)) {
                    buf_ll[c] -= u;
                } else {
                    buf_ll[c] -= (T(1) - gl) * u;
                    buf_lh[c] -= gl * u;
                }
            }
            const bool cl = saved.offsets.left_clamped[static_cast<std::size_t>(idx)] != 0;
            const bool cr = saved.offsets.right_clamped[static_cast<std::size_t>(idx)] != 0;
            gr_rel[idx * 2 + 0] = cl ? T(0) : static_cast<T>(cfg.left_max) * acc_l;
            gr_rel[idx * 2 + 1] = cr ? T(0) : static_cast<T>(cfg.right_max) * acc_r;
        }
    });

    grads.input = sat_suffix_sum(table_grad, workers);
    return grads;
}

// Decoder mode: identical to talk_forward with the right reach forced to 0,
// so o_i depends only on x_1..x_i.
template <class T>
std::pair<Tensor<T>, TalkSaved<T>> talk_forward_causal(const Tensor<T>& x, const RelativeOffsets<T>& rel,
                                                       TalkConfig cfg, int workers = 1) {
    cfg.right_max = 0;
    return talk_forward(x, rel, cfg, workers);
}

}  // namespace talk
