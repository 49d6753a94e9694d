#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <new>
#include <string>
#include <vector>

#include "talk/parallel.hpp"
#include "talk/talk_kernel.hpp"
#include "talk/tensor.hpp"

namespace talk {

enum class BenchCoreKind { TalkConv, SelfAttention, DynamicConv };

inline std::string core_name(BenchCoreKind k) {
    switch (k) {
        case BenchCoreKind::TalkConv: return "talk";
        case BenchCoreKind::SelfAttention: return "attention";
        case BenchCoreKind::DynamicConv: return "dynconv";
    }
    return "?";
}

namespace oracle_detail {

// Prefix sum of x[b][0..k) for one channel, computed by a fresh direct loop
// with Kahan compensation so the reference does not share the production
// path's rounding behavior.
template <class T>
T prefix(const Tensor<T>& x, std::int64_t b, std::int64_t k, std::int64_t c) {
    T acc = T(0), comp = T(0);
    for (std::int64_t t = 0; t < k; ++t) {
        const T y = x.at3(b, t, c) - comp;
        const T s = acc + y;
        comp = (s - acc) - y;
        acc = s;
    }
    return acc;
}

}  // namespace oracle_detail

// Brute-force reference for the adaptive summation kernel: every boundary sum
// is recomputed from scratch per position. Semantics match talk_forward;
// intended for small instances (n <= 512 by contract).
template <class T>
Tensor<T> talk_oracle(const Tensor<T>& x, const RelativeOffsets<T>& rel, const TalkConfig& cfg) {
    cfg.validate();
    const std::int64_t batch = x.extent(0), n = x.extent(1), d = x.extent(2);
    const std::int64_t heads = cfg.heads, width = cfg.head_width();
    Tensor<T> out({batch, n, d});
    for (std::int64_t b = 0; b < batch; ++b) {
        for (std::int64_t t = 0; t < n; ++t) {
            const T i1 = static_cast<T>(t + 1);
            for (std::int64_t h = 0; h < heads; ++h) {
                const T rel_l = rel.values.at4(b, t, h, 0);
                const T rel_r = rel.values.at4(b, t, h, 1);
                T a_l = i1 - rel_l * static_cast<T>(cfg.left_max);
                T a_r = i1 + rel_r * static_cast<T>(cfg.right_max);
                if (a_l < T(1)) a_l = T(1);
                if (a_l > i1) a_l = i1;
                if (a_r > static_cast<T>(n)) a_r = static_cast<T>(n);
                if (a_r < i1) a_r = i1;
                const std::int64_t fl_l = static_cast<std::int64_t>(std::floor(a_l));
                const std::int64_t fl_r = static_cast<std::int64_t>(std::floor(a_r));
                const T gl = a_l - static_cast<T>(fl_l);
                const T gr = a_r - static_cast<T>(fl_r);
                for (std::int64_t c = h * width; c < (h + 1) * width; ++c) {
                    const T s_ll = oracle_detail::prefix(x, b, fl_l - 1, c);
                    const T s_lh = oracle_detail::prefix(x, b, fl_l, c);
                    const T s_rl = oracle_detail::prefix(x, b, fl_r, c);
                    const T s_rh = oracle_detail::prefix(x, b, std::min(fl_r + 1, n), c);
                    const T left = (gl == T(0)) ? s_ll : (T(1) - gl) * s_ll + gl * s_lh;
                    const T right = (gr == T(0)) ? s_rl : (T(1) - gr) * s_rl + gr * s_rh;
                    T v = right - left;
                    if (cfg.normalize) v *= static_cast<T>(cfg.norm_factor());
                    out.at3(b, t, c) = v;
                }
            }
        }
    }
    return out;
}

// Scaled dot-product self-attention core with Q = K = V = x, evaluated per
// head over its channel slice. Materializes the full [B, H, n, n] score
// tensor like a batched implementation would; throws std::bad_alloc if that
// would exceed max_bytes.
template <class T>
Tensor<T> attention_core(const Tensor<T>& x, std::int64_t heads, int workers = 1,
                         std::size_t max_bytes = std::numeric_limits<std::size_t>::max()) {
    if (x.rank() != 3) throw shape_error("attention input must be [batch, time, channels]");
    const std::int64_t batch = x.extent(0), n = x.extent(1), d = x.extent(2);
    if (heads < 1 || d % heads != 0) throw config_error("heads must divide channels");
    const std::int64_t width = d / heads;

    const std::size_t score_bytes =
        static_cast<std::size_t>(batch * heads * n * n) * sizeof(T);
    if (score_bytes > max_bytes) throw std::bad_alloc();
    Tensor<T> scores({batch, heads, n, n});
    Tensor<T> out({batch, n, d});
    const T inv_sqrt = static_cast<T>(1.0 / std::sqrt(static_cast<double>(width)));
    const T* px = x.data();
    T* ps = scores.data();
    T* po = out.data();

    parallel_for(0, batch * heads, workers, [&](std::int64_t bh) {
        const std::int64_t b = bh / heads, h = bh % heads;
        const std::int64_t c0 = h * width;
        T* s = ps + bh * n * n;
        for (std::int64_t i = 0; i < n; ++i) {
            const T* xi = px + (b * n + i) * d + c0;
            T* row = s + i * n;
            for (std::int64_t j = 0; j < n; ++j) {
                const T* xj = px + (b * n + j) * d + c0;
                T dot = T(0);
                for (std::int64_t c = 0; c < width; ++c) dot += xi[c] * xj[c];
                row[j] = dot * inv_sqrt;
            }
            T mx = row[0];
            for (std::int64_t j = 1; j < n; ++j) mx = std::max(mx, row[j]);
            T z = T(0);
            for (std::int64_t j = 0; j < n; ++j) {
                row[j] = std::exp(row[j] - mx);
                z += row[j];
            }
            const T inv_z = T(1) / z;
            for (std::int64_t j = 0; j < n; ++j) row[j] *= inv_z;
            T* orow = po + (b * n + i) * d + c0;
            for (std::int64_t c = 0; c < width; ++c) orow[c] = T(0);
            for (std::int64_t j = 0; j < n; ++j) {
                const T w = row[j];
                const T* xj = px + (b * n + j) * d + c0;
                for (std::int64_t c = 0; c < width; ++c) orow[c] += w * xj[c];
            }
        }
    });
    return out;
}

// Depthwise dynamic convolution core: per position a softmax-normalized
// kernel of fixed odd size k (from kernel_logits [B, n, H, k]) is applied
// over a centered, zero-padded window of the head's channels.
template <class T>
Tensor<T> dynamic_conv_core(const Tensor<T>& x, const Tensor<T>& kernel_logits, std::int64_t heads,
                            int workers = 1) {
    if (x.rank() != 3) throw shape_error("dynamic conv input must be [batch, time, channels]");
    const std::int64_t batch = x.extent(0), n = x.extent(1), d = x.extent(2);
    if (heads < 1 || d % heads != 0) throw config_error("heads must divide channels");
    const Shape& ls = kernel_logits.shape();
    if (ls.size() != 4 || ls[0] != batch || ls[1] != n || ls[2] != heads)
        throw shape_error("kernel logits must be [batch, time, heads, k]");
    const std::int64_t k = ls[3];
    if (k % 2 == 0) throw config_error("dynamic conv kernel size must be odd");
    const std::int64_t width = d / heads, half = k / 2;

    Tensor<T> out({batch, n, d});
    const T* px = x.data();
    const T* pl = kernel_logits.data();
    T* po = out.data();
    parallel_for(0, batch * heads, workers, [&](std::int64_t bh) {
        const std::int64_t b = bh / heads, h = bh % heads;
        const std::int64_t c0 = h * width;
        std::vector<T> w(static_cast<std::size_t>(k));
        for (std::int64_t i = 0; i < n; ++i) {
            const T* logits = pl + ((b * n + i) * heads + h) * k;
            T mx = logits[0];
            for (std::int64_t j = 1; j < k; ++j) mx = std::max(mx, logits[j]);
            T z = T(0);
            for (std::int64_t j = 0; j < k; ++j) {
                w[static_cast<std::size_t>(j)] = std::exp(logits[j] - mx);
                z += w[static_cast<std::size_t>(j)];
            }
            for (std::int64_t j = 0; j < k; ++j) w[static_cast<std::size_t>(j)] /= z;
            T* orow = po + (b * n + i) * d + c0;
            for (std::int64_t c = 0; c < width; ++c) orow[c] = T(0);
            for (std::int64_t j = 0; j < k; ++j) {
                const std::int64_t src = i + j - half;
                if (src < 0 || src >= n) continue;  // zero padding
                const T wj = w[static_cast<std::size_t>(j)];
                const T* xrow = px + (b * n + src) * d + c0;
                for (std::int64_t c = 0; c < width; ++c) orow[c] += wj * xrow[c];
            }
        }
    });
    return out;
}

}  // namespace talk
