#pragma once

#include <bit>
#include <cstdint>
#include <vector>

#include "talk/parallel.hpp"
#include "talk/tensor.hpp"

namespace talk {

// Per-sequence inclusive prefix sums with a leading zero row:
// values[b][0][c] == 0 and values[b][k][c] == values[b][k-1][c] + x[b][k-1][c].
template <class T>
struct SummedAreaTable {
    Tensor<T> values;  // [B, n+1, d]

    std::int64_t batch() const { return values.extent(0); }
    std::int64_t length() const { return values.extent(1) - 1; }
    std::int64_t channels() const { return values.extent(2); }
};

struct ScanStats {
    int phases = 0;  // number of dependent tree levels executed (0 for the sequential path)
};

namespace detail {

template <class T>
void check_sequence(const Tensor<T>& x) {
    if (x.rank() != 3) throw shape_error("expected [batch, time, channels], got " + shape_to_string(x.shape()));
}

}  // namespace detail

// Left-to-right recurrence, one pass per (batch, channel) column. Columns are
// independent, so worker count never changes the summation order.
template <class T>
SummedAreaTable<T> sat_build_sequential(const Tensor<T>& x, int workers = 1) {
    detail::check_sequence(x);
    const std::int64_t batch = x.extent(0), n = x.extent(1), d = x.extent(2);
    SummedAreaTable<T> table{Tensor<T>({batch, n + 1, d})};
    T* out = table.values.data();
    const T* in = x.data();
    parallel_for(0, batch * d, workers, [&](std::int64_t col) {
        const std::int64_t b = col / d, c = col % d;
        T acc = T(0);
        out[(b * (n + 1)) * d + c] = T(0);
        for (std::int64_t t = 0; t < n; ++t) {
            acc += in[(b * n + t) * d + c];
            out[(b * (n + 1) + t + 1) * d + c] = acc;
        }
    });
    return table;
}

// Work-efficient two-pass (up-sweep/down-sweep) scan over the time axis.
// Exactly 2*ceil(log2(n)) dependent phases; within a phase all updates are
// independent. Results may differ from the sequential build by float
// reassociation only. workers <= 1 delegates to the sequential build
// (bit-exact with it, phases reported as 0).
template <class T>
SummedAreaTable<T> sat_build_parallel(const Tensor<T>& x, int workers, ScanStats* stats = nullptr) {
    detail::check_sequence(x);
    if (workers < 1) throw config_error("workers must be >= 1");
    if (workers == 1) {
        if (stats) stats->phases = 0;
        return sat_build_sequential(x);
    }
    const std::int64_t batch = x.extent(0), n = x.extent(1), d = x.extent(2);
    const std::int64_t p2 =
        static_cast<std::int64_t>(std::bit_ceil(static_cast<std::uint64_t>(n)));
    const std::int64_t cols = batch * d;

    // Column-major over time so each column's tree walks contiguous memory.
    std::vector<T> scratch(static_cast<std::size_t>(cols * p2), T(0));
    std::vector<T> totals(static_cast<std::size_t>(cols));
    const T* in = x.data();
    parallel_for(0, cols, workers, [&](std::int64_t col) {
        const std::int64_t b = col / d, c = col % d;
        T* s = scratch.data() + col * p2;
        for (std::int64_t t = 0; t < n; ++t) s[t] = in[(b * n + t) * d + c];
    });

    int phases = 0;
    for (std::int64_t stride = 2; stride <= p2; stride <<= 1) {
        parallel_for(0, cols, workers, [&](std::int64_t col) {
            T* s = scratch.data() + col * p2;
            for (std::int64_t i = stride - 1; i < p2; i += stride) s[i] += s[i - stride / 2];
        });
        ++phases;
    }
    parallel_for(0, cols, workers, [&](std::int64_t col) {
        T* s = scratch.data() + col * p2;
        totals[static_cast<std::size_t>(col)] = s[p2 - 1];
        s[p2 - 1] = T(0);
    });
    for (std::int64_t stride = p2; stride >= 2; stride >>= 1) {
        parallel_for(0, cols, workers, [&](std::int64_t col) {
            T* s = scratch.data() + col * p2;
            for (std::int64_t i = stride - 1; i < p2; i += stride) {
                const T tmp = s[i - stride / 2];
                s[i - stride / 2] = s[i];
                s[i] += tmp;
            }
        });
        ++phases;
    }
    if (stats) stats->phases = phases;

    // After the down-sweep, scratch[t] holds the exclusive prefix S_t; the
    // saved root supplies S_n when n is a power of two.
    SummedAreaTable<T> table{Tensor<T>({batch, n + 1, d})};
    T* out = table.values.data();
    parallel_for(0, cols, workers, [&](std::int64_t col) {
        const std::int64_t b = col / d, c = col % d;
        const T* s = scratch.data() + col * p2;
        for (std::int64_t k = 0; k < n; ++k) out[(b * (n + 1) + k) * d + c] = s[k];
        out[(b * (n + 1) + n) * d + c] = (n == p2) ? totals[static_cast<std::size_t>(col)] : s[n];
    });
    return table;
}

// out[b][j][c] = sum of g[b][k][c] for k in [j+1, n]. Since every table entry
// S_k is a prefix of the inputs, the gradient w.r.t. x_j is exactly this
// suffix over table-entry gradients.
template <class T>
Tensor<T> sat_suffix_sum(const Tensor<T>& g, int workers = 1) {
    detail::check_sequence(g);
    if (g.extent(1) < 2) throw shape_error("suffix sum needs a [B, n+1, d] table with n >= 1");
    const std::int64_t batch = g.extent(0), rows = g.extent(1), d = g.extent(2);
    const std::int64_t n = rows - 1;
    Tensor<T> out({batch, n, d});
    const T* in = g.data();
    T* po = out.data();
    parallel_for(0, batch * d, workers, [&](std::int64_t col) {
        const std::int64_t b = col / d, c = col % d;
        T acc = T(0);
        for (std::int64_t j = n - 1; j >= 0; --j) {
            acc += in[(b * rows + j + 1) * d + c];
            po[(b * n + j) * d + c] = acc;
        }
    });
    return out;
}

}  // namespace talk
