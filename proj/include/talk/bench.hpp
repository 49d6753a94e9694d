#pragma once

#include <chrono>
#include <cstdint>
#include <fstream>
#include <new>
#include <string>
#include <vector>

#include "talk/alloc_stats.hpp"
#include "talk/baselines.hpp"
#include "talk/gradcheck.hpp"
#include "talk/talk_kernel.hpp"
#include "talk/tensor.hpp"

#if defined(__unix__) || defined(__APPLE__)
#include <unistd.h>
#endif

namespace talk {

inline std::size_t default_mem_limit() {
#if defined(_SC_PHYS_PAGES) && defined(_SC_PAGESIZE)
    const long pages = sysconf(_SC_PHYS_PAGES);
    const long page = sysconf(_SC_PAGESIZE);
    if (pages > 0 && page > 0)
        return static_cast<std::size_t>(pages) * static_cast<std::size_t>(page) / 10 * 8;
#endif
    return std::size_t(4) << 30;
}

struct BenchSpec {
    BenchCoreKind core = BenchCoreKind::TalkConv;
    std::vector<std::int64_t> lengths{10, 100, 1000};
    std::int64_t batch = 10;
    std::int64_t dim = 1024;
    std::int64_t heads = 16;
    std::int64_t dynconv_k = 31;
    std::int64_t left_max = 15;
    std::int64_t right_max = 15;
    std::int64_t iterations = 100;
    std::int64_t warmup = 10;
    std::int64_t min_millis = 0;  // keep iterating until this much time was measured
    int workers = 1;
    std::uint64_t seed = 1;
    std::size_t mem_limit_bytes = default_mem_limit();

    void validate() const {
        if (iterations < 1) throw config_error("iterations must be >= 1");
        for (auto n : lengths)
            if (n < 1) throw config_error("sequence lengths must be >= 1");
    }
};

struct BenchRow {
    std::string core;
    std::int64_t n = 0;
    double iters_per_sec = 0.0;    // 0 on OOM
    std::size_t peak_bytes = 0;    // working memory of the timed op
    std::string status = "ok";     // "ok" or "OOM"
    double mem_vs_attention = 0.0; // attention peak / this peak at the same n; 0 if unknown
};

// Fills mem_vs_attention wherever an "attention" row with the same n exists.
inline void fill_memory_ratios(std::vector<BenchRow>& rows) {
    for (auto& r : rows) {
        if (r.core == "attention" || r.status != "ok" || r.peak_bytes == 0) continue;
        for (const auto& a : rows)
            if (a.core == "attention" && a.n == r.n && a.status == "ok" && a.peak_bytes > 0)
                r.mem_vs_attention =
                    static_cast<double>(a.peak_bytes) / static_cast<double>(r.peak_bytes);
    }
}

inline void write_bench_csv(const std::vector<BenchRow>& rows, const std::string& path) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw std::runtime_error("cannot open bench csv for writing: " + path);
    f << "core,n,iters_per_sec,peak_bytes,status\n";
    for (const auto& r : rows)
        f << r.core << "," << r.n << "," << r.iters_per_sec << "," << r.peak_bytes << "," << r.status
          << "\n";
    if (!f) throw std::runtime_error("bench csv write failed: " + path);
}

namespace detail {

// Consumes one output element per run so the timed call cannot be elided.
inline volatile double g_bench_sink = 0.0;

template <class Fn>
BenchRow time_core(const std::string& name, std::int64_t n, const BenchSpec& spec, Fn&& run) {
    BenchRow row{name, n};
    using clock = std::chrono::steady_clock;
    try {
        for (std::int64_t i = 0; i < spec.warmup; ++i) g_bench_sink = run();
        allocstats::reset_peak();
        const std::size_t baseline = allocstats::current();
        std::int64_t iters = 0;
        const auto start = clock::now();
        double elapsed = 0.0;
        do {
            for (std::int64_t i = 0; i < spec.iterations; ++i) g_bench_sink = run();
            iters += spec.iterations;
            elapsed = std::chrono::duration<double>(clock::now() - start).count();
        } while (elapsed * 1000.0 < static_cast<double>(spec.min_millis));
        row.iters_per_sec = static_cast<double>(iters) / elapsed;
        const std::size_t peak = allocstats::peak();
        row.peak_bytes = peak > baseline ? peak - baseline : 0;
    } catch (const std::bad_alloc&) {
        row.status = "OOM";
        row.iters_per_sec = 0.0;
        row.peak_bytes = 0;
    }
    return row;
}

}  // namespace detail

// Times one encoding of a [B, n, d] batch per iteration, mirroring how the
// cores are compared: TaLK gets precomputed relative offsets, dynamic conv a
// pregenerated kernel-logit tensor, attention computes scores from the input.
// Input allocation happens outside the timed region.
template <class T>
std::vector<BenchRow> run_bench(const BenchSpec& spec) {
    spec.validate();
    std::vector<BenchRow> rows;
    for (const std::int64_t n : spec.lengths) {
        Rng rng(spec.seed);
        auto x = tensor_rand_uniform<T>({spec.batch, n, spec.dim}, T(-1), T(1), rng);
        switch (spec.core) {
            case BenchCoreKind::TalkConv: {
                TalkConfig cfg{spec.dim, spec.heads, spec.left_max, spec.right_max, 0.0, true};
                RelativeOffsets<T> rel{
                    tensor_rand_uniform<T>({spec.batch, n, spec.heads, 2}, T(0), T(1), rng)};
                rows.push_back(detail::time_core("talk", n, spec, [&] {
                    auto [o, saved] = talk_forward(x, rel, cfg, spec.workers);
                    return static_cast<double>(o[0]);
                }));
                break;
            }
            case BenchCoreKind::SelfAttention: {
                const std::size_t score_bytes =
                    static_cast<std::size_t>(spec.batch * spec.heads) *
                    static_cast<std::size_t>(n) * static_cast<std::size_t>(n) * sizeof(T);
                if (score_bytes > spec.mem_limit_bytes) {
                    rows.push_back({"attention", n, 0.0, 0, "OOM"});
                    break;
                }
                rows.push_back(detail::time_core("attention", n, spec, [&] {
                    auto o = attention_core(x, spec.heads, spec.workers, spec.mem_limit_bytes);
                    return static_cast<double>(o[0]);
                }));
                break;
            }
            case BenchCoreKind::DynamicConv: {
                auto logits = tensor_rand_uniform<T>({spec.batch, n, spec.heads, spec.dynconv_k},
                                                     T(-1), T(1), rng);
                rows.push_back(detail::time_core("dynconv", n, spec, [&] {
                    auto o = dynamic_conv_core(x, logits, spec.heads, spec.workers);
                    return static_cast<double>(o[0]);
                }));
                break;
            }
        }
    }
    return rows;
}

// ---------------------------------------------------------------------------
// gradient-check runner
// ---------------------------------------------------------------------------

struct GradcheckReport {
    struct Entry {
        std::string name;
        double worst = 0.0;
        double tolerance = 0.0;
    };
    std::vector<Entry> entries;
    bool pass = true;

    void add(const gradcheck::CheckResult& r, double tolerance) {
        for (auto& e : entries)
            if (e.name == r.name) {
                e.worst = std::max(e.worst, r.worst);
                pass = pass && e.worst <= e.tolerance;
                return;
            }
        entries.push_back({r.name, r.worst, tolerance});
        pass = pass && r.worst <= tolerance;
    }
};

constexpr double kKernelGradTolerance = 1e-6;
constexpr double kBlockGradTolerance = 1e-5;

// Random-shape finite-difference sweep across the kernel and every layer.
// `corrupt_for_test` injects an error into one kernel backward so negative
// tests can confirm the harness actually fails.
inline GradcheckReport run_gradcheck(std::uint64_t seed, int trials, bool corrupt_for_test = false) {
    if (trials < 1) throw config_error("trials must be >= 1");
    Rng rng(seed);
    GradcheckReport report;
    for (int i = 0; i < trials; ++i) {
        const std::int64_t heads_pool[] = {1, 2, 3};
        const std::int64_t heads = heads_pool[rng.uniform_int(3)];
        report.add(gradcheck::check_kernel(rng, 1 + rng.uniform_int(2), 1 + rng.uniform_int(6),
                                           heads * (1 + rng.uniform_int(3)), heads,
                                           rng.bernoulli(0.5)),
                   kKernelGradTolerance);
    }
    const int layer_trials = std::max(1, trials / 5);
    for (int i = 0; i < layer_trials; ++i) {
        report.add(gradcheck::check_linear(rng), kKernelGradTolerance);
        report.add(gradcheck::check_glu(rng), kKernelGradTolerance);
        report.add(gradcheck::check_swish(rng), kKernelGradTolerance);
        report.add(gradcheck::check_layernorm(rng), kKernelGradTolerance);
        report.add(gradcheck::check_embedding(rng), kKernelGradTolerance);
        report.add(gradcheck::check_softmax_xent(rng), kKernelGradTolerance);
        report.add(gradcheck::check_offset_generator(rng), kKernelGradTolerance);
    }
    report.add(gradcheck::check_block(rng, true, false), kBlockGradTolerance);
    report.add(gradcheck::check_block(rng, true, true), kBlockGradTolerance);
    report.add(gradcheck::check_block(rng, false, true), kBlockGradTolerance);
    report.add(gradcheck::check_block(rng, true, false, NormPlacement::Post), kBlockGradTolerance);

    if (corrupt_for_test) {
        // compare a deliberately damaged analytic gradient against FD
        TalkConfig cfg{2, 1, 2, 2, 0.0, false};
        auto x = tensor_rand_uniform<double>({1, 5, 2}, -1.0, 1.0, rng);
        RelativeOffsets<double> rel{tensor_rand_uniform<double>({1, 5, 1, 2}, 0.1, 0.9, rng)};
        const Tensor<double> w = gradcheck::loss_weights({1, 5, 2}, rng);
        auto [y, saved] = talk_forward(x, rel, cfg);
        (void)y;
        auto grads = talk_backward(w, saved);
        grads.input[0] += 0.25;
        const auto loss = [&] { return gradcheck::weighted(talk_forward(x, rel, cfg).first, w); };
        const double worst = gradcheck::check_tensor(x, grads.input, loss);
        report.add({"talk_kernel_corrupted", worst}, kKernelGradTolerance);
    }
    return report;
}

}  // namespace talk
