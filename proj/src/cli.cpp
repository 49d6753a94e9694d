#include "talk/cli.hpp"

#include <CLI11.hpp>
#include <cstdio>
#include <fstream>
#include <json.hpp>
#include <string>
#include <vector>

#include "talk/bench.hpp"
#include "talk/tensor_io.hpp"
#include "talk/training.hpp"

namespace talk {

namespace {

enum class Dtype { F32, F64 };

Dtype parse_dtype(const std::string& s) {
    if (s == "f32") return Dtype::F32;
    if (s == "f64") return Dtype::F64;
    throw CLI::ValidationError("--dtype must be f32 or f64");
}

void print_bench_rows(const std::vector<BenchRow>& rows) {
    std::printf("%-10s %8s %14s %14s %8s\n", "core", "n", "iters/sec", "peak_bytes", "status");
    for (const auto& r : rows)
        std::printf("%-10s %8lld %14.2f %14zu %8s\n", r.core.c_str(),
                    static_cast<long long>(r.n), r.iters_per_sec, r.peak_bytes, r.status.c_str());
}

// memory decrease relative to attention at the same n, Table-5 style
void print_mem_ratios(const std::vector<BenchRow>& rows) {
    for (const auto& r : rows)
        if (r.mem_vs_attention > 0)
            std::printf("mem decrease vs attention: %-8s n=%-6lld %.2fx\n", r.core.c_str(),
                        static_cast<long long>(r.n), r.mem_vs_attention);
}

int run_bench_cmd(const BenchSpec& base, const std::vector<std::string>& cores, Dtype dtype,
                  const std::string& out_csv) {
    std::vector<BenchRow> rows;
    for (const std::string& name : cores) {
        BenchSpec spec = base;
        if (name == "talk")
            spec.core = BenchCoreKind::TalkConv;
        else if (name == "attention")
            spec.core = BenchCoreKind::SelfAttention;
        else if (name == "dynconv")
            spec.core = BenchCoreKind::DynamicConv;
        else
            throw std::runtime_error("unknown core: " + name);
        auto part = dtype == Dtype::F32 ? run_bench<float>(spec) : run_bench<double>(spec);
        rows.insert(rows.end(), part.begin(), part.end());
    }
    fill_memory_ratios(rows);
    print_bench_rows(rows);
    print_mem_ratios(rows);
    if (!allocstats::hooks_active())
        std::fprintf(stderr, "note: allocator hooks not linked; peak_bytes are zero\n");
    if (!out_csv.empty()) write_bench_csv(rows, out_csv);
    return 0;
}

std::vector<std::int64_t> reach_list(const nlohmann::json& j, const char* key, std::int64_t layers,
                                     std::int64_t fallback) {
    if (!j.contains(key)) return std::vector<std::int64_t>(static_cast<std::size_t>(layers), fallback);
    const auto& v = j.at(key);
    if (v.is_number_integer())
        return std::vector<std::int64_t>(static_cast<std::size_t>(layers), v.get<std::int64_t>());
    return v.get<std::vector<std::int64_t>>();
}

TrainConfig config_from_json(const nlohmann::json& j) {
    TrainConfig cfg;
    const std::string task = j.value("task", std::string("copy"));
    if (task == "copy")
        cfg.task = TaskKind::Copy;
    else if (task == "reverse")
        cfg.task = TaskKind::Reverse;
    else if (task == "char_lm")
        cfg.task = TaskKind::CharLm;
    else
        throw config_error("unknown task: " + task);
    cfg.layers = j.value("layers", cfg.layers);
    cfg.d = j.value("d", cfg.d);
    cfg.d_ff = j.value("d_ff", cfg.d_ff);
    cfg.heads = j.value("heads", cfg.heads);
    cfg.left_max = reach_list(j, "l_max", cfg.layers, 16);
    cfg.right_max = reach_list(j, "r_max", cfg.layers, 16);
    cfg.p_drop = j.value("p_drop", cfg.p_drop);
    cfg.normalize = j.value("normalize", cfg.normalize);
    cfg.use_glu = j.value("use_glu", cfg.use_glu);
    const std::string placement = j.value("norm_placement", std::string("pre"));
    if (placement == "post")
        cfg.norm_placement = NormPlacement::Post;
    else if (placement != "pre")
        throw config_error("norm_placement must be \"pre\" or \"post\"");
    if (j.contains("causal")) cfg.causal = j.at("causal").get<bool>() ? 1 : 0;
    cfg.vocab = j.value("vocab", cfg.vocab);
    cfg.seq_len = j.value("seq_len", cfg.seq_len);
    cfg.batch_size = j.value("batch_size", cfg.batch_size);
    cfg.lr_peak = j.value("lr_peak", cfg.lr_peak);
    cfg.lr_floor = j.value("lr_floor", cfg.lr_floor);
    cfg.warmup_steps = j.value("warmup_steps", cfg.warmup_steps);
    cfg.total_steps = j.value("total_steps", cfg.total_steps);
    cfg.adam.beta1 = j.value("beta1", cfg.adam.beta1);
    cfg.adam.beta2 = j.value("beta2", cfg.adam.beta2);
    cfg.adam.eps = j.value("eps", cfg.adam.eps);
    cfg.seed = j.value("seed", cfg.seed);
    cfg.log_every = j.value("log_every", cfg.log_every);
    cfg.checkpoint_every = j.value("checkpoint_every", cfg.checkpoint_every);
    cfg.checkpoint_path = j.value("checkpoint", cfg.checkpoint_path);
    cfg.resume_from = j.value("resume_from", cfg.resume_from);
    cfg.report_path = j.value("report", cfg.report_path);
    cfg.text_path = j.value("text", cfg.text_path);
    cfg.workers = j.value("workers", cfg.workers);
    cfg.stop_at_accuracy = j.value("stop_at_accuracy", cfg.stop_at_accuracy);
    return cfg;
}

int run_train_cmd(const std::string& config_path, Dtype dtype_flag, bool dtype_given,
                  const std::string& out_override, std::uint64_t seed_override, bool seed_given) {
    std::ifstream f(config_path);
    if (!f) throw std::runtime_error("cannot open config: " + config_path);
    nlohmann::json j = nlohmann::json::parse(f);
    TrainConfig cfg = config_from_json(j);
    if (!out_override.empty()) cfg.report_path = out_override;
    if (seed_given) cfg.seed = seed_override;
    Dtype dtype = dtype_given ? dtype_flag : parse_dtype(j.value("dtype", std::string("f32")));

    TrainReport report =
        dtype == Dtype::F32 ? train_loop<float>(cfg) : train_loop<double>(cfg);
    std::printf("steps=%lld final_loss=%.6f final_acc=%.4f best_acc=%.4f diverged=%d skipped=%lld\n",
                static_cast<long long>(report.steps_run), report.final_loss, report.final_accuracy,
                report.best_accuracy, report.diverged ? 1 : 0,
                static_cast<long long>(report.adam_skipped));
    return 0;
}

int run_oracle_diff(std::uint64_t seed, int trials, Dtype dtype) {
    Rng rng(seed);
    double worst = 0;
    for (int trial = 0; trial < trials; ++trial) {
        const std::int64_t heads_pool[] = {1, 2, 8};
        const std::int64_t heads = heads_pool[rng.uniform_int(3)];
        const std::int64_t batch = 1 + rng.uniform_int(4);
        const std::int64_t n = 1 + rng.uniform_int(64);
        const std::int64_t d = heads * (1 + rng.uniform_int(32 / heads));
        TalkConfig cfg{d, heads, rng.uniform_int(8), rng.uniform_int(8), 0.0, rng.bernoulli(0.5)};
        if (cfg.left_max + cfg.right_max == 0) cfg.left_max = 1;

        const auto run = [&]<class T>() {
            auto x = tensor_rand_uniform<T>({batch, n, d}, T(-1), T(1), rng);
            RelativeOffsets<T> rel{tensor_rand_uniform<T>({batch, n, heads, 2}, T(0), T(1), rng)};
            for (std::int64_t i = 0; i < rel.values.numel(); ++i)
                if (rng.bernoulli(0.2)) rel.values[i] = static_cast<T>(0.5 * rng.uniform_int(3));
            auto [o, saved] = talk_forward(x, rel, cfg);
            auto want = talk_oracle(x, rel, cfg);
            const double scale = gradcheck::max_abs(want);
            for (std::int64_t i = 0; i < o.numel(); ++i)
                worst = std::max(worst, gradcheck::scale_rel_err(static_cast<double>(o[i]),
                                                                 static_cast<double>(want[i]), scale));
        };
        if (dtype == Dtype::F32)
            run.template operator()<float>();
        else
            run.template operator()<double>();
    }
    const double tol = dtype == Dtype::F32 ? 1e-4 : 1e-6;
    std::printf("oracle-diff: trials=%d worst_rel_err=%.3e tolerance=%.0e\n", trials, worst, tol);
    return worst < tol ? 0 : 1;
}

}  // namespace

int cli_main(int argc, const char* const* argv) {
    CLI::App app{"TaLK convolution benchmark and training driver"};
    app.require_subcommand(1);

    std::string dtype_str = "f32";

    // bench
    auto* bench = app.add_subcommand("bench", "throughput/memory scaling across cores");
    BenchSpec spec;
    std::vector<std::string> cores{"talk", "attention", "dynconv"};
    std::string bench_core = "all", bench_out;
    std::vector<std::int64_t> bench_n;
    std::int64_t mem_limit_mb = 0;
    bench->add_option("--core", bench_core, "talk|attention|dynconv|all");
    bench->add_option("--n", bench_n, "sequence lengths (repeatable)");
    bench->add_option("--batch", spec.batch, "batch size");
    bench->add_option("--dim", spec.dim, "channels");
    bench->add_option("--heads", spec.heads, "heads");
    bench->add_option("--k", spec.dynconv_k, "dynamic conv kernel size");
    bench->add_option("--lmax", spec.left_max, "talk left reach");
    bench->add_option("--rmax", spec.right_max, "talk right reach");
    bench->add_option("--iters", spec.iterations, "timed iterations");
    bench->add_option("--warmup", spec.warmup, "warmup iterations");
    bench->add_option("--min-millis", spec.min_millis, "minimum measured time per row");
    bench->add_option("--workers", spec.workers, "worker threads inside the core");
    bench->add_option("--seed", spec.seed, "rng seed");
    bench->add_option("--mem-limit-mb", mem_limit_mb, "attention OOM threshold (default: 80% of RAM)");
    bench->add_option("--out", bench_out, "CSV output path");
    bench->add_option("--dtype", dtype_str, "f32|f64")->capture_default_str();

    // gradcheck
    auto* gc = app.add_subcommand("gradcheck", "finite-difference checks for all backward passes");
    std::uint64_t gc_seed = 1;
    int gc_trials = 20;
    gc->add_option("--seed", gc_seed, "rng seed");
    gc->add_option("--trials", gc_trials, "random kernel instances");

    // train
    auto* train = app.add_subcommand("train", "run a training config");
    std::string train_config, train_out;
    std::uint64_t train_seed = 0;
    auto* train_cfg_opt = train->add_option("--config", train_config, "JSON config path");
    train_cfg_opt->required();
    train->add_option("--out", train_out, "report CSV override");
    auto* train_seed_opt = train->add_option("--seed", train_seed, "seed override");
    auto* train_dtype_opt = train->add_option("--dtype", dtype_str, "f32|f64");

    // oracle-diff
    auto* od = app.add_subcommand("oracle-diff", "compare talk_forward with the brute-force oracle");
    std::uint64_t od_seed = 1;
    int od_trials = 100;
    od->add_option("--seed", od_seed, "rng seed");
    od->add_option("--trials", od_trials, "random instances");
    od->add_option("--dtype", dtype_str, "f32|f64")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (bench->parsed()) {
            if (!bench_n.empty()) spec.lengths = bench_n;
            if (mem_limit_mb > 0) spec.mem_limit_bytes = static_cast<std::size_t>(mem_limit_mb) << 20;
            const std::vector<std::string> selected =
                bench_core == "all" ? cores : std::vector<std::string>{bench_core};
            return run_bench_cmd(spec, selected, parse_dtype(dtype_str), bench_out);
        }
        if (gc->parsed()) {
            GradcheckReport report = run_gradcheck(gc_seed, gc_trials);
            for (const auto& e : report.entries)
                std::printf("%-24s worst_rel_err=%.3e tolerance=%.0e %s\n", e.name.c_str(), e.worst,
                            e.tolerance, e.worst <= e.tolerance ? "ok" : "FAIL");
            std::printf("gradcheck: %s\n", report.pass ? "PASS" : "FAIL");
            return report.pass ? 0 : 1;
        }
        if (train->parsed())
            return run_train_cmd(train_config, parse_dtype(dtype_str), train_dtype_opt->count() > 0,
                                 train_out, train_seed, train_seed_opt->count() > 0);
        if (od->parsed()) return run_oracle_diff(od_seed, od_trials, parse_dtype(dtype_str));
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}

}  // namespace talk
