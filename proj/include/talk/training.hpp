#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "talk/layers.hpp"
#include "talk/tensor.hpp"
#include "talk/tensor_io.hpp"

namespace talk {

// ---------------------------------------------------------------------------
// learning-rate schedule: linear warmup from lr_floor to lr_peak, then cosine
// decay back to lr_floor at total_steps
// ---------------------------------------------------------------------------

struct LrSchedule {
    double peak = 1e-3;
    double floor = 1e-7;
    std::int64_t warmup = 10000;
    std::int64_t total = 100000;

    double at(std::int64_t step) const {
        if (step <= warmup)
            return floor + (peak - floor) * static_cast<double>(step) / static_cast<double>(warmup);
        const double progress =
            static_cast<double>(step - warmup) / static_cast<double>(total - warmup);
        return floor + 0.5 * (peak - floor) * (1.0 + std::cos(progress * 3.14159265358979323846));
    }
};

// ---------------------------------------------------------------------------
// Adam with bias correction; a non-finite gradient skips the whole update and
// bumps the skip counter so divergence stays observable instead of crashing
// ---------------------------------------------------------------------------

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

template <class T>
struct AdamState {
    std::vector<Tensor<T>> m, v;
    std::int64_t t = 0;
    std::int64_t skipped = 0;

    template <class Params>
    static AdamState init(const Params& params) {
        AdamState s;
        for (const auto& [name, tensor] : params) {
            (void)name;
            s.m.emplace_back(tensor->shape());
            s.v.emplace_back(tensor->shape());
        }
        return s;
    }
};

template <class T>
bool adam_step(const std::vector<Tensor<T>*>& params, const std::vector<const Tensor<T>*>& grads,
               AdamState<T>& state, double lr, const AdamConfig& cfg = {}) {
    if (params.size() != grads.size() || params.size() != state.m.size())
        throw shape_error("adam: parameter/gradient/state count mismatch");
    for (const auto* g : grads)
        if (!g->all_finite()) {
            ++state.skipped;
            return false;
        }
    state.t += 1;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
    for (std::size_t p = 0; p < params.size(); ++p) {
        Tensor<T>& param = *params[p];
        const Tensor<T>& grad = *grads[p];
        if (!param.same_shape(grad)) throw shape_error("adam: gradient shape mismatch");
        Tensor<T>& m = state.m[p];
        Tensor<T>& v = state.v[p];
        const T b1 = static_cast<T>(cfg.beta1), b2 = static_cast<T>(cfg.beta2);
        for (std::int64_t i = 0; i < param.numel(); ++i) {
            const T g = grad[i];
            m[i] = b1 * m[i] + (T(1) - b1) * g;
            v[i] = b2 * v[i] + (T(1) - b2) * g * g;
            const double mhat = static_cast<double>(m[i]) / bc1;
            const double vhat = static_cast<double>(v[i]) / bc2;
            param[i] -= static_cast<T>(lr * mhat / (std::sqrt(vhat) + cfg.eps));
        }
    }
    return true;
}

// ---------------------------------------------------------------------------
// synthetic tasks
// ---------------------------------------------------------------------------

struct TaskBatch {
    Tensor<std::int32_t> inputs;   // [B, n]
    Tensor<std::int32_t> targets;  // [B, n]
    Tensor<std::uint8_t> mask;     // [B, n], 1 where the loss counts
};

// First half carries random payload tokens (ids >= 1), second half is blank;
// the target repeats the payload at distance n/2. Solvable only with left
// reach >= n/2.
inline TaskBatch make_copy_batch(Rng& rng, std::int64_t batch, std::int64_t n, std::int64_t vocab) {
    if (vocab < 4) throw config_error("copy task needs vocab >= 4");
    if (n < 2 || n % 2 != 0) throw config_error("copy task needs even n >= 2");
    const std::int64_t half = n / 2;
    TaskBatch tb{Tensor<std::int32_t>({batch, n}), Tensor<std::int32_t>({batch, n}),
                 Tensor<std::uint8_t>({batch, n})};
    for (std::int64_t b = 0; b < batch; ++b) {
        for (std::int64_t t = 0; t < half; ++t) {
            const auto tok = static_cast<std::int32_t>(1 + rng.uniform_int(vocab - 1));
            tb.inputs.at2(b, t) = tok;
            tb.targets.at2(b, t) = 0;
            tb.mask.at2(b, t) = 0;
        }
        for (std::int64_t t = half; t < n; ++t) {
            tb.inputs.at2(b, t) = 0;  // blank
            tb.targets.at2(b, t) = tb.inputs.at2(b, t - half);
            tb.mask.at2(b, t) = 1;
        }
    }
    return tb;
}

// Bidirectional probe: target is the input sequence reversed.
inline TaskBatch make_reverse_batch(Rng& rng, std::int64_t batch, std::int64_t n, std::int64_t vocab) {
    if (vocab < 4) throw config_error("reverse task needs vocab >= 4");
    TaskBatch tb{Tensor<std::int32_t>({batch, n}), Tensor<std::int32_t>({batch, n}),
                 Tensor<std::uint8_t>({batch, n}, 1)};
    for (std::int64_t b = 0; b < batch; ++b) {
        for (std::int64_t t = 0; t < n; ++t)
            tb.inputs.at2(b, t) = static_cast<std::int32_t>(1 + rng.uniform_int(vocab - 1));
        for (std::int64_t t = 0; t < n; ++t) tb.targets.at2(b, t) = tb.inputs.at2(b, n - 1 - t);
    }
    return tb;
}

// Byte-level language modeling over random crops of a text buffer.
inline TaskBatch make_char_lm_batch(Rng& rng, const std::vector<std::uint8_t>& text,
                                    std::int64_t batch, std::int64_t n) {
    if (static_cast<std::int64_t>(text.size()) < n + 1)
        throw config_error("char_lm text shorter than seq_len + 1");
    TaskBatch tb{Tensor<std::int32_t>({batch, n}), Tensor<std::int32_t>({batch, n}),
                 Tensor<std::uint8_t>({batch, n}, 1)};
    for (std::int64_t b = 0; b < batch; ++b) {
        const std::int64_t off = rng.uniform_int(static_cast<std::int64_t>(text.size()) - n);
        for (std::int64_t t = 0; t < n; ++t) {
            tb.inputs.at2(b, t) = text[static_cast<std::size_t>(off + t)];
            tb.targets.at2(b, t) = text[static_cast<std::size_t>(off + t + 1)];
        }
    }
    return tb;
}

// ---------------------------------------------------------------------------
// model: token + position embeddings, a stack of TaLK blocks, a closing
// layer norm and a vocab projection
// ---------------------------------------------------------------------------

struct ModelConfig {
    std::int64_t vocab = 16;
    std::int64_t d = 64;
    std::int64_t d_ff = 256;
    std::int64_t heads = 4;
    std::vector<std::int64_t> left_max;   // one entry per block
    std::vector<std::int64_t> right_max;  // ignored in causal mode
    double p_drop = 0.0;
    bool normalize = true;
    bool use_glu = true;
    bool causal = true;
    NormPlacement norm_placement = NormPlacement::Pre;
    std::int64_t max_len = 64;

    void validate() const {
        if (left_max.empty() || left_max.size() != right_max.size())
            throw config_error("per-block reach lists must be non-empty and equally long");
        if (vocab < 2) throw config_error("vocab must be >= 2");
    }
};

template <class T>
struct TalkModel {
    ModelConfig cfg;
    Tensor<T> tok_emb;  // [vocab, d]
    Tensor<T> pos_emb;  // [max_len, d]
    std::vector<TalkBlock<T>> blocks;
    Tensor<T> final_gain, final_bias;
    Linear<T> head;

    static TalkModel init(const ModelConfig& cfg, Rng& rng) {
        cfg.validate();
        const double bound = std::sqrt(1.0 / static_cast<double>(cfg.d));
        TalkModel m{cfg,
                    tensor_rand_uniform<T>({cfg.vocab, cfg.d}, static_cast<T>(-bound),
                                           static_cast<T>(bound), rng),
                    tensor_rand_uniform<T>({cfg.max_len, cfg.d}, static_cast<T>(-bound),
                                           static_cast<T>(bound), rng),
                    {},
                    Tensor<T>({cfg.d}, T(1)),
                    Tensor<T>({cfg.d}, T(0)),
                    Linear<T>::init(cfg.d, cfg.vocab, rng)};
        for (std::size_t layer = 0; layer < cfg.left_max.size(); ++layer) {
            TalkConfig kc{cfg.d,
                          cfg.heads,
                          cfg.left_max[layer],
                          cfg.causal ? 0 : cfg.right_max[layer],
                          cfg.p_drop,
                          cfg.normalize};
            m.blocks.push_back(
                TalkBlock<T>::init(kc, cfg.d_ff, cfg.use_glu, cfg.causal, rng, cfg.norm_placement));
        }
        return m;
    }

    // Post-norm blocks already end normalized, so the closing layer norm (and
    // its parameters) only exist in the pre-norm configuration.
    std::vector<std::pair<std::string, Tensor<T>*>> parameters() {
        std::vector<std::pair<std::string, Tensor<T>*>> out{{"tok_emb", &tok_emb},
                                                            {"pos_emb", &pos_emb}};
        for (std::size_t i = 0; i < blocks.size(); ++i)
            for (auto& [name, tensor] : blocks[i].parameters())
                out.emplace_back("blocks." + std::to_string(i) + "." + name, tensor);
        if (cfg.norm_placement == NormPlacement::Pre) {
            out.emplace_back("final_ln.gain", &final_gain);
            out.emplace_back("final_ln.bias", &final_bias);
        }
        out.emplace_back("head.weight", &head.weight);
        out.emplace_back("head.bias", &head.bias);
        return out;
    }
};

template <class T>
struct ModelSaved {
    Tensor<std::int32_t> ids;
    Tensor<T> emb;
    std::vector<BlockSaved<T>> blocks;
    LayerNormSaved<T> ln_f;  // pre-norm only
    Tensor<T> head_in;
};

template <class T>
std::pair<Tensor<T>, ModelSaved<T>> model_forward(const Tensor<std::int32_t>& ids, TalkModel<T>& model,
                                                  bool training, Rng& rng, int workers = 1) {
    const std::int64_t n = ids.extent(1);
    if (n > model.cfg.max_len) throw config_error("sequence longer than the position table");
    ModelSaved<T> saved;
    saved.ids = ids;
    saved.emb = embedding_forward(ids, model.tok_emb);
    const std::int64_t batch = ids.extent(0), d = model.cfg.d;
    for (std::int64_t b = 0; b < batch; ++b)
        for (std::int64_t t = 0; t < n; ++t)
            for (std::int64_t c = 0; c < d; ++c) saved.emb.at3(b, t, c) += model.pos_emb.at2(t, c);
    Tensor<T> h = saved.emb;
    saved.blocks.reserve(model.blocks.size());
    for (auto& block : model.blocks) {
        auto [y, bs] = talk_block_forward(h, block, training, rng, workers);
        saved.blocks.push_back(std::move(bs));
        h = std::move(y);
    }
    if (model.cfg.norm_placement == NormPlacement::Pre) {
        auto [ln_out, ln_saved] = layernorm_forward(h, model.final_gain, model.final_bias);
        saved.ln_f = std::move(ln_saved);
        saved.head_in = std::move(ln_out);
    } else {
        saved.head_in = std::move(h);
    }
    Tensor<T> logits = linear_forward(saved.head_in, model.head, workers);
    return {std::move(logits), std::move(saved)};
}

template <class T>
struct ModelGrads {
    bool pre_norm = true;
    Tensor<T> tok_emb, pos_emb;
    std::vector<BlockGrads<T>> blocks;
    Tensor<T> final_gain, final_bias;
    LinearGrads<T> head;

    std::vector<std::pair<std::string, Tensor<T>*>> parameters() {
        std::vector<std::pair<std::string, Tensor<T>*>> out{{"tok_emb", &tok_emb},
                                                            {"pos_emb", &pos_emb}};
        for (std::size_t i = 0; i < blocks.size(); ++i)
            for (auto& [name, tensor] : blocks[i].parameters())
                out.emplace_back("blocks." + std::to_string(i) + "." + name, tensor);
        if (pre_norm) {
            out.emplace_back("final_ln.gain", &final_gain);
            out.emplace_back("final_ln.bias", &final_bias);
        }
        out.emplace_back("head.weight", &head.weight);
        out.emplace_back("head.bias", &head.bias);
        return out;
    }
};

template <class T>
ModelGrads<T> model_backward(const Tensor<T>& grad_logits, const ModelSaved<T>& saved,
                             TalkModel<T>& model, int workers = 1) {
    ModelGrads<T> g;
    g.pre_norm = model.cfg.norm_placement == NormPlacement::Pre;
    g.head = linear_backward(grad_logits, saved.head_in, model.head, workers);
    Tensor<T> gh;
    if (g.pre_norm) {
        LayerNormGrads<T> lf = layernorm_backward(g.head.input, saved.ln_f, model.final_gain);
        g.final_gain = std::move(lf.gain);
        g.final_bias = std::move(lf.bias);
        gh = std::move(lf.input);
    } else {
        gh = std::move(g.head.input);
    }
    g.blocks.resize(model.blocks.size());
    for (std::size_t i = model.blocks.size(); i-- > 0;) {
        auto [gx, bg] = talk_block_backward(gh, saved.blocks[i], model.blocks[i], workers);
        g.blocks[i] = std::move(bg);
        gh = std::move(gx);
    }
    g.tok_emb = embedding_backward(gh, saved.ids, model.tok_emb);
    const std::int64_t batch = saved.ids.extent(0), n = saved.ids.extent(1), d = model.cfg.d;
    g.pos_emb = Tensor<T>(model.pos_emb.shape());
    for (std::int64_t b = 0; b < batch; ++b)
        for (std::int64_t t = 0; t < n; ++t)
            for (std::int64_t c = 0; c < d; ++c) g.pos_emb.at2(t, c) += gh.at3(b, t, c);
    return g;
}

// ---------------------------------------------------------------------------
// training loop
// ---------------------------------------------------------------------------

enum class TaskKind { Copy, Reverse, CharLm };

struct TrainConfig {
    TaskKind task = TaskKind::Copy;
    std::int64_t layers = 2;
    std::int64_t d = 64;
    std::int64_t d_ff = 256;
    std::int64_t heads = 4;
    std::vector<std::int64_t> left_max;   // one entry per layer
    std::vector<std::int64_t> right_max;  // one entry per layer (non-causal tasks)
    double p_drop = 0.0;
    bool normalize = true;
    bool use_glu = true;
    NormPlacement norm_placement = NormPlacement::Pre;
    int causal = -1;  // -1: derive from task (copy/char_lm causal, reverse bidirectional)
    std::int64_t vocab = 16;
    std::int64_t seq_len = 32;
    std::int64_t batch_size = 8;
    double lr_peak = 1e-3;
    double lr_floor = 1e-7;
    std::int64_t warmup_steps = 200;
    std::int64_t total_steps = 1000;
    AdamConfig adam{};
    std::uint64_t seed = 1;
    std::int64_t log_every = 50;
    std::int64_t checkpoint_every = 0;  // 0: only at the end
    std::string checkpoint_path;
    std::string resume_from;
    std::string report_path;
    std::string text_path;  // char_lm corpus
    int workers = 1;
    double stop_at_accuracy = 0.0;   // 0: run to total_steps
    std::int64_t stop_after_steps = 0;  // interrupt this invocation after N steps (0: off);
                                        // the schedule still follows total_steps

    bool is_causal() const { return causal >= 0 ? causal != 0 : task != TaskKind::Reverse; }

    void validate() const {
        if (!(warmup_steps < total_steps)) throw config_error("warmup_steps must be < total_steps");
        if (!(lr_peak > 0)) throw config_error("lr_peak must be > 0");
        if (static_cast<std::int64_t>(left_max.size()) != layers ||
            static_cast<std::int64_t>(right_max.size()) != layers)
            throw config_error("l_max/r_max lists must have one entry per layer");
        if (batch_size < 1 || seq_len < 1) throw config_error("batch/seq_len must be >= 1");
        if (log_every < 1) throw config_error("log_every must be >= 1");
    }
};

struct LogEntry {
    std::int64_t step;  // 1-based count of completed steps
    double loss;
    double lr;
    double accuracy;
};

struct TrainReport {
    std::vector<LogEntry> log;
    bool diverged = false;
    double final_loss = 0.0;
    double final_accuracy = 0.0;
    double best_accuracy = 0.0;
    std::int64_t steps_run = 0;
    std::int64_t adam_skipped = 0;
};

inline void write_report_csv(const TrainReport& report, const std::string& path) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw std::runtime_error("cannot open report for writing: " + path);
    f << "step,loss,lr,accuracy\n";
    for (const auto& e : report.log)
        f << e.step << "," << e.loss << "," << e.lr << "," << e.accuracy << "\n";
    if (!f) throw std::runtime_error("report write failed: " + path);
}

namespace detail {

inline Tensor<double> pack_rng(const Rng& rng) {
    Tensor<double> t({8});
    const auto st = rng.state();
    for (int i = 0; i < 4; ++i) {
        t[2 * i] = static_cast<double>(st[static_cast<std::size_t>(i)] & 0xffffffffULL);
        t[2 * i + 1] = static_cast<double>(st[static_cast<std::size_t>(i)] >> 32);
    }
    return t;
}

inline void unpack_rng(const Tensor<double>& t, Rng& rng) {
    std::array<std::uint64_t, 4> st{};
    for (int i = 0; i < 4; ++i)
        st[static_cast<std::size_t>(i)] = static_cast<std::uint64_t>(t[2 * i]) |
                                          (static_cast<std::uint64_t>(t[2 * i + 1]) << 32);
    rng.set_state(st);
}

inline std::vector<std::uint8_t> read_text_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open text file: " + path);
    return std::vector<std::uint8_t>((std::istreambuf_iterator<char>(f)),
                                     std::istreambuf_iterator<char>());
}

}  // namespace detail

template <class T>
struct TrainerState {
    TalkModel<T> model;
    AdamState<T> adam;
    Rng data_rng{0};
    Rng drop_rng{0};
    std::int64_t step = 0;
    double initial_loss = -1.0;
    std::int64_t high_loss_streak = 0;
    bool diverged = false;
};

template <class T>
void save_checkpoint(TrainerState<T>& st, const std::string& path) {
    NamedTensors m;
    auto params = st.model.parameters();
    for (auto& [name, tensor] : params) m.emplace("param/" + name, *tensor);
    for (std::size_t i = 0; i < params.size(); ++i) {
        m.emplace("adam/m/" + params[i].first, st.adam.m[i]);
        m.emplace("adam/v/" + params[i].first, st.adam.v[i]);
    }
    Tensor<double> meta({6});
    meta[0] = static_cast<double>(st.step);
    meta[1] = static_cast<double>(st.adam.t);
    meta[2] = static_cast<double>(st.adam.skipped);
    meta[3] = st.initial_loss;
    meta[4] = static_cast<double>(st.high_loss_streak);
    meta[5] = st.diverged ? 1.0 : 0.0;
    m.emplace("meta/counters", meta);
    m.emplace("meta/rng_data", detail::pack_rng(st.data_rng));
    m.emplace("meta/rng_drop", detail::pack_rng(st.drop_rng));
    save_tensors(m, path);
}

template <class T>
void load_checkpoint(TrainerState<T>& st, const std::string& path) {
    NamedTensors m = load_tensors(path);
    for (auto& [name, tensor] : st.model.parameters()) *tensor = get_tensor<T>(m, "param/" + name);
    auto params = st.model.parameters();
    for (std::size_t i = 0; i < params.size(); ++i) {
        st.adam.m[i] = get_tensor<T>(m, "adam/m/" + params[i].first);
        st.adam.v[i] = get_tensor<T>(m, "adam/v/" + params[i].first);
    }
    const auto& meta = get_tensor<double>(m, "meta/counters");
    st.step = static_cast<std::int64_t>(meta[0]);
    st.adam.t = static_cast<std::int64_t>(meta[1]);
    st.adam.skipped = static_cast<std::int64_t>(meta[2]);
    st.initial_loss = meta[3];
    st.high_loss_streak = static_cast<std::int64_t>(meta[4]);
    st.diverged = meta[5] != 0.0;
    detail::unpack_rng(get_tensor<double>(m, "meta/rng_data"), st.data_rng);
    detail::unpack_rng(get_tensor<double>(m, "meta/rng_drop"), st.drop_rng);
}

template <class T>
TrainReport train_loop(const TrainConfig& cfg) {
    cfg.validate();
    ModelConfig mc{cfg.task == TaskKind::CharLm ? 256 : cfg.vocab,
                   cfg.d,
                   cfg.d_ff,
                   cfg.heads,
                   cfg.left_max,
                   cfg.right_max,
                   cfg.p_drop,
                   cfg.normalize,
                   cfg.use_glu,
                   cfg.is_causal(),
                   cfg.norm_placement,
                   cfg.seq_len};

    Rng init_rng(cfg.seed);
    TrainerState<T> st{TalkModel<T>::init(mc, init_rng), {}, Rng(cfg.seed ^ 0xd1f2a3b4c5d6e7f8ULL),
                       Rng(cfg.seed ^ 0x1234567890abcdefULL)};
    st.adam = AdamState<T>::init(st.model.parameters());
    if (!cfg.resume_from.empty()) load_checkpoint(st, cfg.resume_from);

    std::vector<std::uint8_t> text;
    if (cfg.task == TaskKind::CharLm) text = detail::read_text_file(cfg.text_path);

    const LrSchedule sched{cfg.lr_peak, cfg.lr_floor, cfg.warmup_steps, cfg.total_steps};
    TrainReport report;
    report.adam_skipped = st.adam.skipped;

    auto params = st.model.parameters();
    std::vector<Tensor<T>*> param_ptrs;
    for (auto& [name, tensor] : params) param_ptrs.push_back(tensor);

    const std::int64_t first_step = st.step;
    while (st.step < cfg.total_steps && !st.diverged) {
        if (cfg.stop_after_steps > 0 && st.step - first_step >= cfg.stop_after_steps) break;
        TaskBatch batch = cfg.task == TaskKind::Copy
                              ? make_copy_batch(st.data_rng, cfg.batch_size, cfg.seq_len, cfg.vocab)
                          : cfg.task == TaskKind::Reverse
                              ? make_reverse_batch(st.data_rng, cfg.batch_size, cfg.seq_len, cfg.vocab)
                              : make_char_lm_batch(st.data_rng, text, cfg.batch_size, cfg.seq_len);

        auto [logits, saved] = model_forward(batch.inputs, st.model, true, st.drop_rng, cfg.workers);
        auto xent = softmax_xent_forward(logits, batch.targets, batch.mask);
        const double loss = static_cast<double>(xent.loss);

        if (!std::isfinite(loss)) {
            st.diverged = true;
            report.log.push_back({st.step + 1, loss, sched.at(st.step), xent.accuracy});
            break;
        }
        if (st.initial_loss < 0) st.initial_loss = loss;
        if (loss > 10.0 * st.initial_loss) {
            if (++st.high_loss_streak >= 100) {
                st.diverged = true;
                report.log.push_back({st.step + 1, loss, sched.at(st.step), xent.accuracy});
                break;
            }
        } else {
            st.high_loss_streak = 0;
        }

        Tensor<T> grad_logits = softmax_xent_backward(xent, batch.targets, batch.mask);
        ModelGrads<T> grads = model_backward(grad_logits, saved, st.model, cfg.workers);
        std::vector<const Tensor<T>*> grad_ptrs;
        auto gparams = grads.parameters();
        for (auto& [name, tensor] : gparams) grad_ptrs.push_back(tensor);
        adam_step(param_ptrs, grad_ptrs, st.adam, sched.at(st.step), cfg.adam);

        st.step += 1;
        report.final_loss = loss;
        report.final_accuracy = xent.accuracy;
        bool early_stop = false;
        if (st.step % cfg.log_every == 0 || st.step == cfg.total_steps) {
            report.log.push_back({st.step, loss, sched.at(st.step - 1), xent.accuracy});
            report.best_accuracy = std::max(report.best_accuracy, xent.accuracy);
            if (cfg.stop_at_accuracy > 0 && xent.accuracy >= cfg.stop_at_accuracy) early_stop = true;
        }
        if (cfg.checkpoint_every > 0 && st.step % cfg.checkpoint_every == 0 &&
            !cfg.checkpoint_path.empty())
            save_checkpoint(st, cfg.checkpoint_path);
        if (early_stop) break;
    }

    report.diverged = st.diverged;
    report.steps_run = st.step;
    report.adam_skipped = st.adam.skipped;
    if (!cfg.checkpoint_path.empty()) save_checkpoint(st, cfg.checkpoint_path);
    if (!cfg.report_path.empty()) write_report_csv(report, cfg.report_path);
    return report;
}

}  // namespace talk
