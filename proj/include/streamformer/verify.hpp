#pragma once

// Oracle suites: dense-vs-performer, dense-vs-windowed, batch-vs-streaming,
// causality probes, cost-model cross-checks and complexity trends. Each suite
// reports its worst observed error and the first failing seed.

#include <chrono>
#include <cstdint>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "streamformer/bench.hpp"
#include "streamformer/cascade.hpp"
#include "streamformer/conformer.hpp"
#include "streamformer/costmodel.hpp"
#include "streamformer/oracles.hpp"
#include "streamformer/streaming.hpp"

namespace streamformer::verify {

struct SuiteResult {
    std::string name;
    bool passed = true;
    double max_error = 0;
    double tolerance = 0;
    std::size_t cases = 0;
    std::optional<std::uint64_t> failing_seed;
    std::string detail;
    double seconds = 0;

    void record(double error, std::uint64_t seed) {
        ++cases;
        max_error = std::max(max_error, error);
        if (!(error <= tolerance)) fail(seed);
    }
    void fail(std::uint64_t seed, const std::string& why = {}) {
        if (passed) {
            failing_seed = seed;
            if (!why.empty()) detail = why;
        }
        passed = false;
    }
};

inline std::string format_result(const SuiteResult& r) {
    std::ostringstream out;
    out << (r.passed ? "PASS " : "FAIL ") << r.name << "  cases=" << r.cases << "  max_err=" << r.max_error
        << "  tol=" << r.tolerance << "  (" << std::fixed;
    out.precision(2);
    out << r.seconds << " s)";
    if (!r.passed && r.failing_seed) out << "  first failing seed=" << *r.failing_seed;
    if (!r.detail.empty()) out << "  " << r.detail;
    return out.str();
}

// ─── Random generators ───────────────────────────────────────────────────────

template <typename T>
AttentionParams<T> random_attention_params(Rng& rng, std::size_t d, std::size_t heads, std::size_t window) {
    AttentionParams<T> p;
    p.heads = heads;
    const double s = 1.0 / std::sqrt(double(d));
    p.wq = rng.gaussian_matrix<T>(d, d, s);
    p.wk = rng.gaussian_matrix<T>(d, d, s);
    p.wv = rng.gaussian_matrix<T>(d, d, s);
    p.wo = rng.gaussian_matrix<T>(d, d, s);
    if (window > 0) p.relpos_bias = rng.gaussian_matrix<T>(heads, window, 0.5);
    return p;
}

template <typename T>
KernelSpec<T> random_kernel_spec(Rng& rng, KernelKind kind, std::size_t head_dim, bool affine, std::size_t r) {
    KernelSpec<T> k;
    k.kind = kind;
    k.use_affine = affine;
    if (affine) {
        k.weight = rng.gaussian_matrix<T>(r, head_dim, 1.0 / std::sqrt(double(head_dim)));
        for (std::size_t i = 0; i < r; ++i) k.bias.push_back(T(0.5 * rng.gaussian()));
    }
    return k;
}

// Every tensor gets random values (gains near 1) so biases and norms are
// exercised, not only the initial zeros/ones.
inline auto random_filler(Rng& rng) {
    return [&rng](const TensorInfo& info, auto values) {
        using E = typename decltype(values)::value_type;
        const double scale = info.fan_in ? 1.0 / std::sqrt(double(info.fan_in)) : 0.3;
        for (auto& v : values) {
            const double g = rng.gaussian();
            v = E(info.init == TensorInit::gain ? 1.0 + 0.2 * g : scale * g);
        }
    };
}

template <typename T>
void randomize(EncoderWeights<T>& w, Rng& rng) {
    for_each_tensor(w, random_filler(rng));
}

template <typename T>
void randomize(CascadeWeights<T>& w, Rng& rng) {
    for_each_cascade_tensor(w, random_filler(rng));
}

inline EncoderConfig random_config(Rng& rng, std::optional<AttentionKind> kind = std::nullopt) {
    EncoderConfig c;
    static constexpr std::size_t dims[] = {8, 12, 16, 24};
    c.model_dim = dims[rng.uniform_index(4)];
    std::vector<std::size_t> head_options;
    for (std::size_t h = 1; h <= 4; ++h)
        if (c.model_dim % h == 0) head_options.push_back(h);
    c.heads = head_options[rng.uniform_index(head_options.size())];
    c.input_dim = std::size_t(rng.uniform_int(3, 10));
    c.total_blocks = std::size_t(rng.uniform_int(1, 4));
    c.conv_only_blocks = std::size_t(rng.uniform_int(0, int(c.total_blocks)));
    c.ff_expansion = std::size_t(rng.uniform_int(1, 4));
    c.conv_kernel = std::size_t(rng.uniform_int(1, 5));
    c.attn_left_context = std::size_t(rng.uniform_int(0, 6));
    c.attention_kind = kind ? *kind : (rng.uniform() < 0.5 ? AttentionKind::explicit_local : AttentionKind::performer);
    c.kernel.kind = kAllKernelKinds[rng.uniform_index(5)];
    // ELU features can cancel in the normalizer; keep random configs on the
    // non-negative kernels so tolerances stay meaningful.
    if (c.kernel.kind == KernelKind::elu) c.kernel.kind = KernelKind::relu;
    c.kernel.use_affine = rng.uniform() < 0.5;
    c.kernel.feature_dim = c.kernel.use_affine ? std::size_t(rng.uniform_int(1, 8)) : 0;
    c.seed = rng.next_u64();
    return c;
}

inline std::vector<std::size_t> random_chunking(Rng& rng, std::size_t total) {
    std::vector<std::size_t> sizes;
    std::size_t used = 0;
    while (used < total) {
        const std::size_t c = std::size_t(rng.uniform_int(0, 7));
        sizes.push_back(c);
        used += c;
    }
    return sizes;
}

// ─── Suites ──────────────────────────────────────────────────────────────────

template <typename Fn>
SuiteResult timed_suite(const std::string& name, double tolerance, Fn&& body) {
    SuiteResult r;
    r.name = name;
    r.tolerance = tolerance;
    const auto t0 = std::chrono::steady_clock::now();
    body(r);
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return r;
}

// performer_causal vs dense row-normalized tril(Q' K'^T) V, cycling through
// all five kernels, with and without the affine transform.
inline SuiteResult performer_causal_oracle(std::size_t instances, std::uint64_t seed0 = 1000) {
    return timed_suite("performer-causal-vs-dense", 1e-6, [&](SuiteResult& r) {
        for (std::size_t i = 0; i < instances; ++i) {
            const std::uint64_t seed = seed0 + i;
            Rng rng(seed);
            const std::size_t steps = std::size_t(rng.uniform_int(1, 64));
            const std::size_t hd = std::size_t(rng.uniform_int(1, 16));
            const KernelKind kind = kAllKernelKinds[i % 5];
            const bool affine = (i / 5) % 2 == 1;
            const std::size_t rdim = affine ? std::size_t(rng.uniform_int(1, 16)) : hd;
            const auto spec = random_kernel_spec<double>(rng, kind, hd, affine, rdim);
            const auto q = rng.gaussian_matrix<double>(steps, hd, 0.5);
            const auto k = rng.gaussian_matrix<double>(steps, hd, 0.5);
            const auto v = rng.gaussian_matrix<double>(steps, hd);
            const auto qp = oracle::dense_feature_map(q, spec);
            const auto kp = oracle::dense_feature_map(k, spec);
            const double fm_err = std::max(oracle::max_relative_error(feature_map(q, spec), qp),
                                           oracle::max_relative_error(feature_map(k, spec), kp));
            const auto got = performer_causal(qp, kp, v);
            const auto want = oracle::dense_linear_attention(qp, kp, v, true);
            r.record(std::max(fm_err, oracle::max_relative_error(got, want)), seed);
        }
    });
}

inline SuiteResult performer_bidirectional_oracle(std::size_t instances, std::uint64_t seed0 = 2000) {
    return timed_suite("performer-bidirectional-vs-dense", 1e-6, [&](SuiteResult& r) {
        for (std::size_t i = 0; i < instances; ++i) {
            const std::uint64_t seed = seed0 + i;
            Rng rng(seed);
            const std::size_t steps = std::size_t(rng.uniform_int(1, 64));
            const std::size_t hd = std::size_t(rng.uniform_int(1, 16));
            const KernelKind kind = kAllKernelKinds[i % 5] == KernelKind::elu ? KernelKind::relu : kAllKernelKinds[i % 5];
            const auto spec = random_kernel_spec<double>(rng, kind, hd, (i / 5) % 2 == 1, hd);
            const auto qp = oracle::dense_feature_map(rng.gaussian_matrix<double>(steps, hd, 0.5), spec);
            const auto kp = oracle::dense_feature_map(rng.gaussian_matrix<double>(steps, hd, 0.5), spec);
            const auto v = rng.gaussian_matrix<double>(steps, hd);
            r.record(oracle::max_relative_error(performer_bidirectional(qp, kp, v),
                                                oracle::dense_linear_attention(qp, kp, v, false)),
                     seed);
        }
    });
}

inline SuiteResult explicit_attention_oracle(std::size_t instances, std::uint64_t seed0 = 3000) {
    return timed_suite("explicit-window-vs-dense-masked", 1e-6, [&](SuiteResult& r) {
        for (std::size_t i = 0; i < instances; ++i) {
            const std::uint64_t seed = seed0 + i;
            Rng rng(seed);
            const std::size_t heads = std::size_t(rng.uniform_int(1, 4));
            const std::size_t d = heads * std::size_t(rng.uniform_int(1, 6));
            const std::size_t steps = std::size_t(rng.uniform_int(1, 24));
            const std::size_t left = std::size_t(rng.uniform_int(0, 8));
            const std::size_t right = i % 2 ? std::size_t(rng.uniform_int(0, 4)) : 0;
            const auto p = random_attention_params<double>(rng, d, heads, left + right + 1);
            const auto x = rng.gaussian_matrix<double>(steps, d);
            r.record(oracle::max_relative_error(windowed_attention(x, p, left, right),
                                                oracle::dense_banded_attention(x, p, left, right)),
                     seed);
        }
    });
}

template <typename T>
double streaming_batch_gap(const EncoderConfig& cfg, Rng& rng) {
    EncoderWeights<T> w = allocate_weights<T>(cfg);
    randomize(w, rng);
    const std::size_t steps = std::size_t(rng.uniform_int(1, 40));
    const auto x = rng.gaussian_matrix<T>(steps, cfg.input_dim);
    const auto batch = encoder_forward(x, w, cfg);
    const auto chunks = random_chunking(rng, steps);
    const auto streamed = stream_in_chunks<T>(x, chunks, w, cfg);
    return double(max_abs_diff(streamed, batch));
}

inline SuiteResult streaming_vs_batch(std::size_t configs, std::uint64_t seed0 = 4000, bool single_precision = false) {
    const double tol = single_precision ? 1e-5 : 1e-10;
    return timed_suite(std::string("stream-vs-batch-") + (single_precision ? "f32" : "f64"), tol,
                       [&](SuiteResult& r) {
                           for (std::size_t i = 0; i < configs; ++i) {
                               const std::uint64_t seed = seed0 + i;
                               Rng rng(seed);
                               const EncoderConfig cfg =
                                   random_config(rng, i % 2 ? AttentionKind::performer : AttentionKind::explicit_local);
                               r.record(single_precision ? streaming_batch_gap<float>(cfg, rng)
                                                         : streaming_batch_gap<double>(cfg, rng),
                                        seed);
                           }
                       });
}

// Rows 0..t of `before` and `after` must be bitwise equal.
template <typename T>
bool prefix_rows_equal(const Matrix<T>& before, const Matrix<T>& after, std::size_t t) {
    for (std::size_t i = 0; i <= t && i < before.rows(); ++i)
        for (std::size_t c = 0; c < before.cols(); ++c)
            if (before(i, c) != after(i, c)) return false;
    return true;
}

// Perturbs every input row after a random t and checks outputs up to t.
template <typename Forward>
void causality_probe(SuiteResult& r, std::uint64_t seed, Rng& rng, std::size_t steps, std::size_t width,
                     Forward&& forward) {
    const auto x = rng.gaussian_matrix<double>(steps, width);
    const std::size_t t = rng.uniform_index(steps - 1);
    auto y = x;
    for (std::size_t i = t + 1; i < steps; ++i)
        for (auto& v : y.row(i)) v += rng.gaussian() * 3.0;
    const bool ok = prefix_rows_equal(forward(x), forward(y), t);
    r.record(ok ? 0.0 : 1.0, seed);
}

inline SuiteResult causality_suite(std::size_t seeds, std::uint64_t seed0 = 5000) {
    return timed_suite("causality-probes", 0.0, [&](SuiteResult& r) {
        for (std::size_t i = 0; i < seeds; ++i) {
            const std::uint64_t seed = seed0 + i;
            Rng rng(seed);
            const std::size_t steps = std::size_t(rng.uniform_int(2, 20));
            // conv module
            {
                EncoderConfig cfg;
                cfg.model_dim = 6;
                cfg.heads = 1;
                cfg.conv_kernel = std::size_t(rng.uniform_int(1, 6));
                cfg.total_blocks = 1;
                cfg.conv_only_blocks = 1;
                cfg.input_dim = 6;
                EncoderWeights<double> w = allocate_weights<double>(cfg);
                randomize(w, rng);
                const ConvWeights<double>& conv = w.blocks[0].conv;
                causality_probe(r, seed, rng, steps, 6,
                                [&](const Matrix<double>& x) { return conv_module(x, conv, 1e-5); });
            }
            // explicit local attention
            {
                const std::size_t left = std::size_t(rng.uniform_int(0, 5));
                const auto p = random_attention_params<double>(rng, 8, 2, left + 1);
                causality_probe(r, seed, rng, steps, 8,
                                [&](const Matrix<double>& x) { return explicit_local_causal_attention(x, p, left); });
            }
            // causal performer
            {
                const auto p = random_attention_params<double>(rng, 8, 2, 0);
                const auto spec = random_kernel_spec<double>(rng, kAllKernelKinds[i % 5], 4, i % 2 == 0, 4);
                causality_probe(r, seed, rng, steps, 8,
                                [&](const Matrix<double>& x) { return performer_attention(x, p, spec, true); });
            }
            // full encoder
            {
                const EncoderConfig cfg = random_config(rng);
                EncoderWeights<double> w = allocate_weights<double>(cfg);
                randomize(w, rng);
                causality_probe(r, seed, rng, steps, cfg.input_dim,
                                [&](const Matrix<double>& x) { return encoder_forward(x, w, cfg); });
            }
        }
    });
}

// Second-pass output row t must not move when first-pass rows beyond
// t + total_lookahead change.
inline SuiteResult cascade_lookahead_suite(std::size_t seeds, std::uint64_t seed0 = 6000) {
    return timed_suite("cascade-lookahead-bound", 0.0, [&](SuiteResult& r) {
        for (std::size_t i = 0; i < seeds; ++i) {
            const std::uint64_t seed = seed0 + i;
            Rng rng(seed);
            CascadeConfig c;
            c.blocks = std::size_t(rng.uniform_int(1, 4));
            c.heads = 2;
            c.model_dim = 8;
            c.ff_expansion = 2;
            c.conv_kernel = std::size_t(rng.uniform_int(1, 5));
            c.left_context = std::size_t(rng.uniform_int(0, 6));
            c.right_context = std::size_t(rng.uniform_int(0, 8));
            c.centered_conv = rng.uniform() < 0.5;
            CascadeWeights<double> w = allocate_cascade_weights<double>(c, 6);
            randomize(w, rng);
            const std::size_t steps = 40;
            const auto first = rng.gaussian_matrix<double>(steps, 6);
            const std::size_t t = rng.uniform_index(12);
            const std::size_t bound = t + c.total_lookahead();
            auto moved = first;
            for (std::size_t j = bound + 1; j < steps; ++j)
                for (auto& v : moved.row(j)) v += 2.0 + rng.gaussian();
            const bool ok = prefix_rows_equal(second_pass_forward(first, w, c), second_pass_forward(moved, w, c), t);
            r.record(ok ? 0.0 : 1.0, seed);
        }
    });
}

// Flops of one steady-state single-frame step, counted by the instrumented
// kernels.
template <typename T>
std::uint64_t instrumented_step_flops(const EncoderConfig& cfg, const EncoderWeights<T>& w) {
    StreamState<T> state = init_state<T>(cfg);
    const Matrix<T> frame(1, cfg.input_dim, T(0.25));
    for (std::size_t i = 0; i < cfg.attn_left_context + 1; ++i) step(state, frame, w, cfg);
    ScopedFlopCounter counter;
    step(state, frame, w, cfg);
    return counter.count();
}

struct NamedConfig {
    std::string id;
    EncoderConfig config;
};

// The FFM/NCB/TB rows of the grid table with the given model_dim per row.
inline std::vector<NamedConfig> ablation_shapes(const std::vector<std::size_t>& dims) {
    struct Row {
        const char* id;
        std::size_t ffm, ncb, tb;
    };
    static constexpr Row rows[] = {{"B0", 2, 0, 12}, {"E0", 8, 0, 3}, {"E1", 6, 1, 4}, {"E2", 4, 1, 5},
                                   {"E3", 4, 1, 6},  {"E4", 4, 2, 5}, {"E5", 4, 3, 7}, {"E6", 6, 3, 5},
                                   {"E7", 2, 4, 8},  {"E8", 4, 5, 7}};
    if (dims.size() != 1 && dims.size() != std::size(rows))
        throw std::invalid_argument("ablation_shapes: expected 1 or 10 widths");
    std::vector<NamedConfig> out;
    for (std::size_t i = 0; i < std::size(rows); ++i) {
        EncoderConfig c;
        c.ff_expansion = rows[i].ffm;
        c.conv_only_blocks = rows[i].ncb;
        c.total_blocks = rows[i].tb;
        c.model_dim = dims.size() == 1 ? dims[0] : dims.at(i);
        out.push_back({rows[i].id, c});
    }
    return out;
}

inline SuiteResult costmodel_crosscheck(const std::vector<NamedConfig>& configs, std::size_t random_configs,
                                        std::uint64_t seed0 = 7000) {
    return timed_suite("costmodel-vs-census", 0.0, [&](SuiteResult& r) {
        auto check = [&](const EncoderConfig& cfg, std::uint64_t seed, const std::string& id) {
            const auto w = allocate_weights<float>(cfg);
            const std::uint64_t census = parameter_count(w);
            const std::uint64_t counted = instrumented_step_flops(cfg, w);
            const bool ok = census == count_params(cfg) && counted == count_flops_per_frame(cfg);
            if (!ok) {
                r.fail(seed, id + ": params " + std::to_string(census) + " vs " + std::to_string(count_params(cfg)) +
                                 ", flops " + std::to_string(counted) + " vs " +
                                 std::to_string(count_flops_per_frame(cfg)));
            }
            ++r.cases;
            r.max_error = std::max(r.max_error, ok ? 0.0 : 1.0);
        };
        for (std::size_t i = 0; i < configs.size(); ++i) check(configs[i].config, i, configs[i].id);
        for (std::size_t i = 0; i < random_configs; ++i) {
            Rng rng(seed0 + i);
            EncoderConfig cfg = random_config(rng);
            if (i % 3 == 0) cfg.kernel.kind = KernelKind::elu;
            check(cfg, seed0 + i, "random" + std::to_string(i));
        }
    });
}

// time(2T)/time(T) of performer_causal for T >= 4096 must lie in [1.6, 2.6].
inline SuiteResult performer_linear_trend(std::size_t base_steps = 4096) {
    SuiteResult res = timed_suite("performer-linear-time", 0.0, [&](SuiteResult& r) {
        Rng rng(8000);
        const std::size_t hd = 64;
        auto run = [&](std::size_t n) {
            const auto qp = oracle::dense_feature_map(rng.gaussian_matrix<double>(n, hd), KernelSpec<double>{});
            const auto kp = oracle::dense_feature_map(rng.gaussian_matrix<double>(n, hd), KernelSpec<double>{});
            const auto v = rng.gaussian_matrix<double>(n, hd);
            return best_time([&] { (void)performer_causal(qp, kp, v); }, 7);
        };
        const double ratio = run(2 * base_steps) / run(base_steps);
        r.cases = 1;
        r.max_error = ratio;
        r.detail = "time(2T)/time(T)=" + std::to_string(ratio);
        if (!(ratio >= 1.6 && ratio <= 2.6)) r.fail(8000, r.detail + " outside [1.6, 2.6]");
    });
    return res;
}

// time(2T)/time(T) of the dense masked oracle must exceed 3 for T >= 2048.
inline SuiteResult dense_superlinear_trend(std::size_t base_steps = 2048) {
    return timed_suite("dense-superlinear-time", 0.0, [&](SuiteResult& r) {
        Rng rng(8100);
        const std::size_t hd = 16;
        auto run = [&](std::size_t n) {
            const auto qp = oracle::dense_feature_map(rng.gaussian_matrix<double>(n, hd), KernelSpec<double>{});
            const auto kp = oracle::dense_feature_map(rng.gaussian_matrix<double>(n, hd), KernelSpec<double>{});
            const auto v = rng.gaussian_matrix<double>(n, hd);
            return best_time([&] { (void)oracle::dense_linear_attention(qp, kp, v, true); }, 1);
        };
        const double ratio = run(2 * base_steps) / run(base_steps);
        r.cases = 1;
        r.max_error = ratio;
        r.detail = "time(2T)/time(T)=" + std::to_string(ratio);
        if (!(ratio > 3.0)) r.fail(8100, r.detail + " not > 3");
    });
}

enum class Level { fast, full };

inline Level parse_level(std::string_view s) {
    if (s == "fast") return Level::fast;
    if (s == "full") return Level::full;
    throw std::invalid_argument("unknown level '" + std::string(s) + "'");
}

inline std::vector<SuiteResult> run_all(Level level) {
    const bool full = level == Level::full;
    std::vector<SuiteResult> out;
    out.push_back(performer_causal_oracle(full ? 100 : 40));
    out.push_back(performer_bidirectional_oracle(full ? 50 : 20));
    out.push_back(explicit_attention_oracle(full ? 50 : 20));
    out.push_back(streaming_vs_batch(full ? 50 : 16, 4000, false));
    out.push_back(streaming_vs_batch(full ? 50 : 16, 4500, true));
    out.push_back(causality_suite(full ? 20 : 8));
    out.push_back(cascade_lookahead_suite(full ? 20 : 8));
    out.push_back(costmodel_crosscheck(ablation_shapes({full ? std::size_t(256) : std::size_t(64)}), full ? 10 : 5));
    if (full) {
        out.push_back(performer_linear_trend(4096));
        out.push_back(dense_superlinear_trend(2048));
    }
    return out;
}

} // namespace streamformer::verify
