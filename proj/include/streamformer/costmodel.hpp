#pragma once

// Analytic parameter, flop and state accounting.
//
// Flops follow the convention in numerics.hpp (2 per multiply-accumulate,
// 1 per other scalar op; layernorm 7, softmax 4 per element). Per-frame
// figures describe steady-state streaming: explicit attention windows are
// full and every conv tap is applied.

#include <cstddef>
#include <cstdint>
#include <iomanip>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "streamformer/cascade.hpp"
#include "streamformer/conformer.hpp"
#include "streamformer/numerics.hpp"

namespace streamformer {

inline constexpr std::uint64_t kSizeBudget = 50'000'000;   // parameters
inline constexpr std::uint64_t kFlopsBudget = 100'000'000; // flops per frame

struct CostEntry {
    std::optional<std::size_t> block; // empty for the frontend
    std::string module;
    std::uint64_t params = 0;
    std::uint64_t flops = 0;
    std::uint64_t states = 0;          // one d-vector per cached frame
    std::uint64_t states_physical = 0; // k and v separately, plus conv history
};

struct CostReport {
    std::uint64_t params = 0;
    std::uint64_t flops_per_frame = 0;
    std::uint64_t states_per_frame = 0;
    std::uint64_t states_physical = 0;
    std::vector<CostEntry> breakdown;
};

struct StateCounts {
    std::uint64_t compact = 0;  // d scalars per cached attention frame
    std::uint64_t physical = 0;
};

namespace costs {

using u64 = std::uint64_t;

inline u64 layernorm_params(u64 d) { return 2 * d; }

inline u64 ff_params(u64 d, u64 ffm) { return layernorm_params(d) + d * ffm * d + ffm * d + ffm * d * d + d; }

inline u64 conv_params(u64 d, u64 k) {
    return layernorm_params(d) + d * 2 * d + 2 * d + k * d + d + layernorm_params(d) + d * d + d;
}

inline u64 attention_params(u64 d, const AttentionShape& s) {
    u64 n = layernorm_params(d) + 4 * d * d;
    if (s.kind == AttentionKind::explicit_local) {
        n += u64(s.heads) * (s.left + s.right + 1);
    } else if (s.kernel.use_affine) {
        const u64 hd = d / s.heads;
        const u64 r = s.kernel.feature_dim ? s.kernel.feature_dim : hd;
        n += r * hd + r;
    }
    return n;
}

inline u64 linear_flops(u64 in, u64 out) { return 2 * in * out + out; }
inline u64 layernorm_flops(u64 d) { return flops::kLayerNormPerElement * d; }

inline u64 ff_flops(u64 d, u64 ffm) {
    const u64 hidden = ffm * d;
    return layernorm_flops(d) + linear_flops(d, hidden) + flops::kActivationPerElement * hidden +
           linear_flops(hidden, d) + 2 * d; // half-step residual
}

inline u64 conv_flops(u64 d, u64 k) {
    return layernorm_flops(d) + linear_flops(d, 2 * d) + flops::kGluPerOutput * d + (2 * k + 1) * d +
           layernorm_flops(d) + flops::kActivationPerElement * d + linear_flops(d, d) + d;
}

// One query frame against a full window (explicit) or one prefix-sum update
// and readout (performer), all heads, plus projections and residual.
inline u64 attention_flops(u64 d, const AttentionShape& s) {
    const u64 heads = s.heads;
    const u64 hd = d / heads;
    u64 per_head = 0;
    if (s.kind == AttentionKind::explicit_local) {
        const u64 window = s.left + s.right + 1;
        per_head = window * (4 * hd + 2) + flops::kSoftmaxPerElement * window;
    } else {
        const u64 r = s.kernel.use_affine ? (s.kernel.feature_dim ? s.kernel.feature_dim : hd) : hd;
        const u64 feature = s.kernel.use_affine ? (2 * hd + 1 + flops::kActivationPerElement) * r
                                                : flops::kActivationPerElement * hd;
        per_head = 2 * feature + 2 * r * (hd + 1) + 2 * r * (hd + 1) + hd;
    }
    return layernorm_flops(d) + 3 * 2 * d * d + heads * per_head + 2 * d * d + d;
}

inline StateCounts attention_states(u64 d, const AttentionShape& s) {
    if (s.kind == AttentionKind::explicit_local) {
        return {u64(s.left) * d, 2 * u64(s.left) * d};
    }
    const u64 hd = d / s.heads;
    const u64 r = s.kernel.use_affine ? (s.kernel.feature_dim ? s.kernel.feature_dim : hd) : hd;
    const u64 n = r * (hd + 1) * s.heads;
    return {n, n};
}

} // namespace costs

inline CostReport cost_report(const EncoderConfig& cfg) {
    cfg.validate();
    using namespace costs;
    const u64 d = cfg.model_dim;
    const u64 ffm = cfg.ff_expansion;
    const u64 k = cfg.conv_kernel;
    const AttentionShape attn = encoder_attention_shape(cfg);

    CostReport r;
    r.breakdown.push_back({std::nullopt, "frontend", cfg.input_dim * d + d, linear_flops(cfg.input_dim, d), 0, 0});
    for (std::size_t i = 0; i < cfg.total_blocks; ++i) {
        r.breakdown.push_back({i, "ff1", ff_params(d, ffm), ff_flops(d, ffm), 0, 0});
        r.breakdown.push_back({i, "conv", conv_params(d, k), conv_flops(d, k), 0, (k - 1) * d});
        if (cfg.block_has_attention(i)) {
            const StateCounts s = attention_states(d, attn);
            r.breakdown.push_back(
                {i, "attention", attention_params(d, attn), attention_flops(d, attn), s.compact, s.physical});
        }
        r.breakdown.push_back({i, "ff2", ff_params(d, ffm), ff_flops(d, ffm), 0, 0});
        r.breakdown.push_back({i, "final_norm", layernorm_params(d), layernorm_flops(d), 0, 0});
    }
    for (const auto& e : r.breakdown) {
        r.params += e.params;
        r.flops_per_frame += e.flops;
        r.states_per_frame += e.states;
        r.states_physical += e.states_physical;
    }
    return r;
}

inline std::uint64_t count_params(const EncoderConfig& cfg) { return cost_report(cfg).params; }
inline std::uint64_t count_flops_per_frame(const EncoderConfig& cfg) { return cost_report(cfg).flops_per_frame; }

inline StateCounts count_states_per_frame(const EncoderConfig& cfg) {
    const CostReport r = cost_report(cfg);
    return {r.states_per_frame, r.states_physical};
}

// Per-frame recurrent state of a stacked LSTM reference: one cell vector per
// layer.
inline std::uint64_t lstm_reference_states(std::uint64_t layers, std::uint64_t dim) { return layers * dim; }

inline std::uint64_t count_params(const CascadeConfig& c, std::size_t first_pass_dim) {
    c.validate();
    using namespace costs;
    const u64 d = c.model_dim;
    u64 n = first_pass_dim != d ? u64(first_pass_dim) * d + d : 0;
    for (std::size_t i = 0; i < c.blocks; ++i) {
        n += 2 * ff_params(d, c.ff_expansion) + conv_params(d, c.conv_kernel) +
             attention_params(d, cascade_attention_shape(c, i)) + layernorm_params(d);
    }
    return n;
}

// ─── Grid reporting ──────────────────────────────────────────────────────────

struct GridEntry {
    std::string id;
    EncoderConfig config;
    std::string error; // non-empty when the variant failed to build
};

struct GridRow {
    std::string id;
    std::size_t ffm = 0, ncb = 0, tb = 0;
    std::uint64_t params = 0, flops = 0, states = 0;
    bool within_size = false, within_flops = false;
    bool valid = true;
    std::string error;
};

inline std::vector<GridRow> grid_report(const std::vector<GridEntry>& entries, double slack) {
    if (entries.empty()) throw std::invalid_argument("grid_report: no configs");
    std::vector<GridRow> rows;
    for (const auto& e : entries) {
        GridRow row;
        row.id = e.id;
        row.ffm = e.config.ff_expansion;
        row.ncb = e.config.conv_only_blocks;
        row.tb = e.config.total_blocks;
        row.error = e.error;
        if (row.error.empty()) {
            try {
                const CostReport r = cost_report(e.config);
                row.params = r.params;
                row.flops = r.flops_per_frame;
                row.states = r.states_per_frame;
                row.within_size = double(r.params) < double(kSizeBudget) * (1.0 + slack);
                row.within_flops = double(r.flops_per_frame) < double(kFlopsBudget) * (1.0 + slack);
            } catch (const std::exception& ex) {
                row.error = ex.what();
            }
        }
        row.valid = row.error.empty();
        rows.push_back(std::move(row));
    }
    return rows;
}

inline std::string grid_csv(const std::vector<GridRow>& rows) {
    std::ostringstream out;
    out << "id,ffm,ncb,tb,params,flops,states,within_size,within_flops\n";
    for (const auto& r : rows) {
        out << r.id << ',' << r.ffm << ',' << r.ncb << ',' << r.tb << ',';
        if (r.valid) {
            out << r.params << ',' << r.flops << ',' << r.states << ',' << (r.within_size ? "true" : "false") << ','
                << (r.within_flops ? "true" : "false") << '\n';
        } else {
            out << ",,,invalid,invalid\n";
        }
    }
    return out.str();
}

inline std::string grid_text(const std::vector<GridRow>& rows) {
    std::ostringstream out;
    out << std::left << std::setw(8) << "id" << std::right << std::setw(5) << "FFM" << std::setw(5) << "NCB"
        << std::setw(5) << "TB" << std::setw(11) << "size(M)" << std::setw(11) << "flops(M)" << std::setw(10)
        << "states" << "  flags\n";
    for (const auto& r : rows) {
        out << std::left << std::setw(8) << r.id << std::right << std::setw(5) << r.ffm << std::setw(5) << r.ncb
            << std::setw(5) << r.tb;
        if (!r.valid) {
            out << "  INVALID: " << r.error << '\n';
            continue;
        }
        out << std::fixed << std::setprecision(1) << std::setw(11) << double(r.params) / 1e6 << std::setw(11)
            << double(r.flops) / 1e6 << std::setw(10) << r.states << "  " << (r.within_size ? "size-ok" : "size-over")
            << ' ' << (r.within_flops ? "flops-ok" : "flops-over") << '\n';
    }
    return out.str();
}

inline std::string cost_report_text(const CostReport& r, bool with_breakdown = true) {
    std::ostringstream out;
    out << "params            " << r.params << "\n"
        << "flops_per_frame   " << r.flops_per_frame << "\n"
        << "states_per_frame  " << r.states_per_frame << "\n"
        << "states_physical   " << r.states_physical << "\n";
    if (with_breakdown) {
        out << "breakdown:\n";
        for (const auto& e : r.breakdown) {
            out << "  " << std::left << std::setw(10) << (e.block ? "block" + std::to_string(*e.block) : "-")
                << std::setw(12) << e.module << std::right << " params=" << e.params << " flops=" << e.flops
                << " states=" << e.states << " physical=" << e.states_physical << '\n';
        }
    }
    return out.str();
}

inline std::string cost_report_csv(const CostReport& r) {
    std::ostringstream out;
    out << "block,module,params,flops,states,states_physical\n";
    for (const auto& e : r.breakdown) {
        out << (e.block ? std::to_string(*e.block) : "") << ',' << e.module << ',' << e.params << ',' << e.flops << ','
            << e.states << ',' << e.states_physical << '\n';
    }
    out << "total,," << r.params << ',' << r.flops_per_frame << ',' << r.states_per_frame << ',' << r.states_physical
        << '\n';
    return out.str();
}

} // namespace streamformer
