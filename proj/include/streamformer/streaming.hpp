#pragma once

// Chunked streaming inference. Feeding any chunking of a sequence through
// step() reproduces encoder_forward on the whole sequence.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "streamformer/attention.hpp"
#include "streamformer/conformer.hpp"
#include "streamformer/numerics.hpp"

namespace streamformer {

template <typename T>
struct BlockStreamState {
    Matrix<T> conv_history; // last k-1 depthwise inputs, oldest first; zero before the stream starts
    std::optional<LocalKVCache<T>> kv_cache;
    std::vector<PrefixSumState<T>> prefix_sums; // one per head
};

template <typename T>
struct StreamState {
    std::vector<BlockStreamState<T>> blocks;
    std::size_t frames_emitted = 0;
};

template <typename T>
StreamState<T> init_state(const EncoderConfig& cfg) {
    cfg.validate();
    StreamState<T> s;
    for (std::size_t i = 0; i < cfg.total_blocks; ++i) {
        BlockStreamState<T> b;
        b.conv_history = Matrix<T>(cfg.conv_kernel - 1, cfg.model_dim);
        if (cfg.block_has_attention(i)) {
            if (cfg.attention_kind == AttentionKind::explicit_local) {
                b.kv_cache.emplace(cfg.attn_left_context, cfg.model_dim);
            } else {
                b.prefix_sums.assign(cfg.heads, PrefixSumState<T>(cfg.feature_dim(), cfg.head_dim()));
            }
        }
        s.blocks.push_back(std::move(b));
    }
    return s;
}

// Consumes `chunk` (c x input_dim, c >= 0) and returns the c encoder output
// frames for it.
template <typename T>
Matrix<T> step(StreamState<T>& state, const Matrix<T>& chunk, const EncoderWeights<T>& w, const EncoderConfig& cfg) {
    if (chunk.cols() != cfg.input_dim && !(chunk.rows() == 0 && chunk.cols() == 0)) {
        throw std::invalid_argument("step: chunk " + shape_string(chunk) + " for input_dim " +
                                    std::to_string(cfg.input_dim));
    }
    if (state.blocks.size() != cfg.total_blocks || w.blocks.size() != cfg.total_blocks) {
        throw std::invalid_argument("step: state/weights do not match config");
    }
    if (chunk.rows() == 0) return Matrix<T>(0, cfg.model_dim);

    const T ln_eps = T(cfg.layernorm_eps);
    const T norm_eps = T(cfg.normalizer_eps);
    Matrix<T> x = linear<T>(chunk, w.frontend, w.frontend_bias);
    for (std::size_t i = 0; i < w.blocks.size(); ++i) {
        const BlockWeights<T>& bw = w.blocks[i];
        BlockStreamState<T>& bs = state.blocks[i];
        if (bw.attn.has_value() != cfg.block_has_attention(i)) {
            throw std::invalid_argument("step: block " + std::to_string(i) + " attention presence mismatch");
        }
        x = block_pipeline<T>(
            x, bw, ln_eps, [&](const Matrix<T>& y) { return conv_module_step(y, bw.conv, ln_eps, bs.conv_history); },
            [&](const Matrix<T>& y) {
                const Matrix<T> normed = layernorm(y, bw.attn->norm, ln_eps);
                Matrix<T> out = y;
                if (cfg.attention_kind == AttentionKind::explicit_local) {
                    add_scaled_inplace(out, explicit_attention_step(normed, bw.attn->params, *bs.kv_cache), T(1));
                } else {
                    add_scaled_inplace(
                        out, performer_attention_step(normed, bw.attn->params, bw.attn->kernel, bs.prefix_sums, norm_eps),
                        T(1));
                }
                return out;
            });
    }
    state.frames_emitted += chunk.rows();
    return x;
}

// Cached-scalar counts. The compact convention counts d scalars per cached
// attention frame (keys and values are not double counted); the physical
// figures count keys and values separately and add the conv histories.
struct StateCensus {
    std::uint64_t scalars_held = 0;
    std::uint64_t scalars_capacity = 0;
    std::uint64_t physical_held = 0;
    std::uint64_t physical_capacity = 0;
};

template <typename T>
StateCensus state_census(const StreamState<T>& state) {
    StateCensus c;
    for (const auto& b : state.blocks) {
        const std::uint64_t hist_rows = b.conv_history.rows();
        const std::uint64_t width = b.conv_history.cols();
        c.physical_capacity += hist_rows * width;
        c.physical_held += std::min<std::uint64_t>(hist_rows, state.frames_emitted) * width;
        if (b.kv_cache) {
            const std::uint64_t held = std::uint64_t(b.kv_cache->size()) * b.kv_cache->width();
            c.scalars_held += held;
            c.scalars_capacity += b.kv_cache->capacity_scalars();
            c.physical_held += 2 * held;
            c.physical_capacity += 2 * b.kv_cache->capacity_scalars();
        }
        for (const auto& ps : b.prefix_sums) {
            const std::uint64_t held = ps.frames_seen > 0 ? ps.scalars() : 0;
            c.scalars_held += held;
            c.scalars_capacity += ps.scalars();
            c.physical_held += held;
            c.physical_capacity += ps.scalars();
        }
    }
    return c;
}

// Runs `frames` through step() in chunks of `chunk_size` and concatenates
// the outputs.
template <typename T>
Matrix<T> stream_in_chunks(const Matrix<T>& frames, std::span<const std::size_t> chunk_sizes,
                           const EncoderWeights<T>& w, const EncoderConfig& cfg) {
    StreamState<T> state = init_state<T>(cfg);
    Matrix<T> out(0, cfg.model_dim);
    std::size_t pos = 0;
    for (std::size_t c : chunk_sizes) {
        const std::size_t end = std::min(frames.rows(), pos + c);
        out.append_rows(step(state, frames.slice_rows(pos, end), w, cfg));
        pos = end;
    }
    if (pos != frames.rows()) out.append_rows(step(state, frames.slice_rows(pos, frames.rows()), w, cfg));
    return out;
}

} // namespace streamformer
