#pragma once

// Cascaded encoder: a non-causal second pass that reads only first-pass
// outputs, with a bounded total right context.

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "streamformer/conformer.hpp"

namespace streamformer {

struct CascadeConfig {
    std::size_t blocks = 5;
    std::size_t right_context = 30; // total lookahead frames across attention layers
    std::size_t model_dim = 512;
    std::size_t ff_expansion = 4;
    std::size_t heads = 8;
    std::size_t conv_kernel = 15;
    std::size_t left_context = 23;
    bool centered_conv = true; // false keeps second-pass convolutions causal
    AttentionKind attention_kind = AttentionKind::explicit_local;
    KernelConfig kernel;
    double layernorm_eps = 1e-5;
    double normalizer_eps = kDefaultNormalizerEps;

    std::size_t head_dim() const { return model_dim / heads; }

    // Lookahead of attention layer `layer`: R / blocks each, remainder to the
    // first layer, so the layers sum to R.
    std::size_t layer_right_context(std::size_t layer) const {
        const std::size_t share = right_context / blocks;
        return layer == 0 ? share + right_context % blocks : share;
    }

    std::size_t conv_right_reach() const { return centered_conv ? (conv_kernel - 1) / 2 : 0; }
    std::size_t conv_left_reach() const { return conv_kernel - 1 - conv_right_reach(); }

    // Frames of first-pass lookahead reachable by one output frame. Only
    // meaningful for explicit attention: the bidirectional performer sees the
    // whole utterance.
    std::size_t total_lookahead() const {
        const std::size_t attn = attention_kind == AttentionKind::explicit_local ? right_context : 0;
        return attn + blocks * conv_right_reach();
    }

    void validate() const {
        auto fail = [](const std::string& msg) { throw std::invalid_argument("cascade config: " + msg); };
        if (blocks == 0) fail("blocks must be >= 1");
        if (model_dim == 0) fail("model_dim must be >= 1");
        if (ff_expansion == 0) fail("ff_expansion must be >= 1");
        if (heads == 0 || model_dim % heads != 0) {
            fail("model_dim " + std::to_string(model_dim) + " not divisible by heads " + std::to_string(heads));
        }
        if (conv_kernel == 0) fail("conv_kernel must be >= 1");
        if (!(layernorm_eps > 0) || !(normalizer_eps > 0)) fail("eps values must be positive");
    }

    bool operator==(const CascadeConfig&) const = default;
};

inline std::string canonical_string(const CascadeConfig& c) {
    std::string s = "blocks=" + std::to_string(c.blocks) + ";right_context=" + std::to_string(c.right_context) +
                    ";model_dim=" + std::to_string(c.model_dim) + ";ff_expansion=" + std::to_string(c.ff_expansion) +
                    ";heads=" + std::to_string(c.heads) + ";conv_kernel=" + std::to_string(c.conv_kernel) +
                    ";left_context=" + std::to_string(c.left_context) +
                    ";centered_conv=" + (c.centered_conv ? "1" : "0") +
                    ";attention_kind=" + std::string(to_string(c.attention_kind)) + ";";
    if (c.attention_kind == AttentionKind::performer) {
        s += "kernel.kind=" + std::string(to_string(c.kernel.kind)) +
             ";kernel.use_affine=" + (c.kernel.use_affine ? "1" : "0") +
             ";kernel.feature_dim=" + std::to_string(c.kernel.feature_dim) + ";";
    }
    return s;
}

template <typename T>
struct CascadeWeights {
    // first-pass width -> second-pass width; empty when the widths match
    Matrix<T> projection;
    std::vector<T> projection_bias;
    std::vector<BlockWeights<T>> blocks;
};

inline AttentionShape cascade_attention_shape(const CascadeConfig& c, std::size_t layer) {
    return {c.attention_kind, c.heads, c.left_context, c.layer_right_context(layer), c.kernel};
}

template <typename T>
CascadeWeights<T> allocate_cascade_weights(const CascadeConfig& c, std::size_t first_pass_dim) {
    c.validate();
    CascadeWeights<T> w;
    if (first_pass_dim != c.model_dim) {
        w.projection = Matrix<T>(first_pass_dim, c.model_dim);
        w.projection_bias.assign(c.model_dim, T(0));
    }
    for (std::size_t i = 0; i < c.blocks; ++i) {
        w.blocks.push_back(allocate_block<T>(c.model_dim, c.ff_expansion, c.conv_kernel, cascade_attention_shape(c, i)));
    }
    return w;
}

template <typename W, typename Fn>
void for_each_cascade_tensor(W& weights, Fn&& fn, const std::string& prefix = "cascade") {
    if (!weights.projection.empty()) {
        detail::visit_matrix(prefix + ".projection.weight", weights.projection, weights.projection.rows(), fn);
        detail::visit_vector(prefix + ".projection.bias", weights.projection_bias, TensorInit::bias, fn);
    }
    for (std::size_t i = 0; i < weights.blocks.size(); ++i) {
        for_each_block_tensor(prefix + ".block" + std::to_string(i), weights.blocks[i], fn);
    }
}

template <typename T>
CascadeWeights<T> init_cascade_weights(const CascadeConfig& c, std::size_t first_pass_dim, Rng& rng) {
    CascadeWeights<T> w = allocate_cascade_weights<T>(c, first_pass_dim);
    for_each_cascade_tensor(w, [&](const TensorInfo& info, std::span<T> values) { fill_initial_values(values, info, rng); });
    return w;
}

template <typename T>
std::uint64_t cascade_parameter_count(const CascadeWeights<T>& w) {
    std::uint64_t n = 0;
    for_each_cascade_tensor(w, [&](const TensorInfo&, auto values) { n += values.size(); });
    return n;
}

template <typename T>
Matrix<T> second_pass_forward(const Matrix<T>& first_pass_out, const CascadeWeights<T>& w, const CascadeConfig& c) {
    c.validate();
    if (w.blocks.size() != c.blocks) {
        throw std::invalid_argument("second_pass_forward: " + std::to_string(w.blocks.size()) + " blocks for config " +
                                    std::to_string(c.blocks));
    }
    Matrix<T> x;
    if (w.projection.empty()) {
        if (first_pass_out.cols() != c.model_dim) {
            throw std::invalid_argument("second_pass_forward: input " + shape_string(first_pass_out) +
                                        " without projection for model_dim " + std::to_string(c.model_dim));
        }
        x = first_pass_out;
    } else {
        if (first_pass_out.cols() != w.projection.rows()) {
            throw std::invalid_argument("second_pass_forward: input " + shape_string(first_pass_out) +
                                        " for projection " + shape_string(w.projection));
        }
        x = linear<T>(first_pass_out, w.projection, w.projection_bias);
    }
    const T ln_eps = T(c.layernorm_eps);
    const std::size_t conv_left = c.conv_left_reach();
    for (std::size_t i = 0; i < w.blocks.size(); ++i) {
        const BlockWeights<T>& bw = w.blocks[i];
        if (!bw.attn) throw std::invalid_argument("second_pass_forward: block without attention");
        const AttentionShape shape = cascade_attention_shape(c, i);
        x = block_pipeline<T>(
            x, bw, ln_eps, [&](const Matrix<T>& y) { return conv_module(y, bw.conv, ln_eps, conv_left); },
            [&](const Matrix<T>& y) {
                return attention_module(y, *bw.attn, shape, false, ln_eps, T(c.normalizer_eps));
            });
    }
    return x;
}

template <typename T>
struct CascadeOutput {
    Matrix<T> first;
    Matrix<T> second;
};

// The first pass runs once; its output is returned as-is and is the only
// input the second pass sees.
template <typename T>
CascadeOutput<T> cascade_forward(const Matrix<T>& features, const EncoderWeights<T>& enc_weights,
                                 const EncoderConfig& enc_cfg, const CascadeWeights<T>& cas_weights,
                                 const CascadeConfig& cas_cfg) {
    CascadeOutput<T> out;
    out.first = encoder_forward(features, enc_weights, enc_cfg);
    out.second = second_pass_forward(out.first, cas_weights, cas_cfg);
    return out;
}

} // namespace streamformer
