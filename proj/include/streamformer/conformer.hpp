#pragma once

// Conformer blocks (FF -> conv -> self-attention -> FF -> layernorm),
// conv-only blocks, and the causal encoder stack.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "streamformer/attention.hpp"
#include "streamformer/numerics.hpp"

namespace streamformer {

// ─── Configuration ───────────────────────────────────────────────────────────

enum class AttentionKind { explicit_local, performer };

inline AttentionKind parse_attention_kind(std::string_view name) {
    if (name == "explicit") return AttentionKind::explicit_local;
    if (name == "performer") return AttentionKind::performer;
    throw std::invalid_argument("unknown attention kind '" + std::string(name) + "'");
}

inline std::string_view to_string(AttentionKind k) {
    return k == AttentionKind::explicit_local ? "explicit" : "performer";
}

struct KernelConfig {
    KernelKind kind = KernelKind::relu;
    bool use_affine = true;
    std::size_t feature_dim = 0; // affine r'; 0 selects head_dim

    bool operator==(const KernelConfig&) const = default;
};

struct EncoderConfig {
    std::size_t input_dim = 144; // 128 log-mel + 16 domain id
    std::size_t model_dim = 512;
    std::size_t total_blocks = 12;
    std::size_t conv_only_blocks = 0;
    std::size_t ff_expansion = 2;
    std::size_t heads = 8;
    std::size_t conv_kernel = 15;
    std::size_t attn_left_context = 23;
    AttentionKind attention_kind = AttentionKind::explicit_local;
    KernelConfig kernel;
    double layernorm_eps = 1e-5;
    double normalizer_eps = kDefaultNormalizerEps;
    std::uint64_t seed = 0;

    std::size_t head_dim() const { return model_dim / heads; }
    std::size_t attention_blocks() const { return total_blocks - conv_only_blocks; }
    bool block_has_attention(std::size_t i) const { return i >= conv_only_blocks; }

    // Performer feature dimension r.
    std::size_t feature_dim() const {
        if (!kernel.use_affine) return head_dim();
        return kernel.feature_dim ? kernel.feature_dim : head_dim();
    }

    void validate() const {
        auto fail = [](const std::string& msg) { throw std::invalid_argument("encoder config: " + msg); };
        if (input_dim == 0) fail("input_dim must be >= 1");
        if (model_dim == 0) fail("model_dim must be >= 1");
        if (total_blocks == 0) fail("total_blocks must be >= 1");
        if (conv_only_blocks > total_blocks) {
            fail("conv_only_blocks " + std::to_string(conv_only_blocks) + " exceeds total_blocks " +
                 std::to_string(total_blocks));
        }
        if (ff_expansion == 0) fail("ff_expansion must be >= 1");
        if (heads == 0 || model_dim % heads != 0) {
            fail("model_dim " + std::to_string(model_dim) + " not divisible by heads " + std::to_string(heads));
        }
        if (conv_kernel == 0) fail("conv_kernel must be >= 1");
        if (!(layernorm_eps > 0)) fail("layernorm_eps must be positive");
        if (!(normalizer_eps > 0)) fail("normalizer_eps must be positive");
    }

    std::vector<std::string> warnings() const {
        std::vector<std::string> out;
        if (attention_kind == AttentionKind::performer && attention_blocks() > 0 &&
            kernel_can_be_negative(kernel.kind)) {
            out.push_back("kernel '" + std::string(to_string(kernel.kind)) +
                          "' can produce negative features; attention normalizer may vanish");
        }
        return out;
    }

    bool operator==(const EncoderConfig&) const = default;
};

// Canonical one-line description; the seed is excluded because it does not
// change the architecture.
inline std::string canonical_string(const EncoderConfig& c) {
    std::string s;
    auto put = [&](std::string_view key, const std::string& value) {
        s += key;
        s += '=';
        s += value;
        s += ';';
    };
    put("input_dim", std::to_string(c.input_dim));
    put("model_dim", std::to_string(c.model_dim));
    put("total_blocks", std::to_string(c.total_blocks));
    put("conv_only_blocks", std::to_string(c.conv_only_blocks));
    put("ff_expansion", std::to_string(c.ff_expansion));
    put("heads", std::to_string(c.heads));
    put("conv_kernel", std::to_string(c.conv_kernel));
    put("attn_left_context", std::to_string(c.attn_left_context));
    put("attention_kind", std::string(to_string(c.attention_kind)));
    if (c.attention_kind == AttentionKind::performer) {
        put("kernel.kind", std::string(to_string(c.kernel.kind)));
        put("kernel.use_affine", c.kernel.use_affine ? "1" : "0");
        put("kernel.feature_dim", std::to_string(c.feature_dim()));
    }
    return s;
}

inline std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t h = 0xcbf29ce484222325ULL) {
    for (unsigned char ch : bytes) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::uint64_t config_digest(const EncoderConfig& c) { return fnv1a64(canonical_string(c)); }

// ─── Weights ─────────────────────────────────────────────────────────────────

template <typename T>
struct FeedForwardWeights {
    LayerNormParams<T> norm;
    Matrix<T> w_in; // d x (FFM d)
    std::vector<T> b_in;
    Matrix<T> w_out; // (FFM d) x d
    std::vector<T> b_out;
};

template <typename T>
struct ConvWeights {
    LayerNormParams<T> norm;
    Matrix<T> pointwise_in; // d x 2d, GLU halves it back to d
    std::vector<T> pointwise_in_bias;
    Matrix<T> depthwise; // k x d
    std::vector<T> depthwise_bias;
    LayerNormParams<T> conv_norm;
    Matrix<T> pointwise_out; // d x d
    std::vector<T> pointwise_out_bias;
};

template <typename T>
struct AttentionModuleWeights {
    LayerNormParams<T> norm;
    AttentionParams<T> params;
    KernelSpec<T> kernel; // performer only
};

template <typename T>
struct BlockWeights {
    FeedForwardWeights<T> ff1;
    ConvWeights<T> conv;
    std::optional<AttentionModuleWeights<T>> attn; // absent for conv-only blocks
    FeedForwardWeights<T> ff2;
    LayerNormParams<T> final_norm;
};

template <typename T>
struct EncoderWeights {
    Matrix<T> frontend; // input_dim x d
    std::vector<T> frontend_bias;
    std::vector<BlockWeights<T>> blocks;
};

// Shape of one attention module inside a block.
struct AttentionShape {
    AttentionKind kind = AttentionKind::explicit_local;
    std::size_t heads = 1;
    std::size_t left = 0;  // past frames visible (explicit)
    std::size_t right = 0; // future frames visible (explicit)
    KernelConfig kernel;   // performer
};

namespace detail {

template <typename T>
FeedForwardWeights<T> allocate_ff(std::size_t d, std::size_t ffm) {
    return {LayerNormParams<T>::unit(d), Matrix<T>(d, ffm * d), std::vector<T>(ffm * d), Matrix<T>(ffm * d, d),
            std::vector<T>(d)};
}

template <typename T>
ConvWeights<T> allocate_conv(std::size_t d, std::size_t k) {
    return {LayerNormParams<T>::unit(d), Matrix<T>(d, 2 * d), std::vector<T>(2 * d), Matrix<T>(k, d),
            std::vector<T>(d), LayerNormParams<T>::unit(d), Matrix<T>(d, d), std::vector<T>(d)};
}

template <typename T>
AttentionModuleWeights<T> allocate_attention(std::size_t d, const AttentionShape& shape) {
    AttentionModuleWeights<T> a;
    a.norm = LayerNormParams<T>::unit(d);
    a.params.heads = shape.heads;
    a.params.wq = Matrix<T>(d, d);
    a.params.wk = Matrix<T>(d, d);
    a.params.wv = Matrix<T>(d, d);
    a.params.wo = Matrix<T>(d, d);
    if (shape.kind == AttentionKind::explicit_local) {
        a.params.relpos_bias = Matrix<T>(shape.heads, shape.left + shape.right + 1);
    } else {
        a.kernel.kind = shape.kernel.kind;
        a.kernel.use_affine = shape.kernel.use_affine;
        if (shape.kernel.use_affine) {
            const std::size_t hd = d / shape.heads;
            const std::size_t r = shape.kernel.feature_dim ? shape.kernel.feature_dim : hd;
            a.kernel.weight = Matrix<T>(r, hd);
            a.kernel.bias.assign(r, T(0));
        }
    }
    return a;
}

} // namespace detail

template <typename T>
BlockWeights<T> allocate_block(std::size_t d, std::size_t ffm, std::size_t conv_kernel,
                               const std::optional<AttentionShape>& attn) {
    BlockWeights<T> b;
    b.ff1 = detail::allocate_ff<T>(d, ffm);
    b.conv = detail::allocate_conv<T>(d, conv_kernel);
    if (attn) b.attn = detail::allocate_attention<T>(d, *attn);
    b.ff2 = detail::allocate_ff<T>(d, ffm);
    b.final_norm = LayerNormParams<T>::unit(d);
    return b;
}

inline AttentionShape encoder_attention_shape(const EncoderConfig& cfg) {
    return {cfg.attention_kind, cfg.heads, cfg.attn_left_context, 0, cfg.kernel};
}

// Zero weights, unit layernorm gains, correctly shaped for cfg.
template <typename T>
EncoderWeights<T> allocate_weights(const EncoderConfig& cfg) {
    cfg.validate();
    EncoderWeights<T> w;
    w.frontend = Matrix<T>(cfg.input_dim, cfg.model_dim);
    w.frontend_bias.assign(cfg.model_dim, T(0));
    for (std::size_t i = 0; i < cfg.total_blocks; ++i) {
        std::optional<AttentionShape> attn;
        if (cfg.block_has_attention(i)) attn = encoder_attention_shape(cfg);
        w.blocks.push_back(allocate_block<T>(cfg.model_dim, cfg.ff_expansion, cfg.conv_kernel, attn));
    }
    return w;
}

// ─── Tensor traversal ────────────────────────────────────────────────────────

enum class TensorInit { weight, bias, gain };

struct TensorInfo {
    std::string name;
    std::vector<std::size_t> dims;
    TensorInit init = TensorInit::weight;
    std::size_t fan_in = 0;
};

namespace detail {

// Matrix-like and vector-like members share one visitation path; W is either
// T or const T so the same code serves readers and writers.
template <typename M, typename Fn>
void visit_matrix(const std::string& name, M& m, std::size_t fan_in, Fn& fn) {
    fn(TensorInfo{name, {m.rows(), m.cols()}, TensorInit::weight, fan_in}, m.values());
}

template <typename V, typename Fn>
void visit_vector(const std::string& name, V& v, TensorInit init, Fn& fn) {
    using E = std::remove_reference_t<decltype(v[0])>;
    fn(TensorInfo{name, {v.size()}, init, 0}, std::span<E>(v.data(), v.size()));
}

template <typename N, typename Fn>
void visit_norm(const std::string& name, N& n, Fn& fn) {
    visit_vector(name + ".gamma", n.gamma, TensorInit::gain, fn);
    visit_vector(name + ".beta", n.beta, TensorInit::bias, fn);
}

template <typename F, typename Fn>
void visit_ff(const std::string& name, F& f, Fn& fn) {
    visit_norm(name + ".norm", f.norm, fn);
    visit_matrix(name + ".w_in", f.w_in, f.w_in.rows(), fn);
    visit_vector(name + ".b_in", f.b_in, TensorInit::bias, fn);
    visit_matrix(name + ".w_out", f.w_out, f.w_out.rows(), fn);
    visit_vector(name + ".b_out", f.b_out, TensorInit::bias, fn);
}

template <typename C, typename Fn>
void visit_conv(const std::string& name, C& c, Fn& fn) {
    visit_norm(name + ".norm", c.norm, fn);
    visit_matrix(name + ".pointwise_in", c.pointwise_in, c.pointwise_in.rows(), fn);
    visit_vector(name + ".pointwise_in_bias", c.pointwise_in_bias, TensorInit::bias, fn);
    visit_matrix(name + ".depthwise", c.depthwise, c.depthwise.rows(), fn);
    visit_vector(name + ".depthwise_bias", c.depthwise_bias, TensorInit::bias, fn);
    visit_norm(name + ".conv_norm", c.conv_norm, fn);
    visit_matrix(name + ".pointwise_out", c.pointwise_out, c.pointwise_out.rows(), fn);
    visit_vector(name + ".pointwise_out_bias", c.pointwise_out_bias, TensorInit::bias, fn);
}

template <typename A, typename Fn>
void visit_attention(const std::string& name, A& a, Fn& fn) {
    visit_norm(name + ".norm", a.norm, fn);
    visit_matrix(name + ".wq", a.params.wq, a.params.wq.rows(), fn);
    visit_matrix(name + ".wk", a.params.wk, a.params.wk.rows(), fn);
    visit_matrix(name + ".wv", a.params.wv, a.params.wv.rows(), fn);
    visit_matrix(name + ".wo", a.params.wo, a.params.wo.rows(), fn);
    if (!a.params.relpos_bias.empty()) {
        auto& m = a.params.relpos_bias;
        using E = std::remove_reference_t<decltype(*m.data())>;
        fn(TensorInfo{name + ".relpos_bias", {m.rows(), m.cols()}, TensorInit::bias, 0},
           std::span<E>(m.data(), m.size()));
    }
    if (a.kernel.use_affine) {
        // r' x head_dim applied as W x, so fan-in is the column count
        visit_matrix(name + ".kernel.weight", a.kernel.weight, a.kernel.weight.cols(), fn);
        visit_vector(name + ".kernel.bias", a.kernel.bias, TensorInit::bias, fn);
    }
}

} // namespace detail

template <typename B, typename Fn>
void for_each_block_tensor(const std::string& prefix, B& block, Fn&& fn) {
    detail::visit_ff(prefix + ".ff1", block.ff1, fn);
    detail::visit_conv(prefix + ".conv", block.conv, fn);
    if (block.attn) detail::visit_attention(prefix + ".attn", *block.attn, fn);
    detail::visit_ff(prefix + ".ff2", block.ff2, fn);
    detail::visit_norm(prefix + ".final_norm", block.final_norm, fn);
}

// Visits every weight tensor in a fixed order with a stable name. Works on
// const and mutable weights.
template <typename W, typename Fn>
void for_each_tensor(W& weights, Fn&& fn, const std::string& prefix = "encoder") {
    detail::visit_matrix(prefix + ".frontend.weight", weights.frontend, weights.frontend.rows(), fn);
    detail::visit_vector(prefix + ".frontend.bias", weights.frontend_bias, TensorInit::bias, fn);
    for (std::size_t i = 0; i < weights.blocks.size(); ++i) {
        for_each_block_tensor(prefix + ".block" + std::to_string(i), weights.blocks[i], fn);
    }
}

template <typename W>
std::uint64_t parameter_count(const W& weights) {
    std::uint64_t n = 0;
    for_each_tensor(weights, [&](const TensorInfo&, auto values) { n += values.size(); });
    return n;
}

// Uniform(+-1/sqrt(fan_in)) for weight matrices, zero biases, unit gains.
// Values are drawn at 32-bit precision so every precision holds the same
// numbers and the 32-bit weight container round-trips them exactly.
template <typename T>
void fill_initial_values(std::span<T> values, const TensorInfo& info, Rng& rng) {
    switch (info.init) {
    case TensorInit::gain: std::fill(values.begin(), values.end(), T(1)); break;
    case TensorInit::bias: std::fill(values.begin(), values.end(), T(0)); break;
    case TensorInit::weight: {
        const float bound = 1.0f / std::sqrt(float(info.fan_in));
        for (auto& v : values) v = T(float(rng.uniform(-1.0, 1.0)) * bound);
        break;
    }
    }
}

template <typename T>
EncoderWeights<T> init_weights(const EncoderConfig& cfg, Rng& rng) {
    EncoderWeights<T> w = allocate_weights<T>(cfg);
    for_each_tensor(w, [&](const TensorInfo& info, std::span<T> values) { fill_initial_values(values, info, rng); });
    return w;
}

template <typename T>
EncoderWeights<T> init_weights(const EncoderConfig& cfg) {
    Rng rng(cfg.seed);
    return init_weights<T>(cfg, rng);
}

template <typename T>
void check_weights(const EncoderConfig& cfg, const EncoderWeights<T>& w) {
    cfg.validate();
    auto fail = [](const std::string& msg) { throw std::invalid_argument("weights do not match config: " + msg); };
    if (w.frontend.rows() != cfg.input_dim || w.frontend.cols() != cfg.model_dim ||
        w.frontend_bias.size() != cfg.model_dim) {
        fail("frontend " + shape_string(w.frontend) + " for input_dim " + std::to_string(cfg.input_dim) +
             ", model_dim " + std::to_string(cfg.model_dim));
    }
    if (w.blocks.size() != cfg.total_blocks) {
        fail(std::to_string(w.blocks.size()) + " blocks for total_blocks " + std::to_string(cfg.total_blocks));
    }
    const EncoderWeights<T> expected = allocate_weights<T>(cfg);
    std::vector<TensorInfo> want, have;
    for_each_tensor(expected, [&](const TensorInfo& i, auto) { want.push_back(i); });
    for_each_tensor(w, [&](const TensorInfo& i, auto) { have.push_back(i); });
    if (want.size() != have.size()) {
        fail(std::to_string(have.size()) + " tensors, expected " + std::to_string(want.size()));
    }
    for (std::size_t i = 0; i < want.size(); ++i) {
        if (want[i].name != have[i].name || want[i].dims != have[i].dims) fail("tensor " + have[i].name);
    }
}

// ─── Modules ─────────────────────────────────────────────────────────────────

// x + 0.5 * (swish(LN(x) W_in + b_in) W_out + b_out)
template <typename T>
Matrix<T> ff_module(const Matrix<T>& x, const FeedForwardWeights<T>& w, T ln_eps) {
    if (w.w_in.rows() != x.cols() || w.w_out.cols() != x.cols() || w.w_in.cols() != w.w_out.rows()) {
        throw std::invalid_argument("ff_module: W_in " + shape_string(w.w_in) + ", W_out " + shape_string(w.w_out) +
                                    " for input " + shape_string(x));
    }
    const Matrix<T> hidden = activation(linear<T>(layernorm(x, w.norm, ln_eps), w.w_in, w.b_in), Activation::swish);
    Matrix<T> y = x;
    add_scaled_inplace(y, linear<T>(hidden, w.w_out, w.b_out), T(0.5));
    return y;
}

namespace detail {

template <typename T>
void check_conv_shapes(const Matrix<T>& x, const ConvWeights<T>& w) {
    const std::size_t d = x.cols();
    if (w.pointwise_in.rows() != d || w.pointwise_in.cols() != 2 * d || w.depthwise.cols() != d ||
        w.pointwise_out.rows() != d || w.pointwise_out.cols() != d) {
        throw std::invalid_argument("conv_module: pointwise_in " + shape_string(w.pointwise_in) + ", depthwise " +
                                    shape_string(w.depthwise) + ", pointwise_out " + shape_string(w.pointwise_out) +
                                    " for input " + shape_string(x));
    }
}

// Everything after the depthwise conv: LN -> swish -> pointwise_out -> residual.
template <typename T>
Matrix<T> conv_tail(const Matrix<T>& x, const Matrix<T>& conv_out, const ConvWeights<T>& w, T ln_eps) {
    const Matrix<T> act = activation(layernorm(conv_out, w.conv_norm, ln_eps), Activation::swish);
    Matrix<T> y = x;
    add_scaled_inplace(y, linear<T>(act, w.pointwise_out, w.pointwise_out_bias), T(1));
    return y;
}

template <typename T>
Matrix<T> conv_head(const Matrix<T>& x, const ConvWeights<T>& w, T ln_eps) {
    return activation(linear<T>(layernorm(x, w.norm, ln_eps), w.pointwise_in, w.pointwise_in_bias),
                      Activation::glu_gate);
}

} // namespace detail

// Convolution module with depthwise reach [t - left, t + (k - 1 - left)].
template <typename T>
Matrix<T> conv_module(const Matrix<T>& x, const ConvWeights<T>& w, T ln_eps, std::size_t left) {
    detail::check_conv_shapes(x, w);
    const Matrix<T> gated = detail::conv_head(x, w, ln_eps);
    return detail::conv_tail(x, depthwise_conv<T>(gated, w.depthwise, w.depthwise_bias, left), w, ln_eps);
}

// Causal convolution module:
// x + pointwise_out(swish(LN(depthwise_causal_conv(glu(pointwise_in(LN(x))))))).
template <typename T>
Matrix<T> conv_module(const Matrix<T>& x, const ConvWeights<T>& w, T ln_eps) {
    return conv_module(x, w, ln_eps, w.depthwise.rows() - 1);
}

// Streaming causal convolution module. `history` holds the k-1 most recent
// depthwise inputs and is advanced past this chunk.
template <typename T>
Matrix<T> conv_module_step(const Matrix<T>& x, const ConvWeights<T>& w, T ln_eps, Matrix<T>& history) {
    detail::check_conv_shapes(x, w);
    const Matrix<T> gated = detail::conv_head(x, w, ln_eps);
    Matrix<T> out = detail::conv_tail(
        x, depthwise_causal_conv<T>(history, gated, w.depthwise, w.depthwise_bias), w, ln_eps);
    const std::size_t keep = history.rows();
    if (keep > 0) {
        Matrix<T> joined = history;
        joined.append_rows(gated);
        history = joined.slice_rows(joined.rows() - keep, joined.rows());
    }
    return out;
}

template <typename T>
Matrix<T> attention_module(const Matrix<T>& x, const AttentionModuleWeights<T>& w, const AttentionShape& shape,
                           bool causal_performer, T ln_eps, T normalizer_eps) {
    const Matrix<T> normed = layernorm(x, w.norm, ln_eps);
    Matrix<T> y = x;
    if (shape.kind == AttentionKind::explicit_local) {
        add_scaled_inplace(y, windowed_attention(normed, w.params, shape.left, shape.right), T(1));
    } else {
        add_scaled_inplace(y, performer_attention(normed, w.params, w.kernel, causal_performer, normalizer_eps), T(1));
    }
    return y;
}

// FF -> conv -> attention (if present) -> FF -> layernorm. `conv` and `attn`
// map a T x d matrix to the module's residual output.
template <typename T, typename ConvFn, typename AttnFn>
Matrix<T> block_pipeline(const Matrix<T>& x, const BlockWeights<T>& w, T ln_eps, ConvFn&& conv, AttnFn&& attn) {
    Matrix<T> y = ff_module(x, w.ff1, ln_eps);
    y = conv(y);
    if (w.attn) y = attn(y);
    y = ff_module(y, w.ff2, ln_eps);
    return layernorm(y, w.final_norm, ln_eps);
}

template <typename T>
Matrix<T> causal_block(const Matrix<T>& x, const BlockWeights<T>& w, const EncoderConfig& cfg) {
    const T ln_eps = T(cfg.layernorm_eps);
    const AttentionShape shape = encoder_attention_shape(cfg);
    return block_pipeline<T>(
        x, w, ln_eps, [&](const Matrix<T>& y) { return conv_module(y, w.conv, ln_eps); },
        [&](const Matrix<T>& y) {
            return attention_module(y, *w.attn, shape, true, ln_eps, T(cfg.normalizer_eps));
        });
}

template <typename T>
Matrix<T> conformer_block(const Matrix<T>& x, const BlockWeights<T>& w, const EncoderConfig& cfg) {
    if (!w.attn) throw std::invalid_argument("conformer_block: block has no attention weights");
    return causal_block(x, w, cfg);
}

template <typename T>
Matrix<T> conv_only_block(const Matrix<T>& x, const BlockWeights<T>& w, const EncoderConfig& cfg) {
    if (w.attn) throw std::invalid_argument("conv_only_block: block carries attention weights");
    return causal_block(x, w, cfg);
}

// Input projection, NCB conv-only blocks, then TB - NCB conformer blocks.
template <typename T>
Matrix<T> encoder_forward(const Matrix<T>& features, const EncoderWeights<T>& w, const EncoderConfig& cfg) {
    check_weights(cfg, w);
    if (features.cols() != cfg.input_dim) {
        throw std::invalid_argument("encoder_forward: features " + shape_string(features) + " for input_dim " +
                                    std::to_string(cfg.input_dim));
    }
    Matrix<T> x = linear<T>(features, w.frontend, w.frontend_bias);
    for (std::size_t i = 0; i < w.blocks.size(); ++i) {
        x = cfg.block_has_attention(i) ? conformer_block(x, w.blocks[i], cfg) : conv_only_block(x, w.blocks[i], cfg);
    }
    return x;
}

} // namespace streamformer
