#pragma once

// Explicit local (windowed) softmax attention and kernelized performer
// attention, in batch and streaming form.

#include <atomic>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "streamformer/numerics.hpp"

namespace streamformer {

// ─── Parameters ──────────────────────────────────────────────────────────────

template <typename T>
struct AttentionParams {
    std::size_t heads = 1;
    Matrix<T> wq, wk, wv, wo; // d x d each, applied as x * W
    // heads x (window size). Column j is the bias for a key at offset
    // (right - j) relative to the query, i.e. column 0 is the furthest future
    // key and the last column the oldest past key. Empty means no bias.
    Matrix<T> relpos_bias;

    std::size_t model_dim() const { return wq.rows(); }
    std::size_t head_dim() const { return model_dim() / heads; }

    void validate() const {
        const std::size_t d = wq.rows();
        if (heads == 0 || d % heads != 0) {
            throw std::invalid_argument("attention: model_dim " + std::to_string(d) + " not divisible by heads " +
                                        std::to_string(heads));
        }
        for (const Matrix<T>* w : {&wq, &wk, &wv, &wo}) {
            if (w->rows() != d || w->cols() != d) {
                throw std::invalid_argument("attention: projection " + shape_string(*w) + " for model_dim " +
                                            std::to_string(d));
            }
        }
        if (!relpos_bias.empty() && relpos_bias.rows() != heads) {
            throw std::invalid_argument("attention: relpos_bias " + shape_string(relpos_bias) + " for " +
                                        std::to_string(heads) + " heads");
        }
    }
};

// ─── Kernel feature maps ─────────────────────────────────────────────────────

enum class KernelKind { relu, softplus, exp, elu, quartic };

inline KernelKind parse_kernel_kind(std::string_view name) {
    if (name == "relu") return KernelKind::relu;
    if (name == "softplus") return KernelKind::softplus;
    if (name == "exp") return KernelKind::exp;
    if (name == "elu") return KernelKind::elu;
    if (name == "quartic") return KernelKind::quartic;
    throw std::invalid_argument("unknown kernel kind '" + std::string(name) + "'");
}

inline std::string_view to_string(KernelKind k) {
    switch (k) {
    case KernelKind::relu: return "relu";
    case KernelKind::softplus: return "softplus";
    case KernelKind::exp: return "exp";
    case KernelKind::elu: return "elu";
    case KernelKind::quartic: return "quartic";
    }
    return "?";
}

inline constexpr KernelKind kAllKernelKinds[] = {KernelKind::relu, KernelKind::softplus, KernelKind::exp,
                                                 KernelKind::elu, KernelKind::quartic};

template <typename T>
T apply_kernel(KernelKind kind, T z) {
    switch (kind) {
    case KernelKind::relu: return z > T(0) ? z : T(0);
    case KernelKind::softplus: return z > T(0) ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
    case KernelKind::exp: return std::exp(z);
    case KernelKind::elu: return z > T(0) ? z : std::expm1(z);
    case KernelKind::quartic: {
        const T z2 = z * z;
        return z2 * z2;
    }
    }
    return z;
}

inline bool kernel_can_be_negative(KernelKind kind) { return kind == KernelKind::elu; }

template <typename T>
struct KernelSpec {
    KernelKind kind = KernelKind::relu;
    bool use_affine = false;
    Matrix<T> weight;      // r' x head_dim, present iff use_affine
    std::vector<T> bias;   // r'

    std::size_t feature_dim(std::size_t head_dim) const { return use_affine ? weight.rows() : head_dim; }

    void validate(std::size_t head_dim) const {
        if (!use_affine) return;
        if (weight.rows() == 0) throw std::invalid_argument("kernel: affine feature dim must be >= 1");
        if (weight.cols() != head_dim || bias.size() != weight.rows()) {
            throw std::invalid_argument("kernel: affine W " + shape_string(weight) + " / b " +
                                        std::to_string(bias.size()) + " for head_dim " + std::to_string(head_dim));
        }
    }
};

// Non-fatal configuration issues. A kernel that can emit negative features
// gives no guarantee that the normalizer stays away from zero.
template <typename T>
std::vector<std::string> kernel_warnings(const KernelSpec<T>& spec, bool normalized = true) {
    std::vector<std::string> out;
    if (normalized && kernel_can_be_negative(spec.kind)) {
        out.push_back("kernel '" + std::string(to_string(spec.kind)) +
                      "' can produce negative features; attention normalizer may vanish");
    }
    return out;
}

// phi(x) for one row: f(x) or f(W x + b).
template <typename T>
void feature_map_row(std::span<const T> x, const KernelSpec<T>& spec, std::span<T> out) {
    if (spec.use_affine) {
        const std::size_t r = spec.weight.rows();
        for (std::size_t l = 0; l < r; ++l) {
            auto w = spec.weight.row(l);
            T acc = 0;
            for (std::size_t j = 0; j < w.size(); ++j) acc += w[j] * x[j];
            out[l] = apply_kernel(spec.kind, acc + spec.bias[l]);
        }
        count_flops((2 * std::uint64_t(spec.weight.cols()) + 1 + flops::kActivationPerElement) * r);
    } else {
        for (std::size_t j = 0; j < x.size(); ++j) out[j] = apply_kernel(spec.kind, x[j]);
        count_flops(flops::kActivationPerElement * x.size());
    }
}

template <typename T>
Matrix<T> feature_map(const Matrix<T>& x, const KernelSpec<T>& spec) {
    spec.validate(x.cols());
    Matrix<T> out(x.rows(), spec.feature_dim(x.cols()));
    for (std::size_t i = 0; i < x.rows(); ++i) feature_map_row<T>(x.row(i), spec, out.row(i));
    return out;
}

// ─── Performer core ──────────────────────────────────────────────────────────

inline constexpr double kDefaultNormalizerEps = 1e-6;

namespace detail {
struct FaultFlags {
    std::atomic<bool> corrupt_performer_normalization{false};
};
inline FaultFlags& fault_flags() {
    static FaultFlags flags;
    return flags;
}
} // namespace detail

// Test hook for the verification suites: when enabled, performer outputs are
// scaled by a wrong normalizer.
inline void set_performer_normalization_fault(bool enabled) {
    detail::fault_flags().corrupt_performer_normalization.store(enabled);
}

template <typename T>
T clamp_normalizer(T den, T eps) {
    if (std::abs(den) < eps) return den < T(0) ? -eps : eps;
    return den;
}

// Running sum of outer products phi(k_j) [v_j, 1]^T. Row l of g_ps holds the
// feature-l slice: columns 0..head_dim-1 accumulate v, the last column the
// normalizer.
template <typename T>
struct PrefixSumState {
    Matrix<T> g_ps;
    std::size_t frames_seen = 0;

    PrefixSumState() = default;
    PrefixSumState(std::size_t feature_dim, std::size_t head_dim) : g_ps(feature_dim, head_dim + 1) {}

    std::size_t feature_dim() const { return g_ps.rows(); }
    std::size_t head_dim() const { return g_ps.cols() - 1; }
    std::size_t scalars() const { return g_ps.size(); }
};

namespace detail {

template <typename T>
void prefix_sum_accumulate(Matrix<T>& g, std::span<const T> k_feat, std::span<const T> v) {
    const std::size_t hd = v.size();
    for (std::size_t l = 0; l < k_feat.size(); ++l) {
        auto row = g.row(l);
        const T kl = k_feat[l];
        for (std::size_t j = 0; j < hd; ++j) row[j] += kl * v[j];
        row[hd] += kl;
    }
    count_flops(2 * std::uint64_t(k_feat.size()) * (hd + 1));
}

// out = numerator / clamp(denominator) with [numerator, denominator] = g^T q.
template <typename T>
void prefix_sum_readout(const Matrix<T>& g, std::span<const T> q_feat, T eps, std::span<T> out) {
    const std::size_t hd = g.cols() - 1;
    std::vector<T> acc(hd + 1, T(0));
    for (std::size_t l = 0; l < q_feat.size(); ++l) {
        auto row = g.row(l);
        const T ql = q_feat[l];
        for (std::size_t j = 0; j <= hd; ++j) acc[j] += row[j] * ql;
    }
    T den = clamp_normalizer(acc[hd], eps);
    if (fault_flags().corrupt_performer_normalization.load(std::memory_order_relaxed)) den *= T(1.25);
    for (std::size_t j = 0; j < hd; ++j) out[j] = acc[j] / den;
    count_flops(2 * std::uint64_t(q_feat.size()) * (hd + 1) + hd);
}

template <typename T>
void check_performer_shapes(const Matrix<T>& qp, const Matrix<T>& kp, const Matrix<T>& v) {
    if (qp.rows() != kp.rows() || qp.rows() != v.rows() || qp.cols() != kp.cols()) {
        throw std::invalid_argument("performer: Q' " + shape_string(qp) + ", K' " + shape_string(kp) + ", V " +
                                    shape_string(v));
    }
}

} // namespace detail

// D^-1 (Q' ((K')^T V)) with D = diag(Q' ((K')^T 1)). The T x T matrix is never
// formed.
template <typename T>
Matrix<T> performer_bidirectional(const Matrix<T>& qp, const Matrix<T>& kp, const Matrix<T>& v,
                                  T eps = T(kDefaultNormalizerEps)) {
    detail::check_performer_shapes(qp, kp, v);
    Matrix<T> kv(kp.cols(), v.cols() + 1);
    for (std::size_t i = 0; i < kp.rows(); ++i) detail::prefix_sum_accumulate<T>(kv, kp.row(i), v.row(i));
    Matrix<T> out(qp.rows(), v.cols());
    for (std::size_t i = 0; i < qp.rows(); ++i) detail::prefix_sum_readout<T>(kv, qp.row(i), eps, out.row(i));
    return out;
}

// Row-normalized tril(Q' K'^T) V via a running prefix sum: O(r (head_dim+1))
// state, O(T r head_dim) time.
template <typename T>
Matrix<T> performer_causal(const Matrix<T>& qp, const Matrix<T>& kp, const Matrix<T>& v,
                           T eps = T(kDefaultNormalizerEps)) {
    detail::check_performer_shapes(qp, kp, v);
    Matrix<T> g(kp.cols(), v.cols() + 1);
    Matrix<T> out(qp.rows(), v.cols());
    for (std::size_t i = 0; i < qp.rows(); ++i) {
        detail::prefix_sum_accumulate<T>(g, kp.row(i), v.row(i));
        detail::prefix_sum_readout<T>(g, qp.row(i), eps, out.row(i));
    }
    return out;
}

template <typename T>
std::vector<T> performer_causal_step(PrefixSumState<T>& state, std::span<const T> q_feat, std::span<const T> k_feat,
                                     std::span<const T> v, T eps = T(kDefaultNormalizerEps)) {
    if (q_feat.size() != state.feature_dim() || k_feat.size() != state.feature_dim() ||
        v.size() != state.head_dim()) {
        throw std::invalid_argument("performer_causal_step: q/k/v sizes " + std::to_string(q_feat.size()) + "/" +
                                    std::to_string(k_feat.size()) + "/" + std::to_string(v.size()) +
                                    " for state " + shape_string(state.g_ps));
    }
    detail::prefix_sum_accumulate<T>(state.g_ps, k_feat, v);
    ++state.frames_seen;
    std::vector<T> out(v.size());
    detail::prefix_sum_readout<T>(state.g_ps, q_feat, eps, out);
    return out;
}

// ─── Explicit windowed attention ─────────────────────────────────────────────

namespace detail {

// One head, one query over `count` keys ordered oldest first. `bias` is
// aligned with the keys (may be empty).
template <typename T, typename KeyAt, typename ValueAt>
void attend_head(std::span<const T> q, std::size_t count, KeyAt key_at, ValueAt value_at, std::span<const T> bias,
                 T scale, std::span<T> out, std::vector<T>& scratch) {
    const std::size_t hd = q.size();
    scratch.assign(count, T(0));
    for (std::size_t i = 0; i < count; ++i) {
        std::span<const T> k = key_at(i);
        T dot = 0;
        for (std::size_t j = 0; j < hd; ++j) dot += q[j] * k[j];
        scratch[i] = dot * scale;
        if (!bias.empty()) scratch[i] += bias[i];
    }
    softmax_inplace(std::span<T>(scratch));
    std::fill(out.begin(), out.end(), T(0));
    for (std::size_t i = 0; i < count; ++i) {
        std::span<const T> val = value_at(i);
        const T w = scratch[i];
        for (std::size_t j = 0; j < hd; ++j) out[j] += w * val[j];
    }
    count_flops(std::uint64_t(count) * (4 * hd + 1 + (bias.empty() ? 0 : 1)));
}

} // namespace detail

// Attention over keys at offsets [t - left, t + right], clipped to [0, T).
template <typename T>
Matrix<T> windowed_attention(const Matrix<T>& x, const AttentionParams<T>& p, std::size_t left, std::size_t right) {
    p.validate();
    if (x.cols() != p.model_dim()) {
        throw std::invalid_argument("attention: input " + shape_string(x) + " for model_dim " +
                                    std::to_string(p.model_dim()));
    }
    if (!p.relpos_bias.empty() && p.relpos_bias.cols() != left + right + 1) {
        throw std::invalid_argument("attention: relpos_bias " + shape_string(p.relpos_bias) + " for window " +
                                    std::to_string(left) + "+" + std::to_string(right) + "+1");
    }
    const Matrix<T> q = matmul(x, p.wq);
    const Matrix<T> k = matmul(x, p.wk);
    const Matrix<T> v = matmul(x, p.wv);
    const std::size_t steps = x.rows();
    const std::size_t hd = p.head_dim();
    const T scale = T(1) / std::sqrt(T(hd));
    Matrix<T> heads_out(steps, p.model_dim());
    std::vector<T> scratch;
    std::vector<T> bias(left + right + 1);
    for (std::size_t t = 0; t < steps; ++t) {
        const std::size_t first = t >= left ? t - left : 0;
        const std::size_t last = std::min(steps - 1, t + right);
        const std::size_t count = last - first + 1;
        for (std::size_t h = 0; h < p.heads; ++h) {
            const std::size_t c0 = h * hd;
            std::span<const T> bias_span;
            if (!p.relpos_bias.empty()) {
                for (std::size_t i = 0; i < count; ++i) {
                    const std::size_t j = first + i;
                    bias[i] = p.relpos_bias(h, t + right - j);
                }
                bias_span = std::span<const T>(bias.data(), count);
            }
            detail::attend_head<T>(
                q.row(t).subspan(c0, hd), count,
                [&](std::size_t i) { return k.row(first + i).subspan(c0, hd); },
                [&](std::size_t i) { return v.row(first + i).subspan(c0, hd); }, bias_span, scale,
                heads_out.row(t).subspan(c0, hd), scratch);
        }
    }
    return matmul(heads_out, p.wo);
}

// Each output row t attends over rows max(0, t-L)..t.
template <typename T>
Matrix<T> explicit_local_causal_attention(const Matrix<T>& x, const AttentionParams<T>& p, std::size_t left_context) {
    return windowed_attention(x, p, left_context, 0);
}

// ─── Performer attention ─────────────────────────────────────────────────────

template <typename T>
Matrix<T> performer_attention(const Matrix<T>& x, const AttentionParams<T>& p, const KernelSpec<T>& spec, bool causal,
                              T eps = T(kDefaultNormalizerEps)) {
    p.validate();
    spec.validate(p.head_dim());
    if (x.cols() != p.model_dim()) {
        throw std::invalid_argument("attention: input " + shape_string(x) + " for model_dim " +
                                    std::to_string(p.model_dim()));
    }
    const Matrix<T> q = matmul(x, p.wq);
    const Matrix<T> k = matmul(x, p.wk);
    const Matrix<T> v = matmul(x, p.wv);
    const std::size_t hd = p.head_dim();
    Matrix<T> heads_out(x.rows(), p.model_dim());
    for (std::size_t h = 0; h < p.heads; ++h) {
        const std::size_t c0 = h * hd;
        const Matrix<T> qp = feature_map(q.slice_cols(c0, c0 + hd), spec);
        const Matrix<T> kp = feature_map(k.slice_cols(c0, c0 + hd), spec);
        const Matrix<T> vh = v.slice_cols(c0, c0 + hd);
        const Matrix<T> oh = causal ? performer_causal(qp, kp, vh, eps) : performer_bidirectional(qp, kp, vh, eps);
        for (std::size_t t = 0; t < x.rows(); ++t) {
            auto src = oh.row(t);
            std::copy(src.begin(), src.end(), heads_out.row(t).begin() + std::ptrdiff_t(c0));
        }
    }
    return matmul(heads_out, p.wo);
}

// ─── Streaming caches ────────────────────────────────────────────────────────

// Ring buffer of the most recent `window` key/value rows. Rows are full model
// width; head h reads columns [h*head_dim, (h+1)*head_dim).
template <typename T>
class LocalKVCache {
  public:
    LocalKVCache() = default;
    LocalKVCache(std::size_t window, std::size_t width)
        : window_(window), width_(width), keys_(window, width), values_(window, width) {}

    std::size_t window() const { return window_; }
    std::size_t width() const { return width_; }
    std::size_t size() const { return size_; }
    std::size_t capacity_scalars() const { return window_ * width_; }

    // i = 0 is the oldest cached frame.
    std::span<const T> key(std::size_t i) const { return keys_.row(slot(i)); }
    std::span<const T> value(std::size_t i) const { return values_.row(slot(i)); }

    void push(std::span<const T> key_row, std::span<const T> value_row) {
        if (window_ == 0) return;
        std::size_t dst;
        if (size_ < window_) {
            dst = (head_ + size_) % window_;
            ++size_;
        } else {
            dst = head_;
            head_ = (head_ + 1) % window_;
        }
        std::copy(key_row.begin(), key_row.end(), keys_.row(dst).begin());
        std::copy(value_row.begin(), value_row.end(), values_.row(dst).begin());
    }

  private:
    std::size_t slot(std::size_t i) const { return (head_ + i) % window_; }

    std::size_t window_ = 0;
    std::size_t width_ = 0;
    std::size_t head_ = 0;
    std::size_t size_ = 0;
    Matrix<T> keys_;
    Matrix<T> values_;
};

// Streaming counterpart of explicit_local_causal_attention: each chunk frame
// attends over the cache plus itself, then is pushed into the cache.
template <typename T>
Matrix<T> explicit_attention_step(const Matrix<T>& chunk, const AttentionParams<T>& p, LocalKVCache<T>& cache) {
    const std::size_t left = cache.window();
    if (chunk.cols() != p.model_dim() || cache.width() != p.model_dim()) {
        throw std::invalid_argument("attention step: chunk " + shape_string(chunk) + " / cache width " +
                                    std::to_string(cache.width()) + " for model_dim " + std::to_string(p.model_dim()));
    }
    if (!p.relpos_bias.empty() && p.relpos_bias.cols() != left + 1) {
        throw std::invalid_argument("attention step: relpos_bias " + shape_string(p.relpos_bias) + " for window " +
                                    std::to_string(left));
    }
    const Matrix<T> q = matmul(chunk, p.wq);
    const Matrix<T> k = matmul(chunk, p.wk);
    const Matrix<T> v = matmul(chunk, p.wv);
    const std::size_t hd = p.head_dim();
    const T scale = T(1) / std::sqrt(T(hd));
    Matrix<T> heads_out(chunk.rows(), p.model_dim());
    std::vector<T> scratch;
    std::vector<T> bias(left + 1);
    for (std::size_t t = 0; t < chunk.rows(); ++t) {
        const std::size_t cached = cache.size();
        const std::size_t count = cached + 1;
        for (std::size_t h = 0; h < p.heads; ++h) {
            const std::size_t c0 = h * hd;
            std::span<const T> bias_span;
            if (!p.relpos_bias.empty()) {
                // cached entry i is (cached - i) frames in the past
                for (std::size_t i = 0; i < count; ++i) bias[i] = p.relpos_bias(h, cached - i);
                bias_span = std::span<const T>(bias.data(), count);
            }
            auto key_at = [&](std::size_t i) { return i < cached ? cache.key(i).subspan(c0, hd) : k.row(t).subspan(c0, hd); };
            auto value_at = [&](std::size_t i) {
                return i < cached ? cache.value(i).subspan(c0, hd) : v.row(t).subspan(c0, hd);
            };
            detail::attend_head<T>(q.row(t).subspan(c0, hd), count, key_at, value_at, bias_span, scale,
                                   heads_out.row(t).subspan(c0, hd), scratch);
        }
        cache.push(k.row(t), v.row(t));
    }
    return matmul(heads_out, p.wo);
}

// Streaming counterpart of performer_attention(causal = true). `states` holds
// one prefix-sum accumulator per head.
template <typename T>
Matrix<T> performer_attention_step(const Matrix<T>& chunk, const AttentionParams<T>& p, const KernelSpec<T>& spec,
                                   std::vector<PrefixSumState<T>>& states, T eps = T(kDefaultNormalizerEps)) {
    const std::size_t hd = p.head_dim();
    if (chunk.cols() != p.model_dim() || states.size() != p.heads) {
        throw std::invalid_argument("performer step: chunk " + shape_string(chunk) + " with " +
                                    std::to_string(states.size()) + " head states for " + std::to_string(p.heads) +
                                    " heads");
    }
    const Matrix<T> q = matmul(chunk, p.wq);
    const Matrix<T> k = matmul(chunk, p.wk);
    const Matrix<T> v = matmul(chunk, p.wv);
    const std::size_t r = spec.feature_dim(hd);
    std::vector<T> q_feat(r), k_feat(r);
    Matrix<T> heads_out(chunk.rows(), p.model_dim());
    for (std::size_t t = 0; t < chunk.rows(); ++t) {
        for (std::size_t h = 0; h < p.heads; ++h) {
            const std::size_t c0 = h * hd;
            feature_map_row<T>(q.row(t).subspan(c0, hd), spec, q_feat);
            feature_map_row<T>(k.row(t).subspan(c0, hd), spec, k_feat);
            auto out = performer_causal_step<T>(states[h], q_feat, k_feat, v.row(t).subspan(c0, hd), eps);
            std::copy(out.begin(), out.end(), heads_out.row(t).begin() + std::ptrdiff_t(c0));
        }
    }
    return matmul(heads_out, p.wo);
}

} // namespace streamformer
