#pragma once

// Dense reference computations used by the test suites and `streamformer
// verify`. Nothing here shares code with the implementation it checks: every
// product is a plain triple loop and every attention materializes the full
// T x T matrix.

#include <cmath>
#include <cstddef>
#include <limits>
#include <vector>

#include "streamformer/attention.hpp"
#include "streamformer/numerics.hpp"

namespace streamformer::oracle {

template <typename T>
Matrix<T> triple_loop_matmul(const Matrix<T>& a, const Matrix<T>& b) {
    Matrix<T> out(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < b.cols(); ++j) {
            T acc = 0;
            for (std::size_t k = 0; k < a.cols(); ++k) acc += a(i, k) * b(k, j);
            out(i, j) = acc;
        }
    return out;
}

// exp/sum at extended precision.
inline std::vector<long double> softmax_extended(const std::vector<long double>& logits) {
    long double peak = -std::numeric_limits<long double>::infinity();
    for (auto v : logits) peak = std::max(peak, v);
    std::vector<long double> out(logits.size());
    long double total = 0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        out[i] = logits[i] == -std::numeric_limits<long double>::infinity() ? 0.0L : std::exp(logits[i] - peak);
        total += out[i];
    }
    for (auto& v : out) v /= total;
    return out;
}

// Full T x T attention with a band mask: key j is visible to query t iff
// t - left <= j <= t + right. Masked logits are -inf.
template <typename T>
Matrix<T> dense_banded_attention(const Matrix<T>& x, const AttentionParams<T>& p, std::size_t left, std::size_t right) {
    const Matrix<T> q = triple_loop_matmul(x, p.wq);
    const Matrix<T> k = triple_loop_matmul(x, p.wk);
    const Matrix<T> v = triple_loop_matmul(x, p.wv);
    const std::size_t n = x.rows();
    const std::size_t hd = p.model_dim() / p.heads;
    const long double scale = 1.0L / std::sqrt((long double)hd);
    Matrix<T> heads(n, p.model_dim());
    for (std::size_t h = 0; h < p.heads; ++h) {
        for (std::size_t t = 0; t < n; ++t) {
            std::vector<long double> logits(n, -std::numeric_limits<long double>::infinity());
            for (std::size_t j = 0; j < n; ++j) {
                const auto offset = std::ptrdiff_t(t) - std::ptrdiff_t(j); // > 0 means past
                if (offset > std::ptrdiff_t(left) || -offset > std::ptrdiff_t(right)) continue;
                long double dot = 0;
                for (std::size_t c = 0; c < hd; ++c) dot += (long double)q(t, h * hd + c) * k(j, h * hd + c);
                long double bias = 0;
                if (!p.relpos_bias.empty()) bias = p.relpos_bias(h, std::size_t(std::ptrdiff_t(right) + offset));
                logits[j] = dot * scale + bias;
            }
            const auto w = softmax_extended(logits);
            for (std::size_t c = 0; c < hd; ++c) {
                long double acc = 0;
                for (std::size_t j = 0; j < n; ++j) acc += w[j] * (long double)v(j, h * hd + c);
                heads(t, h * hd + c) = T(acc);
            }
        }
    }
    return triple_loop_matmul(heads, p.wo);
}

// f applied elementwise, written out independently of apply_kernel.
inline long double kernel_value(KernelKind kind, long double z) {
    switch (kind) {
    case KernelKind::relu: return z > 0 ? z : 0;
    case KernelKind::softplus: return std::log(1.0L + std::exp(z));
    case KernelKind::exp: return std::exp(z);
    case KernelKind::elu: return z > 0 ? z : std::exp(z) - 1.0L;
    case KernelKind::quartic: return z * z * z * z;
    }
    return z;
}

template <typename T>
Matrix<T> dense_feature_map(const Matrix<T>& x, const KernelSpec<T>& spec) {
    if (!spec.use_affine) {
        Matrix<T> out(x.rows(), x.cols());
        for (std::size_t i = 0; i < x.rows(); ++i)
            for (std::size_t j = 0; j < x.cols(); ++j) out(i, j) = T(kernel_value(spec.kind, x(i, j)));
        return out;
    }
    Matrix<T> pre = triple_loop_matmul(x, transpose(spec.weight));
    for (std::size_t i = 0; i < pre.rows(); ++i)
        for (std::size_t j = 0; j < pre.cols(); ++j) pre(i, j) = T(kernel_value(spec.kind, (long double)pre(i, j) + spec.bias[j]));
    return pre;
}

// A = Q' K'^T (lower-triangular part when causal), rows normalized, times V.
// Denominators use the same eps clamp as the implementation.
template <typename T>
Matrix<T> dense_linear_attention(const Matrix<T>& qp, const Matrix<T>& kp, const Matrix<T>& v, bool causal,
                                 long double eps = kDefaultNormalizerEps) {
    const std::size_t n = qp.rows();
    std::vector<long double> a(n * n, 0.0L);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            if (causal && j > i) continue;
            long double dot = 0;
            for (std::size_t l = 0; l < qp.cols(); ++l) dot += (long double)qp(i, l) * kp(j, l);
            a[i * n + j] = dot;
        }
    Matrix<T> out(n, v.cols());
    for (std::size_t i = 0; i < n; ++i) {
        long double den = 0;
        for (std::size_t j = 0; j < n; ++j) den += a[i * n + j];
        if (std::fabs(den) < eps) den = den < 0 ? -eps : eps;
        for (std::size_t c = 0; c < v.cols(); ++c) {
            long double acc = 0;
            for (std::size_t j = 0; j < n; ++j) acc += a[i * n + j] * (long double)v(j, c);
            out(i, c) = T(acc / den);
        }
    }
    return out;
}

// Implicit attention weights of the linear attention (row-normalized).
template <typename T>
std::vector<std::vector<long double>> dense_linear_attention_weights(const Matrix<T>& qp, const Matrix<T>& kp,
                                                                     bool causal) {
    const std::size_t n = qp.rows();
    std::vector<std::vector<long double>> w(n, std::vector<long double>(n, 0.0L));
    for (std::size_t i = 0; i < n; ++i) {
        long double den = 0;
        for (std::size_t j = 0; j < n; ++j) {
            if (causal && j > i) continue;
            long double dot = 0;
            for (std::size_t l = 0; l < qp.cols(); ++l) dot += (long double)qp(i, l) * kp(j, l);
            w[i][j] = dot;
            den += dot;
        }
        for (auto& x : w[i]) x /= den;
    }
    return w;
}

template <typename T>
Matrix<T> dense_kernel_attention(const Matrix<T>& x, const AttentionParams<T>& p, const KernelSpec<T>& spec,
                                 bool causal, long double eps = kDefaultNormalizerEps) {
    const Matrix<T> q = triple_loop_matmul(x, p.wq);
    const Matrix<T> k = triple_loop_matmul(x, p.wk);
    const Matrix<T> v = triple_loop_matmul(x, p.wv);
    const std::size_t hd = p.model_dim() / p.heads;
    Matrix<T> heads(x.rows(), p.model_dim());
    for (std::size_t h = 0; h < p.heads; ++h) {
        const std::size_t c0 = h * hd;
        const Matrix<T> out = dense_linear_attention(dense_feature_map(q.slice_cols(c0, c0 + hd), spec),
                                                     dense_feature_map(k.slice_cols(c0, c0 + hd), spec),
                                                     v.slice_cols(c0, c0 + hd), causal, eps);
        for (std::size_t t = 0; t < x.rows(); ++t)
            for (std::size_t c = 0; c < hd; ++c) heads(t, c0 + c) = out(t, c);
    }
    return triple_loop_matmul(heads, p.wo);
}

// Largest |a - b| / max(1, |b|) over all entries.
template <typename T>
double max_relative_error(const Matrix<T>& a, const Matrix<T>& b) {
    double worst = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double ref = double(b.values()[i]);
        const double err = std::abs(double(a.values()[i]) - ref) / std::max(1.0, std::abs(ref));
        worst = std::max(worst, err);
    }
    return worst;
}

} // namespace streamformer::oracle
