#pragma once

// Dense row-major numeric kernels shared by every other module.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace streamformer {

// ─── Flop instrumentation ────────────────────────────────────────────────────

// Flop accounting convention shared by the instrumented counter and the
// analytic cost model: a multiply-accumulate is 2 flops, every other scalar
// arithmetic op or nonlinearity is 1.
namespace flops {
inline constexpr std::uint64_t kLayerNormPerElement = 7; // mean, center, square, accumulate, scale, gain, shift
inline constexpr std::uint64_t kSoftmaxPerElement = 4;   // shift, exp, accumulate, divide
inline constexpr std::uint64_t kActivationPerElement = 1;
inline constexpr std::uint64_t kGluPerOutput = 2;        // sigmoid + product
} // namespace flops

namespace detail {
inline std::uint64_t*& active_flop_counter() {
    thread_local std::uint64_t* counter = nullptr;
    return counter;
}
} // namespace detail

inline void count_flops(std::uint64_t n) {
    if (auto* c = detail::active_flop_counter()) *c += n;
}

// Installs a per-thread flop counter for its lifetime. Nested scopes restore
// the previous counter on exit.
class ScopedFlopCounter {
  public:
    ScopedFlopCounter() : previous_(detail::active_flop_counter()) {
        detail::active_flop_counter() = &count_;
    }
    ~ScopedFlopCounter() { detail::active_flop_counter() = previous_; }
    ScopedFlopCounter(const ScopedFlopCounter&) = delete;
    ScopedFlopCounter& operator=(const ScopedFlopCounter&) = delete;

    std::uint64_t count() const { return count_; }
    void reset() { count_ = 0; }

  private:
    std::uint64_t count_ = 0;
    std::uint64_t* previous_;
};

// ─── Matrix ──────────────────────────────────────────────────────────────────

template <typename T>
class Matrix {
  public:
    using value_type = T;

    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, T fill = T(0))
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
    Matrix(std::size_t rows, std::size_t cols, std::vector<T> data)
        : rows_(rows), cols_(cols), data_(std::move(data)) {
        if (data_.size() != rows_ * cols_) {
            throw std::invalid_argument("Matrix: data length " + std::to_string(data_.size()) +
                                        " != " + std::to_string(rows_) + "x" + std::to_string(cols_));
        }
    }
    Matrix(std::initializer_list<std::initializer_list<T>> rows) {
        rows_ = rows.size();
        cols_ = rows_ ? rows.begin()->size() : 0;
        data_.reserve(rows_ * cols_);
        for (const auto& r : rows) {
            if (r.size() != cols_) throw std::invalid_argument("Matrix: ragged initializer");
            data_.insert(data_.end(), r.begin(), r.end());
        }
    }

    static Matrix identity(std::size_t n) {
        Matrix m(n, n);
        for (std::size_t i = 0; i < n; ++i) m(i, i) = T(1);
        return m;
    }

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    T& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    const T& operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

    std::span<T> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
    std::span<const T> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

    std::span<T> values() { return data_; }
    std::span<const T> values() const { return data_; }
    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }

    void append_rows(const Matrix& other) {
        if (other.rows_ == 0) return;
        if (rows_ == 0 && cols_ == 0) cols_ = other.cols_;
        if (other.cols_ != cols_) throw std::invalid_argument("append_rows: column mismatch");
        data_.insert(data_.end(), other.data_.begin(), other.data_.end());
        rows_ += other.rows_;
    }

    Matrix slice_rows(std::size_t begin, std::size_t end) const {
        Matrix out(end - begin, cols_);
        std::copy(data_.begin() + begin * cols_, data_.begin() + end * cols_, out.data_.begin());
        return out;
    }

    Matrix slice_cols(std::size_t begin, std::size_t end) const {
        Matrix out(rows_, end - begin);
        for (std::size_t r = 0; r < rows_; ++r) {
            auto src = row(r);
            std::copy(src.begin() + begin, src.begin() + end, out.row(r).begin());
        }
        return out;
    }

    template <typename U>
    Matrix<U> cast() const {
        Matrix<U> out(rows_, cols_);
        std::transform(data_.begin(), data_.end(), out.values().begin(), [](T v) { return U(v); });
        return out;
    }

    bool operator==(const Matrix&) const = default;

  private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<T> data_;
};

inline std::string shape_string(std::size_t r, std::size_t c) {
    return "[" + std::to_string(r) + "x" + std::to_string(c) + "]";
}

template <typename T>
std::string shape_string(const Matrix<T>& m) {
    return shape_string(m.rows(), m.cols());
}

template <typename T>
bool all_finite(std::span<const T> v) {
    return std::all_of(v.begin(), v.end(), [](T x) { return std::isfinite(x); });
}

template <typename T>
bool all_finite(const Matrix<T>& m) {
    return all_finite(m.values());
}

template <typename T>
T max_abs_diff(const Matrix<T>& a, const Matrix<T>& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        throw std::invalid_argument("max_abs_diff: " + shape_string(a) + " vs " + shape_string(b));
    }
    T worst = 0;
    for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a.values()[i] - b.values()[i]));
    return worst;
}

// ─── Rng ─────────────────────────────────────────────────────────────────────

// SplitMix64-seeded xoshiro256**. Sample streams are defined bit-for-bit by
// this file, so they do not depend on the standard library's distributions.
class Rng {
  public:
    explicit Rng(std::uint64_t seed) : seed_(seed) {
        std::uint64_t x = seed;
        for (auto& s : state_) s = splitmix(x);
    }

    std::uint64_t seed() const { return seed_; }

    std::uint64_t next_u64() {
        const std::uint64_t result = std::rotl(state_[1] * 5, 7) * 9;
        const std::uint64_t t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = std::rotl(state_[3], 45);
        return result;
    }

    // [0, 1) with 53 random bits.
    double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    std::size_t uniform_index(std::size_t n) { return std::size_t(uniform() * double(n)); }
    int uniform_int(int lo, int hi) { return lo + int(uniform_index(std::size_t(hi - lo + 1))); }

    // Box-Muller; the second variate is cached.
    double gaussian() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        const double radius = std::sqrt(-2.0 * std::log(u1));
        const double angle = 2.0 * std::numbers::pi * u2;
        spare_ = radius * std::sin(angle);
        has_spare_ = true;
        return radius * std::cos(angle);
    }

    template <typename T>
    Matrix<T> gaussian_matrix(std::size_t rows, std::size_t cols, double scale = 1.0) {
        Matrix<T> m(rows, cols);
        for (auto& v : m.values()) v = T(scale * gaussian());
        return m;
    }

    template <typename T>
    Matrix<T> uniform_matrix(std::size_t rows, std::size_t cols, double lo, double hi) {
        Matrix<T> m(rows, cols);
        for (auto& v : m.values()) v = T(uniform(lo, hi));
        return m;
    }

  private:
    static std::uint64_t splitmix(std::uint64_t& x) {
        std::uint64_t z = (x += 0x9E3779B97F4A7C15ULL);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    std::uint64_t seed_;
    std::uint64_t state_[4]{};
    double spare_ = 0.0;
    bool has_spare_ = false;
};

// ─── Products ────────────────────────────────────────────────────────────────

// out[j] = sum_k x[k] * w(k, j), accumulated in ascending k.
template <typename T>
void vecmat(std::span<const T> x, const Matrix<T>& w, std::span<T> out) {
    std::fill(out.begin(), out.end(), T(0));
    for (std::size_t k = 0; k < w.rows(); ++k) {
        const T xk = x[k];
        const T* wrow = w.data() + k * w.cols();
        for (std::size_t j = 0; j < w.cols(); ++j) out[j] += xk * wrow[j];
    }
}

template <typename T>
Matrix<T> matmul(const Matrix<T>& a, const Matrix<T>& b) {
    if (a.cols() != b.rows()) {
        throw std::invalid_argument("matmul: dimension mismatch " + shape_string(a) + " x " + shape_string(b));
    }
    Matrix<T> out(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) vecmat<T>(a.row(i), b, out.row(i));
    count_flops(2 * std::uint64_t(a.rows()) * a.cols() * b.cols());
    return out;
}

template <typename T>
Matrix<T> transpose(const Matrix<T>& m) {
    Matrix<T> out(m.cols(), m.rows());
    for (std::size_t r = 0; r < m.rows(); ++r)
        for (std::size_t c = 0; c < m.cols(); ++c) out(c, r) = m(r, c);
    return out;
}

// x * w + bias (bias broadcast over rows).
template <typename T>
Matrix<T> linear(const Matrix<T>& x, const Matrix<T>& w, std::span<const T> bias) {
    if (bias.size() != w.cols()) {
        throw std::invalid_argument("linear: bias length " + std::to_string(bias.size()) + " for weight " +
                                    shape_string(w));
    }
    Matrix<T> out = matmul(x, w);
    for (std::size_t r = 0; r < out.rows(); ++r) {
        auto row = out.row(r);
        for (std::size_t c = 0; c < row.size(); ++c) row[c] += bias[c];
    }
    count_flops(std::uint64_t(out.size()));
    return out;
}

// a += scale * b
template <typename T>
void add_scaled_inplace(Matrix<T>& a, const Matrix<T>& b, T scale) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        throw std::invalid_argument("add_scaled: " + shape_string(a) + " vs " + shape_string(b));
    }
    auto av = a.values();
    auto bv = b.values();
    if (scale == T(1)) {
        for (std::size_t i = 0; i < av.size(); ++i) av[i] += bv[i];
        count_flops(av.size());
    } else {
        for (std::size_t i = 0; i < av.size(); ++i) av[i] += scale * bv[i];
        count_flops(2 * av.size());
    }
}

// ─── Softmax / layernorm ─────────────────────────────────────────────────────

template <typename T>
void softmax_inplace(std::span<T> v) {
    if (v.empty()) return;
    const T peak = *std::max_element(v.begin(), v.end());
    T total = 0;
    for (auto& x : v) {
        x = std::exp(x - peak);
        total += x;
    }
    for (auto& x : v) x /= total;
    count_flops(flops::kSoftmaxPerElement * v.size());
}

template <typename T>
Matrix<T> softmax_rows(const Matrix<T>& m) {
    Matrix<T> out = m;
    for (std::size_t r = 0; r < out.rows(); ++r) softmax_inplace(out.row(r));
    return out;
}

template <typename T>
struct LayerNormParams {
    std::vector<T> gamma;
    std::vector<T> beta;

    static LayerNormParams unit(std::size_t n) { return {std::vector<T>(n, T(1)), std::vector<T>(n, T(0))}; }
};

template <typename T>
Matrix<T> layernorm(const Matrix<T>& x, std::span<const T> gamma, std::span<const T> beta, T eps) {
    if (gamma.size() != x.cols() || beta.size() != x.cols()) {
        throw std::invalid_argument("layernorm: gamma/beta length " + std::to_string(gamma.size()) + "/" +
                                    std::to_string(beta.size()) + " for width " + std::to_string(x.cols()));
    }
    if (!(eps > T(0))) throw std::invalid_argument("layernorm: eps must be positive");
    Matrix<T> out(x.rows(), x.cols());
    const T n = T(x.cols());
    for (std::size_t r = 0; r < x.rows(); ++r) {
        auto in = x.row(r);
        auto o = out.row(r);
        T mean = 0;
        for (T v : in) mean += v;
        mean /= n;
        T var = 0;
        for (std::size_t c = 0; c < in.size(); ++c) {
            o[c] = in[c] - mean;
            var += o[c] * o[c];
        }
        var /= n;
        const T inv = T(1) / std::sqrt(var + eps);
        for (std::size_t c = 0; c < in.size(); ++c) o[c] = o[c] * inv * gamma[c] + beta[c];
    }
    count_flops(flops::kLayerNormPerElement * x.size());
    return out;
}

template <typename T>
Matrix<T> layernorm(const Matrix<T>& x, const LayerNormParams<T>& p, T eps) {
    return layernorm<T>(x, p.gamma, p.beta, eps);
}

// ─── Activations ─────────────────────────────────────────────────────────────

enum class Activation { swish, relu, glu_gate, sigmoid };

inline Activation parse_activation(std::string_view name) {
    if (name == "swish") return Activation::swish;
    if (name == "relu") return Activation::relu;
    if (name == "glu-gate" || name == "glu") return Activation::glu_gate;
    if (name == "sigmoid") return Activation::sigmoid;
    throw std::invalid_argument("unknown activation '" + std::string(name) + "'");
}

template <typename T>
T sigmoid(T z) {
    return T(1) / (T(1) + std::exp(-z));
}

template <typename T>
T swish(T z) {
    return z * sigmoid(z);
}

// Elementwise for swish/relu/sigmoid. glu_gate halves the width: the first
// half is the signal, the second half the gate, out = a * sigmoid(b).
template <typename T>
std::vector<T> activation(std::span<const T> x, Activation kind) {
    std::vector<T> out;
    switch (kind) {
    case Activation::swish:
        out.reserve(x.size());
        for (T v : x) out.push_back(swish(v));
        count_flops(flops::kActivationPerElement * x.size());
        break;
    case Activation::relu:
        out.reserve(x.size());
        for (T v : x) out.push_back(v > T(0) ? v : T(0));
        count_flops(flops::kActivationPerElement * x.size());
        break;
    case Activation::sigmoid:
        out.reserve(x.size());
        for (T v : x) out.push_back(sigmoid(v));
        count_flops(flops::kActivationPerElement * x.size());
        break;
    case Activation::glu_gate: {
        if (x.size() % 2 != 0) throw std::invalid_argument("glu: odd width " + std::to_string(x.size()));
        const std::size_t half = x.size() / 2;
        out.reserve(half);
        for (std::size_t i = 0; i < half; ++i) out.push_back(x[i] * sigmoid(x[half + i]));
        count_flops(flops::kGluPerOutput * half);
        break;
    }
    default:
        throw std::invalid_argument("unknown activation kind");
    }
    return out;
}

// Row-wise application; glu_gate halves the column count.
template <typename T>
Matrix<T> activation(const Matrix<T>& x, Activation kind) {
    const std::size_t out_cols = kind == Activation::glu_gate ? x.cols() / 2 : x.cols();
    if (kind == Activation::glu_gate && x.cols() % 2 != 0) {
        throw std::invalid_argument("glu: odd width " + std::to_string(x.cols()));
    }
    Matrix<T> out(x.rows(), out_cols);
    for (std::size_t r = 0; r < x.rows(); ++r) {
        auto v = activation<T>(x.row(r), kind);
        std::copy(v.begin(), v.end(), out.row(r).begin());
    }
    return out;
}

// ─── Depthwise temporal convolution ──────────────────────────────────────────

// out(t, c) = bias[c] + sum_i weights(i, c) * x(t - left + i, c), zero outside
// [0, T). left = k - 1 is the causal case; tap k-1 then sees the current frame.
template <typename T>
Matrix<T> depthwise_conv(const Matrix<T>& x, const Matrix<T>& weights, std::span<const T> bias, std::size_t left) {
    const std::size_t k = weights.rows();
    if (k == 0) throw std::invalid_argument("depthwise_conv: empty kernel");
    if (weights.cols() != x.cols() || bias.size() != x.cols()) {
        throw std::invalid_argument("depthwise_conv: weights " + shape_string(weights) + " / bias " +
                                    std::to_string(bias.size()) + " for input " + shape_string(x));
    }
    if (left > k - 1) throw std::invalid_argument("depthwise_conv: left reach exceeds kernel");
    const std::size_t d = x.cols();
    const auto steps = std::ptrdiff_t(x.rows());
    Matrix<T> out(x.rows(), d);
    for (std::ptrdiff_t t = 0; t < steps; ++t) {
        auto o = out.row(std::size_t(t));
        std::copy(bias.begin(), bias.end(), o.begin());
        for (std::size_t i = 0; i < k; ++i) {
            const std::ptrdiff_t src = t - std::ptrdiff_t(left) + std::ptrdiff_t(i);
            if (src < 0 || src >= steps) {
                // zero padding contributes w * 0
                continue;
            }
            auto in = x.row(std::size_t(src));
            auto w = weights.row(i);
            for (std::size_t c = 0; c < d; ++c) o[c] += w[c] * in[c];
        }
    }
    count_flops((2 * std::uint64_t(k) + 1) * x.size());
    return out;
}

template <typename T>
Matrix<T> depthwise_causal_conv(const Matrix<T>& x, const Matrix<T>& weights, std::span<const T> bias) {
    if (weights.rows() == 0) throw std::invalid_argument("depthwise_causal_conv: empty kernel");
    return depthwise_conv<T>(x, weights, bias, weights.rows() - 1);
}

// Causal conv over x preceded by `history` (the k-1 frames before x, oldest
// first). With an all-zero history this equals depthwise_causal_conv(x).
template <typename T>
Matrix<T> depthwise_causal_conv(const Matrix<T>& history, const Matrix<T>& x, const Matrix<T>& weights,
                                std::span<const T> bias) {
    const std::size_t k = weights.rows();
    if (k == 0) throw std::invalid_argument("depthwise_causal_conv: empty kernel");
    if (weights.cols() != x.cols() || bias.size() != x.cols()) {
        throw std::invalid_argument("depthwise_causal_conv: weights " + shape_string(weights) + " / bias " +
                                    std::to_string(bias.size()) + " for input " + shape_string(x));
    }
    if (history.rows() != k - 1 || (k > 1 && history.cols() != x.cols())) {
        throw std::invalid_argument("depthwise_causal_conv: history " + shape_string(history) + " for kernel " +
                                    shape_string(weights));
    }
    const std::size_t d = x.cols();
    const std::size_t hist = k - 1;
    Matrix<T> out(x.rows(), d);
    for (std::size_t t = 0; t < x.rows(); ++t) {
        auto o = out.row(t);
        std::copy(bias.begin(), bias.end(), o.begin());
        // Virtual input index of tap i is t + i in [history; x].
        for (std::size_t i = 0; i < k; ++i) {
            const std::size_t src = t + i;
            auto in = src < hist ? history.row(src) : x.row(src - hist);
            auto w = weights.row(i);
            for (std::size_t c = 0; c < d; ++c) o[c] += w[c] * in[c];
        }
    }
    count_flops((2 * std::uint64_t(k) + 1) * x.size());
    return out;
}

} // namespace streamformer
