#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "streamformer/numerics.hpp"
#include "streamformer/oracles.hpp"

using namespace streamformer;
using M = Matrix<double>;

TEST(Matmul, IdentityLeavesMatrixUnchanged) {
    const M a{{1, 2}, {3, 4}};
    EXPECT_EQ(matmul(M::identity(2), a), a);
}

TEST(Matmul, Projector) {
    const M p{{1, 0}, {0, 0}};
    const M v{{5}, {7}};
    EXPECT_EQ(matmul(p, v), (M{{5}, {0}}));
}

TEST(Matmul, MatchesTripleLoop) {
    Rng rng(11);
    const auto a = rng.gaussian_matrix<double>(7, 5);
    const auto b = rng.gaussian_matrix<double>(5, 3);
    EXPECT_LE(oracle::max_relative_error(matmul(a, b), oracle::triple_loop_matmul(a, b)), 1e-12);
}

TEST(Matmul, MismatchReportsShapes) {
    try {
        matmul(M(2, 3), M(4, 2));
        FAIL() << "expected throw";
    } catch (const std::invalid_argument& e) {
        EXPECT_NE(std::string(e.what()).find("[2x3]"), std::string::npos);
        EXPECT_NE(std::string(e.what()).find("[4x2]"), std::string::npos);
    }
}

TEST(Matmul, Associativity) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        Rng rng(seed);
        const auto a = rng.gaussian_matrix<double>(std::size_t(rng.uniform_int(1, 6)), 4);
        const auto b = rng.gaussian_matrix<double>(4, 5);
        const auto c = rng.gaussian_matrix<double>(5, std::size_t(rng.uniform_int(1, 6)));
        EXPECT_LE(oracle::max_relative_error(matmul(matmul(a, b), c), matmul(a, matmul(b, c))), 1e-9) << seed;
    }
}

TEST(Matmul, EmptyShapes) {
    const M out = matmul(M(0, 3), M(3, 2));
    EXPECT_EQ(out.rows(), 0u);
    EXPECT_EQ(out.cols(), 2u);
}

TEST(Softmax, SymmetricRow) {
    const M s = softmax_rows(M{{0, 0}});
    EXPECT_DOUBLE_EQ(s(0, 0), 0.5);
    EXPECT_DOUBLE_EQ(s(0, 1), 0.5);
}

TEST(Softmax, LargeLogitsDoNotOverflow) {
    const M s = softmax_rows(M{{1000, 0}});
    EXPECT_DOUBLE_EQ(s(0, 0), 1.0);
    EXPECT_NEAR(s(0, 1), 0.0, 1e-300);
    EXPECT_TRUE(all_finite(s));
}

TEST(Softmax, MatchesExtendedPrecision) {
    Rng rng(3);
    const auto m = rng.gaussian_matrix<double>(1, 17, 4.0);
    std::vector<long double> logits(m.values().begin(), m.values().end());
    const auto want = oracle::softmax_extended(logits);
    const M got = softmax_rows(m);
    for (std::size_t i = 0; i < want.size(); ++i) EXPECT_NEAR(got(0, i), double(want[i]), 1e-12);
}

TEST(Softmax, RowsAreDistributions) {
    for (std::uint64_t seed = 0; seed < 30; ++seed) {
        Rng rng(seed);
        const M s = softmax_rows(rng.gaussian_matrix<double>(5, std::size_t(rng.uniform_int(1, 20)), 30.0));
        for (std::size_t r = 0; r < s.rows(); ++r) {
            double total = 0;
            for (double v : s.row(r)) {
                EXPECT_GE(v, 0.0);
                total += v;
            }
            EXPECT_NEAR(total, 1.0, 1e-9);
        }
    }
}

TEST(LayerNorm, ConstantRowGivesZeros) {
    const auto p = LayerNormParams<double>::unit(4);
    const M out = layernorm(M{{3, 3, 3, 3}}, p, 1e-5);
    for (double v : out.values()) EXPECT_EQ(v, 0.0);
}

TEST(LayerNorm, TwoPointStandardization) {
    const auto p = LayerNormParams<double>::unit(2);
    const M out = layernorm(M{{1, 3}}, p, 1e-12);
    EXPECT_NEAR(out(0, 0), -1.0, 1e-6);
    EXPECT_NEAR(out(0, 1), 1.0, 1e-6);
}

TEST(LayerNorm, RandomRowMoments) {
    Rng rng(5);
    const M x = rng.gaussian_matrix<double>(3, 64, 7.0);
    const M out = layernorm(x, LayerNormParams<double>::unit(64), 1e-9);
    for (std::size_t r = 0; r < out.rows(); ++r) {
        double mean = 0, var = 0;
        for (double v : out.row(r)) mean += v;
        mean /= 64;
        for (double v : out.row(r)) var += (v - mean) * (v - mean);
        var /= 64;
        EXPECT_NEAR(mean, 0.0, 1e-6);
        EXPECT_NEAR(var, 1.0, 1e-6);
    }
}

TEST(LayerNorm, RejectsBadArguments) {
    const auto p = LayerNormParams<double>::unit(3);
    EXPECT_THROW(layernorm(M(1, 4), p, 1e-5), std::invalid_argument);
    EXPECT_THROW(layernorm(M(1, 3), p, 0.0), std::invalid_argument);
}

TEST(DepthwiseConv, UnitKernelIsIdentity) {
    Rng rng(1);
    const M x = rng.gaussian_matrix<double>(6, 3);
    const std::vector<double> bias(3, 0.0);
    EXPECT_EQ(depthwise_causal_conv<double>(x, M(1, 3, 1.0), bias), x);
}

TEST(DepthwiseConv, ImpulseResponseIsCausal) {
    M x(6, 2);
    x(0, 0) = x(0, 1) = 1;
    const std::vector<double> bias(2, 0.0);
    const M out = depthwise_causal_conv<double>(x, M(3, 2, 1.0), bias);
    for (std::size_t t = 0; t < 6; ++t) EXPECT_EQ(out(t, 0), t <= 2 ? 1.0 : 0.0) << t;
}

TEST(DepthwiseConv, FuturePerturbationDoesNotLeak) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        Rng rng(seed);
        const std::size_t k = std::size_t(rng.uniform_int(1, 6));
        const M w = rng.gaussian_matrix<double>(k, 4);
        const std::vector<double> bias{0.1, 0.2, 0.3, 0.4};
        M x = rng.gaussian_matrix<double>(10, 4);
        const std::size_t t = rng.uniform_index(9);
        const M before = depthwise_causal_conv<double>(x, w, bias);
        for (std::size_t i = t + 1; i < 10; ++i)
            for (auto& v : x.row(i)) v = 0.0;
        const M after = depthwise_causal_conv<double>(x, w, bias);
        for (std::size_t i = 0; i <= t; ++i)
            for (std::size_t c = 0; c < 4; ++c) EXPECT_EQ(before(i, c), after(i, c));
    }
}

TEST(DepthwiseConv, HistoryOverloadMatchesFullSequence) {
    Rng rng(9);
    const std::size_t k = 4;
    const M w = rng.gaussian_matrix<double>(k, 3);
    const std::vector<double> bias{1, 2, 3};
    const M x = rng.gaussian_matrix<double>(9, 3);
    const M full = depthwise_causal_conv<double>(x, w, bias);
    const M tail = depthwise_causal_conv<double>(x.slice_rows(2, 5), x.slice_rows(5, 9), w, bias);
    EXPECT_EQ(tail, full.slice_rows(5, 9));
    EXPECT_EQ(depthwise_causal_conv<double>(M(k - 1, 3), x, w, bias), full);
}

TEST(DepthwiseConv, RejectsMismatch) {
    const std::vector<double> bias(3, 0.0);
    EXPECT_THROW(depthwise_causal_conv<double>(M(4, 2), M(3, 3), bias), std::invalid_argument);
    EXPECT_THROW(depthwise_causal_conv<double>(M(4, 3), M(0, 3), bias), std::invalid_argument);
}

TEST(Activation, ScalarValues) {
    const std::vector<double> x{-2, 3};
    EXPECT_EQ(activation<double>(x, Activation::relu), (std::vector<double>{0, 3}));
    EXPECT_EQ(swish(0.0), 0.0);
    EXPECT_EQ(sigmoid(0.0), 0.5);
    EXPECT_DOUBLE_EQ(swish(2.0), 2.0 / (1.0 + std::exp(-2.0)));
}

TEST(Activation, GluHalvesWidth) {
    const std::vector<double> x{2, 4, 0, 0};
    EXPECT_EQ(activation<double>(x, Activation::glu_gate), (std::vector<double>{1, 2}));
    const std::vector<double> odd{1, 2, 3};
    EXPECT_THROW(activation<double>(odd, Activation::glu_gate), std::invalid_argument);
}

TEST(Activation, ParseNames) {
    EXPECT_EQ(parse_activation("glu-gate"), Activation::glu_gate);
    EXPECT_EQ(parse_activation("swish"), Activation::swish);
    EXPECT_THROW(parse_activation("tanh"), std::invalid_argument);
}

TEST(Rng, SameSeedSameStream) {
    Rng a(42), b(42), c(43);
    for (int i = 0; i < 100; ++i) {
        const auto x = a.next_u64();
        EXPECT_EQ(x, b.next_u64());
        (void)c;
    }
    EXPECT_NE(Rng(42).next_u64(), Rng(43).next_u64());
}

TEST(Rng, UniformRangeAndGaussianMoments) {
    Rng rng(7);
    double sum = 0, sq = 0;
    const int n = 20000;
    for (int i = 0; i < n; ++i) {
        const double u = rng.uniform();
        ASSERT_GE(u, 0.0);
        ASSERT_LT(u, 1.0);
        const double g = rng.gaussian();
        sum += g;
        sq += g * g;
    }
    EXPECT_NEAR(sum / n, 0.0, 0.05);
    EXPECT_NEAR(sq / n, 1.0, 0.05);
    for (int i = 0; i < 1000; ++i) {
        const int v = rng.uniform_int(-2, 3);
        ASSERT_GE(v, -2);
        ASSERT_LE(v, 3);
    }
}

TEST(Flops, CounterIsScoped) {
    std::uint64_t outer_count = 0;
    {
        ScopedFlopCounter outer;
        matmul(M(2, 3), M(3, 4));
        outer_count = outer.count();
    }
    EXPECT_EQ(outer_count, 2u * 2 * 3 * 4);
    matmul(M(2, 3), M(3, 4)); // no active counter: must not crash
}

TEST(Determinism, RepeatedCallsBitIdentical) {
    Rng rng(8);
    const M a = rng.gaussian_matrix<double>(5, 5);
    EXPECT_EQ(softmax_rows(matmul(a, a)), softmax_rows(matmul(a, a)));
}
