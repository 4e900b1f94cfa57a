#include <gtest/gtest.h>

#include <vector>

#include "streamformer/attention.hpp"
#include "streamformer/oracles.hpp"
#include "streamformer/verify.hpp"

using namespace streamformer;
using M = Matrix<double>;

namespace {

AttentionParams<double> identity_params(std::size_t d, std::size_t heads) {
    AttentionParams<double> p;
    p.heads = heads;
    p.wq = p.wk = p.wv = p.wo = M::identity(d);
    return p;
}

KernelSpec<double> plain(KernelKind kind) {
    KernelSpec<double> s;
    s.kind = kind;
    return s;
}

} // namespace

// ─── Explicit local attention ────────────────────────────────────────────────

TEST(ExplicitAttention, ZeroContextWithIdentityIsIdentity) {
    Rng rng(1);
    const M x = rng.gaussian_matrix<double>(5, 4);
    EXPECT_LE(max_abs_diff(explicit_local_causal_attention(x, identity_params(4, 2), 0), x), 1e-15);
}

TEST(ExplicitAttention, EqualKeysGiveWindowMean) {
    AttentionParams<double> p = identity_params(2, 1);
    p.wk = M(2, 2); // every key is zero
    const M x{{1, 2}, {3, 4}, {5, 6}, {7, 8}};
    const M out = explicit_local_causal_attention(x, p, 2);
    EXPECT_NEAR(out(0, 0), 1.0, 1e-15);
    EXPECT_NEAR(out(1, 0), 2.0, 1e-15);
    EXPECT_NEAR(out(2, 0), 3.0, 1e-15);
    EXPECT_NEAR(out(3, 1), 6.0, 1e-15);
}

TEST(ExplicitAttention, MatchesDenseBandMask) {
    Rng rng(16);
    const auto p = verify::random_attention_params<double>(rng, 8, 2, 4);
    const M x = rng.gaussian_matrix<double>(16, 8);
    EXPECT_LE(oracle::max_relative_error(explicit_local_causal_attention(x, p, 3),
                                         oracle::dense_banded_attention(x, p, 3, 0)),
              1e-6);
}

TEST(ExplicitAttention, WindowLocality) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        Rng rng(seed);
        const std::size_t left = std::size_t(rng.uniform_int(0, 4));
        const auto p = verify::random_attention_params<double>(rng, 6, 3, left + 1);
        M x = rng.gaussian_matrix<double>(12, 6);
        const std::size_t t = std::size_t(rng.uniform_int(int(left) + 1, 11));
        const M before = explicit_local_causal_attention(x, p, left);
        for (std::size_t i = 0; i < t - left; ++i)
            for (auto& v : x.row(i)) v += 5.0;
        const M after = explicit_local_causal_attention(x, p, left);
        for (std::size_t c = 0; c < 6; ++c) EXPECT_EQ(before(t, c), after(t, c)) << seed;
    }
}

TEST(ExplicitAttention, RejectsIndivisibleHeads) {
    AttentionParams<double> p = identity_params(5, 2);
    EXPECT_THROW(explicit_local_causal_attention(M(3, 5), p, 1), std::invalid_argument);
}

TEST(ExplicitAttention, StreamingStepMatchesBatch) {
    Rng rng(4);
    const std::size_t left = 3;
    const auto p = verify::random_attention_params<double>(rng, 8, 2, left + 1);
    const M x = rng.gaussian_matrix<double>(11, 8);
    LocalKVCache<double> cache(left, 8);
    M streamed;
    for (std::size_t t = 0; t < 11; t += 2) streamed.append_rows(explicit_attention_step(x.slice_rows(t, std::min<std::size_t>(11, t + 2)), p, cache));
    EXPECT_EQ(streamed, explicit_local_causal_attention(x, p, left));
}

TEST(LocalKVCache, EvictsOldestFirst) {
    LocalKVCache<double> cache(3, 1);
    for (double v = 1; v <= 5; ++v) {
        const std::vector<double> row{v};
        cache.push(row, row);
        EXPECT_LE(cache.size(), 3u);
    }
    EXPECT_EQ(cache.key(0)[0], 3.0);
    EXPECT_EQ(cache.key(1)[0], 4.0);
    EXPECT_EQ(cache.value(2)[0], 5.0);
    EXPECT_EQ(cache.capacity_scalars(), 3u);
}

// ─── Feature maps ────────────────────────────────────────────────────────────

TEST(FeatureMap, ReluPlain) {
    EXPECT_EQ(feature_map(M{{-1, 2}}, plain(KernelKind::relu)), (M{{0, 2}}));
}

TEST(FeatureMap, Quartic) {
    EXPECT_EQ(feature_map(M{{1, -2}}, plain(KernelKind::quartic)), (M{{1, 16}}));
}

TEST(FeatureMap, IdentityAffineEqualsPlain) {
    Rng rng(2);
    const M x = rng.gaussian_matrix<double>(6, 4);
    KernelSpec<double> affine = plain(KernelKind::relu);
    affine.use_affine = true;
    affine.weight = M::identity(4);
    affine.bias.assign(4, 0.0);
    EXPECT_EQ(feature_map(x, affine), feature_map(x, plain(KernelKind::relu)));
}

TEST(FeatureMap, NonNegativeKernelsStayNonNegative) {
    Rng rng(3);
    const M x = rng.gaussian_matrix<double>(20, 5, 3.0);
    for (KernelKind k : kAllKernelKinds) {
        if (kernel_can_be_negative(k)) continue;
        const M phi = feature_map(x, plain(k));
        for (double v : phi.values()) EXPECT_GE(v, 0.0) << to_string(k);
    }
}

TEST(FeatureMap, MatchesOracleForAllKernels) {
    Rng rng(4);
    const M x = rng.gaussian_matrix<double>(7, 4);
    for (KernelKind k : kAllKernelKinds) {
        const auto spec = verify::random_kernel_spec<double>(rng, k, 4, true, 6);
        EXPECT_LE(oracle::max_relative_error(feature_map(x, spec), oracle::dense_feature_map(x, spec)), 1e-12);
    }
}

TEST(FeatureMap, EluWarnsOthersDoNot) {
    EXPECT_FALSE(kernel_warnings(plain(KernelKind::elu)).empty());
    EXPECT_TRUE(kernel_warnings(plain(KernelKind::relu)).empty());
    EXPECT_THROW(parse_kernel_kind("gelu"), std::invalid_argument);
    for (KernelKind k : kAllKernelKinds) EXPECT_EQ(parse_kernel_kind(to_string(k)), k);
}

TEST(FeatureMap, AffineShapeValidated) {
    KernelSpec<double> bad = plain(KernelKind::relu);
    bad.use_affine = true;
    bad.weight = M(3, 5);
    bad.bias.assign(3, 0.0);
    EXPECT_THROW(feature_map(M(2, 4), bad), std::invalid_argument);
}

// ─── Performer ───────────────────────────────────────────────────────────────

TEST(Performer, BidirectionalSingleFrameReturnsValue) {
    const M v{{3, -1}};
    EXPECT_EQ(performer_bidirectional(M{{0.5, 2}}, M{{1, 1}}, v), v);
}

TEST(Performer, BidirectionalUniformFeaturesGiveColumnMean) {
    Rng rng(5);
    const M v = rng.gaussian_matrix<double>(6, 3);
    const M out = performer_bidirectional(M(6, 4, 1.0), M(6, 4, 1.0), v);
    for (std::size_t c = 0; c < 3; ++c) {
        double mean = 0;
        for (std::size_t i = 0; i < 6; ++i) mean += v(i, c);
        mean /= 6;
        for (std::size_t i = 0; i < 6; ++i) EXPECT_NEAR(out(i, c), mean, 1e-14);
    }
}

TEST(Performer, BidirectionalMatchesDenseOracle) {
    Rng rng(32);
    const M qp = feature_map(rng.gaussian_matrix<double>(32, 8), plain(KernelKind::relu));
    const M kp = feature_map(rng.gaussian_matrix<double>(32, 8), plain(KernelKind::softplus));
    const M v = rng.gaussian_matrix<double>(32, 8);
    EXPECT_LE(oracle::max_relative_error(performer_bidirectional(qp, kp, v),
                                         oracle::dense_linear_attention(qp, kp, v, false)),
              1e-6);
}

TEST(Performer, CausalFirstRowIsFirstValue) {
    Rng rng(6);
    const M qp = rng.uniform_matrix<double>(4, 3, 0.1, 1.0);
    const M kp = rng.uniform_matrix<double>(4, 3, 0.1, 1.0);
    const M v = rng.gaussian_matrix<double>(4, 2);
    const M out = performer_causal(qp, kp, v);
    EXPECT_NEAR(out(0, 0), v(0, 0), 1e-15);
    EXPECT_NEAR(out(0, 1), v(0, 1), 1e-15);
}

TEST(Performer, CausalUniformFeaturesGiveRunningMean) {
    Rng rng(7);
    const M v = rng.gaussian_matrix<double>(8, 2);
    const M out = performer_causal(M(8, 3, 1.0), M(8, 3, 1.0), v);
    double sum = 0;
    for (std::size_t i = 0; i < 8; ++i) {
        sum += v(i, 1);
        EXPECT_NEAR(out(i, 1), sum / double(i + 1), 1e-14);
    }
}

TEST(Performer, CausalMatchesDenseOracle) {
    Rng rng(8);
    const M qp = feature_map(rng.gaussian_matrix<double>(32, 8), plain(KernelKind::exp));
    const M kp = feature_map(rng.gaussian_matrix<double>(32, 8), plain(KernelKind::exp));
    const M v = rng.gaussian_matrix<double>(32, 8);
    EXPECT_LE(oracle::max_relative_error(performer_causal(qp, kp, v), oracle::dense_linear_attention(qp, kp, v, true)),
              1e-6);
}

TEST(Performer, CausalOracleAcrossKernelsAndSeeds) {
    const auto r = verify::performer_causal_oracle(50, 900);
    EXPECT_TRUE(r.passed) << verify::format_result(r);
}

TEST(Performer, ZeroNormalizerIsClampedNotNan) {
    const M qp{{0, 0}};
    const M kp{{0, 0}};
    const M v{{3, 4}};
    const M out = performer_causal(qp, kp, v);
    EXPECT_TRUE(all_finite(out));
    EXPECT_EQ(out(0, 0), 0.0);
    EXPECT_EQ(clamp_normalizer(0.0, 1e-6), 1e-6);
    EXPECT_EQ(clamp_normalizer(-1e-9, 1e-6), -1e-6);
    EXPECT_EQ(clamp_normalizer(0.5, 1e-6), 0.5);
}

TEST(Performer, StepFreshStateReturnsValue) {
    PrefixSumState<double> s(3, 2);
    const std::vector<double> q{0.2, 0.5, 1.0}, k{1.0, 0.3, 0.7}, v{-2.0, 5.0};
    const auto out = performer_causal_step<double>(s, q, k, v);
    EXPECT_NEAR(out[0], -2.0, 1e-15);
    EXPECT_NEAR(out[1], 5.0, 1e-15);
    EXPECT_EQ(s.frames_seen, 1u);
}

TEST(Performer, StepWithZeroKeyLeavesSumsUnchanged) {
    PrefixSumState<double> s(2, 1);
    const std::vector<double> q{1, 1}, k{1, 2}, zero{0, 0};
    const std::vector<double> v1{4}, v2{100};
    performer_causal_step<double>(s, q, k, v1);
    const M before = s.g_ps;
    const auto out = performer_causal_step<double>(s, q, zero, v2);
    EXPECT_EQ(s.g_ps, before);
    EXPECT_EQ(s.frames_seen, 2u);
    EXPECT_NEAR(out[0], 4.0, 1e-15);

    PrefixSumState<double> empty(2, 1);
    const auto clamped = performer_causal_step<double>(empty, q, zero, v2);
    EXPECT_EQ(clamped[0], 0.0);
}

TEST(Performer, StepFoldEqualsBatch) {
    Rng rng(32);
    const M qp = feature_map(rng.gaussian_matrix<double>(32, 4), plain(KernelKind::relu));
    const M kp = feature_map(rng.gaussian_matrix<double>(32, 4), plain(KernelKind::relu));
    const M v = rng.gaussian_matrix<double>(32, 4);
    const M batch = performer_causal(qp, kp, v);
    PrefixSumState<double> s(4, 4);
    for (std::size_t i = 0; i < 32; ++i) {
        const auto out = performer_causal_step<double>(s, qp.row(i), kp.row(i), v.row(i));
        for (std::size_t c = 0; c < 4; ++c) EXPECT_EQ(out[c], batch(i, c));
    }

    const Matrix<float> qf = qp.cast<float>(), kf = kp.cast<float>(), vf = v.cast<float>();
    const Matrix<float> batch_f = performer_causal(qf, kf, vf);
    PrefixSumState<float> sf(4, 4);
    for (std::size_t i = 0; i < 32; ++i) {
        const auto out = performer_causal_step<float>(sf, qf.row(i), kf.row(i), vf.row(i));
        for (std::size_t c = 0; c < 4; ++c) EXPECT_NEAR(out[c], batch_f(i, c), 1e-5);
    }
}

TEST(Performer, StepRejectsMismatch) {
    PrefixSumState<double> s(3, 2);
    const std::vector<double> q{1, 2}, k{1, 2, 3}, v{1, 2};
    EXPECT_THROW(performer_causal_step<double>(s, q, k, v), std::invalid_argument);
}

TEST(PerformerAttention, SingleFrameWithIdentityOutput) {
    Rng rng(9);
    auto p = verify::random_attention_params<double>(rng, 4, 2, 0);
    p.wo = M::identity(4);
    const M x = rng.gaussian_matrix<double>(1, 4);
    const M out = performer_attention(x, p, plain(KernelKind::softplus), true);
    EXPECT_LE(max_abs_diff(out, matmul(x, p.wv)), 1e-14);
}

TEST(PerformerAttention, CausalFirstRowIgnoresFuture) {
    Rng rng(10);
    const auto p = verify::random_attention_params<double>(rng, 4, 2, 0);
    M x = rng.gaussian_matrix<double>(6, 4);
    const M before = performer_attention(x, p, plain(KernelKind::relu), true);
    for (std::size_t i = 1; i < 6; ++i)
        for (auto& v : x.row(i)) v = -v;
    const M after = performer_attention(x, p, plain(KernelKind::relu), true);
    for (std::size_t c = 0; c < 4; ++c) EXPECT_EQ(before(0, c), after(0, c));
}

TEST(PerformerAttention, BidirectionalMatchesDenseKernelOracle) {
    Rng rng(16);
    const auto p = verify::random_attention_params<double>(rng, 8, 2, 0);
    const auto spec = verify::random_kernel_spec<double>(rng, KernelKind::relu, 4, true, 5);
    const M x = rng.gaussian_matrix<double>(16, 8);
    EXPECT_LE(oracle::max_relative_error(performer_attention(x, p, spec, false),
                                         oracle::dense_kernel_attention(x, p, spec, false)),
              1e-6);
}

TEST(PerformerAttention, StreamingStepMatchesBatch) {
    Rng rng(11);
    const auto p = verify::random_attention_params<double>(rng, 8, 4, 0);
    const auto spec = verify::random_kernel_spec<double>(rng, KernelKind::softplus, 2, true, 3);
    const M x = rng.gaussian_matrix<double>(9, 8);
    std::vector<PrefixSumState<double>> states(4, PrefixSumState<double>(3, 2));
    M streamed;
    for (std::size_t t = 0; t < 9; t += 3) streamed.append_rows(performer_attention_step(x.slice_rows(t, t + 3), p, spec, states));
    EXPECT_EQ(streamed, performer_attention(x, p, spec, true));
}

TEST(PerformerAttention, ReluWeightsAreNormalized) {
    Rng rng(12);
    const M qp = feature_map(rng.uniform_matrix<double>(10, 4, 0.1, 2.0), plain(KernelKind::relu));
    const M kp = feature_map(rng.uniform_matrix<double>(10, 4, 0.1, 2.0), plain(KernelKind::relu));
    for (bool causal : {true, false}) {
        for (const auto& row : oracle::dense_linear_attention_weights(qp, kp, causal)) {
            long double total = 0;
            for (auto w : row) {
                EXPECT_GE(w, 0.0L);
                total += w;
            }
            EXPECT_NEAR(double(total), 1.0, 1e-6);
        }
    }
}

TEST(PerformerAttention, FaultHookBreaksOracle) {
    set_performer_normalization_fault(true);
    const auto r = verify::performer_causal_oracle(5);
    set_performer_normalization_fault(false);
    EXPECT_FALSE(r.passed);
    ASSERT_TRUE(r.failing_seed.has_value());
    EXPECT_GT(r.max_error, 1e-3);
    EXPECT_TRUE(verify::performer_causal_oracle(5).passed);
}
