#include <gtest/gtest.h>

#include <cmath>

#include "streamformer/conformer.hpp"
#include "streamformer/costmodel.hpp"
#include "streamformer/oracles.hpp"
#include "streamformer/streaming.hpp"
#include "streamformer/verify.hpp"

using namespace streamformer;
using M = Matrix<double>;

namespace {

EncoderConfig tiny_config(AttentionKind kind = AttentionKind::explicit_local) {
    EncoderConfig c;
    c.input_dim = 5;
    c.model_dim = 8;
    c.heads = 2;
    c.total_blocks = 3;
    c.conv_only_blocks = 1;
    c.ff_expansion = 2;
    c.conv_kernel = 3;
    c.attn_left_context = 4;
    c.attention_kind = kind;
    c.kernel.use_affine = true;
    return c;
}

template <typename W>
void zero_all(W& w) {
    for_each_tensor(w, [](const TensorInfo&, auto values) {
        for (auto& v : values) v = 0;
    });
}

} // namespace

// ─── Config ──────────────────────────────────────────────────────────────────

TEST(EncoderConfig, ValidationRejectsBadShapes) {
    EncoderConfig c = tiny_config();
    EXPECT_NO_THROW(c.validate());
    c.conv_only_blocks = 4;
    EXPECT_THROW(c.validate(), std::invalid_argument);
    c = tiny_config();
    c.heads = 3;
    EXPECT_THROW(c.validate(), std::invalid_argument);
    c = tiny_config();
    c.ff_expansion = 0;
    EXPECT_THROW(c.validate(), std::invalid_argument);
    c = tiny_config();
    c.conv_kernel = 0;
    EXPECT_THROW(c.validate(), std::invalid_argument);
}

TEST(EncoderConfig, DigestIgnoresSeedButNotShape) {
    EncoderConfig a = tiny_config(), b = tiny_config();
    b.seed = 99;
    EXPECT_EQ(config_digest(a), config_digest(b));
    b.model_dim = 16;
    EXPECT_NE(config_digest(a), config_digest(b));
}

TEST(EncoderConfig, EluWarning) {
    EncoderConfig c = tiny_config(AttentionKind::performer);
    EXPECT_TRUE(c.warnings().empty());
    c.kernel.kind = KernelKind::elu;
    EXPECT_EQ(c.warnings().size(), 1u);
}

// ─── Feed-forward ────────────────────────────────────────────────────────────

TEST(FeedForward, ZeroWeightsArePureResidual) {
    auto w = detail::allocate_ff<double>(6, 3);
    for (auto& g : w.norm.gamma) g = 0;
    Rng rng(1);
    const M x = rng.gaussian_matrix<double>(4, 6);
    EXPECT_EQ(ff_module(x, w, 1e-5), x);
}

TEST(FeedForward, ShapePreservedForAnyExpansion) {
    Rng rng(2);
    for (std::size_t ffm = 1; ffm <= 4; ++ffm) {
        auto w = detail::allocate_ff<double>(6, ffm);
        w.w_in = rng.gaussian_matrix<double>(6, 6 * ffm);
        const M out = ff_module(rng.gaussian_matrix<double>(3, 6), w, 1e-5);
        EXPECT_EQ(out.rows(), 3u);
        EXPECT_EQ(out.cols(), 6u);
    }
}

TEST(FeedForward, MatchesHandComposition) {
    Rng rng(3);
    const std::size_t d = 3, ffm = 2;
    FeedForwardWeights<double> w = detail::allocate_ff<double>(d, ffm);
    w.norm.gamma = {1.2, 0.7, -0.4};
    w.norm.beta = {0.1, 0.0, -0.2};
    w.w_in = rng.gaussian_matrix<double>(d, d * ffm);
    w.w_out = rng.gaussian_matrix<double>(d * ffm, d);
    for (auto& b : w.b_in) b = rng.gaussian();
    for (auto& b : w.b_out) b = rng.gaussian();
    const M x = rng.gaussian_matrix<double>(2, d);
    const M got = ff_module(x, w, 1e-5);
    for (std::size_t t = 0; t < 2; ++t) {
        double mean = 0, var = 0;
        for (std::size_t c = 0; c < d; ++c) mean += x(t, c);
        mean /= d;
        for (std::size_t c = 0; c < d; ++c) var += (x(t, c) - mean) * (x(t, c) - mean);
        var /= d;
        std::vector<double> ln(d), hidden(d * ffm);
        for (std::size_t c = 0; c < d; ++c)
            ln[c] = (x(t, c) - mean) / std::sqrt(var + 1e-5) * w.norm.gamma[c] + w.norm.beta[c];
        for (std::size_t j = 0; j < d * ffm; ++j) {
            double z = w.b_in[j];
            for (std::size_t c = 0; c < d; ++c) z += ln[c] * w.w_in(c, j);
            hidden[j] = z / (1.0 + std::exp(-z));
        }
        for (std::size_t c = 0; c < d; ++c) {
            double z = w.b_out[c];
            for (std::size_t j = 0; j < d * ffm; ++j) z += hidden[j] * w.w_out(j, c);
            EXPECT_NEAR(got(t, c), x(t, c) + 0.5 * z, 1e-9);
        }
    }
}

TEST(FeedForward, ShapeMismatchRejected) {
    auto w = detail::allocate_ff<double>(6, 2);
    EXPECT_THROW(ff_module(M(2, 5), w, 1e-5), std::invalid_argument);
}

// ─── Convolution module ──────────────────────────────────────────────────────

TEST(ConvModule, ZeroWeightsAreIdentity) {
    auto w = detail::allocate_conv<double>(4, 5);
    Rng rng(4);
    const M x = rng.gaussian_matrix<double>(7, 4);
    EXPECT_EQ(conv_module(x, w, 1e-5), x);
}

TEST(ConvModule, FuturePerturbationDoesNotLeak) {
    const auto r = verify::causality_suite(20, 100);
    EXPECT_TRUE(r.passed) << verify::format_result(r);
}

TEST(ConvModule, UnitKernelHasNoCrossFrameMixing) {
    EncoderConfig c = tiny_config();
    c.conv_kernel = 1;
    EncoderWeights<double> w = allocate_weights<double>(c);
    Rng rng(5);
    verify::randomize(w, rng);
    const auto& conv = w.blocks[0].conv;
    M x = rng.gaussian_matrix<double>(6, 8);
    const M before = conv_module(x, conv, 1e-5);
    for (auto& v : x.row(2)) v += 3.0 * rng.gaussian();
    const M after = conv_module(x, conv, 1e-5);
    for (std::size_t t = 0; t < 6; ++t) {
        const bool same = std::equal(before.row(t).begin(), before.row(t).end(), after.row(t).begin());
        EXPECT_EQ(same, t != 2) << t;
    }
}

TEST(ConvModule, StepMatchesBatch) {
    EncoderConfig c = tiny_config();
    EncoderWeights<double> w = allocate_weights<double>(c);
    Rng rng(6);
    verify::randomize(w, rng);
    const auto& conv = w.blocks[0].conv;
    const M x = rng.gaussian_matrix<double>(9, 8);
    M history(c.conv_kernel - 1, 8);
    M streamed;
    for (std::size_t t = 0; t < 9; ++t) streamed.append_rows(conv_module_step(x.slice_rows(t, t + 1), conv, 1e-5, history));
    EXPECT_EQ(streamed, conv_module(x, conv, 1e-5));
}

TEST(ConvModule, ShapeMismatchRejected) {
    auto w = detail::allocate_conv<double>(4, 3);
    EXPECT_THROW(conv_module(M(2, 5), w, 1e-5), std::invalid_argument);
}

// ─── Blocks ──────────────────────────────────────────────────────────────────

TEST(ConformerBlock, AllZeroWeightsGiveZeroOutput) {
    EncoderConfig c = tiny_config();
    EncoderWeights<double> w = allocate_weights<double>(c);
    zero_all(w);
    Rng rng(7);
    const M x = rng.gaussian_matrix<double>(5, 8);
    // Every module adds nothing and the final layernorm has zero gain and shift.
    const M out = conformer_block(x, w.blocks[1], c);
    for (double v : out.values()) EXPECT_EQ(v, 0.0);
}

TEST(ConformerBlock, ModuleOrderIsFfConvAttnFf) {
    EncoderConfig c = tiny_config();
    EncoderWeights<double> w = allocate_weights<double>(c);
    Rng rng(8);
    verify::randomize(w, rng);
    const auto& b = w.blocks[1];
    const M x = rng.gaussian_matrix<double>(6, 8);
    const double eps = c.layernorm_eps;
    M y = ff_module(x, b.ff1, eps);
    y = conv_module(y, b.conv, eps);
    y = attention_module(y, *b.attn, encoder_attention_shape(c), true, eps, c.normalizer_eps);
    y = ff_module(y, b.ff2, eps);
    y = layernorm(y, b.final_norm, eps);
    EXPECT_EQ(conformer_block(x, b, c), y);
}

TEST(ConformerBlock, SingleFrameMatchesStreamingStep) {
    for (AttentionKind kind : {AttentionKind::explicit_local, AttentionKind::performer}) {
        EncoderConfig c = tiny_config(kind);
        c.conv_only_blocks = 0;
        c.total_blocks = 1;
        EncoderWeights<double> w = allocate_weights<double>(c);
        Rng rng(9);
        verify::randomize(w, rng);
        const M x = rng.gaussian_matrix<double>(1, c.input_dim);
        StreamState<double> s = init_state<double>(c);
        EXPECT_EQ(step(s, x, w, c), encoder_forward(x, w, c));
    }
}

TEST(ConvOnlyBlock, EqualsConformerBlockWithZeroOutputProjection) {
    EncoderConfig c = tiny_config();
    EncoderWeights<double> w = allocate_weights<double>(c);
    Rng rng(10);
    verify::randomize(w, rng);
    BlockWeights<double> with_attn = w.blocks[1];
    with_attn.attn->params.wo = M(8, 8);
    BlockWeights<double> without = w.blocks[1];
    without.attn.reset();
    const M x = rng.gaussian_matrix<double>(6, 8);
    EXPECT_EQ(conformer_block(x, with_attn, c), conv_only_block(x, without, c));
}

TEST(ConvOnlyBlock, RejectsAttentionWeightsAndViceVersa) {
    EncoderConfig c = tiny_config();
    EncoderWeights<double> w = allocate_weights<double>(c);
    EXPECT_THROW(conv_only_block(M(2, 8), w.blocks[1], c), std::invalid_argument);
    EXPECT_THROW(conformer_block(M(2, 8), w.blocks[0], c), std::invalid_argument);
}

TEST(ConvOnlyBlock, AddsNoAttentionStates) {
    EncoderConfig c = tiny_config();
    c.conv_only_blocks = c.total_blocks;
    EXPECT_EQ(count_states_per_frame(c).compact, 0u);
    EncoderWeights<double> w = allocate_weights<double>(c);
    for (const auto& b : w.blocks) EXPECT_FALSE(b.attn.has_value());
}

// ─── Encoder ─────────────────────────────────────────────────────────────────

TEST(Encoder, OutputShapeForRandomConfigs) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        Rng rng(seed);
        const EncoderConfig c = verify::random_config(rng);
        const auto w = init_weights<double>(c);
        const M out = encoder_forward(rng.gaussian_matrix<double>(7, c.input_dim), w, c);
        EXPECT_EQ(out.rows(), 7u);
        EXPECT_EQ(out.cols(), c.model_dim);
        EXPECT_TRUE(all_finite(out));
    }
}

TEST(Encoder, AllConvOnlyNeverTouchesAttention) {
    EncoderConfig c = tiny_config();
    c.conv_only_blocks = c.total_blocks;
    const auto w = init_weights<double>(c);
    Rng rng(11);
    EXPECT_NO_THROW(encoder_forward(rng.gaussian_matrix<double>(4, c.input_dim), w, c));
}

TEST(Encoder, WeightConfigMismatchRejected) {
    EncoderConfig c = tiny_config();
    auto w = init_weights<double>(c);
    EncoderConfig other = c;
    other.total_blocks = 4;
    EXPECT_THROW(encoder_forward(M(2, c.input_dim), w, other), std::invalid_argument);
    EXPECT_THROW(encoder_forward(M(2, c.input_dim + 1), w, c), std::invalid_argument);
}

TEST(Encoder, DeterministicAcrossRuns) {
    const EncoderConfig c = tiny_config(AttentionKind::performer);
    Rng r1(12), r2(12);
    const M x1 = r1.gaussian_matrix<double>(6, c.input_dim);
    const M x2 = r2.gaussian_matrix<double>(6, c.input_dim);
    EXPECT_EQ(encoder_forward(x1, init_weights<double>(c), c), encoder_forward(x2, init_weights<double>(c), c));
}

// ─── Init ────────────────────────────────────────────────────────────────────

TEST(Init, SameSeedBitIdentical) {
    EncoderConfig c = tiny_config(AttentionKind::performer);
    c.seed = 5;
    const auto a = init_weights<double>(c);
    const auto b = init_weights<double>(c);
    EXPECT_EQ(a.frontend, b.frontend);
    EXPECT_EQ(a.blocks[2].attn->kernel.weight, b.blocks[2].attn->kernel.weight);
    c.seed = 6;
    EXPECT_NE(init_weights<double>(c).frontend, a.frontend);
}

TEST(Init, ParameterCountMatchesCostModel) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        Rng rng(seed);
        const EncoderConfig c = verify::random_config(rng);
        EXPECT_EQ(parameter_count(init_weights<float>(c)), count_params(c));
    }
}

TEST(Init, ValuesWithinFanInBoundAndBiasesZero) {
    const EncoderConfig c = tiny_config(AttentionKind::performer);
    auto w = init_weights<double>(c);
    for_each_tensor(w, [](const TensorInfo& info, auto values) {
        for (double v : values) {
            switch (info.init) {
            case TensorInit::weight: EXPECT_LE(std::abs(v), 1.0 / std::sqrt(double(info.fan_in))) << info.name; break;
            case TensorInit::bias: EXPECT_EQ(v, 0.0) << info.name; break;
            case TensorInit::gain: EXPECT_EQ(v, 1.0) << info.name; break;
            }
        }
    });
}

TEST(Init, TensorNamesAreStable) {
    const EncoderConfig c = tiny_config(AttentionKind::performer);
    auto w = allocate_weights<double>(c);
    std::vector<std::string> names;
    for_each_tensor(w, [&](const TensorInfo& info, auto) { names.push_back(info.name); });
    EXPECT_EQ(names.front(), "encoder.frontend.weight");
    EXPECT_NE(std::find(names.begin(), names.end(), "encoder.block2.attn.wq"), names.end());
    EXPECT_NE(std::find(names.begin(), names.end(), "encoder.block2.attn.kernel.weight"), names.end());
    EXPECT_EQ(std::find(names.begin(), names.end(), "encoder.block0.attn.wq"), names.end());
}
