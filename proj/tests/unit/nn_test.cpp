#include <gtest/gtest.h>

#include <cmath>

#include "isd/nn/layers.hpp"
#include "isd/nn/optim.hpp"
#include "support/gradcheck.hpp"

using namespace isd;
using namespace isd::nn;

namespace {

Tensor random_tensor(std::vector<std::size_t> shape, std::uint64_t seed, double scale = 1.0) {
    Rng r(seed);
    Tensor t(std::move(shape));
    for (auto& v : t.values()) v = scale * r.normal();
    return t;
}

constexpr double kTol = 1e-6;

/// Fixed random projection to a scalar.
Var probe(const Var& y) { return weighted_sum(y, random_tensor(y->value.shape(), 99)); }

}  // namespace

TEST(GradCheck, Conv1dVariants) {
    const auto x = parameter(random_tensor({2, 3, 9}, 1));
    for (ConvOptions opt : {ConvOptions{1, 1, 1, 1, false}, ConvOptions{2, 1, 0, 0, false}, ConvOptions{1, 2, 2, 2, false},
                            ConvOptions{1, 1, 2, 0, false}}) {
        const auto w = parameter(random_tensor({4, 3, 3}, 2));
        const auto b = parameter(random_tensor({4}, 3));
        const auto r = isd::testing::grad_check([&] { return probe(conv1d(x, w, b, opt)); }, {x, w, b});
        EXPECT_LT(r.max_rel_error, kTol);
    }
    const auto wd = parameter(random_tensor({3, 1, 3}, 4));
    const auto r = isd::testing::grad_check(
        [&] { return probe(conv1d(x, wd, nullptr, ConvOptions{1, 1, 1, 1, true})); }, {x, wd});
    EXPECT_LT(r.max_rel_error, kTol);
}

TEST(GradCheck, ConvTranspose) {
    const auto x = parameter(random_tensor({2, 3, 5}, 5));
    const auto w = parameter(random_tensor({3, 2, 2}, 6));
    const auto b = parameter(random_tensor({2}, 7));
    const auto r = isd::testing::grad_check([&] { return probe(conv_transpose1d(x, w, b, 2)); }, {x, w, b});
    EXPECT_LT(r.max_rel_error, kTol);
}

TEST(GradCheck, Normalisations) {
    const auto x = parameter(random_tensor({3, 4, 5}, 8));
    const auto g = parameter(random_tensor({4}, 9));
    const auto b = parameter(random_tensor({4}, 10));
    BatchNormState state;
    auto r = isd::testing::grad_check([&] { return probe(batch_norm(x, g, b, state, true)); }, {x, g, b});
    EXPECT_LT(r.max_rel_error, kTol);
    const auto g5 = parameter(random_tensor({5}, 11));
    const auto b5 = parameter(random_tensor({5}, 12));
    r = isd::testing::grad_check([&] { return probe(layer_norm(x, g5, b5)); }, {x, g5, b5});
    EXPECT_LT(r.max_rel_error, kTol);
    const auto rows = parameter(random_tensor({3, 4}, 13));
    r = isd::testing::grad_check([&] { return probe(l2_normalize(rows)); }, {rows});
    EXPECT_LT(r.max_rel_error, kTol);
}

TEST(GradCheck, ShapeOps) {
    const auto a = parameter(random_tensor({2, 3, 4}, 14));
    const auto b = parameter(random_tensor({2, 2, 4}, 15));
    auto r = isd::testing::grad_check(
        [&] {
            auto c = concat_channels(gelu(a), b);
            auto t = transpose_last2(resize_time(c, 6));
            return probe(add(mean_time(transpose_last2(t)), mean_time(resize_time(c, 3))));
        },
        {a, b});
    EXPECT_LT(r.max_rel_error, kTol);
}

TEST(GradCheck, AttentionAndLinear) {
    const std::size_t D = 6;
    const auto x = parameter(random_tensor({2, 4, D}, 16));
    const auto wqkv = parameter(random_tensor({3 * D, D}, 17, 0.5));
    const auto bqkv = parameter(random_tensor({3 * D}, 18));
    const auto wo = parameter(random_tensor({D, D}, 19, 0.5));
    const auto bo = parameter(random_tensor({D}, 20));
    const auto r = isd::testing::grad_check(
        [&] { return probe(linear(multi_head_attention(x, wqkv, bqkv, wo, bo, 2), wo, bo)); },
        {x, wqkv, bqkv, wo, bo}, 1e-4, 1e-4);  // key-bias gradients vanish analytically
    EXPECT_LT(r.max_rel_error, kTol);
}

TEST(GradCheck, GruBothDirections) {
    const auto x = parameter(random_tensor({2, 3, 5}, 21));
    const auto wih = parameter(random_tensor({12, 3}, 22, 0.5));
    const auto whh = parameter(random_tensor({12, 4}, 23, 0.5));
    const auto bih = parameter(random_tensor({12}, 24));
    const auto bhh = parameter(random_tensor({12}, 25));
    for (bool reverse : {false, true}) {
        const auto r = isd::testing::grad_check(
            [&] { return probe(gru(x, wih, whh, bih, bhh, reverse)); }, {x, wih, whh, bih, bhh});
        EXPECT_LT(r.max_rel_error, kTol);
    }
}

TEST(GradCheck, Losses) {
    const auto p = parameter(random_tensor({2, 3, 10}, 26));
    const auto y = random_tensor({2, 3, 10}, 27);
    auto r = isd::testing::grad_check([&] { return combined_loss(p, y, 0.5); }, {p});
    EXPECT_LT(r.max_rel_error, kTol);
    const auto m = parameter(random_tensor({4, 8}, 28));
    const auto w = parameter(random_tensor({4, 8}, 29));
    r = isd::testing::grad_check([&] { return nt_xent(l2_normalize(m), l2_normalize(w), 0.1); }, {m, w});
    EXPECT_LT(r.max_rel_error, kTol);
}

TEST(Dropout, IdentityInEvaluationAndScaledInTraining) {
    const auto x = constant(Tensor({1000}, 1.0));
    EXPECT_EQ(dropout(x, 0.5, Context{false, nullptr})->value, x->value);
    Rng rng(1);
    const auto y = dropout(x, 0.5, Context{true, &rng});
    std::size_t zeros = 0;
    for (double v : y->value.values()) {
        EXPECT_TRUE(v == 0.0 || v == 2.0);
        zeros += v == 0.0;
    }
    EXPECT_NEAR(static_cast<double>(zeros), 500.0, 60.0);
}

TEST(NoGrad, GuardStopsGraphRecording) {
    const auto w = parameter(Tensor({2}, 1.0));
    {
        NoGradGuard guard;
        const auto y = add(w, w);
        EXPECT_FALSE(y->requires_grad);
        EXPECT_TRUE(y->parents.empty());
    }
    EXPECT_TRUE(add(w, w)->requires_grad);
}

TEST(AdamW, FirstStepMovesByLearningRate) {
    ParamSet ps;
    const auto w = parameter(Tensor({2}, std::vector<double>{1.0, -2.0}));
    ps.add("w", w);
    AdamW opt(ps, {0.1, 0.9, 0.999, 1e-8, 0.0});
    w->grad = Tensor({2}, std::vector<double>{0.5, -3.0});
    opt.step();
    // Bias-corrected first step is lr * g / |g|.
    EXPECT_NEAR(w->value[0], 1.0 - 0.1, 1e-7);
    EXPECT_NEAR(w->value[1], -2.0 + 0.1, 1e-7);
}

TEST(AdamW, DecoupledWeightDecay) {
    ParamSet ps;
    const auto w = parameter(Tensor({1}, 2.0));
    ps.add("w", w);
    AdamW opt(ps, {0.1, 0.9, 0.999, 1e-8, 0.5});
    w->grad = Tensor({1}, 0.0);
    opt.step();
    EXPECT_NEAR(w->value[0], 2.0 * (1.0 - 0.1 * 0.5), 1e-12);
}

TEST(CosineLr, EndpointsAndMidpoint) {
    EXPECT_DOUBLE_EQ(cosine_lr(1.0, 0.0, 0, 10), 1.0);
    EXPECT_NEAR(cosine_lr(1.0, 0.0, 5, 11), 0.5, 1e-12);
    EXPECT_NEAR(cosine_lr(1.0, 0.1, 9, 10), 0.1, 1e-12);
    EXPECT_DOUBLE_EQ(cosine_lr(0.3, 0.0, 4, 1), 0.3);
}

TEST(ParamSet, StoreRoundTrip) {
    Rng rng(3);
    Linear a(3, 2, rng), b(3, 2, rng);
    BatchNorm1d bn(2);
    bn.state.running_mean = Tensor({2}, 0.5);
    ParamSet pa, pb;
    a.register_into(pa, "lin");
    bn.register_into(pa, "bn");
    b.register_into(pb, "lin");
    BatchNorm1d bn2(2);
    bn2.register_into(pb, "bn");
    EXPECT_NE(pa.to_store(), pb.to_store());
    pb.load(pa.to_store(), pa.buffers_to_store());
    EXPECT_EQ(pa.to_store(), pb.to_store());
    EXPECT_EQ(bn2.state.running_mean, bn.state.running_mean);
    ParameterStore wrong;
    wrong.insert("lin.weight", Tensor({1}));
    EXPECT_THROW(pb.load(wrong, pa.buffers_to_store()), std::invalid_argument);
}
