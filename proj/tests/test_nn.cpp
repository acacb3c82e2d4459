#include <gtest/gtest.h>

#include <cmath>

#include "crackseg/nn.hpp"
#include "support/gradcheck.hpp"

using namespace crackseg;
using crackseg::testkit::check_param_gradients;
using crackseg::testkit::max_input_grad_error;
using crackseg::testkit::random_tensor;

namespace {

constexpr double kStep = 1e-6;
constexpr double kTol = 1e-5;

// Checks input and parameter gradients of `layer` on x under the linear
// objective sum(w * y).
void check_layer(nn::Layer& layer, const Tensor& x, std::uint64_t seed) {
    nn::ParamList ps;
    layer.collect(ps);
    nn::init_params(ps, seed, 0.5);
    for (nn::Param* p : ps)
        if (p->kind == nn::ParamKind::bias || p->kind == nn::ParamKind::bn_shift)
            for (std::size_t i = 0; i < p->value.size(); ++i) p->value[i] = 0.1 * static_cast<double>(i % 5) - 0.2;

    const Tensor y = layer.forward(x, nn::Mode::train);
    const Tensor w = random_tensor(y.n(), y.c(), y.h(), y.w(), seed + 1);
    EXPECT_LT(max_input_grad_error(layer, x, w, kStep), kTol) << layer.kind();

    nn::zero_grads(ps);
    layer.forward(x, nn::Mode::train);
    layer.backward(w);
    auto objective = [&] {
        const Tensor out = layer.forward(x, nn::Mode::train);
        double s = 0.0;
        for (std::size_t i = 0; i < out.size(); ++i) s += w[i] * out[i];
        return s;
    };
    const auto r = check_param_gradients(ps, objective, kStep, kTol, 40, seed + 2);
    EXPECT_EQ(r.passed, r.checked) << layer.kind() << " worst " << r.worst;
}

}  // namespace

TEST(Conv2d, GradientsPadded3x3) {
    nn::Conv2d conv("c", 3, 4, 3, 1, 1, true);
    check_layer(conv, random_tensor(2, 3, 6, 7, 1), 10);
}

TEST(Conv2d, GradientsStrided) {
    nn::Conv2d conv("c", 2, 3, 3, 2, 1, false);
    check_layer(conv, random_tensor(2, 2, 9, 8, 2), 20);
}

TEST(Conv2d, GradientsPointwise) {
    nn::Conv2d conv("c", 5, 1, 1, 1, 0, true);
    check_layer(conv, random_tensor(3, 5, 4, 4, 3), 30);
}

TEST(Conv2d, GradientsLargeKernel) {
    nn::Conv2d conv("c", 3, 2, 11, 4, 2, true);
    check_layer(conv, random_tensor(1, 3, 23, 23, 4), 40);
}

TEST(Conv2d, ForwardMatchesDirectSum) {
    nn::Conv2d conv("c", 2, 3, 3, 2, 1, true);
    nn::ParamList ps;
    conv.collect(ps);
    nn::init_params(ps, 5, 1.0);
    conv.bias().value[1] = 0.25;
    const Tensor x = random_tensor(1, 2, 7, 6, 6);
    const Tensor y = conv.forward(x, nn::Mode::eval);
    ASSERT_EQ(y.shape_string(), "(1,3,4,3)");
    for (int o = 0; o < 3; ++o)
        for (int oy = 0; oy < 4; ++oy)
            for (int ox = 0; ox < 3; ++ox) {
                double s = conv.bias().value[o];
                for (int c = 0; c < 2; ++c)
                    for (int ky = 0; ky < 3; ++ky)
                        for (int kx = 0; kx < 3; ++kx) {
                            const int iy = oy * 2 - 1 + ky, ix = ox * 2 - 1 + kx;
                            if (iy < 0 || iy >= 7 || ix < 0 || ix >= 6) continue;
                            s += conv.weight().value.at(o, c, ky, kx) * x.at(0, c, iy, ix);
                        }
                EXPECT_NEAR(y.at(0, o, oy, ox), s, 1e-12);
            }
}

TEST(BatchNorm2d, TrainModeGradients) {
    nn::BatchNorm2d bn("bn", 3);
    check_layer(bn, random_tensor(2, 3, 4, 5, 7, 2.0), 50);
}

TEST(BatchNorm2d, RunningStatisticsUseUnbiasedVariance) {
    nn::BatchNorm2d bn("bn", 1);
    Tensor x(1, 1, 1, 4);
    x[0] = 1;
    x[1] = 2;
    x[2] = 3;
    x[3] = 6;
    const Tensor y = bn.forward(x, nn::Mode::train);
    nn::ParamList ps;
    bn.collect(ps);
    // mean 3, biased var 3.5, unbiased 14/3
    EXPECT_NEAR(ps[2]->value[0], 0.1 * 3.0, 1e-15);
    EXPECT_NEAR(ps[3]->value[0], 0.9 + 0.1 * 14.0 / 3.0, 1e-15);
    EXPECT_NEAR(y[0], (1.0 - 3.0) / std::sqrt(3.5 + 1e-5), 1e-12);

    const Tensor z = bn.forward(x, nn::Mode::eval);
    EXPECT_NEAR(z[3], (6.0 - ps[2]->value[0]) / std::sqrt(ps[3]->value[0] + 1e-5), 1e-12);
}

TEST(ReLU, Gradients) {
    nn::ReLU relu;
    check_layer(relu, random_tensor(2, 2, 3, 3, 8), 60);
}

TEST(MaxPool2d, Gradients2x2) {
    nn::MaxPool2d pool(2, 2, 0);
    check_layer(pool, random_tensor(2, 2, 6, 7, 9), 70);
}

TEST(MaxPool2d, GradientsOverlappingPadded) {
    nn::MaxPool2d pool(3, 2, 1);
    check_layer(pool, random_tensor(1, 2, 7, 7, 10), 80);
}

TEST(GlobalAvgPool, Gradients) {
    nn::GlobalAvgPool gap;
    check_layer(gap, random_tensor(3, 4, 5, 2, 11), 90);
}

TEST(Linear, Gradients) {
    nn::Linear fc("fc", 12, 3);
    check_layer(fc, random_tensor(4, 3, 2, 2, 12), 100);
}

TEST(BasicResidual, GradientsWithProjection) {
    nn::BasicResidual block("r", 2, 3, 2);
    check_layer(block, random_tensor(2, 2, 6, 6, 13), 110);
}

TEST(BasicResidual, GradientsIdentityShortcut) {
    nn::BasicResidual block("r", 3, 3, 1);
    check_layer(block, random_tensor(2, 3, 4, 4, 14), 120);
}

TEST(Upsample, BackwardIsTheAdjoint) {
    const Tensor x = random_tensor(2, 1, 4, 5, 15);
    const Tensor y = random_tensor(2, 1, 16, 20, 16);
    const Tensor ux = nn::upsample_bilinear(x, 16, 20);
    const Tensor uty = nn::upsample_bilinear_backward(y, 4, 5);
    double lhs = 0.0, rhs = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) lhs += ux[i] * y[i];
    for (std::size_t i = 0; i < x.size(); ++i) rhs += x[i] * uty[i];
    EXPECT_NEAR(lhs, rhs, 1e-10 * std::abs(lhs));
}

TEST(Upsample, ConstantPlaneStaysExactlyConstant) {
    Tensor x(1, 1, 4, 4, 0.3);
    const Tensor y = nn::upsample_bilinear(x, 64, 64);
    for (std::size_t i = 0; i < y.size(); ++i) ASSERT_EQ(y[i], 0.3);
}

TEST(Upsample, CornersAreAligned) {
    const Tensor x = random_tensor(1, 1, 3, 4, 17);
    const Tensor y = nn::upsample_bilinear(x, 9, 13);
    EXPECT_EQ(y.at(0, 0, 0, 0), x.at(0, 0, 0, 0));
    EXPECT_EQ(y.at(0, 0, 0, 12), x.at(0, 0, 0, 3));
    EXPECT_EQ(y.at(0, 0, 8, 0), x.at(0, 0, 2, 0));
    EXPECT_EQ(y.at(0, 0, 8, 12), x.at(0, 0, 2, 3));
    // (4, 6) maps to source (1, 1.5): midpoint of two samples.
    EXPECT_NEAR(y.at(0, 0, 4, 6), 0.5 * (x.at(0, 0, 1, 1) + x.at(0, 0, 1, 2)), 1e-15);
}

TEST(Upsample, SameSizeIsIdentity) {
    const Tensor x = random_tensor(1, 2, 5, 5, 18);
    EXPECT_EQ(nn::upsample_bilinear(x, 5, 5), x);
}

TEST(Sigmoid, StableAtExtremes) {
    EXPECT_EQ(nn::sigmoid(0.0), 0.5);
    EXPECT_EQ(nn::sigmoid(800.0), 1.0);
    EXPECT_EQ(nn::sigmoid(-800.0), 0.0);
    EXPECT_NEAR(nn::sigmoid(-30.0), std::exp(-30.0), 1e-25);
    EXPECT_NEAR(nn::sigmoid(2.0) + nn::sigmoid(-2.0), 1.0, 2.3e-16);
}

TEST(Init, NormalWeightsZeroBiases) {
    nn::Conv2d conv("c", 64, 64, 3, 1, 1, true);
    nn::ParamList ps;
    conv.collect(ps);
    nn::init_params(ps, 3, 0.01);
    double s = 0.0, s2 = 0.0;
    const Tensor& w = conv.weight().value;
    for (std::size_t i = 0; i < w.size(); ++i) {
        s += w[i];
        s2 += w[i] * w[i];
    }
    const double n = static_cast<double>(w.size());
    EXPECT_NEAR(s / n, 0.0, 5e-4);
    EXPECT_NEAR(std::sqrt(s2 / n), 0.01, 5e-4);
    for (std::size_t i = 0; i < conv.bias().value.size(); ++i) EXPECT_EQ(conv.bias().value[i], 0.0);
}

TEST(Init, SeedDeterminesWeights) {
    nn::Conv2d a("c", 3, 4, 3, 1, 1, false), b("c", 3, 4, 3, 1, 1, false);
    nn::ParamList pa, pb;
    a.collect(pa);
    b.collect(pb);
    nn::init_params(pa, 9, 0.01);
    nn::init_params(pb, 9, 0.01);
    EXPECT_EQ(a.weight().value, b.weight().value);
    nn::init_params(pb, 10, 0.01);
    EXPECT_NE(a.weight().value, b.weight().value);
}
