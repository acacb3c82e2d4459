#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <numeric>
#include <random>

#include "crackseg/balancedloss.hpp"
#include "support/gradcheck.hpp"

using namespace crackseg;

namespace {

struct RandomPair {
    ProbabilityPlane prob;
    MaskPlane gt;
};

RandomPair random_pair(int h, int w, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    RandomPair r{ProbabilityPlane(h, w), MaskPlane(h, w)};
    for (std::size_t i = 0; i < r.prob.size(); ++i) {
        r.prob.values[i] = u(rng);
        r.gt.values[i] = u(rng) < 0.3;
    }
    return r;
}

// Plain pixelwise BCE, written independently of the library.
double bce_oracle(const ProbabilityPlane& p, const MaskPlane& gt) {
    double s = 0.0;
    for (int y = 0; y < p.height; ++y)
        for (int x = 0; x < p.width; ++x) {
            const double v = std::min(std::max(p.at(y, x), 1e-7), 1.0 - 1e-7);
            s -= gt.at(y, x) ? std::log(v) : std::log(1.0 - v);
        }
    return s;
}

BundleProbabilities random_bundle(int size, std::uint64_t seed) {
    BundleProbabilities b;
    for (int h = 0; h < kNumSides; ++h) b.side[h] = random_pair(size, size, seed + h).prob;
    b.fused = random_pair(size, size, seed + 99).prob;
    return b;
}

double rel(double a, double b) {
    return std::abs(a - b) / std::max(std::abs(a), std::abs(b));
}

}  // namespace

TEST(ClassWeights, ExampleCounts) {
    const ClassWeights w = ClassWeights::from_counts(100, 900);
    EXPECT_EQ(w.alpha_crack, 5.0);
    EXPECT_NEAR(w.alpha_noncrack, 0.5556, 5e-5);
    const ClassWeights even = ClassWeights::from_counts(7, 7);
    EXPECT_EQ(even.alpha_crack, 1.0);
    EXPECT_EQ(even.alpha_noncrack, 1.0);
    EXPECT_THROW(ClassWeights::from_counts(0, 10), std::invalid_argument);
    EXPECT_THROW(ClassWeights::from_counts(10, 0), std::invalid_argument);
}

TEST(ClassWeights, ReciprocalsSumToTwo) {
    std::mt19937_64 rng(4);
    std::uniform_int_distribution<std::uint64_t> d(1, 5'000'000);
    for (int i = 0; i < 2000; ++i) {
        const std::uint64_t p = d(rng), q = d(rng);
        const ClassWeights w = ClassWeights::from_counts(p, q);
        ASSERT_EQ(w.p, p);
        ASSERT_EQ(w.q, q);
        // 1/a1 + 1/a2 = 2p/(p+q) + 2q/(p+q): exact over the stored counts.
        const std::uint64_t num = 2 * w.p + 2 * w.q, den = w.p + w.q;
        ASSERT_EQ(num, 2 * den);
        const double s = 1.0 / w.alpha_crack + 1.0 / w.alpha_noncrack;
        ASSERT_LE(std::abs(s - 2.0), std::nextafter(2.0, 3.0) - 2.0) << p << " " << q;
    }
}

TEST(ClassWeights, CountsComeFromAllTrainingMasks) {
    std::vector<MaskPlane> masks(2, MaskPlane(4, 5));
    masks[0].at(1, 1) = 1;
    masks[1].at(0, 0) = 1;
    masks[1].at(3, 4) = 1;
    const ClassWeights w = compute_class_weights(masks);
    EXPECT_EQ(w.p, 3u);
    EXPECT_EQ(w.q, 37u);
    EXPECT_EQ(w.alpha_crack, 40.0 / 6.0);
    const std::vector<MaskPlane> empty_masks(1, MaskPlane(3, 3));
    EXPECT_THROW(compute_class_weights(empty_masks), std::invalid_argument);
}

TEST(ClassWeights, JsonRoundTrip) {
    const auto path = std::filesystem::temp_directory_path() / "crackseg_cw_test.json";
    const ClassWeights w = ClassWeights::from_counts(123, 4567);
    save_class_weights(path, w);
    const ClassWeights back = load_class_weights(path);
    EXPECT_EQ(back.p, w.p);
    EXPECT_EQ(back.q, w.q);
    EXPECT_EQ(back.alpha_crack, w.alpha_crack);
    EXPECT_EQ(back.alpha_noncrack, w.alpha_noncrack);
    std::filesystem::remove(path);
}

TEST(SideLoss, UnitWeightsMatchScalarBce) {
    const ClassWeights ones = ClassWeights::explicit_weights(1.0, 1.0);
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        const RandomPair r = random_pair(8, 8, seed);
        EXPECT_LE(rel(side_loss(r.prob, r.gt, ones), bce_oracle(r.prob, r.gt)), 1e-9);
        EXPECT_EQ(fused_loss(r.prob, r.gt, ones), side_loss(r.prob, r.gt, ones));
    }
}

TEST(SideLoss, HandArithmetic) {
    const ClassWeights ones = ClassWeights::explicit_weights(1.0, 1.0);
    ProbabilityPlane half(1, 1, 0.5);
    MaskPlane crack(1, 1, 1);
    EXPECT_NEAR(side_loss(half, crack, ones), std::log(2.0), 1e-12);

    ProbabilityPlane flat(4, 6, 0.5);
    MaskPlane none(4, 6);
    EXPECT_NEAR(fused_loss(flat, none, ones), 24.0 * std::log(2.0), 1e-12);
    EXPECT_EQ(side_loss(flat, none, ClassWeights::explicit_weights(1.0, 0.0)), 0.0);
}

TEST(SideLoss, PerfectPredictionIsNearZero) {
    const RandomPair r = random_pair(8, 8, 3);
    ProbabilityPlane exact(8, 8);
    for (std::size_t i = 0; i < exact.size(); ++i) exact.values[i] = r.gt.values[i];
    EXPECT_LE(side_loss(exact, r.gt, ClassWeights::from_counts(10, 30)), 2.0 * 1e-7 * 64 * 1.5);
}

TEST(SideLoss, DoublingCrackWeightDoublesCrackTerm) {
    const RandomPair r = random_pair(8, 8, 5);
    const double crack = side_loss(r.prob, r.gt, ClassWeights::explicit_weights(1.0, 0.0));
    const double non = side_loss(r.prob, r.gt, ClassWeights::explicit_weights(0.0, 1.0));
    EXPECT_EQ(side_loss(r.prob, r.gt, ClassWeights::explicit_weights(2.0, 0.0)), 2.0 * crack);
    EXPECT_LE(rel(side_loss(r.prob, r.gt, ClassWeights::explicit_weights(2.0, 1.0)), 2.0 * crack + non), 1e-12);
}

TEST(SideLoss, ExtremePlanesStayFinite) {
    const RandomPair r = random_pair(8, 8, 6);
    const ClassWeights w = ClassWeights::from_counts(1, 9);
    for (double v : {0.0, 1.0}) {
        const double l = side_loss(ProbabilityPlane(8, 8, v), r.gt, w);
        EXPECT_TRUE(std::isfinite(l));
        EXPECT_GT(l, 0.0);
    }
}

TEST(SideLoss, ShapeMismatchThrows) {
    EXPECT_THROW(side_loss(ProbabilityPlane(4, 4), MaskPlane(4, 5), ClassWeights{}), std::invalid_argument);
}

TEST(TotalLoss, LinearInEachLambda) {
    const RandomPair r = random_pair(8, 8, 7);
    const ClassWeights w = ClassWeights::from_counts(20, 44);
    for (std::uint64_t seed = 10; seed < 30; ++seed) {
        const BundleProbabilities b = random_bundle(8, seed);
        const LambdaWeights base = lambda_case(static_cast<int>(seed % 7) + 1);
        const double t0 = total_loss(b, r.gt, w, base);
        for (int h = 0; h < kNumSides; ++h) {
            LambdaWeights bumped = base;
            bumped.lambdas[h] += 1.0;
            EXPECT_LE(rel(total_loss(b, r.gt, w, bumped) - t0, side_loss(b.side[h], r.gt, w)), 1e-9);
        }
    }
}

TEST(TotalLoss, ZeroLambdasLeaveFusedOnly) {
    const RandomPair r = random_pair(8, 8, 8);
    const BundleProbabilities b = random_bundle(8, 40);
    const ClassWeights w = ClassWeights::from_counts(3, 5);
    EXPECT_EQ(total_loss(b, r.gt, w, LambdaWeights{{0, 0, 0, 0, 0}}), fused_loss(b.fused, r.gt, w));
}

TEST(TotalLoss, EqualSideLossesScaleByLambdaSum) {
    const RandomPair r = random_pair(8, 8, 9);
    BundleProbabilities b;
    for (auto& s : b.side) s = r.prob;
    b.fused = random_pair(8, 8, 50).prob;
    const ClassWeights w = ClassWeights::from_counts(3, 5);
    const double l = side_loss(r.prob, r.gt, w), lf = fused_loss(b.fused, r.gt, w);
    EXPECT_LE(rel(total_loss(b, r.gt, w, lambda_case(7)), 3.1 * l + lf), 1e-12);
    EXPECT_LE(rel(total_loss(b, r.gt, w, lambda_case(5)), 5.0 * l + lf), 1e-12);
    const std::vector<double> four{1, 1, 1, 1};
    EXPECT_THROW(total_loss(b, r.gt, w, std::span<const double>(four)), std::invalid_argument);
}

TEST(LambdaCases, PublishedTuples) {
    using A = std::array<double, kNumSides>;
    EXPECT_EQ(lambda_case(1).lambdas, (A{4.0, 2.0, 1.0, 0.5, 0.25}));
    EXPECT_EQ(lambda_case(2).lambdas, (A{9.0, 3.0, 1.0, 1.0 / 3.0, 1.0 / 9.0}));
    EXPECT_EQ(lambda_case(3).lambdas, (A{0.25, 0.5, 1.0, 2.0, 4.0}));
    EXPECT_EQ(lambda_case(4).lambdas, (A{1.0 / 9.0, 1.0 / 3.0, 1.0, 3.0, 9.0}));
    EXPECT_EQ(lambda_case(5).lambdas, (A{1.0, 1.0, 1.0, 1.0, 1.0}));
    EXPECT_EQ(lambda_case(6).lambdas, (A{0.3, 0.7, 1.0, 0.7, 0.3}));
    EXPECT_EQ(lambda_case(7).lambdas, (A{0.5, 1.0, 0.8, 0.5, 0.3}));
    EXPECT_EQ(LambdaWeights{}.lambdas, lambda_case(7).lambdas);
    EXPECT_THROW(lambda_case(0), std::out_of_range);
    EXPECT_THROW(lambda_case(8), std::out_of_range);
}

TEST(LambdaWeights, Validation) {
    const std::vector<double> neg{1, 1, -1, 1, 1}, short_list{1, 1};
    EXPECT_THROW(LambdaWeights::from(neg), std::invalid_argument);
    EXPECT_THROW(LambdaWeights::from(short_list), std::invalid_argument);
}

namespace {

SideOutputs random_logits(int n, int size, std::uint64_t seed, double scale) {
    SideOutputs s;
    for (int h = 0; h < kNumSides; ++h) s.side[h] = testkit::random_tensor(n, 1, size, size, seed + h, scale);
    s.fused = testkit::random_tensor(n, 1, size, size, seed + 9, scale);
    return s;
}

}  // namespace

TEST(LossWithGrad, AgreesWithProbabilityForm) {
    const SideOutputs z = random_logits(2, 6, 70, 2.0);
    std::vector<MaskPlane> gts{random_pair(6, 6, 71).gt, random_pair(6, 6, 72).gt};
    const ClassWeights w = ClassWeights::from_counts(11, 61);
    const LambdaWeights lam = lambda_case(2);
    double expected = 0.0;
    for (int i = 0; i < 2; ++i) expected += total_loss(predict_probability(bundle_at(z, i)), gts[i], w, lam);
    expected /= 2.0;
    EXPECT_LE(rel(total_loss_with_grad(z, gts, w, lam).loss, expected), 1e-12);
    EXPECT_LE(rel(total_loss_with_grad(z, gts, w, lam, Reduction::mean).loss, expected / 36.0), 1e-12);
}

TEST(LossWithGrad, LogitGradientMatchesFiniteDifferences) {
    SideOutputs z = random_logits(2, 5, 80, 1.5);
    std::vector<MaskPlane> gts{random_pair(5, 5, 81).gt, random_pair(5, 5, 82).gt};
    const ClassWeights w = ClassWeights::from_counts(13, 37);
    const LambdaWeights lam = lambda_case(7);
    const LossAndGrad lg = total_loss_with_grad(z, gts, w, lam);
    auto check = [&](Tensor& t, const Tensor& g) {
        for (std::size_t i = 0; i < t.size(); ++i) {
            const double saved = t[i];
            t[i] = saved + 1e-6;
            const double up = total_loss_with_grad(z, gts, w, lam).loss;
            t[i] = saved - 1e-6;
            const double down = total_loss_with_grad(z, gts, w, lam).loss;
            t[i] = saved;
            ASSERT_LE(testkit::relative_error(g[i], (up - down) / 2e-6), 1e-6);
        }
    };
    for (int h = 0; h < kNumSides; ++h) check(z.side[h], lg.grad.side[h]);
    check(z.fused, lg.grad.fused);
}

TEST(LossWithGrad, ClampedPixelsHaveNoGradient) {
    SideOutputs z = random_logits(1, 4, 90, 1.0);
    z.fused[0] = 40.0;   // P rounds above 1 - 1e-7
    z.fused[1] = -40.0;  // P below 1e-7
    std::vector<MaskPlane> gts{MaskPlane(4, 4)};
    gts[0].values[1] = 1;
    const LossAndGrad lg = total_loss_with_grad(z, gts, ClassWeights::from_counts(1, 15), lambda_case(5));
    EXPECT_TRUE(std::isfinite(lg.loss));
    EXPECT_EQ(lg.grad.fused[0], 0.0);
    EXPECT_EQ(lg.grad.fused[1], 0.0);
}

TEST(LossWithGrad, BatchSizeMismatchThrows) {
    const SideOutputs z = random_logits(2, 4, 95, 1.0);
    std::vector<MaskPlane> gts{MaskPlane(4, 4)};
    EXPECT_THROW(total_loss_with_grad(z, gts, ClassWeights{}, LambdaWeights{}), std::invalid_argument);
}
