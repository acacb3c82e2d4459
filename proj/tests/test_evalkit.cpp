#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include <nlohmann/json.hpp>

#include "crackseg/evalkit.hpp"
#include "support/oracles.hpp"

using namespace crackseg;
using namespace crackseg::testkit;

namespace {

MaskPlane mask_from(int h, int w, std::initializer_list<int> values) {
    MaskPlane m(h, w);
    std::copy(values.begin(), values.end(), m.values.begin());
    return m;
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

}  // namespace

TEST(Grid, NinetyNineHundredths) {
    const auto g = default_threshold_grid();
    ASSERT_EQ(g.size(), 99u);
    for (int k = 1; k <= 99; ++k) EXPECT_EQ(g[k - 1], k / 100.0);
}

TEST(Binarize, ThresholdIsInclusive) {
    const MaskPlane all = binarize(ProbabilityPlane(3, 3, 0.5), 0.48);
    for (auto v : all.values) EXPECT_EQ(v, 1);
    ProbabilityPlane p(1, 3);
    p.values = {0.47, 0.48, 0.49};
    EXPECT_EQ(binarize(p, 0.48).values, (std::vector<std::uint8_t>{0, 1, 1}));
}

TEST(Binarize, RecoversBinaryPlanesAndIsMonotone) {
    std::mt19937_64 rng(1);
    ProbabilityPlane prob;
    MaskPlane gt;
    random_eval_pair(6, 7, rng, prob, gt);
    ProbabilityPlane exact(6, 7);
    for (std::size_t i = 0; i < gt.size(); ++i) exact.values[i] = gt.values[i];
    for (double m : {0.01, 0.48, 0.99}) EXPECT_EQ(binarize(exact, m), gt);
    MaskPlane prev = binarize(prob, 0.01);
    for (double m : default_threshold_grid()) {
        const MaskPlane cur = binarize(prob, m);
        for (std::size_t i = 0; i < cur.size(); ++i) ASSERT_LE(cur.values[i], prev.values[i]);
        prev = cur;
    }
}

TEST(Confusion, HandExamples) {
    const MaskPlane gt = mask_from(2, 2, {0, 1, 0, 0});
    const ConfusionCounts c = confusion(MaskPlane(2, 2, 1), gt);
    EXPECT_EQ(c, (ConfusionCounts{1, 0, 3, 0}));
    const ConfusionCounts same = confusion(gt, gt);
    EXPECT_EQ(same.fp + same.fn, 0u);
    MaskPlane inv = gt;
    for (auto& v : inv.values) v = !v;
    const ConfusionCounts comp = confusion(inv, gt);
    EXPECT_EQ(comp.tp + comp.tn, 0u);
    EXPECT_EQ(comp.total(), 4u);
    EXPECT_THROW(confusion(MaskPlane(2, 3), gt), std::invalid_argument);
}

TEST(PrecisionRecall, HandExamplesAndConventions) {
    const PrecisionRecallF a = precision_recall_f({1, 0, 3, 0});
    EXPECT_EQ(a.precision, 0.25);
    EXPECT_EQ(a.recall, 1.0);
    EXPECT_NEAR(a.f, 0.4, 1e-15);
    const PrecisionRecallF empty = precision_recall_f({0, 9, 0, 0});
    EXPECT_EQ(empty.precision, 1.0);
    EXPECT_EQ(empty.recall, 1.0);
    EXPECT_EQ(empty.f, 1.0);
    const PrecisionRecallF zero = precision_recall_f({0, 5, 2, 3});
    EXPECT_EQ(zero.precision, 0.0);
    EXPECT_EQ(zero.recall, 0.0);
    EXPECT_EQ(zero.f, 0.0);
}

TEST(AccuracyMiou, HandExamplesAndConventions) {
    const AccuracyMiou a = accuracy_miou({1, 0, 3, 0});
    EXPECT_EQ(a.accuracy, 0.25);
    EXPECT_EQ(a.miou, 0.125);
    const AccuracyMiou bg = accuracy_miou({0, 16, 0, 0});
    EXPECT_EQ(bg.accuracy, 1.0);
    EXPECT_EQ(bg.miou, 1.0);
    const AccuracyMiou perfect = accuracy_miou({4, 12, 0, 0});
    EXPECT_EQ(perfect.miou, 1.0);
}

TEST(SweepCounts, MatchesPerThresholdConfusion) {
    std::mt19937_64 rng(2);
    const auto grid = default_threshold_grid();
    for (int t = 0; t < 20; ++t) {
        ProbabilityPlane prob;
        MaskPlane gt;
        random_eval_pair(5, 8, rng, prob, gt);
        const auto counts = sweep_counts(prob, gt, grid);
        ASSERT_EQ(counts.size(), grid.size());
        for (std::size_t k = 0; k < grid.size(); ++k) {
            const OracleCounts o = oracle_counts(prob, gt, grid[k]);
            ASSERT_EQ(counts[k], (ConfusionCounts{o.tp, o.tn, o.fp, o.fn})) << "m=" << grid[k];
            ASSERT_EQ(counts[k].total(), prob.size());
        }
    }
}

TEST(DatasetBestF, PerfectSingleImageTiesToSmallestM) {
    MaskPlane gt = mask_from(2, 2, {1, 0, 0, 1});
    ProbabilityPlane prob(2, 2);
    for (std::size_t i = 0; i < 4; ++i) prob.values[i] = gt.values[i];
    const std::vector<ProbabilityPlane> ps{prob};
    const std::vector<MaskPlane> gs{gt};
    const DatasetBestF d = dataset_best_f(ps, gs, default_threshold_grid());
    EXPECT_EQ(d.ds, 1.0);
    EXPECT_EQ(d.best_threshold, 0.01);
    EXPECT_EQ(d.sweep.size(), 99u);
    for (const SweepRow& r : d.sweep) EXPECT_EQ(r.f, 1.0);
}

TEST(DatasetBestF, MisalignedListsThrow) {
    const std::vector<ProbabilityPlane> ps(2, ProbabilityPlane(2, 2));
    const std::vector<MaskPlane> gs(1, MaskPlane(2, 2));
    const auto grid = default_threshold_grid();
    EXPECT_ANY_THROW(dataset_best_f(ps, gs, grid));
    EXPECT_ANY_THROW(image_best_f(ps, gs, grid));
}

TEST(ImageBestF, MeanOfPerImageBest) {
    // Image 1: one crack pixel predicted along with three false alarms at every
    // threshold, so its best F is 0.4. Image 2 is perfect.
    ProbabilityPlane p1(2, 2, 0.9);
    const MaskPlane g1 = mask_from(2, 2, {0, 1, 0, 0});
    ProbabilityPlane p2(2, 2);
    const MaskPlane g2 = mask_from(2, 2, {1, 0, 0, 0});
    p2.values = {1.0, 0.0, 0.0, 0.0};
    const std::vector<ProbabilityPlane> ps{p1, p2};
    const std::vector<MaskPlane> gs{g1, g2};
    EXPECT_NEAR(image_best_f(ps, gs, default_threshold_grid()), 0.7, 1e-15);
}

TEST(EvaluateDataset, MatchesBruteForceOracle) {
    std::mt19937_64 rng(3);
    std::uniform_int_distribution<int> dim(1, 8), count(1, 4);
    for (int trial = 0; trial < 50; ++trial) {
        const int n = count(rng), h = dim(rng), w = dim(rng);
        std::vector<ProbabilityPlane> ps(n);
        std::vector<MaskPlane> gs(n);
        for (int i = 0; i < n; ++i) random_eval_pair(h, w, rng, ps[i], gs[i]);
        const MetricReport r = evaluate_dataset(ps, gs, std::nullopt, std::nullopt);
        const OracleReport o = oracle_report(ps, gs, 0.48);
        ASSERT_NEAR(r.accuracy, o.accuracy, 1e-12);
        ASSERT_NEAR(r.miou, o.miou, 1e-12);
        ASSERT_NEAR(r.ds, o.ds, 1e-12);
        ASSERT_NEAR(r.is_score, o.is, 1e-12);
        ASSERT_NEAR(r.bp, o.bp, 1e-12);
        ASSERT_NEAR(r.br, o.br, 1e-12);
        ASSERT_EQ(r.best_threshold, o.m_star);
        ASSERT_EQ(r.sweep.size(), 99u);
        for (std::size_t k = 0; k < 99; ++k) {
            ASSERT_EQ(r.sweep[k].m, o.m[k]);
            ASSERT_NEAR(r.sweep[k].precision, o.p[k], 1e-12);
            ASSERT_NEAR(r.sweep[k].recall, o.r[k], 1e-12);
            ASSERT_NEAR(r.sweep[k].f, o.f[k], 1e-12);
            ASSERT_GE(r.ds, r.sweep[k].f);
        }
        ASSERT_EQ(r.n_images, static_cast<std::size_t>(n));
    }
}

TEST(EvaluateDataset, PermutationInvariant) {
    std::mt19937_64 rng(4);
    std::vector<ProbabilityPlane> ps(4);
    std::vector<MaskPlane> gs(4);
    for (int i = 0; i < 4; ++i) random_eval_pair(5, 5, rng, ps[i], gs[i]);
    const MetricReport a = evaluate_dataset(ps, gs, std::nullopt, std::nullopt);
    std::reverse(ps.begin(), ps.end());
    std::reverse(gs.begin(), gs.end());
    const MetricReport b = evaluate_dataset(ps, gs, std::nullopt, std::nullopt);
    EXPECT_EQ(a.accuracy, b.accuracy);
    EXPECT_EQ(a.ds, b.ds);
    EXPECT_NEAR(a.is_score, b.is_score, 1e-15);
    EXPECT_EQ(a.best_threshold, b.best_threshold);
}

TEST(EvaluateDataset, PerfectPredictionsScoreOne) {
    std::mt19937_64 rng(5);
    std::vector<ProbabilityPlane> ps(3);
    std::vector<MaskPlane> gs(3);
    for (int i = 0; i < 3; ++i) {
        random_eval_pair(6, 6, rng, ps[i], gs[i]);
        for (std::size_t j = 0; j < gs[i].size(); ++j) ps[i].values[j] = gs[i].values[j];
    }
    const MetricReport r = evaluate_dataset(ps, gs, std::nullopt, std::nullopt);
    for (double v : {r.accuracy, r.miou, r.ds, r.is_score, r.bp, r.br}) EXPECT_EQ(v, 1.0);
}

TEST(GuidedFilter, RadiusZeroIsIdentity) {
    std::mt19937_64 rng(6);
    ProbabilityPlane prob;
    MaskPlane gt;
    random_eval_pair(9, 7, rng, prob, gt);
    Plane<double> guide(9, 7);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (double& v : guide.values) v = u(rng);
    for (double eps : {0.0, 1e-3, 10.0}) EXPECT_EQ(guided_filter(prob, guide, 0, eps).values, prob.values);
}

TEST(GuidedFilter, SelfGuidedWithZeroEpsIsIdentity) {
    std::mt19937_64 rng(7);
    ProbabilityPlane prob;
    MaskPlane gt;
    random_eval_pair(12, 10, rng, prob, gt);
    // A flat patch exercises the zero-variance branch.
    for (int y = 0; y < 5; ++y)
        for (int x = 0; x < 5; ++x) prob.at(y, x) = 0.3;
    for (int r : {1, 2, 4}) {
        const ProbabilityPlane q = guided_filter(prob, prob, r, 0.0);
        for (std::size_t i = 0; i < q.size(); ++i) ASSERT_NEAR(q.values[i], prob.values[i], 1e-6) << "r=" << r;
    }
}

TEST(GuidedFilter, ConstantGuideIsDoubleBoxFilter) {
    std::mt19937_64 rng(8);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int r : {1, 2}) {
        ProbabilityPlane prob(6, 6);
        for (double& v : prob.values) v = u(rng);
        const ProbabilityPlane q = guided_filter(prob, Plane<double>(6, 6, 0.4), r, 1e-3);
        const Plane<double> expected = oracle_box(oracle_box(prob, r), r);
        for (std::size_t i = 0; i < q.size(); ++i) ASSERT_NEAR(q.values[i], expected.values[i], 1e-9);
    }
}

TEST(GuidedFilter, LargeEpsTendsToDoubleBoxFilter) {
    std::mt19937_64 rng(9);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    ProbabilityPlane prob(8, 8);
    Plane<double> guide(8, 8);
    for (double& v : prob.values) v = u(rng);
    for (double& v : guide.values) v = u(rng);
    const ProbabilityPlane q = guided_filter(prob, guide, 2, 1e9);
    const Plane<double> expected = oracle_box(oracle_box(prob, 2), 2);
    for (std::size_t i = 0; i < q.size(); ++i) ASSERT_NEAR(q.values[i], expected.values[i], 1e-8);
}

TEST(GuidedFilter, BoxMeanMatchesOracleAndOutputIsClamped) {
    std::mt19937_64 rng(10);
    std::uniform_real_distribution<double> u(-1.0, 2.0);
    Plane<double> in(7, 5);
    for (double& v : in.values) v = u(rng);
    const Plane<double> got = box_mean(in, 3), want = oracle_box(in, 3);
    for (std::size_t i = 0; i < got.size(); ++i) ASSERT_NEAR(got.values[i], want.values[i], 1e-12);

    ProbabilityPlane prob(7, 5);
    for (std::size_t i = 0; i < prob.size(); ++i) prob.values[i] = (i % 3) == 0 ? 1.0 : 0.0;
    Plane<double> guide(7, 5);
    for (std::size_t i = 0; i < guide.size(); ++i) guide.values[i] = (i % 3) == 0 ? 5.0 : -5.0 + 0.1 * i;
    for (double v : guided_filter(prob, guide, 1, 1e-6).values) {
        EXPECT_GE(v, 0.0);
        EXPECT_LE(v, 1.0);
    }
    EXPECT_THROW(guided_filter(prob, Plane<double>(5, 7), 1, 1e-3), std::invalid_argument);
}

TEST(EvaluateDataset, GuidedFilterChangesScores) {
    std::mt19937_64 rng(11);
    std::vector<ProbabilityPlane> ps(2);
    std::vector<MaskPlane> gs(2);
    std::vector<Plane<double>> guides(2, Plane<double>(8, 8));
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int i = 0; i < 2; ++i) {
        random_eval_pair(8, 8, rng, ps[i], gs[i]);
        for (double& v : guides[i].values) v = u(rng);
    }
    const MetricReport raw = evaluate_dataset(ps, gs, std::nullopt, std::nullopt);
    const MetricReport gf = evaluate_dataset(ps, gs, std::span<const Plane<double>>(guides), GuidedFilterParams{});
    EXPECT_TRUE(gf.guided_filter);
    EXPECT_FALSE(raw.guided_filter);
    EXPECT_NE(raw.sweep[40].f, gf.sweep[40].f);
}

TEST(Reports, JsonAndCsvAreStable) {
    std::mt19937_64 rng(12);
    std::vector<ProbabilityPlane> ps(3);
    std::vector<MaskPlane> gs(3);
    for (int i = 0; i < 3; ++i) random_eval_pair(6, 6, rng, ps[i], gs[i]);
    const MetricReport r = evaluate_dataset(ps, gs, std::nullopt, std::nullopt);
    EXPECT_EQ(report_json(r), report_json(evaluate_dataset(ps, gs, std::nullopt, std::nullopt)));

    const auto j = nlohmann::json::parse(report_json(r));
    EXPECT_EQ(j.at("schema_version").get<int>(), kReportSchemaVersion);
    EXPECT_EQ(j.at("ds").get<double>(), r.ds);
    EXPECT_EQ(j.at("sweep").size(), 99u);

    const auto dir = std::filesystem::temp_directory_path() / "crackseg_evalkit_test";
    std::filesystem::create_directories(dir);
    write_sweep_csv(dir / "a.csv", r.sweep);
    write_sweep_csv(dir / "b.csv", r.sweep);
    const std::string csv = slurp(dir / "a.csv");
    EXPECT_EQ(csv, slurp(dir / "b.csv"));
    EXPECT_EQ(csv.rfind("m,precision,recall,f\n", 0), 0u);
    EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 100);
    write_report_json(dir / "r.json", r);
    EXPECT_EQ(slurp(dir / "r.json"), report_json(r));
    std::filesystem::remove_all(dir);
}
