#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include "crackseg/errors.hpp"
#include "crackseg/trainer.hpp"
#include "support/synthetic.hpp"

using namespace crackseg;
namespace fs = std::filesystem;

namespace {

class TempDir {
public:
    explicit TempDir(const std::string& name) : path_(fs::temp_directory_path() / ("crackseg_" + name)) {
        fs::remove_all(path_);
        fs::create_directories(path_);
    }
    ~TempDir() { fs::remove_all(path_); }
    const fs::path& path() const { return path_; }

private:
    fs::path path_;
};

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

CrackNet tiny_model(int size, std::uint64_t seed) {
    SegConfig c = SegConfig::tiny();
    c.input_size = size;
    CrackNet m(c);
    init_weights(m, seed);
    return m;
}

ClassWeights weights_for(const std::vector<Sample>& data) {
    std::vector<MaskPlane> masks;
    for (const Sample& s : data) masks.push_back(s.mask);
    return compute_class_weights(masks);
}

TrainConfig short_config(std::int64_t iters) {
    TrainConfig c = TrainConfig::desk();
    c.total_iters = iters;
    c.decay_every = 4;
    c.checkpoint_every = 1000;
    c.seed = 3;
    return c;
}

double batch_loss(CrackNet& m, const std::vector<Sample>& data, const LossFn& loss) {
    std::vector<const Image*> ims;
    std::vector<MaskPlane> gts;
    for (const Sample& s : data) {
        ims.push_back(&s.image);
        gts.push_back(s.mask);
    }
    return loss(m.forward(to_batch(ims), nn::Mode::train), gts).loss;
}

void expect_same_params(CrackNet& a, CrackNet& b) {
    const auto pa = a.parameters(), pb = b.parameters();
    ASSERT_EQ(pa.size(), pb.size());
    for (std::size_t i = 0; i < pa.size(); ++i) ASSERT_EQ(pa[i]->value, pb[i]->value) << pa[i]->name;
}

}  // namespace

TEST(LrSchedule, PublishedValuesExactly) {
    const TrainConfig c;
    EXPECT_EQ(lr_at(0, c), 9e-5);
    EXPECT_EQ(lr_at(29999, c), 9e-5);
    EXPECT_EQ(lr_at(30000, c), 7.2e-5);
    EXPECT_EQ(lr_at(60000, c), 5.76e-5);
    EXPECT_EQ(lr_at(89999, c), 5.76e-5);
}

TEST(LrSchedule, PiecewiseConstantAndNonincreasing) {
    const TrainConfig c;
    double prev = lr_at(0, c);
    for (std::int64_t it = 0; it <= c.total_iters; it += 997) {
        const double lr = lr_at(it, c);
        EXPECT_LE(lr, prev);
        EXPECT_EQ(lr, lr_at(it / c.decay_every * c.decay_every, c));
        prev = lr;
    }
    EXPECT_NEAR(lr_at(239999, c), 9e-5 * std::pow(0.8, 7), 1e-18);
    const TrainConfig d = TrainConfig::desk();
    EXPECT_EQ(lr_at(499, d), d.base_lr);
    EXPECT_EQ(lr_at(500, d), d.base_lr * 0.8);
}

TEST(TrainConfigTest, Validation) {
    TrainConfig c;
    EXPECT_NO_THROW(c.validate());
    c.decay_factor = 1.0;
    EXPECT_THROW(c.validate(), InputError);
    c = TrainConfig{};
    c.batch_size = 0;
    EXPECT_THROW(c.validate(), InputError);
    const TrainConfig d = TrainConfig::desk();
    EXPECT_EQ(d.total_iters, 2000);
    EXPECT_EQ(d.decay_every, 500);
    EXPECT_EQ(train_config_from_json(to_json(d)), d);
}

TEST(Training, DescentOnFrozenBatch) {
    const auto data = testkit::synthetic_set(2, 32, 1);
    CrackNet m = tiny_model(32, 4);
    const LossFn loss = balanced_loss_fn(weights_for(data), lambda_case(7));
    const double before = batch_loss(m, data, loss);
    TrainConfig c = short_config(1);
    c.weight_decay = 0.0;
    c.base_lr = 1e-5;
    SegTrainState state;
    train_segmenter(m, data, loss, c, state);
    EXPECT_LT(batch_loss(m, data, loss), before);
}

TEST(Training, OverfitsSmallSetIn300Steps) {
    const auto data = testkit::synthetic_set(8, 64, 2);
    CrackNet m = tiny_model(64, 5);
    TrainConfig c = TrainConfig::desk();
    c.total_iters = 300;
    SegTrainState state;
    const auto& h = train_segmenter(m, data, balanced_loss_fn(weights_for(data), lambda_case(7)), c, state);
    ASSERT_EQ(h.size(), 300u);
    EXPECT_EQ(state.step, 300);
    double first = 0.0, last = 0.0;
    for (int i = 0; i < 10; ++i) {
        first += h[i].loss;
        last += h[h.size() - 1 - i].loss;
    }
    EXPECT_LT(h.back().loss, 0.25 * h.front().loss) << h.front().loss << " -> " << h.back().loss;
    EXPECT_LT(last, 0.25 * first);
    for (std::size_t i = 0; i < h.size(); ++i) {
        EXPECT_EQ(h[i].iter, static_cast<std::int64_t>(i));
        EXPECT_EQ(h[i].lr, lr_at(h[i].iter, c));
    }
}

TEST(Training, SameSeedSameParameters) {
    const auto data = testkit::synthetic_set(4, 32, 3);
    const LossFn loss = balanced_loss_fn(weights_for(data), lambda_case(7));
    CrackNet a = tiny_model(32, 6), b = tiny_model(32, 6);
    SegTrainState sa, sb;
    train_segmenter(a, data, loss, short_config(6), sa);
    train_segmenter(b, data, loss, short_config(6), sb);
    expect_same_params(a, b);
    EXPECT_EQ(sa.history, sb.history);
    EXPECT_EQ(sa.optimizer, sb.optimizer);
}

TEST(Training, ResumeMatchesUninterruptedRun) {
    TempDir dir("resume");
    const auto data = testkit::synthetic_set(3, 32, 4);
    const LossFn loss = balanced_loss_fn(weights_for(data), lambda_case(7));
    const TrainConfig c = short_config(9);

    CrackNet whole = tiny_model(32, 7);
    SegTrainState ws;
    train_segmenter(whole, data, loss, c, ws);

    CrackNet part = tiny_model(32, 7);
    SegTrainState ps;
    TrainOptions opt;
    opt.stop_at = 5;
    opt.checkpoint_dir = dir.path();
    train_segmenter(part, data, loss, c, ps, opt);
    ASSERT_EQ(ps.history.size(), 5u);
    ASSERT_TRUE(fs::exists(dir.path() / "seg_step5.ckpt"));

    LoadedSegModel resumed = load_seg_checkpoint(dir.path() / "seg_step5.ckpt");
    EXPECT_EQ(resumed.state.step, 5);
    train_segmenter(resumed.model, data, loss, c, resumed.state);
    EXPECT_EQ(resumed.state.history, ws.history);
    expect_same_params(resumed.model, whole);
}

TEST(Training, PeriodicAndFinalCheckpoints) {
    TempDir dir("periodic");
    const auto data = testkit::synthetic_set(2, 32, 5);
    TrainConfig c = short_config(5);
    c.checkpoint_every = 2;
    CrackNet m = tiny_model(32, 8);
    SegTrainState s;
    TrainOptions opt;
    opt.checkpoint_dir = dir.path();
    int calls = 0;
    opt.on_step = [&](const HistoryRow&) { ++calls; };
    train_segmenter(m, data, balanced_loss_fn(weights_for(data), lambda_case(7)), c, s, opt);
    EXPECT_EQ(calls, 5);
    EXPECT_TRUE(fs::exists(dir.path() / "seg_step2.ckpt"));
    EXPECT_TRUE(fs::exists(dir.path() / "seg_step4.ckpt"));
    EXPECT_TRUE(fs::exists(dir.path() / "seg_final.ckpt"));
    EXPECT_EQ(load_seg_checkpoint(dir.path() / "seg_step4.ckpt").state.history.size(), 4u);
}

TEST(Training, NonFiniteLossAbortsNamingTheStep) {
    const auto data = testkit::synthetic_set(2, 32, 6);
    const LossFn good = balanced_loss_fn(weights_for(data), lambda_case(7));
    int calls = 0;
    const LossFn poisoned = [&](const SideOutputs& z, std::span<const MaskPlane> gts) {
        LossAndGrad lg = good(z, gts);
        if (++calls == 3) lg.loss = std::numeric_limits<double>::quiet_NaN();
        return lg;
    };
    CrackNet m = tiny_model(32, 9);
    SegTrainState s;
    try {
        train_segmenter(m, data, poisoned, short_config(5), s);
        FAIL() << "expected NumericError";
    } catch (const NumericError& e) {
        EXPECT_NE(std::string(e.what()).find("step 2"), std::string::npos) << e.what();
    }
}

TEST(Training, EmptyDatasetRejected) {
    CrackNet m = tiny_model(32, 1);
    SegTrainState s;
    const std::vector<Sample> none;
    EXPECT_ANY_THROW(train_segmenter(m, none, balanced_loss_fn(ClassWeights{}, LambdaWeights{}), short_config(1), s));
}

TEST(Checkpoint, RoundTripIsBitExact) {
    TempDir dir("ckpt");
    const auto data = testkit::synthetic_set(2, 32, 7);
    CrackNet m = tiny_model(32, 10);
    SegTrainState s;
    train_segmenter(m, data, balanced_loss_fn(weights_for(data), lambda_case(7)), short_config(3), s);

    LoadedSegModel back = checkpoint_roundtrip(m, s, dir.path() / "a.ckpt");
    expect_same_params(back.model, m);
    EXPECT_EQ(back.state.step, s.step);
    EXPECT_EQ(back.state.optimizer, s.optimizer);
    EXPECT_EQ(back.state.history, s.history);

    const BundleProbabilities p1 = infer(m, data[0].image), p2 = infer(back.model, data[0].image);
    EXPECT_EQ(p1.fused, p2.fused);
    for (int h = 0; h < kNumSides; ++h) EXPECT_EQ(p1.side[h], p2.side[h]);

    save_seg_checkpoint(dir.path() / "b.ckpt", back.model, back.state);
    EXPECT_EQ(slurp(dir.path() / "a.ckpt"), slurp(dir.path() / "b.ckpt"));
    EXPECT_FALSE(fs::exists(dir.path() / "a.ckpt.tmp"));
}

TEST(Checkpoint, MetaAndConfigSurvive) {
    TempDir dir("ckptmeta");
    SegConfig c = SegConfig::tiny();
    c.input_size = 48;
    c.use_batchnorm = false;
    CrackNet m(c);
    init_weights(m, 2);
    nlohmann::ordered_json meta;
    meta["train"] = to_json(short_config(4));
    meta["lambdas"] = lambda_case(3).lambdas;
    save_seg_checkpoint(dir.path() / "m.ckpt", m, SegTrainState{}, meta);
    const LoadedSegModel back = load_seg_checkpoint(dir.path() / "m.ckpt");
    EXPECT_EQ(back.model.config().input_size, 48);
    EXPECT_FALSE(back.model.config().use_batchnorm);
    EXPECT_EQ(train_config_from_json(back.meta.at("train")), short_config(4));
    EXPECT_EQ(back.meta.at("lambdas").get<std::vector<double>>()[0], 0.25);
}

TEST(Checkpoint, WrongMagicAndTruncationAreFormatErrors) {
    TempDir dir("ckptbad");
    CrackNet m = tiny_model(32, 11);
    save_seg_checkpoint(dir.path() / "good.ckpt", m, SegTrainState{});
    const std::string bytes = slurp(dir.path() / "good.ckpt");

    std::string det = bytes;
    det.replace(0, kDetectMagic.size(), kDetectMagic);
    std::ofstream(dir.path() / "det.ckpt", std::ios::binary) << det;
    try {
        load_seg_checkpoint(dir.path() / "det.ckpt");
        FAIL() << "expected FormatError";
    } catch (const FormatError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("CRACKSEG1"), std::string::npos) << msg;
        EXPECT_NE(msg.find("CRACKDET1"), std::string::npos) << msg;
    }
    for (std::size_t cut : {std::size_t{4}, bytes.size() / 2, bytes.size() - 1}) {
        std::ofstream(dir.path() / "cut.ckpt", std::ios::binary | std::ios::trunc) << bytes.substr(0, cut);
        EXPECT_THROW(load_seg_checkpoint(dir.path() / "cut.ckpt"), FormatError) << cut;
    }
    EXPECT_ANY_THROW(load_seg_checkpoint(dir.path() / "absent.ckpt"));
}

TEST(Checkpoint, RestoreValidatesBeforeMutating) {
    CrackNet a = tiny_model(32, 12), b = tiny_model(32, 13);
    auto saved = snapshot(a.parameters());
    saved.back().value = Tensor(2, 3, 1, 1);
    const auto before = snapshot(b.parameters());
    EXPECT_ANY_THROW(restore(b.parameters(), saved));
    const auto after = snapshot(b.parameters());
    for (std::size_t i = 0; i < before.size(); ++i) ASSERT_EQ(before[i].value, after[i].value);
}

TEST(History, CsvFormat) {
    TempDir dir("history");
    write_history_csv(dir.path() / "h.csv", {{0, 1.5, 9e-5}, {1, 1.25, 7.2e-5}});
    const std::string csv = slurp(dir.path() / "h.csv");
    EXPECT_EQ(csv.rfind("iter,loss,lr\n0,1.5,", 0), 0u) << csv;
    EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 3);
}
