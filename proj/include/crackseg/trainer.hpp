#pragma once
// Segmentation training loop.
//
// The optimizer is Adam with the configured momentum used as the first-moment
// coefficient (beta1), beta2 = 0.999 and eps = 1e-8. Weight decay is
// decoupled and applies to conv weights only. The learning rate is
// piecewise constant: base_lr * decay_factor^floor(iter / decay_every).

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "crackseg/balancedloss.hpp"
#include "crackseg/checkpoint.hpp"
#include "crackseg/cracknet.hpp"
#include "crackseg/dataio.hpp"
#include "crackseg/optim.hpp"

namespace crackseg {

struct TrainConfig {
    double base_lr = 9e-5;
    double decay_factor = 0.8;
    std::int64_t decay_every = 30000;
    std::int64_t total_iters = 240000;
    int batch_size = 2;
    double momentum = 0.8;
    double weight_decay = 6e-4;
    std::uint64_t seed = 0;
    std::int64_t checkpoint_every = 10000;

    /// Full schedule scaled by 1/120 for CPU runs, with base_lr raised to 1e-3.
    static TrainConfig desk();
    void validate() const;

    friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

double lr_at(std::int64_t iter, const TrainConfig& config);

struct SegTrainState {
    std::int64_t step = 0;
    AdamState optimizer;
    std::vector<HistoryRow> history;
};

using LossFn = std::function<LossAndGrad(const SideOutputs&, std::span<const MaskPlane>)>;

/// Loss closure over the class-balanced total loss.
LossFn balanced_loss_fn(const ClassWeights& weights, const LambdaWeights& lambdas,
                        Reduction reduction = Reduction::sum);

struct TrainOptions {
    /// Stop after this many total steps; -1 runs to config.total_iters.
    std::int64_t stop_at = -1;
    /// When set, checkpoints go to <dir>/seg_step<N>.ckpt every
    /// checkpoint_every steps and when stopping early, and to
    /// <dir>/seg_final.ckpt at the end.
    std::filesystem::path checkpoint_dir;
    nlohmann::ordered_json checkpoint_meta;
    std::function<void(const HistoryRow&)> on_step;
};

/// Continues from state.step. Throws NumericError naming the step when the
/// loss becomes non-finite.
const std::vector<HistoryRow>& train_segmenter(CrackNet& model, std::span<const Sample> data, const LossFn& loss,
                                               const TrainConfig& config, SegTrainState& state,
                                               const TrainOptions& options = {});

nlohmann::ordered_json to_json(const SegConfig& c);
SegConfig seg_config_from_json(const nlohmann::json& j);
nlohmann::ordered_json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j);

void save_seg_checkpoint(const std::filesystem::path& path, CrackNet& model, const SegTrainState& state,
                         const nlohmann::ordered_json& meta = {});

struct LoadedSegModel {
    CrackNet model;
    SegTrainState state;
    nlohmann::ordered_json meta;
};

/// FormatError on wrong magic or truncation; nothing is returned partially.
LoadedSegModel load_seg_checkpoint(const std::filesystem::path& path);

/// Saves then reloads.
LoadedSegModel checkpoint_roundtrip(CrackNet& model, const SegTrainState& state, const std::filesystem::path& path);

/// Eval-mode probabilities for one image (already at model resolution).
BundleProbabilities infer(CrackNet& model, const Image& image);

}  // namespace crackseg
