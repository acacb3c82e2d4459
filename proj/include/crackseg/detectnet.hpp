#pragma once
// Patch-level crack/non-crack classifier.
//
// Every backbone ends in global average pooling and a two-way linear head;
// the crack probability is the softmax of the two logits, i.e.
// sigmoid(z_crack - z_noncrack). Predictions use p >= 0.5 for crack.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "crackseg/checkpoint.hpp"
#include "crackseg/dataio.hpp"
#include "crackseg/nn.hpp"

namespace crackseg {

enum class Backbone { alexnet_like, vgg16_like, vgg19_like, resnet_like, tiny };

std::string_view to_string(Backbone b);
Backbone parse_backbone(std::string_view s);

struct DetectConfig {
    Backbone backbone = Backbone::resnet_like;
    int input_size = kDefaultPatchSize;
    double lr_phase1 = 1e-3;
    double lr_phase2 = 3e-4;
    int phase_length = 250;
    int batch_size = 32;
    bool pretrained_init = false;
    std::string pretrained_path;

    void validate() const;
    int total_iters() const { return 2 * phase_length; }

    friend bool operator==(const DetectConfig&, const DetectConfig&) = default;
};

nlohmann::ordered_json to_json(const DetectConfig& c);
DetectConfig detect_config_from_json(const nlohmann::json& j);

inline constexpr double kDetectClamp = 1e-7;
inline constexpr double kDetectCutoff = 0.5;

class Detector {
public:
    explicit Detector(const DetectConfig& config);

    const DetectConfig& config() const { return config_; }

    /// (n, 3, S, S) -> logits (n, 2, 1, 1); channel 1 is crack.
    Tensor forward(const Tensor& images, nn::Mode mode);
    void backward(const Tensor& grad_logits);
    nn::ParamList parameters();
    int conv_count();

private:
    DetectConfig config_;
    nn::Sequential net_;
};

/// Crack probability per sample from (n, 2, 1, 1) logits.
std::vector<double> crack_probability(const Tensor& logits);

/// Mean over the batch of -[y log p + (1-y) log(1-p)], p clamped to
/// [1e-7, 1-1e-7].
double detect_loss(std::span<const double> p, std::span<const int> y);

struct DetectLossAndGrad {
    double loss = 0.0;
    Tensor grad;  // d(loss)/d(logits)
};
DetectLossAndGrad detect_loss_with_grad(const Tensor& logits, std::span<const int> y);

/// He-normal initialization, or weights from config.pretrained_path when
/// pretrained_init is set and the file exists (a warning is printed and the
/// normal initialization kept otherwise).
Detector build_detector(const DetectConfig& config, std::uint64_t seed = 0);

struct DetectTrainState {
    std::int64_t step = 0;
    AdamState optimizer;
    std::vector<HistoryRow> history;
};

/// Runs phase_length steps at lr_phase1 then phase_length at lr_phase2.
/// Patches must be input_size square and contain both classes.
const std::vector<HistoryRow>& train_detector(Detector& model, std::span<const Patch> patches,
                                              DetectTrainState& state, std::uint64_t seed,
                                              std::int64_t stop_at = -1);

enum class DetectLabel { non_crack, crack };

struct DetectPrediction {
    double p_crack = 0.0;
    DetectLabel label = DetectLabel::non_crack;
    double latency_ms = 0.0;
};

std::vector<DetectPrediction> predict(Detector& model, std::span<const Image> images, int batch_size = 32);

struct DetectMetrics {
    double accuracy = 0.0;
    double mean_latency_ms = 0.0;  // per batch
    std::size_t n_samples = 0;
};

DetectMetrics evaluate_detector(Detector& model, std::span<const Patch> patches, int batch_size = 32);
nlohmann::ordered_json to_json(const DetectMetrics& m);

void save_detect_checkpoint(const std::filesystem::path& path, Detector& model, const DetectTrainState& state,
                            std::uint64_t seed);

struct LoadedDetector {
    Detector model;
    DetectTrainState state;
    std::uint64_t seed = 0;
};
LoadedDetector load_detect_checkpoint(const std::filesystem::path& path);

}  // namespace crackseg
