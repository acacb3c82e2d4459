#pragma once
// Feature-pyramid segmentation network: a 13-conv VGG-16-style backbone in
// five blocks, a 1x1 side output tapped from the last conv of every block,
// bilinear upsampling of each side output to the input size, and a 1x1
// fusion conv over the five upsampled side planes.

#include <array>
#include <cstdint>
#include <optional>
#include <vector>

#include "crackseg/image.hpp"
#include "crackseg/nn.hpp"
#include "crackseg/tensor.hpp"

namespace crackseg {

inline constexpr int kNumSides = 5;
/// Convolutions per block; 13 in total.
inline constexpr std::array<int, kNumSides> kBlockConvCounts{2, 2, 3, 3, 3};
/// A 2x2 max-pool follows blocks 1-4; the last block is not pooled.
inline constexpr std::array<bool, kNumSides> kPoolAfterBlock{true, true, true, true, false};
inline constexpr double kDefaultInitStd = 0.01;

struct SegConfig {
    int in_channels = 3;
    std::array<int, kNumSides> block_channels{64, 128, 256, 512, 512};
    bool use_batchnorm = true;
    int input_size = 256;

    static SegConfig tiny() {
        SegConfig c;
        c.block_channels = {8, 16, 32, 64, 64};
        return c;
    }
    void validate() const;

    friend bool operator==(const SegConfig&, const SegConfig&) = default;
};

/// Batched logits, every plane (n, 1, H, W) at input resolution.
struct SideOutputs {
    std::array<Tensor, kNumSides> side;
    Tensor fused;
};

/// One image's six logit planes.
struct SideOutputBundle {
    std::array<Plane<double>, kNumSides> side;
    Plane<double> fused;
};

/// Elementwise probabilities for a bundle: sides 1..5 then fused.
struct BundleProbabilities {
    std::array<ProbabilityPlane, kNumSides> side;
    ProbabilityPlane fused;
};

class CrackNet {
public:
    explicit CrackNet(const SegConfig& config);

    const SegConfig& config() const { return config_; }

    /// images: (n, in_channels, H, W) with H and W divisible by 16.
    SideOutputs forward(const Tensor& images, nn::Mode mode);
    /// Accumulates parameter gradients given d(loss)/d(logit) for every plane.
    void backward(const SideOutputs& grad);

    /// Parameter order is stable: blocks, side convs, fusion conv.
    nn::ParamList parameters();

    int conv_count() const;
    /// Spatial size (h, w) of each side tap before upsampling, from the last forward.
    const std::array<std::pair<int, int>, kNumSides>& tap_sizes() const { return tap_sizes_; }

    nn::Conv2d& side_conv(int h) { return side_convs_.at(h); }
    nn::Conv2d& fuse_conv() { return fuse_; }

private:
    struct ConvUnit {
        nn::Conv2d conv;
        std::optional<nn::BatchNorm2d> bn;
        nn::ReLU relu;
    };

    SegConfig config_;
    std::array<std::vector<ConvUnit>, kNumSides> blocks_;
    std::array<nn::MaxPool2d, kNumSides - 1> pools_;
    std::array<nn::Conv2d, kNumSides> side_convs_;
    nn::Conv2d fuse_;
    std::array<std::pair<int, int>, kNumSides> tap_sizes_{};
    int in_h_ = 0, in_w_ = 0;
};

CrackNet build_cracknet(const SegConfig& config);

/// Zero-mean normal conv weights (std 0.01 by default), zero biases.
void init_weights(CrackNet& model, std::uint64_t seed, double weight_std = kDefaultInitStd);

/// Splits batch element `index` into per-image planes.
SideOutputBundle bundle_at(const SideOutputs& outputs, int index);

/// Logistic sigmoid of every plane. Throws on non-finite logits.
BundleProbabilities predict_probability(const SideOutputBundle& bundle);
ProbabilityPlane predict_probability(const Plane<double>& logits);

/// Packs HWC images into an NCHW batch.
Tensor to_batch(const std::vector<const Image*>& images);

}  // namespace crackseg
