#pragma once
// Layers with explicit forward/backward passes. Each layer caches whatever
// its backward pass needs from the most recent forward call, so a layer
// instance must not be shared between interleaved forward passes.

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "crackseg/tensor.hpp"

namespace crackseg::nn {

enum class Mode { train, eval };

enum class ParamKind {
    conv_weight,
    linear_weight,
    bias,
    bn_scale,
    bn_shift,
    running_mean,
    running_var,
};

struct Param {
    std::string name;
    ParamKind kind;
    Tensor value;
    Tensor grad;

    /// Updated by the optimizer (running statistics are not).
    bool trainable() const { return kind != ParamKind::running_mean && kind != ParamKind::running_var; }
    /// Receives decoupled weight decay.
    bool decays() const { return kind == ParamKind::conv_weight || kind == ParamKind::linear_weight; }
};

using ParamList = std::vector<Param*>;

class Layer {
public:
    virtual ~Layer() = default;
    virtual Tensor forward(const Tensor& x, Mode mode) = 0;
    virtual Tensor backward(const Tensor& dy) = 0;
    virtual void collect(ParamList& /*out*/) {}
    virtual std::string kind() const = 0;
};

class Conv2d final : public Layer {
public:
    Conv2d() = default;
    Conv2d(std::string name, int in_ch, int out_ch, int kernel, int stride, int pad, bool bias);

    Tensor forward(const Tensor& x, Mode mode) override;
    Tensor backward(const Tensor& dy) override;
    void collect(ParamList& out) override;
    std::string kind() const override { return "conv"; }

    int in_channels() const { return in_; }
    int out_channels() const { return out_; }
    int kernel_size() const { return k_; }
    bool has_bias() const { return has_bias_; }
    Param& weight() { return weight_; }
    Param& bias() { return bias_; }

    int out_size(int in) const { return (in + 2 * pad_ - k_) / stride_ + 1; }

private:
    bool pointwise() const { return k_ == 1 && stride_ == 1 && pad_ == 0; }
    int rows_per_chunk(int ho, int wo) const;
    void im2col(const double* x, int h, int w, int row0, int rows, int wo, double* col) const;
    void col2im(const double* col, int h, int w, int row0, int rows, int wo, double* dx) const;

    int in_ = 0, out_ = 0, k_ = 1, stride_ = 1, pad_ = 0;
    bool has_bias_ = false;
    Param weight_;
    Param bias_;
    Tensor input_;
};

class BatchNorm2d final : public Layer {
public:
    static constexpr double kEps = 1e-5;
    static constexpr double kMomentum = 0.1;

    BatchNorm2d() = default;
    BatchNorm2d(std::string name, int channels);

    Tensor forward(const Tensor& x, Mode mode) override;
    Tensor backward(const Tensor& dy) override;
    void collect(ParamList& out) override;
    std::string kind() const override { return "batchnorm"; }

private:
    int ch_ = 0;
    Param gamma_, beta_, running_mean_, running_var_;
    Tensor xhat_;
    std::vector<double> inv_std_;
    Mode last_mode_ = Mode::train;
};

class ReLU final : public Layer {
public:
    Tensor forward(const Tensor& x, Mode mode) override;
    Tensor backward(const Tensor& dy) override;
    std::string kind() const override { return "relu"; }

private:
    std::vector<std::uint8_t> active_;
};

class MaxPool2d final : public Layer {
public:
    MaxPool2d(int kernel = 2, int stride = 2, int pad = 0) : k_(kernel), stride_(stride), pad_(pad) {}

    Tensor forward(const Tensor& x, Mode mode) override;
    Tensor backward(const Tensor& dy) override;
    std::string kind() const override { return "maxpool"; }
    int out_size(int in) const { return (in + 2 * pad_ - k_) / stride_ + 1; }

private:
    int k_, stride_, pad_;
    int in_n_ = 0, in_c_ = 0, in_h_ = 0, in_w_ = 0;
    std::vector<std::uint32_t> argmax_;
};

class GlobalAvgPool final : public Layer {
public:
    Tensor forward(const Tensor& x, Mode mode) override;
    Tensor backward(const Tensor& dy) override;
    std::string kind() const override { return "gap"; }

private:
    int h_ = 0, w_ = 0;
};

/// Fully connected over the flattened (c, h, w) features; output (n, out, 1, 1).
class Linear final : public Layer {
public:
    Linear(std::string name, int in_features, int out_features);

    Tensor forward(const Tensor& x, Mode mode) override;
    Tensor backward(const Tensor& dy) override;
    void collect(ParamList& out) override;
    std::string kind() const override { return "linear"; }

private:
    int in_, out_;
    Param weight_, bias_;
    Tensor input_;
};

class Sequential final : public Layer {
public:
    Sequential() = default;
    Sequential(Sequential&&) = default;
    Sequential& operator=(Sequential&&) = default;

    template <class L, class... Args>
    L& add(Args&&... args) {
        auto layer = std::make_unique<L>(std::forward<Args>(args)...);
        L& ref = *layer;
        layers_.push_back(std::move(layer));
        return ref;
    }
    void push(std::unique_ptr<Layer> layer) { layers_.push_back(std::move(layer)); }

    Tensor forward(const Tensor& x, Mode mode) override;
    Tensor backward(const Tensor& dy) override;
    void collect(ParamList& out) override;
    std::string kind() const override { return "sequential"; }

    std::size_t size() const { return layers_.size(); }
    Layer& operator[](std::size_t i) { return *layers_[i]; }

private:
    std::vector<std::unique_ptr<Layer>> layers_;
};

/// Two 3x3 conv-BN layers with an identity or 1x1-projection shortcut.
class BasicResidual final : public Layer {
public:
    BasicResidual(const std::string& name, int in_ch, int out_ch, int stride);

    Tensor forward(const Tensor& x, Mode mode) override;
    Tensor backward(const Tensor& dy) override;
    void collect(ParamList& out) override;
    std::string kind() const override { return "residual"; }

private:
    Sequential body_;
    Sequential shortcut_;  // empty for identity
    ReLU out_relu_;
};

/// Bilinear resampling with corner-aligned grids (corner pixels map to corner
/// pixels). Each plane of x is resized to (out_h, out_w).
Tensor upsample_bilinear(const Tensor& x, int out_h, int out_w);
/// Adjoint of upsample_bilinear: scatters dy back onto an (in_h, in_w) grid.
Tensor upsample_bilinear_backward(const Tensor& dy, int in_h, int in_w);

/// Numerically stable logistic function.
double sigmoid(double x);

/// Draws every conv/linear weight from N(0, std^2) in parameter order; biases
/// and BN shifts 0, BN scales 1, running statistics reset.
void init_params(const ParamList& params, std::uint64_t seed, double weight_std);
/// As init_params but with per-layer std sqrt(2 / fan_in).
void init_params_he(const ParamList& params, std::uint64_t seed);

void zero_grads(const ParamList& params);
std::size_t count_scalars(const ParamList& params);

}  // namespace crackseg::nn
