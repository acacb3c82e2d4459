#pragma once

#include <cstdint>
#include <vector>

#include "crackseg/nn.hpp"

namespace crackseg {

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;  // decoupled, conv/linear weights only
};

/// Moments are kept for trainable parameters only, in ParamList order.
struct AdamState {
    std::int64_t step = 0;
    std::vector<Tensor> m;
    std::vector<Tensor> v;

    friend bool operator==(const AdamState&, const AdamState&) = default;
};

/// Bias-corrected adaptive-moment descent with decoupled weight decay.
class Adam {
public:
    explicit Adam(AdamConfig config) : config_(config) {}

    void step(const nn::ParamList& params, double lr);

    const AdamConfig& config() const { return config_; }
    AdamState& state() { return state_; }
    const AdamState& state() const { return state_; }

private:
    AdamConfig config_;
    AdamState state_;
};

}  // namespace crackseg
