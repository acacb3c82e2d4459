#include "crackseg/cracknet.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace crackseg {

void SegConfig::validate() const {
    if (in_channels <= 0) throw std::invalid_argument("in_channels must be positive");
    for (int c : block_channels)
        if (c <= 0) throw std::invalid_argument("block channel counts must be positive");
    if (input_size <= 0 || input_size % 16 != 0)
        throw std::invalid_argument("input_size must be a positive multiple of 16, got " + std::to_string(input_size));
}

CrackNet::CrackNet(const SegConfig& config) : config_(config) {
    config_.validate();
    int in = config_.in_channels;
    for (int b = 0; b < kNumSides; ++b) {
        const int width = config_.block_channels[b];
        const std::string prefix = "block" + std::to_string(b + 1);
        for (int i = 0; i < kBlockConvCounts[b]; ++i) {
            const std::string name = prefix + ".conv" + std::to_string(i + 1);
            ConvUnit unit{nn::Conv2d(name, in, width, 3, 1, 1, !config_.use_batchnorm), std::nullopt, nn::ReLU{}};
            if (config_.use_batchnorm) unit.bn.emplace(name + ".bn", width);
            blocks_[b].push_back(std::move(unit));
            in = width;
        }
        side_convs_[b] = nn::Conv2d("side" + std::to_string(b + 1), width, 1, 1, 1, 0, true);
    }
    fuse_ = nn::Conv2d("fuse", kNumSides, 1, 1, 1, 0, true);
}

int CrackNet::conv_count() const {
    int n = 0;
    for (const auto& block : blocks_) n += static_cast<int>(block.size());
    return n;
}

nn::ParamList CrackNet::parameters() {
    nn::ParamList out;
    for (auto& block : blocks_) {
        for (auto& unit : block) {
            unit.conv.collect(out);
            if (unit.bn) unit.bn->collect(out);
        }
    }
    for (auto& side : side_convs_) side.collect(out);
    fuse_.collect(out);
    return out;
}

SideOutputs CrackNet::forward(const Tensor& images, nn::Mode mode) {
    if (images.c() != config_.in_channels)
        throw std::invalid_argument("cracknet: expected " + std::to_string(config_.in_channels) +
                                    " channels, got " + std::to_string(images.c()));
    if (images.h() <= 0 || images.w() <= 0 || images.h() % 16 != 0 || images.w() % 16 != 0)
        throw std::invalid_argument("cracknet: input " + std::to_string(images.h()) + "x" +
                                    std::to_string(images.w()) + " is not divisible by 16");
    in_h_ = images.h();
    in_w_ = images.w();

    SideOutputs out;
    Tensor h = images;
    for (int b = 0; b < kNumSides; ++b) {
        for (auto& unit : blocks_[b]) {
            h = unit.conv.forward(h, mode);
            if (unit.bn) h = unit.bn->forward(h, mode);
            h = unit.relu.forward(h, mode);
        }
        tap_sizes_[b] = {h.h(), h.w()};
        out.side[b] = nn::upsample_bilinear(side_convs_[b].forward(h, mode), in_h_, in_w_);
        if (kPoolAfterBlock[b]) h = pools_[b].forward(h, mode);
    }

    Tensor stacked(images.n(), kNumSides, in_h_, in_w_);
    const std::size_t plane = stacked.plane_size();
    for (int n = 0; n < images.n(); ++n)
        for (int s = 0; s < kNumSides; ++s) std::copy_n(out.side[s].plane(n, 0), plane, stacked.plane(n, s));
    out.fused = fuse_.forward(stacked, mode);
    return out;
}

void CrackNet::backward(const SideOutputs& grad) {
    const Tensor dstacked = fuse_.backward(grad.fused);
    const std::size_t plane = dstacked.plane_size();

    std::array<Tensor, kNumSides> dtap;
    for (int s = 0; s < kNumSides; ++s) {
        Tensor dside = grad.side[s];
        for (int n = 0; n < dside.n(); ++n) {
            double* d = dside.plane(n, 0);
            const double* f = dstacked.plane(n, s);
            for (std::size_t i = 0; i < plane; ++i) d[i] += f[i];
        }
        const Tensor dsmall = nn::upsample_bilinear_backward(dside, tap_sizes_[s].first, tap_sizes_[s].second);
        dtap[s] = side_convs_[s].backward(dsmall);
    }

    Tensor g = dtap[kNumSides - 1];
    for (int b = kNumSides - 1; b >= 0; --b) {
        for (auto it = blocks_[b].rbegin(); it != blocks_[b].rend(); ++it) {
            g = it->relu.backward(g);
            if (it->bn) g = it->bn->backward(g);
            g = it->conv.backward(g);
        }
        if (b > 0) {
            g = pools_[b - 1].backward(g);
            const Tensor& extra = dtap[b - 1];
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += extra[i];
        }
    }
}

CrackNet build_cracknet(const SegConfig& config) {
    return CrackNet(config);
}

void init_weights(CrackNet& model, std::uint64_t seed, double weight_std) {
    nn::init_params(model.parameters(), seed, weight_std);
}

SideOutputBundle bundle_at(const SideOutputs& outputs, int index) {
    auto extract = [index](const Tensor& t) {
        Plane<double> p(t.h(), t.w());
        std::copy_n(t.plane(index, 0), p.size(), p.values.begin());
        return p;
    };
    SideOutputBundle bundle;
    for (int s = 0; s < kNumSides; ++s) bundle.side[s] = extract(outputs.side[s]);
    bundle.fused = extract(outputs.fused);
    return bundle;
}

ProbabilityPlane predict_probability(const Plane<double>& logits) {
    ProbabilityPlane out(logits.height, logits.width);
    for (std::size_t i = 0; i < logits.size(); ++i) {
        const double z = logits.values[i];
        if (!std::isfinite(z)) throw std::domain_error("predict_probability: non-finite logit");
        out.values[i] = nn::sigmoid(z);
    }
    return out;
}

BundleProbabilities predict_probability(const SideOutputBundle& bundle) {
    BundleProbabilities out;
    for (int s = 0; s < kNumSides; ++s) out.side[s] = predict_probability(bundle.side[s]);
    out.fused = predict_probability(bundle.fused);
    return out;
}

Tensor to_batch(const std::vector<const Image*>& images) {
    if (images.empty()) throw std::invalid_argument("to_batch: empty batch");
    const Image& first = *images.front();
    Tensor t(static_cast<int>(images.size()), first.channels, first.height, first.width);
    for (std::size_t n = 0; n < images.size(); ++n) {
        const Image& img = *images[n];
        if (img.height != first.height || img.width != first.width || img.channels != first.channels)
            throw std::invalid_argument("to_batch: images differ in shape");
        for (int c = 0; c < img.channels; ++c) {
            double* p = t.plane(static_cast<int>(n), c);
            for (int y = 0; y < img.height; ++y)
                for (int x = 0; x < img.width; ++x) p[static_cast<std::size_t>(y) * img.width + x] = img.at(y, x, c);
        }
    }
    return t;
}

}  // namespace crackseg
