#include "crackseg/detectnet.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iostream>
#include <map>
#include <stdexcept>

#include "crackseg/cracknet.hpp"
#include "crackseg/errors.hpp"
#include "crackseg/optim.hpp"
#include "crackseg/sampler.hpp"

namespace fs = std::filesystem;

namespace crackseg {

std::string_view to_string(Backbone b) {
    switch (b) {
        case Backbone::alexnet_like: return "alexnet_like";
        case Backbone::vgg16_like: return "vgg16_like";
        case Backbone::vgg19_like: return "vgg19_like";
        case Backbone::resnet_like: return "resnet_like";
        case Backbone::tiny: return "tiny";
    }
    return "?";
}

Backbone parse_backbone(std::string_view s) {
    for (Backbone b : {Backbone::alexnet_like, Backbone::vgg16_like, Backbone::vgg19_like, Backbone::resnet_like,
                       Backbone::tiny})
        if (s == to_string(b)) return b;
    throw InputError("unknown backbone '" + std::string(s) + "'");
}

void DetectConfig::validate() const {
    if (input_size < 32) throw InputError("detector: input_size must be at least 32");
    if (phase_length <= 0) throw InputError("detector: phase_length must be positive");
    if (batch_size <= 0) throw InputError("detector: batch_size must be positive");
    if (!(lr_phase1 > 0.0) || !(lr_phase2 > 0.0)) throw InputError("detector: learning rates must be positive");
}

nlohmann::ordered_json to_json(const DetectConfig& c) {
    nlohmann::ordered_json j;
    j["backbone"] = to_string(c.backbone);
    j["input_size"] = c.input_size;
    j["lr_phase1"] = c.lr_phase1;
    j["lr_phase2"] = c.lr_phase2;
    j["phase_length"] = c.phase_length;
    j["batch_size"] = c.batch_size;
    j["pretrained_init"] = c.pretrained_init;
    j["pretrained_path"] = c.pretrained_path;
    return j;
}

DetectConfig detect_config_from_json(const nlohmann::json& j) {
    DetectConfig c;
    try {
        c.backbone = parse_backbone(j.at("backbone").get<std::string>());
        c.input_size = j.at("input_size").get<int>();
        c.lr_phase1 = j.at("lr_phase1").get<double>();
        c.lr_phase2 = j.at("lr_phase2").get<double>();
        c.phase_length = j.at("phase_length").get<int>();
        c.batch_size = j.at("batch_size").get<int>();
        c.pretrained_init = j.at("pretrained_init").get<bool>();
        c.pretrained_path = j.value("pretrained_path", std::string{});
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("bad detector config: ") + e.what());
    }
    return c;
}

namespace {

using nn::BatchNorm2d;
using nn::Conv2d;
using nn::MaxPool2d;
using nn::ReLU;

int vgg_stages(nn::Sequential& net, const std::vector<int>& convs_per_block) {
    static constexpr int kWidths[] = {64, 128, 256, 512, 512};
    int in = 3;
    for (std::size_t b = 0; b < convs_per_block.size(); ++b) {
        for (int i = 0; i < convs_per_block[b]; ++i) {
            const std::string name = "block" + std::to_string(b + 1) + ".conv" + std::to_string(i + 1);
            net.add<Conv2d>(name, in, kWidths[b], 3, 1, 1, true);
            net.add<ReLU>();
            in = kWidths[b];
        }
        net.add<MaxPool2d>(2, 2, 0);
    }
    return in;
}

int alexnet(nn::Sequential& net) {
    net.add<Conv2d>("conv1", 3, 64, 11, 4, 2, true);
    net.add<ReLU>();
    net.add<MaxPool2d>(3, 2, 0);
    net.add<Conv2d>("conv2", 64, 192, 5, 1, 2, true);
    net.add<ReLU>();
    net.add<MaxPool2d>(3, 2, 0);
    net.add<Conv2d>("conv3", 192, 384, 3, 1, 1, true);
    net.add<ReLU>();
    net.add<Conv2d>("conv4", 384, 256, 3, 1, 1, true);
    net.add<ReLU>();
    net.add<Conv2d>("conv5", 256, 256, 3, 1, 1, true);
    net.add<ReLU>();
    net.add<MaxPool2d>(3, 2, 0);
    return 256;
}

// ResNet-18 layout: stem, four stages of two basic blocks.
int resnet(nn::Sequential& net) {
    net.add<Conv2d>("stem.conv", 3, 64, 7, 2, 3, false);
    net.add<BatchNorm2d>("stem.bn", 64);
    net.add<ReLU>();
    net.add<MaxPool2d>(3, 2, 1);
    int in = 64;
    const int widths[] = {64, 128, 256, 512};
    for (int s = 0; s < 4; ++s) {
        for (int b = 0; b < 2; ++b) {
            const int stride = (s > 0 && b == 0) ? 2 : 1;
            net.add<nn::BasicResidual>("stage" + std::to_string(s + 1) + "." + std::to_string(b), in, widths[s],
                                       stride);
            in = widths[s];
        }
    }
    return in;
}

int tiny(nn::Sequential& net) {
    net.add<Conv2d>("conv1", 3, 8, 3, 2, 1, true);
    net.add<ReLU>();
    net.add<Conv2d>("conv2", 8, 16, 3, 2, 1, true);
    net.add<ReLU>();
    net.add<Conv2d>("conv3", 16, 32, 3, 2, 1, true);
    net.add<ReLU>();
    return 32;
}

int count_convs(nn::Layer& layer) {
    if (layer.kind() == "conv") return 1;
    int n = 0;
    if (auto* seq = dynamic_cast<nn::Sequential*>(&layer)) {
        for (std::size_t i = 0; i < seq->size(); ++i) n += count_convs((*seq)[i]);
    } else if (layer.kind() == "residual") {
        nn::ParamList ps;
        layer.collect(ps);
        for (const nn::Param* p : ps) n += p->kind == nn::ParamKind::conv_weight;
    }
    return n;
}

double clamp_p(double p) { return std::clamp(p, kDetectClamp, 1.0 - kDetectClamp); }

int label_of(const Patch& p) { return p.label == PatchLabel::crack ? 1 : 0; }

Tensor batch_of(std::span<const Patch> patches, std::size_t begin, std::size_t end) {
    std::vector<const Image*> imgs;
    for (std::size_t i = begin; i < end; ++i) imgs.push_back(&patches[i].pixels);
    return to_batch(imgs);
}

}  // namespace

Detector::Detector(const DetectConfig& config) : config_(config) {
    config_.validate();
    int features = 0;
    switch (config_.backbone) {
        case Backbone::alexnet_like: features = alexnet(net_); break;
        case Backbone::vgg16_like: features = vgg_stages(net_, {2, 2, 3, 3, 3}); break;
        case Backbone::vgg19_like: features = vgg_stages(net_, {2, 2, 4, 4, 4}); break;
        case Backbone::resnet_like: features = resnet(net_); break;
        case Backbone::tiny: features = tiny(net_); break;
    }
    net_.add<nn::GlobalAvgPool>();
    net_.add<nn::Linear>("head", features, 2);
}

Tensor Detector::forward(const Tensor& images, nn::Mode mode) {
    if (images.c() != 3 || images.h() != config_.input_size || images.w() != config_.input_size)
        throw std::invalid_argument("detector: expected (n, 3, " + std::to_string(config_.input_size) + ", " +
                                    std::to_string(config_.input_size) + "), got " + images.shape_string());
    return net_.forward(images, mode);
}

void Detector::backward(const Tensor& grad_logits) { net_.backward(grad_logits); }

nn::ParamList Detector::parameters() {
    nn::ParamList out;
    net_.collect(out);
    return out;
}

int Detector::conv_count() { return count_convs(net_); }

std::vector<double> crack_probability(const Tensor& logits) {
    if (logits.c() != 2 || logits.h() != 1 || logits.w() != 1)
        throw std::invalid_argument("crack_probability: expected (n, 2, 1, 1) logits");
    std::vector<double> p(logits.n());
    for (int i = 0; i < logits.n(); ++i) p[i] = nn::sigmoid(logits.at(i, 1, 0, 0) - logits.at(i, 0, 0, 0));
    return p;
}

double detect_loss(std::span<const double> p, std::span<const int> y) {
    if (p.size() != y.size()) throw std::invalid_argument("detect_loss: batch size mismatch");
    if (p.empty()) throw std::invalid_argument("detect_loss: empty batch");
    double sum = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double pc = clamp_p(p[i]);
        sum -= y[i] ? std::log(pc) : std::log(1.0 - pc);
    }
    return sum / static_cast<double>(p.size());
}

DetectLossAndGrad detect_loss_with_grad(const Tensor& logits, std::span<const int> y) {
    const std::vector<double> p = crack_probability(logits);
    DetectLossAndGrad out{detect_loss(p, y), Tensor(logits.n(), 2, 1, 1)};
    const double inv_n = 1.0 / static_cast<double>(p.size());
    for (std::size_t i = 0; i < p.size(); ++i) {
        // Zero inside the clamp, where the loss is flat.
        const bool clamped = p[i] < kDetectClamp || p[i] > 1.0 - kDetectClamp;
        const double g = clamped ? 0.0 : (p[i] - y[i]) * inv_n;
        out.grad.at(static_cast<int>(i), 1, 0, 0) = g;
        out.grad.at(static_cast<int>(i), 0, 0, 0) = -g;
    }
    return out;
}

Detector build_detector(const DetectConfig& config, std::uint64_t seed) {
    Detector model(config);
    const nn::ParamList params = model.parameters();
    nn::init_params_he(params, seed);
    if (!config.pretrained_init) return model;

    if (config.pretrained_path.empty() || !fs::exists(config.pretrained_path)) {
        std::cerr << "warning: pretrained weights '" << config.pretrained_path
                  << "' not found; using normal initialization\n";
        return model;
    }
    const CheckpointData data = read_checkpoint(config.pretrained_path, kDetectMagic);
    std::map<std::string, const Tensor*> by_name;
    for (const NamedTensor& t : data.params) by_name[t.name] = &t.value;
    std::size_t loaded = 0;
    for (nn::Param* p : params) {
        auto it = by_name.find(p->name);
        if (it != by_name.end() && it->second->same_shape(p->value)) {
            p->value = *it->second;
            ++loaded;
        }
    }
    if (loaded == 0)
        std::cerr << "warning: no tensors in '" << config.pretrained_path
                  << "' match this backbone; using normal initialization\n";
    return model;
}

const std::vector<HistoryRow>& train_detector(Detector& model, std::span<const Patch> patches,
                                              DetectTrainState& state, std::uint64_t seed, std::int64_t stop_at) {
    const DetectConfig& cfg = model.config();
    if (patches.empty()) throw InputError("detector: empty training set");
    bool seen[2] = {false, false};
    for (const Patch& p : patches) {
        if (p.pixels.height != cfg.input_size || p.pixels.width != cfg.input_size)
            throw InputError("detector: patch is " + std::to_string(p.pixels.height) + "x" +
                             std::to_string(p.pixels.width) + ", expected " + std::to_string(cfg.input_size));
        seen[label_of(p)] = true;
    }
    if (!seen[0] || !seen[1]) throw InputError("detector: training patches contain a single class");

    const std::int64_t total = cfg.total_iters();
    const std::int64_t stop = stop_at < 0 ? total : std::min(stop_at, total);
    Adam adam(AdamConfig{});
    adam.state() = state.optimizer;
    EpochSampler sampler(patches.size(), derive_seed(seed, 0xde7ull));
    const nn::ParamList params = model.parameters();

    std::vector<const Image*> imgs(cfg.batch_size);
    std::vector<int> labels(cfg.batch_size);
    for (; state.step < stop; ++state.step) {
        const std::int64_t s = state.step;
        for (int b = 0; b < cfg.batch_size; ++b) {
            const Patch& p = patches[sampler.index(s * cfg.batch_size + b)];
            imgs[b] = &p.pixels;
            labels[b] = label_of(p);
        }
        const double lr = s < cfg.phase_length ? cfg.lr_phase1 : cfg.lr_phase2;
        nn::zero_grads(params);
        const Tensor logits = model.forward(to_batch(imgs), nn::Mode::train);
        const DetectLossAndGrad lg = detect_loss_with_grad(logits, labels);
        if (!std::isfinite(lg.loss)) throw NumericError("non-finite loss at step " + std::to_string(s));
        model.backward(lg.grad);
        adam.step(params, lr);
        state.history.push_back({s, lg.loss, lr});
        state.optimizer = adam.state();
    }
    return state.history;
}

std::vector<DetectPrediction> predict(Detector& model, std::span<const Image> images, int batch_size) {
    if (batch_size <= 0) throw std::invalid_argument("predict: batch_size must be positive");
    std::vector<DetectPrediction> out;
    out.reserve(images.size());
    for (std::size_t begin = 0; begin < images.size(); begin += batch_size) {
        const std::size_t end = std::min(images.size(), begin + batch_size);
        std::vector<const Image*> imgs;
        for (std::size_t i = begin; i < end; ++i) imgs.push_back(&images[i]);
        const auto t0 = std::chrono::steady_clock::now();
        const std::vector<double> p = crack_probability(model.forward(to_batch(imgs), nn::Mode::eval));
        const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
        for (double pi : p)
            out.push_back({pi, pi >= kDetectCutoff ? DetectLabel::crack : DetectLabel::non_crack, ms});
    }
    return out;
}

DetectMetrics evaluate_detector(Detector& model, std::span<const Patch> patches, int batch_size) {
    if (patches.empty()) throw InputError("evaluate_detector: empty evaluation set");
    if (batch_size <= 0) throw std::invalid_argument("evaluate_detector: batch_size must be positive");
    std::size_t correct = 0, batches = 0;
    double total_ms = 0.0;
    for (std::size_t begin = 0; begin < patches.size(); begin += batch_size) {
        const std::size_t end = std::min(patches.size(), begin + batch_size);
        const Tensor batch = batch_of(patches, begin, end);
        const auto t0 = std::chrono::steady_clock::now();
        const std::vector<double> p = crack_probability(model.forward(batch, nn::Mode::eval));
        total_ms += std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
        ++batches;
        for (std::size_t i = begin; i < end; ++i)
            correct += (p[i - begin] >= kDetectCutoff) == (patches[i].label == PatchLabel::crack);
    }
    return {static_cast<double>(correct) / static_cast<double>(patches.size()), total_ms / batches, patches.size()};
}

nlohmann::ordered_json to_json(const DetectMetrics& m) {
    nlohmann::ordered_json j;
    j["accuracy"] = m.accuracy;
    j["mean_latency_ms"] = m.mean_latency_ms;
    j["n_samples"] = m.n_samples;
    return j;
}

void save_detect_checkpoint(const fs::path& path, Detector& model, const DetectTrainState& state,
                            std::uint64_t seed) {
    CheckpointData data;
    data.magic = std::string(kDetectMagic);
    data.header["kind"] = "detection";
    data.header["config"] = to_json(model.config());
    data.header["step"] = state.step;
    data.header["seed"] = seed;
    data.params = snapshot(model.parameters());
    data.optimizer = state.optimizer;
    data.history = state.history;
    write_checkpoint(path, data);
}

LoadedDetector load_detect_checkpoint(const fs::path& path) {
    CheckpointData data = read_checkpoint(path, kDetectMagic);
    if (!data.header.contains("config")) throw FormatError("checkpoint " + path.string() + ": header has no config");
    const DetectConfig cfg = detect_config_from_json(data.header["config"]);
    LoadedDetector out{Detector(cfg), {}, data.header.value("seed", std::uint64_t{0})};
    restore(out.model.parameters(), data.params);
    out.state.step = data.header.value("step", std::int64_t{0});
    out.state.optimizer = std::move(data.optimizer);
    out.state.history = std::move(data.history);
    return out;
}

}  // namespace crackseg
