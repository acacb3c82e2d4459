#include "crackseg/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <stdexcept>
#include <string>

#include "crackseg/errors.hpp"
#include "crackseg/sampler.hpp"

namespace fs = std::filesystem;

namespace crackseg {

TrainConfig TrainConfig::desk() {
    TrainConfig c;
    // 120x fewer steps than the full schedule; 9e-5 leaves the tiny model far
    // from converged after 2000 of them.
    c.base_lr = 1e-3;
    c.total_iters = 2000;
    c.decay_every = 500;
    c.checkpoint_every = 500;
    return c;
}

void TrainConfig::validate() const {
    if (!(base_lr > 0.0) || !std::isfinite(base_lr)) throw InputError("trainer: base_lr must be positive");
    if (!(decay_factor > 0.0 && decay_factor < 1.0)) throw InputError("trainer: decay_factor must lie in (0, 1)");
    if (decay_every <= 0) throw InputError("trainer: decay_every must be positive");
    if (total_iters <= 0) throw InputError("trainer: total_iters must be positive");
    if (batch_size <= 0) throw InputError("trainer: batch_size must be positive");
    if (!(momentum > 0.0 && momentum < 1.0)) throw InputError("trainer: momentum must lie in (0, 1)");
    if (!(weight_decay >= 0.0)) throw InputError("trainer: weight_decay must be non-negative");
    if (checkpoint_every <= 0) throw InputError("trainer: checkpoint_every must be positive");
}

double lr_at(std::int64_t iter, const TrainConfig& config) {
    if (iter < 0) throw std::invalid_argument("lr_at: negative iteration");
    const std::int64_t k = iter / config.decay_every;
    const double raw = config.base_lr * std::pow(config.decay_factor, static_cast<double>(k));
    // Configured rates are decimal quantities, so the product is rounded back
    // to 15 significant digits; 9e-5 * 0.8^2 would otherwise land one ulp
    // away from 5.76e-5.
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.15g", raw);
    return std::strtod(buf, nullptr);
}

LossFn balanced_loss_fn(const ClassWeights& weights, const LambdaWeights& lambdas, Reduction reduction) {
    return [weights, lambdas, reduction](const SideOutputs& logits, std::span<const MaskPlane> gts) {
        return total_loss_with_grad(logits, gts, weights, lambdas, reduction);
    };
}

namespace {

nlohmann::ordered_json checkpoint_header(const CrackNet& model, const TrainConfig* train, std::int64_t step,
                                         const nlohmann::ordered_json& meta) {
    nlohmann::ordered_json h;
    h["kind"] = "segmentation";
    h["model"] = to_json(model.config());
    h["step"] = step;
    if (train) h["train"] = to_json(*train);
    if (!meta.is_null()) h["meta"] = meta;
    return h;
}

void write_seg(const fs::path& path, CrackNet& model, const SegTrainState& state, nlohmann::ordered_json header) {
    CheckpointData data;
    data.magic = std::string(kSegMagic);
    data.header = std::move(header);
    data.params = snapshot(model.parameters());
    data.optimizer = state.optimizer;
    data.history = state.history;
    write_checkpoint(path, data);
}

}  // namespace

const std::vector<HistoryRow>& train_segmenter(CrackNet& model, std::span<const Sample> data, const LossFn& loss,
                                               const TrainConfig& config, SegTrainState& state,
                                               const TrainOptions& options) {
    config.validate();
    if (data.empty()) throw InputError("trainer: empty training set");
    const std::int64_t stop = options.stop_at < 0 ? config.total_iters : std::min(options.stop_at, config.total_iters);

    Adam adam(AdamConfig{config.momentum, 0.999, 1e-8, config.weight_decay});
    adam.state() = state.optimizer;
    EpochSampler sampler(data.size(), derive_seed(config.seed, 0x5eedull));
    const nn::ParamList params = model.parameters();

    std::vector<const Image*> images(config.batch_size);
    std::vector<MaskPlane> masks(config.batch_size);
    for (; state.step < stop; ++state.step) {
        const std::int64_t s = state.step;
        for (int b = 0; b < config.batch_size; ++b) {
            const Sample& sample = data[sampler.index(s * config.batch_size + b)];
            images[b] = &sample.image;
            masks[b] = sample.mask;
        }
        const double lr = lr_at(s, config);
        nn::zero_grads(params);
        const SideOutputs logits = model.forward(to_batch(images), nn::Mode::train);
        const LossAndGrad lg = loss(logits, masks);
        if (!std::isfinite(lg.loss)) throw NumericError("non-finite loss at step " + std::to_string(s));
        model.backward(lg.grad);
        adam.step(params, lr);

        const HistoryRow row{s, lg.loss, lr};
        state.history.push_back(row);
        state.optimizer = adam.state();
        if (options.on_step) options.on_step(row);

        const std::int64_t done = s + 1;
        if (!options.checkpoint_dir.empty() && done % config.checkpoint_every == 0 && done < config.total_iters)
            write_seg(options.checkpoint_dir / ("seg_step" + std::to_string(done) + ".ckpt"), model, state,
                      checkpoint_header(model, &config, done, options.checkpoint_meta));
    }
    if (!options.checkpoint_dir.empty()) {
        const bool finished = state.step == config.total_iters;
        if (finished || state.step % config.checkpoint_every != 0)
            write_seg(options.checkpoint_dir /
                          (finished ? std::string("seg_final.ckpt") : "seg_step" + std::to_string(state.step) + ".ckpt"),
                      model, state, checkpoint_header(model, &config, state.step, options.checkpoint_meta));
    }
    return state.history;
}

nlohmann::ordered_json to_json(const SegConfig& c) {
    nlohmann::ordered_json j;
    j["in_channels"] = c.in_channels;
    j["block_channels"] = c.block_channels;
    j["use_batchnorm"] = c.use_batchnorm;
    j["input_size"] = c.input_size;
    return j;
}

SegConfig seg_config_from_json(const nlohmann::json& j) {
    SegConfig c;
    try {
        c.in_channels = j.at("in_channels").get<int>();
        c.block_channels = j.at("block_channels").get<std::array<int, kNumSides>>();
        c.use_batchnorm = j.at("use_batchnorm").get<bool>();
        c.input_size = j.at("input_size").get<int>();
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("bad model config: ") + e.what());
    }
    c.validate();
    return c;
}

nlohmann::ordered_json to_json(const TrainConfig& c) {
    nlohmann::ordered_json j;
    j["base_lr"] = c.base_lr;
    j["decay_factor"] = c.decay_factor;
    j["decay_every"] = c.decay_every;
    j["total_iters"] = c.total_iters;
    j["batch_size"] = c.batch_size;
    j["momentum"] = c.momentum;
    j["weight_decay"] = c.weight_decay;
    j["seed"] = c.seed;
    j["checkpoint_every"] = c.checkpoint_every;
    return j;
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
    TrainConfig c;
    try {
        c.base_lr = j.at("base_lr").get<double>();
        c.decay_factor = j.at("decay_factor").get<double>();
        c.decay_every = j.at("decay_every").get<std::int64_t>();
        c.total_iters = j.at("total_iters").get<std::int64_t>();
        c.batch_size = j.at("batch_size").get<int>();
        c.momentum = j.at("momentum").get<double>();
        c.weight_decay = j.at("weight_decay").get<double>();
        c.seed = j.at("seed").get<std::uint64_t>();
        c.checkpoint_every = j.at("checkpoint_every").get<std::int64_t>();
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("bad training config: ") + e.what());
    }
    return c;
}

void save_seg_checkpoint(const fs::path& path, CrackNet& model, const SegTrainState& state,
                         const nlohmann::ordered_json& meta) {
    nlohmann::ordered_json header = checkpoint_header(model, nullptr, state.step, {});
    if (!meta.is_null()) {
        if (meta.contains("train")) header["train"] = meta["train"];
        nlohmann::ordered_json rest = meta;
        rest.erase("train");
        if (!rest.empty()) header["meta"] = rest;
    }
    write_seg(path, model, state, std::move(header));
}

LoadedSegModel load_seg_checkpoint(const fs::path& path) {
    CheckpointData data = read_checkpoint(path, kSegMagic);
    if (!data.header.contains("model")) throw FormatError("checkpoint " + path.string() + ": header has no model");
    LoadedSegModel out{CrackNet(seg_config_from_json(data.header["model"])), {}, {}};
    restore(out.model.parameters(), data.params);
    out.state.step = data.header.value("step", std::int64_t{0});
    out.state.optimizer = std::move(data.optimizer);
    out.state.history = std::move(data.history);
    if (data.header.contains("train")) out.meta["train"] = data.header["train"];
    if (data.header.contains("meta"))
        for (const auto& [k, v] : data.header["meta"].items()) out.meta[k] = v;
    return out;
}

LoadedSegModel checkpoint_roundtrip(CrackNet& model, const SegTrainState& state, const fs::path& path) {
    save_seg_checkpoint(path, model, state);
    return load_seg_checkpoint(path);
}

BundleProbabilities infer(CrackNet& model, const Image& image) {
    const SideOutputs out = model.forward(to_batch({&image}), nn::Mode::eval);
    return predict_probability(bundle_at(out, 0));
}

}  // namespace crackseg
