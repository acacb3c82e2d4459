#include "commands.hpp"

#include <fstream>
#include <iostream>

#include "crackseg/checkpoint.hpp"
#include "crackseg/errors.hpp"

namespace fs = std::filesystem;

namespace crackseg::cli {
namespace {

std::string stem_of(const std::string& path) { return fs::path(path).stem().string(); }

std::vector<Sample> load_samples(std::span<const ImageRecord> records, int size) {
    std::vector<Sample> out;
    out.reserve(records.size());
    for (const ImageRecord& r : records) {
        if (r.mask.empty()) throw InputError("record has no mask: " + r.image);
        out.push_back(load_sample(r, size));
    }
    return out;
}

std::vector<ImageRecord> split_records(const fs::path& manifest, Split split) {
    const auto all = read_manifest(manifest);
    auto out = filter_split(all, split);
    if (out.empty())
        throw InputError("manifest " + manifest.string() + " has no " + std::string(to_string(split)) + " records");
    return out;
}

std::vector<Patch> load_patches(const fs::path& manifest, Split split, int size) {
    std::vector<Patch> out;
    for (const PatchRecord& r : read_patch_manifest(manifest))
        if (r.split == split) out.push_back(load_patch(r, size));
    if (out.empty())
        throw InputError("patch manifest " + manifest.string() + " has no " + std::string(to_string(split)) +
                         " patches");
    return out;
}

std::vector<MaskPlane> masks_of(std::span<const Sample> samples) {
    std::vector<MaskPlane> out;
    for (const Sample& s : samples) out.push_back(s.mask);
    return out;
}

nlohmann::ordered_json weights_json(const ClassWeights& w) {
    return {{"p", w.p}, {"q", w.q}, {"alpha_crack", w.alpha_crack}, {"alpha_noncrack", w.alpha_noncrack}};
}

void write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw InputError("cannot write " + path.string());
    out << text;
}

std::string seg_checkpoint_name(std::int64_t step, std::int64_t total) {
    return step == total ? "seg_final.ckpt" : "seg_step" + std::to_string(step) + ".ckpt";
}

// Trains a fresh or resumed segmenter; returns the trained model.
CrackNet train_seg(const RunConfig& cfg, std::span<const Sample> samples, const fs::path& out,
                   const fs::path& resume, std::int64_t stop_at) {
    const std::vector<MaskPlane> masks = masks_of(samples);
    const ClassWeights weights = compute_class_weights(masks);

    CrackNet model = build_cracknet(cfg.model);
    SegTrainState state;
    TrainConfig train = cfg.train;
    LambdaWeights lambdas = cfg.lambdas;
    Reduction reduction = cfg.reduction;
    if (!resume.empty()) {
        LoadedSegModel loaded = load_seg_checkpoint(resume);
        model = std::move(loaded.model);
        state = std::move(loaded.state);
        if (loaded.meta.contains("train")) train = train_config_from_json(loaded.meta["train"]);
        if (loaded.meta.contains("lambdas"))
            lambdas = LambdaWeights::from(loaded.meta["lambdas"].get<std::vector<double>>());
        if (loaded.meta.contains("reduction"))
            reduction = loaded.meta["reduction"] == "mean" ? Reduction::mean : Reduction::sum;
        std::cout << "resuming at step " << state.step << " of " << train.total_iters << '\n';
    } else {
        init_weights(model, train.seed, cfg.init_std);
    }

    TrainOptions options;
    options.stop_at = stop_at;
    options.checkpoint_dir = out;
    options.checkpoint_meta["lambdas"] = lambdas.lambdas;
    options.checkpoint_meta["reduction"] = reduction == Reduction::sum ? "sum" : "mean";
    options.checkpoint_meta["class_weights"] = weights_json(weights);
    const std::int64_t every = std::max<std::int64_t>(1, train.total_iters / 10);
    options.on_step = [every](const HistoryRow& r) {
        if (r.iter % every == 0) std::cout << "step " << r.iter << " loss " << r.loss << " lr " << r.lr << '\n';
    };
    train_segmenter(model, samples, balanced_loss_fn(weights, lambdas, reduction), train, state, options);

    write_history_csv(out / "history.csv", state.history);
    save_class_weights(out / "class_weights.json", weights);
    std::cout << "wrote " << (out / seg_checkpoint_name(state.step, train.total_iters)).string() << '\n';
    return model;
}

MetricReport eval_seg(CrackNet& model, std::span<const ImageRecord> records, const RunConfig& cfg) {
    std::vector<ProbabilityPlane> probs;
    std::vector<MaskPlane> gts;
    std::vector<Plane<double>> guides;
    for (const ImageRecord& r : records) {
        if (r.mask.empty()) throw InputError("record has no mask: " + r.image);
        const Sample s = load_sample(r, model.config().input_size);
        probs.push_back(infer(model, s.image).fused);
        gts.push_back(s.mask);
        if (cfg.guided_filter) guides.push_back(luma(s.image));
    }
    if (cfg.guided_filter)
        return evaluate_dataset(probs, gts, std::span<const Plane<double>>(guides), cfg.gf, cfg.threshold);
    return evaluate_dataset(probs, gts, std::nullopt, std::nullopt, cfg.threshold);
}

}  // namespace

RunConfig ConfigSource::resolve() const {
    RunConfig base;
    if (tiny) base.apply_desk_preset();
    RunConfig cfg = file.empty() ? base : load_run_config(file, base);
    for (const auto& [k, v] : overrides) set_config_value(cfg, k, v);
    cfg.model.validate();
    cfg.train.validate();
    cfg.detect.validate();
    return cfg;
}

int cmd_prepare(const PrepareArgs& a) {
    const RunConfig cfg = a.config.resolve();
    ManifestOptions mo;
    mo.ratios = cfg.split_ratios;
    mo.seed = cfg.split_seed;
    const std::vector<ImageRecord> records = build_manifest(a.root, mo);
    write_manifest(a.out / "manifest.jsonl", records);

    std::size_t per_split[3] = {0, 0, 0};
    for (const ImageRecord& r : records) ++per_split[static_cast<int>(r.split)];
    std::cout << "images: " << records.size() << " (train " << per_split[0] << ", val " << per_split[1] << ", test "
              << per_split[2] << ")\n";

    if (a.patches) {
        std::vector<PatchRecord> patch_records;
        std::size_t per_class[2] = {0, 0};
        for (const ImageRecord& r : records) {
            const Image image = read_image(r.image);
            const MaskPlane mask = read_mask(r.mask);
            for (const Patch& p : crop_patches(image, mask, cfg.patch_size, cfg.crack_fraction)) {
                const fs::path file = a.out / "patches" / std::string(to_string(p.label)) /
                                      (stem_of(r.image) + "_r" + std::to_string(p.row) + "_c" +
                                       std::to_string(p.col) + ".png");
                if (!fs::exists(file.parent_path())) fs::create_directories(file.parent_path());
                write_image(file, p.pixels);
                patch_records.push_back({file.string(), p.label, r.split, r.source});
                ++per_class[p.label == PatchLabel::crack];
            }
        }
        write_patch_manifest(a.out / "patches.jsonl", patch_records);
        std::cout << "patches: " << patch_records.size() << " (crack " << per_class[1] << ", non_crack "
                  << per_class[0] << ")\n";
    }

    if (a.augment) {
        std::vector<ImageRecord> augmented;
        fs::create_directories(a.out / "augmented" / "images");
        fs::create_directories(a.out / "augmented" / "masks");
        for (const ImageRecord& r : records) {
            const std::vector<Sample> variants = augment(read_image(r.image), read_mask(r.mask));
            for (std::size_t k = 0; k < variants.size(); ++k) {
                const std::string name = stem_of(r.image) + "_a" + std::to_string(k) + ".png";
                ImageRecord rec{(a.out / "augmented" / "images" / name).string(),
                                (a.out / "augmented" / "masks" / name).string(), r.split, r.source};
                write_image(rec.image, variants[k].image);
                write_mask(rec.mask, variants[k].mask);
                augmented.push_back(std::move(rec));
            }
        }
        write_manifest(a.out / "augmented.jsonl", augmented);
        std::cout << "augmented samples: " << augmented.size() << '\n';
    }
    return 0;
}

int cmd_train(const TrainArgs& a) {
    const RunConfig cfg = a.config.resolve();
    if (a.kind == "seg") {
        const auto records = split_records(a.data, Split::train);
        const std::vector<Sample> samples = load_samples(records, cfg.model.input_size);
        train_seg(cfg, samples, a.out, a.resume, a.stop_at);
        return 0;
    }
    if (a.kind != "detect") throw InputError("train: kind must be seg or detect, got '" + a.kind + "'");

    const std::vector<Patch> patches = load_patches(a.data, Split::train, cfg.detect.input_size);
    Detector model = build_detector(cfg.detect, cfg.detect_seed);
    DetectTrainState state;
    std::uint64_t seed = cfg.detect_seed;
    if (!a.resume.empty()) {
        LoadedDetector loaded = load_detect_checkpoint(a.resume);
        model = std::move(loaded.model);
        state = std::move(loaded.state);
        seed = loaded.seed;
        std::cout << "resuming at step " << state.step << " of " << model.config().total_iters() << '\n';
    }
    train_detector(model, patches, state, seed, a.stop_at);
    const bool finished = state.step == model.config().total_iters();
    const fs::path ckpt = a.out / (finished ? std::string("detect_final.ckpt")
                                            : "detect_step" + std::to_string(state.step) + ".ckpt");
    save_detect_checkpoint(ckpt, model, state, seed);
    write_history_csv(a.out / "history.csv", state.history);
    const DetectMetrics m = evaluate_detector(model, patches, model.config().batch_size);
    write_text(a.out / "train_metrics.json", to_json(m).dump(2) + "\n");
    std::cout << "training accuracy " << m.accuracy << "\nwrote " << ckpt.string() << '\n';
    return 0;
}

int cmd_eval(const EvalArgs& a) {
    RunConfig cfg = a.config.resolve();
    const Split split = parse_split(a.split);
    const std::string magic = peek_magic(a.checkpoint);

    if (magic == kDetectMagic) {
        LoadedDetector loaded = load_detect_checkpoint(a.checkpoint);
        const auto patches = load_patches(a.data, split, loaded.model.config().input_size);
        const DetectMetrics m = evaluate_detector(loaded.model, patches, loaded.model.config().batch_size);
        const std::string text = to_json(m).dump(2) + "\n";
        if (!a.report_json.empty()) write_text(a.report_json, text);
        std::cout << text;
        return 0;
    }
    if (magic != kSegMagic)
        throw FormatError("checkpoint " + a.checkpoint.string() + ": expected magic " + std::string(kSegMagic) +
                          " or " + std::string(kDetectMagic) + ", found '" + magic + "'");

    LoadedSegModel loaded = load_seg_checkpoint(a.checkpoint);
    const auto records = split_records(a.data, split);
    const MetricReport report = eval_seg(loaded.model, records, cfg);
    if (!a.sweep_csv.empty()) write_sweep_csv(a.sweep_csv, report.sweep);
    if (!a.report_json.empty()) write_report_json(a.report_json, report);
    std::cout << "A " << report.accuracy << "  MIOU " << report.miou << "  DS " << report.ds << "  IS "
              << report.is_score << "  BP " << report.bp << "  BR " << report.br << "  m* " << report.best_threshold
              << '\n';
    return 0;
}

int cmd_infer(const InferArgs& a) {
    const RunConfig cfg = a.config.resolve();
    LoadedSegModel loaded = load_seg_checkpoint(a.checkpoint);
    const int size = loaded.model.config().input_size;
    fs::create_directories(a.out);
    for (const fs::path& path : a.images) {
        const Image image = resize_image(read_image(path), size);
        ProbabilityPlane prob = infer(loaded.model, image).fused;
        if (cfg.guided_filter) prob = guided_filter(prob, luma(image), cfg.gf.radius, cfg.gf.eps);
        const std::string stem = path.stem().string();
        write_probability(a.out / (stem + "_prob.png"), prob);
        write_mask(a.out / (stem + "_mask.png"), binarize(prob, cfg.threshold));
        std::cout << "wrote " << (a.out / (stem + "_prob.png")).string() << ", "
                  << (a.out / (stem + "_mask.png")).string() << '\n';
    }
    return 0;
}

int cmd_lambda_sweep(const SweepArgs& a) {
    const RunConfig base = a.config.resolve();
    for (int id : a.cases)
        if (id < 1 || id > 7) throw InputError("invalid lambda case " + std::to_string(id) + "; expected 1..7");
    const Split split = parse_split(a.split);
    const std::vector<Sample> train = load_samples(split_records(a.data, Split::train), base.model.input_size);
    const auto eval_records = split_records(a.data, split);

    fs::create_directories(a.out);
    std::ofstream csv(a.out / "lambda_sweep.csv");
    if (!csv) throw InputError("cannot write " + (a.out / "lambda_sweep.csv").string());
    csv.precision(17);
    csv << "case,lambda1,lambda2,lambda3,lambda4,lambda5,accuracy,miou,bp,br,ds,is,best_threshold\n";
    std::vector<SweepPlotRow> plot;
    for (int id : a.cases) {
        RunConfig cfg = base;
        cfg.lambda_case = id;
        cfg.lambdas = lambda_case(id);
        std::cout << "case " << id << '\n';
        CrackNet model = train_seg(cfg, train, a.out / ("case" + std::to_string(id)), {}, -1);
        const MetricReport r = eval_seg(model, eval_records, cfg);
        csv << id;
        for (double l : cfg.lambdas.lambdas) csv << ',' << l;
        csv << ',' << r.accuracy << ',' << r.miou << ',' << r.bp << ',' << r.br << ',' << r.ds << ',' << r.is_score
            << ',' << r.best_threshold << '\n';
        plot.push_back({id, {r.accuracy, r.miou, r.ds, r.is_score}});
    }
    write_bar_chart(a.out / "lambda_sweep.png", {"A", "MIOU", "DS", "IS"}, plot);
    std::cout << "wrote " << (a.out / "lambda_sweep.csv").string() << ", " << (a.out / "lambda_sweep.png").string()
              << '\n';
    return 0;
}

}  // namespace crackseg::cli
