// crackseg: dataset preparation, training, evaluation and inference for the
// crack detector and segmenter.
//
// Exit codes: 0 success, 2 usage or input error, 3 numeric failure,
// 4 checkpoint/manifest format error.

#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "commands.hpp"
#include "crackseg/errors.hpp"
#include "crackseg/kernels.hpp"

using namespace crackseg;
using namespace crackseg::cli;

namespace {

std::string config_key_table() {
    std::ostringstream out;
    out << "\nConfig keys (section.key = value; defaults shown):\n";
    for (const ConfigKey& k : config_keys())
        out << "  " << k.key << " = " << k.default_value << "\n      " << k.help << '\n';
    return out.str();
}

const std::string& default_of(const std::string& key) {
    for (const ConfigKey& k : config_keys())
        if (k.key == key) return k.default_value;
    throw std::logic_error("no config key " + key);
}

// A flag that, when given, overrides one config key.
void bind(CLI::App* app, ConfigSource& src, const std::string& flag, const std::string& key,
          const std::string& help) {
    app->add_option_function<std::string>(
        flag, [&src, key](const std::string& v) { src.overrides[key] = v; },
        help + " [default: " + default_of(key) + "]");
}

void bind_switch(CLI::App* app, ConfigSource& src, const std::string& flag, const std::string& key,
                 const std::string& help) {
    app->add_flag_callback(flag, [&src, key] { src.overrides[key] = "true"; },
                           help + " [default: " + default_of(key) + "]");
}

void common(CLI::App* app, ConfigSource& src) {
    app->add_option("--config", src.file, "run configuration file (section.key = value)");
    app->add_option_function<std::vector<std::string>>(
           "--set",
           [&src](const std::vector<std::string>& kvs) {
               for (const std::string& kv : kvs) {
                   const auto eq = kv.find('=');
                   if (eq == std::string::npos) throw CLI::ValidationError("--set", "expected key=value: " + kv);
                   src.overrides[kv.substr(0, eq)] = kv.substr(eq + 1);
               }
           },
           "override any config key, e.g. --set trainer.total_iters=100")
        ->take_all();
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Concrete crack detection and segmentation toolkit"};
    app.require_subcommand(1);
    app.set_version_flag("--version", "crackseg 1.0");
    app.footer(std::string("kernel path: ") + std::string(kernels::isa_name(kernels::active().isa)) +
               " (set CRACKSEG_ISA=scalar|avx2 to override)");

    PrepareArgs prep;
    auto* p = app.add_subcommand("prepare", "build a split manifest, optional patches and augmented set");
    p->add_option("root", prep.root, "dataset root with images/ and masks/")->required();
    p->add_option("--out", prep.out, "output directory")->required();
    bind(p, prep.config, "--patch-size", "dataio.patch_size", "detection patch side");
    bind(p, prep.config, "--crack-frac", "dataio.crack_fraction", "crack fraction above which a patch is crack");
    bind(p, prep.config, "--seed", "dataio.seed", "split shuffle seed");
    p->add_flag("--augment", prep.augment, "write the 12 rotation/flip variants of every image [default: off]");
    p->add_flag("--patches", prep.patches, "crop labelled detection patches [default: off]");
    common(p, prep.config);
    p->footer(config_key_table());

    TrainArgs train;
    auto* t = app.add_subcommand("train", "train the segmenter (seg) or the patch classifier (detect)");
    t->add_option("kind", train.kind, "seg or detect")->required()->check(CLI::IsMember({"seg", "detect"}));
    t->add_option("--data", train.data, "manifest (seg) or patch manifest (detect)")->required();
    t->add_option("--out", train.out, "output directory")->required();
    t->add_option("--resume", train.resume, "continue from this checkpoint");
    t->add_option("--stop-at", train.stop_at, "stop after this many total steps and checkpoint [default: run all]");
    t->add_flag("--tiny", train.config.tiny, "desk-scale presets: tiny models, 64x64 input, 2000 steps");
    bind(t, train.config, "--seed", "trainer.seed", "segmenter seed");
    bind(t, train.config, "--iters", "trainer.total_iters", "segmenter iterations");
    bind(t, train.config, "--lr", "trainer.base_lr", "segmenter base learning rate");
    bind(t, train.config, "--backbone", "detect.backbone", "classifier backbone");
    common(t, train.config);
    t->footer(config_key_table());

    EvalArgs ev;
    auto* e = app.add_subcommand("eval", "score a checkpoint on a manifest split");
    e->add_option("--checkpoint", ev.checkpoint, "CRACKSEG1 or CRACKDET1 checkpoint")->required();
    e->add_option("--data", ev.data, "manifest (seg) or patch manifest (detect)")->required();
    e->add_option("--split", ev.split, "train, val or test")->capture_default_str();
    bind_switch(e, ev.config, "--gf", "evalkit.guided_filter", "guided-filter refinement before scoring");
    bind(e, ev.config, "--threshold", "evalkit.threshold", "fixed threshold for A and MIOU");
    bind(e, ev.config, "--gf-radius", "evalkit.gf_radius", "guided filter radius");
    bind(e, ev.config, "--gf-eps", "evalkit.gf_eps", "guided filter regularizer");
    e->add_option("--sweep-csv", ev.sweep_csv, "write the 99-row threshold sweep here");
    e->add_option("--report-json", ev.report_json, "write the metric report here");
    common(e, ev.config);
    e->footer(config_key_table());

    InferArgs inf;
    auto* i = app.add_subcommand("infer", "write probability maps and masks for images");
    i->add_option("--checkpoint", inf.checkpoint, "CRACKSEG1 checkpoint")->required();
    i->add_option("images", inf.images, "input images")->required();
    i->add_option("--out", inf.out, "output directory")->required();
    bind(i, inf.config, "--threshold", "evalkit.threshold", "binarization threshold");
    bind_switch(i, inf.config, "--gf", "evalkit.guided_filter", "guided-filter refinement");
    common(i, inf.config);

    SweepArgs sw;
    auto* s = app.add_subcommand("lambda-sweep", "train and score each side-output weight case");
    s->add_option("--data", sw.data, "manifest")->required();
    s->add_option("--out", sw.out, "output directory")->required();
    s->add_option("--cases", sw.cases, "case ids 1..7 [default: all]")->delimiter(',');
    s->add_option("--split", sw.split, "split to score")->capture_default_str();
    s->add_flag("--tiny", sw.config.tiny, "desk-scale presets");
    common(s, sw.config);
    s->footer(config_key_table());

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& err) {
        const int code = app.exit(err);
        return code == 0 ? 0 : 2;
    }

    try {
        if (*p) return cmd_prepare(prep);
        if (*t) return cmd_train(train);
        if (*e) return cmd_eval(ev);
        if (*i) return cmd_infer(inf);
        if (*s) {
            if (sw.cases.empty()) sw.cases = {1, 2, 3, 4, 5, 6, 7};
            return cmd_lambda_sweep(sw);
        }
    } catch (const NumericError& err) {
        std::cerr << "error: " << err.what() << '\n';
        return 3;
    } catch (const FormatError& err) {
        std::cerr << "error: " << err.what() << '\n';
        return 4;
    } catch (const InputError& err) {
        std::cerr << "error: " << err.what() << '\n';
        return 2;
    } catch (const std::invalid_argument& err) {
        std::cerr << "error: " << err.what() << '\n';
        return 2;
    } catch (const std::exception& err) {
        std::cerr << "error: " << err.what() << '\n';
        return 1;
    }
    return 2;
}
