#include "crackseg/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

#include "crackseg/errors.hpp"

namespace crackseg {
namespace {

std::string_view trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

template <class T>
T parse_number(std::string_view v) {
    T out{};
    const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc{} || ptr != v.data() + v.size()) throw InputError("not a number: '" + std::string(v) + "'");
    return out;
}

bool parse_bool(std::string_view v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw InputError("not a boolean: '" + std::string(v) + "'");
}

template <class T>
std::vector<T> parse_list(std::string_view v) {
    std::vector<T> out;
    while (true) {
        const auto comma = v.find(',');
        out.push_back(parse_number<T>(trim(v.substr(0, comma))));
        if (comma == std::string_view::npos) break;
        v.remove_prefix(comma + 1);
    }
    return out;
}

std::string fmt(double v) {
    char buf[32];
    const auto r = std::to_chars(buf, buf + sizeof buf, v);
    return {buf, r.ptr};
}
template <class T>
std::string fmt_list(const T& values) {
    std::string s;
    for (const auto& v : values) s += (s.empty() ? "" : ",") + fmt(static_cast<double>(v));
    return s;
}
std::string fmt(bool b) { return b ? "true" : "false"; }

struct Entry {
    const char* key;
    const char* help;
    std::function<std::string(const RunConfig&)> get;
    std::function<void(RunConfig&, std::string_view)> set;
};

#define NUM_ENTRY(KEY, FIELD, T, HELP)                                                        \
    Entry {                                                                                   \
        KEY, HELP, [](const RunConfig& c) { return fmt(static_cast<double>(c.FIELD)); },      \
            [](RunConfig& c, std::string_view v) { c.FIELD = parse_number<T>(v); }            \
    }
#define BOOL_ENTRY(KEY, FIELD, HELP)                                                          \
    Entry {                                                                                   \
        KEY, HELP, [](const RunConfig& c) { return fmt(c.FIELD); },                           \
            [](RunConfig& c, std::string_view v) { c.FIELD = parse_bool(v); }                 \
    }

const std::vector<Entry>& entries() {
    static const std::vector<Entry> table = {
        NUM_ENTRY("dataio.patch_size", patch_size, int, "detection patch side in pixels"),
        NUM_ENTRY("dataio.crack_fraction", crack_fraction, double,
                  "patch is crack when its crack-pixel fraction exceeds this"),
        Entry{"dataio.split", "train,val,test fractions",
              [](const RunConfig& c) { return fmt_list(c.split_ratios); },
              [](RunConfig& c, std::string_view v) {
                  const auto r = parse_list<double>(v);
                  if (r.size() != 3) throw InputError("dataio.split needs three fractions");
                  c.split_ratios = {r[0], r[1], r[2]};
              }},
        NUM_ENTRY("dataio.seed", split_seed, std::uint64_t, "split shuffle seed"),

        NUM_ENTRY("model.input_size", model.input_size, int, "segmentation input side (multiple of 16)"),
        Entry{"model.block_channels", "channel width of each of the five blocks",
              [](const RunConfig& c) { return fmt_list(c.model.block_channels); },
              [](RunConfig& c, std::string_view v) {
                  const auto r = parse_list<int>(v);
                  if (r.size() != kNumSides) throw InputError("model.block_channels needs five widths");
                  std::copy(r.begin(), r.end(), c.model.block_channels.begin());
              }},
        BOOL_ENTRY("model.batchnorm", model.use_batchnorm, "batch normalization after every block conv"),
        NUM_ENTRY("model.init_std", init_std, double, "std of the normal weight initialization"),

        Entry{"loss.lambda_case", "published side-output weight setting, 1-7",
              [](const RunConfig& c) { return std::to_string(c.lambda_case); },
              [](RunConfig& c, std::string_view v) {
                  const int id = parse_number<int>(v);
                  if (id < 1 || id > 7) throw InputError("loss.lambda_case must be 1..7");
                  c.lambda_case = id;
                  c.lambdas = lambda_case(id);
              }},
        Entry{"loss.lambdas", "explicit side-output weights (overrides lambda_case)",
              [](const RunConfig& c) { return fmt_list(c.lambdas.lambdas); },
              [](RunConfig& c, std::string_view v) {
                  const auto r = parse_list<double>(v);
                  if (r.size() != kNumSides) throw InputError("loss.lambdas needs five weights");
                  c.lambdas = LambdaWeights::from(r);
              }},
        Entry{"loss.reduction", "per-image pixel reduction: sum or mean",
              [](const RunConfig& c) { return std::string(c.reduction == Reduction::sum ? "sum" : "mean"); },
              [](RunConfig& c, std::string_view v) {
                  if (v == "sum") c.reduction = Reduction::sum;
                  else if (v == "mean") c.reduction = Reduction::mean;
                  else throw InputError("loss.reduction must be sum or mean");
              }},

        NUM_ENTRY("trainer.base_lr", train.base_lr, double, "initial learning rate"),
        NUM_ENTRY("trainer.decay_factor", train.decay_factor, double, "learning-rate multiplier per decay step"),
        NUM_ENTRY("trainer.decay_every", train.decay_every, std::int64_t, "iterations between decays"),
        NUM_ENTRY("trainer.total_iters", train.total_iters, std::int64_t, "training iterations"),
        NUM_ENTRY("trainer.batch_size", train.batch_size, int, "images per step"),
        NUM_ENTRY("trainer.momentum", train.momentum, double, "first-moment coefficient"),
        NUM_ENTRY("trainer.weight_decay", train.weight_decay, double, "decoupled decay on conv weights"),
        NUM_ENTRY("trainer.seed", train.seed, std::uint64_t, "initialization and data-order seed"),
        NUM_ENTRY("trainer.checkpoint_every", train.checkpoint_every, std::int64_t, "iterations between checkpoints"),

        Entry{"detect.backbone", "alexnet_like, vgg16_like, vgg19_like, resnet_like or tiny",
              [](const RunConfig& c) { return std::string(to_string(c.detect.backbone)); },
              [](RunConfig& c, std::string_view v) { c.detect.backbone = parse_backbone(v); }},
        NUM_ENTRY("detect.input_size", detect.input_size, int, "patch side seen by the classifier"),
        NUM_ENTRY("detect.lr_phase1", detect.lr_phase1, double, "learning rate of the first phase"),
        NUM_ENTRY("detect.lr_phase2", detect.lr_phase2, double, "learning rate of the second phase"),
        NUM_ENTRY("detect.phase_length", detect.phase_length, int, "iterations per phase"),
        NUM_ENTRY("detect.batch_size", detect.batch_size, int, "patches per step"),
        BOOL_ENTRY("detect.pretrained_init", detect.pretrained_init, "start from detect.pretrained_path"),
        Entry{"detect.pretrained_path", "CRACKDET1 file with initial weights",
              [](const RunConfig& c) { return c.detect.pretrained_path; },
              [](RunConfig& c, std::string_view v) { c.detect.pretrained_path = std::string(v); }},
        NUM_ENTRY("detect.seed", detect_seed, std::uint64_t, "initialization and data-order seed"),

        NUM_ENTRY("evalkit.threshold", threshold, double, "fixed binarization threshold"),
        BOOL_ENTRY("evalkit.guided_filter", guided_filter, "refine probabilities with the guided filter"),
        NUM_ENTRY("evalkit.gf_radius", gf.radius, int, "guided filter window radius"),
        NUM_ENTRY("evalkit.gf_eps", gf.eps, double, "guided filter regularizer"),
    };
    return table;
}

#undef NUM_ENTRY
#undef BOOL_ENTRY

}  // namespace

void RunConfig::apply_desk_preset() {
    model = SegConfig::tiny();
    model.input_size = 64;
    train = TrainConfig::desk();
    detect.backbone = Backbone::tiny;
    detect.phase_length = 100;
}

const std::vector<ConfigKey>& config_keys() {
    static const std::vector<ConfigKey> keys = [] {
        const RunConfig defaults;
        std::vector<ConfigKey> out;
        for (const Entry& e : entries()) out.push_back({e.key, e.get(defaults), e.help});
        return out;
    }();
    return keys;
}

void set_config_value(RunConfig& config, std::string_view key, std::string_view value) {
    for (const Entry& e : entries()) {
        if (key != e.key) continue;
        try {
            e.set(config, value);
        } catch (const InputError&) {
            throw;
        } catch (const std::exception& ex) {
            throw InputError(std::string(key) + ": " + ex.what());
        }
        return;
    }
    throw InputError("unknown config key '" + std::string(key) + "'");
}

RunConfig parse_run_config(std::string_view text, std::string_view origin, const RunConfig& base) {
    RunConfig config = base;
    std::istringstream in{std::string(text)};
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::string_view l = line;
        if (const auto hash = l.find('#'); hash != std::string_view::npos) l = l.substr(0, hash);
        l = trim(l);
        if (l.empty()) continue;
        const auto eq = l.find('=');
        const std::string where = std::string(origin) + ":" + std::to_string(lineno) + ": ";
        if (eq == std::string_view::npos) throw InputError(where + "expected 'section.key = value'");
        try {
            set_config_value(config, trim(l.substr(0, eq)), trim(l.substr(eq + 1)));
        } catch (const InputError& e) {
            throw InputError(where + e.what());
        }
    }
    try {
        config.model.validate();
        config.train.validate();
        config.detect.validate();
    } catch (const std::exception& e) {
        throw InputError(std::string(origin) + ": " + e.what());
    }
    return config;
}

RunConfig load_run_config(const std::filesystem::path& path, const RunConfig& base) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot read config: " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_run_config(ss.str(), path.string(), base);
}

std::string to_config_text(const RunConfig& config) {
    std::string out;
    for (const Entry& e : entries()) out += std::string(e.key) + " = " + e.get(config) + "\n";
    return out;
}

}  // namespace crackseg
