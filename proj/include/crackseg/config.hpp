#pragma once
// Flat run configuration: one `section.key = value` per line, `#` starts a
// comment. An empty document yields the published defaults.

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "crackseg/balancedloss.hpp"
#include "crackseg/cracknet.hpp"
#include "crackseg/dataio.hpp"
#include "crackseg/detectnet.hpp"
#include "crackseg/evalkit.hpp"
#include "crackseg/trainer.hpp"

namespace crackseg {

struct RunConfig {
    // dataio
    int patch_size = kDefaultPatchSize;
    double crack_fraction = kDefaultCrackFraction;
    SplitRatios split_ratios = kDefaultSplitRatios;
    std::uint64_t split_seed = 7;

    // model
    SegConfig model;
    double init_std = kDefaultInitStd;

    // loss
    int lambda_case = 7;
    LambdaWeights lambdas;  // case 7 unless overridden
    Reduction reduction = Reduction::sum;

    TrainConfig train;

    DetectConfig detect;
    std::uint64_t detect_seed = 0;

    // evalkit
    double threshold = kDefaultThreshold;
    bool guided_filter = false;
    GuidedFilterParams gf;

    /// Tiny models at 64x64 and the scaled-down training schedules.
    void apply_desk_preset();
};

struct ConfigKey {
    std::string key;
    std::string default_value;
    std::string help;
};

/// Every accepted key with its default, in documentation order.
const std::vector<ConfigKey>& config_keys();

/// Assignments in `text` applied over `base`. Throws InputError naming the
/// line on unknown keys or bad values.
RunConfig parse_run_config(std::string_view text, std::string_view origin = "<config>", const RunConfig& base = {});
RunConfig load_run_config(const std::filesystem::path& path, const RunConfig& base = {});
/// Applies one `section.key = value` assignment.
void set_config_value(RunConfig& config, std::string_view key, std::string_view value);
/// Renders the current values as a config document.
std::string to_config_text(const RunConfig& config);

}  // namespace crackseg
