#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "crackseg/config.hpp"

namespace crackseg::cli {

/// Config assembled in precedence order: defaults (or the desk preset), then
/// the config file, then `key=value` overrides from flags.
struct ConfigSource {
    std::filesystem::path file;
    bool tiny = false;
    std::map<std::string, std::string> overrides;

    RunConfig resolve() const;
};

struct PrepareArgs {
    std::filesystem::path root;
    std::filesystem::path out;
    bool augment = false;
    bool patches = false;
    ConfigSource config;
};
int cmd_prepare(const PrepareArgs& a);

struct TrainArgs {
    std::string kind;  // seg | detect
    std::filesystem::path data;
    std::filesystem::path out;
    std::filesystem::path resume;
    std::int64_t stop_at = -1;
    ConfigSource config;
};
int cmd_train(const TrainArgs& a);

struct EvalArgs {
    std::filesystem::path checkpoint;
    std::filesystem::path data;
    std::string split = "test";
    std::filesystem::path sweep_csv;
    std::filesystem::path report_json;
    ConfigSource config;
};
int cmd_eval(const EvalArgs& a);

struct InferArgs {
    std::filesystem::path checkpoint;
    std::vector<std::filesystem::path> images;
    std::filesystem::path out;
    ConfigSource config;
};
int cmd_infer(const InferArgs& a);

struct SweepArgs {
    std::filesystem::path data;
    std::filesystem::path out;
    std::vector<int> cases;
    std::string split = "test";
    ConfigSource config;
};
int cmd_lambda_sweep(const SweepArgs& a);

struct SweepPlotRow {
    int id;
    std::vector<double> values;
};
/// Grouped bar chart, one group per case, one bar per metric.
void write_bar_chart(const std::filesystem::path& path, const std::vector<std::string>& metrics,
                     const std::vector<SweepPlotRow>& rows);

}  // namespace crackseg::cli
