#pragma once
// Versioned binary checkpoint container shared by the segmentation and
// detection models. Layout (little-endian):
//
//   magic (9 bytes) | u32 header length | header JSON
//   u32 parameter count | { u32 name length | name | i32 n,c,h,w | f64 data }
//   i64 optimizer step | u32 moment count | { m tensor | v tensor }
//   u64 history rows | { i64 iter | f64 loss | f64 lr }
//
// Files are written to a temporary sibling and renamed into place.

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "crackseg/nn.hpp"
#include "crackseg/optim.hpp"

namespace crackseg {

inline constexpr std::string_view kSegMagic = "CRACKSEG1";
inline constexpr std::string_view kDetectMagic = "CRACKDET1";

struct HistoryRow {
    std::int64_t iter = 0;
    double loss = 0.0;
    double lr = 0.0;

    friend bool operator==(const HistoryRow&, const HistoryRow&) = default;
};

struct NamedTensor {
    std::string name;
    Tensor value;
};

struct CheckpointData {
    std::string magic;
    nlohmann::ordered_json header;
    std::vector<NamedTensor> params;
    AdamState optimizer;
    std::vector<HistoryRow> history;
};

void write_checkpoint(const std::filesystem::path& path, const CheckpointData& data);
/// Throws FormatError on a magic mismatch (naming both) or a truncated file.
CheckpointData read_checkpoint(const std::filesystem::path& path, std::string_view expected_magic);
/// First 9 bytes of the file, or empty if shorter.
std::string peek_magic(const std::filesystem::path& path);

std::vector<NamedTensor> snapshot(const nn::ParamList& params);
/// Copies values into params, matching by position, name and shape. Validates
/// everything before mutating anything.
void restore(const nn::ParamList& params, const std::vector<NamedTensor>& saved);

void write_history_csv(const std::filesystem::path& path, const std::vector<HistoryRow>& history);

}  // namespace crackseg
