#pragma once
// Segmentation metrics and post-processing.
//
// Crack is the positive class. Precision/recall use these 0/0 conventions:
// P = 1 when nothing is predicted positive, R = 1 when the ground truth has no
// positives, F = 0 when P + R = 0. MIOU averages the crack and non-crack IoU,
// and a class whose union is empty contributes IoU 1.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "crackseg/image.hpp"

namespace crackseg {

inline constexpr double kDefaultThreshold = 0.48;
inline constexpr int kReportSchemaVersion = 1;

struct ConfusionCounts {
    std::uint64_t tp = 0;
    std::uint64_t tn = 0;
    std::uint64_t fp = 0;
    std::uint64_t fn = 0;

    std::uint64_t total() const { return tp + tn + fp + fn; }
    ConfusionCounts& operator+=(const ConfusionCounts& o) {
        tp += o.tp;
        tn += o.tn;
        fp += o.fp;
        fn += o.fn;
        return *this;
    }
    friend bool operator==(const ConfusionCounts&, const ConfusionCounts&) = default;
};

struct PrecisionRecallF {
    double precision = 0.0;
    double recall = 0.0;
    double f = 0.0;
};

struct SweepRow {
    double m = 0.0;
    double precision = 0.0;
    double recall = 0.0;
    double f = 0.0;
};

struct DatasetBestF {
    double ds = 0.0;
    double bp = 0.0;
    double br = 0.0;
    double best_threshold = 0.0;
    std::vector<SweepRow> sweep;
};

struct MetricReport {
    double accuracy = 0.0;
    double miou = 0.0;
    double ds = 0.0;
    double is_score = 0.0;
    double bp = 0.0;
    double br = 0.0;
    double best_threshold = 0.0;
    double fixed_threshold = kDefaultThreshold;
    std::size_t n_images = 0;
    bool guided_filter = false;
    std::vector<SweepRow> sweep;
};

struct GuidedFilterParams {
    int radius = 4;
    double eps = 1e-3;
};

/// 0.01, 0.02, ..., 0.99 (each k / 100.0).
std::vector<double> default_threshold_grid();

/// Pixel is crack iff prob >= m.
MaskPlane binarize(const ProbabilityPlane& prob, double m);
ConfusionCounts confusion(const MaskPlane& pred, const MaskPlane& gt);
PrecisionRecallF precision_recall_f(const ConfusionCounts& counts);

struct AccuracyMiou {
    double accuracy = 0.0;
    double miou = 0.0;
};
AccuracyMiou accuracy_miou(const ConfusionCounts& counts);

/// Per-threshold confusion counts of one image over an ascending grid,
/// computed with one pass over the pixels.
std::vector<ConfusionCounts> sweep_counts(const ProbabilityPlane& prob, const MaskPlane& gt,
                                          std::span<const double> grid);

/// Counts are summed across all images before P/R/F are computed for each m;
/// the best F wins with ties going to the smaller m.
DatasetBestF dataset_best_f(std::span<const ProbabilityPlane> probs, std::span<const MaskPlane> gts,
                            std::span<const double> grid);
/// Mean over images of each image's best F over the grid.
double image_best_f(std::span<const ProbabilityPlane> probs, std::span<const MaskPlane> gts,
                    std::span<const double> grid);

/// Edge-preserving refinement of prob steered by guide, with (2r+1)^2 box
/// windows and edge-replicated borders. Output clamped to [0, 1].
ProbabilityPlane guided_filter(const ProbabilityPlane& prob, const Plane<double>& guide, int radius, double eps);
/// Mean over the (2r+1)^2 window with replicated borders.
Plane<double> box_mean(const Plane<double>& in, int radius);

/// guides and gf are either both set (refine every prob first) or both unset.
MetricReport evaluate_dataset(std::span<const ProbabilityPlane> probs, std::span<const MaskPlane> gts,
                              std::optional<std::span<const Plane<double>>> guides,
                              std::optional<GuidedFilterParams> gf, double fixed_m = kDefaultThreshold,
                              std::span<const double> grid = {});

void write_sweep_csv(const std::filesystem::path& path, std::span<const SweepRow> sweep);
std::string report_json(const MetricReport& report);
void write_report_json(const std::filesystem::path& path, const MetricReport& report);

}  // namespace crackseg
