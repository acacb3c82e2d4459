#include "crackseg/evalkit.hpp"

#include <algorithm>
#include <fstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "crackseg/errors.hpp"
#include "crackseg/kernels.hpp"

namespace crackseg {
namespace {

template <class A, class B>
void require_same_shape(const Plane<A>& a, const Plane<B>& b, const char* what) {
    if (!a.same_shape(b))
        throw std::invalid_argument(std::string(what) + ": shape mismatch " + std::to_string(a.height) + "x" +
                                    std::to_string(a.width) + " vs " + std::to_string(b.height) + "x" +
                                    std::to_string(b.width));
}

void require_aligned(std::size_t probs, std::size_t gts, const char* what) {
    if (probs != gts)
        throw std::invalid_argument(std::string(what) + ": " + std::to_string(probs) + " predictions vs " +
                                    std::to_string(gts) + " ground truths");
    if (probs == 0) throw std::invalid_argument(std::string(what) + ": empty dataset");
}

void require_grid(std::span<const double> grid) {
    if (grid.empty()) throw std::invalid_argument("threshold grid is empty");
    if (!std::is_sorted(grid.begin(), grid.end()) ||
        std::adjacent_find(grid.begin(), grid.end()) != grid.end())
        throw std::invalid_argument("threshold grid must be strictly ascending");
}

// Per-image sweep counts for the whole dataset.
std::vector<std::vector<ConfusionCounts>> all_sweeps(std::span<const ProbabilityPlane> probs,
                                                     std::span<const MaskPlane> gts, std::span<const double> grid) {
    std::vector<std::vector<ConfusionCounts>> out;
    out.reserve(probs.size());
    for (std::size_t i = 0; i < probs.size(); ++i) out.push_back(sweep_counts(probs[i], gts[i], grid));
    return out;
}

DatasetBestF best_from_sweeps(const std::vector<std::vector<ConfusionCounts>>& sweeps, std::span<const double> grid) {
    DatasetBestF best;
    best.ds = -1.0;
    best.sweep.reserve(grid.size());
    for (std::size_t k = 0; k < grid.size(); ++k) {
        ConfusionCounts total;
        for (const auto& s : sweeps) total += s[k];
        const PrecisionRecallF prf = precision_recall_f(total);
        best.sweep.push_back({grid[k], prf.precision, prf.recall, prf.f});
        if (prf.f > best.ds) {
            best.ds = prf.f;
            best.bp = prf.precision;
            best.br = prf.recall;
            best.best_threshold = grid[k];
        }
    }
    return best;
}

double image_best_from_sweeps(const std::vector<std::vector<ConfusionCounts>>& sweeps) {
    double sum = 0.0;
    for (const auto& s : sweeps) {
        double best = 0.0;
        for (const ConfusionCounts& c : s) best = std::max(best, precision_recall_f(c).f);
        sum += best;
    }
    return sum / static_cast<double>(sweeps.size());
}

}  // namespace

std::vector<double> default_threshold_grid() {
    std::vector<double> grid;
    grid.reserve(99);
    for (int k = 1; k <= 99; ++k) grid.push_back(k / 100.0);
    return grid;
}

MaskPlane binarize(const ProbabilityPlane& prob, double m) {
    MaskPlane out(prob.height, prob.width);
    for (std::size_t i = 0; i < prob.size(); ++i) out.values[i] = prob.values[i] >= m ? 1 : 0;
    return out;
}

ConfusionCounts confusion(const MaskPlane& pred, const MaskPlane& gt) {
    require_same_shape(pred, gt, "confusion");
    ConfusionCounts c;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const bool p = pred.values[i] != 0;
        const bool t = gt.values[i] != 0;
        if (p && t) {
            ++c.tp;
        } else if (p) {
            ++c.fp;
        } else if (t) {
            ++c.fn;
        } else {
            ++c.tn;
        }
    }
    return c;
}

PrecisionRecallF precision_recall_f(const ConfusionCounts& c) {
    PrecisionRecallF r;
    r.precision = (c.tp + c.fp) == 0 ? 1.0 : static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp);
    r.recall = (c.tp + c.fn) == 0 ? 1.0 : static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
    const double denom = r.precision + r.recall;
    r.f = denom == 0.0 ? 0.0 : 2.0 * r.precision * r.recall / denom;
    return r;
}

AccuracyMiou accuracy_miou(const ConfusionCounts& c) {
    if (c.total() == 0) throw std::invalid_argument("accuracy_miou: no pixels");
    auto iou = [](std::uint64_t inter, std::uint64_t uni) {
        return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
    };
    AccuracyMiou r;
    r.accuracy = static_cast<double>(c.tp + c.tn) / static_cast<double>(c.total());
    r.miou = 0.5 * (iou(c.tp, c.tp + c.fp + c.fn) + iou(c.tn, c.tn + c.fp + c.fn));
    return r;
}

std::vector<ConfusionCounts> sweep_counts(const ProbabilityPlane& prob, const MaskPlane& gt,
                                          std::span<const double> grid) {
    require_same_shape(prob, gt, "sweep_counts");
    require_grid(grid);
    // bucket[i] = number of grid thresholds <= p, i.e. the pixel is positive
    // at exactly the first bucket[i] thresholds.
    std::vector<std::uint64_t> pos(grid.size() + 1, 0), neg(grid.size() + 1, 0);
    std::uint64_t total_pos = 0;
    for (std::size_t i = 0; i < prob.size(); ++i) {
        const auto bucket = static_cast<std::size_t>(
            std::upper_bound(grid.begin(), grid.end(), prob.values[i]) - grid.begin());
        if (gt.values[i]) {
            ++pos[bucket];
            ++total_pos;
        } else {
            ++neg[bucket];
        }
    }
    const std::uint64_t total_neg = prob.size() - total_pos;
    std::vector<ConfusionCounts> out(grid.size());
    std::uint64_t tp = 0, fp = 0;
    for (std::size_t k = grid.size(); k-- > 0;) {
        tp += pos[k + 1];
        fp += neg[k + 1];
        out[k] = {tp, total_neg - fp, fp, total_pos - tp};
    }
    return out;
}

DatasetBestF dataset_best_f(std::span<const ProbabilityPlane> probs, std::span<const MaskPlane> gts,
                            std::span<const double> grid) {
    require_aligned(probs.size(), gts.size(), "dataset_best_f");
    return best_from_sweeps(all_sweeps(probs, gts, grid), grid);
}

double image_best_f(std::span<const ProbabilityPlane> probs, std::span<const MaskPlane> gts,
                    std::span<const double> grid) {
    require_aligned(probs.size(), gts.size(), "image_best_f");
    return image_best_from_sweeps(all_sweeps(probs, gts, grid));
}

Plane<double> box_mean(const Plane<double>& in, int radius) {
    if (radius < 0) throw std::invalid_argument("box_mean: negative radius");
    const int h = in.height, w = in.width;
    const auto taps = static_cast<std::size_t>(2 * radius + 1);

    Plane<double> vertical(h, w);
    for (int y = 0; y < h; ++y) {
        double* acc = vertical.values.data() + static_cast<std::size_t>(y) * w;
        for (int dy = -radius; dy <= radius; ++dy) {
            const int sy = std::clamp(y + dy, 0, h - 1);
            kernels::axpy(w, 1.0, in.values.data() + static_cast<std::size_t>(sy) * w, acc);
        }
    }

    Plane<double> out(h, w);
    std::vector<double> padded(static_cast<std::size_t>(w) + 2 * radius);
    const double count = static_cast<double>(taps * taps);
    for (int y = 0; y < h; ++y) {
        const double* row = vertical.values.data() + static_cast<std::size_t>(y) * w;
        for (int x = -radius; x < w + radius; ++x) padded[x + radius] = row[std::clamp(x, 0, w - 1)];
        double* acc = out.values.data() + static_cast<std::size_t>(y) * w;
        for (std::size_t k = 0; k < taps; ++k) kernels::axpy(w, 1.0, padded.data() + k, acc);
        for (int x = 0; x < w; ++x) acc[x] /= count;
    }
    return out;
}

ProbabilityPlane guided_filter(const ProbabilityPlane& prob, const Plane<double>& guide, int radius, double eps) {
    require_same_shape(prob, guide, "guided_filter");
    if (radius < 0) throw std::invalid_argument("guided_filter: negative radius");
    if (!(eps >= 0.0)) throw std::invalid_argument("guided_filter: negative eps");
    const std::size_t n = prob.size();

    Plane<double> ii(prob.height, prob.width), ip(prob.height, prob.width);
    for (std::size_t i = 0; i < n; ++i) {
        ii.values[i] = guide.values[i] * guide.values[i];
        ip.values[i] = guide.values[i] * prob.values[i];
    }
    const Plane<double> mean_i = box_mean(guide, radius);
    const Plane<double> mean_p = box_mean(prob, radius);
    const Plane<double> corr_ii = box_mean(ii, radius);
    const Plane<double> corr_ip = box_mean(ip, radius);

    Plane<double> a(prob.height, prob.width), b(prob.height, prob.width);
    for (std::size_t i = 0; i < n; ++i) {
        const double var = corr_ii.values[i] - mean_i.values[i] * mean_i.values[i];
        const double cov = corr_ip.values[i] - mean_i.values[i] * mean_p.values[i];
        const double denom = var + eps;
        a.values[i] = denom == 0.0 ? 0.0 : cov / denom;
        b.values[i] = mean_p.values[i] - a.values[i] * mean_i.values[i];
    }
    const Plane<double> mean_a = box_mean(a, radius);
    const Plane<double> mean_b = box_mean(b, radius);

    ProbabilityPlane q(prob.height, prob.width);
    for (std::size_t i = 0; i < n; ++i)
        q.values[i] = std::clamp(mean_a.values[i] * guide.values[i] + mean_b.values[i], 0.0, 1.0);
    return q;
}

MetricReport evaluate_dataset(std::span<const ProbabilityPlane> probs, std::span<const MaskPlane> gts,
                              std::optional<std::span<const Plane<double>>> guides,
                              std::optional<GuidedFilterParams> gf, double fixed_m, std::span<const double> grid) {
    require_aligned(probs.size(), gts.size(), "evaluate_dataset");
    if (guides.has_value() != gf.has_value())
        throw std::invalid_argument("evaluate_dataset: guides and guided-filter parameters go together");
    if (!(fixed_m > 0.0 && fixed_m < 1.0)) throw std::invalid_argument("evaluate_dataset: threshold outside (0,1)");
    const std::vector<double> default_grid = default_threshold_grid();
    if (grid.empty()) grid = default_grid;

    std::vector<ProbabilityPlane> refined;
    std::span<const ProbabilityPlane> scored = probs;
    if (gf) {
        if (guides->size() != probs.size()) throw std::invalid_argument("evaluate_dataset: one guide per image");
        refined.reserve(probs.size());
        for (std::size_t i = 0; i < probs.size(); ++i)
            refined.push_back(guided_filter(probs[i], (*guides)[i], gf->radius, gf->eps));
        scored = refined;
    }

    MetricReport report;
    report.fixed_threshold = fixed_m;
    report.n_images = probs.size();
    report.guided_filter = gf.has_value();

    ConfusionCounts fixed;
    for (std::size_t i = 0; i < scored.size(); ++i) {
        require_same_shape(scored[i], gts[i], "evaluate_dataset");
        fixed += confusion(binarize(scored[i], fixed_m), gts[i]);
    }
    const AccuracyMiou am = accuracy_miou(fixed);
    report.accuracy = am.accuracy;
    report.miou = am.miou;

    const auto sweeps = all_sweeps(scored, gts, grid);
    DatasetBestF best = best_from_sweeps(sweeps, grid);
    report.ds = best.ds;
    report.bp = best.bp;
    report.br = best.br;
    report.best_threshold = best.best_threshold;
    report.sweep = std::move(best.sweep);
    report.is_score = image_best_from_sweeps(sweeps);
    return report;
}

void write_sweep_csv(const std::filesystem::path& path, std::span<const SweepRow> sweep) {
    std::ofstream out(path);
    if (!out) throw InputError("cannot write sweep CSV: " + path.string());
    out << "m,precision,recall,f\n";
    out.precision(17);
    for (const SweepRow& r : sweep) out << r.m << ',' << r.precision << ',' << r.recall << ',' << r.f << '\n';
}

std::string report_json(const MetricReport& report) {
    nlohmann::ordered_json j;
    j["schema_version"] = kReportSchemaVersion;
    j["n_images"] = report.n_images;
    j["guided_filter"] = report.guided_filter;
    j["fixed_threshold"] = report.fixed_threshold;
    j["accuracy"] = report.accuracy;
    j["miou"] = report.miou;
    j["ds"] = report.ds;
    j["is"] = report.is_score;
    j["bp"] = report.bp;
    j["br"] = report.br;
    j["best_threshold"] = report.best_threshold;
    auto rows = nlohmann::ordered_json::array();
    for (const SweepRow& r : report.sweep)
        rows.push_back({{"m", r.m}, {"precision", r.precision}, {"recall", r.recall}, {"f", r.f}});
    j["sweep"] = std::move(rows);
    return j.dump(2) + "\n";
}

void write_report_json(const std::filesystem::path& path, const MetricReport& report) {
    std::ofstream out(path);
    if (!out) throw InputError("cannot write report: " + path.string());
    out << report_json(report);
}

}  // namespace crackseg
