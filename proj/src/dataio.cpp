#include "crackseg/dataio.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <stdexcept>

#include <nlohmann/json.hpp>
#include <opencv2/imgproc.hpp>

#include "crackseg/errors.hpp"

namespace fs = std::filesystem;

namespace crackseg {
namespace {

bool is_image_file(const fs::path& p) {
    std::string ext = p.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    return ext == ".png" || ext == ".jpg" || ext == ".jpeg";
}

cv::Mat to_mat(const Image& image) {
    cv::Mat mat(image.height, image.width, CV_64FC(image.channels));
    std::copy(image.values.begin(), image.values.end(), mat.ptr<double>(0));
    return mat;
}

Image from_mat(const cv::Mat& mat) {
    Image image(mat.rows, mat.cols, mat.channels());
    const cv::Mat cont = mat.isContinuous() ? mat : mat.clone();
    std::copy_n(cont.ptr<double>(0), image.values.size(), image.values.begin());
    return image;
}

cv::Mat to_mat(const MaskPlane& mask) {
    cv::Mat mat(mask.height, mask.width, CV_8UC1);
    std::copy(mask.values.begin(), mask.values.end(), mat.ptr<std::uint8_t>(0));
    return mat;
}

MaskPlane mask_from_mat(const cv::Mat& mat) {
    MaskPlane mask(mat.rows, mat.cols);
    const cv::Mat cont = mat.isContinuous() ? mat : mat.clone();
    std::copy_n(cont.ptr<std::uint8_t>(0), mask.values.size(), mask.values.begin());
    return mask;
}

cv::Mat rotation_matrix(int width, int height, int degrees) {
    const cv::Point2f centre(static_cast<float>(width - 1) / 2.0f, static_cast<float>(height - 1) / 2.0f);
    return cv::getRotationMatrix2D(centre, static_cast<double>(degrees), 1.0);
}

int normalize_angle(int degrees) {
    return ((degrees % 360) + 360) % 360;
}

template <class PlaneLike, class Fn>
PlaneLike remap_exact(const PlaneLike& in, Fn map) {
    PlaneLike out = in;
    for (int y = 0; y < in.height; ++y)
        for (int x = 0; x < in.width; ++x) {
            const auto [sy, sx] = map(y, x);
            out.at(y, x) = in.at(sy, sx);
        }
    return out;
}

Image remap_exact_image(const Image& in, auto map) {
    Image out = in;
    for (int y = 0; y < in.height; ++y)
        for (int x = 0; x < in.width; ++x) {
            const auto [sy, sx] = map(y, x);
            for (int c = 0; c < in.channels; ++c) out.at(y, x, c) = in.at(sy, sx, c);
        }
    return out;
}

std::uint64_t mix_seed(std::uint64_t seed) {
    // splitmix64 finalizer
    seed += 0x9E3779B97F4A7C15ull;
    seed = (seed ^ (seed >> 30)) * 0xBF58476D1CE4E5B9ull;
    seed = (seed ^ (seed >> 27)) * 0x94D049BB133111EBull;
    return seed ^ (seed >> 31);
}

}  // namespace

std::string_view to_string(Split s) {
    switch (s) {
        case Split::train: return "train";
        case Split::val: return "val";
        case Split::test: return "test";
    }
    return "train";
}

Split parse_split(std::string_view s) {
    if (s == "train") return Split::train;
    if (s == "val") return Split::val;
    if (s == "test") return Split::test;
    throw std::invalid_argument("unknown split '" + std::string(s) + "' (expected train, val or test)");
}

std::array<std::size_t, 3> split_counts(std::size_t n, const SplitRatios& ratios) {
    double sum = 0.0;
    for (double r : ratios) {
        if (!(r >= 0.0)) throw std::invalid_argument("split ratios must be nonnegative");
        sum += r;
    }
    if (std::abs(sum - 1.0) > 1e-9) throw std::invalid_argument("split ratios must sum to 1");

    std::array<std::size_t, 3> counts{};
    std::array<double, 3> remainder{};
    std::size_t assigned = 0;
    for (std::size_t i = 0; i < 3; ++i) {
        const double exact = static_cast<double>(n) * ratios[i];
        const double whole = std::floor(exact + 1e-9);
        counts[i] = static_cast<std::size_t>(whole);
        remainder[i] = exact - whole;
        assigned += counts[i];
    }
    std::array<std::size_t, 3> order{0, 1, 2};
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return remainder[a] > remainder[b]; });
    for (std::size_t k = 0; assigned < n; ++k, ++assigned) ++counts[order[k % 3]];
    return counts;
}

std::vector<ImageRecord> build_manifest(const fs::path& root, const ManifestOptions& options) {
    const fs::path images_dir = root / "images";
    const fs::path masks_dir = root / "masks";
    if (!fs::is_directory(images_dir)) throw InputError("missing images directory: " + images_dir.string());
    if (options.require_masks && !fs::is_directory(masks_dir))
        throw InputError("missing masks directory: " + masks_dir.string());

    std::vector<fs::path> images;
    for (const auto& entry : fs::directory_iterator(images_dir))
        if (entry.is_regular_file() && is_image_file(entry.path())) images.push_back(entry.path());
    std::sort(images.begin(), images.end(), [](const fs::path& a, const fs::path& b) {
        return a.filename().string() < b.filename().string();
    });
    if (images.empty()) throw InputError("no images found in " + images_dir.string());

    const std::string source = options.source.empty() ? fs::absolute(root).lexically_normal().filename().string()
                                                      : options.source;
    std::vector<ImageRecord> records;
    records.reserve(images.size());
    for (const fs::path& img : images) {
        ImageRecord rec;
        rec.image = img.string();
        rec.source = source;
        const fs::path mask = masks_dir / (img.stem().string() + ".png");
        if (fs::is_regular_file(mask)) {
            rec.mask = mask.string();
        } else if (options.require_masks) {
            throw InputError("missing mask for " + img.string() + ": expected " + mask.string());
        }
        if (options.verify_images) {
            const RawImage raw = read_raw(img);
            if (!rec.mask.empty()) {
                const MaskPlane m = read_mask(rec.mask);
                if (m.height != raw.height || m.width != raw.width)
                    throw InputError("mask size differs from image: " + rec.mask);
            }
        }
        records.push_back(std::move(rec));
    }

    std::vector<std::size_t> order(records.size());
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(mix_seed(options.seed));
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng() % i]);

    const auto counts = split_counts(records.size(), options.ratios);
    std::size_t k = 0;
    for (std::size_t s = 0; s < 3; ++s)
        for (std::size_t c = 0; c < counts[s]; ++c) records[order[k++]].split = static_cast<Split>(s);
    return records;
}

void write_manifest(const fs::path& path, std::span<const ImageRecord> records) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw InputError("cannot write manifest: " + path.string());
    for (const ImageRecord& r : records) {
        nlohmann::ordered_json j;
        j["image"] = r.image;
        j["mask"] = r.mask.empty() ? nlohmann::ordered_json(nullptr) : nlohmann::ordered_json(r.mask);
        j["split"] = std::string(to_string(r.split));
        j["source"] = r.source;
        out << j.dump() << '\n';
    }
}

std::vector<ImageRecord> read_manifest(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot read manifest: " + path.string());
    std::vector<ImageRecord> records;
    std::string line;
    for (std::size_t lineno = 1; std::getline(in, line); ++lineno) {
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            const auto j = nlohmann::json::parse(line);
            ImageRecord r;
            r.image = j.at("image").get<std::string>();
            if (j.contains("mask") && !j["mask"].is_null()) r.mask = j["mask"].get<std::string>();
            r.split = parse_split(j.at("split").get<std::string>());
            r.source = j.value("source", std::string{});
            records.push_back(std::move(r));
        } catch (const std::exception& e) {
            throw FormatError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return records;
}

std::string_view to_string(PatchLabel l) { return l == PatchLabel::crack ? "crack" : "non_crack"; }

void write_patch_manifest(const fs::path& path, std::span<const PatchRecord> records) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw InputError("cannot write manifest: " + path.string());
    for (const PatchRecord& r : records) {
        nlohmann::ordered_json j;
        j["image"] = r.image;
        j["label"] = std::string(to_string(r.label));
        j["split"] = std::string(to_string(r.split));
        j["source"] = r.source;
        out << j.dump() << '\n';
    }
}

std::vector<PatchRecord> read_patch_manifest(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot read manifest: " + path.string());
    std::vector<PatchRecord> records;
    std::string line;
    for (std::size_t lineno = 1; std::getline(in, line); ++lineno) {
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            const auto j = nlohmann::json::parse(line);
            PatchRecord r;
            r.image = j.at("image").get<std::string>();
            const std::string label = j.at("label").get<std::string>();
            if (label == "crack") r.label = PatchLabel::crack;
            else if (label != "non_crack") throw std::invalid_argument("bad label '" + label + "'");
            r.split = parse_split(j.at("split").get<std::string>());
            r.source = j.value("source", std::string{});
            records.push_back(std::move(r));
        } catch (const std::exception& e) {
            throw FormatError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return records;
}

Patch load_patch(const PatchRecord& record, int target) {
    Patch p;
    p.pixels = resize_image(read_image(record.image), target);
    p.label = record.label;
    return p;
}

std::vector<ImageRecord> filter_split(std::span<const ImageRecord> records, Split split) {
    std::vector<ImageRecord> out;
    for (const ImageRecord& r : records)
        if (r.split == split) out.push_back(r);
    return out;
}

MaskPlane normalize_mask(const RawImage& raw) {
    if (raw.channels != 1)
        throw std::invalid_argument("normalize_mask: expected a single-channel image, got " +
                                    std::to_string(raw.channels) + " channels");
    MaskPlane mask(raw.height, raw.width);
    const bool already_binary = std::all_of(raw.values.begin(), raw.values.end(), [](std::uint8_t v) { return v <= 1; });
    for (std::size_t i = 0; i < raw.values.size(); ++i)
        mask.values[i] = already_binary ? raw.values[i] : (raw.values[i] > 127 ? 1 : 0);
    return mask;
}

MaskPlane read_mask(const fs::path& path) {
    RawImage raw = read_raw(path);
    if (raw.channels == 3 || raw.channels == 4) {
        // Accept gray masks saved as RGB(A) as long as the colour channels agree.
        RawImage gray{raw.height, raw.width, 1, std::vector<std::uint8_t>(static_cast<std::size_t>(raw.height) * raw.width)};
        for (std::size_t i = 0; i < gray.values.size(); ++i) {
            const std::uint8_t* px = raw.values.data() + i * raw.channels;
            if (px[0] != px[1] || px[1] != px[2]) throw InputError("mask is not single-channel: " + path.string());
            gray.values[i] = px[0];
        }
        raw = std::move(gray);
    }
    if (raw.channels != 1) throw InputError("mask is not single-channel: " + path.string());
    return normalize_mask(raw);
}

PatchLabel label_for_fraction(std::uint64_t crack_pixels, std::uint64_t total_pixels, double crack_threshold) {
    if (total_pixels == 0) throw std::invalid_argument("label_for_fraction: empty patch");
    const double fraction = static_cast<double>(crack_pixels) / static_cast<double>(total_pixels);
    return fraction > crack_threshold ? PatchLabel::crack : PatchLabel::non_crack;
}

std::vector<Patch> crop_patches(const Image& image, const MaskPlane& mask, int patch_size, double crack_threshold) {
    if (image.height != mask.height || image.width != mask.width)
        throw std::invalid_argument("crop_patches: image " + std::to_string(image.height) + "x" +
                                    std::to_string(image.width) + " and mask " + std::to_string(mask.height) + "x" +
                                    std::to_string(mask.width) + " differ in size");
    if (patch_size <= 0 || patch_size > std::min(image.height, image.width))
        throw std::invalid_argument("crop_patches: patch size " + std::to_string(patch_size) +
                                    " does not fit the image");
    std::vector<Patch> patches;
    const int rows = image.height / patch_size;
    const int cols = image.width / patch_size;
    patches.reserve(static_cast<std::size_t>(rows) * cols);
    for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < cols; ++c) {
            Patch p;
            p.row = r * patch_size;
            p.col = c * patch_size;
            p.pixels = Image(patch_size, patch_size, image.channels);
            std::uint64_t crack = 0;
            for (int y = 0; y < patch_size; ++y) {
                for (int x = 0; x < patch_size; ++x) {
                    for (int ch = 0; ch < image.channels; ++ch) p.pixels.at(y, x, ch) = image.at(p.row + y, p.col + x, ch);
                    crack += mask.at(p.row + y, p.col + x) != 0;
                }
            }
            p.label = label_for_fraction(crack, static_cast<std::uint64_t>(patch_size) * patch_size, crack_threshold);
            patches.push_back(std::move(p));
        }
    }
    return patches;
}

Image rotate_image(const Image& image, int degrees) {
    const int angle = normalize_angle(degrees);
    if (angle == 0) return image;
    if (angle == 180) {
        return remap_exact_image(image, [&](int y, int x) {
            return std::pair{image.height - 1 - y, image.width - 1 - x};
        });
    }
    cv::Mat out;
    cv::warpAffine(to_mat(image), out, rotation_matrix(image.width, image.height, angle),
                   cv::Size(image.width, image.height), cv::INTER_LINEAR, cv::BORDER_REFLECT);
    return from_mat(out);
}

MaskPlane rotate_mask(const MaskPlane& mask, int degrees) {
    const int angle = normalize_angle(degrees);
    if (angle == 0) return mask;
    if (angle == 180) {
        return remap_exact(mask, [&](int y, int x) { return std::pair{mask.height - 1 - y, mask.width - 1 - x}; });
    }
    cv::Mat out;
    cv::warpAffine(to_mat(mask), out, rotation_matrix(mask.width, mask.height, angle),
                   cv::Size(mask.width, mask.height), cv::INTER_NEAREST, cv::BORDER_REFLECT);
    return mask_from_mat(out);
}

Image flip_horizontal(const Image& image) {
    return remap_exact_image(image, [&](int y, int x) { return std::pair{y, image.width - 1 - x}; });
}

MaskPlane flip_horizontal(const MaskPlane& mask) {
    return remap_exact(mask, [&](int y, int x) { return std::pair{y, mask.width - 1 - x}; });
}

std::vector<Sample> augment(const Image& image, const MaskPlane& mask) {
    if (image.height != mask.height || image.width != mask.width)
        throw std::invalid_argument("augment: image and mask differ in size");
    std::vector<Sample> out;
    out.reserve(kNumAugmentations);
    for (int angle : kRotationAngles) {
        Sample rotated{rotate_image(image, angle), rotate_mask(mask, angle)};
        Sample flipped{flip_horizontal(rotated.image), flip_horizontal(rotated.mask)};
        out.push_back(std::move(rotated));
        out.push_back(std::move(flipped));
    }
    return out;
}

Image resize_image(const Image& image, int target) {
    if (target <= 0) throw std::invalid_argument("resize_image: target must be positive");
    if (image.height == target && image.width == target) return image;
    cv::Mat resized;
    cv::resize(to_mat(image), resized, cv::Size(target, target), 0, 0, cv::INTER_LINEAR);
    return from_mat(resized);
}

Sample resize_sample(const Image& image, const MaskPlane& mask, int target) {
    if (target <= 0) throw std::invalid_argument("resize_sample: target must be positive");
    if (image.empty() || mask.empty()) throw std::invalid_argument("resize_sample: empty input");
    if (image.height == target && image.width == target && mask.height == target && mask.width == target)
        return {image, mask};
    Sample out;
    out.image = resize_image(image, target);
    if (mask.height == target && mask.width == target) {
        out.mask = mask;
    } else {
        cv::Mat resized;
        cv::resize(to_mat(mask), resized, cv::Size(target, target), 0, 0, cv::INTER_NEAREST);
        out.mask = mask_from_mat(resized);
    }
    return out;
}

Sample load_sample(const ImageRecord& record, int target) {
    Image image = read_image(record.image);
    MaskPlane mask = record.mask.empty() ? MaskPlane(image.height, image.width) : read_mask(record.mask);
    if (mask.height != image.height || mask.width != image.width)
        throw InputError("mask size differs from image: " + record.mask);
    return resize_sample(image, mask, target);
}

}  // namespace crackseg
