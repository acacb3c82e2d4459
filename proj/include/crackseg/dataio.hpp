#pragma once
// Dataset ingestion: manifests, mask normalization, detection patches,
// resizing and the 12-fold rotation/flip augmentation.
//
// Dataset layout: <root>/images/<name>.(png|jpg|jpeg) paired by stem with
// <root>/masks/<name>.png. Manifests are JSON lines with keys image, mask,
// split, source.

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "crackseg/image.hpp"

namespace crackseg {

enum class Split { train, val, test };

std::string_view to_string(Split s);
Split parse_split(std::string_view s);

struct ImageRecord {
    std::string image;
    std::string mask;  // empty when unlabeled
    Split split = Split::train;
    std::string source;

    friend bool operator==(const ImageRecord&, const ImageRecord&) = default;
};

using SplitRatios = std::array<double, 3>;  // train, val, test
inline constexpr SplitRatios kDefaultSplitRatios{0.70, 0.15, 0.15};

/// Largest-remainder allocation of n items over the three splits; equal
/// remainders go to the earlier split.
std::array<std::size_t, 3> split_counts(std::size_t n, const SplitRatios& ratios);

struct ManifestOptions {
    SplitRatios ratios = kDefaultSplitRatios;
    std::uint64_t seed = 7;
    std::string source;      // defaults to the root directory name
    bool require_masks = true;
    bool verify_images = true;  // decode every image and mask once
};

/// Records come back sorted by image name; splits follow a seeded shuffle.
std::vector<ImageRecord> build_manifest(const std::filesystem::path& root, const ManifestOptions& options = {});

void write_manifest(const std::filesystem::path& path, std::span<const ImageRecord> records);
std::vector<ImageRecord> read_manifest(const std::filesystem::path& path);
std::vector<ImageRecord> filter_split(std::span<const ImageRecord> records, Split split);

/// Values > 127 become 1, others 0, unless every value is already 0 or 1.
MaskPlane normalize_mask(const RawImage& raw);
MaskPlane read_mask(const std::filesystem::path& path);

enum class PatchLabel { non_crack, crack };

struct Patch {
    Image pixels;
    PatchLabel label = PatchLabel::non_crack;
    int row = 0;
    int col = 0;
};

inline constexpr int kDefaultPatchSize = 100;
inline constexpr double kDefaultCrackFraction = 0.09;

/// Non-overlapping grid tiling; right/bottom remainders are dropped. A patch
/// is labelled crack iff its crack-pixel fraction is strictly greater than
/// crack_threshold.
std::vector<Patch> crop_patches(const Image& image, const MaskPlane& mask, int patch_size = kDefaultPatchSize,
                                double crack_threshold = kDefaultCrackFraction);
PatchLabel label_for_fraction(std::uint64_t crack_pixels, std::uint64_t total_pixels, double crack_threshold);

struct Sample {
    Image image;
    MaskPlane mask;
};

inline constexpr int kNumAugmentations = 12;
inline constexpr std::array<int, 6> kRotationAngles{0, 60, 120, 180, 240, 300};

/// Rotation about the image centre. Images use bilinear sampling and masks
/// nearest-neighbour, both with reflected borders; 0 and 180 degrees are exact.
Image rotate_image(const Image& image, int degrees);
MaskPlane rotate_mask(const MaskPlane& mask, int degrees);
Image flip_horizontal(const Image& image);
MaskPlane flip_horizontal(const MaskPlane& mask);

/// Patch manifest line: image path, label, split, source.
struct PatchRecord {
    std::string image;
    PatchLabel label = PatchLabel::non_crack;
    Split split = Split::train;
    std::string source;

    friend bool operator==(const PatchRecord&, const PatchRecord&) = default;
};

std::string_view to_string(PatchLabel l);
void write_patch_manifest(const std::filesystem::path& path, std::span<const PatchRecord> records);
std::vector<PatchRecord> read_patch_manifest(const std::filesystem::path& path);
/// Reads the patch and resizes it to target x target when needed.
Patch load_patch(const PatchRecord& record, int target);

/// Six rotations x {no flip, horizontal flip}, in that order (rotation-major).
std::vector<Sample> augment(const Image& image, const MaskPlane& mask);

/// Bilinear; returns the input unchanged when already target x target.
Image resize_image(const Image& image, int target);
/// Bilinear for the image, nearest-neighbour for the mask.
Sample resize_sample(const Image& image, const MaskPlane& mask, int target = 256);

/// Loads a manifest record and resizes it to target x target.
Sample load_sample(const ImageRecord& record, int target);

}  // namespace crackseg
