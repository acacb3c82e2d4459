#pragma once
// Image containers shared by every module, plus PNG/JPEG I/O.

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <vector>

namespace crackseg {

/// Single-channel grid, row-major.
template <class T>
struct Plane {
    int height = 0;
    int width = 0;
    std::vector<T> values;

    Plane() = default;
    Plane(int h, int w, T fill = T{}) : height(h), width(w), values(static_cast<std::size_t>(h) * w, fill) {
        if (h < 0 || w < 0) throw std::invalid_argument("negative plane dimension");
    }

    std::size_t size() const { return values.size(); }
    bool empty() const { return values.empty(); }
    T& at(int y, int x) { return values[static_cast<std::size_t>(y) * width + x]; }
    const T& at(int y, int x) const { return values[static_cast<std::size_t>(y) * width + x]; }

    template <class U>
    bool same_shape(const Plane<U>& o) const {
        return height == o.height && width == o.width;
    }

    friend bool operator==(const Plane&, const Plane&) = default;
};

/// Binary ground truth: 1 = crack, 0 = non-crack.
using MaskPlane = Plane<std::uint8_t>;
/// Per-pixel crack probability in [0, 1].
using ProbabilityPlane = Plane<double>;

/// Interleaved (HWC) image with intensities in [0, 1].
struct Image {
    int height = 0;
    int width = 0;
    int channels = 0;
    std::vector<double> values;

    Image() = default;
    Image(int h, int w, int c, double fill = 0.0)
        : height(h), width(w), channels(c), values(static_cast<std::size_t>(h) * w * c, fill) {}

    double& at(int y, int x, int ch) {
        return values[(static_cast<std::size_t>(y) * width + x) * channels + ch];
    }
    double at(int y, int x, int ch) const {
        return values[(static_cast<std::size_t>(y) * width + x) * channels + ch];
    }
    bool empty() const { return values.empty(); }

    friend bool operator==(const Image&, const Image&) = default;
};

/// Undecoded-intensity 8-bit image exactly as stored on disk.
struct RawImage {
    int height = 0;
    int width = 0;
    int channels = 0;
    std::vector<std::uint8_t> values;
};

/// Rec.601 luma of an RGB image (or the single channel of a gray one).
Plane<double> luma(const Image& image);

RawImage read_raw(const std::filesystem::path& path);
/// Decodes to 3-channel RGB in [0, 1]; grayscale files are replicated.
Image read_image(const std::filesystem::path& path);
Image to_image(const RawImage& raw);

void write_image(const std::filesystem::path& path, const Image& image);
/// Writes 0/255.
void write_mask(const std::filesystem::path& path, const MaskPlane& mask);
/// Writes round(255 * p).
void write_probability(const std::filesystem::path& path, const ProbabilityPlane& prob);

}  // namespace crackseg
