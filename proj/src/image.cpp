#include "crackseg/image.hpp"

#include <cmath>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "crackseg/errors.hpp"

namespace crackseg {
namespace {

void ensure_written(bool ok, const std::filesystem::path& path) {
    if (!ok) throw InputError("cannot write image: " + path.string());
}

void ensure_parent(const std::filesystem::path& path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
}

}  // namespace

Plane<double> luma(const Image& image) {
    Plane<double> out(image.height, image.width);
    for (int y = 0; y < image.height; ++y) {
        for (int x = 0; x < image.width; ++x) {
            if (image.channels >= 3) {
                out.at(y, x) = 0.299 * image.at(y, x, 0) + 0.587 * image.at(y, x, 1) + 0.114 * image.at(y, x, 2);
            } else {
                out.at(y, x) = image.at(y, x, 0);
            }
        }
    }
    return out;
}

RawImage read_raw(const std::filesystem::path& path) {
    cv::Mat mat = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
    if (mat.empty()) throw InputError("unreadable image: " + path.string());
    if (mat.depth() == CV_16U) mat.convertTo(mat, CV_8U, 1.0 / 257.0);
    if (mat.depth() != CV_8U) throw InputError("unsupported pixel depth: " + path.string());
    if (mat.channels() == 3) cv::cvtColor(mat, mat, cv::COLOR_BGR2RGB);
    if (mat.channels() == 4) cv::cvtColor(mat, mat, cv::COLOR_BGRA2RGBA);
    RawImage raw;
    raw.height = mat.rows;
    raw.width = mat.cols;
    raw.channels = mat.channels();
    raw.values.resize(static_cast<std::size_t>(mat.rows) * mat.cols * mat.channels());
    const std::size_t row_bytes = static_cast<std::size_t>(mat.cols) * mat.channels();
    for (int y = 0; y < mat.rows; ++y)
        std::copy_n(mat.ptr<std::uint8_t>(y), row_bytes, raw.values.begin() + y * row_bytes);
    return raw;
}

Image to_image(const RawImage& raw) {
    Image img(raw.height, raw.width, 3);
    for (int y = 0; y < raw.height; ++y) {
        for (int x = 0; x < raw.width; ++x) {
            const std::size_t base = (static_cast<std::size_t>(y) * raw.width + x) * raw.channels;
            for (int c = 0; c < 3; ++c) {
                const int src = raw.channels >= 3 ? c : 0;
                img.at(y, x, c) = raw.values[base + src] / 255.0;
            }
        }
    }
    return img;
}

Image read_image(const std::filesystem::path& path) {
    return to_image(read_raw(path));
}

void write_image(const std::filesystem::path& path, const Image& image) {
    if (image.channels != 1 && image.channels != 3)
        throw std::invalid_argument("write_image supports 1 or 3 channels");
    cv::Mat mat(image.height, image.width, image.channels == 3 ? CV_8UC3 : CV_8UC1);
    for (int y = 0; y < image.height; ++y) {
        auto* row = mat.ptr<std::uint8_t>(y);
        for (int x = 0; x < image.width; ++x) {
            for (int c = 0; c < image.channels; ++c) {
                // OpenCV stores BGR
                const int dst = image.channels == 3 ? 2 - c : 0;
                const double v = std::clamp(image.at(y, x, c), 0.0, 1.0);
                row[x * image.channels + dst] = static_cast<std::uint8_t>(std::lround(255.0 * v));
            }
        }
    }
    ensure_parent(path);
    ensure_written(cv::imwrite(path.string(), mat), path);
}

void write_mask(const std::filesystem::path& path, const MaskPlane& mask) {
    cv::Mat mat(mask.height, mask.width, CV_8UC1);
    for (int y = 0; y < mask.height; ++y) {
        auto* row = mat.ptr<std::uint8_t>(y);
        for (int x = 0; x < mask.width; ++x) row[x] = mask.at(y, x) ? 255 : 0;
    }
    ensure_parent(path);
    ensure_written(cv::imwrite(path.string(), mat), path);
}

void write_probability(const std::filesystem::path& path, const ProbabilityPlane& prob) {
    cv::Mat mat(prob.height, prob.width, CV_8UC1);
    for (int y = 0; y < prob.height; ++y) {
        auto* row = mat.ptr<std::uint8_t>(y);
        for (int x = 0; x < prob.width; ++x)
            row[x] = static_cast<std::uint8_t>(std::lround(255.0 * std::clamp(prob.at(y, x), 0.0, 1.0)));
    }
    ensure_parent(path);
    ensure_written(cv::imwrite(path.string(), mat), path);
}

}  // namespace crackseg
