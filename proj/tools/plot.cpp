#include <algorithm>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "commands.hpp"
#include "crackseg/errors.hpp"

namespace crackseg::cli {

void write_bar_chart(const std::filesystem::path& path, const std::vector<std::string>& metrics,
                     const std::vector<SweepPlotRow>& rows) {
    const int bar = 18, gap = 24, left = 60, top = 40, plot_h = 300;
    const int group = static_cast<int>(metrics.size()) * bar + gap;
    const int width = left + std::max<int>(1, static_cast<int>(rows.size())) * group + 140;
    const int height = top + plot_h + 60;
    cv::Mat img(height, width, CV_8UC3, cv::Scalar(255, 255, 255));

    const cv::Scalar palette[] = {{180, 119, 31}, {14, 127, 255}, {44, 160, 44}, {40, 39, 214}, {189, 103, 148}};
    const auto y_of = [&](double v) { return top + plot_h - static_cast<int>(std::clamp(v, 0.0, 1.0) * plot_h); };

    for (int t = 0; t <= 10; t += 2) {
        const int y = y_of(t / 10.0);
        cv::line(img, {left - 4, y}, {width - 130, y}, cv::Scalar(220, 220, 220), 1);
        cv::putText(img, cv::format("%.1f", t / 10.0), {8, y + 4}, cv::FONT_HERSHEY_SIMPLEX, 0.4, {0, 0, 0}, 1,
                    cv::LINE_AA);
    }
    for (std::size_t g = 0; g < rows.size(); ++g) {
        const int x0 = left + static_cast<int>(g) * group;
        for (std::size_t m = 0; m < metrics.size() && m < rows[g].values.size(); ++m) {
            const int x = x0 + static_cast<int>(m) * bar;
            cv::rectangle(img, {x, y_of(rows[g].values[m])}, {x + bar - 3, top + plot_h}, palette[m % 5], cv::FILLED);
        }
        cv::putText(img, "case " + std::to_string(rows[g].id), {x0, top + plot_h + 20}, cv::FONT_HERSHEY_SIMPLEX, 0.4,
                    {0, 0, 0}, 1, cv::LINE_AA);
    }
    for (std::size_t m = 0; m < metrics.size(); ++m) {
        const int y = top + static_cast<int>(m) * 20;
        cv::rectangle(img, {width - 110, y}, {width - 96, y + 12}, palette[m % 5], cv::FILLED);
        cv::putText(img, metrics[m], {width - 90, y + 11}, cv::FONT_HERSHEY_SIMPLEX, 0.4, {0, 0, 0}, 1, cv::LINE_AA);
    }
    cv::putText(img, "lambda cases", {left, 24}, cv::FONT_HERSHEY_SIMPLEX, 0.55, {0, 0, 0}, 1, cv::LINE_AA);
    if (!cv::imwrite(path.string(), img)) throw InputError("cannot write plot: " + path.string());
}

}  // namespace crackseg::cli
