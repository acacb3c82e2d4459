#pragma once

#include <algorithm>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace crackseg {

/// Dense NCHW tensor of doubles. Fully-connected activations use (n, c, 1, 1).
class Tensor {
public:
    Tensor() = default;
    Tensor(int n, int c, int h, int w, double fill = 0.0)
        : n_(n), c_(c), h_(h), w_(w),
          data_(static_cast<std::size_t>(n) * c * h * w, fill) {
        if (n < 0 || c < 0 || h < 0 || w < 0) throw std::invalid_argument("negative tensor dimension");
    }

    int n() const { return n_; }
    int c() const { return c_; }
    int h() const { return h_; }
    int w() const { return w_; }
    std::size_t size() const { return data_.size(); }
    std::size_t plane_size() const { return static_cast<std::size_t>(h_) * w_; }
    bool empty() const { return data_.empty(); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::span<double> span() { return data_; }
    std::span<const double> span() const { return data_; }
    std::vector<double>& vec() { return data_; }
    const std::vector<double>& vec() const { return data_; }

    double* plane(int n, int c) { return data_.data() + (static_cast<std::size_t>(n) * c_ + c) * plane_size(); }
    const double* plane(int n, int c) const {
        return data_.data() + (static_cast<std::size_t>(n) * c_ + c) * plane_size();
    }
    double& at(int n, int c, int y, int x) { return plane(n, c)[static_cast<std::size_t>(y) * w_ + x]; }
    double at(int n, int c, int y, int x) const { return plane(n, c)[static_cast<std::size_t>(y) * w_ + x]; }
    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    bool same_shape(const Tensor& o) const { return n_ == o.n_ && c_ == o.c_ && h_ == o.h_ && w_ == o.w_; }
    void fill(double v) { std::fill(data_.begin(), data_.end(), v); }
    void zero() { fill(0.0); }

    std::string shape_string() const {
        return "(" + std::to_string(n_) + "," + std::to_string(c_) + "," + std::to_string(h_) + "," +
               std::to_string(w_) + ")";
    }

    friend bool operator==(const Tensor&, const Tensor&) = default;

private:
    int n_ = 0;
    int c_ = 0;
    int h_ = 0;
    int w_ = 0;
    std::vector<double> data_;
};

}  // namespace crackseg
