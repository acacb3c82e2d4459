#include "crackseg/nn.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <stdexcept>

#include "crackseg/kernels.hpp"

namespace crackseg::nn {
namespace {

// Upper bound on im2col scratch, in doubles (32 MiB).
constexpr std::size_t kMaxColElems = std::size_t{1} << 22;

Param make_param(std::string name, ParamKind kind, int n, int c, int h, int w, double fill = 0.0) {
    Param p{std::move(name), kind, Tensor(n, c, h, w, fill), Tensor(n, c, h, w)};
    return p;
}

void require_channels(const Tensor& x, int expected, const char* layer) {
    if (x.c() != expected) {
        throw std::invalid_argument(std::string(layer) + ": expected " + std::to_string(expected) +
                                    " input channels, got " + std::to_string(x.c()));
    }
}

struct LerpIndex {
    int i0;
    int i1;
    double t;
};

std::vector<LerpIndex> lerp_table(int in, int out) {
    std::vector<LerpIndex> table(static_cast<std::size_t>(out));
    for (int o = 0; o < out; ++o) {
        double src = 0.0;
        if (in > 1 && out > 1) src = static_cast<double>(o) * (in - 1) / (out - 1);
        int i0 = std::min(static_cast<int>(std::floor(src)), in - 1);
        int i1 = std::min(i0 + 1, in - 1);
        table[o] = {i0, i1, src - i0};
    }
    return table;
}

}  // namespace

// ---------------------------------------------------------------- Conv2d

Conv2d::Conv2d(std::string name, int in_ch, int out_ch, int kernel, int stride, int pad, bool bias)
    : in_(in_ch), out_(out_ch), k_(kernel), stride_(stride), pad_(pad), has_bias_(bias) {
    if (in_ch <= 0 || out_ch <= 0 || kernel <= 0 || stride <= 0 || pad < 0)
        throw std::invalid_argument("conv2d: invalid geometry for " + name);
    weight_ = make_param(name + ".weight", ParamKind::conv_weight, out_ch, in_ch, kernel, kernel);
    if (bias) bias_ = make_param(name + ".bias", ParamKind::bias, out_ch, 1, 1, 1);
}

void Conv2d::collect(ParamList& out) {
    out.push_back(&weight_);
    if (has_bias_) out.push_back(&bias_);
}

int Conv2d::rows_per_chunk(int ho, int wo) const {
    const std::size_t per_row = static_cast<std::size_t>(in_) * k_ * k_ * wo;
    const std::size_t rows = std::max<std::size_t>(1, kMaxColElems / std::max<std::size_t>(per_row, 1));
    return static_cast<int>(std::min<std::size_t>(rows, ho));
}

void Conv2d::im2col(const double* x, int h, int w, int row0, int rows, int wo, double* col) const {
    const std::size_t n = static_cast<std::size_t>(rows) * wo;
    for (int c = 0; c < in_; ++c) {
        const double* xc = x + static_cast<std::size_t>(c) * h * w;
        for (int ky = 0; ky < k_; ++ky) {
            for (int kx = 0; kx < k_; ++kx) {
                double* dst = col + (static_cast<std::size_t>(c * k_ + ky) * k_ + kx) * n;
                for (int oy = 0; oy < rows; ++oy) {
                    const int iy = (row0 + oy) * stride_ - pad_ + ky;
                    double* d = dst + static_cast<std::size_t>(oy) * wo;
                    if (iy < 0 || iy >= h) {
                        std::fill_n(d, wo, 0.0);
                        continue;
                    }
                    const double* src = xc + static_cast<std::size_t>(iy) * w;
                    for (int ox = 0; ox < wo; ++ox) {
                        const int ix = ox * stride_ - pad_ + kx;
                        d[ox] = (ix >= 0 && ix < w) ? src[ix] : 0.0;
                    }
                }
            }
        }
    }
}

void Conv2d::col2im(const double* col, int h, int w, int row0, int rows, int wo, double* dx) const {
    const std::size_t n = static_cast<std::size_t>(rows) * wo;
    for (int c = 0; c < in_; ++c) {
        double* xc = dx + static_cast<std::size_t>(c) * h * w;
        for (int ky = 0; ky < k_; ++ky) {
            for (int kx = 0; kx < k_; ++kx) {
                const double* src = col + (static_cast<std::size_t>(c * k_ + ky) * k_ + kx) * n;
                for (int oy = 0; oy < rows; ++oy) {
                    const int iy = (row0 + oy) * stride_ - pad_ + ky;
                    if (iy < 0 || iy >= h) continue;
                    const double* s = src + static_cast<std::size_t>(oy) * wo;
                    double* d = xc + static_cast<std::size_t>(iy) * w;
                    for (int ox = 0; ox < wo; ++ox) {
                        const int ix = ox * stride_ - pad_ + kx;
                        if (ix >= 0 && ix < w) d[ix] += s[ox];
                    }
                }
            }
        }
    }
}

Tensor Conv2d::forward(const Tensor& x, Mode) {
    require_channels(x, in_, "conv2d");
    const int h = x.h(), w = x.w();
    const int ho = out_size(h), wo = out_size(w);
    if (ho <= 0 || wo <= 0) throw std::invalid_argument("conv2d: input smaller than kernel");
    input_ = x;
    Tensor y(x.n(), out_, ho, wo);
    const std::size_t kdim = static_cast<std::size_t>(in_) * k_ * k_;
    const std::size_t out_plane = static_cast<std::size_t>(ho) * wo;
    std::vector<double> col;
    for (int b = 0; b < x.n(); ++b) {
        double* yb = y.plane(b, 0);
        if (pointwise()) {
            kernels::gemm_nn(out_, out_plane, kdim, weight_.value.data(), kdim, x.plane(b, 0), out_plane, yb,
                             out_plane);
        } else {
            const int chunk = rows_per_chunk(ho, wo);
            for (int r0 = 0; r0 < ho; r0 += chunk) {
                const int rows = std::min(chunk, ho - r0);
                const std::size_t ncol = static_cast<std::size_t>(rows) * wo;
                col.resize(kdim * ncol);
                im2col(x.plane(b, 0), h, w, r0, rows, wo, col.data());
                kernels::gemm_nn(out_, ncol, kdim, weight_.value.data(), kdim, col.data(), ncol,
                                 yb + static_cast<std::size_t>(r0) * wo, out_plane);
            }
        }
        if (has_bias_) {
            for (int o = 0; o < out_; ++o) {
                double* p = y.plane(b, o);
                const double bv = bias_.value[o];
                for (std::size_t i = 0; i < out_plane; ++i) p[i] += bv;
            }
        }
    }
    return y;
}

Tensor Conv2d::backward(const Tensor& dy) {
    const int h = input_.h(), w = input_.w();
    const int ho = dy.h(), wo = dy.w();
    const std::size_t kdim = static_cast<std::size_t>(in_) * k_ * k_;
    const std::size_t out_plane = static_cast<std::size_t>(ho) * wo;
    Tensor dx(input_.n(), in_, h, w);
    std::vector<double> col, dcol;
    for (int b = 0; b < dy.n(); ++b) {
        const double* dyb = dy.plane(b, 0);
        if (pointwise()) {
            kernels::gemm_nt(out_, kdim, out_plane, dyb, out_plane, input_.plane(b, 0), out_plane,
                             weight_.grad.data(), kdim);
            kernels::gemm_tn(kdim, out_plane, out_, weight_.value.data(), kdim, dyb, out_plane, dx.plane(b, 0),
                             out_plane);
        } else {
            const int chunk = rows_per_chunk(ho, wo);
            for (int r0 = 0; r0 < ho; r0 += chunk) {
                const int rows = std::min(chunk, ho - r0);
                const std::size_t ncol = static_cast<std::size_t>(rows) * wo;
                col.resize(kdim * ncol);
                im2col(input_.plane(b, 0), h, w, r0, rows, wo, col.data());
                const double* dyc = dyb + static_cast<std::size_t>(r0) * wo;
                kernels::gemm_nt(out_, kdim, ncol, dyc, out_plane, col.data(), ncol, weight_.grad.data(), kdim);
                dcol.assign(kdim * ncol, 0.0);
                kernels::gemm_tn(kdim, ncol, out_, weight_.value.data(), kdim, dyc, out_plane, dcol.data(), ncol);
                col2im(dcol.data(), h, w, r0, rows, wo, dx.plane(b, 0));
            }
        }
        if (has_bias_) {
            for (int o = 0; o < out_; ++o) {
                const double* p = dy.plane(b, o);
                double s = 0.0;
                for (std::size_t i = 0; i < out_plane; ++i) s += p[i];
                bias_.grad[o] += s;
            }
        }
    }
    return dx;
}

// ----------------------------------------------------------- BatchNorm2d

BatchNorm2d::BatchNorm2d(std::string name, int channels) : ch_(channels) {
    gamma_ = make_param(name + ".gamma", ParamKind::bn_scale, channels, 1, 1, 1, 1.0);
    beta_ = make_param(name + ".beta", ParamKind::bn_shift, channels, 1, 1, 1);
    running_mean_ = make_param(name + ".running_mean", ParamKind::running_mean, channels, 1, 1, 1);
    running_var_ = make_param(name + ".running_var", ParamKind::running_var, channels, 1, 1, 1, 1.0);
}

void BatchNorm2d::collect(ParamList& out) {
    out.push_back(&gamma_);
    out.push_back(&beta_);
    out.push_back(&running_mean_);
    out.push_back(&running_var_);
}

Tensor BatchNorm2d::forward(const Tensor& x, Mode mode) {
    require_channels(x, ch_, "batchnorm");
    last_mode_ = mode;
    const std::size_t plane = x.plane_size();
    const double count = static_cast<double>(x.n()) * plane;
    xhat_ = Tensor(x.n(), x.c(), x.h(), x.w());
    Tensor y(x.n(), x.c(), x.h(), x.w());
    inv_std_.assign(ch_, 0.0);
    for (int c = 0; c < ch_; ++c) {
        double mean, var;
        if (mode == Mode::train) {
            double s = 0.0;
            for (int b = 0; b < x.n(); ++b) {
                const double* p = x.plane(b, c);
                for (std::size_t i = 0; i < plane; ++i) s += p[i];
            }
            mean = s / count;
            double ss = 0.0;
            for (int b = 0; b < x.n(); ++b) {
                const double* p = x.plane(b, c);
                for (std::size_t i = 0; i < plane; ++i) ss += (p[i] - mean) * (p[i] - mean);
            }
            var = ss / count;
            const double unbiased = count > 1 ? ss / (count - 1) : var;
            running_mean_.value[c] = (1.0 - kMomentum) * running_mean_.value[c] + kMomentum * mean;
            running_var_.value[c] = (1.0 - kMomentum) * running_var_.value[c] + kMomentum * unbiased;
        } else {
            mean = running_mean_.value[c];
            var = running_var_.value[c];
        }
        const double inv_std = 1.0 / std::sqrt(var + kEps);
        inv_std_[c] = inv_std;
        const double g = gamma_.value[c], bt = beta_.value[c];
        for (int b = 0; b < x.n(); ++b) {
            const double* p = x.plane(b, c);
            double* xh = xhat_.plane(b, c);
            double* out = y.plane(b, c);
            for (std::size_t i = 0; i < plane; ++i) {
                xh[i] = (p[i] - mean) * inv_std;
                out[i] = g * xh[i] + bt;
            }
        }
    }
    return y;
}

Tensor BatchNorm2d::backward(const Tensor& dy) {
    const std::size_t plane = dy.plane_size();
    const double count = static_cast<double>(dy.n()) * plane;
    Tensor dx(dy.n(), dy.c(), dy.h(), dy.w());
    for (int c = 0; c < ch_; ++c) {
        double sum_dy = 0.0, sum_dy_xhat = 0.0;
        for (int b = 0; b < dy.n(); ++b) {
            const double* g = dy.plane(b, c);
            const double* xh = xhat_.plane(b, c);
            for (std::size_t i = 0; i < plane; ++i) {
                sum_dy += g[i];
                sum_dy_xhat += g[i] * xh[i];
            }
        }
        gamma_.grad[c] += sum_dy_xhat;
        beta_.grad[c] += sum_dy;
        const double gscale = gamma_.value[c] * inv_std_[c];
        for (int b = 0; b < dy.n(); ++b) {
            const double* g = dy.plane(b, c);
            const double* xh = xhat_.plane(b, c);
            double* d = dx.plane(b, c);
            if (last_mode_ == Mode::train) {
                for (std::size_t i = 0; i < plane; ++i)
                    d[i] = gscale / count * (count * g[i] - sum_dy - xh[i] * sum_dy_xhat);
            } else {
                for (std::size_t i = 0; i < plane; ++i) d[i] = gscale * g[i];
            }
        }
    }
    return dx;
}

// ------------------------------------------------------------------ ReLU

Tensor ReLU::forward(const Tensor& x, Mode) {
    Tensor y = x;
    active_.resize(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        active_[i] = x[i] > 0.0;
        if (!active_[i]) y[i] = 0.0;
    }
    return y;
}

Tensor ReLU::backward(const Tensor& dy) {
    Tensor dx = dy;
    for (std::size_t i = 0; i < dx.size(); ++i)
        if (!active_[i]) dx[i] = 0.0;
    return dx;
}

// ------------------------------------------------------------- MaxPool2d

Tensor MaxPool2d::forward(const Tensor& x, Mode) {
    in_n_ = x.n();
    in_c_ = x.c();
    in_h_ = x.h();
    in_w_ = x.w();
    const int ho = out_size(x.h()), wo = out_size(x.w());
    if (ho <= 0 || wo <= 0) throw std::invalid_argument("maxpool: input smaller than window");
    Tensor y(x.n(), x.c(), ho, wo);
    argmax_.assign(y.size(), 0);
    std::size_t o = 0;
    for (int b = 0; b < x.n(); ++b) {
        for (int c = 0; c < x.c(); ++c) {
            const double* p = x.plane(b, c);
            for (int oy = 0; oy < ho; ++oy) {
                for (int ox = 0; ox < wo; ++ox, ++o) {
                    double best = -std::numeric_limits<double>::infinity();
                    std::uint32_t arg = 0;
                    for (int ky = 0; ky < k_; ++ky) {
                        const int iy = oy * stride_ - pad_ + ky;
                        if (iy < 0 || iy >= x.h()) continue;
                        for (int kx = 0; kx < k_; ++kx) {
                            const int ix = ox * stride_ - pad_ + kx;
                            if (ix < 0 || ix >= x.w()) continue;
                            const std::uint32_t idx = static_cast<std::uint32_t>(iy * x.w() + ix);
                            if (p[idx] > best) {
                                best = p[idx];
                                arg = idx;
                            }
                        }
                    }
                    y[o] = best;
                    argmax_[o] = arg;
                }
            }
        }
    }
    return y;
}

Tensor MaxPool2d::backward(const Tensor& dy) {
    Tensor dx(in_n_, in_c_, in_h_, in_w_);
    const std::size_t out_plane = dy.plane_size();
    for (int b = 0; b < dy.n(); ++b) {
        for (int c = 0; c < dy.c(); ++c) {
            const double* g = dy.plane(b, c);
            double* d = dx.plane(b, c);
            const std::uint32_t* arg = argmax_.data() + (static_cast<std::size_t>(b) * dy.c() + c) * out_plane;
            for (std::size_t i = 0; i < out_plane; ++i) d[arg[i]] += g[i];
        }
    }
    return dx;
}

// --------------------------------------------------------- GlobalAvgPool

Tensor GlobalAvgPool::forward(const Tensor& x, Mode) {
    h_ = x.h();
    w_ = x.w();
    Tensor y(x.n(), x.c(), 1, 1);
    const std::size_t plane = x.plane_size();
    for (int b = 0; b < x.n(); ++b) {
        for (int c = 0; c < x.c(); ++c) {
            const double* p = x.plane(b, c);
            double s = 0.0;
            for (std::size_t i = 0; i < plane; ++i) s += p[i];
            y.at(b, c, 0, 0) = s / static_cast<double>(plane);
        }
    }
    return y;
}

Tensor GlobalAvgPool::backward(const Tensor& dy) {
    Tensor dx(dy.n(), dy.c(), h_, w_);
    const std::size_t plane = dx.plane_size();
    for (int b = 0; b < dy.n(); ++b) {
        for (int c = 0; c < dy.c(); ++c) {
            const double g = dy.at(b, c, 0, 0) / static_cast<double>(plane);
            double* d = dx.plane(b, c);
            std::fill_n(d, plane, g);
        }
    }
    return dx;
}

// ---------------------------------------------------------------- Linear

Linear::Linear(std::string name, int in_features, int out_features) : in_(in_features), out_(out_features) {
    weight_ = make_param(name + ".weight", ParamKind::linear_weight, out_features, in_features, 1, 1);
    bias_ = make_param(name + ".bias", ParamKind::bias, out_features, 1, 1, 1);
}

void Linear::collect(ParamList& out) {
    out.push_back(&weight_);
    out.push_back(&bias_);
}

Tensor Linear::forward(const Tensor& x, Mode) {
    const std::size_t features = x.size() / std::max(x.n(), 1);
    if (static_cast<int>(features) != in_)
        throw std::invalid_argument("linear: expected " + std::to_string(in_) + " features, got " +
                                    std::to_string(features));
    input_ = x;
    Tensor y(x.n(), out_, 1, 1);
    for (int b = 0; b < x.n(); ++b)
        for (int o = 0; o < out_; ++o) y.at(b, o, 0, 0) = bias_.value[o];
    kernels::gemm_nt(x.n(), out_, in_, x.data(), in_, weight_.value.data(), in_, y.data(), out_);
    return y;
}

Tensor Linear::backward(const Tensor& dy) {
    Tensor dx(input_.n(), input_.c(), input_.h(), input_.w());
    kernels::gemm_tn(out_, in_, dy.n(), dy.data(), out_, input_.data(), in_, weight_.grad.data(), in_);
    kernels::gemm_nn(dy.n(), in_, out_, dy.data(), out_, weight_.value.data(), in_, dx.data(), in_);
    for (int b = 0; b < dy.n(); ++b)
        for (int o = 0; o < out_; ++o) bias_.grad[o] += dy.at(b, o, 0, 0);
    return dx;
}

// ------------------------------------------------------------ Sequential

Tensor Sequential::forward(const Tensor& x, Mode mode) {
    Tensor h = x;
    for (auto& layer : layers_) h = layer->forward(h, mode);
    return h;
}

Tensor Sequential::backward(const Tensor& dy) {
    Tensor g = dy;
    for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) g = (*it)->backward(g);
    return g;
}

void Sequential::collect(ParamList& out) {
    for (auto& layer : layers_) layer->collect(out);
}

// --------------------------------------------------------- BasicResidual

BasicResidual::BasicResidual(const std::string& name, int in_ch, int out_ch, int stride) {
    body_.add<Conv2d>(name + ".conv1", in_ch, out_ch, 3, stride, 1, false);
    body_.add<BatchNorm2d>(name + ".bn1", out_ch);
    body_.add<ReLU>();
    body_.add<Conv2d>(name + ".conv2", out_ch, out_ch, 3, 1, 1, false);
    body_.add<BatchNorm2d>(name + ".bn2", out_ch);
    if (stride != 1 || in_ch != out_ch) {
        shortcut_.add<Conv2d>(name + ".proj", in_ch, out_ch, 1, stride, 0, false);
        shortcut_.add<BatchNorm2d>(name + ".proj_bn", out_ch);
    }
}

Tensor BasicResidual::forward(const Tensor& x, Mode mode) {
    Tensor sum = body_.forward(x, mode);
    const Tensor skip = shortcut_.size() > 0 ? shortcut_.forward(x, mode) : x;
    for (std::size_t i = 0; i < sum.size(); ++i) sum[i] += skip[i];
    return out_relu_.forward(sum, mode);
}

Tensor BasicResidual::backward(const Tensor& dy) {
    const Tensor g = out_relu_.backward(dy);
    Tensor dx = body_.backward(g);
    const Tensor dskip = shortcut_.size() > 0 ? shortcut_.backward(g) : g;
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dskip[i];
    return dx;
}

void BasicResidual::collect(ParamList& out) {
    body_.collect(out);
    shortcut_.collect(out);
}

// -------------------------------------------------------------- Upsample

Tensor upsample_bilinear(const Tensor& x, int out_h, int out_w) {
    const auto ry = lerp_table(x.h(), out_h);
    const auto rx = lerp_table(x.w(), out_w);
    Tensor y(x.n(), x.c(), out_h, out_w);
    for (int b = 0; b < x.n(); ++b) {
        for (int c = 0; c < x.c(); ++c) {
            const double* p = x.plane(b, c);
            double* out = y.plane(b, c);
            for (int oy = 0; oy < out_h; ++oy) {
                const double* r0 = p + static_cast<std::size_t>(ry[oy].i0) * x.w();
                const double* r1 = p + static_cast<std::size_t>(ry[oy].i1) * x.w();
                const double ty = ry[oy].t;
                for (int ox = 0; ox < out_w; ++ox) {
                    const auto& cx = rx[ox];
                    const double top = r0[cx.i0] + cx.t * (r0[cx.i1] - r0[cx.i0]);
                    const double bottom = r1[cx.i0] + cx.t * (r1[cx.i1] - r1[cx.i0]);
                    out[static_cast<std::size_t>(oy) * out_w + ox] = top + ty * (bottom - top);
                }
            }
        }
    }
    return y;
}

Tensor upsample_bilinear_backward(const Tensor& dy, int in_h, int in_w) {
    const auto ry = lerp_table(in_h, dy.h());
    const auto rx = lerp_table(in_w, dy.w());
    Tensor dx(dy.n(), dy.c(), in_h, in_w);
    for (int b = 0; b < dy.n(); ++b) {
        for (int c = 0; c < dy.c(); ++c) {
            const double* g = dy.plane(b, c);
            double* d = dx.plane(b, c);
            for (int oy = 0; oy < dy.h(); ++oy) {
                double* r0 = d + static_cast<std::size_t>(ry[oy].i0) * in_w;
                double* r1 = d + static_cast<std::size_t>(ry[oy].i1) * in_w;
                const double ty = ry[oy].t;
                for (int ox = 0; ox < dy.w(); ++ox) {
                    const auto& cx = rx[ox];
                    const double gv = g[static_cast<std::size_t>(oy) * dy.w() + ox];
                    const double gt = gv * (1.0 - ty);
                    const double gb = gv * ty;
                    r0[cx.i0] += gt * (1.0 - cx.t);
                    r0[cx.i1] += gt * cx.t;
                    r1[cx.i0] += gb * (1.0 - cx.t);
                    r1[cx.i1] += gb * cx.t;
                }
            }
        }
    }
    return dx;
}

double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

// ------------------------------------------------------------ parameters

namespace {

void reset_fixed(Param& p) {
    switch (p.kind) {
        case ParamKind::bias:
        case ParamKind::bn_shift:
        case ParamKind::running_mean: p.value.fill(0.0); break;
        case ParamKind::bn_scale:
        case ParamKind::running_var: p.value.fill(1.0); break;
        default: break;
    }
}

template <class StdFn>
void init_with(const ParamList& params, std::uint64_t seed, StdFn weight_std) {
    std::mt19937_64 rng(seed);
    for (Param* p : params) {
        p->grad = Tensor(p->value.n(), p->value.c(), p->value.h(), p->value.w());
        if (p->kind == ParamKind::conv_weight || p->kind == ParamKind::linear_weight) {
            std::normal_distribution<double> dist(0.0, weight_std(*p));
            for (double& v : p->value.vec()) v = dist(rng);
        } else {
            reset_fixed(*p);
        }
    }
}

}  // namespace

void init_params(const ParamList& params, std::uint64_t seed, double weight_std) {
    init_with(params, seed, [weight_std](const Param&) { return weight_std; });
}

void init_params_he(const ParamList& params, std::uint64_t seed) {
    init_with(params, seed, [](const Param& p) {
        const double fan_in = static_cast<double>(p.value.size()) / std::max(p.value.n(), 1);
        return std::sqrt(2.0 / fan_in);
    });
}

void zero_grads(const ParamList& params) {
    for (Param* p : params) p->grad.zero();
}

std::size_t count_scalars(const ParamList& params) {
    std::size_t n = 0;
    for (const Param* p : params) n += p->value.size();
    return n;
}

}  // namespace crackseg::nn
