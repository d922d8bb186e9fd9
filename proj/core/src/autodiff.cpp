#include "radiomap/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numbers>
#include <utility>

#include "radiomap/error.hpp"
#include "radiomap/parallel.hpp"

namespace radiomap {

namespace {

std::int64_t product(const std::vector<int>& dims) {
    std::int64_t n = 1;
    for (int d : dims) n *= d;
    return n;
}

int ceil_div(int a, int b) {
    return a >= 0 ? (a + b - 1) / b : -((-a) / b);
}

int floor_div(int a, int b) {
    return a >= 0 ? a / b : -((-a + b - 1) / b);
}

template <typename S>
void expect(bool ok, const char* what) {
    if (!ok) throw ValidationError(what);
}

} // namespace

template <typename S>
TensorT<S>::TensorT(std::vector<int> d) : dims(std::move(d)) {
    if (dims.empty() || dims.size() > 4) throw ValidationError("tensors have 1 to 4 dims");
    for (int e : dims) {
        if (e <= 0) throw ValidationError("tensor extents must be positive");
    }
    data.assign(static_cast<std::size_t>(product(dims)), S(0));
}

template <typename S>
TensorT<S> TensorT<S>::full(std::vector<int> d, S value) {
    TensorT t(std::move(d));
    std::fill(t.data.begin(), t.data.end(), value);
    return t;
}

template <typename S>
std::int64_t TensorT<S>::numel() const {
    return product(dims);
}

// ---- tape plumbing ---------------------------------------------------

template <typename S>
int TapeT<S>::track(T value, bool requires_grad) {
    Node node;
    node.requires_grad = requires_grad;
    if (requires_grad) {
        node.grad = T::zeros(value.dims);
        node.grad_alloc = true;
    }
    node.value = std::move(value);
    nodes_.push_back(std::move(node));
    return static_cast<int>(nodes_.size()) - 1;
}

template <typename S>
int TapeT<S>::result(T value, bool requires_grad) {
    return track(std::move(value), requires_grad);
}

template <typename S>
void TapeT<S>::check(int id) const {
    if (id < 0 || id >= static_cast<int>(nodes_.size())) {
        throw Error("tape node id out of range");
    }
}

template <typename S>
const TensorT<S>& TapeT<S>::value(int id) const {
    check(id);
    return nodes_[static_cast<std::size_t>(id)].value;
}

template <typename S>
bool TapeT<S>::requires_grad(int id) const {
    check(id);
    return nodes_[static_cast<std::size_t>(id)].requires_grad;
}

template <typename S>
const TensorT<S>& TapeT<S>::grad(int id) const {
    check(id);
    const Node& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.requires_grad) throw Error("gradient requested for a non-differentiable node");
    return n.grad;
}

template <typename S>
TensorT<S>& TapeT<S>::grad_buffer(int id) {
    return nodes_[static_cast<std::size_t>(id)].grad;
}

template <typename S>
void TapeT<S>::backward(int loss) {
    check(loss);
    Node& top = nodes_[static_cast<std::size_t>(loss)];
    if (top.value.numel() != 1) throw ValidationError("backward requires a scalar loss node");
    if (!top.requires_grad) throw ValidationError("loss does not depend on any parameter");
    top.grad.data[0] = S(1);
    for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) (*it)();
}

// ---- convolution -----------------------------------------------------

namespace {

struct ConvDims {
    int n, ci, h, w, co, k, ho, wo, stride, pad;
};

ConvDims conv_dims(const std::vector<int>& x, const std::vector<int>& wt, int stride, int pad,
                   bool depthwise) {
    if (x.size() != 4 || wt.size() != 4) throw ValidationError("conv expects 4-d input and weight");
    if (stride < 1) throw ValidationError("conv stride must be at least 1");
    if (pad < 0) throw ValidationError("conv padding must be non-negative");
    ConvDims d{};
    d.n = x[0];
    d.ci = x[1];
    d.h = x[2];
    d.w = x[3];
    d.co = wt[0];
    d.k = wt[2];
    d.stride = stride;
    d.pad = pad;
    if (wt[2] != wt[3]) throw ValidationError("conv kernels must be square");
    if (d.k % 2 != 1) throw ValidationError("conv kernels must have odd size");
    if (depthwise) {
        if (wt[1] != 1) throw ValidationError("depthwise weight must be [C,1,k,k]");
        if (d.co != d.ci) throw ValidationError("depthwise channel count mismatch");
    } else if (wt[1] != d.ci) {
        throw ValidationError("conv input channel mismatch");
    }
    d.ho = (d.h + 2 * pad - d.k) / stride + 1;
    d.wo = (d.w + 2 * pad - d.k) / stride + 1;
    if (d.ho <= 0 || d.wo <= 0) throw ValidationError("conv output would be empty");
    return d;
}

// y[n,co,oy,ox] += sum_{ci,ky,kx} w[co,ci,ky,kx] * x[n,ci,oy*s+ky-p,ox*s+kx-p]
// The inner loop runs over contiguous output columns.
template <typename S>
void conv_forward(const ConvDims& d, const S* x, const S* w, const S* b, S* y, bool depthwise) {
    const std::int64_t x_c = static_cast<std::int64_t>(d.h) * d.w;
    const std::int64_t y_c = static_cast<std::int64_t>(d.ho) * d.wo;
    parallel_for(static_cast<std::int64_t>(d.n) * d.co, [&](std::int64_t lo, std::int64_t hi) {
        for (std::int64_t job = lo; job < hi; ++job) {
            const int n = static_cast<int>(job / d.co);
            const int co = static_cast<int>(job % d.co);
            S* yp = y + (static_cast<std::int64_t>(n) * d.co + co) * y_c;
            const S bias = b != nullptr ? b[co] : S(0);
            std::fill(yp, yp + y_c, bias);
            const int ci_begin = depthwise ? co : 0;
            const int ci_end = depthwise ? co + 1 : d.ci;
            for (int ci = ci_begin; ci < ci_end; ++ci) {
                const S* xp = x + (static_cast<std::int64_t>(n) * d.ci + ci) * x_c;
                const S* wp =
                    w + ((static_cast<std::int64_t>(co) * (depthwise ? 1 : d.ci)) +
                         (depthwise ? 0 : ci)) *
                            d.k * d.k;
                for (int ky = 0; ky < d.k; ++ky) {
                    const int oy0 = std::max(0, ceil_div(d.pad - ky, d.stride));
                    const int oy1 =
                        std::min(d.ho, floor_div(d.h - 1 - ky + d.pad, d.stride) + 1);
                    for (int kx = 0; kx < d.k; ++kx) {
                        const S alpha = wp[ky * d.k + kx];
                        if (alpha == S(0)) continue;
                        const int ox0 = std::max(0, ceil_div(d.pad - kx, d.stride));
                        const int ox1 =
                            std::min(d.wo, floor_div(d.w - 1 - kx + d.pad, d.stride) + 1);
                        for (int oy = oy0; oy < oy1; ++oy) {
                            const int iy = oy * d.stride + ky - d.pad;
                            const S* xrow = xp + static_cast<std::int64_t>(iy) * d.w;
                            S* yrow = yp + static_cast<std::int64_t>(oy) * d.wo;
                            if (d.stride == 1) {
                                const S* xs = xrow + (kx - d.pad);
                                for (int ox = ox0; ox < ox1; ++ox) yrow[ox] += alpha * xs[ox];
                            } else {
                                for (int ox = ox0; ox < ox1; ++ox) {
                                    yrow[ox] += alpha * xrow[ox * d.stride + kx - d.pad];
                                }
                            }
                        }
                    }
                }
            }
        }
    });
}

// dx[n,ci,iy,ix] += w[co,ci,ky,kx] * dy[n,co,oy,ox]
template <typename S>
void conv_backward_input(const ConvDims& d, const S* w, const S* dy, S* dx, bool depthwise) {
    const std::int64_t x_c = static_cast<std::int64_t>(d.h) * d.w;
    const std::int64_t y_c = static_cast<std::int64_t>(d.ho) * d.wo;
    parallel_for(static_cast<std::int64_t>(d.n) * d.ci, [&](std::int64_t lo, std::int64_t hi) {
        for (std::int64_t job = lo; job < hi; ++job) {
            const int n = static_cast<int>(job / d.ci);
            const int ci = static_cast<int>(job % d.ci);
            S* dxp = dx + (static_cast<std::int64_t>(n) * d.ci + ci) * x_c;
            const int co_begin = depthwise ? ci : 0;
            const int co_end = depthwise ? ci + 1 : d.co;
            for (int co = co_begin; co < co_end; ++co) {
                const S* dyp = dy + (static_cast<std::int64_t>(n) * d.co + co) * y_c;
                const S* wp =
                    w + ((static_cast<std::int64_t>(co) * (depthwise ? 1 : d.ci)) +
                         (depthwise ? 0 : ci)) *
                            d.k * d.k;
                for (int ky = 0; ky < d.k; ++ky) {
                    const int oy0 = std::max(0, ceil_div(d.pad - ky, d.stride));
                    const int oy1 =
                        std::min(d.ho, floor_div(d.h - 1 - ky + d.pad, d.stride) + 1);
                    for (int kx = 0; kx < d.k; ++kx) {
                        const S alpha = wp[ky * d.k + kx];
                        if (alpha == S(0)) continue;
                        const int ox0 = std::max(0, ceil_div(d.pad - kx, d.stride));
                        const int ox1 =
                            std::min(d.wo, floor_div(d.w - 1 - kx + d.pad, d.stride) + 1);
                        for (int oy = oy0; oy < oy1; ++oy) {
                            const int iy = oy * d.stride + ky - d.pad;
                            S* dxrow = dxp + static_cast<std::int64_t>(iy) * d.w;
                            const S* dyrow = dyp + static_cast<std::int64_t>(oy) * d.wo;
                            if (d.stride == 1) {
                                S* xs = dxrow + (kx - d.pad);
                                for (int ox = ox0; ox < ox1; ++ox) xs[ox] += alpha * dyrow[ox];
                            } else {
                                for (int ox = ox0; ox < ox1; ++ox) {
                                    dxrow[ox * d.stride + kx - d.pad] += alpha * dyrow[ox];
                                }
                            }
                        }
                    }
                }
            }
        }
    });
}

// dw[co,ci,ky,kx] += x[n,ci,iy,ix] * dy[n,co,oy,ox]; db[co] += dy
template <typename S>
void conv_backward_weight(const ConvDims& d, const S* x, const S* dy, S* dw, S* db,
                          bool depthwise) {
    const std::int64_t x_c = static_cast<std::int64_t>(d.h) * d.w;
    const std::int64_t y_c = static_cast<std::int64_t>(d.ho) * d.wo;
    parallel_for(d.co, [&](std::int64_t lo, std::int64_t hi) {
        for (std::int64_t co = lo; co < hi; ++co) {
            if (db != nullptr) {
                double acc = 0.0;
                for (int n = 0; n < d.n; ++n) {
                    const S* dyp = dy + (static_cast<std::int64_t>(n) * d.co + co) * y_c;
                    for (std::int64_t i = 0; i < y_c; ++i) acc += static_cast<double>(dyp[i]);
                }
                db[co] += static_cast<S>(acc);
            }
            const int ci_begin = depthwise ? static_cast<int>(co) : 0;
            const int ci_end = depthwise ? static_cast<int>(co) + 1 : d.ci;
            for (int ci = ci_begin; ci < ci_end; ++ci) {
                S* dwp = dw + ((co * (depthwise ? 1 : d.ci)) + (depthwise ? 0 : ci)) * d.k * d.k;
                for (int ky = 0; ky < d.k; ++ky) {
                    const int oy0 = std::max(0, ceil_div(d.pad - ky, d.stride));
                    const int oy1 =
                        std::min(d.ho, floor_div(d.h - 1 - ky + d.pad, d.stride) + 1);
                    for (int kx = 0; kx < d.k; ++kx) {
                        const int ox0 = std::max(0, ceil_div(d.pad - kx, d.stride));
                        const int ox1 =
                            std::min(d.wo, floor_div(d.w - 1 - kx + d.pad, d.stride) + 1);
                        double acc = 0.0;
                        for (int n = 0; n < d.n; ++n) {
                            const S* xp = x + (static_cast<std::int64_t>(n) * d.ci + ci) * x_c;
                            const S* dyp = dy + (static_cast<std::int64_t>(n) * d.co + co) * y_c;
                            for (int oy = oy0; oy < oy1; ++oy) {
                                const int iy = oy * d.stride + ky - d.pad;
                                const S* xrow = xp + static_cast<std::int64_t>(iy) * d.w;
                                const S* dyrow = dyp + static_cast<std::int64_t>(oy) * d.wo;
                                if (d.stride == 1) {
                                    const S* xs = xrow + (kx - d.pad);
                                    for (int ox = ox0; ox < ox1; ++ox) {
                                        acc += static_cast<double>(xs[ox]) *
                                               static_cast<double>(dyrow[ox]);
                                    }
                                } else {
                                    for (int ox = ox0; ox < ox1; ++ox) {
                                        acc += static_cast<double>(
                                                   xrow[ox * d.stride + kx - d.pad]) *
                                               static_cast<double>(dyrow[ox]);
                                    }
                                }
                            }
                        }
                        dwp[ky * d.k + kx] += static_cast<S>(acc);
                    }
                }
            }
        }
    });
}

} // namespace

template <typename S>
int TapeT<S>::conv2d(int x, int w, int bias, int stride, int padding) {
    check(x);
    check(w);
    const T& xv = value(x);
    const T& wv = value(w);
    const ConvDims d = conv_dims(xv.dims, wv.dims, stride, padding, false);
    const T* bv = nullptr;
    if (bias >= 0) {
        check(bias);
        bv = &value(bias);
        expect<S>(bv->dims == std::vector<int>{d.co}, "conv bias must be [Cout]");
    }
    T y({d.n, d.co, d.ho, d.wo});
    conv_forward<S>(d, xv.data.data(), wv.data.data(), bv != nullptr ? bv->data.data() : nullptr,
                    y.data.data(), false);
    const bool rg = requires_grad(x) || requires_grad(w) || (bias >= 0 && requires_grad(bias));
    const int out = result(std::move(y), rg);
    if (rg) {
        add_op([this, x, w, bias, out, d]() {
            const S* dy = grad_buffer(out).data.data();
            if (nodes_[static_cast<std::size_t>(x)].requires_grad) {
                conv_backward_input<S>(d, value(w).data.data(), dy, grad_buffer(x).data.data(),
                                       false);
            }
            if (nodes_[static_cast<std::size_t>(w)].requires_grad) {
                S* db = nullptr;
                if (bias >= 0 && nodes_[static_cast<std::size_t>(bias)].requires_grad) {
                    db = grad_buffer(bias).data.data();
                }
                conv_backward_weight<S>(d, value(x).data.data(), dy,
                                        grad_buffer(w).data.data(), db, false);
            } else if (bias >= 0 && nodes_[static_cast<std::size_t>(bias)].requires_grad) {
                T scratch(value(w).dims);
                conv_backward_weight<S>(d, value(x).data.data(), dy, scratch.data.data(),
                                        grad_buffer(bias).data.data(), false);
            }
        });
    }
    return out;
}

template <typename S>
int TapeT<S>::depthwise_conv2d(int x, int w, int bias, int stride, int padding) {
    check(x);
    check(w);
    const T& xv = value(x);
    const T& wv = value(w);
    const ConvDims d = conv_dims(xv.dims, wv.dims, stride, padding, true);
    const T* bv = nullptr;
    if (bias >= 0) {
        check(bias);
        bv = &value(bias);
        expect<S>(bv->dims == std::vector<int>{d.co}, "conv bias must be [C]");
    }
    T y({d.n, d.co, d.ho, d.wo});
    conv_forward<S>(d, xv.data.data(), wv.data.data(), bv != nullptr ? bv->data.data() : nullptr,
                    y.data.data(), true);
    const bool rg = requires_grad(x) || requires_grad(w) || (bias >= 0 && requires_grad(bias));
    const int out = result(std::move(y), rg);
    if (rg) {
        add_op([this, x, w, bias, out, d]() {
            const S* dy = grad_buffer(out).data.data();
            if (nodes_[static_cast<std::size_t>(x)].requires_grad) {
                conv_backward_input<S>(d, value(w).data.data(), dy, grad_buffer(x).data.data(),
                                       true);
            }
            if (nodes_[static_cast<std::size_t>(w)].requires_grad) {
                S* db = nullptr;
                if (bias >= 0 && nodes_[static_cast<std::size_t>(bias)].requires_grad) {
                    db = grad_buffer(bias).data.data();
                }
                conv_backward_weight<S>(d, value(x).data.data(), dy,
                                        grad_buffer(w).data.data(), db, true);
            } else if (bias >= 0 && nodes_[static_cast<std::size_t>(bias)].requires_grad) {
                T scratch(value(w).dims);
                conv_backward_weight<S>(d, value(x).data.data(), dy, scratch.data.data(),
                                        grad_buffer(bias).data.data(), true);
            }
        });
    }
    return out;
}

template <typename S>
int TapeT<S>::linear(int x, int w, int bias) {
    check(x);
    check(w);
    const T& xv = value(x);
    const T& wv = value(w);
    expect<S>(xv.ndim() == 3, "linear expects [N,T,Din]");
    expect<S>(wv.ndim() == 2, "linear weight must be [Dout,Din]");
    const int n = xv.dim(0), t = xv.dim(1), din = xv.dim(2);
    const int dout = wv.dim(0);
    expect<S>(wv.dim(1) == din, "linear input width mismatch");
    const T* bv = nullptr;
    if (bias >= 0) {
        check(bias);
        bv = &value(bias);
        expect<S>(bv->dims == std::vector<int>{dout}, "linear bias must be [Dout]");
    }
    T y({n, t, dout});
    {
        const S* xp = xv.data.data();
        const S* wp = wv.data.data();
        S* yp = y.data.data();
        parallel_for(static_cast<std::int64_t>(n) * t, [&](std::int64_t lo, std::int64_t hi) {
            for (std::int64_t row = lo; row < hi; ++row) {
                const S* xr = xp + row * din;
                S* yr = yp + row * dout;
                for (int o = 0; o < dout; ++o) {
                    const S* wr = wp + static_cast<std::int64_t>(o) * din;
                    S acc = bv != nullptr ? bv->data[static_cast<std::size_t>(o)] : S(0);
                    for (int i = 0; i < din; ++i) acc += xr[i] * wr[i];
                    yr[o] = acc;
                }
            }
        });
    }
    const bool rg = requires_grad(x) || requires_grad(w) || (bias >= 0 && requires_grad(bias));
    const int out = result(std::move(y), rg);
    if (rg) {
        add_op([this, x, w, bias, out, n, t, din, dout]() {
            const S* dy = grad_buffer(out).data.data();
            const std::int64_t rows = static_cast<std::int64_t>(n) * t;
            if (nodes_[static_cast<std::size_t>(x)].requires_grad) {
                const S* wp = value(w).data.data();
                S* dx = grad_buffer(x).data.data();
                parallel_for(rows, [&](std::int64_t lo, std::int64_t hi) {
                    for (std::int64_t row = lo; row < hi; ++row) {
                        const S* dyr = dy + row * dout;
                        S* dxr = dx + row * din;
                        for (int o = 0; o < dout; ++o) {
                            const S g = dyr[o];
                            if (g == S(0)) continue;
                            const S* wr = wp + static_cast<std::int64_t>(o) * din;
                            for (int i = 0; i < din; ++i) dxr[i] += g * wr[i];
                        }
                    }
                });
            }
            if (nodes_[static_cast<std::size_t>(w)].requires_grad) {
                const S* xp = value(x).data.data();
                S* dw = grad_buffer(w).data.data();
                for (std::int64_t row = 0; row < rows; ++row) {
                    const S* dyr = dy + row * dout;
                    const S* xr = xp + row * din;
                    for (int o = 0; o < dout; ++o) {
                        const S g = dyr[o];
                        if (g == S(0)) continue;
                        S* dwr = dw + static_cast<std::int64_t>(o) * din;
                        for (int i = 0; i < din; ++i) dwr[i] += g * xr[i];
                    }
                }
            }
            if (bias >= 0 && nodes_[static_cast<std::size_t>(bias)].requires_grad) {
                S* db = grad_buffer(bias).data.data();
                for (std::int64_t row = 0; row < rows; ++row) {
                    const S* dyr = dy + row * dout;
                    for (int o = 0; o < dout; ++o) db[o] += dyr[o];
                }
            }
        });
    }
    return out;
}

// ---- pointwise -------------------------------------------------------

template <typename S>
int TapeT<S>::gelu(int x) {
    check(x);
    const T& xv = value(x);
    T y(xv.dims);
    constexpr double inv_sqrt2 = 0.70710678118654752440;
    for (std::size_t i = 0; i < xv.data.size(); ++i) {
        const double v = static_cast<double>(xv.data[i]);
        y.data[i] = static_cast<S>(0.5 * v * (1.0 + std::erf(v * inv_sqrt2)));
    }
    const bool rg = requires_grad(x);
    const int out = result(std::move(y), rg);
    if (rg) {
        add_op([this, x, out]() {
            constexpr double inv_sqrt2pi = 0.39894228040143267794;
            const T& xv2 = value(x);
            const S* dy = grad_buffer(out).data.data();
            S* dx = grad_buffer(x).data.data();
            for (std::size_t i = 0; i < xv2.data.size(); ++i) {
                const double v = static_cast<double>(xv2.data[i]);
                const double cdf = 0.5 * (1.0 + std::erf(v * 0.70710678118654752440));
                const double pdf = inv_sqrt2pi * std::exp(-0.5 * v * v);
                dx[i] += static_cast<S>((cdf + v * pdf) * static_cast<double>(dy[i]));
            }
        });
    }
    return out;
}

template <typename S>
int TapeT<S>::sigmoid(int x) {
    check(x);
    const T& xv = value(x);
    T y(xv.dims);
    for (std::size_t i = 0; i < xv.data.size(); ++i) {
        y.data[i] = static_cast<S>(1.0 / (1.0 + std::exp(-static_cast<double>(xv.data[i]))));
    }
    const bool rg = requires_grad(x);
    const int out = result(std::move(y), rg);
    if (rg) {
        add_op([this, x, out]() {
            const T& yv = value(out);
            const S* dy = grad_buffer(out).data.data();
            S* dx = grad_buffer(x).data.data();
            for (std::size_t i = 0; i < yv.data.size(); ++i) {
                dx[i] += dy[i] * yv.data[i] * (S(1) - yv.data[i]);
            }
        });
    }
    return out;
}

template <typename S>
int TapeT<S>::group_norm(int x, int gamma, int beta, int groups, double eps) {
    check(x);
    check(gamma);
    check(beta);
    const T& xv = value(x);
    expect<S>(xv.ndim() == 4, "group_norm expects [N,C,H,W]");
    const int n = xv.dim(0), c = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
    expect<S>(groups >= 1 && c % groups == 0, "group count must divide channels");
    expect<S>(value(gamma).dims == std::vector<int>{c}, "group_norm gamma must be [C]");
    expect<S>(value(beta).dims == std::vector<int>{c}, "group_norm beta must be [C]");
    const int cg = c / groups;
    const std::int64_t plane = static_cast<std::int64_t>(h) * w;
    const std::int64_t gsize = cg * plane;

    T y(xv.dims);
    T xhat(xv.dims);                 // saved for backward
    T inv_std({n, groups});          // "
    const S* gam = value(gamma).data.data();
    const S* bet = value(beta).data.data();
    parallel_for(static_cast<std::int64_t>(n) * groups, [&](std::int64_t lo, std::int64_t hi) {
        for (std::int64_t job = lo; job < hi; ++job) {
            const int ni = static_cast<int>(job / groups);
            const int g = static_cast<int>(job % groups);
            const std::int64_t base = (static_cast<std::int64_t>(ni) * c + g * cg) * plane;
            const S* xp = xv.data.data() + base;
            double mean = 0.0;
            for (std::int64_t i = 0; i < gsize; ++i) mean += static_cast<double>(xp[i]);
            mean /= static_cast<double>(gsize);
            double var = 0.0;
            for (std::int64_t i = 0; i < gsize; ++i) {
                const double t = static_cast<double>(xp[i]) - mean;
                var += t * t;
            }
            var /= static_cast<double>(gsize);
            const double istd = 1.0 / std::sqrt(var + eps);
            inv_std.data[static_cast<std::size_t>(job)] = static_cast<S>(istd);
            S* xh = xhat.data.data() + base;
            S* yp = y.data.data() + base;
            for (int cc = 0; cc < cg; ++cc) {
                const double gm = static_cast<double>(gam[g * cg + cc]);
                const double bt = static_cast<double>(bet[g * cg + cc]);
                for (std::int64_t i = 0; i < plane; ++i) {
                    const std::int64_t at = cc * plane + i;
                    const double nv = (static_cast<double>(xp[at]) - mean) * istd;
                    xh[at] = static_cast<S>(nv);
                    yp[at] = static_cast<S>(nv * gm + bt);
                }
            }
        }
    });

    const bool rg = requires_grad(x) || requires_grad(gamma) || requires_grad(beta);
    const int out = result(std::move(y), rg);
    if (rg) {
        auto xh = std::make_shared<T>(std::move(xhat));
        auto istd = std::make_shared<T>(std::move(inv_std));
        add_op([this, x, gamma, beta, out, n, c, groups, cg, plane, gsize, xh, istd]() {
            const S* dy = grad_buffer(out).data.data();
            const S* gam2 = value(gamma).data.data();
            if (nodes_[static_cast<std::size_t>(gamma)].requires_grad) {
                S* dg = grad_buffer(gamma).data.data();
                for (int ni = 0; ni < n; ++ni) {
                    for (int cc = 0; cc < c; ++cc) {
                        const std::int64_t base = (static_cast<std::int64_t>(ni) * c + cc) * plane;
                        double acc = 0.0;
                        for (std::int64_t i = 0; i < plane; ++i) {
                            acc += static_cast<double>(dy[base + i]) *
                                   static_cast<double>(xh->data[static_cast<std::size_t>(base + i)]);
                        }
                        dg[cc] += static_cast<S>(acc);
                    }
                }
            }
            if (nodes_[static_cast<std::size_t>(beta)].requires_grad) {
                S* db = grad_buffer(beta).data.data();
                for (int ni = 0; ni < n; ++ni) {
                    for (int cc = 0; cc < c; ++cc) {
                        const std::int64_t base = (static_cast<std::int64_t>(ni) * c + cc) * plane;
                        double acc = 0.0;
                        for (std::int64_t i = 0; i < plane; ++i) {
                            acc += static_cast<double>(dy[base + i]);
                        }
                        db[cc] += static_cast<S>(acc);
                    }
                }
            }
            if (nodes_[static_cast<std::size_t>(x)].requires_grad) {
                S* dx = grad_buffer(x).data.data();
                parallel_for(static_cast<std::int64_t>(n) * groups,
                             [&](std::int64_t lo, std::int64_t hi) {
                    for (std::int64_t job = lo; job < hi; ++job) {
                        const int ni = static_cast<int>(job / groups);
                        const int g = static_cast<int>(job % groups);
                        const std::int64_t base =
                            (static_cast<std::int64_t>(ni) * c + g * cg) * plane;
                        const double istd_v =
                            static_cast<double>(istd->data[static_cast<std::size_t>(job)]);
                        // dxhat = dy * gamma; dx = istd*(dxhat - mean(dxhat)
                        //        - xhat * mean(dxhat*xhat))
                        double sum_dxh = 0.0;
                        double sum_dxh_xh = 0.0;
                        for (int cc = 0; cc < cg; ++cc) {
                            const double gm = static_cast<double>(gam2[g * cg + cc]);
                            for (std::int64_t i = 0; i < plane; ++i) {
                                const std::int64_t at = base + cc * plane + i;
                                const double dxh = static_cast<double>(dy[at]) * gm;
                                sum_dxh += dxh;
                                sum_dxh_xh +=
                                    dxh * static_cast<double>(xh->data[static_cast<std::size_t>(at)]);
                            }
                        }
                        const double mean_dxh = sum_dxh / static_cast<double>(gsize);
                        const double mean_dxh_xh = sum_dxh_xh / static_cast<double>(gsize);
                        for (int cc = 0; cc < cg; ++cc) {
                            const double gm = static_cast<double>(gam2[g * cg + cc]);
                            for (std::int64_t i = 0; i < plane; ++i) {
                                const std::int64_t at = base + cc * plane + i;
                                const double dxh = static_cast<double>(dy[at]) * gm;
                                const double xhv =
                                    static_cast<double>(xh->data[static_cast<std::size_t>(at)]);
                                dx[at] += static_cast<S>(
                                    istd_v * (dxh - mean_dxh - xhv * mean_dxh_xh));
                            }
                        }
                    }
                });
            }
        });
    }
    return out;
}

// ---- shape ops ---------------------------------------------------------

template <typename S>
int TapeT<S>::upsample_nearest(int x, int factor) {
    check(x);
    expect<S>(factor >= 1, "upsample factor must be at least 1");
    const T& xv = value(x);
    expect<S>(xv.ndim() == 4, "upsample expects [N,C,H,W]");
    const int n = xv.dim(0), c = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
    T y({n, c, h * factor, w * factor});
    const int wo = w * factor;
    for (std::int64_t nc = 0; nc < static_cast<std::int64_t>(n) * c; ++nc) {
        const S* xp = xv.data.data() + nc * h * w;
        S* yp = y.data.data() + nc * static_cast<std::int64_t>(h) * factor * wo;
        for (int oy = 0; oy < h * factor; ++oy) {
            const S* xrow = xp + static_cast<std::int64_t>(oy / factor) * w;
            S* yrow = yp + static_cast<std::int64_t>(oy) * wo;
            for (int ox = 0; ox < wo; ++ox) yrow[ox] = xrow[ox / factor];
        }
    }
    const bool rg = requires_grad(x);
    const int out = result(std::move(y), rg);
    if (rg) {
        add_op([this, x, out, n, c, h, w, factor]() {
            const S* dy = grad_buffer(out).data.data();
            S* dx = grad_buffer(x).data.data();
            const int wo = w * factor;
            for (std::int64_t nc = 0; nc < static_cast<std::int64_t>(n) * c; ++nc) {
                S* dxp = dx + nc * h * w;
                const S* dyp = dy + nc * static_cast<std::int64_t>(h) * factor * wo;
                for (int oy = 0; oy < h * factor; ++oy) {
                    S* dxrow = dxp + static_cast<std::int64_t>(oy / factor) * w;
                    const S* dyrow = dyp + static_cast<std::int64_t>(oy) * wo;
                    for (int ox = 0; ox < wo; ++ox) dxrow[ox / factor] += dyrow[ox];
                }
            }
        });
    }
    return out;
}

template <typename S>
int TapeT<S>::avg_pool(int x, int kernel, int stride) {
    check(x);
    expect<S>(kernel >= 1 && stride >= 1, "avg_pool kernel and stride must be at least 1");
    const T& xv = value(x);
    expect<S>(xv.ndim() == 4, "avg_pool expects [N,C,H,W]");
    const int n = xv.dim(0), c = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
    expect<S>(h >= kernel && w >= kernel, "avg_pool kernel larger than input");
    const int ho = (h - kernel) / stride + 1;
    const int wo = (w - kernel) / stride + 1;
    const S inv = S(1) / static_cast<S>(kernel * kernel);
    T y({n, c, ho, wo});
    for (std::int64_t nc = 0; nc < static_cast<std::int64_t>(n) * c; ++nc) {
        const S* xp = xv.data.data() + nc * h * w;
        S* yp = y.data.data() + nc * static_cast<std::int64_t>(ho) * wo;
        for (int oy = 0; oy < ho; ++oy) {
            for (int ox = 0; ox < wo; ++ox) {
                S acc = S(0);
                for (int ky = 0; ky < kernel; ++ky) {
                    const S* xrow = xp + static_cast<std::int64_t>(oy * stride + ky) * w;
                    for (int kx = 0; kx < kernel; ++kx) acc += xrow[ox * stride + kx];
                }
                yp[static_cast<std::int64_t>(oy) * wo + ox] = acc * inv;
            }
        }
    }
    const bool rg = requires_grad(x);
    const int out = result(std::move(y), rg);
    if (rg) {
        add_op([this, x, out, n, c, h, w, ho, wo, kernel, stride, inv]() {
            const S* dy = grad_buffer(out).data.data();
            S* dx = grad_buffer(x).data.data();
            for (std::int64_t nc = 0; nc < static_cast<std::int64_t>(n) * c; ++nc) {
                S* dxp = dx + nc * h * w;
                const S* dyp = dy + nc * static_cast<std::int64_t>(ho) * wo;
                for (int oy = 0; oy < ho; ++oy) {
                    for (int ox = 0; ox < wo; ++ox) {
                        const S g = dyp[static_cast<std::int64_t>(oy) * wo + ox] * inv;
                        for (int ky = 0; ky < kernel; ++ky) {
                            S* dxrow = dxp + static_cast<std::int64_t>(oy * stride + ky) * w;
                            for (int kx = 0; kx < kernel; ++kx) dxrow[ox * stride + kx] += g;
                        }
                    }
                }
            }
        });
    }
    return out;
}

template <typename S>
int TapeT<S>::global_avg_pool(int x) {
    check(x);
    const T& xv = value(x);
    expect<S>(xv.ndim() == 4, "global_avg_pool expects [N,C,H,W]");
    const int n = xv.dim(0), c = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
    const std::int64_t plane = static_cast<std::int64_t>(h) * w;
    T y({n, c, 1, 1});
    for (std::int64_t nc = 0; nc < static_cast<std::int64_t>(n) * c; ++nc) {
        double acc = 0.0;
        const S* xp = xv.data.data() + nc * plane;
        for (std::int64_t i = 0; i < plane; ++i) acc += static_cast<double>(xp[i]);
        y.data[static_cast<std::size_t>(nc)] = static_cast<S>(acc / static_cast<double>(plane));
    }
    const bool rg = requires_grad(x);
    const int out = result(std::move(y), rg);
    if (rg) {
        add_op([this, x, out, n, c, plane]() {
            const S* dy = grad_buffer(out).data.data();
            S* dx = grad_buffer(x).data.data();
            for (std::int64_t nc = 0; nc < static_cast<std::int64_t>(n) * c; ++nc) {
                const S g = dy[nc] / static_cast<S>(plane);
                S* dxp = dx + nc * plane;
                for (std::int64_t i = 0; i < plane; ++i) dxp[i] += g;
            }
        });
    }
    return out;
}

template <typename S>
int TapeT<S>::concat_channels(int a, int b) {
    check(a);
    check(b);
    const T& av = value(a);
    const T& bv = value(b);
    expect<S>(av.ndim() == 4 && bv.ndim() == 4, "concat_channels expects [N,C,H,W]");
    expect<S>(av.dim(0) == bv.dim(0) && av.dim(2) == bv.dim(2) && av.dim(3) == bv.dim(3),
              "concat_channels inputs must share batch and spatial dims");
    const int n = av.dim(0), ca = av.dim(1), cb = bv.dim(1), h = av.dim(2), w = av.dim(3);
    const std::int64_t plane = static_cast<std::int64_t>(h) * w;
    T y({n, ca + cb, h, w});
    for (int ni = 0; ni < n; ++ni) {
        std::copy_n(av.data.data() + static_cast<std::int64_t>(ni) * ca * plane, ca * plane,
                    y.data.data() + static_cast<std::int64_t>(ni) * (ca + cb) * plane);
        std::copy_n(bv.data.data() + static_cast<std::int64_t>(ni) * cb * plane, cb * plane,
                    y.data.data() + static_cast<std::int64_t>(ni) * (ca + cb) * plane + ca * plane);
    }
    const bool rg = requires_grad(a) || requires_grad(b);
    const int out = result(std::move(y), rg);
    if (rg) {
        add_op([this, a, b, out, n, ca, cb, plane]() {
            const S* dy = grad_buffer(out).data.data();
            for (int ni = 0; ni < n; ++ni) {
                const S* dyp = dy + static_cast<std::int64_t>(ni) * (ca + cb) * plane;
                if (nodes_[static_cast<std::size_t>(a)].requires_grad) {
                    S* da = grad_buffer(a).data.data() + static_cast<std::int64_t>(ni) * ca * plane;
                    for (std::int64_t i = 0; i < ca * plane; ++i) da[i] += dyp[i];
                }
                if (nodes_[static_cast<std::size_t>(b)].requires_grad) {
                    S* db = grad_buffer(b).data.data() + static_cast<std::int64_t>(ni) * cb * plane;
                    for (std::int64_t i = 0; i < cb * plane; ++i) db[i] += dyp[ca * plane + i];
                }
            }
        });
    }
    return out;
}

// ---- arithmetic --------------------------------------------------------

template <typename S>
int TapeT<S>::add(int a, int b) {
    check(a);
    check(b);
    const T& av = value(a);
    const T& bv = value(b);
    expect<S>(av.dims == bv.dims, "add requires matching shapes");
    T y(av.dims);
    for (std::size_t i = 0; i < y.data.size(); ++i) y.data[i] = av.data[i] + bv.data[i];
    const bool rg = requires_grad(a) || requires_grad(b);
    const int out = result(std::move(y), rg);
    if (rg) {
        add_op([this, a, b, out]() {
            const S* dy = grad_buffer(out).data.data();
            const std::size_t m = value(out).data.size();
            if (nodes_[static_cast<std::size_t>(a)].requires_grad) {
                S* da = grad_buffer(a).data.data();
                for (std::size_t i = 0; i < m; ++i) da[i] += dy[i];
            }
            if (nodes_[static_cast<std::size_t>(b)].requires_grad) {
                S* db = grad_buffer(b).data.data();
                for (std::size_t i = 0; i < m; ++i) db[i] += dy[i];
            }
        });
    }
    return out;
}

template <typename S>
int TapeT<S>::mul(int a, int b) {
    check(a);
    check(b);
    const T& av = value(a);
    const T& bv = value(b);
    expect<S>(av.dims == bv.dims, "mul requires matching shapes");
    T y(av.dims);
    for (std::size_t i = 0; i < y.data.size(); ++i) y.data[i] = av.data[i] * bv.data[i];
    const bool rg = requires_grad(a) || requires_grad(b);
    const int out = result(std::move(y), rg);
    if (rg) {
        add_op([this, a, b, out]() {
            const S* dy = grad_buffer(out).data.data();
            const std::size_t m = value(out).data.size();
            if (nodes_[static_cast<std::size_t>(a)].requires_grad) {
                S* da = grad_buffer(a).data.data();
                const S* bp = value(b).data.data();
                for (std::size_t i = 0; i < m; ++i) da[i] += dy[i] * bp[i];
            }
            if (nodes_[static_cast<std::size_t>(b)].requires_grad) {
                S* db = grad_buffer(b).data.data();
                const S* ap = value(a).data.data();
                for (std::size_t i = 0; i < m; ++i) db[i] += dy[i] * ap[i];
            }
        });
    }
    return out;
}

template <typename S>
int TapeT<S>::affine(int x, double mul_c, double add_c) {
    check(x);
    const T& xv = value(x);
    T y(xv.dims);
    const S m = static_cast<S>(mul_c);
    const S c = static_cast<S>(add_c);
    for (std::size_t i = 0; i < y.data.size(); ++i) y.data[i] = xv.data[i] * m + c;
    const bool rg = requires_grad(x);
    const int out = result(std::move(y), rg);
    if (rg) {
        add_op([this, x, out, m]() {
            const S* dy = grad_buffer(out).data.data();
            S* dx = grad_buffer(x).data.data();
            const std::size_t sz = value(out).data.size();
            for (std::size_t i = 0; i < sz; ++i) dx[i] += dy[i] * m;
        });
    }
    return out;
}

template <typename S>
int TapeT<S>::clamp01(int x) {
    check(x);
    const T& xv = value(x);
    T y(xv.dims);
    for (std::size_t i = 0; i < y.data.size(); ++i) {
        y.data[i] = std::min(std::max(xv.data[i], S(0)), S(1));
    }
    const bool rg = requires_grad(x);
    const int out = result(std::move(y), rg);
    if (rg) {
        add_op([this, x, out]() {
            const T& xv2 = value(x);
            const S* dy = grad_buffer(out).data.data();
            S* dx = grad_buffer(x).data.data();
            for (std::size_t i = 0; i < xv2.data.size(); ++i) {
                if (xv2.data[i] >= S(0) && xv2.data[i] <= S(1)) dx[i] += dy[i];
            }
        });
    }
    return out;
}

template <typename S>
int TapeT<S>::scale_channels(int x, int s) {
    check(x);
    check(s);
    const T& xv = value(x);
    const T& sv = value(s);
    expect<S>(xv.ndim() == 4, "scale_channels expects [N,C,H,W]");
    expect<S>(sv.dims == std::vector<int>({xv.dim(0), xv.dim(1), 1, 1}),
              "scale must be [N,C,1,1]");
    const int n = xv.dim(0), c = xv.dim(1);
    const std::int64_t plane = static_cast<std::int64_t>(xv.dim(2)) * xv.dim(3);
    T y(xv.dims);
    for (std::int64_t nc = 0; nc < static_cast<std::int64_t>(n) * c; ++nc) {
        const S g = sv.data[static_cast<std::size_t>(nc)];
        const S* xp = xv.data.data() + nc * plane;
        S* yp = y.data.data() + nc * plane;
        for (std::int64_t i = 0; i < plane; ++i) yp[i] = xp[i] * g;
    }
    const bool rg = requires_grad(x) || requires_grad(s);
    const int out = result(std::move(y), rg);
    if (rg) {
        add_op([this, x, s, out, n, c, plane]() {
            const S* dy = grad_buffer(out).data.data();
            if (nodes_[static_cast<std::size_t>(x)].requires_grad) {
                S* dx = grad_buffer(x).data.data();
                const S* sp = value(s).data.data();
                for (std::int64_t nc = 0; nc < static_cast<std::int64_t>(n) * c; ++nc) {
                    const S g = sp[nc];
                    const S* dyp = dy + nc * plane;
                    S* dxp = dx + nc * plane;
                    for (std::int64_t i = 0; i < plane; ++i) dxp[i] += dyp[i] * g;
                }
            }
            if (nodes_[static_cast<std::size_t>(s)].requires_grad) {
                S* ds = grad_buffer(s).data.data();
                const S* xp = value(x).data.data();
                for (std::int64_t nc = 0; nc < static_cast<std::int64_t>(n) * c; ++nc) {
                    double acc = 0.0;
                    const S* dyp = dy + nc * plane;
                    const S* xpp = xp + nc * plane;
                    for (std::int64_t i = 0; i < plane; ++i) {
                        acc += static_cast<double>(dyp[i]) * static_cast<double>(xpp[i]);
                    }
                    ds[nc] += static_cast<S>(acc);
                }
            }
        });
    }
    return out;
}

// ---- attention ingredients ----------------------------------------------

template <typename S>
int TapeT<S>::matmul(int a, int b) {
    check(a);
    check(b);
    const T& av = value(a);
    const T& bv = value(b);
    expect<S>(av.ndim() == 3 && bv.ndim() == 3, "matmul expects [N,T,K] and [N,K,U]");
    expect<S>(av.dim(0) == bv.dim(0) && av.dim(2) == bv.dim(1), "matmul inner dims mismatch");
    const int n = av.dim(0), t = av.dim(1), k = av.dim(2), u = bv.dim(2);
    T y({n, t, u});
    for (int ni = 0; ni < n; ++ni) {
        const S* ap = av.data.data() + static_cast<std::int64_t>(ni) * t * k;
        const S* bp = bv.data.data() + static_cast<std::int64_t>(ni) * k * u;
        S* yp = y.data.data() + static_cast<std::int64_t>(ni) * t * u;
        for (int ti = 0; ti < t; ++ti) {
            S* yr = yp + static_cast<std::int64_t>(ti) * u;
            for (int ki = 0; ki < k; ++ki) {
                const S alpha = ap[static_cast<std::int64_t>(ti) * k + ki];
                if (alpha == S(0)) continue;
                const S* br = bp + static_cast<std::int64_t>(ki) * u;
                for (int ui = 0; ui < u; ++ui) yr[ui] += alpha * br[ui];
            }
        }
    }
    const bool rg = requires_grad(a) || requires_grad(b);
    const int out = result(std::move(y), rg);
    if (rg) {
        add_op([this, a, b, out, n, t, k, u]() {
            const S* dy = grad_buffer(out).data.data();
            if (nodes_[static_cast<std::size_t>(a)].requires_grad) {
                S* da = grad_buffer(a).data.data();
                const S* bp = value(b).data.data();
                for (int ni = 0; ni < n; ++ni) {
                    const S* dyp = dy + static_cast<std::int64_t>(ni) * t * u;
                    const S* bb = bp + static_cast<std::int64_t>(ni) * k * u;
                    S* dap = da + static_cast<std::int64_t>(ni) * t * k;
                    for (int ti = 0; ti < t; ++ti) {
                        for (int ki = 0; ki < k; ++ki) {
                            S acc = S(0);
                            const S* dyr = dyp + static_cast<std::int64_t>(ti) * u;
                            const S* br = bb + static_cast<std::int64_t>(ki) * u;
                            for (int ui = 0; ui < u; ++ui) acc += dyr[ui] * br[ui];
                            dap[static_cast<std::int64_t>(ti) * k + ki] += acc;
                        }
                    }
                }
            }
            if (nodes_[static_cast<std::size_t>(b)].requires_grad) {
                S* db = grad_buffer(b).data.data();
                const S* ap = value(a).data.data();
                for (int ni = 0; ni < n; ++ni) {
                    const S* dyp = dy + static_cast<std::int64_t>(ni) * t * u;
                    const S* aa = ap + static_cast<std::int64_t>(ni) * t * k;
                    S* dbp = db + static_cast<std::int64_t>(ni) * k * u;
                    for (int ti = 0; ti < t; ++ti) {
                        const S* dyr = dyp + static_cast<std::int64_t>(ti) * u;
                        for (int ki = 0; ki < k; ++ki) {
                            const S alpha = aa[static_cast<std::int64_t>(ti) * k + ki];
                            if (alpha == S(0)) continue;
                            S* dbr = dbp + static_cast<std::int64_t>(ki) * u;
                            for (int ui = 0; ui < u; ++ui) dbr[ui] += alpha * dyr[ui];
                        }
                    }
                }
            }
        });
    }
    return out;
}

template <typename S>
int TapeT<S>::matmul_nt(int a, int b) {
    check(a);
    check(b);
    const T& av = value(a);
    const T& bv = value(b);
    expect<S>(av.ndim() == 3 && bv.ndim() == 3, "matmul_nt expects [N,T,K] and [N,U,K]");
    expect<S>(av.dim(0) == bv.dim(0) && av.dim(2) == bv.dim(2), "matmul_nt inner dims mismatch");
    const int n = av.dim(0), t = av.dim(1), k = av.dim(2), u = bv.dim(1);
    T y({n, t, u});
    for (int ni = 0; ni < n; ++ni) {
        const S* ap = av.data.data() + static_cast<std::int64_t>(ni) * t * k;
        const S* bp = bv.data.data() + static_cast<std::int64_t>(ni) * u * k;
        S* yp = y.data.data() + static_cast<std::int64_t>(ni) * t * u;
        for (int ti = 0; ti < t; ++ti) {
            const S* ar = ap + static_cast<std::int64_t>(ti) * k;
            S* yr = yp + static_cast<std::int64_t>(ti) * u;
            for (int ui = 0; ui < u; ++ui) {
                const S* br = bp + static_cast<std::int64_t>(ui) * k;
                S acc = S(0);
                for (int ki = 0; ki < k; ++ki) acc += ar[ki] * br[ki];
                yr[ui] = acc;
            }
        }
    }
    const bool rg = requires_grad(a) || requires_grad(b);
    const int out = result(std::move(y), rg);
    if (rg) {
        add_op([this, a, b, out, n, t, k, u]() {
            const S* dy = grad_buffer(out).data.data();
            if (nodes_[static_cast<std::size_t>(a)].requires_grad) {
                S* da = grad_buffer(a).data.data();
                const S* bp = value(b).data.data();
                for (int ni = 0; ni < n; ++ni) {
                    const S* dyp = dy + static_cast<std::int64_t>(ni) * t * u;
                    const S* bb = bp + static_cast<std::int64_t>(ni) * u * k;
                    S* dap = da + static_cast<std::int64_t>(ni) * t * k;
                    for (int ti = 0; ti < t; ++ti) {
                        S* dar = dap + static_cast<std::int64_t>(ti) * k;
                        const S* dyr = dyp + static_cast<std::int64_t>(ti) * u;
                        for (int ui = 0; ui < u; ++ui) {
                            const S g = dyr[ui];
                            if (g == S(0)) continue;
                            const S* br = bb + static_cast<std::int64_t>(ui) * k;
                            for (int ki = 0; ki < k; ++ki) dar[ki] += g * br[ki];
                        }
                    }
                }
            }
            if (nodes_[static_cast<std::size_t>(b)].requires_grad) {
                S* db = grad_buffer(b).data.data();
                const S* ap = value(a).data.data();
                for (int ni = 0; ni < n; ++ni) {
                    const S* dyp = dy + static_cast<std::int64_t>(ni) * t * u;
                    const S* aa = ap + static_cast<std::int64_t>(ni) * t * k;
                    S* dbp = db + static_cast<std::int64_t>(ni) * u * k;
                    for (int ti = 0; ti < t; ++ti) {
                        const S* dyr = dyp + static_cast<std::int64_t>(ti) * u;
                        const S* ar = aa + static_cast<std::int64_t>(ti) * k;
                        for (int ui = 0; ui < u; ++ui) {
                            const S g = dyr[ui];
                            if (g == S(0)) continue;
                            S* dbr = dbp + static_cast<std::int64_t>(ui) * k;
                            for (int ki = 0; ki < k; ++ki) dbr[ki] += g * ar[ki];
                        }
                    }
                }
            }
        });
    }
    return out;
}

template <typename S>
int TapeT<S>::softmax_lastdim(int x) {
    check(x);
    const T& xv = value(x);
    expect<S>(xv.ndim() >= 1, "softmax needs at least one dim");
    const int last = xv.dims.back();
    const std::int64_t rows = xv.numel() / last;
    T y(xv.dims);
    for (std::int64_t r = 0; r < rows; ++r) {
        const S* xr = xv.data.data() + r * last;
        S* yr = y.data.data() + r * last;
        S mx = xr[0];
        for (int i = 1; i < last; ++i) mx = std::max(mx, xr[i]);
        double denom = 0.0;
        for (int i = 0; i < last; ++i) {
            const double e = std::exp(static_cast<double>(xr[i] - mx));
            yr[i] = static_cast<S>(e);
            denom += e;
        }
        const double inv = 1.0 / denom;
        for (int i = 0; i < last; ++i) yr[i] = static_cast<S>(static_cast<double>(yr[i]) * inv);
    }
    const bool rg = requires_grad(x);
    const int out = result(std::move(y), rg);
    if (rg) {
        add_op([this, x, out, rows, last]() {
            const T& yv = value(out);
            const S* dy = grad_buffer(out).data.data();
            S* dx = grad_buffer(x).data.data();
            for (std::int64_t r = 0; r < rows; ++r) {
                const S* yr = yv.data.data() + r * last;
                const S* dyr = dy + r * last;
                S* dxr = dx + r * last;
                double dot = 0.0;
                for (int i = 0; i < last; ++i) {
                    dot += static_cast<double>(dyr[i]) * static_cast<double>(yr[i]);
                }
                for (int i = 0; i < last; ++i) {
                    dxr[i] += static_cast<S>(static_cast<double>(yr[i]) *
                                             (static_cast<double>(dyr[i]) - dot));
                }
            }
        });
    }
    return out;
}

template <typename S>
int TapeT<S>::nchw_to_tokens(int x) {
    check(x);
    const T& xv = value(x);
    expect<S>(xv.ndim() == 4, "nchw_to_tokens expects [N,C,H,W]");
    const int n = xv.dim(0), c = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
    const std::int64_t plane = static_cast<std::int64_t>(h) * w;
    T y({n, h * w, c});
    for (int ni = 0; ni < n; ++ni) {
        const S* xp = xv.data.data() + static_cast<std::int64_t>(ni) * c * plane;
        S* yp = y.data.data() + static_cast<std::int64_t>(ni) * plane * c;
        for (int ci = 0; ci < c; ++ci) {
            const S* xc = xp + static_cast<std::int64_t>(ci) * plane;
            for (std::int64_t p = 0; p < plane; ++p) yp[p * c + ci] = xc[p];
        }
    }
    const bool rg = requires_grad(x);
    const int out = result(std::move(y), rg);
    if (rg) {
        add_op([this, x, out, n, c, plane]() {
            const S* dy = grad_buffer(out).data.data();
            S* dx = grad_buffer(x).data.data();
            for (int ni = 0; ni < n; ++ni) {
                const S* dyp = dy + static_cast<std::int64_t>(ni) * plane * c;
                S* dxp = dx + static_cast<std::int64_t>(ni) * c * plane;
                for (int ci = 0; ci < c; ++ci) {
                    S* dxc = dxp + static_cast<std::int64_t>(ci) * plane;
                    for (std::int64_t p = 0; p < plane; ++p) dxc[p] += dyp[p * c + ci];
                }
            }
        });
    }
    return out;
}

template <typename S>
int TapeT<S>::tokens_to_nchw(int x, int height, int width) {
    check(x);
    const T& xv = value(x);
    expect<S>(xv.ndim() == 3, "tokens_to_nchw expects [N,T,C]");
    expect<S>(xv.dim(1) == height * width, "token count must equal height*width");
    const int n = xv.dim(0), c = xv.dim(2);
    const std::int64_t plane = static_cast<std::int64_t>(height) * width;
    T y({n, c, height, width});
    for (int ni = 0; ni < n; ++ni) {
        const S* xp = xv.data.data() + static_cast<std::int64_t>(ni) * plane * c;
        S* yp = y.data.data() + static_cast<std::int64_t>(ni) * c * plane;
        for (int ci = 0; ci < c; ++ci) {
            S* yc = yp + static_cast<std::int64_t>(ci) * plane;
            for (std::int64_t p = 0; p < plane; ++p) yc[p] = xp[p * c + ci];
        }
    }
    const bool rg = requires_grad(x);
    const int out = result(std::move(y), rg);
    if (rg) {
        add_op([this, x, out, n, c, plane]() {
            const S* dy = grad_buffer(out).data.data();
            S* dx = grad_buffer(x).data.data();
            for (int ni = 0; ni < n; ++ni) {
                const S* dyp = dy + static_cast<std::int64_t>(ni) * c * plane;
                S* dxp = dx + static_cast<std::int64_t>(ni) * plane * c;
                for (int ci = 0; ci < c; ++ci) {
                    const S* dyc = dyp + static_cast<std::int64_t>(ci) * plane;
                    for (std::int64_t p = 0; p < plane; ++p) dxp[p * c + ci] += dyc[p];
                }
            }
        });
    }
    return out;
}

template <typename S>
int TapeT<S>::scaled_dot_attention(int x, int wq, int bq, int wk, int bk, int wv, int bv, int wo,
                                   int bo) {
    const T& xv = value(x);
    expect<S>(xv.ndim() == 3, "attention expects tokens [N,T,D]");
    const int d = xv.dim(2);
    const int q = linear(x, wq, bq);
    const int k = linear(x, wk, bk);
    const int v = linear(x, wv, bv);
    const int scores = affine(matmul_nt(q, k), 1.0 / std::sqrt(static_cast<double>(d)), 0.0);
    const int attn = softmax_lastdim(scores);
    const int ctx = matmul(attn, v);
    return linear(ctx, wo, bo);
}

// ---- losses ------------------------------------------------------------

template <typename S>
int TapeT<S>::mse_loss(int pred, const T& target, const T* mask) {
    check(pred);
    const T& pv = value(pred);
    expect<S>(pv.dims == target.dims, "mse_loss shape mismatch");
    if (mask != nullptr) expect<S>(mask->dims == target.dims, "mse_loss mask shape mismatch");
    double count = 0.0;
    if (mask != nullptr) {
        for (S m : mask->data) count += static_cast<double>(m);
        if (count == 0.0) throw ValidationError("mse_loss: every element is masked out");
    } else {
        count = static_cast<double>(pv.numel());
    }
    double acc = 0.0;
    for (std::size_t i = 0; i < pv.data.size(); ++i) {
        const double diff = static_cast<double>(pv.data[i]) - static_cast<double>(target.data[i]);
        const double m = mask != nullptr ? static_cast<double>(mask->data[i]) : 1.0;
        acc += diff * diff * m;
    }
    T y({1});
    y.data[0] = static_cast<S>(acc / count);
    const bool rg = requires_grad(pred);
    const int out = result(std::move(y), rg);
    if (rg) {
        auto tgt = std::make_shared<T>(target);
        auto msk = mask != nullptr ? std::make_shared<T>(*mask) : nullptr;
        add_op([this, pred, out, tgt, msk, count]() {
            const S g = grad_buffer(out).data[0];
            const T& pv2 = value(pred);
            S* dp = grad_buffer(pred).data.data();
            const double scale = 2.0 / count;
            for (std::size_t i = 0; i < pv2.data.size(); ++i) {
                const double m = msk != nullptr ? static_cast<double>(msk->data[i]) : 1.0;
                if (m == 0.0) continue;
                const double diff =
                    static_cast<double>(pv2.data[i]) - static_cast<double>(tgt->data[i]);
                dp[i] += static_cast<S>(scale * m * diff * static_cast<double>(g));
            }
        });
    }
    return out;
}

template <typename S>
int TapeT<S>::sum(int x) {
    check(x);
    const T& xv = value(x);
    double acc = 0.0;
    for (S v : xv.data) acc += static_cast<double>(v);
    T y({1});
    y.data[0] = static_cast<S>(acc);
    const bool rg = requires_grad(x);
    const int out = result(std::move(y), rg);
    if (rg) {
        add_op([this, x, out]() {
            const S g = grad_buffer(out).data[0];
            S* dx = grad_buffer(x).data.data();
            const std::size_t m = value(x).data.size();
            for (std::size_t i = 0; i < m; ++i) dx[i] += g;
        });
    }
    return out;
}

// ---- optimizer -----------------------------------------------------------

template <typename S>
void adam_step(std::vector<TensorT<S>*>& params, const std::vector<const TensorT<S>*>& grads,
               AdamStateT<S>& state) {
    if (params.size() != grads.size()) throw ValidationError("adam: params/grads count mismatch");
    if (state.m.empty()) {
        for (const auto* p : params) {
            state.m.push_back(TensorT<S>::zeros(p->dims));
            state.v.push_back(TensorT<S>::zeros(p->dims));
        }
    }
    if (state.m.size() != params.size()) throw ValidationError("adam: state size mismatch");
    state.step += 1;
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        TensorT<S>& p = *params[pi];
        const TensorT<S>& g = *grads[pi];
        if (p.dims != g.dims || p.dims != state.m[pi].dims) {
            throw ValidationError("adam: tensor shape mismatch");
        }
        S* pd = p.data.data();
        const S* gd = g.data.data();
        S* md = state.m[pi].data.data();
        S* vd = state.v[pi].data.data();
        const std::size_t n = p.data.size();
        for (std::size_t i = 0; i < n; ++i) {
            const double gv = static_cast<double>(gd[i]);
            const double m = state.beta1 * static_cast<double>(md[i]) + (1.0 - state.beta1) * gv;
            const double v = state.beta2 * static_cast<double>(vd[i]) + (1.0 - state.beta2) * gv * gv;
            md[i] = static_cast<S>(m);
            vd[i] = static_cast<S>(v);
            const double mhat = m / bc1;
            const double vhat = v / bc2;
            pd[i] = static_cast<S>(static_cast<double>(pd[i]) -
                                   state.lr * mhat / (std::sqrt(vhat) + state.eps));
        }
    }
}

template struct TensorT<float>;
template struct TensorT<double>;
template class TapeT<float>;
template class TapeT<double>;
template struct AdamStateT<float>;
template struct AdamStateT<double>;
template void adam_step<float>(std::vector<TensorT<float>*>&,
                               const std::vector<const TensorT<float>*>&, AdamStateT<float>&);
template void adam_step<double>(std::vector<TensorT<double>*>&,
                                const std::vector<const TensorT<double>*>&, AdamStateT<double>&);

} // namespace radiomap
