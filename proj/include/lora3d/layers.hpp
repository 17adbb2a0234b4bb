#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <utility>
#include <vector>

#include "lora3d/tensor.hpp"

namespace lora3d {

// ---------------------------------------------------------------------------
// 3D convolution (cross-correlation, zero padding)
// ---------------------------------------------------------------------------

template <typename T>
struct Conv3dT {
    TensorT<T> weight;                 // [d_out, d_in, k, k, k]
    std::optional<TensorT<T>> bias;    // [d_out]
    std::array<int, 3> stride{1, 1, 1};
    std::array<int, 3> padding{0, 0, 0};

    std::size_t out_channels() const { return weight.dim(0); }
    std::size_t in_channels() const { return weight.dim(1); }
    std::size_t kernel() const { return weight.dim(2); }
};

using Conv3d = Conv3dT<float>;

template <typename T>
struct ConvGradsT {
    TensorT<T> dinput;
    TensorT<T> dweight;
    std::optional<TensorT<T>> dbias;
};

namespace detail {

struct Conv3dDims {
    std::size_t n, d_in, d_out, k;
    std::array<std::size_t, 3> in;    // D, H, W
    std::array<std::size_t, 3> out;   // D', H', W'
    std::array<int, 3> stride, padding;
    std::size_t out_vox;              // D'*H'*W'
    std::size_t col_rows;             // d_in * k^3
    std::size_t in_vox;               // D*H*W
};

template <typename T>
Conv3dDims conv3d_dims(const Conv3dT<T>& conv, const Shape& x_shape) {
    if (conv.weight.rank() != 5 || conv.weight.dim(2) != conv.weight.dim(3) ||
        conv.weight.dim(2) != conv.weight.dim(4)) {
        throw ShapeError("conv3d: weight must be [d_out, d_in, k, k, k], got " +
                         shape_str(conv.weight.shape()));
    }
    if (x_shape.size() != 5) {
        throw ShapeError("conv3d: input must be [n, c, D, H, W], got " + shape_str(x_shape));
    }
    if (x_shape[1] != conv.in_channels()) {
        throw ShapeError("conv3d: input channels " + std::to_string(x_shape[1]) +
                         " do not match weight " + shape_str(conv.weight.shape()));
    }
    if (conv.bias && (conv.bias->rank() != 1 || conv.bias->dim(0) != conv.out_channels())) {
        throw ShapeError("conv3d: bias shape " + shape_str(conv.bias->shape()) +
                         " does not match d_out " + std::to_string(conv.out_channels()));
    }
    Conv3dDims d;
    d.n = x_shape[0];
    d.d_in = conv.in_channels();
    d.d_out = conv.out_channels();
    d.k = conv.kernel();
    d.in = {x_shape[2], x_shape[3], x_shape[4]};
    d.stride = conv.stride;
    d.padding = conv.padding;
    for (int axis = 0; axis < 3; ++axis) {
        if (d.stride[axis] < 1) throw ValueError("conv3d: stride must be positive");
        if (d.padding[axis] < 0) throw ValueError("conv3d: padding must be non-negative");
        std::ptrdiff_t span = static_cast<std::ptrdiff_t>(d.in[axis]) + 2 * d.padding[axis] -
                              static_cast<std::ptrdiff_t>(d.k);
        if (span < 0) {
            throw ShapeError("conv3d: kernel " + std::to_string(d.k) + " does not fit input " +
                             shape_str(x_shape) + " with padding " +
                             std::to_string(d.padding[axis]));
        }
        d.out[axis] = static_cast<std::size_t>(span / d.stride[axis]) + 1;
    }
    d.out_vox = d.out[0] * d.out[1] * d.out[2];
    d.col_rows = d.d_in * d.k * d.k * d.k;
    d.in_vox = d.in[0] * d.in[1] * d.in[2];
    return d;
}

// Unfolds one sample [d_in, D, H, W] into col [d_in*k^3, out_vox].
template <typename T>
void im2col(const T* x, const Conv3dDims& d, T* col) {
    const std::size_t k = d.k;
    const std::size_t HW = d.in[1] * d.in[2];
    std::size_t row = 0;
    for (std::size_t ci = 0; ci < d.d_in; ++ci) {
        const T* plane = x + ci * d.in_vox;
        for (std::size_t kd = 0; kd < k; ++kd)
            for (std::size_t kh = 0; kh < k; ++kh)
                for (std::size_t kw = 0; kw < k; ++kw, ++row) {
                    T* dst = col + row * d.out_vox;
                    std::size_t o = 0;
                    for (std::size_t od = 0; od < d.out[0]; ++od) {
                        std::ptrdiff_t id = static_cast<std::ptrdiff_t>(od) * d.stride[0] -
                                            d.padding[0] + static_cast<std::ptrdiff_t>(kd);
                        bool d_ok = id >= 0 && id < static_cast<std::ptrdiff_t>(d.in[0]);
                        for (std::size_t oh = 0; oh < d.out[1]; ++oh) {
                            std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh) * d.stride[1] -
                                                d.padding[1] + static_cast<std::ptrdiff_t>(kh);
                            bool h_ok = d_ok && ih >= 0 && ih < static_cast<std::ptrdiff_t>(d.in[1]);
                            const T* src_row =
                                h_ok ? plane + static_cast<std::size_t>(id) * HW +
                                           static_cast<std::size_t>(ih) * d.in[2]
                                     : nullptr;
                            for (std::size_t ow = 0; ow < d.out[2]; ++ow, ++o) {
                                std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(ow) * d.stride[2] -
                                                    d.padding[2] + static_cast<std::ptrdiff_t>(kw);
                                dst[o] = (h_ok && iw >= 0 &&
                                          iw < static_cast<std::ptrdiff_t>(d.in[2]))
                                             ? src_row[static_cast<std::size_t>(iw)]
                                             : T(0);
                            }
                        }
                    }
                }
    }
}

// Scatter-adds col gradients [d_in*k^3, out_vox] back onto one sample.
template <typename T>
void col2im_add(const T* col, const Conv3dDims& d, T* x) {
    const std::size_t k = d.k;
    const std::size_t HW = d.in[1] * d.in[2];
    std::size_t row = 0;
    for (std::size_t ci = 0; ci < d.d_in; ++ci) {
        T* plane = x + ci * d.in_vox;
        for (std::size_t kd = 0; kd < k; ++kd)
            for (std::size_t kh = 0; kh < k; ++kh)
                for (std::size_t kw = 0; kw < k; ++kw, ++row) {
                    const T* src = col + row * d.out_vox;
                    std::size_t o = 0;
                    for (std::size_t od = 0; od < d.out[0]; ++od) {
                        std::ptrdiff_t id = static_cast<std::ptrdiff_t>(od) * d.stride[0] -
                                            d.padding[0] + static_cast<std::ptrdiff_t>(kd);
                        bool d_ok = id >= 0 && id < static_cast<std::ptrdiff_t>(d.in[0]);
                        for (std::size_t oh = 0; oh < d.out[1]; ++oh) {
                            std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh) * d.stride[1] -
                                                d.padding[1] + static_cast<std::ptrdiff_t>(kh);
                            bool h_ok = d_ok && ih >= 0 && ih < static_cast<std::ptrdiff_t>(d.in[1]);
                            T* dst_row = h_ok ? plane + static_cast<std::size_t>(id) * HW +
                                                    static_cast<std::size_t>(ih) * d.in[2]
                                              : nullptr;
                            for (std::size_t ow = 0; ow < d.out[2]; ++ow, ++o) {
                                std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(ow) * d.stride[2] -
                                                    d.padding[2] + static_cast<std::ptrdiff_t>(kw);
                                if (h_ok && iw >= 0 && iw < static_cast<std::ptrdiff_t>(d.in[2])) {
                                    dst_row[static_cast<std::size_t>(iw)] += src[o];
                                }
                            }
                        }
                    }
                }
    }
}

}  // namespace detail

template <typename T>
Shape conv3d_out_shape(const Conv3dT<T>& conv, const Shape& x_shape) {
    auto d = detail::conv3d_dims(conv, x_shape);
    return {d.n, d.d_out, d.out[0], d.out[1], d.out[2]};
}

template <typename T>
TensorT<T> conv3d_forward(const Conv3dT<T>& conv, const TensorT<T>& x) {
    const auto d = detail::conv3d_dims(conv, x.shape());
    TensorT<T> y({d.n, d.d_out, d.out[0], d.out[1], d.out[2]});
    std::vector<T> col(d.col_rows * d.out_vox);
    const T* w = conv.weight.data();
    for (std::size_t s = 0; s < d.n; ++s) {
        detail::im2col(x.data() + s * d.d_in * d.in_vox, d, col.data());
        T* out = y.data() + s * d.d_out * d.out_vox;
        detail::matmul_nn_acc(w, col.data(), out, d.d_out, d.col_rows, d.out_vox);
        if (conv.bias) {
            const T* b = conv.bias->data();
            for (std::size_t co = 0; co < d.d_out; ++co) {
                T* ch = out + co * d.out_vox;
                for (std::size_t o = 0; o < d.out_vox; ++o) ch[o] += b[co];
            }
        }
    }
    return y;
}

template <typename T>
ConvGradsT<T> conv3d_backward(const Conv3dT<T>& conv, const TensorT<T>& x,
                              const TensorT<T>& grad_out) {
    const auto d = detail::conv3d_dims(conv, x.shape());
    Shape expect{d.n, d.d_out, d.out[0], d.out[1], d.out[2]};
    if (grad_out.shape() != expect) {
        throw ShapeError("conv3d_backward: grad shape " + shape_str(grad_out.shape()) +
                         " does not match forward output " + shape_str(expect));
    }
    ConvGradsT<T> g;
    g.dinput = TensorT<T>(x.shape());
    g.dweight = TensorT<T>(conv.weight.shape());
    if (conv.bias) g.dbias = TensorT<T>(conv.bias->shape());

    std::vector<T> col(d.col_rows * d.out_vox);
    std::vector<T> dcol(d.col_rows * d.out_vox);
    const T* w = conv.weight.data();
    for (std::size_t s = 0; s < d.n; ++s) {
        const T* xs = x.data() + s * d.d_in * d.in_vox;
        const T* gs = grad_out.data() + s * d.d_out * d.out_vox;
        detail::im2col(xs, d, col.data());
        // dW += g * col^T
        detail::matmul_nt_acc(gs, col.data(), g.dweight.data(), d.d_out, d.out_vox, d.col_rows);
        // dcol = W^T * g
        std::fill(dcol.begin(), dcol.end(), T(0));
        detail::matmul_tn_acc(w, gs, dcol.data(), d.col_rows, d.d_out, d.out_vox);
        detail::col2im_add(dcol.data(), d, g.dinput.data() + s * d.d_in * d.in_vox);
        if (g.dbias) {
            T* db = g.dbias->data();
            for (std::size_t co = 0; co < d.d_out; ++co) {
                const T* ch = gs + co * d.out_vox;
                T acc = T(0);
                for (std::size_t o = 0; o < d.out_vox; ++o) acc += ch[o];
                db[co] += acc;
            }
        }
    }
    return g;
}

// ---------------------------------------------------------------------------
// Frozen normalization: y = scale * (x - mean) / sqrt(var + eps) + shift,
// channelwise, with fixed statistics. Its parameters never receive gradients.
// ---------------------------------------------------------------------------

template <typename T>
struct FrozenNormT {
    TensorT<T> scale, shift, mean, var;   // each [C]
    T eps = static_cast<T>(1e-5);
};

using FrozenNorm = FrozenNormT<float>;

template <typename T>
TensorT<T> frozen_norm_forward(const FrozenNormT<T>& norm, const TensorT<T>& x) {
    if (x.rank() < 2 || x.dim(1) != norm.scale.dim(0)) {
        throw ShapeError("frozen_norm: input " + shape_str(x.shape()) +
                         " does not match channel count " + std::to_string(norm.scale.dim(0)));
    }
    const std::size_t n = x.dim(0), c = x.dim(1);
    const std::size_t inner = x.size() / (n * c);
    TensorT<T> y(x.shape());
    for (std::size_t ch = 0; ch < c; ++ch) {
        const T a = norm.scale[ch] / std::sqrt(norm.var[ch] + norm.eps);
        const T b = norm.shift[ch] - a * norm.mean[ch];
        for (std::size_t s = 0; s < n; ++s) {
            const T* src = x.data() + (s * c + ch) * inner;
            T* dst = y.data() + (s * c + ch) * inner;
            for (std::size_t i = 0; i < inner; ++i) dst[i] = a * src[i] + b;
        }
    }
    return y;
}

template <typename T>
TensorT<T> frozen_norm_backward(const FrozenNormT<T>& norm, const TensorT<T>& grad_out) {
    const std::size_t n = grad_out.dim(0), c = grad_out.dim(1);
    const std::size_t inner = grad_out.size() / (n * c);
    TensorT<T> dx(grad_out.shape());
    for (std::size_t ch = 0; ch < c; ++ch) {
        const T a = norm.scale[ch] / std::sqrt(norm.var[ch] + norm.eps);
        for (std::size_t s = 0; s < n; ++s) {
            const T* src = grad_out.data() + (s * c + ch) * inner;
            T* dst = dx.data() + (s * c + ch) * inner;
            for (std::size_t i = 0; i < inner; ++i) dst[i] = a * src[i];
        }
    }
    return dx;
}

// ---------------------------------------------------------------------------
// Activations
// ---------------------------------------------------------------------------

// Exact GELU: x * Phi(x) with Phi the standard normal CDF via erfc.
template <typename T>
TensorT<T> gelu_forward(const TensorT<T>& x) {
    TensorT<T> y(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double v = static_cast<double>(x[i]);
        y[i] = static_cast<T>(v * 0.5 * std::erfc(-v * 0.7071067811865475244));
    }
    return y;
}

template <typename T>
TensorT<T> gelu_backward(const TensorT<T>& x, const TensorT<T>& grad_out) {
    detail::check_same_shape(x, grad_out, "gelu_backward");
    TensorT<T> dx(x.shape());
    constexpr double inv_sqrt2 = 0.7071067811865475244;
    constexpr double inv_sqrt2pi = 0.3989422804014326779;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double v = static_cast<double>(x[i]);
        const double cdf = 0.5 * std::erfc(-v * inv_sqrt2);
        const double pdf = inv_sqrt2pi * std::exp(-0.5 * v * v);
        dx[i] = static_cast<T>(static_cast<double>(grad_out[i]) * (cdf + v * pdf));
    }
    return dx;
}

template <typename T>
TensorT<T> relu_forward(const TensorT<T>& x) {
    TensorT<T> y(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > T(0) ? x[i] : T(0);
    return y;
}

template <typename T>
TensorT<T> relu_backward(const TensorT<T>& x, const TensorT<T>& grad_out) {
    detail::check_same_shape(x, grad_out, "relu_backward");
    TensorT<T> dx(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) dx[i] = x[i] > T(0) ? grad_out[i] : T(0);
    return dx;
}

// ---------------------------------------------------------------------------
// Dropout (inverted scaling). The returned mask holds 0 or 1/(1-rate) and is
// reused verbatim by the backward pass.
// ---------------------------------------------------------------------------

template <typename T>
struct DropoutResultT {
    TensorT<T> output;
    TensorT<T> mask;
};

template <typename T>
DropoutResultT<T> dropout_forward(const TensorT<T>& x, double rate, bool train,
                                  RandomSource& rng) {
    if (rate < 0.0 || rate >= 1.0) {
        throw ValueError("dropout: rate must be in [0, 1), got " + std::to_string(rate));
    }
    DropoutResultT<T> r;
    if (!train || rate == 0.0) {
        r.output = x;
        r.mask = TensorT<T>::ones(x.shape());
        return r;
    }
    r.output = TensorT<T>(x.shape());
    r.mask = TensorT<T>(x.shape());
    const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
    for (std::size_t i = 0; i < x.size(); ++i) {
        const bool drop = rng.uniform() < rate;
        r.mask[i] = drop ? T(0) : keep_scale;
        r.output[i] = x[i] * r.mask[i];
    }
    return r;
}

template <typename T>
TensorT<T> dropout_backward(const TensorT<T>& mask, const TensorT<T>& grad_out) {
    return mul(mask, grad_out);
}

// ---------------------------------------------------------------------------
// Pooling
// ---------------------------------------------------------------------------

template <typename T>
struct MaxPoolResultT {
    TensorT<T> output;
    std::vector<std::size_t> argmax;   // flat input index per output element
};

template <typename T>
MaxPoolResultT<T> maxpool3d_forward(const TensorT<T>& x, int k, int stride, int pad) {
    if (x.rank() != 5) throw ShapeError("maxpool3d: input must be [n, c, D, H, W]");
    const std::size_t n = x.dim(0), c = x.dim(1);
    const std::array<std::size_t, 3> in{x.dim(2), x.dim(3), x.dim(4)};
    std::array<std::size_t, 3> out{};
    for (int axis = 0; axis < 3; ++axis) {
        std::ptrdiff_t span = static_cast<std::ptrdiff_t>(in[axis]) + 2 * pad - k;
        if (span < 0) throw ShapeError("maxpool3d: window does not fit input");
        out[axis] = static_cast<std::size_t>(span / stride) + 1;
    }
    MaxPoolResultT<T> r;
    r.output = TensorT<T>({n, c, out[0], out[1], out[2]});
    r.argmax.assign(r.output.size(), 0);
    const std::size_t in_vox = in[0] * in[1] * in[2];
    std::size_t o = 0;
    for (std::size_t s = 0; s < n; ++s)
        for (std::size_t ch = 0; ch < c; ++ch) {
            const T* plane = x.data() + (s * c + ch) * in_vox;
            const std::size_t plane_base = (s * c + ch) * in_vox;
            for (std::size_t od = 0; od < out[0]; ++od)
                for (std::size_t oh = 0; oh < out[1]; ++oh)
                    for (std::size_t ow = 0; ow < out[2]; ++ow, ++o) {
                        T best{};
                        std::size_t best_idx = 0;
                        bool found = false;
                        for (int kd = 0; kd < k; ++kd) {
                            std::ptrdiff_t id = static_cast<std::ptrdiff_t>(od) * stride - pad + kd;
                            if (id < 0 || id >= static_cast<std::ptrdiff_t>(in[0])) continue;
                            for (int kh = 0; kh < k; ++kh) {
                                std::ptrdiff_t ih =
                                    static_cast<std::ptrdiff_t>(oh) * stride - pad + kh;
                                if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(in[1])) continue;
                                for (int kw = 0; kw < k; ++kw) {
                                    std::ptrdiff_t iw =
                                        static_cast<std::ptrdiff_t>(ow) * stride - pad + kw;
                                    if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(in[2]))
                                        continue;
                                    std::size_t idx =
                                        (static_cast<std::size_t>(id) * in[1] +
                                         static_cast<std::size_t>(ih)) *
                                            in[2] +
                                        static_cast<std::size_t>(iw);
                                    const T v = plane[idx];
                                    if (!found || v > best) {
                                        best = v;
                                        best_idx = idx;
                                        found = true;
                                    }
                                }
                            }
                        }
                        r.output[o] = best;
                        r.argmax[o] = plane_base + best_idx;
                    }
        }
    return r;
}

template <typename T>
TensorT<T> maxpool3d_backward(const MaxPoolResultT<T>& cache, const Shape& in_shape,
                              const TensorT<T>& grad_out) {
    if (grad_out.shape() != cache.output.shape()) {
        throw ShapeError("maxpool3d_backward: grad shape " + shape_str(grad_out.shape()) +
                         " does not match output " + shape_str(cache.output.shape()));
    }
    TensorT<T> dx(in_shape);
    for (std::size_t o = 0; o < grad_out.size(); ++o) dx[cache.argmax[o]] += grad_out[o];
    return dx;
}

// Averages all spatial positions per channel: [n, c, D, H, W] -> [n, c].
template <typename T>
TensorT<T> global_avg_pool_forward(const TensorT<T>& x) {
    if (x.rank() < 3) throw ShapeError("global_avg_pool: input must have spatial axes");
    const std::size_t n = x.dim(0), c = x.dim(1);
    const std::size_t inner = x.size() / (n * c);
    TensorT<T> y({n, c});
    const T inv = static_cast<T>(1.0 / static_cast<double>(inner));
    for (std::size_t s = 0; s < n; ++s)
        for (std::size_t ch = 0; ch < c; ++ch) {
            const T* src = x.data() + (s * c + ch) * inner;
            T acc = T(0);
            for (std::size_t i = 0; i < inner; ++i) acc += src[i];
            y.at({s, ch}) = acc * inv;
        }
    return y;
}

template <typename T>
TensorT<T> global_avg_pool_backward(const Shape& in_shape, const TensorT<T>& grad_out) {
    const std::size_t n = in_shape[0], c = in_shape[1];
    std::size_t inner = 1;
    for (std::size_t a = 2; a < in_shape.size(); ++a) inner *= in_shape[a];
    if (grad_out.shape() != Shape{n, c}) {
        throw ShapeError("global_avg_pool_backward: grad shape " + shape_str(grad_out.shape()) +
                         " does not match [n, c]");
    }
    TensorT<T> dx(in_shape);
    const T inv = static_cast<T>(1.0 / static_cast<double>(inner));
    for (std::size_t s = 0; s < n; ++s)
        for (std::size_t ch = 0; ch < c; ++ch) {
            const T g = grad_out.at({s, ch}) * inv;
            T* dst = dx.data() + (s * c + ch) * inner;
            for (std::size_t i = 0; i < inner; ++i) dst[i] = g;
        }
    return dx;
}

// ---------------------------------------------------------------------------
// Fully connected: y = x W^T + b
// ---------------------------------------------------------------------------

template <typename T>
struct LinearT {
    TensorT<T> weight;   // [out, in]
    TensorT<T> bias;     // [out]
};

using Linear = LinearT<float>;

template <typename T>
struct LinearGradsT {
    TensorT<T> dinput;
    TensorT<T> dweight;
    TensorT<T> dbias;
};

template <typename T>
TensorT<T> linear_forward(const LinearT<T>& layer, const TensorT<T>& x) {
    if (x.rank() != 2 || x.dim(1) != layer.weight.dim(1)) {
        throw ShapeError("linear: input " + shape_str(x.shape()) + " does not match weight " +
                         shape_str(layer.weight.shape()));
    }
    const std::size_t n = x.dim(0), in = x.dim(1), out = layer.weight.dim(0);
    TensorT<T> y({n, out});
    detail::matmul_nt_acc(x.data(), layer.weight.data(), y.data(), n, in, out);
    for (std::size_t s = 0; s < n; ++s)
        for (std::size_t j = 0; j < out; ++j) y.at({s, j}) += layer.bias[j];
    return y;
}

template <typename T>
LinearGradsT<T> linear_backward(const LinearT<T>& layer, const TensorT<T>& x,
                                const TensorT<T>& grad_out) {
    const std::size_t n = x.dim(0), in = x.dim(1), out = layer.weight.dim(0);
    if (grad_out.shape() != Shape{n, out}) {
        throw ShapeError("linear_backward: grad shape " + shape_str(grad_out.shape()) +
                         " does not match output [n, out]");
    }
    LinearGradsT<T> g;
    g.dinput = TensorT<T>({n, in});
    g.dweight = TensorT<T>({out, in});
    g.dbias = TensorT<T>({out});
    detail::matmul_nn_acc(grad_out.data(), layer.weight.data(), g.dinput.data(), n, out, in);
    detail::matmul_tn_acc(grad_out.data(), x.data(), g.dweight.data(), out, n, in);
    for (std::size_t s = 0; s < n; ++s)
        for (std::size_t j = 0; j < out; ++j) g.dbias[j] += grad_out.at({s, j});
    return g;
}

}  // namespace lora3d
