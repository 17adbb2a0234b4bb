#pragma once

// Shared test-only helpers: independent oracles (naive matmul, direct
// convolution summation, erf series), central finite differences, and a
// small one-sided Jacobi SVD. These stay independent of the library's
// implementation paths on purpose.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <vector>

#include "lora3d/tensor.hpp"

namespace testutil {

// Naive triple-loop matrix product.
template <typename T>
lora3d::TensorT<T> matmul_oracle(const lora3d::TensorT<T>& a, const lora3d::TensorT<T>& b) {
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    lora3d::TensorT<T> c({m, n});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            T acc = T(0);
            for (std::size_t p = 0; p < k; ++p) acc += a.at({i, p}) * b.at({p, j});
            c.at({i, j}) = acc;
        }
    return c;
}

// Direct summation 3D cross-correlation with zero padding; six nested loops
// over output position and kernel window.
template <typename T>
lora3d::TensorT<T> conv3d_oracle(const lora3d::TensorT<T>& weight, const lora3d::TensorT<T>& x,
                                 int stride, int pad, const lora3d::TensorT<T>* bias = nullptr) {
    const std::size_t n = x.dim(0), ci = x.dim(1);
    const std::size_t co = weight.dim(0), k = weight.dim(2);
    const std::size_t D = x.dim(2), H = x.dim(3), W = x.dim(4);
    auto out_extent = [&](std::size_t in) {
        return static_cast<std::size_t>(
                   (static_cast<std::ptrdiff_t>(in) + 2 * pad - static_cast<std::ptrdiff_t>(k)) /
                   stride) +
               1;
    };
    const std::size_t OD = out_extent(D), OH = out_extent(H), OW = out_extent(W);
    lora3d::TensorT<T> y({n, co, OD, OH, OW});
    for (std::size_t s = 0; s < n; ++s)
        for (std::size_t o = 0; o < co; ++o)
            for (std::size_t od = 0; od < OD; ++od)
                for (std::size_t oh = 0; oh < OH; ++oh)
                    for (std::size_t ow = 0; ow < OW; ++ow) {
                        T acc = bias ? (*bias)[o] : T(0);
                        for (std::size_t c = 0; c < ci; ++c)
                            for (std::size_t kd = 0; kd < k; ++kd)
                                for (std::size_t kh = 0; kh < k; ++kh)
                                    for (std::size_t kw = 0; kw < k; ++kw) {
                                        const std::ptrdiff_t id =
                                            static_cast<std::ptrdiff_t>(od) * stride - pad + kd;
                                        const std::ptrdiff_t ih =
                                            static_cast<std::ptrdiff_t>(oh) * stride - pad + kh;
                                        const std::ptrdiff_t iw =
                                            static_cast<std::ptrdiff_t>(ow) * stride - pad + kw;
                                        if (id < 0 || id >= static_cast<std::ptrdiff_t>(D) ||
                                            ih < 0 || ih >= static_cast<std::ptrdiff_t>(H) ||
                                            iw < 0 || iw >= static_cast<std::ptrdiff_t>(W))
                                            continue;
                                        acc += x.at({s, c, static_cast<std::size_t>(id),
                                                     static_cast<std::size_t>(ih),
                                                     static_cast<std::size_t>(iw)}) *
                                               weight.at({o, c, kd, kh, kw});
                                    }
                        y.at({s, o, od, oh, ow}) = acc;
                    }
    return y;
}

// erf via its Maclaurin series, an oracle independent of std::erf.
inline double erf_series(double x) {
    const double two_over_sqrt_pi = 1.1283791670955125739;
    double term = x;
    double sum = x;
    for (int n = 1; n < 60; ++n) {
        term *= -x * x / n;
        sum += term / (2 * n + 1);
    }
    return two_over_sqrt_pi * sum;
}

// Central finite differences of a scalar functional against an analytic
// gradient, with the usual max(1, |a|, |n|) denominator.
inline double grad_check(lora3d::TensorD& param, const lora3d::TensorD& analytic,
                         const std::function<double()>& loss, double h = 1e-4) {
    double worst = 0.0;
    for (std::size_t i = 0; i < param.size(); ++i) {
        const double saved = param[i];
        param[i] = saved + h;
        const double up = loss();
        param[i] = saved - h;
        const double down = loss();
        param[i] = saved;
        const double numeric = (up - down) / (2.0 * h);
        const double a = analytic[i];
        const double rel =
            std::abs(a - numeric) / std::max({1.0, std::abs(a), std::abs(numeric)});
        if (rel > worst) worst = rel;
    }
    return worst;
}

// L = sum(R .* Y) for a fixed coefficient tensor R, so dL/dY = R.
inline double weighted_sum(const lora3d::TensorD& y, const lora3d::TensorD& r) {
    double acc = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) acc += y[i] * r[i];
    return acc;
}

// Singular values (descending) of a row-major m x n matrix via one-sided
// Jacobi rotations on columns. Intended for small test instances.
inline std::vector<double> singular_values(std::vector<double> a, std::size_t m, std::size_t n) {
    auto col_dot = [&](std::size_t i, std::size_t j) {
        double acc = 0.0;
        for (std::size_t r = 0; r < m; ++r) acc += a[r * n + i] * a[r * n + j];
        return acc;
    };
    for (int sweep = 0; sweep < 60; ++sweep) {
        bool rotated = false;
        for (std::size_t i = 0; i + 1 < n; ++i)
            for (std::size_t j = i + 1; j < n; ++j) {
                const double alpha = col_dot(i, i);
                const double beta = col_dot(j, j);
                const double gamma = col_dot(i, j);
                if (std::abs(gamma) <= 1e-15 * std::sqrt(alpha * beta) || gamma == 0.0) continue;
                rotated = true;
                const double zeta = (beta - alpha) / (2.0 * gamma);
                const double t = (zeta >= 0.0 ? 1.0 : -1.0) /
                                 (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
                const double c = 1.0 / std::sqrt(1.0 + t * t);
                const double s = c * t;
                for (std::size_t r = 0; r < m; ++r) {
                    const double vi = a[r * n + i];
                    const double vj = a[r * n + j];
                    a[r * n + i] = c * vi - s * vj;
                    a[r * n + j] = s * vi + c * vj;
                }
            }
        if (!rotated) break;
    }
    std::vector<double> sigma(n);
    for (std::size_t i = 0; i < n; ++i) sigma[i] = std::sqrt(col_dot(i, i));
    std::sort(sigma.begin(), sigma.end(), std::greater<double>());
    return sigma;
}

}  // namespace testutil
