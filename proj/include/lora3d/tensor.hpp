#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <string>
#include <vector>

#include "lora3d/errors.hpp"
#include "lora3d/rng.hpp"

namespace lora3d {

using Shape = std::vector<std::size_t>;

inline std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += ", ";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

inline std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (std::size_t d : s) n *= d;
    return n;
}

// Dense row-major N-dimensional array. Scalar type is float for training
// and double for the finite-difference test mode.
template <typename T>
class TensorT {
public:
    TensorT() = default;

    explicit TensorT(Shape shape) : shape_(std::move(shape)) {
        validate_shape();
        data_.assign(shape_numel(shape_), T(0));
    }

    TensorT(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
        validate_shape();
        if (shape_numel(shape_) != data_.size()) {
            throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                             " does not match shape " + shape_str(shape_));
        }
    }

    static TensorT zeros(Shape shape) { return TensorT(std::move(shape)); }

    static TensorT ones(Shape shape) { return full(std::move(shape), T(1)); }

    static TensorT full(Shape shape, T value) {
        TensorT t(std::move(shape));
        for (T& x : t.data_) x = value;
        return t;
    }

    const Shape& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }
    std::vector<T>& vec() { return data_; }
    const std::vector<T>& vec() const { return data_; }

    T& operator[](std::size_t i) { return data_[i]; }
    const T& operator[](std::size_t i) const { return data_[i]; }

    std::size_t dim(std::size_t axis) const { return shape_[axis]; }

    // Row-major flat index of a full coordinate tuple.
    std::size_t index(std::initializer_list<std::size_t> coords) const {
        std::size_t flat = 0;
        std::size_t axis = 0;
        for (std::size_t c : coords) {
            flat = flat * shape_[axis] + c;
            ++axis;
        }
        return flat;
    }

    T& at(std::initializer_list<std::size_t> coords) { return data_[index(coords)]; }
    const T& at(std::initializer_list<std::size_t> coords) const { return data_[index(coords)]; }

    // Same buffer reinterpreted under a new shape (row-major order kept).
    TensorT reshape(Shape new_shape) const {
        if (shape_numel(new_shape) != data_.size()) {
            throw ShapeError("reshape from " + shape_str(shape_) + " to " + shape_str(new_shape) +
                             ": element count mismatch (" + std::to_string(data_.size()) + " vs " +
                             std::to_string(shape_numel(new_shape)) + ")");
        }
        return TensorT(std::move(new_shape), data_);
    }

private:
    void validate_shape() const {
        for (std::size_t d : shape_) {
            if (d == 0) throw ShapeError("zero extent in shape " + shape_str(shape_));
        }
    }

    Shape shape_;
    std::vector<T> data_;
};

using Tensor = TensorT<float>;
using TensorD = TensorT<double>;

namespace detail {
template <typename T>
void check_same_shape(const TensorT<T>& a, const TensorT<T>& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(op) + ": shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()) + " differ");
    }
}
}  // namespace detail

template <typename T>
TensorT<T> add(const TensorT<T>& a, const TensorT<T>& b) {
    detail::check_same_shape(a, b, "add");
    TensorT<T> c = a;
    for (std::size_t i = 0; i < c.size(); ++i) c[i] += b[i];
    return c;
}

template <typename T>
void add_inplace(TensorT<T>& a, const TensorT<T>& b) {
    detail::check_same_shape(a, b, "add");
    for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
}

template <typename T>
TensorT<T> sub(const TensorT<T>& a, const TensorT<T>& b) {
    detail::check_same_shape(a, b, "sub");
    TensorT<T> c = a;
    for (std::size_t i = 0; i < c.size(); ++i) c[i] -= b[i];
    return c;
}

template <typename T>
TensorT<T> mul(const TensorT<T>& a, const TensorT<T>& b) {
    detail::check_same_shape(a, b, "mul");
    TensorT<T> c = a;
    for (std::size_t i = 0; i < c.size(); ++i) c[i] *= b[i];
    return c;
}

template <typename T>
TensorT<T> scale(const TensorT<T>& a, T factor) {
    TensorT<T> c = a;
    for (std::size_t i = 0; i < c.size(); ++i) c[i] *= factor;
    return c;
}

template <typename T>
double sum(const TensorT<T>& a) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += static_cast<double>(a[i]);
    return acc;
}

template <typename T>
double mean(const TensorT<T>& a) {
    if (a.empty()) throw ValueError("mean of empty tensor");
    return sum(a) / static_cast<double>(a.size());
}

template <typename T>
double max_abs_diff(const TensorT<T>& a, const TensorT<T>& b) {
    detail::check_same_shape(a, b, "max_abs_diff");
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        double d = std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i]));
        if (d > m) m = d;
    }
    return m;
}

// c[i,j] = sum_p a[i,p] * b[p,j]
template <typename T>
TensorT<T> matmul(const TensorT<T>& a, const TensorT<T>& b) {
    if (a.rank() != 2 || b.rank() != 2) {
        throw ShapeError("matmul: expected rank-2 operands, got " + shape_str(a.shape()) +
                         " and " + shape_str(b.shape()));
    }
    if (a.dim(1) != b.dim(0)) {
        throw ShapeError("matmul: inner dimensions of " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()) + " do not match");
    }
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    TensorT<T> c({m, n});
    const T* pa = a.data();
    const T* pb = b.data();
    T* pc = c.data();
    for (std::size_t i = 0; i < m; ++i) {
        T* crow = pc + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const T aip = pa[i * k + p];
            if (aip == T(0)) continue;
            const T* brow = pb + p * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
        }
    }
    return c;
}

namespace detail {

// Raw-buffer matmul kernels used by the convolutions. Fixed accumulation
// order keeps results bit-deterministic run to run.

// c[m,n] += a[m,k] * b[k,n]
template <typename T>
void matmul_nn_acc(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        T* crow = c + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const T aip = a[i * k + p];
            if (aip == T(0)) continue;
            const T* brow = b + p * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
        }
    }
}

// c[m,n] += a[m,k] * b[n,k]^T   (rows of both operands are contiguous)
template <typename T>
void matmul_nt_acc(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const T* arow = a + i * k;
        T* crow = c + i * n;
        for (std::size_t j = 0; j < n; ++j) {
            const T* brow = b + j * k;
            T acc = T(0);
            for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
            crow[j] += acc;
        }
    }
}

// c[m,n] += a[k,m]^T * b[k,n]
template <typename T>
void matmul_tn_acc(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t p = 0; p < k; ++p) {
        const T* arow = a + p * m;
        const T* brow = b + p * n;
        for (std::size_t i = 0; i < m; ++i) {
            const T api = arow[i];
            if (api == T(0)) continue;
            T* crow = c + i * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += api * brow[j];
        }
    }
}

}  // namespace detail

// Fills `t` with i.i.d. N(mean, std^2) draws.
template <typename T>
void gaussian_fill(TensorT<T>& t, RandomSource& rng, double mean_v, double std_v) {
    if (std_v < 0.0) throw ValueError("gaussian_fill: negative std " + std::to_string(std_v));
    for (std::size_t i = 0; i < t.size(); ++i) {
        t[i] = static_cast<T>(mean_v + std_v * rng.gaussian());
    }
}

}  // namespace lora3d
