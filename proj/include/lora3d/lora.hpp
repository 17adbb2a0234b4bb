#pragma once

#include <optional>

#include "lora3d/layers.hpp"

namespace lora3d {

// Low-rank adapter for one 3D convolution. The kernel [d_out, d_in, k, k, k]
// is viewed row-major as a [d_out, d_in*k^3] matrix and the trainable update
// is delta_W = scale * B * A with B [d_out, r] and A [r, d_in*k^3]. B starts
// at zero so a freshly adapted convolution computes exactly what the frozen
// one does.
template <typename T>
struct LoraAdapterT {
    TensorT<T> A;   // [r, d_in * k^3]
    TensorT<T> B;   // [d_out, r]
    T scale = T(1);

    std::size_t rank() const { return B.dim(1); }
    std::size_t param_count() const { return A.size() + B.size(); }
};

using LoraAdapter = LoraAdapterT<float>;

// Number of trainable entries of one adapter: r * (d_out + d_in * k^3).
inline std::size_t lora_param_count(std::size_t d_out, std::size_t d_in, std::size_t k,
                                    std::size_t r) {
    return r * (d_out + d_in * k * k * k);
}

template <typename T>
LoraAdapterT<T> init_adapter(std::size_t d_out, std::size_t d_in, std::size_t k, std::size_t r,
                             RandomSource& rng, T scale = T(1), double init_std = 0.01) {
    if (d_out == 0 || d_in == 0 || k == 0 || r == 0) {
        throw ValueError("init_adapter: dimensions must be positive");
    }
    const std::size_t cols = d_in * k * k * k;
    if (r > d_out || r > cols) {
        throw ValueError("init_adapter: rank " + std::to_string(r) +
                         " exceeds matrix dimensions " + std::to_string(d_out) + "x" +
                         std::to_string(cols));
    }
    LoraAdapterT<T> adapter;
    adapter.A = TensorT<T>({r, cols});
    gaussian_fill(adapter.A, rng, 0.0, init_std);
    adapter.B = TensorT<T>::zeros({d_out, r});
    adapter.scale = scale;
    return adapter;
}

// Frozen convolution with an optional adapter attached in parallel.
template <typename T>
struct AdaptedConv3dT {
    Conv3dT<T> frozen;
    std::optional<LoraAdapterT<T>> adapter;
};

using AdaptedConv3d = AdaptedConv3dT<float>;

// scale * reshape(B A, [d_out, d_in, k, k, k])
template <typename T>
TensorT<T> delta_weight(const LoraAdapterT<T>& adapter, const Shape& weight_shape) {
    TensorT<T> dw = matmul(adapter.B, adapter.A).reshape(weight_shape);
    if (adapter.scale != T(1)) dw = scale(dw, adapter.scale);
    return dw;
}

template <typename T>
TensorT<T> merged_weight(const AdaptedConv3dT<T>& conv) {
    if (!conv.adapter) return conv.frozen.weight;
    return add(conv.frozen.weight, delta_weight(*conv.adapter, conv.frozen.weight.shape()));
}

// Forward through the merged weight W + scale * reshape(BA). Equivalent to
// summing the frozen path and the delta path, at the cost of one convolution.
template <typename T>
TensorT<T> adapted_forward(const AdaptedConv3dT<T>& conv, const TensorT<T>& x) {
    if (!conv.adapter) return conv3d_forward(conv.frozen, x);
    Conv3dT<T> merged = conv.frozen;
    merged.weight = merged_weight(conv);
    return conv3d_forward(merged, x);
}

// The same map computed as two explicit convolutions, frozen plus delta.
// The delta path shares the frozen stride and padding. Kept as a second
// algebraic route for equivalence checks.
template <typename T>
TensorT<T> adapted_forward_two_path(const AdaptedConv3dT<T>& conv, const TensorT<T>& x) {
    TensorT<T> frozen_out = conv3d_forward(conv.frozen, x);
    if (!conv.adapter) return frozen_out;
    Conv3dT<T> delta_conv = conv.frozen;
    delta_conv.weight = delta_weight(*conv.adapter, conv.frozen.weight.shape());
    delta_conv.bias.reset();
    return add(frozen_out, conv3d_forward(delta_conv, x));
}

template <typename T>
struct AdaptedGradsT {
    TensorT<T> dinput;
    TensorT<T> dA;   // empty when no adapter is attached
    TensorT<T> dB;
};

// Reverse pass for an adapted convolution. Only the adapter factors receive
// parameter gradients; the frozen weight and bias do not. With G the weight
// gradient of the merged convolution flattened to [d_out, d_in*k^3]:
//   dL/dA = scale * B^T G,   dL/dB = scale * G A^T.
template <typename T>
AdaptedGradsT<T> adapter_backward(const AdaptedConv3dT<T>& conv, const TensorT<T>& x,
                                  const TensorT<T>& grad_out) {
    AdaptedGradsT<T> out;
    if (!conv.adapter) {
        // Frozen-only layer: still needs the input gradient to keep the chain
        // going, parameter gradients are discarded.
        Conv3dT<T> plain = conv.frozen;
        plain.bias.reset();
        ConvGradsT<T> g = conv3d_backward(plain, x, grad_out);
        out.dinput = std::move(g.dinput);
        return out;
    }
    Conv3dT<T> merged = conv.frozen;
    merged.weight = merged_weight(conv);
    merged.bias.reset();
    ConvGradsT<T> g = conv3d_backward(merged, x, grad_out);
    out.dinput = std::move(g.dinput);

    const LoraAdapterT<T>& ad = *conv.adapter;
    const std::size_t d_out = ad.B.dim(0), r = ad.B.dim(1), cols = ad.A.dim(1);
    TensorT<T> gmat = g.dweight.reshape({d_out, cols});
    out.dA = TensorT<T>({r, cols});
    out.dB = TensorT<T>({d_out, r});
    // dA = scale * B^T * G
    detail::matmul_tn_acc(ad.B.data(), gmat.data(), out.dA.data(), r, d_out, cols);
    // dB = scale * G * A^T
    detail::matmul_nt_acc(gmat.data(), ad.A.data(), out.dB.data(), d_out, cols, r);
    if (ad.scale != T(1)) {
        for (std::size_t i = 0; i < out.dA.size(); ++i) out.dA[i] *= ad.scale;
        for (std::size_t i = 0; i < out.dB.size(); ++i) out.dB[i] *= ad.scale;
    }
    return out;
}

// Folds the adapter into the frozen weight and drops it.
template <typename T>
Conv3dT<T> merge(const AdaptedConv3dT<T>& conv) {
    Conv3dT<T> merged = conv.frozen;
    merged.weight = merged_weight(conv);
    return merged;
}

}  // namespace lora3d
