#pragma once

#include <cstddef>
#include <vector>

#include "af3d/geometry.hpp"

// Single-sample 3D layer kernels. Activations are channel-major (c, z, y, x).
// Backward kernels accumulate (+=) into every gradient they touch; null pointers are skipped.
namespace af3d::ops {

/// C = alpha * op(A) * op(B) + beta * C, row-major.
template <typename T>
void gemm(bool trans_a, bool trans_b, int m, int n, int k, T alpha, const T* a, const T* b, T beta, T* c);

/// 3x3x3 (pad 1) or 1x1x1 convolution, stride 1. Weights are [cout][cin][k^3]; bias may be null.
template <typename T>
void conv_forward(const T* in, int cin, Dims3 d, const T* w, const T* bias, int cout, int k, T* out,
                  std::vector<T>& scratch);

template <typename T>
void conv_backward(const T* in, int cin, Dims3 d, const T* w, int cout, int k, const T* gout, T* gin, T* gw,
                   T* gbias, std::vector<T>& scratch);

/// 2x2x2 stride-2 convolution; `d` is the (even) input size. Weights are [cout][cin][8].
template <typename T>
void down_forward(const T* in, int cin, Dims3 d, const T* w, const T* bias, int cout, T* out,
                  std::vector<T>& scratch);

template <typename T>
void down_backward(const T* in, int cin, Dims3 d, const T* w, int cout, const T* gout, T* gin, T* gw, T* gbias,
                   std::vector<T>& scratch);

/// 2x2x2 stride-2 transposed convolution; `d` is the input size. Weights are [cin][cout][8].
template <typename T>
void up_forward(const T* in, int cin, Dims3 d, const T* w, const T* bias, int cout, T* out, std::vector<T>& scratch);

template <typename T>
void up_backward(const T* in, int cin, Dims3 d, const T* w, int cout, const T* gout, T* gin, T* gw, T* gbias,
                 std::vector<T>& scratch);

/// Per-channel affine normalisation in place. With `instance` the statistics are the
/// channel's own spatial mean/variance; otherwise statistics are fixed at (0, 1).
/// xhat and inv_std receive what the backward pass needs.
template <typename T>
void norm_forward(T* x, int channels, std::size_t n, const T* gamma, const T* beta, bool instance, T* xhat,
                  T* inv_std);

template <typename T>
void norm_backward(const T* gy, int channels, std::size_t n, const T* gamma, const T* xhat, const T* inv_std,
                   bool instance, T* gx, T* ggamma, T* gbeta);

template <typename T>
void relu_forward(T* x, std::size_t n);

/// gy is overwritten with the masked gradient, using the post-activation values y.
template <typename T>
void relu_backward(const T* y, T* gy, std::size_t n);

}  // namespace af3d::ops
