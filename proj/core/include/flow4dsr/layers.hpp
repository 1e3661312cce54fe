#pragma once

#include "flow4dsr/tensor.hpp"
#include "flow4dsr/volume.hpp"

namespace flow4dsr {

/// 3x3x3 convolution, stride 1, symmetric (edge-mirroring) padding so the
/// spatial dims are preserved. Weight layout (c_out, c_in, 3, 3, 3); the
/// inner loops run as im2col + GEMM.
template <typename T>
void conv3d_forward(const Tensor<T>& x, const T* weight, const T* bias, int c_out,
                    Tensor<T>& y);

/// Backward pass of conv3d_forward. Accumulates (+=) into dweight/dbias and,
/// when dx is non-null, writes the input gradient (dx must be zero-filled).
template <typename T>
void conv3d_backward(const Tensor<T>& x, const T* weight, int c_out, const Tensor<T>& dy,
                     T* dweight, T* dbias, Tensor<T>* dx);

template <typename T>
void relu_inplace(Tensor<T>& t);

/// dx = dy where y > 0 (in place on dy, using the forward output y).
template <typename T>
void relu_backward_inplace(const Tensor<T>& y, Tensor<T>& dy);

template <typename T>
void leaky_relu_inplace(Tensor<T>& t, T slope);

template <typename T>
void leaky_relu_backward_inplace(const Tensor<T>& y, Tensor<T>& dy, T slope);

template <typename T>
void tanh_inplace(Tensor<T>& t);

template <typename T>
void tanh_backward_inplace(const Tensor<T>& y, Tensor<T>& dy);

/// Trilinear 2x upsampling, align-corners-false convention: output sample i
/// reads the continuous source coordinate (i + 0.5)/2 - 0.5, edge-clamped.
/// Constants are preserved exactly.
template <typename T>
Tensor<T> upsample_trilinear2x(const Tensor<T>& x);

/// Adjoint of upsample_trilinear2x (scatter of output gradients).
template <typename T>
Tensor<T> upsample_trilinear2x_backward(const Tensor<T>& dy, const Vec3i& in_dims);

/// Shared trilinear 2x kernel on a raw channel volume; the network layer and
/// the interpolation baseline both call this so they share one convention.
template <typename T>
void trilinear2x_channel(const T* in, const Vec3i& in_dims, T* out);

template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
void split_channels(const Tensor<T>& cat, Tensor<T>& a, Tensor<T>& b);

} // namespace flow4dsr
