#pragma once

#include "flood/tensor.hpp"

// Data-parallel kernels behind the differentiable ops. Every parallel loop
// partitions *outputs*; each output element is reduced in a fixed sequential
// order, so results are bitwise identical for any thread count.
//
// reference:: holds straightforward serial versions used by the tests and the
// benchmark as ground truth.
namespace flood::kernels {

enum class Trans : bool { no = false, yes = true };

// C[m,n] (+)= op(A)[m,k] * op(B)[k,n]. A is stored [m,k] (or [k,m] when
// transposed), B is stored [k,n] (or [n,k]). Parallel over rows of C.
template <typename T>
void gemm(Trans ta, Trans tb, Index m, Index n, Index k, const T* a, const T* b, T* c, bool accumulate);

// `batch` independent products with contiguous operands; parallel over the batch.
template <typename T>
void gemm_batched(Trans ta, Trans tb, Index batch, Index m, Index n, Index k, const T* a, const T* b, T* c,
                  bool accumulate);

// Geometry of one NHWC convolution / pooling window sweep.
struct ConvGeometry {
  Index height, width, channels;  // input
  Index kernel_h, kernel_w;
  Index stride, padding;
  Index out_h() const { return (height + 2 * padding - kernel_h) / stride + 1; }
  Index out_w() const { return (width + 2 * padding - kernel_w) / stride + 1; }
  Index patch() const { return kernel_h * kernel_w * channels; }
};

// cols[images*out_h*out_w, kh*kw*C] from images stored back to back. Padding reads as zero.
template <typename T>
void im2col(const ConvGeometry& g, Index images, const T* x, T* cols);

// Adjoint of im2col: dx += scatter(dcols).
template <typename T>
void col2im(const ConvGeometry& g, Index images, const T* dcols, T* dx);

// Row-wise numerically stabilized softmax of a [rows, cols] block.
template <typename T>
void softmax_rows(Index rows, Index cols, const T* x, T* y);

namespace reference {

template <typename T>
void gemm(Trans ta, Trans tb, Index m, Index n, Index k, const T* a, const T* b, T* c, bool accumulate);

template <typename T>
void im2col(const ConvGeometry& g, Index images, const T* x, T* cols);

template <typename T>
void col2im(const ConvGeometry& g, Index images, const T* dcols, T* dx);

template <typename T>
void softmax_rows(Index rows, Index cols, const T* x, T* y);

}  // namespace reference

// Number of OpenMP threads kernels will use (1 when built without OpenMP).
int max_threads();

}  // namespace flood::kernels
