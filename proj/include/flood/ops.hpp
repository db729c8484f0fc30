#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "flood/tensor.hpp"

// Differentiable tensor operations. Every op takes the graph it records into;
// a non-recording graph (Graph<T>{false}) runs them in inference mode.
namespace flood {

template <typename T>
Tensor<T> add(Graph<T>& g, const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> sub(Graph<T>& g, const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> mul(Graph<T>& g, const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> scale(Graph<T>& g, const Tensor<T>& a, T factor);

// x + b where b's shape equals the trailing dimensions of x.
template <typename T>
Tensor<T> add_broadcast(Graph<T>& g, const Tensor<T>& x, const Tensor<T>& b);

template <typename T>
Tensor<T> matmul(Graph<T>& g, const Tensor<T>& a, const Tensor<T>& b);

// x[..., in] * w[in, out] (+ bias[out]). bias may be null.
template <typename T>
Tensor<T> linear(Graph<T>& g, const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>* bias);

// a[B,m,k] * b[B,k,n], or a * b^T with b[B,n,k] when transpose_b.
template <typename T>
Tensor<T> batched_matmul(Graph<T>& g, const Tensor<T>& a, const Tensor<T>& b, bool transpose_b);

template <typename T>
Tensor<T> reshape(Graph<T>& g, const Tensor<T>& x, Shape shape);
template <typename T>
Tensor<T> permute(Graph<T>& g, const Tensor<T>& x, const std::vector<int>& perm);
template <typename T>
Tensor<T> transpose(Graph<T>& g, const Tensor<T>& x);  // rank 2
template <typename T>
Tensor<T> concat(Graph<T>& g, const std::vector<Tensor<T>>& parts, int axis);

// Views x as rows of its last dimension and selects rows[i] for each output
// row. out_shape must hold rows.size() * x.shape().back() elements.
template <typename T>
Tensor<T> gather_rows(Graph<T>& g, const Tensor<T>& x, std::span<const Index> rows, Shape out_shape);

template <typename T>
Tensor<T> softmax(Graph<T>& g, const Tensor<T>& x, int axis);
// x / sum(|x|) along axis.
template <typename T>
Tensor<T> l1_normalize(Graph<T>& g, const Tensor<T>& x, int axis);

template <typename T>
Tensor<T> layer_norm(Graph<T>& g, const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps);

enum class Activation { relu, gelu };

// gelu uses the tanh approximation 0.5x(1 + tanh(sqrt(2/pi)(x + 0.044715x^3))).
template <typename T>
Tensor<T> activation(Graph<T>& g, const Tensor<T>& x, Activation kind);

// Inverted dropout; identity when !training or rate == 0. rate must lie in [0, 1).
template <typename T>
Tensor<T> dropout(Graph<T>& g, const Tensor<T>& x, double rate, bool training, std::uint64_t seed);

// NHWC cross-correlation; kernel is [kh, kw, Cin, Cout].
template <typename T>
Tensor<T> conv2d(Graph<T>& g, const Tensor<T>& x, const Tensor<T>& kernel, int stride, int padding);

// NHWC max pooling; padded cells never win.
template <typename T>
Tensor<T> max_pool2d(Graph<T>& g, const Tensor<T>& x, int kernel, int stride, int padding);

// Mean over `axis`; the axis is removed (a rank-1 input yields shape [1]).
template <typename T>
Tensor<T> mean_axis(Graph<T>& g, const Tensor<T>& x, int axis);

template <typename T>
Tensor<T> sum(Graph<T>& g, const Tensor<T>& x);
template <typename T>
Tensor<T> mean(Graph<T>& g, const Tensor<T>& x);

// Mean negative log-likelihood of softmax(logits) at labels, via log-sum-exp.
template <typename T>
Tensor<T> cross_entropy_logits(Graph<T>& g, const Tensor<T>& logits, std::span<const int> labels);

template <typename T>
Tensor<T> relu(Graph<T>& g, const Tensor<T>& x) {
  return activation(g, x, Activation::relu);
}
template <typename T>
Tensor<T> gelu(Graph<T>& g, const Tensor<T>& x) {
  return activation(g, x, Activation::gelu);
}

}  // namespace flood
