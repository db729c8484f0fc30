#include "flood/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>

#include "flood/kernels.hpp"
#include "flood/random.hpp"

namespace flood {

namespace {

template <typename T>
using Store = std::shared_ptr<TensorStorage<T>>;

// Gradient buffer of an input, or null when it does not take gradients.
template <typename T>
T* grad_ptr(const Store<T>& s) {
  return s->requires_grad ? s->ensure_grad().data() : nullptr;
}

int normalize_axis(int axis, int rank) {
  if (axis < 0) axis += rank;
  if (axis < 0 || axis >= rank) throw InvalidShape("axis " + std::to_string(axis) + " out of range");
  return axis;
}

struct AxisSplit {
  Index outer = 1, len = 1, inner = 1;
};

AxisSplit split_axis(const Shape& s, int axis) {
  AxisSplit r;
  for (int i = 0; i < static_cast<int>(s.size()); ++i) {
    if (i < axis) r.outer *= s[static_cast<std::size_t>(i)];
    else if (i == axis) r.len = s[static_cast<std::size_t>(i)];
    else r.inner *= s[static_cast<std::size_t>(i)];
  }
  return r;
}

void require_same_shape(const Shape& a, const Shape& b, const char* op) {
  if (a != b) throw InvalidShape(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}

constexpr double kGeluC = 0.044715;

template <typename T>
T gelu_forward(T x) {
  const T k = static_cast<T>(std::sqrt(2.0 / std::numbers::pi));
  const T t = std::tanh(k * (x + static_cast<T>(kGeluC) * x * x * x));
  return T{0.5} * x * (T{1} + t);
}

template <typename T>
T gelu_derivative(T x) {
  const T k = static_cast<T>(std::sqrt(2.0 / std::numbers::pi));
  const T c = static_cast<T>(kGeluC);
  const T t = std::tanh(k * (x + c * x * x * x));
  return T{0.5} * (T{1} + t) + T{0.5} * x * (T{1} - t * t) * k * (T{1} + 3 * c * x * x);
}

}  // namespace

template <typename T>
Tensor<T> add(Graph<T>& g, const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a.shape(), b.shape(), "add");
  Tensor<T> out(a.shape());
  auto o = out.data();
  auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] + y[i];
  if (g.needs_grad({&a, &b})) {
    Store<T> as = a.storage(), bs = b.storage(), os = out.storage();
    g.record("add", {&a, &b}, out, [as, bs, os] {
      const auto& go = os->grad;
      for (const auto& s : {as, bs}) {
        if (T* gx = grad_ptr(s)) {
          for (std::size_t i = 0; i < go.size(); ++i) gx[i] += go[i];
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> sub(Graph<T>& g, const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a.shape(), b.shape(), "sub");
  Tensor<T> out(a.shape());
  auto o = out.data();
  auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] - y[i];
  if (g.needs_grad({&a, &b})) {
    Store<T> as = a.storage(), bs = b.storage(), os = out.storage();
    g.record("sub", {&a, &b}, out, [as, bs, os] {
      const auto& go = os->grad;
      if (T* ga = grad_ptr(as))
        for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i];
      if (T* gb = grad_ptr(bs))
        for (std::size_t i = 0; i < go.size(); ++i) gb[i] -= go[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> mul(Graph<T>& g, const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a.shape(), b.shape(), "mul");
  Tensor<T> out(a.shape());
  auto o = out.data();
  auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] * y[i];
  if (g.needs_grad({&a, &b})) {
    Store<T> as = a.storage(), bs = b.storage(), os = out.storage();
    g.record("mul", {&a, &b}, out, [as, bs, os] {
      const auto& go = os->grad;
      if (T* ga = grad_ptr(as))
        for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * bs->value[i];
      if (T* gb = grad_ptr(bs))
        for (std::size_t i = 0; i < go.size(); ++i) gb[i] += go[i] * as->value[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> scale(Graph<T>& g, const Tensor<T>& a, T factor) {
  Tensor<T> out(a.shape());
  auto o = out.data();
  auto x = a.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] * factor;
  if (g.needs_grad({&a})) {
    Store<T> as = a.storage(), os = out.storage();
    g.record("scale", {&a}, out, [as, os, factor] {
      const auto& go = os->grad;
      T* ga = grad_ptr(as);
      for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * factor;
    });
  }
  return out;
}

template <typename T>
Tensor<T> add_broadcast(Graph<T>& g, const Tensor<T>& x, const Tensor<T>& b) {
  const auto& xs = x.shape();
  const auto& bs = b.shape();
  if (bs.size() > xs.size() || !std::equal(bs.begin(), bs.end(), xs.end() - static_cast<long>(bs.size()))) {
    throw InvalidShape("add_broadcast: " + shape_str(bs) + " is not a trailing shape of " + shape_str(xs));
  }
  const Index inner = b.numel();
  const Index outer = x.numel() / inner;
  Tensor<T> out(xs);
  auto o = out.data();
  auto xv = x.data(), bv = b.data();
#pragma omp parallel for schedule(static) if (x.numel() > (1 << 16))
  for (Index r = 0; r < outer; ++r)
    for (Index j = 0; j < inner; ++j) o[r * inner + j] = xv[r * inner + j] + bv[j];
  if (g.needs_grad({&x, &b})) {
    Store<T> xst = x.storage(), bst = b.storage(), os = out.storage();
    g.record("add_broadcast", {&x, &b}, out, [xst, bst, os, outer, inner] {
      const auto& go = os->grad;
      if (T* gx = grad_ptr(xst))
        for (std::size_t i = 0; i < go.size(); ++i) gx[i] += go[i];
      if (T* gb = grad_ptr(bst)) {
        for (Index r = 0; r < outer; ++r)
          for (Index j = 0; j < inner; ++j) gb[j] += go[r * inner + j];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> matmul(Graph<T>& g, const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw InvalidShape("matmul: incompatible shapes " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  const Index m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor<T> out(Shape{m, n});
  using kernels::Trans;
  kernels::gemm(Trans::no, Trans::no, m, n, k, a.data().data(), b.data().data(), out.data().data(), false);
  if (g.needs_grad({&a, &b})) {
    Store<T> as = a.storage(), bs = b.storage(), os = out.storage();
    g.record("matmul", {&a, &b}, out, [as, bs, os, m, n, k] {
      const T* go = os->grad.data();
      if (T* ga = grad_ptr(as)) kernels::gemm(Trans::no, Trans::yes, m, k, n, go, bs->value.data(), ga, true);
      if (T* gb = grad_ptr(bs)) kernels::gemm(Trans::yes, Trans::no, k, n, m, as->value.data(), go, gb, true);
    });
  }
  return out;
}

template <typename T>
Tensor<T> linear(Graph<T>& g, const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>* bias) {
  if (w.rank() != 2 || x.shape().back() != w.dim(0)) {
    throw InvalidShape("linear: input " + shape_str(x.shape()) + " incompatible with weight " + shape_str(w.shape()));
  }
  const Index in = w.dim(0), outd = w.dim(1);
  if (bias && (bias->rank() != 1 || bias->dim(0) != outd)) {
    throw InvalidShape("linear: bias shape " + shape_str(bias->shape()) + " does not match output width");
  }
  const Index rows = x.numel() / in;
  Shape os_shape = x.shape();
  os_shape.back() = outd;
  Tensor<T> out(os_shape);
  using kernels::Trans;
  T* o = out.data().data();
  kernels::gemm(Trans::no, Trans::no, rows, outd, in, x.data().data(), w.data().data(), o, false);
  if (bias) {
    const T* bv = bias->data().data();
    for (Index r = 0; r < rows; ++r)
      for (Index j = 0; j < outd; ++j) o[r * outd + j] += bv[j];
  }
  if (g.needs_grad({&x, &w, bias})) {
    Store<T> xs = x.storage(), ws = w.storage(), os = out.storage();
    Store<T> bs = bias ? bias->storage() : nullptr;
    g.record("linear", {&x, &w, bias}, out, [xs, ws, bs, os, rows, in, outd] {
      const T* go = os->grad.data();
      if (T* gx = grad_ptr(xs)) kernels::gemm(Trans::no, Trans::yes, rows, in, outd, go, ws->value.data(), gx, true);
      if (T* gw = grad_ptr(ws)) kernels::gemm(Trans::yes, Trans::no, in, outd, rows, xs->value.data(), go, gw, true);
      if (bs) {
        if (T* gb = grad_ptr(bs))
          for (Index r = 0; r < rows; ++r)
            for (Index j = 0; j < outd; ++j) gb[j] += go[r * outd + j];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> batched_matmul(Graph<T>& g, const Tensor<T>& a, const Tensor<T>& b, bool transpose_b) {
  if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0)) {
    throw InvalidShape("batched_matmul: expected matching rank-3 operands, got " + shape_str(a.shape()) + " and " +
                       shape_str(b.shape()));
  }
  const Index batch = a.dim(0), m = a.dim(1), k = a.dim(2);
  const Index kb = transpose_b ? b.dim(2) : b.dim(1);
  const Index n = transpose_b ? b.dim(1) : b.dim(2);
  if (kb != k) {
    throw InvalidShape("batched_matmul: inner dimensions differ: " + shape_str(a.shape()) + " and " +
                       shape_str(b.shape()));
  }
  Tensor<T> out(Shape{batch, m, n});
  using kernels::Trans;
  const Trans tb = transpose_b ? Trans::yes : Trans::no;
  kernels::gemm_batched(Trans::no, tb, batch, m, n, k, a.data().data(), b.data().data(), out.data().data(), false);
  if (g.needs_grad({&a, &b})) {
    Store<T> as = a.storage(), bs = b.storage(), os = out.storage();
    g.record("batched_matmul", {&a, &b}, out, [as, bs, os, batch, m, n, k, transpose_b] {
      const T* go = os->grad.data();
      if (T* ga = grad_ptr(as)) {
        // dA = dC * B^T, or dC * B when B was used transposed.
        kernels::gemm_batched(Trans::no, transpose_b ? Trans::no : Trans::yes, batch, m, k, n, go,
                              bs->value.data(), ga, true);
      }
      if (T* gb = grad_ptr(bs)) {
        if (transpose_b) {
          kernels::gemm_batched(Trans::yes, Trans::no, batch, n, k, m, go, as->value.data(), gb, true);
        } else {
          kernels::gemm_batched(Trans::yes, Trans::no, batch, k, n, m, as->value.data(), go, gb, true);
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> reshape(Graph<T>& g, const Tensor<T>& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw InvalidShape("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  }
  Tensor<T> out(std::move(shape), std::vector<T>(x.data().begin(), x.data().end()));
  if (g.needs_grad({&x})) {
    Store<T> xs = x.storage(), os = out.storage();
    g.record("reshape", {&x}, out, [xs, os] {
      const auto& go = os->grad;
      T* gx = grad_ptr(xs);
      for (std::size_t i = 0; i < go.size(); ++i) gx[i] += go[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> permute(Graph<T>& g, const Tensor<T>& x, const std::vector<int>& perm) {
  const int r = x.rank();
  if (static_cast<int>(perm.size()) != r) throw InvalidShape("permute: rank mismatch");
  std::vector<bool> seen(static_cast<std::size_t>(r), false);
  for (int p : perm) {
    if (p < 0 || p >= r || seen[static_cast<std::size_t>(p)]) throw InvalidShape("permute: invalid permutation");
    seen[static_cast<std::size_t>(p)] = true;
  }
  const auto& xs = x.shape();
  std::vector<Index> in_stride(static_cast<std::size_t>(r));
  Index acc = 1;
  for (int i = r - 1; i >= 0; --i) {
    in_stride[static_cast<std::size_t>(i)] = acc;
    acc *= xs[static_cast<std::size_t>(i)];
  }
  Shape out_shape(static_cast<std::size_t>(r));
  std::vector<Index> src_stride(static_cast<std::size_t>(r));
  for (int i = 0; i < r; ++i) {
    out_shape[static_cast<std::size_t>(i)] = xs[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])];
    src_stride[static_cast<std::size_t>(i)] = in_stride[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])];
  }
  // Source offset of every output element, in output order.
  const Index n = x.numel();
  auto offsets = std::make_shared<std::vector<Index>>(static_cast<std::size_t>(n));
  {
    std::vector<Index> idx(static_cast<std::size_t>(r), 0);
    Index src = 0;
    for (Index o = 0; o < n; ++o) {
      (*offsets)[static_cast<std::size_t>(o)] = src;
      for (int d = r - 1; d >= 0; --d) {
        auto du = static_cast<std::size_t>(d);
        if (++idx[du] < out_shape[du]) {
          src += src_stride[du];
          break;
        }
        src -= src_stride[du] * (idx[du] - 1);
        idx[du] = 0;
      }
    }
  }
  Tensor<T> out(out_shape);
  auto o = out.data();
  auto xv = x.data();
  for (Index i = 0; i < n; ++i) o[i] = xv[(*offsets)[static_cast<std::size_t>(i)]];
  if (g.needs_grad({&x})) {
    Store<T> xst = x.storage(), os = out.storage();
    g.record("permute", {&x}, out, [xst, os, offsets] {
      const auto& go = os->grad;
      T* gx = grad_ptr(xst);
      for (std::size_t i = 0; i < go.size(); ++i) gx[(*offsets)[i]] += go[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> transpose(Graph<T>& g, const Tensor<T>& x) {
  if (x.rank() != 2) throw InvalidShape("transpose: expected rank 2, got " + shape_str(x.shape()));
  return permute(g, x, {1, 0});
}

template <typename T>
Tensor<T> concat(Graph<T>& g, const std::vector<Tensor<T>>& parts, int axis) {
  if (parts.empty()) throw InvalidArgument("concat: no inputs");
  const int r = parts.front().rank();
  axis = normalize_axis(axis, r);
  Shape out_shape = parts.front().shape();
  Index total = 0;
  for (const auto& p : parts) {
    if (p.rank() != r) throw InvalidShape("concat: rank mismatch");
    for (int d = 0; d < r; ++d) {
      if (d != axis && p.shape()[static_cast<std::size_t>(d)] != out_shape[static_cast<std::size_t>(d)])
        throw InvalidShape("concat: shape mismatch " + shape_str(p.shape()) + " vs " + shape_str(out_shape));
    }
    total += p.dim(axis);
  }
  out_shape[static_cast<std::size_t>(axis)] = total;
  const AxisSplit os = split_axis(out_shape, axis);
  Tensor<T> out(out_shape);
  auto o = out.data();
  std::vector<Index> starts;
  Index start = 0;
  for (const auto& p : parts) {
    starts.push_back(start);
    const Index len = p.dim(axis);
    auto pv = p.data();
    for (Index ou = 0; ou < os.outer; ++ou)
      std::copy_n(pv.begin() + ou * len * os.inner, len * os.inner,
                  o.begin() + (ou * os.len + start) * os.inner);
    start += len;
  }
  std::vector<const Tensor<T>*> inputs;
  for (const auto& p : parts) inputs.push_back(&p);
  bool any = false;
  for (const auto* p : inputs) any = any || (g.recording() && p->requires_grad());
  if (any) {
    std::vector<Store<T>> stores;
    for (const auto& p : parts) stores.push_back(p.storage());
    Store<T> ost = out.storage();
    g.record("concat", inputs, out, [stores, ost, starts, os] {
      const auto& go = ost->grad;
      for (std::size_t i = 0; i < stores.size(); ++i) {
        T* gp = grad_ptr(stores[i]);
        if (!gp) continue;
        const Index len = static_cast<Index>(stores[i]->value.size()) / (os.outer * os.inner);
        for (Index ou = 0; ou < os.outer; ++ou)
          for (Index j = 0; j < len * os.inner; ++j)
            gp[ou * len * os.inner + j] += go[static_cast<std::size_t>((ou * os.len + starts[i]) * os.inner + j)];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> gather_rows(Graph<T>& g, const Tensor<T>& x, std::span<const Index> rows, Shape out_shape) {
  const Index width = x.shape().back();
  const Index in_rows = x.numel() / width;
  const auto n_out = static_cast<Index>(rows.size());
  if (shape_numel(out_shape) != n_out * width) {
    throw InvalidShape("gather_rows: output shape " + shape_str(out_shape) + " does not hold " +
                       std::to_string(n_out) + " rows of width " + std::to_string(width));
  }
  for (Index r : rows) {
    if (r < 0 || r >= in_rows) throw InvalidShape("gather_rows: row index out of range");
  }
  Tensor<T> out(std::move(out_shape));
  auto o = out.data();
  auto xv = x.data();
  for (Index i = 0; i < n_out; ++i)
    std::copy_n(xv.begin() + rows[static_cast<std::size_t>(i)] * width, width, o.begin() + i * width);
  if (g.needs_grad({&x})) {
    Store<T> xs = x.storage(), os = out.storage();
    auto idx = std::make_shared<std::vector<Index>>(rows.begin(), rows.end());
    g.record("gather_rows", {&x}, out, [xs, os, idx, width] {
      const auto& go = os->grad;
      T* gx = grad_ptr(xs);
      for (std::size_t i = 0; i < idx->size(); ++i) {
        T* dst = gx + (*idx)[i] * width;
        const T* src = go.data() + static_cast<Index>(i) * width;
        for (Index j = 0; j < width; ++j) dst[j] += src[j];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> softmax(Graph<T>& g, const Tensor<T>& x, int axis) {
  axis = normalize_axis(axis, x.rank());
  const AxisSplit s = split_axis(x.shape(), axis);
  Tensor<T> out(x.shape());
  T* y = out.data().data();
  const T* xv = x.data().data();
  if (s.inner == 1) {
    kernels::softmax_rows(s.outer, s.len, xv, y);
  } else {
    for (Index o = 0; o < s.outer; ++o)
      for (Index i = 0; i < s.inner; ++i) {
        const Index base = o * s.len * s.inner + i;
        T mx = -std::numeric_limits<T>::infinity();
        for (Index j = 0; j < s.len; ++j) mx = std::max(mx, xv[base + j * s.inner]);
        T sumv{};
        for (Index j = 0; j < s.len; ++j) {
          y[base + j * s.inner] = std::exp(xv[base + j * s.inner] - mx);
          sumv += y[base + j * s.inner];
        }
        for (Index j = 0; j < s.len; ++j) y[base + j * s.inner] /= sumv;
      }
  }
  if (g.needs_grad({&x})) {
    Store<T> xs = x.storage(), os = out.storage();
    g.record("softmax", {&x}, out, [xs, os, s] {
      const T* go = os->grad.data();
      const T* yv = os->value.data();
      T* gx = grad_ptr(xs);
#pragma omp parallel for schedule(static) if (s.outer * s.len * s.inner > (1 << 16))
      for (Index o = 0; o < s.outer; ++o)
        for (Index i = 0; i < s.inner; ++i) {
          const Index base = o * s.len * s.inner + i;
          T dot{};
          for (Index j = 0; j < s.len; ++j) dot += go[base + j * s.inner] * yv[base + j * s.inner];
          for (Index j = 0; j < s.len; ++j) {
            const Index q = base + j * s.inner;
            gx[q] += yv[q] * (go[q] - dot);
          }
        }
    });
  }
  return out;
}

template <typename T>
Tensor<T> l1_normalize(Graph<T>& g, const Tensor<T>& x, int axis) {
  axis = normalize_axis(axis, x.rank());
  const AxisSplit s = split_axis(x.shape(), axis);
  Tensor<T> out(x.shape());
  T* y = out.data().data();
  const T* xv = x.data().data();
  auto norms = std::make_shared<std::vector<T>>(static_cast<std::size_t>(s.outer * s.inner));
  for (Index o = 0; o < s.outer; ++o)
    for (Index i = 0; i < s.inner; ++i) {
      const Index base = o * s.len * s.inner + i;
      T n{};
      for (Index j = 0; j < s.len; ++j) n += std::abs(xv[base + j * s.inner]);
      (*norms)[static_cast<std::size_t>(o * s.inner + i)] = n;
      for (Index j = 0; j < s.len; ++j) y[base + j * s.inner] = n > T{} ? xv[base + j * s.inner] / n : T{};
    }
  if (g.needs_grad({&x})) {
    Store<T> xs = x.storage(), os = out.storage();
    g.record("l1_normalize", {&x}, out, [xs, os, s, norms] {
      const T* go = os->grad.data();
      const T* xv = xs->value.data();
      T* gx = grad_ptr(xs);
      for (Index o = 0; o < s.outer; ++o)
        for (Index i = 0; i < s.inner; ++i) {
          const T n = (*norms)[static_cast<std::size_t>(o * s.inner + i)];
          if (!(n > T{})) continue;
          const Index base = o * s.len * s.inner + i;
          T dot{};
          for (Index j = 0; j < s.len; ++j) dot += go[base + j * s.inner] * xv[base + j * s.inner];
          for (Index j = 0; j < s.len; ++j) {
            const Index q = base + j * s.inner;
            const T sign = xv[q] > T{} ? T{1} : (xv[q] < T{} ? T{-1} : T{});
            gx[q] += go[q] / n - sign * dot / (n * n);
          }
        }
    });
  }
  return out;
}

template <typename T>
Tensor<T> layer_norm(Graph<T>& g, const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps) {
  if (!(eps > T{})) throw InvalidArgument("layer_norm: eps must be positive");
  const Index d = x.shape().back();
  if (gamma.numel() != d || beta.numel() != d) {
    throw InvalidShape("layer_norm: gamma/beta must have " + std::to_string(d) + " elements");
  }
  const Index rows = x.numel() / d;
  Tensor<T> out(x.shape());
  auto stats = std::make_shared<std::vector<T>>(static_cast<std::size_t>(2 * rows));  // mean, rstd
  const T* xv = x.data().data();
  const T* gv = gamma.data().data();
  const T* bv = beta.data().data();
  T* y = out.data().data();
#pragma omp parallel for schedule(static) if (x.numel() > (1 << 16))
  for (Index r = 0; r < rows; ++r) {
    const T* xr = xv + r * d;
    T mu{};
    for (Index j = 0; j < d; ++j) mu += xr[j];
    mu /= static_cast<T>(d);
    T var{};
    for (Index j = 0; j < d; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= static_cast<T>(d);
    const T rstd = T{1} / std::sqrt(var + eps);
    (*stats)[static_cast<std::size_t>(2 * r)] = mu;
    (*stats)[static_cast<std::size_t>(2 * r + 1)] = rstd;
    for (Index j = 0; j < d; ++j) y[r * d + j] = (xr[j] - mu) * rstd * gv[j] + bv[j];
  }
  if (g.needs_grad({&x, &gamma, &beta})) {
    Store<T> xs = x.storage(), gs = gamma.storage(), bs = beta.storage(), os = out.storage();
    g.record("layer_norm", {&x, &gamma, &beta}, out, [xs, gs, bs, os, stats, rows, d] {
      const T* go = os->grad.data();
      const T* xv = xs->value.data();
      const T* gv = gs->value.data();
      T* ggam = grad_ptr(gs);
      T* gbet = grad_ptr(bs);
      if (ggam || gbet) {
        for (Index r = 0; r < rows; ++r) {
          const T mu = (*stats)[static_cast<std::size_t>(2 * r)];
          const T rstd = (*stats)[static_cast<std::size_t>(2 * r + 1)];
          for (Index j = 0; j < d; ++j) {
            const T xhat = (xv[r * d + j] - mu) * rstd;
            if (ggam) ggam[j] += go[r * d + j] * xhat;
            if (gbet) gbet[j] += go[r * d + j];
          }
        }
      }
      if (T* gx = grad_ptr(xs)) {
#pragma omp parallel for schedule(static) if (rows * d > (1 << 16))
        for (Index r = 0; r < rows; ++r) {
          const T mu = (*stats)[static_cast<std::size_t>(2 * r)];
          const T rstd = (*stats)[static_cast<std::size_t>(2 * r + 1)];
          T mean_g{}, mean_gx{};
          for (Index j = 0; j < d; ++j) {
            const T gh = go[r * d + j] * gv[j];
            const T xhat = (xv[r * d + j] - mu) * rstd;
            mean_g += gh;
            mean_gx += gh * xhat;
          }
          mean_g /= static_cast<T>(d);
          mean_gx /= static_cast<T>(d);
          for (Index j = 0; j < d; ++j) {
            const T gh = go[r * d + j] * gv[j];
            const T xhat = (xv[r * d + j] - mu) * rstd;
            gx[r * d + j] += rstd * (gh - mean_g - xhat * mean_gx);
          }
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> activation(Graph<T>& g, const Tensor<T>& x, Activation kind) {
  Tensor<T> out(x.shape());
  auto o = out.data();
  auto xv = x.data();
  const Index n = x.numel();
  if (kind == Activation::relu) {
    for (Index i = 0; i < n; ++i) o[i] = xv[i] > T{} ? xv[i] : T{};
  } else {
#pragma omp parallel for schedule(static) if (n > (1 << 16))
    for (Index i = 0; i < n; ++i) o[i] = gelu_forward(xv[i]);
  }
  if (g.needs_grad({&x})) {
    Store<T> xs = x.storage(), os = out.storage();
    g.record(kind == Activation::relu ? "relu" : "gelu", {&x}, out, [xs, os, kind, n] {
      const T* go = os->grad.data();
      const T* xv = xs->value.data();
      T* gx = grad_ptr(xs);
      if (kind == Activation::relu) {
        for (Index i = 0; i < n; ++i) gx[i] += xv[i] > T{} ? go[i] : T{};
      } else {
#pragma omp parallel for schedule(static) if (n > (1 << 16))
        for (Index i = 0; i < n; ++i) gx[i] += go[i] * gelu_derivative(xv[i]);
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> dropout(Graph<T>& g, const Tensor<T>& x, double rate, bool training, std::uint64_t seed) {
  if (!(rate >= 0.0 && rate < 1.0)) throw InvalidArgument("dropout: rate must lie in [0, 1)");
  if (!training || rate == 0.0) return x;
  const Index n = x.numel();
  auto mask = std::make_shared<std::vector<T>>(static_cast<std::size_t>(n));
  const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
  Rng rng(seed);
  for (auto& m : *mask) m = rng.uniform() >= rate ? keep_scale : T{};
  Tensor<T> out(x.shape());
  auto o = out.data();
  auto xv = x.data();
  for (Index i = 0; i < n; ++i) o[i] = xv[i] * (*mask)[static_cast<std::size_t>(i)];
  if (g.needs_grad({&x})) {
    Store<T> xs = x.storage(), os = out.storage();
    g.record("dropout", {&x}, out, [xs, os, mask] {
      const auto& go = os->grad;
      T* gx = grad_ptr(xs);
      for (std::size_t i = 0; i < go.size(); ++i) gx[i] += go[i] * (*mask)[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> conv2d(Graph<T>& g, const Tensor<T>& x, const Tensor<T>& kernel, int stride, int padding) {
  if (stride < 1) throw InvalidArgument("conv2d: stride must be >= 1");
  if (padding < 0) throw InvalidArgument("conv2d: padding must be >= 0");
  if (x.rank() != 4 || kernel.rank() != 4 || kernel.dim(2) != x.dim(3)) {
    throw InvalidShape("conv2d: input " + shape_str(x.shape()) + " incompatible with kernel " +
                       shape_str(kernel.shape()));
  }
  kernels::ConvGeometry geo{x.dim(1), x.dim(2), x.dim(3), kernel.dim(0), kernel.dim(1), stride, padding};
  if (geo.kernel_h > geo.height + 2 * padding || geo.kernel_w > geo.width + 2 * padding) {
    throw InvalidShape("conv2d: kernel " + shape_str(kernel.shape()) + " larger than padded input " +
                       shape_str(x.shape()));
  }
  const Index n = x.dim(0), cout = kernel.dim(3);
  const Index oh = geo.out_h(), ow = geo.out_w(), patch = geo.patch();
  const Index per_image = oh * ow;
  // Images per im2col chunk, bounding the column buffer to ~8M elements.
  const Index chunk = std::max<Index>(1, (Index{1} << 23) / std::max<Index>(1, per_image * patch));
  Tensor<T> out(Shape{n, oh, ow, cout});
  using kernels::Trans;
  {
    std::vector<T> cols;
    for (Index i0 = 0; i0 < n; i0 += chunk) {
      const Index cnt = std::min(chunk, n - i0);
      cols.resize(static_cast<std::size_t>(cnt * per_image * patch));
      kernels::im2col(geo, cnt, x.data().data() + i0 * geo.height * geo.width * geo.channels, cols.data());
      kernels::gemm(Trans::no, Trans::no, cnt * per_image, cout, patch, cols.data(), kernel.data().data(),
                    out.data().data() + i0 * per_image * cout, false);
    }
  }
  if (g.needs_grad({&x, &kernel})) {
    Store<T> xs = x.storage(), ks = kernel.storage(), os = out.storage();
    g.record("conv2d", {&x, &kernel}, out, [xs, ks, os, geo, n, cout, per_image, patch, chunk] {
      const T* go = os->grad.data();
      T* gk = grad_ptr(ks);
      T* gx = grad_ptr(xs);
      std::vector<T> cols, dcols;
      const Index img_size = geo.height * geo.width * geo.channels;
      for (Index i0 = 0; i0 < n; i0 += chunk) {
        const Index cnt = std::min(chunk, n - i0);
        const Index rows = cnt * per_image;
        const T* go_c = go + i0 * per_image * cout;
        if (gk) {
          cols.resize(static_cast<std::size_t>(rows * patch));
          kernels::im2col(geo, cnt, xs->value.data() + i0 * img_size, cols.data());
          kernels::gemm(Trans::yes, Trans::no, patch, cout, rows, cols.data(), go_c, gk, true);
        }
        if (gx) {
          dcols.resize(static_cast<std::size_t>(rows * patch));
          kernels::gemm(Trans::no, Trans::yes, rows, patch, cout, go_c, ks->value.data(), dcols.data(), false);
          kernels::col2im(geo, cnt, dcols.data(), gx + i0 * img_size);
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> max_pool2d(Graph<T>& g, const Tensor<T>& x, int kernel, int stride, int padding) {
  if (kernel < 1 || stride < 1 || padding < 0) throw InvalidArgument("max_pool2d: invalid geometry");
  if (x.rank() != 4) throw InvalidShape("max_pool2d: expected NHWC input, got " + shape_str(x.shape()));
  if (2 * padding > kernel) throw InvalidArgument("max_pool2d: padding must be at most half the window");
  const Index n = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3);
  if (kernel > h + 2 * padding || kernel > w + 2 * padding) {
    throw InvalidShape("max_pool2d: window larger than padded input " + shape_str(x.shape()));
  }
  const Index oh = (h + 2 * padding - kernel) / stride + 1;
  const Index ow = (w + 2 * padding - kernel) / stride + 1;
  Tensor<T> out(Shape{n, oh, ow, c});
  auto argmax = std::make_shared<std::vector<Index>>(static_cast<std::size_t>(out.numel()));
  const T* xv = x.data().data();
  T* y = out.data().data();
#pragma omp parallel for schedule(static) if (out.numel() * kernel * kernel > (1 << 16))
  for (Index r = 0; r < n * oh; ++r) {
    const Index img = r / oh, oy = r % oh;
    for (Index ox = 0; ox < ow; ++ox) {
      for (Index ch = 0; ch < c; ++ch) {
        T best = -std::numeric_limits<T>::infinity();
        Index best_i = -1;
        for (Index ky = 0; ky < kernel; ++ky) {
          const Index iy = oy * stride - padding + ky;
          if (iy < 0 || iy >= h) continue;
          for (Index kx = 0; kx < kernel; ++kx) {
            const Index ix = ox * stride - padding + kx;
            if (ix < 0 || ix >= w) continue;
            const Index src = ((img * h + iy) * w + ix) * c + ch;
            if (best_i < 0 || xv[src] > best) {
              best = xv[src];
              best_i = src;
            }
          }
        }
        const Index dst = ((img * oh + oy) * ow + ox) * c + ch;
        y[dst] = best;
        (*argmax)[static_cast<std::size_t>(dst)] = best_i;
      }
    }
  }
  if (g.needs_grad({&x})) {
    Store<T> xs = x.storage(), os = out.storage();
    g.record("max_pool2d", {&x}, out, [xs, os, argmax] {
      const auto& go = os->grad;
      T* gx = grad_ptr(xs);
      for (std::size_t i = 0; i < go.size(); ++i) gx[(*argmax)[i]] += go[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> mean_axis(Graph<T>& g, const Tensor<T>& x, int axis) {
  axis = normalize_axis(axis, x.rank());
  const AxisSplit s = split_axis(x.shape(), axis);
  Shape out_shape;
  for (int i = 0; i < x.rank(); ++i)
    if (i != axis) out_shape.push_back(x.shape()[static_cast<std::size_t>(i)]);
  if (out_shape.empty()) out_shape.push_back(1);
  Tensor<T> out(out_shape);
  const T* xv = x.data().data();
  T* y = out.data().data();
  const T inv = T{1} / static_cast<T>(s.len);
  for (Index o = 0; o < s.outer; ++o)
    for (Index i = 0; i < s.inner; ++i) {
      T acc{};
      for (Index j = 0; j < s.len; ++j) acc += xv[(o * s.len + j) * s.inner + i];
      y[o * s.inner + i] = acc * inv;
    }
  if (g.needs_grad({&x})) {
    Store<T> xs = x.storage(), os = out.storage();
    g.record("mean_axis", {&x}, out, [xs, os, s, inv] {
      const T* go = os->grad.data();
      T* gx = grad_ptr(xs);
      for (Index o = 0; o < s.outer; ++o)
        for (Index j = 0; j < s.len; ++j)
          for (Index i = 0; i < s.inner; ++i) gx[(o * s.len + j) * s.inner + i] += go[o * s.inner + i] * inv;
    });
  }
  return out;
}

template <typename T>
Tensor<T> sum(Graph<T>& g, const Tensor<T>& x) {
  T acc{};
  for (T v : x.data()) acc += v;
  Tensor<T> out = Tensor<T>::scalar(acc);
  if (g.needs_grad({&x})) {
    Store<T> xs = x.storage(), os = out.storage();
    g.record("sum", {&x}, out, [xs, os] {
      const T go = os->grad[0];
      T* gx = grad_ptr(xs);
      for (std::size_t i = 0; i < xs->value.size(); ++i) gx[i] += go;
    });
  }
  return out;
}

template <typename T>
Tensor<T> mean(Graph<T>& g, const Tensor<T>& x) {
  return scale(g, sum(g, x), T{1} / static_cast<T>(x.numel()));
}

template <typename T>
Tensor<T> cross_entropy_logits(Graph<T>& g, const Tensor<T>& logits, std::span<const int> labels) {
  if (logits.rank() != 2) throw InvalidShape("cross_entropy: logits must be [N, K], got " + shape_str(logits.shape()));
  const Index n = logits.dim(0), k = logits.dim(1);
  if (static_cast<Index>(labels.size()) != n) throw InvalidShape("cross_entropy: label count does not match batch");
  for (int l : labels) {
    if (l < 0 || l >= k) throw InvalidArgument("cross_entropy: label " + std::to_string(l) + " out of range");
  }
  auto probs = std::make_shared<std::vector<T>>(static_cast<std::size_t>(n * k));
  const T* z = logits.data().data();
  T total{};
  for (Index i = 0; i < n; ++i) {
    const T* zr = z + i * k;
    T mx = zr[0];
    for (Index j = 1; j < k; ++j) mx = std::max(mx, zr[j]);
    T se{};
    for (Index j = 0; j < k; ++j) se += std::exp(zr[j] - mx);
    const T lse = mx + std::log(se);
    for (Index j = 0; j < k; ++j) (*probs)[static_cast<std::size_t>(i * k + j)] = std::exp(zr[j] - lse);
    total += lse - zr[labels[static_cast<std::size_t>(i)]];
  }
  Tensor<T> out = Tensor<T>::scalar(total / static_cast<T>(n));
  if (g.needs_grad({&logits})) {
    Store<T> ls = logits.storage(), os = out.storage();
    std::vector<int> lab(labels.begin(), labels.end());
    g.record("cross_entropy", {&logits}, out, [ls, os, probs, lab = std::move(lab), n, k] {
      const T go = os->grad[0] / static_cast<T>(n);
      T* gl = grad_ptr(ls);
      for (Index i = 0; i < n; ++i)
        for (Index j = 0; j < k; ++j) {
          const T onehot = lab[static_cast<std::size_t>(i)] == j ? T{1} : T{};
          gl[i * k + j] += go * ((*probs)[static_cast<std::size_t>(i * k + j)] - onehot);
        }
    });
  }
  return out;
}

#define FLOOD_OPS_INSTANTIATE(T)                                                                    \
  template Tensor<T> add<T>(Graph<T>&, const Tensor<T>&, const Tensor<T>&);                         \
  template Tensor<T> sub<T>(Graph<T>&, const Tensor<T>&, const Tensor<T>&);                         \
  template Tensor<T> mul<T>(Graph<T>&, const Tensor<T>&, const Tensor<T>&);                         \
  template Tensor<T> scale<T>(Graph<T>&, const Tensor<T>&, T);                                      \
  template Tensor<T> add_broadcast<T>(Graph<T>&, const Tensor<T>&, const Tensor<T>&);               \
  template Tensor<T> matmul<T>(Graph<T>&, const Tensor<T>&, const Tensor<T>&);                      \
  template Tensor<T> linear<T>(Graph<T>&, const Tensor<T>&, const Tensor<T>&, const Tensor<T>*);    \
  template Tensor<T> batched_matmul<T>(Graph<T>&, const Tensor<T>&, const Tensor<T>&, bool);        \
  template Tensor<T> reshape<T>(Graph<T>&, const Tensor<T>&, Shape);                                \
  template Tensor<T> permute<T>(Graph<T>&, const Tensor<T>&, const std::vector<int>&);              \
  template Tensor<T> transpose<T>(Graph<T>&, const Tensor<T>&);                                     \
  template Tensor<T> concat<T>(Graph<T>&, const std::vector<Tensor<T>>&, int);                      \
  template Tensor<T> gather_rows<T>(Graph<T>&, const Tensor<T>&, std::span<const Index>, Shape);    \
  template Tensor<T> softmax<T>(Graph<T>&, const Tensor<T>&, int);                                  \
  template Tensor<T> l1_normalize<T>(Graph<T>&, const Tensor<T>&, int);                             \
  template Tensor<T> layer_norm<T>(Graph<T>&, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, \
                                   T);                                                              \
  template Tensor<T> activation<T>(Graph<T>&, const Tensor<T>&, Activation);                        \
  template Tensor<T> dropout<T>(Graph<T>&, const Tensor<T>&, double, bool, std::uint64_t);          \
  template Tensor<T> conv2d<T>(Graph<T>&, const Tensor<T>&, const Tensor<T>&, int, int);            \
  template Tensor<T> max_pool2d<T>(Graph<T>&, const Tensor<T>&, int, int, int);                     \
  template Tensor<T> mean_axis<T>(Graph<T>&, const Tensor<T>&, int);                                \
  template Tensor<T> sum<T>(Graph<T>&, const Tensor<T>&);                                           \
  template Tensor<T> mean<T>(Graph<T>&, const Tensor<T>&);                                          \
  template Tensor<T> cross_entropy_logits<T>(Graph<T>&, const Tensor<T>&, std::span<const int>);

FLOOD_OPS_INSTANTIATE(float)
FLOOD_OPS_INSTANTIATE(double)

}  // namespace flood
