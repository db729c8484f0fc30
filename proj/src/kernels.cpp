#include "flood/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace flood::kernels {

namespace {

constexpr Index kRowBlock = 4;

template <typename T>
constexpr Index col_block() {
  return 256 / static_cast<Index>(sizeof(T));  // 64 floats / 32 doubles
}

// Rows [i0, i0+rows) of C += A * B, all operands row-major and untransposed.
// Each C element is accumulated over p = 0..k-1 in order.
template <typename T>
void gemm_rows(Index i0, Index rows, Index n, Index k, const T* __restrict a, const T* __restrict b,
               T* __restrict c) {
  constexpr Index NR = col_block<T>();
  const Index n_full = n - n % NR;
  if (rows == kRowBlock) {
    for (Index j = 0; j < n_full; j += NR) {
      T acc[kRowBlock][NR];
      for (Index r = 0; r < kRowBlock; ++r)
        for (Index q = 0; q < NR; ++q) acc[r][q] = c[(i0 + r) * n + j + q];
      for (Index p = 0; p < k; ++p) {
        const T* br = b + p * n + j;
        for (Index r = 0; r < kRowBlock; ++r) {
          const T av = a[(i0 + r) * k + p];
#pragma omp simd
          for (Index q = 0; q < NR; ++q) acc[r][q] += av * br[q];
        }
      }
      for (Index r = 0; r < kRowBlock; ++r)
        for (Index q = 0; q < NR; ++q) c[(i0 + r) * n + j + q] = acc[r][q];
    }
  } else {
    for (Index r = 0; r < rows; ++r) {
      for (Index j = 0; j < n_full; j += NR) {
        T acc[NR];
        for (Index q = 0; q < NR; ++q) acc[q] = c[(i0 + r) * n + j + q];
        for (Index p = 0; p < k; ++p) {
          const T av = a[(i0 + r) * k + p];
          const T* br = b + p * n + j;
#pragma omp simd
          for (Index q = 0; q < NR; ++q) acc[q] += av * br[q];
        }
        for (Index q = 0; q < NR; ++q) c[(i0 + r) * n + j + q] = acc[q];
      }
    }
  }
  if (n_full < n) {
    for (Index r = 0; r < rows; ++r) {
      T* cr = c + (i0 + r) * n;
      for (Index p = 0; p < k; ++p) {
        const T av = a[(i0 + r) * k + p];
        const T* br = b + p * n;
        for (Index q = n_full; q < n; ++q) cr[q] += av * br[q];
      }
    }
  }
}

template <typename T>
void transpose_into(Index rows, Index cols, const T* src, T* dst) {
  // dst[cols, rows] = src[rows, cols]^T
  constexpr Index B = 32;
  for (Index i0 = 0; i0 < rows; i0 += B)
    for (Index j0 = 0; j0 < cols; j0 += B)
      for (Index i = i0; i < std::min(i0 + B, rows); ++i)
        for (Index j = j0; j < std::min(j0 + B, cols); ++j) dst[j * rows + i] = src[i * cols + j];
}

// Brings transposed operands into untransposed layout. Returns pointers into
// `abuf`/`bbuf` or the originals.
template <typename T>
void canonicalize(Trans ta, Trans tb, Index m, Index n, Index k, const T*& a, const T*& b, std::vector<T>& abuf,
                  std::vector<T>& bbuf) {
  if (ta == Trans::yes) {
    abuf.resize(static_cast<std::size_t>(m * k));
    transpose_into(k, m, a, abuf.data());
    a = abuf.data();
  }
  if (tb == Trans::yes) {
    bbuf.resize(static_cast<std::size_t>(k * n));
    transpose_into(n, k, b, bbuf.data());
    b = bbuf.data();
  }
}

template <typename T>
void gemm_serial(Trans ta, Trans tb, Index m, Index n, Index k, const T* a, const T* b, T* c, bool accumulate,
                 std::vector<T>& abuf, std::vector<T>& bbuf) {
  if (!accumulate) std::fill(c, c + m * n, T{});
  if (k == 0) return;
  canonicalize(ta, tb, m, n, k, a, b, abuf, bbuf);
  for (Index i = 0; i < m; i += kRowBlock) gemm_rows(i, std::min(kRowBlock, m - i), n, k, a, b, c);
}

constexpr Index kParallelWork = Index{1} << 15;

}  // namespace

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

template <typename T>
void gemm(Trans ta, Trans tb, Index m, Index n, Index k, const T* a, const T* b, T* c, bool accumulate) {
  if (!accumulate) std::fill(c, c + m * n, T{});
  if (k == 0 || m == 0 || n == 0) return;
  std::vector<T> abuf, bbuf;
  canonicalize(ta, tb, m, n, k, a, b, abuf, bbuf);
  const Index blocks = (m + kRowBlock - 1) / kRowBlock;
#pragma omp parallel for schedule(static) if (m * n * k > kParallelWork)
  for (Index blk = 0; blk < blocks; ++blk) {
    const Index i = blk * kRowBlock;
    gemm_rows(i, std::min(kRowBlock, m - i), n, k, a, b, c);
  }
}

template <typename T>
void gemm_batched(Trans ta, Trans tb, Index batch, Index m, Index n, Index k, const T* a, const T* b, T* c,
                  bool accumulate) {
  const Index sa = m * k, sb = k * n, sc = m * n;
#pragma omp parallel if (batch > 1 && batch * m * n * k > kParallelWork)
  {
    std::vector<T> abuf, bbuf;
#pragma omp for schedule(static)
    for (Index i = 0; i < batch; ++i) {
      gemm_serial(ta, tb, m, n, k, a + i * sa, b + i * sb, c + i * sc, accumulate, abuf, bbuf);
    }
  }
}

template <typename T>
void im2col(const ConvGeometry& g, Index images, const T* x, T* cols) {
  const Index oh = g.out_h(), ow = g.out_w(), patch = g.patch();
  const Index rows = images * oh * ow;
  const Index c = g.channels;
#pragma omp parallel for schedule(static) if (rows * patch > kParallelWork)
  for (Index r = 0; r < rows; ++r) {
    const Index img = r / (oh * ow);
    const Index oy = (r / ow) % oh;
    const Index ox = r % ow;
    T* dst = cols + r * patch;
    const T* src = x + img * g.height * g.width * c;
    for (Index ky = 0; ky < g.kernel_h; ++ky) {
      const Index iy = oy * g.stride - g.padding + ky;
      for (Index kx = 0; kx < g.kernel_w; ++kx) {
        const Index ix = ox * g.stride - g.padding + kx;
        T* d = dst + (ky * g.kernel_w + kx) * c;
        if (iy < 0 || iy >= g.height || ix < 0 || ix >= g.width) {
          std::fill(d, d + c, T{});
        } else {
          std::memcpy(d, src + (iy * g.width + ix) * c, static_cast<std::size_t>(c) * sizeof(T));
        }
      }
    }
  }
}

template <typename T>
void col2im(const ConvGeometry& g, Index images, const T* dcols, T* dx) {
  // Parallel over images: each image owns a disjoint region of dx.
  const Index oh = g.out_h(), ow = g.out_w(), patch = g.patch();
  const Index c = g.channels;
#pragma omp parallel for schedule(static) if (images > 1 && images * oh * ow * patch > kParallelWork)
  for (Index img = 0; img < images; ++img) {
    T* dst = dx + img * g.height * g.width * c;
    for (Index oy = 0; oy < oh; ++oy) {
      for (Index ox = 0; ox < ow; ++ox) {
        const T* src = dcols + ((img * oh + oy) * ow + ox) * patch;
        for (Index ky = 0; ky < g.kernel_h; ++ky) {
          const Index iy = oy * g.stride - g.padding + ky;
          if (iy < 0 || iy >= g.height) continue;
          for (Index kx = 0; kx < g.kernel_w; ++kx) {
            const Index ix = ox * g.stride - g.padding + kx;
            if (ix < 0 || ix >= g.width) continue;
            const T* s = src + (ky * g.kernel_w + kx) * c;
            T* d = dst + (iy * g.width + ix) * c;
            for (Index ch = 0; ch < c; ++ch) d[ch] += s[ch];
          }
        }
      }
    }
  }
}

template <typename T>
void softmax_rows(Index rows, Index cols, const T* x, T* y) {
#pragma omp parallel for schedule(static) if (rows * cols > kParallelWork)
  for (Index r = 0; r < rows; ++r) {
    const T* xr = x + r * cols;
    T* yr = y + r * cols;
    T mx = -std::numeric_limits<T>::infinity();
    for (Index j = 0; j < cols; ++j) mx = std::max(mx, xr[j]);
    T sum{};
    for (Index j = 0; j < cols; ++j) {
      yr[j] = std::exp(xr[j] - mx);
      sum += yr[j];
    }
    const T inv = T{1} / sum;
    for (Index j = 0; j < cols; ++j) yr[j] *= inv;
  }
}

namespace reference {

template <typename T>
void gemm(Trans ta, Trans tb, Index m, Index n, Index k, const T* a, const T* b, T* c, bool accumulate) {
  for (Index i = 0; i < m; ++i) {
    for (Index j = 0; j < n; ++j) {
      T acc = accumulate ? c[i * n + j] : T{};
      for (Index p = 0; p < k; ++p) {
        const T av = ta == Trans::yes ? a[p * m + i] : a[i * k + p];
        const T bv = tb == Trans::yes ? b[j * k + p] : b[p * n + j];
        acc += av * bv;
      }
      c[i * n + j] = acc;
    }
  }
}

template <typename T>
void im2col(const ConvGeometry& g, Index images, const T* x, T* cols) {
  const Index oh = g.out_h(), ow = g.out_w();
  Index r = 0;
  for (Index img = 0; img < images; ++img)
    for (Index oy = 0; oy < oh; ++oy)
      for (Index ox = 0; ox < ow; ++ox, ++r)
        for (Index ky = 0; ky < g.kernel_h; ++ky)
          for (Index kx = 0; kx < g.kernel_w; ++kx)
            for (Index ch = 0; ch < g.channels; ++ch) {
              const Index iy = oy * g.stride - g.padding + ky;
              const Index ix = ox * g.stride - g.padding + kx;
              const bool inside = iy >= 0 && iy < g.height && ix >= 0 && ix < g.width;
              cols[r * g.patch() + (ky * g.kernel_w + kx) * g.channels + ch] =
                  inside ? x[((img * g.height + iy) * g.width + ix) * g.channels + ch] : T{};
            }
}

template <typename T>
void col2im(const ConvGeometry& g, Index images, const T* dcols, T* dx) {
  const Index oh = g.out_h(), ow = g.out_w();
  Index r = 0;
  for (Index img = 0; img < images; ++img)
    for (Index oy = 0; oy < oh; ++oy)
      for (Index ox = 0; ox < ow; ++ox, ++r)
        for (Index ky = 0; ky < g.kernel_h; ++ky)
          for (Index kx = 0; kx < g.kernel_w; ++kx)
            for (Index ch = 0; ch < g.channels; ++ch) {
              const Index iy = oy * g.stride - g.padding + ky;
              const Index ix = ox * g.stride - g.padding + kx;
              if (iy >= 0 && iy < g.height && ix >= 0 && ix < g.width)
                dx[((img * g.height + iy) * g.width + ix) * g.channels + ch] +=
                    dcols[r * g.patch() + (ky * g.kernel_w + kx) * g.channels + ch];
            }
}

template <typename T>
void softmax_rows(Index rows, Index cols, const T* x, T* y) {
  for (Index r = 0; r < rows; ++r) {
    T mx = x[r * cols];
    for (Index j = 1; j < cols; ++j) mx = std::max(mx, x[r * cols + j]);
    T sum{};
    for (Index j = 0; j < cols; ++j) sum += std::exp(x[r * cols + j] - mx);
    // Same rounding as the fast path: scale by the reciprocal.
    const T inv = T{1} / sum;
    for (Index j = 0; j < cols; ++j) y[r * cols + j] = std::exp(x[r * cols + j] - mx) * inv;
  }
}

}  // namespace reference

#define FLOOD_KERNELS_INSTANTIATE(T)                                                                         \
  template void gemm<T>(Trans, Trans, Index, Index, Index, const T*, const T*, T*, bool);                     \
  template void gemm_batched<T>(Trans, Trans, Index, Index, Index, Index, const T*, const T*, T*, bool);      \
  template void im2col<T>(const ConvGeometry&, Index, const T*, T*);                                         \
  template void col2im<T>(const ConvGeometry&, Index, const T*, T*);                                         \
  template void softmax_rows<T>(Index, Index, const T*, T*);                                                 \
  template void reference::gemm<T>(Trans, Trans, Index, Index, Index, const T*, const T*, T*, bool);          \
  template void reference::im2col<T>(const ConvGeometry&, Index, const T*, T*);                              \
  template void reference::col2im<T>(const ConvGeometry&, Index, const T*, T*);                              \
  template void reference::softmax_rows<T>(Index, Index, const T*, T*);

FLOOD_KERNELS_INSTANTIATE(float)
FLOOD_KERNELS_INSTANTIATE(double)

}  // namespace flood::kernels
