#pragma once

// Row-major matrix kernels shared by the conv and linear layers. Explicit
// row strides (lda/ldb/ldc) let conv address image planes in place.
//
// The micro-kernels use GNU vector extensions (GCC/Clang) so the register
// tile survives without relying on scalar replacement; a plain-scalar
// fallback covers other compilers. Accumulation order is fixed either way,
// so results are deterministic for a fixed build.

#include <algorithm>
#include <cstddef>
#include <cstring>

#if defined(__GNUC__) || defined(__clang__)
#define LDCT_GEMM_VECTOR_EXT 1
// The vector types never cross a TU boundary; the ABI note for non-AVX
// targets does not apply.
#pragma GCC diagnostic push
#pragma GCC diagnostic ignored "-Wpsabi"
#endif

namespace ldct::detail {

#if LDCT_GEMM_VECTOR_EXT

template <typename T>
struct VecConfig;

template <>
struct VecConfig<float> {
  static constexpr std::size_t lanes = 8;
  using V = float __attribute__((vector_size(32)));
};

template <>
struct VecConfig<double> {
  static constexpr std::size_t lanes = 4;
  using V = double __attribute__((vector_size(32)));
};

template <typename T>
inline typename VecConfig<T>::V vload(const T* p) {
  typename VecConfig<T>::V v;
  std::memcpy(&v, p, sizeof(v));
  return v;
}

template <typename T>
inline void vstore(T* p, typename VecConfig<T>::V v) {
  std::memcpy(p, &v, sizeof(v));
}

template <typename T>
inline T vsum(typename VecConfig<T>::V v) {
  T parts[VecConfig<T>::lanes];
  std::memcpy(parts, &v, sizeof(v));
  T s = 0;
  for (std::size_t i = 0; i < VecConfig<T>::lanes; ++i) s += parts[i];
  return s;
}

#endif  // LDCT_GEMM_VECTOR_EXT

/// C (M x N) += A (M x K) * B (K x N).
template <typename T>
void gemm_nn_add(std::size_t m_rows, std::size_t n_cols, std::size_t k_len,
                 const T* __restrict a, std::size_t lda,
                 const T* __restrict b, std::size_t ldb,
                 T* __restrict c, std::size_t ldc) {
#if LDCT_GEMM_VECTOR_EXT
  using V = typename VecConfig<T>::V;
  constexpr std::size_t L = VecConfig<T>::lanes;
  constexpr std::size_t MR = 4;
  constexpr std::size_t NV = 2;       // vectors per accumulator row
  constexpr std::size_t NR = NV * L;  // scalars per column strip

  std::size_t j = 0;
  for (; j + NR <= n_cols; j += NR) {
    std::size_t i = 0;
    for (; i + MR <= m_rows; i += MR) {
      // Named accumulators: an array here spills to the stack.
      V a00 = {}, a01 = {}, a10 = {}, a11 = {};
      V a20 = {}, a21 = {}, a30 = {}, a31 = {};
      const T* __restrict ar0 = a + (i + 0) * lda;
      const T* __restrict ar1 = a + (i + 1) * lda;
      const T* __restrict ar2 = a + (i + 2) * lda;
      const T* __restrict ar3 = a + (i + 3) * lda;
      for (std::size_t k = 0; k < k_len; ++k) {
        const T* __restrict brow = b + k * ldb + j;
        const V b0 = vload<T>(brow);
        const V b1 = vload<T>(brow + L);
        a00 += b0 * ar0[k];
        a01 += b1 * ar0[k];
        a10 += b0 * ar1[k];
        a11 += b1 * ar1[k];
        a20 += b0 * ar2[k];
        a21 += b1 * ar2[k];
        a30 += b0 * ar3[k];
        a31 += b1 * ar3[k];
      }
      T* __restrict cr0 = c + (i + 0) * ldc + j;
      T* __restrict cr1 = c + (i + 1) * ldc + j;
      T* __restrict cr2 = c + (i + 2) * ldc + j;
      T* __restrict cr3 = c + (i + 3) * ldc + j;
      vstore<T>(cr0, vload<T>(cr0) + a00);
      vstore<T>(cr0 + L, vload<T>(cr0 + L) + a01);
      vstore<T>(cr1, vload<T>(cr1) + a10);
      vstore<T>(cr1 + L, vload<T>(cr1 + L) + a11);
      vstore<T>(cr2, vload<T>(cr2) + a20);
      vstore<T>(cr2 + L, vload<T>(cr2 + L) + a21);
      vstore<T>(cr3, vload<T>(cr3) + a30);
      vstore<T>(cr3 + L, vload<T>(cr3 + L) + a31);
    }
    for (; i < m_rows; ++i) {
      V acc0 = {};
      V acc1 = {};
      const T* __restrict arow = a + i * lda;
      for (std::size_t k = 0; k < k_len; ++k) {
        const T* __restrict brow = b + k * ldb + j;
        acc0 += vload<T>(brow) * arow[k];
        acc1 += vload<T>(brow + L) * arow[k];
      }
      T* __restrict crow = c + i * ldc + j;
      vstore<T>(crow, vload<T>(crow) + acc0);
      vstore<T>(crow + L, vload<T>(crow + L) + acc1);
    }
  }
  // Column tail, scalar.
  if (j < n_cols) {
    const std::size_t rem = n_cols - j;
    for (std::size_t i = 0; i < m_rows; ++i) {
      T* __restrict crow = c + i * ldc + j;
      for (std::size_t k = 0; k < k_len; ++k) {
        const T av = a[i * lda + k];
        const T* __restrict brow = b + k * ldb + j;
        for (std::size_t ni = 0; ni < rem; ++ni) crow[ni] += av * brow[ni];
      }
    }
  }
#else
  for (std::size_t i = 0; i < m_rows; ++i) {
    T* __restrict crow = c + i * ldc;
    for (std::size_t k = 0; k < k_len; ++k) {
      const T av = a[i * lda + k];
      const T* __restrict brow = b + k * ldb;
      for (std::size_t n = 0; n < n_cols; ++n) crow[n] += av * brow[n];
    }
  }
#endif
}

/// C (M x K) += A (M x N) * B^T, with B stored (K x N) row-major:
/// C[m][k] += sum_n A[m][n] * B[k][n]. Dot-product orientation.
template <typename T>
void gemm_nt_add(std::size_t m_rows, std::size_t k_rows, std::size_t n_len,
                 const T* __restrict a, std::size_t lda,
                 const T* __restrict b, std::size_t ldb,
                 T* __restrict c, std::size_t ldc) {
#if LDCT_GEMM_VECTOR_EXT
  using V = typename VecConfig<T>::V;
  constexpr std::size_t L = VecConfig<T>::lanes;
  constexpr std::size_t MR = 2;
  constexpr std::size_t KR = 2;

  std::size_t i = 0;
  for (; i + MR <= m_rows; i += MR) {
    std::size_t k = 0;
    for (; k + KR <= k_rows; k += KR) {
      V s00 = {}, s01 = {}, s10 = {}, s11 = {};
      const T* __restrict ar0 = a + (i + 0) * lda;
      const T* __restrict ar1 = a + (i + 1) * lda;
      const T* __restrict br0 = b + (k + 0) * ldb;
      const T* __restrict br1 = b + (k + 1) * ldb;
      std::size_t n = 0;
      for (; n + L <= n_len; n += L) {
        const V a0 = vload<T>(ar0 + n);
        const V a1 = vload<T>(ar1 + n);
        const V b0 = vload<T>(br0 + n);
        const V b1 = vload<T>(br1 + n);
        s00 += a0 * b0;
        s01 += a0 * b1;
        s10 += a1 * b0;
        s11 += a1 * b1;
      }
      T t00 = vsum<T>(s00), t01 = vsum<T>(s01);
      T t10 = vsum<T>(s10), t11 = vsum<T>(s11);
      for (std::size_t nr = n; nr < n_len; ++nr) {
        t00 += ar0[nr] * br0[nr];
        t01 += ar0[nr] * br1[nr];
        t10 += ar1[nr] * br0[nr];
        t11 += ar1[nr] * br1[nr];
      }
      c[(i + 0) * ldc + (k + 0)] += t00;
      c[(i + 0) * ldc + (k + 1)] += t01;
      c[(i + 1) * ldc + (k + 0)] += t10;
      c[(i + 1) * ldc + (k + 1)] += t11;
    }
    for (; k < k_rows; ++k) {
      for (std::size_t mi = 0; mi < MR; ++mi) {
        V acc = {};
        std::size_t n = 0;
        for (; n + L <= n_len; n += L) {
          acc += vload<T>(a + (i + mi) * lda + n) * vload<T>(b + k * ldb + n);
        }
        T s = vsum<T>(acc);
        for (; n < n_len; ++n) s += a[(i + mi) * lda + n] * b[k * ldb + n];
        c[(i + mi) * ldc + k] += s;
      }
    }
  }
  for (; i < m_rows; ++i) {
    for (std::size_t k = 0; k < k_rows; ++k) {
      V acc = {};
      std::size_t n = 0;
      for (; n + L <= n_len; n += L) {
        acc += vload<T>(a + i * lda + n) * vload<T>(b + k * ldb + n);
      }
      T s = vsum<T>(acc);
      for (; n < n_len; ++n) s += a[i * lda + n] * b[k * ldb + n];
      c[i * ldc + k] += s;
    }
  }
#else
  constexpr std::size_t L = 8;
  for (std::size_t i = 0; i < m_rows; ++i) {
    for (std::size_t k = 0; k < k_rows; ++k) {
      T lanes[L] = {};
      std::size_t n = 0;
      for (; n + L <= n_len; n += L) {
        for (std::size_t li = 0; li < L; ++li) {
          lanes[li] += a[i * lda + n + li] * b[k * ldb + n + li];
        }
      }
      T s = 0;
      for (std::size_t li = 0; li < L; ++li) s += lanes[li];
      for (; n < n_len; ++n) s += a[i * lda + n] * b[k * ldb + n];
      c[i * ldc + k] += s;
    }
  }
#endif
}

/// out (cols x rows) = transpose of in (rows x cols), both packed.
template <typename T>
void transpose(std::size_t rows, std::size_t cols, const T* __restrict in,
               T* __restrict out) {
  constexpr std::size_t BLK = 16;
  for (std::size_t r0 = 0; r0 < rows; r0 += BLK) {
    const std::size_t r1 = std::min(rows, r0 + BLK);
    for (std::size_t c0 = 0; c0 < cols; c0 += BLK) {
      const std::size_t c1 = std::min(cols, c0 + BLK);
      for (std::size_t r = r0; r < r1; ++r) {
        for (std::size_t c = c0; c < c1; ++c) {
          out[c * rows + r] = in[r * cols + c];
        }
      }
    }
  }
}

}  // namespace ldct::detail

#if LDCT_GEMM_VECTOR_EXT
#pragma GCC diagnostic pop
#endif
