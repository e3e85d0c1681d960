#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>

#if defined(__AVX512F__)
#include <immintrin.h>
#endif

namespace hads::detail {

// C[M x N] (+)= A[M x K] * B[K x N], all row-major with explicit leading
// dimensions. Every C element is reduced over k in increasing order with a
// fused multiply-add, starting from 0 (or from the existing C value when
// accumulating), so results do not depend on the tiling or on which kernel
// below is compiled in.

inline void gemm_tile_generic(std::size_t mr, std::size_t nr, std::size_t K, const double* A, std::size_t lda,
                              const double* B, std::size_t ldb, double* C, std::size_t ldc, bool accumulate) {
    constexpr std::size_t MR = 4, NR = 32;
    double acc[MR][NR];
    for (std::size_t r = 0; r < mr; ++r)
        for (std::size_t j = 0; j < nr; ++j) acc[r][j] = accumulate ? C[r * ldc + j] : 0.0;
    if (mr == MR && nr == NR) {
        for (std::size_t k = 0; k < K; ++k) {
            const double* b = B + k * ldb;
            const double a0 = A[0 * lda + k], a1 = A[1 * lda + k], a2 = A[2 * lda + k], a3 = A[3 * lda + k];
            for (std::size_t j = 0; j < NR; ++j) {
                acc[0][j] = std::fma(a0, b[j], acc[0][j]);
                acc[1][j] = std::fma(a1, b[j], acc[1][j]);
                acc[2][j] = std::fma(a2, b[j], acc[2][j]);
                acc[3][j] = std::fma(a3, b[j], acc[3][j]);
            }
        }
    } else {
        for (std::size_t k = 0; k < K; ++k) {
            const double* b = B + k * ldb;
            for (std::size_t r = 0; r < mr; ++r) {
                const double a = A[r * lda + k];
                for (std::size_t j = 0; j < nr; ++j) acc[r][j] = std::fma(a, b[j], acc[r][j]);
            }
        }
    }
    for (std::size_t r = 0; r < mr; ++r)
        for (std::size_t j = 0; j < nr; ++j) C[r * ldc + j] = acc[r][j];
}

#if defined(__AVX512F__)
template <int R, int V>
inline void gemm_kernel_avx512(std::size_t K, const double* A, std::size_t lda, const double* B, std::size_t ldb,
                               double* C, std::size_t ldc, bool accumulate) {
    __m512d acc[R][V];
    for (int r = 0; r < R; ++r)
        for (int v = 0; v < V; ++v)
            acc[r][v] = accumulate ? _mm512_loadu_pd(C + r * ldc + 8 * v) : _mm512_setzero_pd();
    for (std::size_t k = 0; k < K; ++k) {
        __m512d b[V];
        for (int v = 0; v < V; ++v) b[v] = _mm512_loadu_pd(B + k * ldb + 8 * v);
        for (int r = 0; r < R; ++r) {
            const __m512d a = _mm512_set1_pd(A[r * lda + k]);
            for (int v = 0; v < V; ++v) acc[r][v] = _mm512_fmadd_pd(a, b[v], acc[r][v]);
        }
    }
    for (int r = 0; r < R; ++r)
        for (int v = 0; v < V; ++v) _mm512_storeu_pd(C + r * ldc + 8 * v, acc[r][v]);
}

template <int V>
inline void gemm_rows_avx512(std::size_t mr, std::size_t K, const double* A, std::size_t lda, const double* B,
                             std::size_t ldb, double* C, std::size_t ldc, bool accumulate) {
    switch (mr) {
        case 4: gemm_kernel_avx512<4, V>(K, A, lda, B, ldb, C, ldc, accumulate); break;
        case 3: gemm_kernel_avx512<3, V>(K, A, lda, B, ldb, C, ldc, accumulate); break;
        case 2: gemm_kernel_avx512<2, V>(K, A, lda, B, ldb, C, ldc, accumulate); break;
        default: gemm_kernel_avx512<1, V>(K, A, lda, B, ldb, C, ldc, accumulate); break;
    }
}
#endif

inline void gemm(std::size_t M, std::size_t N, std::size_t K, const double* A, std::size_t lda,
                 const double* B, std::size_t ldb, double* C, std::size_t ldc, bool accumulate) {
    constexpr std::size_t MR = 4;
    constexpr std::size_t NR = 32;
    // Column blocks sized so a K x NC panel of B stays in cache across row tiles.
    const std::size_t NC = std::max(NR, (std::size_t{131072} / std::max<std::size_t>(K, 1)) / NR * NR);
    for (std::size_t jc = 0; jc < N; jc += NC) {
        const std::size_t nc = std::min(NC, N - jc);
        for (std::size_t i0 = 0; i0 < M; i0 += MR) {
            const std::size_t mr = std::min(MR, M - i0);
            for (std::size_t j0 = jc; j0 < jc + nc; j0 += NR) {
                const std::size_t nr = std::min(NR, jc + nc - j0);
                const double* a = A + i0 * lda;
                const double* b = B + j0;
                double* c = C + i0 * ldc + j0;
#if defined(__AVX512F__)
                const std::size_t nv = nr / 8;
                switch (nv) {
                    case 4: gemm_rows_avx512<4>(mr, K, a, lda, b, ldb, c, ldc, accumulate); break;
                    case 3: gemm_rows_avx512<3>(mr, K, a, lda, b, ldb, c, ldc, accumulate); break;
                    case 2: gemm_rows_avx512<2>(mr, K, a, lda, b, ldb, c, ldc, accumulate); break;
                    case 1: gemm_rows_avx512<1>(mr, K, a, lda, b, ldb, c, ldc, accumulate); break;
                    default: break;
                }
                if (nv * 8 < nr) gemm_tile_generic(mr, nr - nv * 8, K, a, lda, b + nv * 8, ldb, c + nv * 8, ldc, accumulate);
#else
                gemm_tile_generic(mr, nr, K, a, lda, b, ldb, c, ldc, accumulate);
#endif
            }
        }
    }
}

inline void transpose(std::size_t rows, std::size_t cols, const double* src, double* dst) {
    constexpr std::size_t T = 16;
    for (std::size_t r0 = 0; r0 < rows; r0 += T)
        for (std::size_t c0 = 0; c0 < cols; c0 += T)
            for (std::size_t r = r0; r < std::min(rows, r0 + T); ++r)
                for (std::size_t c = c0; c < std::min(cols, c0 + T); ++c) dst[c * rows + r] = src[r * cols + c];
}

}  // namespace hads::detail
