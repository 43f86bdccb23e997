#include "wincache/kernels.hpp"

#include <algorithm>
#include <cmath>

#if defined(__AVX512F__) || (defined(__AVX2__) && defined(__FMA__))
#include <immintrin.h>
#endif
#ifdef WINCACHE_HAVE_OPENMP
#include <omp.h>
#endif

namespace wincache::kernels {

namespace {

#if defined(__AVX512F__)
using Vec = __m512d;
constexpr int kLanes = 8;
inline Vec vload(const double* p) { return _mm512_loadu_pd(p); }
inline void vstore(double* p, Vec v) { _mm512_storeu_pd(p, v); }
inline Vec vfma(Vec a, Vec b, Vec c) { return _mm512_fmadd_pd(a, b, c); }
inline Vec vbroadcast(double x) { return _mm512_set1_pd(x); }
inline Vec vzero() { return _mm512_setzero_pd(); }
constexpr int kVecs = 4;
#elif defined(__AVX2__) && defined(__FMA__)
using Vec = __m256d;
constexpr int kLanes = 4;
inline Vec vload(const double* p) { return _mm256_loadu_pd(p); }
inline void vstore(double* p, Vec v) { _mm256_storeu_pd(p, v); }
inline Vec vfma(Vec a, Vec b, Vec c) { return _mm256_fmadd_pd(a, b, c); }
inline Vec vbroadcast(double x) { return _mm256_set1_pd(x); }
inline Vec vzero() { return _mm256_setzero_pd(); }
constexpr int kVecs = 2;
#else
constexpr int kLanes = 1;
constexpr int kVecs = 8;
#endif

constexpr int kTileRows = 4;
constexpr int kTileCols = kLanes * kVecs;

inline double finish(double acc, const double* bias, int j, bool relu) {
  const double v = bias ? acc + bias[j] : acc;
  return relu ? std::max(v, 0.0) : v;
}

// Element (i, k) of the left operand; with TA it is stored transposed, K x M.
template <bool TA>
inline double a_at(const double* A, int M, int K, int i, int k) {
  return TA ? A[static_cast<long>(k) * M + i] : A[static_cast<long>(i) * K + k];
}

// R x kTileCols block with full columns; the accumulators stay in registers.
template <int R, bool TA>
inline void tile_full(int M, int N, int K, const double* A, const double* B, const double* bias, bool relu, double* C,
                      int i0, int j0) {
  double out[R][kTileCols];
#if defined(__AVX512F__) || (defined(__AVX2__) && defined(__FMA__))
  Vec acc[R][kVecs];
  for (auto& row : acc)
    for (auto& v : row) v = vzero();
  for (int k = 0; k < K; ++k) {
    const double* b = B + static_cast<long>(k) * N + j0;
    Vec bv[kVecs];
    for (int c = 0; c < kVecs; ++c) bv[c] = vload(b + c * kLanes);
    for (int r = 0; r < R; ++r) {
      const Vec a = vbroadcast(a_at<TA>(A, M, K, i0 + r, k));
      for (int c = 0; c < kVecs; ++c) acc[r][c] = vfma(a, bv[c], acc[r][c]);
    }
  }
  for (int r = 0; r < R; ++r)
    for (int c = 0; c < kVecs; ++c) vstore(&out[r][c * kLanes], acc[r][c]);
#else
  for (auto& row : out)
    for (double& v : row) v = 0.0;
  for (int k = 0; k < K; ++k) {
    const double* b = B + static_cast<long>(k) * N + j0;
    for (int r = 0; r < R; ++r) {
      const double a = a_at<TA>(A, M, K, i0 + r, k);
      for (int c = 0; c < kTileCols; ++c) out[r][c] = std::fma(a, b[c], out[r][c]);
    }
  }
#endif
  for (int r = 0; r < R; ++r)
    for (int c = 0; c < kTileCols; ++c)
      C[static_cast<long>(i0 + r) * N + j0 + c] = finish(out[r][c], bias, j0 + c, relu);
}

// Ragged edge block.
template <bool TA>
inline void tile_edge(int M, int N, int K, const double* A, const double* B, const double* bias, bool relu, double* C,
                      int i0, int i1, int j0, int j1) {
  for (int i = i0; i < i1; ++i) {
    double acc[kTileCols] = {};
    const int w = j1 - j0;
    for (int k = 0; k < K; ++k) {
      const double a = a_at<TA>(A, M, K, i, k);
      const double* b = B + static_cast<long>(k) * N + j0;
      for (int c = 0; c < w; ++c) acc[c] = std::fma(a, b[c], acc[c]);
    }
    for (int c = 0; c < w; ++c) C[static_cast<long>(i) * N + j0 + c] = finish(acc[c], bias, j0 + c, relu);
  }
}

template <bool TA>
inline void row_tile(int M, int N, int K, const double* A, const double* B, const double* bias, bool relu, double* C,
                     int i0) {
  const int i1 = std::min(M, i0 + kTileRows);
  for (int j0 = 0; j0 < N; j0 += kTileCols) {
    const int j1 = std::min(N, j0 + kTileCols);
    if (j1 - j0 == kTileCols) {
      switch (i1 - i0) {
        case 4: tile_full<4, TA>(M, N, K, A, B, bias, relu, C, i0, j0); break;
        case 3: tile_full<3, TA>(M, N, K, A, B, bias, relu, C, i0, j0); break;
        case 2: tile_full<2, TA>(M, N, K, A, B, bias, relu, C, i0, j0); break;
        default: tile_full<1, TA>(M, N, K, A, B, bias, relu, C, i0, j0); break;
      }
    } else
      tile_edge<TA>(M, N, K, A, B, bias, relu, C, i0, i1, j0, j1);
  }
}

}  // namespace

void gemm_reference(int M, int N, int K, const double* A, const double* B, const double* bias, bool relu,
                    double* C) {
  for (int i = 0; i < M; ++i)
    for (int j = 0; j < N; ++j) {
      double acc = 0.0;
      for (int k = 0; k < K; ++k) acc = std::fma(A[static_cast<long>(i) * K + k], B[static_cast<long>(k) * N + j], acc);
      C[static_cast<long>(i) * N + j] = finish(acc, bias, j, relu);
    }
}

namespace {

template <bool TA>
void gemm_tiled(int M, int N, int K, const double* A, const double* B, const double* bias, bool relu, double* C,
                bool threaded) {
#ifdef WINCACHE_HAVE_OPENMP
  const long work = static_cast<long>(M) * N * K;
  if (threaded && work >= (1L << 18) && omp_get_max_threads() > 1) {
    const int tiles = (M + kTileRows - 1) / kTileRows;
#pragma omp parallel for schedule(static)
    for (int t = 0; t < tiles; ++t) row_tile<TA>(M, N, K, A, B, bias, relu, C, t * kTileRows);
    return;
  }
#else
  (void)threaded;
#endif
  for (int i0 = 0; i0 < M; i0 += kTileRows) row_tile<TA>(M, N, K, A, B, bias, relu, C, i0);
}

}  // namespace

void gemm_serial(int M, int N, int K, const double* A, const double* B, const double* bias, bool relu, double* C) {
  gemm_tiled<false>(M, N, K, A, B, bias, relu, C, false);
}

void gemm(int M, int N, int K, const double* A, const double* B, const double* bias, bool relu, double* C) {
  gemm_tiled<false>(M, N, K, A, B, bias, relu, C, true);
}

void gemm_at(int M, int N, int K, const double* At, const double* B, const double* bias, bool relu, double* C) {
  gemm_tiled<true>(M, N, K, At, B, bias, relu, C, true);
}

void transpose(int M, int N, const double* in, double* out) {
  constexpr int kBlock = 8;
  for (int i0 = 0; i0 < M; i0 += kBlock)
    for (int j0 = 0; j0 < N; j0 += kBlock)
      for (int i = i0; i < std::min(M, i0 + kBlock); ++i)
        for (int j = j0; j < std::min(N, j0 + kBlock); ++j)
          out[static_cast<long>(j) * M + i] = in[static_cast<long>(i) * N + j];
}

bool openmp_enabled() {
#ifdef WINCACHE_HAVE_OPENMP
  return true;
#else
  return false;
#endif
}

}  // namespace wincache::kernels
