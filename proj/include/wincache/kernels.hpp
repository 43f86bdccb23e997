#pragma once

// Dense row-major kernels for the Q-network: C[M x N] = A[M x K] * B[K x N]
// (+ bias, optional ReLU).
//
// Every variant computes each output element the same way: accumulate
// fma(a_ik, b_kj, acc) for k ascending from zero, then add the bias. So the
// reference, the tiled and the threaded kernels agree bit for bit.

namespace wincache::kernels {

// Naive triple loop. Slow; kept as the oracle for the others.
void gemm_reference(int M, int N, int K, const double* A, const double* B, const double* bias, bool relu,
                    double* C);

// Register-tiled, single thread.
void gemm_serial(int M, int N, int K, const double* A, const double* B, const double* bias, bool relu, double* C);

// Register-tiled, row tiles shared across OpenMP threads when M is large
// enough to pay for the fork. Falls back to gemm_serial without OpenMP.
void gemm(int M, int N, int K, const double* A, const double* B, const double* bias, bool relu, double* C);

// Same product with the left operand stored transposed: At is K x M.
// Equal bit for bit to gemm on the explicit transpose.
void gemm_at(int M, int N, int K, const double* At, const double* B, const double* bias, bool relu, double* C);

// out[N x M] = in[M x N]^T
void transpose(int M, int N, const double* in, double* out);

bool openmp_enabled();

}  // namespace wincache::kernels
