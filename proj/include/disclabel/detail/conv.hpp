#pragma once

#include <cstddef>
#include <vector>

namespace disclabel::detail {

// Row-major C = alpha * op(A) @ op(B) + beta * C, backed by BLAS. Thread
// count is pinned on first use so repeated runs are bitwise identical.
void gemm(bool trans_a, bool trans_b, int m, int n, int k, float alpha, const float* a, int lda,
          const float* b, int ldb, float beta, float* c, int ldc);
void gemm(bool trans_a, bool trans_b, int m, int n, int k, double alpha, const double* a, int lda,
          const double* b, int ldb, double beta, double* c, int ldc);

template <class S>
struct ConvScratch {
  std::vector<S> col, t, wpack, dpack;
};

// Valid cross-correlation, stride 1:
//   y[o][r][c] = (bias ? bias[o] : 0) + sum_{i,kr,kc} w[o][i][kr][kc] * x[i][r+kr][c+kc]
// x: (cin, h, w) contiguous, w: (cout, cin, k, k), y: (cout, h-k+1, w-k+1).
//
// The k x k kernel is decomposed into k row convolutions whose outputs stack
// along the GEMM M dimension; a cheap shifted-row accumulation then forms y.
// This keeps GEMM shapes fat even when cout is tiny (narrow width_scale).
template <class S>
void conv2d_forward(const S* x, int cin, int h, int w_dim, const S* weights, const S* bias,
                    int cout, int k, S* y, ConvScratch<S>& scratch);

// Gradients for the stride-1 convolution above. dy: (cout, h-k+1, w-k+1).
// dx (may be null), dweights and dbias (may be null) are accumulated into.
template <class S>
void conv2d_backward(const S* x, int cin, int h, int w_dim, const S* weights, int cout, int k,
                     const S* dy, S* dx, S* dweights, S* dbias, ConvScratch<S>& scratch);

// Plain direct convolution with stride; reference path for the GEMM route and
// the compute path for the strided no-redundant-counting arm. Output dims:
// (h-k)/stride+1 x (w-k)/stride+1.
template <class S>
void conv2d_naive(const S* x, int cin, int h, int w_dim, const S* weights, const S* bias,
                  int cout, int k, int stride, S* y);

// Gradients for the naive strided path (used by the ablation arm only).
template <class S>
void conv2d_naive_backward(const S* x, int cin, int h, int w_dim, const S* weights, int cout,
                           int k, int stride, const S* dy, S* dx, S* dweights, S* dbias);

}  // namespace disclabel::detail
