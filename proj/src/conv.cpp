#include "disclabel/detail/conv.hpp"

#include <algorithm>
#include <cstdlib>
#include <cstring>
#include <thread>

#include <cblas.h>

extern "C" void openblas_set_num_threads(int);

namespace disclabel::detail {

namespace {

int pinned_thread_count() {
  if (const char* env = std::getenv("DISCLABEL_THREADS")) {
    const int n = std::atoi(env);
    if (n >= 1) return n;
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return static_cast<int>(std::clamp(hw, 1u, 8u));
}

void pin_threads() {
  static const int pinned = [] {
    const int n = pinned_thread_count();
    openblas_set_num_threads(n);
    return n;
  }();
  (void)pinned;
}

}  // namespace

void gemm(bool trans_a, bool trans_b, int m, int n, int k, float alpha, const float* a, int lda,
          const float* b, int ldb, float beta, float* c, int ldc) {
  pin_threads();
  cblas_sgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
              trans_b ? CblasTrans : CblasNoTrans, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
}

void gemm(bool trans_a, bool trans_b, int m, int n, int k, double alpha, const double* a, int lda,
          const double* b, int ldb, double beta, double* c, int ldc) {
  pin_threads();
  cblas_dgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
              trans_b ? CblasTrans : CblasNoTrans, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
}

namespace {

// col[(i*k+kc)][rr*wo + c] = x[i][rr][c+kc]; all h rows, wo = w-k+1 columns.
template <class S>
void im2col_rows(const S* x, int cin, int h, int w, int k, std::vector<S>& col) {
  const int wo = w - k + 1;
  const std::size_t cols = static_cast<std::size_t>(h) * wo;
  col.resize(static_cast<std::size_t>(cin) * k * cols);
  for (int i = 0; i < cin; ++i) {
    const S* xi = x + static_cast<std::size_t>(i) * h * w;
    for (int kc = 0; kc < k; ++kc) {
      S* dst = col.data() + (static_cast<std::size_t>(i) * k + kc) * cols;
      for (int rr = 0; rr < h; ++rr)
        std::memcpy(dst + static_cast<std::size_t>(rr) * wo, xi + static_cast<std::size_t>(rr) * w + kc,
                    sizeof(S) * wo);
    }
  }
}

// wpack[(o*k+kr)][(i*k+kc)] = w[o][i][kr][kc]
template <class S>
void pack_weights(const S* w, int cout, int cin, int k, std::vector<S>& wpack) {
  wpack.resize(static_cast<std::size_t>(cout) * k * cin * k);
  for (int o = 0; o < cout; ++o)
    for (int i = 0; i < cin; ++i)
      for (int kr = 0; kr < k; ++kr)
        for (int kc = 0; kc < k; ++kc)
          wpack[(static_cast<std::size_t>(o) * k + kr) * cin * k + i * k + kc] =
              w[((static_cast<std::size_t>(o) * cin + i) * k + kr) * k + kc];
}

}  // namespace

template <class S>
void conv2d_forward(const S* x, int cin, int h, int w_dim, const S* weights, const S* bias,
                    int cout, int k, S* y, ConvScratch<S>& scratch) {
  const int ho = h - k + 1, wo = w_dim - k + 1;
  const std::size_t out_plane = static_cast<std::size_t>(ho) * wo;

  if (k == 1) {
    // 1x1: plain GEMM on the raw planes.
    gemm(false, false, cout, static_cast<int>(out_plane), cin, S(1), weights, cin, x,
         static_cast<int>(out_plane), S(0), y, static_cast<int>(out_plane));
  } else {
    im2col_rows(x, cin, h, w_dim, k, scratch.col);
    pack_weights(weights, cout, cin, k, scratch.wpack);
    const std::size_t cols = static_cast<std::size_t>(h) * wo;
    scratch.t.resize(static_cast<std::size_t>(cout) * k * cols);
    gemm(false, false, cout * k, static_cast<int>(cols), cin * k, S(1), scratch.wpack.data(),
         cin * k, scratch.col.data(), static_cast<int>(cols), S(0), scratch.t.data(),
         static_cast<int>(cols));
    // y[o][r][c] = sum_kr T[(o,kr)][r+kr][c]
    for (int o = 0; o < cout; ++o) {
      S* yo = y + static_cast<std::size_t>(o) * out_plane;
      std::fill(yo, yo + out_plane, S(0));
      for (int kr = 0; kr < k; ++kr) {
        const S* trow = scratch.t.data() + (static_cast<std::size_t>(o) * k + kr) * cols;
        for (int r = 0; r < ho; ++r) {
          const S* src = trow + static_cast<std::size_t>(r + kr) * wo;
          S* dst = yo + static_cast<std::size_t>(r) * wo;
          for (int c = 0; c < wo; ++c) dst[c] += src[c];
        }
      }
    }
  }
  if (bias) {
    for (int o = 0; o < cout; ++o) {
      S* yo = y + static_cast<std::size_t>(o) * out_plane;
      for (std::size_t i = 0; i < out_plane; ++i) yo[i] += bias[o];
    }
  }
}

template <class S>
void conv2d_backward(const S* x, int cin, int h, int w_dim, const S* weights, int cout, int k,
                     const S* dy, S* dx, S* dweights, S* dbias, ConvScratch<S>& scratch) {
  const int ho = h - k + 1, wo = w_dim - k + 1;
  const std::size_t out_plane = static_cast<std::size_t>(ho) * wo;

  if (dbias) {
    for (int o = 0; o < cout; ++o) {
      const S* dyo = dy + static_cast<std::size_t>(o) * out_plane;
      S sum = 0;
      for (std::size_t i = 0; i < out_plane; ++i) sum += dyo[i];
      dbias[o] += sum;
    }
  }

  if (k == 1) {
    if (dweights)  // dW += dY @ X^T
      gemm(false, true, cout, cin, static_cast<int>(out_plane), S(1), dy,
           static_cast<int>(out_plane), x, static_cast<int>(out_plane), S(1), dweights, cin);
    if (dx)  // dX += W^T @ dY
      gemm(true, false, cin, static_cast<int>(out_plane), cout, S(1), weights, cin, dy,
           static_cast<int>(out_plane), S(1), dx, static_cast<int>(out_plane));
    return;
  }

  const std::size_t cols = static_cast<std::size_t>(h) * wo;
  // dT[(o,kr)][hh][c] = dy[o][hh-kr][c] when hh-kr is a valid output row.
  scratch.t.assign(static_cast<std::size_t>(cout) * k * cols, S(0));
  for (int o = 0; o < cout; ++o) {
    const S* dyo = dy + static_cast<std::size_t>(o) * out_plane;
    for (int kr = 0; kr < k; ++kr) {
      S* trow = scratch.t.data() + (static_cast<std::size_t>(o) * k + kr) * cols;
      for (int r = 0; r < ho; ++r)
        std::memcpy(trow + static_cast<std::size_t>(r + kr) * wo,
                    dyo + static_cast<std::size_t>(r) * wo, sizeof(S) * wo);
    }
  }

  if (dweights) {
    im2col_rows(x, cin, h, w_dim, k, scratch.col);
    scratch.dpack.assign(static_cast<std::size_t>(cout) * k * cin * k, S(0));
    gemm(false, true, cout * k, cin * k, static_cast<int>(cols), S(1), scratch.t.data(),
         static_cast<int>(cols), scratch.col.data(), static_cast<int>(cols), S(0),
         scratch.dpack.data(), cin * k);
    for (int o = 0; o < cout; ++o)
      for (int i = 0; i < cin; ++i)
        for (int kr = 0; kr < k; ++kr)
          for (int kc = 0; kc < k; ++kc)
            dweights[((static_cast<std::size_t>(o) * cin + i) * k + kr) * k + kc] +=
                scratch.dpack[(static_cast<std::size_t>(o) * k + kr) * cin * k + i * k + kc];
  }

  if (dx) {
    pack_weights(weights, cout, cin, k, scratch.wpack);
    scratch.col.assign(static_cast<std::size_t>(cin) * k * cols, S(0));
    gemm(true, false, cin * k, static_cast<int>(cols), cout * k, S(1), scratch.wpack.data(),
         cin * k, scratch.t.data(), static_cast<int>(cols), S(0), scratch.col.data(),
         static_cast<int>(cols));
    // col2im: dx[i][rr][c+kc] += dcol[(i,kc)][rr][c]
    for (int i = 0; i < cin; ++i) {
      S* dxi = dx + static_cast<std::size_t>(i) * h * w_dim;
      for (int kc = 0; kc < k; ++kc) {
        const S* src = scratch.col.data() + (static_cast<std::size_t>(i) * k + kc) * cols;
        for (int rr = 0; rr < h; ++rr) {
          S* drow = dxi + static_cast<std::size_t>(rr) * w_dim + kc;
          const S* srow = src + static_cast<std::size_t>(rr) * wo;
          for (int c = 0; c < wo; ++c) drow[c] += srow[c];
        }
      }
    }
  }
}

template <class S>
void conv2d_naive(const S* x, int cin, int h, int w_dim, const S* weights, const S* bias,
                  int cout, int k, int stride, S* y) {
  const int ho = (h - k) / stride + 1, wo = (w_dim - k) / stride + 1;
  for (int o = 0; o < cout; ++o) {
    S* yo = y + static_cast<std::size_t>(o) * ho * wo;
    for (int r = 0; r < ho; ++r) {
      for (int c = 0; c < wo; ++c) {
        S acc = bias ? bias[o] : S(0);
        for (int i = 0; i < cin; ++i) {
          const S* xi = x + static_cast<std::size_t>(i) * h * w_dim;
          const S* wk = weights + ((static_cast<std::size_t>(o) * cin + i) * k) * k;
          for (int kr = 0; kr < k; ++kr)
            for (int kc = 0; kc < k; ++kc)
              acc += wk[kr * k + kc] * xi[(r * stride + kr) * w_dim + c * stride + kc];
        }
        yo[r * wo + c] = acc;
      }
    }
  }
}

template <class S>
void conv2d_naive_backward(const S* x, int cin, int h, int w_dim, const S* weights, int cout,
                           int k, int stride, const S* dy, S* dx, S* dweights, S* dbias) {
  const int ho = (h - k) / stride + 1, wo = (w_dim - k) / stride + 1;
  for (int o = 0; o < cout; ++o) {
    const S* dyo = dy + static_cast<std::size_t>(o) * ho * wo;
    for (int r = 0; r < ho; ++r) {
      for (int c = 0; c < wo; ++c) {
        const S g = dyo[r * wo + c];
        if (dbias) dbias[o] += g;
        for (int i = 0; i < cin; ++i) {
          const S* xi = x + static_cast<std::size_t>(i) * h * w_dim;
          S* dxi = dx ? dx + static_cast<std::size_t>(i) * h * w_dim : nullptr;
          const std::size_t wbase = (static_cast<std::size_t>(o) * cin + i) * k * k;
          for (int kr = 0; kr < k; ++kr) {
            for (int kc = 0; kc < k; ++kc) {
              const int rr = r * stride + kr, cc = c * stride + kc;
              if (dweights) dweights[wbase + kr * k + kc] += g * xi[rr * w_dim + cc];
              if (dxi) dxi[rr * w_dim + cc] += g * weights[wbase + kr * k + kc];
            }
          }
        }
      }
    }
  }
}

template void conv2d_forward<float>(const float*, int, int, int, const float*, const float*, int,
                                    int, float*, ConvScratch<float>&);
template void conv2d_forward<double>(const double*, int, int, int, const double*, const double*,
                                     int, int, double*, ConvScratch<double>&);
template void conv2d_backward<float>(const float*, int, int, int, const float*, int, int,
                                     const float*, float*, float*, float*, ConvScratch<float>&);
template void conv2d_backward<double>(const double*, int, int, int, const double*, int, int,
                                      const double*, double*, double*, double*,
                                      ConvScratch<double>&);
template void conv2d_naive<float>(const float*, int, int, int, const float*, const float*, int,
                                  int, int, float*);
template void conv2d_naive<double>(const double*, int, int, int, const double*, const double*,
                                   int, int, int, double*);
template void conv2d_naive_backward<float>(const float*, int, int, int, const float*, int, int,
                                           int, const float*, float*, float*, float*);
template void conv2d_naive_backward<double>(const double*, int, int, int, const double*, int, int,
                                            int, const double*, double*, double*, double*);

}  // namespace disclabel::detail
