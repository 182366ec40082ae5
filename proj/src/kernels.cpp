#include "pelta/kernels.hpp"

#include <atomic>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace pelta::kernels {

namespace {
std::atomic<bool> g_parallel{true};
}

bool parallel_enabled() {
#ifdef _OPENMP
  return g_parallel.load(std::memory_order_relaxed);
#else
  return false;
#endif
}

void set_parallel(bool on) { g_parallel.store(on, std::memory_order_relaxed); }

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

void matmul_serial(const double* a, const double* b, double* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < n; ++j) {
      double acc = 0.0;
      for (int t = 0; t < k; ++t) acc += a[i * k + t] * b[t * n + j];
      c[i * n + j] = acc;
    }
  }
}

void matmul_parallel(const double* a, const double* b, double* c, int m, int k, int n) {
#pragma omp parallel for schedule(static)
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < n; ++j) {
      double acc = 0.0;
      for (int t = 0; t < k; ++t) acc += a[i * k + t] * b[t * n + j];
      c[i * n + j] = acc;
    }
  }
}

void matmul(const double* a, const double* b, double* c, int m, int k, int n) {
  if (parallel_enabled())
    matmul_parallel(a, b, c, m, k, n);
  else
    matmul_serial(a, b, c, m, k, n);
}

namespace {

inline double conv_cell(const double* x, const double* w, int ci, int h, int wd, int kh, int kw,
                        int stride, int pad, int co_idx, int oy, int ox) {
  double acc = 0.0;
  for (int c = 0; c < ci; ++c) {
    for (int ky = 0; ky < kh; ++ky) {
      int y = oy * stride + ky - pad;
      if (y < 0 || y >= h) continue;
      for (int kx = 0; kx < kw; ++kx) {
        int xx = ox * stride + kx - pad;
        if (xx < 0 || xx >= wd) continue;
        acc += x[(c * h + y) * wd + xx] * w[((co_idx * ci + c) * kh + ky) * kw + kx];
      }
    }
  }
  return acc;
}

}  // namespace

void conv2d_serial(const double* x, const double* w, const double* bias, double* y, int ci,
                   int h, int wd, int co, int kh, int kw, int stride, int pad) {
  int ho = conv_out_dim(h, kh, stride, pad);
  int wo = conv_out_dim(wd, kw, stride, pad);
  for (int c = 0; c < co; ++c)
    for (int oy = 0; oy < ho; ++oy)
      for (int ox = 0; ox < wo; ++ox)
        y[(c * ho + oy) * wo + ox] =
            (bias ? bias[c] : 0.0) + conv_cell(x, w, ci, h, wd, kh, kw, stride, pad, c, oy, ox);
}

void conv2d_parallel(const double* x, const double* w, const double* bias, double* y, int ci,
                     int h, int wd, int co, int kh, int kw, int stride, int pad) {
  int ho = conv_out_dim(h, kh, stride, pad);
  int wo = conv_out_dim(wd, kw, stride, pad);
  int total = co * ho * wo;
#pragma omp parallel for schedule(static)
  for (int idx = 0; idx < total; ++idx) {
    int c = idx / (ho * wo);
    int oy = (idx / wo) % ho;
    int ox = idx % wo;
    y[idx] = (bias ? bias[c] : 0.0) + conv_cell(x, w, ci, h, wd, kh, kw, stride, pad, c, oy, ox);
  }
}

void conv2d(const double* x, const double* w, const double* bias, double* y, int ci, int h,
            int wd, int co, int kh, int kw, int stride, int pad) {
  if (parallel_enabled())
    conv2d_parallel(x, w, bias, y, ci, h, wd, co, kh, kw, stride, pad);
  else
    conv2d_serial(x, w, bias, y, ci, h, wd, co, kh, kw, stride, pad);
}

void conv2d_grad_input(const double* gy, const double* w, double* gx, int ci, int h, int wd,
                       int co, int kh, int kw, int stride, int pad) {
  int ho = conv_out_dim(h, kh, stride, pad);
  int wo = conv_out_dim(wd, kw, stride, pad);
  int total = ci * h * wd;
#pragma omp parallel for schedule(static) if (parallel_enabled())
  for (int idx = 0; idx < total; ++idx) {
    int c = idx / (h * wd);
    int y = (idx / wd) % h;
    int x = idx % wd;
    double acc = 0.0;
    for (int oc = 0; oc < co; ++oc) {
      for (int ky = 0; ky < kh; ++ky) {
        int num_y = y + pad - ky;
        if (num_y < 0 || num_y % stride != 0) continue;
        int oy = num_y / stride;
        if (oy >= ho) continue;
        for (int kx = 0; kx < kw; ++kx) {
          int num_x = x + pad - kx;
          if (num_x < 0 || num_x % stride != 0) continue;
          int ox = num_x / stride;
          if (ox >= wo) continue;
          acc += gy[(oc * ho + oy) * wo + ox] * w[((oc * ci + c) * kh + ky) * kw + kx];
        }
      }
    }
    gx[idx] = acc;
  }
}

void conv2d_grad_weights(const double* gy, const double* x, double* gw, int ci, int h, int wd,
                         int co, int kh, int kw, int stride, int pad) {
  int ho = conv_out_dim(h, kh, stride, pad);
  int wo = conv_out_dim(wd, kw, stride, pad);
  int total = co * ci * kh * kw;
#pragma omp parallel for schedule(static) if (parallel_enabled())
  for (int idx = 0; idx < total; ++idx) {
    int oc = idx / (ci * kh * kw);
    int c = (idx / (kh * kw)) % ci;
    int ky = (idx / kw) % kh;
    int kx = idx % kw;
    double acc = 0.0;
    for (int oy = 0; oy < ho; ++oy) {
      int y = oy * stride + ky - pad;
      if (y < 0 || y >= h) continue;
      for (int ox = 0; ox < wo; ++ox) {
        int xx = ox * stride + kx - pad;
        if (xx < 0 || xx >= wd) continue;
        acc += gy[(oc * ho + oy) * wo + ox] * x[(c * h + y) * wd + xx];
      }
    }
    gw[idx] = acc;
  }
}

void tconv2d_serial(const double* x, const double* w, const double* bias, double* y, int ci,
                    int h, int wd, int co, int kh, int kw, int stride, int pad) {
  int ho = tconv_out_dim(h, kh, stride, pad);
  int wo = tconv_out_dim(wd, kw, stride, pad);
  for (int oc = 0; oc < co; ++oc) {
    for (int oy = 0; oy < ho; ++oy) {
      for (int ox = 0; ox < wo; ++ox) {
        double acc = bias ? bias[oc] : 0.0;
        for (int c = 0; c < ci; ++c) {
          for (int ky = 0; ky < kh; ++ky) {
            int num_y = oy + pad - ky;
            if (num_y < 0 || num_y % stride != 0) continue;
            int i = num_y / stride;
            if (i >= h) continue;
            for (int kx = 0; kx < kw; ++kx) {
              int num_x = ox + pad - kx;
              if (num_x < 0 || num_x % stride != 0) continue;
              int j = num_x / stride;
              if (j >= wd) continue;
              acc += x[(c * h + i) * wd + j] * w[((c * co + oc) * kh + ky) * kw + kx];
            }
          }
        }
        y[(oc * ho + oy) * wo + ox] = acc;
      }
    }
  }
}

void tconv2d_parallel(const double* x, const double* w, const double* bias, double* y, int ci,
                      int h, int wd, int co, int kh, int kw, int stride, int pad) {
  int ho = tconv_out_dim(h, kh, stride, pad);
  int wo = tconv_out_dim(wd, kw, stride, pad);
  int total = co * ho * wo;
#pragma omp parallel for schedule(static)
  for (int idx = 0; idx < total; ++idx) {
    int oc = idx / (ho * wo);
    int oy = (idx / wo) % ho;
    int ox = idx % wo;
    double acc = bias ? bias[oc] : 0.0;
    for (int c = 0; c < ci; ++c) {
      for (int ky = 0; ky < kh; ++ky) {
        int num_y = oy + pad - ky;
        if (num_y < 0 || num_y % stride != 0) continue;
        int i = num_y / stride;
        if (i >= h) continue;
        for (int kx = 0; kx < kw; ++kx) {
          int num_x = ox + pad - kx;
          if (num_x < 0 || num_x % stride != 0) continue;
          int j = num_x / stride;
          if (j >= wd) continue;
          acc += x[(c * h + i) * wd + j] * w[((c * co + oc) * kh + ky) * kw + kx];
        }
      }
    }
    y[idx] = acc;
  }
}

void tconv2d(const double* x, const double* w, const double* bias, double* y, int ci, int h,
             int wd, int co, int kh, int kw, int stride, int pad) {
  if (parallel_enabled())
    tconv2d_parallel(x, w, bias, y, ci, h, wd, co, kh, kw, stride, pad);
  else
    tconv2d_serial(x, w, bias, y, ci, h, wd, co, kh, kw, stride, pad);
}

void tconv2d_grad_input(const double* gy, const double* w, double* gx, int ci, int h, int wd,
                        int co, int kh, int kw, int stride, int pad) {
  int ho = tconv_out_dim(h, kh, stride, pad);
  int wo = tconv_out_dim(wd, kw, stride, pad);
  int total = ci * h * wd;
#pragma omp parallel for schedule(static) if (parallel_enabled())
  for (int idx = 0; idx < total; ++idx) {
    int c = idx / (h * wd);
    int i = (idx / wd) % h;
    int j = idx % wd;
    double acc = 0.0;
    for (int oc = 0; oc < co; ++oc) {
      for (int ky = 0; ky < kh; ++ky) {
        int oy = i * stride + ky - pad;
        if (oy < 0 || oy >= ho) continue;
        for (int kx = 0; kx < kw; ++kx) {
          int ox = j * stride + kx - pad;
          if (ox < 0 || ox >= wo) continue;
          acc += gy[(oc * ho + oy) * wo + ox] * w[((c * co + oc) * kh + ky) * kw + kx];
        }
      }
    }
    gx[idx] = acc;
  }
}

void tconv2d_grad_weights(const double* gy, const double* x, double* gw, int ci, int h, int wd,
                          int co, int kh, int kw, int stride, int pad) {
  int ho = tconv_out_dim(h, kh, stride, pad);
  int wo = tconv_out_dim(wd, kw, stride, pad);
  int total = ci * co * kh * kw;
#pragma omp parallel for schedule(static) if (parallel_enabled())
  for (int idx = 0; idx < total; ++idx) {
    int c = idx / (co * kh * kw);
    int oc = (idx / (kh * kw)) % co;
    int ky = (idx / kw) % kh;
    int kx = idx % kw;
    double acc = 0.0;
    for (int i = 0; i < h; ++i) {
      int oy = i * stride + ky - pad;
      if (oy < 0 || oy >= ho) continue;
      for (int j = 0; j < wd; ++j) {
        int ox = j * stride + kx - pad;
        if (ox < 0 || ox >= wo) continue;
        acc += x[(c * h + i) * wd + j] * gy[(oc * ho + oy) * wo + ox];
      }
    }
    gw[idx] = acc;
  }
}

}  // namespace pelta::kernels
