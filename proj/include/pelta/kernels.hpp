#pragma once

namespace pelta::kernels {

// Runtime switch between the OpenMP kernels and the serial reference ones.
// Both produce bitwise-identical results: the parallel versions split work
// across independent output elements and keep each element's reduction order
// fixed.
bool parallel_enabled();
void set_parallel(bool on);
int max_threads();

// C[m,n] = A[m,k] * B[k,n]
void matmul(const double* a, const double* b, double* c, int m, int k, int n);
void matmul_serial(const double* a, const double* b, double* c, int m, int k, int n);
void matmul_parallel(const double* a, const double* b, double* c, int m, int k, int n);

// y[co,ho,wo] = bias[co] + sum_{ci,ky,kx} x[ci, ho*s+ky-p, wo*s+kx-p] * w[co,ci,ky,kx]
// bias may be null.
void conv2d(const double* x, const double* w, const double* bias, double* y, int ci,
            int h, int wd, int co, int kh, int kw, int stride, int pad);
void conv2d_serial(const double* x, const double* w, const double* bias, double* y, int ci,
                   int h, int wd, int co, int kh, int kw, int stride, int pad);
void conv2d_parallel(const double* x, const double* w, const double* bias, double* y, int ci,
                     int h, int wd, int co, int kh, int kw, int stride, int pad);

void conv2d_grad_input(const double* gy, const double* w, double* gx, int ci, int h, int wd,
                       int co, int kh, int kw, int stride, int pad);
void conv2d_grad_weights(const double* gy, const double* x, double* gw, int ci, int h, int wd,
                         int co, int kh, int kw, int stride, int pad);

// Transposed convolution; w is [ci,co,kh,kw],
// y[co,oy,ox] = sum over (i,j,ky,kx) with oy = i*s + ky - p, ox = j*s + kx - p.
void tconv2d(const double* x, const double* w, const double* bias, double* y, int ci, int h,
             int wd, int co, int kh, int kw, int stride, int pad);
void tconv2d_serial(const double* x, const double* w, const double* bias, double* y, int ci,
                    int h, int wd, int co, int kh, int kw, int stride, int pad);
void tconv2d_parallel(const double* x, const double* w, const double* bias, double* y, int ci,
                      int h, int wd, int co, int kh, int kw, int stride, int pad);

void tconv2d_grad_input(const double* gy, const double* w, double* gx, int ci, int h, int wd,
                        int co, int kh, int kw, int stride, int pad);
void tconv2d_grad_weights(const double* gy, const double* x, double* gw, int ci, int h, int wd,
                          int co, int kh, int kw, int stride, int pad);

inline int conv_out_dim(int in, int k, int stride, int pad) {
  return (in + 2 * pad - k) / stride + 1;
}
inline int tconv_out_dim(int in, int k, int stride, int pad) {
  return (in - 1) * stride + k - 2 * pad;
}

}  // namespace pelta::kernels
