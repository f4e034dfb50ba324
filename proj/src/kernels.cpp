#include "csel/kernels.hpp"

#include <algorithm>
#include <cstdint>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace csel::kernels {
namespace {

constexpr std::size_t kColumnBlock = 256;
constexpr std::size_t kWeightGradChunk = 32;

using Index = std::int64_t;

// One output row: c_row (+)= a_row * B. Summation over k is always in
// ascending order, independent of blocking over columns.
inline void gemm_row(const double* a_row, const double* b, double* c_row, std::size_t k,
                     std::size_t n, bool accumulate) {
  if (!accumulate) std::fill(c_row, c_row + n, 0.0);
  for (std::size_t j0 = 0; j0 < n; j0 += kColumnBlock) {
    const std::size_t j1 = std::min(n, j0 + kColumnBlock);
    for (std::size_t kk = 0; kk < k; ++kk) {
      const double av = a_row[kk];
      const double* b_row = b + kk * n;
      for (std::size_t j = j0; j < j1; ++j) c_row[j] += av * b_row[j];
    }
  }
}

void gemm_serial(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                 std::size_t n, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) gemm_row(a + i * k, b, c + i * n, k, n, accumulate);
}

void transpose_serial(const double* a, double* out, std::size_t rows, std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out[c * rows + r] = a[r * cols + c];
}

void im2col_raw(const double* image, double* cols, const ConvDims& d) {
  const std::size_t oh = d.out_h(), ow = d.out_w();
  const auto pad = static_cast<Index>(d.padding);
  std::size_t row = 0;
  for (std::size_t c = 0; c < d.in_channels; ++c) {
    const double* plane = image + c * d.in_h * d.in_w;
    for (std::size_t ki = 0; ki < d.kernel_h; ++ki) {
      for (std::size_t kj = 0; kj < d.kernel_w; ++kj, ++row) {
        double* dst = cols + row * oh * ow;
        for (std::size_t y = 0; y < oh; ++y) {
          const Index iy = static_cast<Index>(y * d.stride + ki) - pad;
          for (std::size_t x = 0; x < ow; ++x) {
            const Index ix = static_cast<Index>(x * d.stride + kj) - pad;
            const bool inside = iy >= 0 && ix >= 0 && iy < static_cast<Index>(d.in_h) &&
                                ix < static_cast<Index>(d.in_w);
            dst[y * ow + x] = inside ? plane[iy * static_cast<Index>(d.in_w) + ix] : 0.0;
          }
        }
      }
    }
  }
}

// Same patches as im2col, laid out [out_h*out_w x C*kh*kw].
void im2row_raw(const double* image, double* rows, const ConvDims& d) {
  const std::size_t oh = d.out_h(), ow = d.out_w(), patch = d.patch_size();
  const auto pad = static_cast<Index>(d.padding);
  for (std::size_t y = 0; y < oh; ++y) {
    for (std::size_t x = 0; x < ow; ++x) {
      double* dst = rows + (y * ow + x) * patch;
      std::size_t q = 0;
      for (std::size_t c = 0; c < d.in_channels; ++c) {
        const double* plane = image + c * d.in_h * d.in_w;
        for (std::size_t ki = 0; ki < d.kernel_h; ++ki) {
          const Index iy = static_cast<Index>(y * d.stride + ki) - pad;
          for (std::size_t kj = 0; kj < d.kernel_w; ++kj, ++q) {
            const Index ix = static_cast<Index>(x * d.stride + kj) - pad;
            const bool inside = iy >= 0 && ix >= 0 && iy < static_cast<Index>(d.in_h) &&
                                ix < static_cast<Index>(d.in_w);
            dst[q] = inside ? plane[iy * static_cast<Index>(d.in_w) + ix] : 0.0;
          }
        }
      }
    }
  }
}

void col2im_raw(const double* cols, double* image, const ConvDims& d) {
  const std::size_t oh = d.out_h(), ow = d.out_w();
  const auto pad = static_cast<Index>(d.padding);
  std::size_t row = 0;
  for (std::size_t c = 0; c < d.in_channels; ++c) {
    double* plane = image + c * d.in_h * d.in_w;
    for (std::size_t ki = 0; ki < d.kernel_h; ++ki) {
      for (std::size_t kj = 0; kj < d.kernel_w; ++kj, ++row) {
        const double* src = cols + row * oh * ow;
        for (std::size_t y = 0; y < oh; ++y) {
          const Index iy = static_cast<Index>(y * d.stride + ki) - pad;
          if (iy < 0 || iy >= static_cast<Index>(d.in_h)) continue;
          for (std::size_t x = 0; x < ow; ++x) {
            const Index ix = static_cast<Index>(x * d.stride + kj) - pad;
            if (ix < 0 || ix >= static_cast<Index>(d.in_w)) continue;
            plane[iy * static_cast<Index>(d.in_w) + ix] += src[y * ow + x];
          }
        }
      }
    }
  }
}

}  // namespace

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

void set_num_threads(int n) {
#ifdef _OPENMP
  omp_set_num_threads(std::max(1, n));
#else
  (void)n;
#endif
}

void gemm(std::span<const double> a, std::span<const double> b, std::span<double> c,
          std::size_t m, std::size_t k, std::size_t n, bool accumulate) {
  const double* ap = a.data();
  const double* bp = b.data();
  double* cp = c.data();
#pragma omp parallel for schedule(static) if (m * k * n > 32768)
  for (Index i = 0; i < static_cast<Index>(m); ++i)
    gemm_row(ap + i * k, bp, cp + i * n, k, n, accumulate);
}

void transpose(std::span<const double> a, std::span<double> out, std::size_t rows,
               std::size_t cols) {
  transpose_serial(a.data(), out.data(), rows, cols);
}

void im2col(std::span<const double> image, std::span<double> cols, const ConvDims& d) {
  im2col_raw(image.data(), cols.data(), d);
}

void col2im(std::span<const double> cols, std::span<double> image, const ConvDims& d) {
  col2im_raw(cols.data(), image.data(), d);
}

void conv2d_forward(std::span<const double> x, std::span<const double> w,
                    std::span<const double> bias, std::span<double> out, const ConvDims& d) {
  const std::size_t pixels = d.out_h() * d.out_w();
  const std::size_t patch = d.patch_size();
#pragma omp parallel
  {
    std::vector<double> cols(patch * pixels);
#pragma omp for schedule(static)
    for (Index b = 0; b < static_cast<Index>(d.batch); ++b) {
      im2col_raw(x.data() + b * d.in_image_size(), cols.data(), d);
      double* dst = out.data() + b * d.out_image_size();
      gemm_serial(w.data(), cols.data(), dst, d.out_channels, patch, pixels, false);
      if (!bias.empty()) {
        for (std::size_t o = 0; o < d.out_channels; ++o)
          for (std::size_t p = 0; p < pixels; ++p) dst[o * pixels + p] += bias[o];
      }
    }
  }
}

void conv2d_backward_input(std::span<const double> grad_out, std::span<const double> w,
                           std::span<double> grad_x, const ConvDims& d) {
  const std::size_t pixels = d.out_h() * d.out_w();
  const std::size_t patch = d.patch_size();
  std::vector<double> wt(patch * d.out_channels);
  transpose_serial(w.data(), wt.data(), d.out_channels, patch);
#pragma omp parallel
  {
    std::vector<double> cols(patch * pixels);
#pragma omp for schedule(static)
    for (Index b = 0; b < static_cast<Index>(d.batch); ++b) {
      gemm_serial(wt.data(), grad_out.data() + b * d.out_image_size(), cols.data(), patch,
                  d.out_channels, pixels, false);
      col2im_raw(cols.data(), grad_x.data() + b * d.in_image_size(), d);
    }
  }
}

void conv2d_backward_weight(std::span<const double> grad_out, std::span<const double> x,
                            std::span<double> grad_w, const ConvDims& d) {
  const std::size_t pixels = d.out_h() * d.out_w();
  const std::size_t patch = d.patch_size();
  std::vector<double> rows(kWeightGradChunk * pixels * patch);
  for (std::size_t b0 = 0; b0 < d.batch; b0 += kWeightGradChunk) {
    const std::size_t b1 = std::min(d.batch, b0 + kWeightGradChunk);
#pragma omp parallel for schedule(static)
    for (Index b = static_cast<Index>(b0); b < static_cast<Index>(b1); ++b)
      im2row_raw(x.data() + b * d.in_image_size(),
                 rows.data() + (b - static_cast<Index>(b0)) * pixels * patch, d);
    // Each output channel is owned by one thread; images accumulate in order.
#pragma omp parallel for schedule(static)
    for (Index o = 0; o < static_cast<Index>(d.out_channels); ++o) {
      for (std::size_t b = b0; b < b1; ++b) {
        const double* g = grad_out.data() + b * d.out_image_size() + o * pixels;
        gemm_row(g, rows.data() + (b - b0) * pixels * patch, grad_w.data() + o * patch, pixels,
                 patch, true);
      }
    }
  }
}

void max_pool2d_forward(std::span<const double> x, std::span<double> out,
                        std::span<std::size_t> argmax, std::size_t planes, std::size_t h,
                        std::size_t w, std::size_t window) {
  const std::size_t oh = h / window, ow = w / window;
#pragma omp parallel for schedule(static) if (planes * h * w > 16384)
  for (Index p = 0; p < static_cast<Index>(planes); ++p) {
    const std::size_t base = static_cast<std::size_t>(p) * h * w;
    for (std::size_t y = 0; y < oh; ++y) {
      for (std::size_t xo = 0; xo < ow; ++xo) {
        std::size_t best = base + (y * window) * w + xo * window;
        double best_value = x[best];
        for (std::size_t dy = 0; dy < window; ++dy) {
          for (std::size_t dx = 0; dx < window; ++dx) {
            const std::size_t idx = base + (y * window + dy) * w + xo * window + dx;
            if (x[idx] > best_value) {
              best_value = x[idx];
              best = idx;
            }
          }
        }
        const std::size_t o = static_cast<std::size_t>(p) * oh * ow + y * ow + xo;
        out[o] = best_value;
        argmax[o] = best;
      }
    }
  }
}

namespace reference {

void gemm(std::span<const double> a, std::span<const double> b, std::span<double> c,
          std::size_t m, std::size_t k, std::size_t n, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double sum = accumulate ? c[i * n + j] : 0.0;
      for (std::size_t kk = 0; kk < k; ++kk) sum += a[i * k + kk] * b[kk * n + j];
      c[i * n + j] = sum;
    }
  }
}

namespace {
double padded_at(std::span<const double> x, const ConvDims& d, std::size_t b, std::size_t c,
                 Index iy, Index ix) {
  if (iy < 0 || ix < 0 || iy >= static_cast<Index>(d.in_h) || ix >= static_cast<Index>(d.in_w))
    return 0.0;
  return x[((b * d.in_channels + c) * d.in_h + static_cast<std::size_t>(iy)) * d.in_w +
           static_cast<std::size_t>(ix)];
}
}  // namespace

void conv2d_forward(std::span<const double> x, std::span<const double> w,
                    std::span<const double> bias, std::span<double> out, const ConvDims& d) {
  const std::size_t oh = d.out_h(), ow = d.out_w();
  const auto pad = static_cast<Index>(d.padding);
  for (std::size_t b = 0; b < d.batch; ++b)
    for (std::size_t o = 0; o < d.out_channels; ++o)
      for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t xo = 0; xo < ow; ++xo) {
          double sum = 0.0;
          for (std::size_t c = 0; c < d.in_channels; ++c)
            for (std::size_t ki = 0; ki < d.kernel_h; ++ki)
              for (std::size_t kj = 0; kj < d.kernel_w; ++kj) {
                const Index iy = static_cast<Index>(y * d.stride + ki) - pad;
                const Index ix = static_cast<Index>(xo * d.stride + kj) - pad;
                sum += padded_at(x, d, b, c, iy, ix) *
                       w[((o * d.in_channels + c) * d.kernel_h + ki) * d.kernel_w + kj];
              }
          if (!bias.empty()) sum += bias[o];
          out[((b * d.out_channels + o) * oh + y) * ow + xo] = sum;
        }
}

void conv2d_backward_input(std::span<const double> grad_out, std::span<const double> w,
                           std::span<double> grad_x, const ConvDims& d) {
  const std::size_t oh = d.out_h(), ow = d.out_w();
  const auto pad = static_cast<Index>(d.padding);
  for (std::size_t b = 0; b < d.batch; ++b)
    for (std::size_t o = 0; o < d.out_channels; ++o)
      for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t xo = 0; xo < ow; ++xo) {
          const double g = grad_out[((b * d.out_channels + o) * oh + y) * ow + xo];
          for (std::size_t c = 0; c < d.in_channels; ++c)
            for (std::size_t ki = 0; ki < d.kernel_h; ++ki)
              for (std::size_t kj = 0; kj < d.kernel_w; ++kj) {
                const Index iy = static_cast<Index>(y * d.stride + ki) - pad;
                const Index ix = static_cast<Index>(xo * d.stride + kj) - pad;
                if (iy < 0 || ix < 0 || iy >= static_cast<Index>(d.in_h) ||
                    ix >= static_cast<Index>(d.in_w))
                  continue;
                grad_x[((b * d.in_channels + c) * d.in_h + static_cast<std::size_t>(iy)) *
                           d.in_w +
                       static_cast<std::size_t>(ix)] +=
                    g * w[((o * d.in_channels + c) * d.kernel_h + ki) * d.kernel_w + kj];
              }
        }
}

void conv2d_backward_weight(std::span<const double> grad_out, std::span<const double> x,
                            std::span<double> grad_w, const ConvDims& d) {
  const std::size_t oh = d.out_h(), ow = d.out_w();
  const auto pad = static_cast<Index>(d.padding);
  for (std::size_t b = 0; b < d.batch; ++b)
    for (std::size_t o = 0; o < d.out_channels; ++o)
      for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t xo = 0; xo < ow; ++xo) {
          const double g = grad_out[((b * d.out_channels + o) * oh + y) * ow + xo];
          for (std::size_t c = 0; c < d.in_channels; ++c)
            for (std::size_t ki = 0; ki < d.kernel_h; ++ki)
              for (std::size_t kj = 0; kj < d.kernel_w; ++kj) {
                const Index iy = static_cast<Index>(y * d.stride + ki) - pad;
                const Index ix = static_cast<Index>(xo * d.stride + kj) - pad;
                grad_w[((o * d.in_channels + c) * d.kernel_h + ki) * d.kernel_w + kj] +=
                    g * padded_at(x, d, b, c, iy, ix);
              }
        }
}

void max_pool2d_forward(std::span<const double> x, std::span<double> out,
                        std::span<std::size_t> argmax, std::size_t planes, std::size_t h,
                        std::size_t w, std::size_t window) {
  const std::size_t oh = h / window, ow = w / window;
  for (std::size_t p = 0; p < planes; ++p)
    for (std::size_t y = 0; y < oh; ++y)
      for (std::size_t xo = 0; xo < ow; ++xo) {
        std::size_t best = 0;
        bool found = false;
        for (std::size_t dy = 0; dy < window; ++dy)
          for (std::size_t dx = 0; dx < window; ++dx) {
            const std::size_t idx = (p * h + y * window + dy) * w + xo * window + dx;
            if (!found || x[idx] > x[best]) {
              best = idx;
              found = true;
            }
          }
        out[(p * oh + y) * ow + xo] = x[best];
        argmax[(p * oh + y) * ow + xo] = best;
      }
}

}  // namespace reference
}  // namespace csel::kernels
