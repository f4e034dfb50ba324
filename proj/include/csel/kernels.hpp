#pragma once

// Dense numeric kernels behind the tensor primitives.
//
// Every kernel in `csel::kernels` is OpenMP-parallel over independent output
// rows (or images), and each output element is produced by exactly one thread
// with a fixed operation order. Results are therefore bitwise identical for
// any thread count, and a row's value never depends on its position in the
// batch. `csel::kernels::reference` holds straightforward serial versions
// used by the tests and the benchmark.

#include <cstddef>
#include <span>

namespace csel::kernels {

struct ConvDims {
  std::size_t batch = 1;
  std::size_t in_channels = 1;
  std::size_t in_h = 1;
  std::size_t in_w = 1;
  std::size_t out_channels = 1;
  std::size_t kernel_h = 1;
  std::size_t kernel_w = 1;
  std::size_t stride = 1;
  std::size_t padding = 0;

  std::size_t out_h() const { return (in_h + 2 * padding - kernel_h) / stride + 1; }
  std::size_t out_w() const { return (in_w + 2 * padding - kernel_w) / stride + 1; }
  std::size_t patch_size() const { return in_channels * kernel_h * kernel_w; }
  std::size_t in_image_size() const { return in_channels * in_h * in_w; }
  std::size_t out_image_size() const { return out_channels * out_h() * out_w(); }
};

// C[m x n] (+)= A[m x k] * B[k x n], row-major.
void gemm(std::span<const double> a, std::span<const double> b, std::span<double> c,
          std::size_t m, std::size_t k, std::size_t n, bool accumulate);

void transpose(std::span<const double> a, std::span<double> out, std::size_t rows,
               std::size_t cols);

// Unfolds one image [C x H x W] into columns [C*kh*kw x out_h*out_w].
void im2col(std::span<const double> image, std::span<double> cols, const ConvDims& d);
// Adjoint of im2col: accumulates columns back into an image gradient.
void col2im(std::span<const double> cols, std::span<double> image, const ConvDims& d);

// x [B x C x H x W], w [O x C x kh x kw], optional bias [O] -> out [B x O x oh x ow].
void conv2d_forward(std::span<const double> x, std::span<const double> w,
                    std::span<const double> bias, std::span<double> out, const ConvDims& d);
void conv2d_backward_input(std::span<const double> grad_out, std::span<const double> w,
                           std::span<double> grad_x, const ConvDims& d);
void conv2d_backward_weight(std::span<const double> grad_out, std::span<const double> x,
                            std::span<double> grad_w, const ConvDims& d);

// Non-overlapping window x window max pooling over [planes x H x W]. `argmax`
// receives, per output, the flat input index of the first maximal element.
void max_pool2d_forward(std::span<const double> x, std::span<double> out,
                        std::span<std::size_t> argmax, std::size_t planes, std::size_t h,
                        std::size_t w, std::size_t window);

namespace reference {

void gemm(std::span<const double> a, std::span<const double> b, std::span<double> c,
          std::size_t m, std::size_t k, std::size_t n, bool accumulate);
void conv2d_forward(std::span<const double> x, std::span<const double> w,
                    std::span<const double> bias, std::span<double> out, const ConvDims& d);
void conv2d_backward_input(std::span<const double> grad_out, std::span<const double> w,
                           std::span<double> grad_x, const ConvDims& d);
void conv2d_backward_weight(std::span<const double> grad_out, std::span<const double> x,
                            std::span<double> grad_w, const ConvDims& d);
void max_pool2d_forward(std::span<const double> x, std::span<double> out,
                        std::span<std::size_t> argmax, std::size_t planes, std::size_t h,
                        std::size_t w, std::size_t window);

}  // namespace reference

// Number of OpenMP threads kernels will use (1 when built without OpenMP).
int max_threads();
void set_num_threads(int n);

}  // namespace csel::kernels
