#pragma once

// Internal building blocks shared by the free ops and the layer classes.

#include <cstdint>
#include <vector>

#include "maya/nn/ops.hpp"

namespace maya::nn::detail {

struct ConvGeometry {
  std::size_t in_h, in_w, channels;
  std::size_t kernel, stride;
  WindowGeometry y, x;

  std::size_t rows() const { return y.out * x.out; }
  std::size_t cols() const { return kernel * kernel * channels; }
  /// 1x1/1 convolutions read the input directly as the column matrix.
  bool direct() const { return kernel == 1 && stride == 1; }
};

ConvGeometry conv_geometry(const Shape& input, std::size_t kernel, std::size_t stride, Padding padding);

void im2col(const ConvGeometry& g, const double* input, double* col);
void col2im(const ConvGeometry& g, const double* col, double* input_grad);

/// Convolution into `out` (rows x filters). `col` receives the column
/// matrix unless the geometry is direct.
void conv_forward(const ConvGeometry& g, const double* input, const Tensor& weights, const Tensor& bias,
                  bool relu, std::vector<double>& col, double* out);

/// Max pool; `argmax` receives flat input indices per output element.
Tensor maxpool_forward(const Tensor& input, std::size_t kernel, std::size_t stride, Padding padding,
                       std::vector<std::uint32_t>* argmax);
Tensor avgpool_forward(const Tensor& input, std::size_t kernel, std::size_t stride, Padding padding);
Tensor avgpool_backward(const Shape& input_shape, const Tensor& grad_output, std::size_t kernel,
                        std::size_t stride, Padding padding);

}  // namespace maya::nn::detail
