#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "maya/nn/layer_spec.hpp"
#include "maya/nn/tensor.hpp"

namespace maya::nn {

/// Output extent and leading padding of a windowed op along one axis.
struct WindowGeometry {
  std::size_t out = 0;
  std::size_t pad_before = 0;
};

WindowGeometry window_geometry(std::size_t extent, std::size_t kernel, std::size_t stride, Padding padding);

// Convolution weights are laid out as (kernel*kernel*in_channels) x out,
// row index (ky * kernel + kx) * in_channels + c, matching im2col rows.

/// Convolution of an HxWxC tensor. `bias` has one entry per filter.
Tensor conv2d(const Tensor& input, const Tensor& weights, const Tensor& bias, std::size_t kernel,
              std::size_t stride, Padding padding = Padding::same);

/// Padded positions never win a max.
Tensor maxpool2d(const Tensor& input, std::size_t kernel, std::size_t stride, Padding padding = Padding::same);
/// Means over in-bounds elements only.
Tensor avgpool2d(const Tensor& input, std::size_t kernel, std::size_t stride, Padding padding = Padding::same);

/// y = x W + b with x flattened; W is in x out.
Tensor fully_connected(const Tensor& input, const Tensor& weights, const Tensor& bias);

Tensor relu(const Tensor& input);

/// Unit-norm copy; the zero vector maps to itself.
Tensor l2_normalize(const Tensor& input);

/// Max-subtracted softmax.
std::vector<double> softmax(std::span<const double> logits);

inline constexpr double kProbabilityFloor = 1e-12;

/// -log(probs[label]), with probs[label] clamped below at 1e-12.
double cross_entropy_loss(std::span<const double> probs, std::size_t label);

struct SoftmaxCrossEntropy {
  double loss = 0.0;
  std::vector<double> probs;
  std::vector<double> grad_logits;
};

/// Loss and its exact derivative w.r.t. the logits. Where the clamp is
/// active the loss is constant, so the gradient is zero.
SoftmaxCrossEntropy softmax_cross_entropy(std::span<const double> logits, std::size_t label);

// Dense kernels used by the layers. Row-major, no aliasing.

/// C[MxN] (+)= A[MxK] * B[KxN]
void gemm(std::size_t m, std::size_t k, std::size_t n, const double* a, const double* b, double* c,
          bool accumulate);
/// C[KxN] += A[MxK]^T * B[MxN]
void gemm_at_b(std::size_t m, std::size_t k, std::size_t n, const double* a, const double* b, double* c);

}  // namespace maya::nn
