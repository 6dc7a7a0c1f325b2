#include "maya/nn/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "kernels.hpp"

namespace maya::nn {

WindowGeometry window_geometry(std::size_t extent, std::size_t kernel, std::size_t stride, Padding padding) {
  if (kernel == 0 || stride == 0) throw ShapeError("kernel and stride must be positive");
  WindowGeometry g;
  if (padding == Padding::same) {
    g.out = (extent + stride - 1) / stride;
    const std::size_t needed = (g.out - 1) * stride + kernel;
    g.pad_before = needed > extent ? (needed - extent) / 2 : 0;
  } else {
    if (extent < kernel) {
      throw ShapeError("valid window of " + std::to_string(kernel) + " does not fit extent " +
                       std::to_string(extent));
    }
    g.out = (extent - kernel) / stride + 1;
  }
  return g;
}

void gemm(std::size_t m, std::size_t k, std::size_t n, const double* a, const double* b, double* c,
          bool accumulate) {
  if (!accumulate) std::fill(c, c + m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    const double* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      if (av == 0.0) continue;
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

void gemm_at_b(std::size_t m, std::size_t k, std::size_t n, const double* a, const double* b, double* c) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    const double* brow = b + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      if (av == 0.0) continue;
      double* crow = c + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

namespace detail {

ConvGeometry conv_geometry(const Shape& input, std::size_t kernel, std::size_t stride, Padding padding) {
  if (input.size() != 3) throw ShapeError("expected an HxWxC tensor, got " + to_string(input));
  ConvGeometry g{input[0], input[1], input[2], kernel, stride, {}, {}};
  g.y = window_geometry(g.in_h, kernel, stride, padding);
  g.x = window_geometry(g.in_w, kernel, stride, padding);
  return g;
}

void im2col(const ConvGeometry& g, const double* input, double* col) {
  const std::size_t c = g.channels;
  const std::size_t cols = g.cols();
  for (std::size_t oy = 0; oy < g.y.out; ++oy) {
    for (std::size_t ox = 0; ox < g.x.out; ++ox) {
      double* row = col + (oy * g.x.out + ox) * cols;
      for (std::size_t ky = 0; ky < g.kernel; ++ky) {
        const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - static_cast<std::ptrdiff_t>(g.y.pad_before);
        for (std::size_t kx = 0; kx < g.kernel; ++kx) {
          const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) - static_cast<std::ptrdiff_t>(g.x.pad_before);
          double* dst = row + (ky * g.kernel + kx) * c;
          if (iy < 0 || ix < 0 || iy >= static_cast<std::ptrdiff_t>(g.in_h) || ix >= static_cast<std::ptrdiff_t>(g.in_w)) {
            std::fill(dst, dst + c, 0.0);
          } else {
            const double* src = input + (static_cast<std::size_t>(iy) * g.in_w + static_cast<std::size_t>(ix)) * c;
            std::copy(src, src + c, dst);
          }
        }
      }
    }
  }
}

void col2im(const ConvGeometry& g, const double* col, double* input_grad) {
  const std::size_t c = g.channels;
  const std::size_t cols = g.cols();
  std::fill(input_grad, input_grad + g.in_h * g.in_w * c, 0.0);
  for (std::size_t oy = 0; oy < g.y.out; ++oy) {
    for (std::size_t ox = 0; ox < g.x.out; ++ox) {
      const double* row = col + (oy * g.x.out + ox) * cols;
      for (std::size_t ky = 0; ky < g.kernel; ++ky) {
        const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - static_cast<std::ptrdiff_t>(g.y.pad_before);
        if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.in_h)) continue;
        for (std::size_t kx = 0; kx < g.kernel; ++kx) {
          const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) - static_cast<std::ptrdiff_t>(g.x.pad_before);
          if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.in_w)) continue;
          const double* src = row + (ky * g.kernel + kx) * c;
          double* dst = input_grad + (static_cast<std::size_t>(iy) * g.in_w + static_cast<std::size_t>(ix)) * c;
          for (std::size_t ch = 0; ch < c; ++ch) dst[ch] += src[ch];
        }
      }
    }
  }
}

void conv_forward(const ConvGeometry& g, const double* input, const Tensor& weights, const Tensor& bias,
                  bool relu, std::vector<double>& col, double* out) {
  const std::size_t filters = bias.size();
  if (weights.rank() != 2 || weights.shape()[0] != g.cols() || weights.shape()[1] != filters) {
    throw ShapeError("conv weights " + to_string(weights.shape()) + " do not match " +
                     std::to_string(g.cols()) + "x" + std::to_string(filters));
  }
  const double* a = input;
  if (!g.direct()) {
    col.resize(g.rows() * g.cols());
    im2col(g, input, col.data());
    a = col.data();
  }
  for (std::size_t r = 0; r < g.rows(); ++r) std::copy(bias.raw(), bias.raw() + filters, out + r * filters);
  gemm(g.rows(), g.cols(), filters, a, weights.raw(), out, true);
  if (relu) {
    for (std::size_t i = 0; i < g.rows() * filters; ++i) out[i] = std::max(out[i], 0.0);
  }
}

Tensor maxpool_forward(const Tensor& input, std::size_t kernel, std::size_t stride, Padding padding,
                       std::vector<std::uint32_t>* argmax) {
  const ConvGeometry g = conv_geometry(input.shape(), kernel, stride, padding);
  Tensor out({g.y.out, g.x.out, g.channels});
  if (argmax) argmax->assign(out.size(), 0);
  for (std::size_t oy = 0; oy < g.y.out; ++oy) {
    const auto y0 = static_cast<std::ptrdiff_t>(oy * stride) - static_cast<std::ptrdiff_t>(g.y.pad_before);
    const auto ylo = static_cast<std::size_t>(std::max<std::ptrdiff_t>(y0, 0));
    const auto yhi = static_cast<std::size_t>(std::min<std::ptrdiff_t>(y0 + static_cast<std::ptrdiff_t>(kernel), static_cast<std::ptrdiff_t>(g.in_h)));
    for (std::size_t ox = 0; ox < g.x.out; ++ox) {
      const auto x0 = static_cast<std::ptrdiff_t>(ox * stride) - static_cast<std::ptrdiff_t>(g.x.pad_before);
      const auto xlo = static_cast<std::size_t>(std::max<std::ptrdiff_t>(x0, 0));
      const auto xhi = static_cast<std::size_t>(std::min<std::ptrdiff_t>(x0 + static_cast<std::ptrdiff_t>(kernel), static_cast<std::ptrdiff_t>(g.in_w)));
      for (std::size_t c = 0; c < g.channels; ++c) {
        double best = -std::numeric_limits<double>::infinity();
        std::size_t best_idx = 0;
        for (std::size_t iy = ylo; iy < yhi; ++iy) {
          for (std::size_t ix = xlo; ix < xhi; ++ix) {
            const std::size_t idx = (iy * g.in_w + ix) * g.channels + c;
            if (input[idx] > best) {
              best = input[idx];
              best_idx = idx;
            }
          }
        }
        const std::size_t o = (oy * g.x.out + ox) * g.channels + c;
        out[o] = best;
        if (argmax) (*argmax)[o] = static_cast<std::uint32_t>(best_idx);
      }
    }
  }
  return out;
}

namespace {

template <typename Fn>
void for_each_avg_window(const ConvGeometry& g, std::size_t kernel, std::size_t stride, Fn&& fn) {
  for (std::size_t oy = 0; oy < g.y.out; ++oy) {
    const auto y0 = static_cast<std::ptrdiff_t>(oy * stride) - static_cast<std::ptrdiff_t>(g.y.pad_before);
    const auto ylo = static_cast<std::size_t>(std::max<std::ptrdiff_t>(y0, 0));
    const auto yhi = static_cast<std::size_t>(std::min<std::ptrdiff_t>(y0 + static_cast<std::ptrdiff_t>(kernel), static_cast<std::ptrdiff_t>(g.in_h)));
    for (std::size_t ox = 0; ox < g.x.out; ++ox) {
      const auto x0 = static_cast<std::ptrdiff_t>(ox * stride) - static_cast<std::ptrdiff_t>(g.x.pad_before);
      const auto xlo = static_cast<std::size_t>(std::max<std::ptrdiff_t>(x0, 0));
      const auto xhi = static_cast<std::size_t>(std::min<std::ptrdiff_t>(x0 + static_cast<std::ptrdiff_t>(kernel), static_cast<std::ptrdiff_t>(g.in_w)));
      fn(oy * g.x.out + ox, ylo, yhi, xlo, xhi);
    }
  }
}

}  // namespace

Tensor avgpool_forward(const Tensor& input, std::size_t kernel, std::size_t stride, Padding padding) {
  const ConvGeometry g = conv_geometry(input.shape(), kernel, stride, padding);
  Tensor out({g.y.out, g.x.out, g.channels});
  const std::size_t c = g.channels;
  for_each_avg_window(g, kernel, stride, [&](std::size_t o, std::size_t ylo, std::size_t yhi, std::size_t xlo, std::size_t xhi) {
    const double inv = 1.0 / static_cast<double>((yhi - ylo) * (xhi - xlo));
    double* dst = out.raw() + o * c;
    for (std::size_t iy = ylo; iy < yhi; ++iy) {
      for (std::size_t ix = xlo; ix < xhi; ++ix) {
        const double* src = input.raw() + (iy * g.in_w + ix) * c;
        for (std::size_t ch = 0; ch < c; ++ch) dst[ch] += src[ch];
      }
    }
    for (std::size_t ch = 0; ch < c; ++ch) dst[ch] *= inv;
  });
  return out;
}

Tensor avgpool_backward(const Shape& input_shape, const Tensor& grad_output, std::size_t kernel,
                        std::size_t stride, Padding padding) {
  const ConvGeometry g = conv_geometry(input_shape, kernel, stride, padding);
  Tensor grad(input_shape);
  const std::size_t c = g.channels;
  for_each_avg_window(g, kernel, stride, [&](std::size_t o, std::size_t ylo, std::size_t yhi, std::size_t xlo, std::size_t xhi) {
    const double inv = 1.0 / static_cast<double>((yhi - ylo) * (xhi - xlo));
    const double* src = grad_output.raw() + o * c;
    for (std::size_t iy = ylo; iy < yhi; ++iy) {
      for (std::size_t ix = xlo; ix < xhi; ++ix) {
        double* dst = grad.raw() + (iy * g.in_w + ix) * c;
        for (std::size_t ch = 0; ch < c; ++ch) dst[ch] += src[ch] * inv;
      }
    }
  });
  return grad;
}

}  // namespace detail

Tensor conv2d(const Tensor& input, const Tensor& weights, const Tensor& bias, std::size_t kernel,
              std::size_t stride, Padding padding) {
  const auto g = detail::conv_geometry(input.shape(), kernel, stride, padding);
  if (bias.rank() != 1) throw ShapeError("conv bias must be a vector");
  Tensor out({g.y.out, g.x.out, bias.size()});
  std::vector<double> col;
  detail::conv_forward(g, input.raw(), weights, bias, false, col, out.raw());
  return out;
}

Tensor maxpool2d(const Tensor& input, std::size_t kernel, std::size_t stride, Padding padding) {
  return detail::maxpool_forward(input, kernel, stride, padding, nullptr);
}

Tensor avgpool2d(const Tensor& input, std::size_t kernel, std::size_t stride, Padding padding) {
  return detail::avgpool_forward(input, kernel, stride, padding);
}

Tensor fully_connected(const Tensor& input, const Tensor& weights, const Tensor& bias) {
  if (weights.rank() != 2 || weights.shape()[0] != input.size() || weights.shape()[1] != bias.size()) {
    throw ShapeError("fully connected weights " + to_string(weights.shape()) + " do not match input of " +
                     std::to_string(input.size()) + " and " + std::to_string(bias.size()) + " outputs");
  }
  Tensor out(Shape{bias.size()});
  std::copy(bias.raw(), bias.raw() + bias.size(), out.raw());
  gemm(1, input.size(), bias.size(), input.raw(), weights.raw(), out.raw(), true);
  return out;
}

Tensor relu(const Tensor& input) {
  Tensor out = input;
  for (double& v : out.data()) v = std::max(v, 0.0);
  return out;
}

Tensor l2_normalize(const Tensor& input) {
  double sq = 0.0;
  for (double v : input.data()) sq += v * v;
  Tensor out = input;
  if (sq == 0.0) return out;
  const double inv = 1.0 / std::sqrt(sq);
  for (double& v : out.data()) v *= inv;
  return out;
}

std::vector<double> softmax(std::span<const double> logits) {
  if (logits.empty()) throw ShapeError("softmax of an empty vector");
  const double top = *std::max_element(logits.begin(), logits.end());
  std::vector<double> out(logits.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - top);
    sum += out[i];
  }
  for (double& v : out) v /= sum;
  return out;
}

double cross_entropy_loss(std::span<const double> probs, std::size_t label) {
  if (label >= probs.size()) {
    throw ShapeError("label " + std::to_string(label) + " out of range for " + std::to_string(probs.size()) +
                     " classes");
  }
  return -std::log(std::max(probs[label], kProbabilityFloor));
}

SoftmaxCrossEntropy softmax_cross_entropy(std::span<const double> logits, std::size_t label) {
  SoftmaxCrossEntropy r;
  r.probs = softmax(logits);
  r.loss = cross_entropy_loss(r.probs, label);
  r.grad_logits.assign(logits.size(), 0.0);
  if (r.probs[label] >= kProbabilityFloor) {
    for (std::size_t i = 0; i < logits.size(); ++i) r.grad_logits[i] = r.probs[i] - (i == label ? 1.0 : 0.0);
  }
  return r;
}

}  // namespace maya::nn
