#include "maya/nn/layers.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "kernels.hpp"
#include "maya/nn/ops.hpp"

namespace maya::nn {

std::size_t Layer::param_count() const {
  std::size_t n = 0;
  for (const Tensor* p : parameters()) n += p->size();
  return n;
}

namespace {

void he_uniform(Tensor& weights, std::size_t fan_in, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
  for (double& w : weights.data()) w = uniform_real(rng, -limit, limit);
}

void require_param_grads(std::span<Tensor> grads, std::size_t n, const std::string& layer) {
  if (grads.size() != n) {
    throw ShapeError("layer '" + layer + "' expects " + std::to_string(n) + " gradient tensors, got " +
                     std::to_string(grads.size()));
  }
}

}  // namespace

// ---------------------------------------------------------------- conv

Conv2dLayer::Conv2dLayer(LayerSpec spec)
    : spec_(std::move(spec)),
      weights_({spec_.kernel * spec_.kernel * spec_.in_channels, spec_.out_channels}),
      bias_(Shape{spec_.out_channels}) {
  spec_.validate();
  if (spec_.kind != LayerKind::conv) throw ShapeError("Conv2dLayer needs a conv spec");
}

Shape Conv2dLayer::output_shape(const Shape& input) const {
  const auto g = detail::conv_geometry(input, spec_.kernel, spec_.stride, spec_.padding);
  if (g.channels != spec_.in_channels) {
    throw ShapeError("layer '" + spec_.name + "' expects " + std::to_string(spec_.in_channels) +
                     " input channels, got " + to_string(input));
  }
  return {g.y.out, g.x.out, spec_.out_channels};
}

Tensor Conv2dLayer::forward(const Tensor& input, LayerCache* cache) const {
  const Shape out_shape = output_shape(input.shape());
  const auto g = detail::conv_geometry(input.shape(), spec_.kernel, spec_.stride, spec_.padding);
  Tensor out(out_shape);
  std::vector<double> col;
  detail::conv_forward(g, input.raw(), weights_, bias_, spec_.relu, col, out.raw());
  if (cache) {
    cache->tensors.clear();
    cache->tensors.push_back(out);
    if (!g.direct()) cache->tensors.emplace_back(Shape{g.rows(), g.cols()}, std::move(col));
  }
  return out;
}

Tensor Conv2dLayer::backward(const Tensor& input, const Tensor& grad_output, const LayerCache& cache,
                             std::span<Tensor> param_grads, bool need_input_grad) const {
  require_param_grads(param_grads, 2, spec_.name);
  const auto g = detail::conv_geometry(input.shape(), spec_.kernel, spec_.stride, spec_.padding);
  const std::size_t rows = g.rows();
  const std::size_t filters = spec_.out_channels;

  std::vector<double> grad(grad_output.data().begin(), grad_output.data().end());
  if (spec_.relu) {
    const Tensor& out = cache.tensors.at(0);
    for (std::size_t i = 0; i < grad.size(); ++i) {
      if (out[i] <= 0.0) grad[i] = 0.0;
    }
  }

  double* db = param_grads[1].raw();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* gr = grad.data() + r * filters;
    for (std::size_t f = 0; f < filters; ++f) db[f] += gr[f];
  }
  const double* col = g.direct() ? input.raw() : cache.tensors.at(1).raw();
  gemm_at_b(rows, g.cols(), filters, col, grad.data(), param_grads[0].raw());

  if (!need_input_grad) return {};

  // dcol = grad * W^T, computed against a transposed copy of W so the
  // inner loop stays contiguous.
  const std::size_t k = g.cols();
  std::vector<double> wt(filters * k);
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t f = 0; f < filters; ++f) wt[f * k + i] = weights_[i * filters + f];
  }
  Tensor input_grad(input.shape());
  if (g.direct()) {
    gemm(rows, filters, k, grad.data(), wt.data(), input_grad.raw(), false);
  } else {
    std::vector<double> dcol(rows * k);
    gemm(rows, filters, k, grad.data(), wt.data(), dcol.data(), false);
    detail::col2im(g, dcol.data(), input_grad.raw());
  }
  return input_grad;
}

void Conv2dLayer::initialize(Rng& rng) {
  he_uniform(weights_, spec_.kernel * spec_.kernel * spec_.in_channels, rng);
  bias_.fill(0.0);
}

// ---------------------------------------------------------------- pooling

PoolLayer::PoolLayer(LayerSpec spec) : spec_(std::move(spec)) {
  spec_.validate();
  if (spec_.kind != LayerKind::maxpool && spec_.kind != LayerKind::avgpool) {
    throw ShapeError("PoolLayer needs a pooling spec");
  }
}

Shape PoolLayer::output_shape(const Shape& input) const {
  const auto g = detail::conv_geometry(input, spec_.kernel, spec_.stride, spec_.padding);
  return {g.y.out, g.x.out, g.channels};
}

Tensor PoolLayer::forward(const Tensor& input, LayerCache* cache) const {
  if (spec_.kind == LayerKind::avgpool) return detail::avgpool_forward(input, spec_.kernel, spec_.stride, spec_.padding);
  return detail::maxpool_forward(input, spec_.kernel, spec_.stride, spec_.padding, cache ? &cache->indices : nullptr);
}

Tensor PoolLayer::backward(const Tensor& input, const Tensor& grad_output, const LayerCache& cache,
                           std::span<Tensor> param_grads, bool need_input_grad) const {
  require_param_grads(param_grads, 0, spec_.name);
  if (!need_input_grad) return {};
  if (spec_.kind == LayerKind::avgpool) {
    return detail::avgpool_backward(input.shape(), grad_output, spec_.kernel, spec_.stride, spec_.padding);
  }
  Tensor grad(input.shape());
  for (std::size_t o = 0; o < grad_output.size(); ++o) grad[cache.indices.at(o)] += grad_output[o];
  return grad;
}

// ---------------------------------------------------------------- inception

namespace {

LayerSpec branch_conv(const LayerSpec& parent, const char* suffix, std::size_t k, std::size_t in, std::size_t out) {
  return LayerSpec::conv(parent.name + "/" + suffix, k, 1, in, out, true);
}

}  // namespace

InceptionLayer::InceptionLayer(LayerSpec spec)
    : spec_(std::move(spec)),
      one_by_one_(branch_conv(spec_, "1x1", 1, spec_.in_channels, spec_.inception.one_by_one)),
      reduce3_(branch_conv(spec_, "3x3_reduce", 1, spec_.in_channels, spec_.inception.reduce3)),
      three_by_three_(branch_conv(spec_, "3x3", 3, spec_.inception.reduce3, spec_.inception.three_by_three)),
      reduce5_(branch_conv(spec_, "5x5_reduce", 1, spec_.in_channels, spec_.inception.reduce5)),
      five_by_five_(branch_conv(spec_, "5x5", 5, spec_.inception.reduce5, spec_.inception.five_by_five)),
      pool_(LayerSpec::maxpool(spec_.name + "/pool", 3, 1)),
      pool_proj_(branch_conv(spec_, "pool_proj", 1, spec_.in_channels, spec_.inception.pool_proj)) {
  if (spec_.kind != LayerKind::inception) throw ShapeError("InceptionLayer needs an inception spec");
}

Shape InceptionLayer::output_shape(const Shape& input) const {
  const Shape s = one_by_one_.output_shape(input);
  return {s[0], s[1], spec_.inception.out_channels()};
}

Tensor InceptionLayer::forward(const Tensor& input, LayerCache* cache) const {
  const Shape out_shape = output_shape(input.shape());
  std::vector<LayerCache> kids(cache ? 7 : 0);
  auto slot = [&](std::size_t i) { return cache ? &kids[i] : nullptr; };

  const Tensor b1 = one_by_one_.forward(input, slot(0));
  Tensor r3 = reduce3_.forward(input, slot(1));
  const Tensor b3 = three_by_three_.forward(r3, slot(2));
  Tensor r5 = reduce5_.forward(input, slot(3));
  const Tensor b5 = five_by_five_.forward(r5, slot(4));
  Tensor pooled = pool_.forward(input, slot(5));
  const Tensor bp = pool_proj_.forward(pooled, slot(6));

  Tensor out(out_shape);
  const std::size_t pixels = out_shape[0] * out_shape[1];
  const std::size_t total = out_shape[2];
  for (std::size_t p = 0; p < pixels; ++p) {
    double* dst = out.raw() + p * total;
    for (const Tensor* b : {&b1, &b3, &b5, &bp}) {
      const std::size_t c = b->channels();
      std::copy(b->raw() + p * c, b->raw() + (p + 1) * c, dst);
      dst += c;
    }
  }
  if (cache) {
    cache->children = std::move(kids);
    cache->tensors.clear();
    cache->tensors.push_back(std::move(r3));
    cache->tensors.push_back(std::move(r5));
    cache->tensors.push_back(std::move(pooled));
  }
  return out;
}

Tensor InceptionLayer::backward(const Tensor& input, const Tensor& grad_output, const LayerCache& cache,
                                std::span<Tensor> param_grads, bool need_input_grad) const {
  require_param_grads(param_grads, 12, spec_.name);
  const auto& s = spec_.inception;
  const std::size_t h = grad_output.height();
  const std::size_t w = grad_output.width();
  const std::size_t total = s.out_channels();

  // Slice the concatenated gradient back into the four branches.
  const std::size_t widths[4] = {s.one_by_one, s.three_by_three, s.five_by_five, s.pool_proj};
  std::vector<Tensor> parts;
  std::size_t offset = 0;
  for (std::size_t width : widths) {
    Tensor part({h, w, width});
    for (std::size_t p = 0; p < h * w; ++p) {
      const double* src = grad_output.raw() + p * total + offset;
      std::copy(src, src + width, part.raw() + p * width);
    }
    parts.push_back(std::move(part));
    offset += width;
  }

  const Tensor& r3 = cache.tensors.at(0);
  const Tensor& r5 = cache.tensors.at(1);
  const Tensor& pooled = cache.tensors.at(2);
  const auto& kids = cache.children;

  Tensor dx1 = one_by_one_.backward(input, parts[0], kids.at(0), param_grads.subspan(0, 2), need_input_grad);
  const Tensor dr3 = three_by_three_.backward(r3, parts[1], kids.at(2), param_grads.subspan(4, 2), true);
  const Tensor dx3 = reduce3_.backward(input, dr3, kids.at(1), param_grads.subspan(2, 2), need_input_grad);
  const Tensor dr5 = five_by_five_.backward(r5, parts[2], kids.at(4), param_grads.subspan(8, 2), true);
  const Tensor dx5 = reduce5_.backward(input, dr5, kids.at(3), param_grads.subspan(6, 2), need_input_grad);
  const Tensor dpool = pool_proj_.backward(pooled, parts[3], kids.at(6), param_grads.subspan(10, 2), true);
  if (!need_input_grad) return {};
  const Tensor dxp = pool_.backward(input, dpool, kids.at(5), {}, true);

  for (std::size_t i = 0; i < dx1.size(); ++i) dx1[i] += dx3[i] + dx5[i] + dxp[i];
  return dx1;
}

std::vector<Tensor*> InceptionLayer::parameters() {
  return {&one_by_one_.weights(), &one_by_one_.bias(), &reduce3_.weights(), &reduce3_.bias(),
          &three_by_three_.weights(), &three_by_three_.bias(), &reduce5_.weights(), &reduce5_.bias(),
          &five_by_five_.weights(), &five_by_five_.bias(), &pool_proj_.weights(), &pool_proj_.bias()};
}

std::vector<const Tensor*> InceptionLayer::parameters() const {
  auto mut = const_cast<InceptionLayer*>(this)->parameters();
  return {mut.begin(), mut.end()};
}

void InceptionLayer::initialize(Rng& rng) {
  one_by_one_.initialize(rng);
  reduce3_.initialize(rng);
  three_by_three_.initialize(rng);
  reduce5_.initialize(rng);
  five_by_five_.initialize(rng);
  pool_proj_.initialize(rng);
}

// ---------------------------------------------------------------- fully connected

FullyConnectedLayer::FullyConnectedLayer(LayerSpec spec)
    : spec_(std::move(spec)), weights_({spec_.in_channels, spec_.out_channels}), bias_(Shape{spec_.out_channels}) {
  spec_.validate();
  if (spec_.kind != LayerKind::fully_connected) throw ShapeError("FullyConnectedLayer needs a fully_connected spec");
}

Shape FullyConnectedLayer::output_shape(const Shape& input) const {
  if (element_count(input) != spec_.in_channels) {
    throw ShapeError("layer '" + spec_.name + "' expects " + std::to_string(spec_.in_channels) +
                     " input features, got " + to_string(input));
  }
  if (input.size() == 3) return {1, 1, spec_.out_channels};
  return {spec_.out_channels};
}

Tensor FullyConnectedLayer::forward(const Tensor& input, LayerCache* cache) const {
  const Shape out_shape = output_shape(input.shape());
  Tensor out = fully_connected(input, weights_, bias_).reshaped(out_shape);
  if (spec_.relu) {
    for (double& v : out.data()) v = std::max(v, 0.0);
  }
  if (cache) {
    cache->tensors.clear();
    cache->tensors.push_back(out);
  }
  return out;
}

Tensor FullyConnectedLayer::backward(const Tensor& input, const Tensor& grad_output, const LayerCache& cache,
                                     std::span<Tensor> param_grads, bool need_input_grad) const {
  require_param_grads(param_grads, 2, spec_.name);
  const std::size_t in = spec_.in_channels;
  const std::size_t out = spec_.out_channels;
  std::vector<double> grad(grad_output.data().begin(), grad_output.data().end());
  if (spec_.relu) {
    const Tensor& y = cache.tensors.at(0);
    for (std::size_t j = 0; j < out; ++j) {
      if (y[j] <= 0.0) grad[j] = 0.0;
    }
  }
  double* db = param_grads[1].raw();
  for (std::size_t j = 0; j < out; ++j) db[j] += grad[j];
  gemm_at_b(1, in, out, input.raw(), grad.data(), param_grads[0].raw());
  if (!need_input_grad) return {};
  Tensor dx(input.shape());
  for (std::size_t i = 0; i < in; ++i) {
    const double* wrow = weights_.raw() + i * out;
    double acc = 0.0;
    for (std::size_t j = 0; j < out; ++j) acc += wrow[j] * grad[j];
    dx[i] = acc;
  }
  return dx;
}

void FullyConnectedLayer::initialize(Rng& rng) {
  he_uniform(weights_, spec_.in_channels, rng);
  bias_.fill(0.0);
}

// ---------------------------------------------------------------- l2 normalization

L2NormLayer::L2NormLayer(LayerSpec spec) : spec_(std::move(spec)) {
  spec_.validate();
  if (spec_.kind != LayerKind::l2norm) throw ShapeError("L2NormLayer needs an l2norm spec");
}

Tensor L2NormLayer::forward(const Tensor& input, LayerCache* cache) const {
  Tensor out = l2_normalize(input);
  if (cache) {
    double sq = 0.0;
    for (double v : input.data()) sq += v * v;
    cache->tensors.clear();
    cache->tensors.push_back(out);
    cache->tensors.emplace_back(Shape{1}, std::vector<double>{std::sqrt(sq)});
  }
  return out;
}

Tensor L2NormLayer::backward(const Tensor& input, const Tensor& grad_output, const LayerCache& cache,
                             std::span<Tensor> param_grads, bool need_input_grad) const {
  require_param_grads(param_grads, 0, spec_.name);
  if (!need_input_grad) return {};
  Tensor dx(input.shape());
  const double norm = cache.tensors.at(1)[0];
  if (norm == 0.0) return dx;
  const Tensor& y = cache.tensors.at(0);
  double dot = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) dot += y[i] * grad_output[i];
  for (std::size_t i = 0; i < y.size(); ++i) dx[i] = (grad_output[i] - y[i] * dot) / norm;
  return dx;
}

std::unique_ptr<Layer> make_layer(const LayerSpec& spec) {
  switch (spec.kind) {
    case LayerKind::conv: return std::make_unique<Conv2dLayer>(spec);
    case LayerKind::maxpool:
    case LayerKind::avgpool: return std::make_unique<PoolLayer>(spec);
    case LayerKind::inception: return std::make_unique<InceptionLayer>(spec);
    case LayerKind::fully_connected: return std::make_unique<FullyConnectedLayer>(spec);
    case LayerKind::l2norm: return std::make_unique<L2NormLayer>(spec);
  }
  throw ShapeError("unsupported layer kind");
}

}  // namespace maya::nn
