#include "maya/nn/network.hpp"

#include <algorithm>

#include "maya/nn/ops.hpp"

namespace maya::nn {

Network::Network(const std::vector<LayerSpec>& specs) {
  for (const auto& s : specs) add(s);
}

Network::Network(const Network& other) {
  layers_.reserve(other.layers_.size());
  for (const auto& l : other.layers_) layers_.push_back(l->clone());
}

Network& Network::operator=(const Network& other) {
  if (this != &other) {
    Network copy(other);
    *this = std::move(copy);
  }
  return *this;
}

void Network::add(const LayerSpec& spec) { layers_.push_back(make_layer(spec)); }

std::vector<LayerSpec> Network::specs() const {
  std::vector<LayerSpec> out;
  for (const auto& l : layers_) out.push_back(l->spec());
  return out;
}

std::size_t Network::find(const std::string& name) const {
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    if (layers_[i]->spec().name == name) return i;
  }
  return layers_.size();
}

Tensor Network::forward(const Tensor& input) const {
  Tensor x = input;
  for (const auto& l : layers_) x = l->forward(x, nullptr);
  return x;
}

Tensor Network::forward(const Tensor& input, ForwardTrace& trace) const {
  trace.outputs.resize(layers_.size());
  trace.caches.assign(layers_.size(), LayerCache{});
  const Tensor* x = &input;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    trace.outputs[i] = layers_[i]->forward(*x, &trace.caches[i]);
    x = &trace.outputs[i];
  }
  return *x;
}

Tensor Network::backward(const Tensor& input, const ForwardTrace& trace, const Tensor& grad_output,
                         std::vector<Tensor>& grads, bool need_input_grad) const {
  if (trace.outputs.size() != layers_.size()) throw ShapeError("trace does not match network depth");
  // Offsets of each layer's block inside the flat gradient list.
  std::vector<std::size_t> offset(layers_.size() + 1, 0);
  for (std::size_t i = 0; i < layers_.size(); ++i) offset[i + 1] = offset[i] + layers_[i]->parameters().size();
  if (grads.size() != offset.back()) throw ShapeError("gradient list does not match network parameters");

  Tensor g = grad_output;
  for (std::size_t i = layers_.size(); i-- > 0;) {
    const Tensor& in = i == 0 ? input : trace.outputs[i - 1];
    const bool want_input = i > 0 || need_input_grad;
    std::span<Tensor> block(grads.data() + offset[i], offset[i + 1] - offset[i]);
    g = layers_[i]->backward(in, g, trace.caches[i], block, want_input);
  }
  return g;
}

std::vector<Tensor*> Network::parameters() {
  std::vector<Tensor*> out;
  for (auto& l : layers_) {
    for (Tensor* p : l->parameters()) out.push_back(p);
  }
  return out;
}

std::vector<const Tensor*> Network::parameters() const {
  std::vector<const Tensor*> out;
  for (const auto& l : layers_) {
    for (const Tensor* p : std::as_const(*l).parameters()) out.push_back(p);
  }
  return out;
}

std::vector<Tensor> Network::zero_gradients() const {
  std::vector<Tensor> out;
  for (const Tensor* p : parameters()) out.emplace_back(p->shape());
  return out;
}

std::size_t Network::param_count() const {
  std::size_t n = 0;
  for (const auto& l : layers_) n += l->param_count();
  return n;
}

std::vector<ShapeRow> Network::shape_trace(const Shape& input) const {
  std::vector<ShapeRow> rows;
  Shape s = input;
  for (const auto& l : layers_) {
    s = l->output_shape(s);
    rows.push_back({l->spec().name, l->spec().kind, s, l->param_count()});
  }
  return rows;
}

void Network::initialize(std::uint64_t seed) {
  Rng rng(seed);
  for (auto& l : layers_) l->initialize(rng);
}

void Network::round_to_float() {
  for (Tensor* p : parameters()) {
    for (double& v : p->data()) v = static_cast<double>(static_cast<float>(v));
  }
}

bool operator==(const Network& a, const Network& b) {
  if (a.specs() != b.specs()) return false;
  const auto pa = a.parameters();
  const auto pb = b.parameters();
  return std::equal(pa.begin(), pa.end(), pb.begin(), pb.end(),
                    [](const Tensor* x, const Tensor* y) { return *x == *y; });
}

LossAndGradients compute_gradients(const Network& net, const Tensor& input, std::size_t label) {
  ForwardTrace trace;
  const Tensor logits = net.forward(input, trace);
  auto sce = softmax_cross_entropy(logits.data(), label);
  LossAndGradients out;
  out.loss = sce.loss;
  out.probs = std::move(sce.probs);
  out.grads = net.zero_gradients();
  net.backward(input, trace, Tensor(logits.shape(), std::move(sce.grad_logits)), out.grads);
  return out;
}

}  // namespace maya::nn
