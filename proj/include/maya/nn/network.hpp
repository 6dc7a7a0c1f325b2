#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "maya/nn/layers.hpp"

namespace maya::nn {

/// Everything backward() needs from one forward pass.
struct ForwardTrace {
  std::vector<Tensor> outputs;  // outputs[i] is the output of layer i
  std::vector<LayerCache> caches;
};

struct ShapeRow {
  std::string name;
  LayerKind kind;
  Shape output;
  std::size_t params = 0;
};

/// A flat sequence of layers. Copying deep-copies the weights.
class Network {
 public:
  Network() = default;
  explicit Network(const std::vector<LayerSpec>& specs);
  Network(const Network& other);
  Network& operator=(const Network& other);
  Network(Network&&) noexcept = default;
  Network& operator=(Network&&) noexcept = default;

  void add(const LayerSpec& spec);

  std::size_t size() const { return layers_.size(); }
  const Layer& layer(std::size_t i) const { return *layers_.at(i); }
  std::vector<LayerSpec> specs() const;
  /// Index of the first layer with this name, or size() if absent.
  std::size_t find(const std::string& name) const;

  Tensor forward(const Tensor& input) const;
  Tensor forward(const Tensor& input, ForwardTrace& trace) const;

  /// Accumulates parameter gradients into `grads` (layout of
  /// zero_gradients()). Returns d(loss)/d(input) when requested.
  Tensor backward(const Tensor& input, const ForwardTrace& trace, const Tensor& grad_output,
                  std::vector<Tensor>& grads, bool need_input_grad = false) const;

  /// All parameter tensors, layer by layer in declaration order.
  std::vector<Tensor*> parameters();
  std::vector<const Tensor*> parameters() const;
  std::vector<Tensor> zero_gradients() const;

  std::size_t param_count() const;
  /// Output shape and parameter count of every layer for a given input.
  std::vector<ShapeRow> shape_trace(const Shape& input) const;

  /// Re-draws every parameter from a generator seeded with `seed`.
  void initialize(std::uint64_t seed);
  /// Rounds every parameter to float precision, matching a saved checkpoint.
  void round_to_float();

  friend bool operator==(const Network& a, const Network& b);

 private:
  std::vector<std::unique_ptr<Layer>> layers_;
};

struct LossAndGradients {
  double loss = 0.0;
  std::vector<double> probs;
  std::vector<Tensor> grads;
};

/// Softmax cross-entropy on the network's final output (the logits) and
/// the gradient of every parameter.
LossAndGradients compute_gradients(const Network& net, const Tensor& input, std::size_t label);

}  // namespace maya::nn
