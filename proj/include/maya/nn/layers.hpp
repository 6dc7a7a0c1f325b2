#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include "maya/nn/layer_spec.hpp"
#include "maya/nn/tensor.hpp"
#include "maya/rng.hpp"

namespace maya::nn {

/// Per-call scratch a layer keeps between forward and backward. Layers
/// themselves stay immutable during forward, so one network can serve many
/// threads as long as each call has its own cache.
struct LayerCache {
  std::vector<Tensor> tensors;
  std::vector<std::uint32_t> indices;
  std::vector<LayerCache> children;
};

class Layer {
 public:
  virtual ~Layer() = default;

  virtual const LayerSpec& spec() const = 0;
  virtual Shape output_shape(const Shape& input) const = 0;

  /// `cache` may be null for inference-only calls.
  virtual Tensor forward(const Tensor& input, LayerCache* cache) const = 0;

  /// Adds this layer's parameter gradients into `param_grads` (same order
  /// as parameters()) and returns d(loss)/d(input), or an empty tensor when
  /// `need_input_grad` is false.
  virtual Tensor backward(const Tensor& input, const Tensor& grad_output, const LayerCache& cache,
                          std::span<Tensor> param_grads, bool need_input_grad) const = 0;

  virtual std::vector<Tensor*> parameters() { return {}; }
  virtual std::vector<const Tensor*> parameters() const { return {}; }

  /// He-uniform weights scaled by fan-in, zero biases.
  virtual void initialize(Rng& rng) { (void)rng; }

  virtual std::unique_ptr<Layer> clone() const = 0;

  std::size_t param_count() const;
};

class Conv2dLayer final : public Layer {
 public:
  explicit Conv2dLayer(LayerSpec spec);

  const LayerSpec& spec() const override { return spec_; }
  Shape output_shape(const Shape& input) const override;
  Tensor forward(const Tensor& input, LayerCache* cache) const override;
  Tensor backward(const Tensor& input, const Tensor& grad_output, const LayerCache& cache,
                  std::span<Tensor> param_grads, bool need_input_grad) const override;
  std::vector<Tensor*> parameters() override { return {&weights_, &bias_}; }
  std::vector<const Tensor*> parameters() const override { return {&weights_, &bias_}; }
  void initialize(Rng& rng) override;
  std::unique_ptr<Layer> clone() const override { return std::make_unique<Conv2dLayer>(*this); }

  Tensor& weights() { return weights_; }
  Tensor& bias() { return bias_; }

 private:
  LayerSpec spec_;
  Tensor weights_;
  Tensor bias_;
};

class PoolLayer final : public Layer {
 public:
  explicit PoolLayer(LayerSpec spec);

  const LayerSpec& spec() const override { return spec_; }
  Shape output_shape(const Shape& input) const override;
  Tensor forward(const Tensor& input, LayerCache* cache) const override;
  Tensor backward(const Tensor& input, const Tensor& grad_output, const LayerCache& cache,
                  std::span<Tensor> param_grads, bool need_input_grad) const override;
  std::unique_ptr<Layer> clone() const override { return std::make_unique<PoolLayer>(*this); }

 private:
  LayerSpec spec_;
};

/// Four parallel branches concatenated along channels: 1x1; 1x1 reduce ->
/// 3x3; 1x1 reduce -> 5x5; 3x3/1 max pool -> 1x1 projection. Every conv
/// is followed by ReLU and the spatial size is preserved.
class InceptionLayer final : public Layer {
 public:
  explicit InceptionLayer(LayerSpec spec);

  const LayerSpec& spec() const override { return spec_; }
  Shape output_shape(const Shape& input) const override;
  Tensor forward(const Tensor& input, LayerCache* cache) const override;
  Tensor backward(const Tensor& input, const Tensor& grad_output, const LayerCache& cache,
                  std::span<Tensor> param_grads, bool need_input_grad) const override;
  std::vector<Tensor*> parameters() override;
  std::vector<const Tensor*> parameters() const override;
  void initialize(Rng& rng) override;
  std::unique_ptr<Layer> clone() const override { return std::make_unique<InceptionLayer>(*this); }

 private:
  LayerSpec spec_;
  Conv2dLayer one_by_one_;
  Conv2dLayer reduce3_;
  Conv2dLayer three_by_three_;
  Conv2dLayer reduce5_;
  Conv2dLayer five_by_five_;
  PoolLayer pool_;
  Conv2dLayer pool_proj_;
};

class FullyConnectedLayer final : public Layer {
 public:
  explicit FullyConnectedLayer(LayerSpec spec);

  const LayerSpec& spec() const override { return spec_; }
  /// Rank-3 inputs keep a 1x1xN layout; anything else becomes a vector.
  Shape output_shape(const Shape& input) const override;
  Tensor forward(const Tensor& input, LayerCache* cache) const override;
  Tensor backward(const Tensor& input, const Tensor& grad_output, const LayerCache& cache,
                  std::span<Tensor> param_grads, bool need_input_grad) const override;
  std::vector<Tensor*> parameters() override { return {&weights_, &bias_}; }
  std::vector<const Tensor*> parameters() const override { return {&weights_, &bias_}; }
  void initialize(Rng& rng) override;
  std::unique_ptr<Layer> clone() const override { return std::make_unique<FullyConnectedLayer>(*this); }

  Tensor& weights() { return weights_; }
  Tensor& bias() { return bias_; }

 private:
  LayerSpec spec_;
  Tensor weights_;
  Tensor bias_;
};

class L2NormLayer final : public Layer {
 public:
  explicit L2NormLayer(LayerSpec spec);

  const LayerSpec& spec() const override { return spec_; }
  Shape output_shape(const Shape& input) const override { return input; }
  Tensor forward(const Tensor& input, LayerCache* cache) const override;
  Tensor backward(const Tensor& input, const Tensor& grad_output, const LayerCache& cache,
                  std::span<Tensor> param_grads, bool need_input_grad) const override;
  std::unique_ptr<Layer> clone() const override { return std::make_unique<L2NormLayer>(*this); }

 private:
  LayerSpec spec_;
};

std::unique_ptr<Layer> make_layer(const LayerSpec& spec);

}  // namespace maya::nn
