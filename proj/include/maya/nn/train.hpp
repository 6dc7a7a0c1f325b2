#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <vector>

#include "maya/nn/network.hpp"

namespace maya::nn {

struct TrainConfig {
  double learning_rate = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::size_t batch_size = 64;
  std::size_t max_epochs = 50;
  std::uint64_t seed = 0;
  /// Epochs without a validation improvement (higher accuracy, or equal
  /// accuracy and lower loss) before stopping.
  std::size_t patience = 5;

  /// Rejects negative or non-finite rates and betas outside (0, 1). A zero
  /// learning rate is allowed as a no-op run.
  void validate() const;
};

struct OptimizerState {
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  std::uint64_t step = 0;

  static OptimizerState for_parameters(std::span<Tensor* const> params);
  friend bool operator==(const OptimizerState&, const OptimizerState&) = default;
};

/// One bias-corrected ADAM update.
void adam_step(std::span<Tensor* const> params, std::span<const Tensor> grads, OptimizerState& state,
               const TrainConfig& config);

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Indexed labelled samples. Implementations must be safe to read from
/// several threads at once.
class SampleSource {
 public:
  virtual ~SampleSource() = default;
  virtual std::size_t size() const = 0;
  virtual Tensor input(std::size_t i) const = 0;
  virtual std::size_t label(std::size_t i) const = 0;
};

struct EpochMetrics {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double train_accuracy = 0.0;
  double val_loss = 0.0;
  double val_accuracy = 0.0;

  friend bool operator==(const EpochMetrics&, const EpochMetrics&) = default;
};

struct TrainResult {
  std::vector<EpochMetrics> epochs;
  std::size_t best_epoch = 0;
  bool early_stopped = false;
};

struct EvalResult {
  double loss = 0.0;
  double accuracy = 0.0;
  std::vector<std::size_t> predictions;
};

/// Mean loss, accuracy and argmax predictions. `threads` > 1 splits the
/// work; results do not depend on it.
EvalResult evaluate_source(const Network& net, const SampleSource& samples, unsigned threads = 1);

using EpochCallback = std::function<void(const EpochMetrics&)>;

/// Mini-batch ADAM with a seeded per-epoch shuffle. Train loss and
/// accuracy are averaged over the batches as they are seen. On return
/// `net` holds the weights of the best validation epoch.
TrainResult train(Network& net, const SampleSource& train_set, const SampleSource& val_set,
                  const TrainConfig& config, const EpochCallback& on_epoch = {});

}  // namespace maya::nn
