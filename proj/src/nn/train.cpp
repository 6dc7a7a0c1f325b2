#include "maya/nn/train.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>
#include <thread>

#include "maya/nn/ops.hpp"

namespace maya::nn {

void TrainConfig::validate() const {
  if (!std::isfinite(learning_rate) || learning_rate < 0.0) {
    throw TrainingError("learning_rate must be finite and non-negative");
  }
  if (!(beta1 > 0.0 && beta1 < 1.0)) throw TrainingError("beta1 must lie in (0, 1)");
  if (!(beta2 > 0.0 && beta2 < 1.0)) throw TrainingError("beta2 must lie in (0, 1)");
  if (!(epsilon > 0.0)) throw TrainingError("epsilon must be positive");
  if (batch_size == 0) throw TrainingError("batch_size must be positive");
  if (max_epochs == 0) throw TrainingError("max_epochs must be positive");
}

OptimizerState OptimizerState::for_parameters(std::span<Tensor* const> params) {
  OptimizerState s;
  for (const Tensor* p : params) {
    s.m.emplace_back(p->shape());
    s.v.emplace_back(p->shape());
  }
  return s;
}

void adam_step(std::span<Tensor* const> params, std::span<const Tensor> grads, OptimizerState& state,
               const TrainConfig& config) {
  if (params.size() != grads.size() || params.size() != state.m.size() || params.size() != state.v.size()) {
    throw ShapeError("adam_step: parameter, gradient and moment counts differ");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i]->shape() != grads[i].shape() || params[i]->shape() != state.m[i].shape()) {
      throw ShapeError("adam_step: shape mismatch at parameter " + std::to_string(i) + " (" +
                       to_string(params[i]->shape()) + " vs " + to_string(grads[i].shape()) + ")");
    }
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(config.beta1, t);
  const double c2 = 1.0 - std::pow(config.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    double* p = params[i]->raw();
    const double* g = grads[i].raw();
    double* m = state.m[i].raw();
    double* v = state.v[i].raw();
    for (std::size_t j = 0, n = grads[i].size(); j < n; ++j) {
      m[j] = config.beta1 * m[j] + (1.0 - config.beta1) * g[j];
      v[j] = config.beta2 * v[j] + (1.0 - config.beta2) * g[j] * g[j];
      const double mhat = m[j] / c1;
      const double vhat = v[j] / c2;
      p[j] -= config.learning_rate * mhat / (std::sqrt(vhat) + config.epsilon);
    }
  }
}

namespace {

std::size_t argmax(std::span<const double> v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

}  // namespace

EvalResult evaluate_source(const Network& net, const SampleSource& samples, unsigned threads) {
  const std::size_t n = samples.size();
  if (n == 0) throw TrainingError("cannot evaluate an empty sample set");
  std::vector<double> losses(n);
  EvalResult out;
  out.predictions.resize(n);

  auto work = [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      const Tensor logits = net.forward(samples.input(i));
      const auto probs = softmax(logits.data());
      losses[i] = cross_entropy_loss(probs, samples.label(i));
      out.predictions[i] = argmax(probs);
    }
  };
  threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(n)));
  if (threads == 1) {
    work(0, n);
  } else {
    std::vector<std::thread> pool;
    const std::size_t chunk = (n + threads - 1) / threads;
    for (std::size_t b = 0; b < n; b += chunk) pool.emplace_back(work, b, std::min(n, b + chunk));
    for (auto& t : pool) t.join();
  }

  std::size_t correct = 0;
  for (std::size_t i = 0; i < n; ++i) correct += out.predictions[i] == samples.label(i);
  out.loss = std::accumulate(losses.begin(), losses.end(), 0.0) / static_cast<double>(n);
  out.accuracy = static_cast<double>(correct) / static_cast<double>(n);
  return out;
}

TrainResult train(Network& net, const SampleSource& train_set, const SampleSource& val_set,
                  const TrainConfig& config, const EpochCallback& on_epoch) {
  config.validate();
  if (train_set.size() == 0) throw TrainingError("training split is empty");
  if (val_set.size() == 0) throw TrainingError("validation split is empty");

  const auto params = net.parameters();
  OptimizerState state = OptimizerState::for_parameters(params);
  Rng rng(config.seed);
  const std::size_t n = train_set.size();
  std::vector<std::size_t> order(n);
  std::vector<double> sample_loss(n);
  std::vector<char> sample_hit(n);

  TrainResult result;
  Network best = net;
  double best_acc = -1.0;
  double best_loss = std::numeric_limits<double>::infinity();
  std::size_t since_best = 0;

  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    shuffle(std::span(order), rng);

    for (std::size_t start = 0; start < n; start += config.batch_size) {
      const std::size_t end = std::min(n, start + config.batch_size);
      auto grads = net.zero_gradients();
      for (std::size_t k = start; k < end; ++k) {
        const std::size_t i = order[k];
        const Tensor x = train_set.input(i);
        ForwardTrace trace;
        const Tensor logits = net.forward(x, trace);
        auto sce = softmax_cross_entropy(logits.data(), train_set.label(i));
        if (!std::isfinite(sce.loss)) {
          throw TrainingError("non-finite loss at epoch " + std::to_string(epoch) + ", sample " +
                              std::to_string(i));
        }
        sample_loss[i] = sce.loss;
        sample_hit[i] = argmax(sce.probs) == train_set.label(i);
        net.backward(x, trace, Tensor(logits.shape(), std::move(sce.grad_logits)), grads);
      }
      const double scale = 1.0 / static_cast<double>(end - start);
      for (auto& g : grads) {
        for (double& v : g.data()) v *= scale;
      }
      adam_step(params, grads, state, config);
    }

    // Summed in sample order so the figures do not depend on the shuffle.
    EpochMetrics m;
    m.epoch = epoch;
    m.train_loss = std::accumulate(sample_loss.begin(), sample_loss.end(), 0.0) / static_cast<double>(n);
    m.train_accuracy =
        static_cast<double>(std::count(sample_hit.begin(), sample_hit.end(), 1)) / static_cast<double>(n);
    const EvalResult val = evaluate_source(net, val_set);
    m.val_loss = val.loss;
    m.val_accuracy = val.accuracy;
    result.epochs.push_back(m);
    if (on_epoch) on_epoch(m);

    // Small validation sets saturate in accuracy early; lower loss at equal
    // accuracy still counts as progress.
    if (m.val_accuracy > best_acc || (m.val_accuracy == best_acc && m.val_loss < best_loss)) {
      best_acc = m.val_accuracy;
      best_loss = m.val_loss;
      best = net;
      result.best_epoch = epoch;
      since_best = 0;
    } else if (++since_best >= config.patience) {
      result.early_stopped = true;
      break;
    }
  }
  net = std::move(best);
  return result;
}

}  // namespace maya::nn
