#pragma once

#include <memory>
#include <vector>

#include "flood/layers.hpp"
#include "flood/model_config.hpp"

namespace flood {

template <typename T>
struct Network {
  virtual ~Network() = default;
  // images [N,H,W,C] -> logits [N, num_classes]
  virtual Tensor<T> forward(ForwardContext<T>& ctx, const Tensor<T>& images) const = 0;
};

template <typename T>
class Classifier {
 public:
  explicit Classifier(ModelConfig config);

  const ModelConfig& config() const { return config_; }
  ParameterSet<T>& parameters() { return params_; }
  const ParameterSet<T>& parameters() const { return params_; }

  // Checks the input against the config, then runs the network.
  Tensor<T> logits(ForwardContext<T>& ctx, const Tensor<T>& images) const;

  // Deep copies of every parameter value, in parameter order.
  std::vector<std::vector<T>> snapshot() const;
  void restore(const std::vector<std::vector<T>>& values);

 private:
  ModelConfig config_;
  ParameterSet<T> params_;
  std::unique_ptr<Network<T>> net_;
};

template <typename T>
Classifier<T> build_model(const ModelConfig& config) {
  return Classifier<T>(config);
}

template <typename T>
ParameterCount count_parameters(const Classifier<T>& model) {
  return {model.parameters().total_count(), model.parameters().trainable_count()};
}

// Inference-mode softmax probabilities [N, num_classes].
template <typename T>
Tensor<T> forward_classify(const Classifier<T>& model, const Tensor<T>& batch);

// Mean cross-entropy of a (training-mode) forward pass, for gradient checks
// and the trainer.
template <typename T>
Tensor<T> classification_loss(ForwardContext<T>& ctx, const Classifier<T>& model, const Tensor<T>& batch,
                              std::span<const int> labels);

}  // namespace flood
