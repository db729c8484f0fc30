#pragma once

#include <span>
#include <vector>

#include "flood/layers.hpp"

namespace flood {

struct AdamWConfig {
  double learning_rate = 5e-4;
  double weight_decay = 0.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename T>
struct AdamState {
  std::vector<T> m, v;
  long step = 0;
};

// One decoupled-decay step: theta *= 1 - lr*lambda, then the bias-corrected
// adaptive update. State is sized on first use.
template <typename T>
void adamw_step(std::span<T> params, std::span<const T> grads, AdamState<T>& state, const AdamWConfig& cfg);

// Steps every trainable parameter of a set; parameters without a gradient
// take a zero gradient.
template <typename T>
class AdamW {
 public:
  explicit AdamW(AdamWConfig cfg) : cfg_(cfg) {}
  void step(ParameterSet<T>& params);
  const AdamWConfig& config() const { return cfg_; }

 private:
  AdamWConfig cfg_;
  std::vector<AdamState<T>> state_;
};

}  // namespace flood
