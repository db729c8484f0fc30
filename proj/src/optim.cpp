#include "flood/optim.hpp"

#include <cmath>

namespace flood {

template <typename T>
void adamw_step(std::span<T> params, std::span<const T> grads, AdamState<T>& state, const AdamWConfig& cfg) {
  if (!(cfg.learning_rate > 0)) throw InvalidArgument("learning_rate must be positive");
  if (!grads.empty() && grads.size() != params.size()) throw InvalidShape("adamw: gradient size mismatch");
  if (state.m.empty()) {
    state.m.assign(params.size(), T{0});
    state.v.assign(params.size(), T{0});
  }
  if (state.m.size() != params.size()) throw InvalidShape("adamw: state size mismatch");
  ++state.step;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  const T decay = static_cast<T>(1.0 - cfg.learning_rate * cfg.weight_decay);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads.empty() ? 0.0 : static_cast<double>(grads[i]);
    const double m = cfg.beta1 * static_cast<double>(state.m[i]) + (1.0 - cfg.beta1) * g;
    const double v = cfg.beta2 * static_cast<double>(state.v[i]) + (1.0 - cfg.beta2) * g * g;
    state.m[i] = static_cast<T>(m);
    state.v[i] = static_cast<T>(v);
    if (cfg.weight_decay != 0.0) params[i] *= decay;
    const double update = cfg.learning_rate * (m / bc1) / (std::sqrt(v / bc2) + cfg.eps);
    params[i] = static_cast<T>(static_cast<double>(params[i]) - update);
  }
}

template <typename T>
void AdamW<T>::step(ParameterSet<T>& params) {
  auto& items = params.items();
  if (state_.size() != items.size()) state_.resize(items.size());
  for (std::size_t i = 0; i < items.size(); ++i) {
    auto& p = items[i];
    if (!p.trainable) continue;
    const auto& grad = p.value.storage()->grad;
    adamw_step<T>(p.value.data(), std::span<const T>(grad), state_[i], cfg_);
  }
}

template void adamw_step<float>(std::span<float>, std::span<const float>, AdamState<float>&, const AdamWConfig&);
template void adamw_step<double>(std::span<double>, std::span<const double>, AdamState<double>&, const AdamWConfig&);
template class AdamW<float>;
template class AdamW<double>;

}  // namespace flood
