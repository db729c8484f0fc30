#include "flood/tensor.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

#include "flood/random.hpp"

namespace flood {

Index shape_numel(const Shape& shape) {
  if (shape.empty()) throw InvalidShape("shape must have at least one dimension");
  Index n = 1;
  for (Index d : shape) {
    if (d <= 0) throw InvalidShape("non-positive dimension in shape " + shape_str(shape));
    n *= d;
  }
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

double Rng::normal() noexcept {
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill) : s_(std::make_shared<TensorStorage<T>>()) {
  const Index n = shape_numel(shape);
  s_->shape = std::move(shape);
  s_->value.assign(static_cast<std::size_t>(n), fill);
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> values) : s_(std::make_shared<TensorStorage<T>>()) {
  const Index n = shape_numel(shape);
  if (static_cast<Index>(values.size()) != n) {
    throw InvalidShape("value count " + std::to_string(values.size()) + " does not match shape " +
                       shape_str(shape));
  }
  s_->shape = std::move(shape);
  s_->value = std::move(values);
}

template <typename T>
Index Tensor<T>::dim(int axis) const {
  const int r = rank();
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) throw InvalidShape("axis out of range for shape " + shape_str(shape()));
  return s_->shape[static_cast<std::size_t>(axis)];
}

template <typename T>
T Tensor<T>::item() const {
  if (numel() != 1) throw InvalidArgument("item() on tensor of shape " + shape_str(shape()));
  return s_->value[0];
}

template <typename T>
Tensor<T>& Tensor<T>::set_requires_grad(bool on) {
  s_->requires_grad = on;
  if (!on) s_->grad.clear();
  return *this;
}

template <typename T>
std::vector<T> Tensor<T>::grad() const {
  if (s_->grad.empty()) return std::vector<T>(s_->value.size(), T{});
  return s_->grad;
}

template <typename T>
Tensor<T> Tensor<T>::clone() const {
  return Tensor<T>(s_->shape, s_->value);
}

template <typename T>
bool Graph<T>::needs_grad(std::initializer_list<const Tensor<T>*> inputs) const {
  if (!recording_) return false;
  for (const auto* t : inputs) {
    if (t && t->defined() && t->requires_grad()) return true;
  }
  return false;
}

template <typename T>
void Graph<T>::record(std::string_view op, std::initializer_list<const Tensor<T>*> inputs, Tensor<T>& out,
                      Backward backward) {
  record(op, std::vector<const Tensor<T>*>(inputs), out, std::move(backward));
}

template <typename T>
void Graph<T>::record(std::string_view op, const std::vector<const Tensor<T>*>& inputs, Tensor<T>& out,
                      Backward backward) {
  Node node;
  node.op = op;
  for (const auto* t : inputs) {
    if (!t || !t->defined()) continue;
    node.inputs.push_back(t->storage()->graph == this ? t->node() : -1);
  }
  auto& st = *out.storage();
  st.requires_grad = true;
  st.graph = this;
  st.node = static_cast<Index>(nodes_.size());
  node.output = out.storage();
  node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
}

template <typename T>
void Graph<T>::backward(const Tensor<T>& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw InvalidArgument("backward requires a scalar loss, got shape " +
                          (loss.defined() ? shape_str(loss.shape()) : std::string("<undefined>")));
  }
  const auto& ls = *loss.storage();
  if (ls.graph != this || ls.node < 0 || ls.node >= static_cast<Index>(nodes_.size())) {
    throw InvalidArgument("loss was not produced by this graph");
  }
  for (auto& n : nodes_) n.output->grad.clear();
  loss.storage()->ensure_grad()[0] = T{1};
  for (Index i = ls.node; i >= 0; --i) {
    auto& n = nodes_[static_cast<std::size_t>(i)];
    if (n.output->grad.empty()) continue;
    n.backward();
  }
}

template <typename T>
Tensor<T> seeded_random(const Shape& shape, std::uint64_t seed, const Distribution& dist) {
  Tensor<T> out(shape);
  Rng rng(seed);
  auto values = out.data();
  std::visit(
      [&](const auto& d) {
        using D = std::decay_t<decltype(d)>;
        for (auto& v : values) {
          if constexpr (std::is_same_v<D, UniformDist>) {
            v = static_cast<T>(rng.uniform(d.low, d.high));
          } else if constexpr (std::is_same_v<D, NormalDist>) {
            v = static_cast<T>(d.mean + d.stddev * rng.normal());
          } else {
            double z = rng.normal();
            while (std::abs(z) > d.bound) z = rng.normal();
            v = static_cast<T>(d.mean + d.stddev * z);
          }
        }
      },
      dist);
  return out;
}

template class Tensor<float>;
template class Tensor<double>;
template class Graph<float>;
template class Graph<double>;
template Tensor<float> seeded_random<float>(const Shape&, std::uint64_t, const Distribution&);
template Tensor<double> seeded_random<double>(const Shape&, std::uint64_t, const Distribution&);

}  // namespace flood
