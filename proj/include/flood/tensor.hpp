#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "flood/errors.hpp"

namespace flood {

using Index = std::int64_t;
using Shape = std::vector<Index>;

// Element count; throws InvalidShape for an empty shape or a non-positive dimension.
Index shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

template <typename T>
class Graph;

template <typename T>
struct TensorStorage {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;  // empty until a backward pass touches it
  bool requires_grad = false;
  const Graph<T>* graph = nullptr;  // producing graph, null for leaves
  Index node = -1;

  std::vector<T>& ensure_grad() {
    if (grad.empty()) grad.assign(value.size(), T{});
    return grad;
  }
};

// Dense row-major array. Copies share storage (handle semantics); use clone()
// for a deep copy.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T{});
  Tensor(Shape shape, std::vector<T> values);

  static Tensor scalar(T v) { return Tensor(Shape{1}, std::vector<T>{v}); }

  bool defined() const noexcept { return static_cast<bool>(s_); }
  const Shape& shape() const { return s_->shape; }
  Index dim(int axis) const;
  int rank() const { return static_cast<int>(s_->shape.size()); }
  Index numel() const { return static_cast<Index>(s_->value.size()); }

  std::span<T> data() { return s_->value; }
  std::span<const T> data() const { return s_->value; }
  T& operator[](Index i) { return s_->value[static_cast<std::size_t>(i)]; }
  const T& operator[](Index i) const { return s_->value[static_cast<std::size_t>(i)]; }
  T item() const;

  bool requires_grad() const { return s_->requires_grad; }
  Tensor& set_requires_grad(bool on);
  bool has_grad() const { return !s_->grad.empty(); }
  // Zero-filled view when no gradient has been accumulated yet.
  std::vector<T> grad() const;
  void zero_grad() { s_->grad.clear(); }

  Tensor clone() const;    // deep copy of values, no gradient state
  Tensor detach() const { return clone(); }

  const std::shared_ptr<TensorStorage<T>>& storage() const { return s_; }
  bool is_leaf() const { return s_->graph == nullptr; }
  Index node() const { return s_->node; }

 private:
  std::shared_ptr<TensorStorage<T>> s_;
};

template <typename T>
void zero_grads(std::span<Tensor<T>> tensors) {
  for (auto& t : tensors) t.zero_grad();
}

// Append-only tape. Each recorded op stores a closure that pushes the output
// gradient into its inputs; backward replays the tape in reverse.
template <typename T>
class Graph {
 public:
  using Backward = std::function<void()>;

  explicit Graph(bool recording = true) : recording_(recording) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  bool recording() const noexcept { return recording_; }

  // True when an op over these inputs must be recorded.
  bool needs_grad(std::initializer_list<const Tensor<T>*> inputs) const;

  // Marks `out` as produced by this graph and appends the node.
  void record(std::string_view op, std::initializer_list<const Tensor<T>*> inputs, Tensor<T>& out,
              Backward backward);
  void record(std::string_view op, const std::vector<const Tensor<T>*>& inputs, Tensor<T>& out,
              Backward backward);

  // Reverse-mode accumulation from a scalar loss produced by this graph.
  // Leaf gradients accumulate additively across calls.
  void backward(const Tensor<T>& loss);

  void clear() { nodes_.clear(); }
  std::size_t size() const noexcept { return nodes_.size(); }
  std::string_view op_name(std::size_t i) const { return nodes_[i].op; }
  const std::vector<Index>& node_inputs(std::size_t i) const { return nodes_[i].inputs; }

 private:
  struct Node {
    std::string_view op;
    std::vector<Index> inputs;  // producing node ids, -1 for leaves
    std::shared_ptr<TensorStorage<T>> output;
    Backward backward;
  };
  bool recording_;
  std::vector<Node> nodes_;
};

struct UniformDist {
  double low = 0.0;
  double high = 1.0;
};
struct NormalDist {
  double mean = 0.0;
  double stddev = 1.0;
};
// Normal resampled until within `bound` standard deviations of the mean.
struct TruncatedNormalDist {
  double mean = 0.0;
  double stddev = 1.0;
  double bound = 2.0;
};
using Distribution = std::variant<UniformDist, NormalDist, TruncatedNormalDist>;

template <typename T>
Tensor<T> seeded_random(const Shape& shape, std::uint64_t seed, const Distribution& dist);

}  // namespace flood
