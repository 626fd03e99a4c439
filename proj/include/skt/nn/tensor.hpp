#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace skt::nn {

using Shape = std::vector<std::size_t>;

inline std::size_t numel_of(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string to_string(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) {
    os << (i ? "x" : "") << s[i];
  }
  os << ']';
  return os.str();
}

namespace detail {
inline bool& grad_enabled_flag() {
  thread_local bool enabled = true;
  return enabled;
}
}  // namespace detail

inline bool grad_enabled() { return detail::grad_enabled_flag(); }

// Disables graph recording in the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : saved_(detail::grad_enabled_flag()) { detail::grad_enabled_flag() = false; }
  ~NoGradGuard() { detail::grad_enabled_flag() = saved_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool saved_;
};

template <typename T>
struct Node {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;  // empty until first accumulation
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;  // empty for leaves

  bool is_leaf() const { return !backward; }

  std::vector<T>& grad_buffer() {
    if (grad.empty()) {
      grad.assign(value.size(), T(0));
    }
    return grad;
  }
};

// Shape-tagged value with reverse-mode gradient support. Copies share the
// underlying node, so a Tensor behaves like a handle.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    auto node = std::make_shared<Node<T>>();
    node->value.assign(numel_of(shape), T(0));
    node->shape = std::move(shape);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
  }

  static Tensor from(Shape shape, std::vector<T> values, bool requires_grad = false) {
    if (numel_of(shape) != values.size()) {
      throw std::invalid_argument("Tensor::from: shape " + nn::to_string(shape) + " does not match " +
                                  std::to_string(values.size()) + " values");
    }
    auto node = std::make_shared<Node<T>>();
    node->shape = std::move(shape);
    node->value = std::move(values);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
  }

  static Tensor vector(std::vector<T> values, bool requires_grad = false) {
    const std::size_t n = values.size();
    return from({n}, std::move(values), requires_grad);
  }

  static Tensor scalar(T v, bool requires_grad = false) { return from({}, {v}, requires_grad); }

  explicit Tensor(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t numel() const { return node_->value.size(); }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t rows() const { return rank() == 2 ? dim(0) : 1; }
  std::size_t cols() const { return rank() == 2 ? dim(1) : (rank() == 1 ? dim(0) : 1); }

  std::span<const T> data() const { return node_->value; }
  std::span<T> mutable_data() { return node_->value; }
  std::span<const T> grad() const { return node_->grad; }
  std::span<T> mutable_grad() { return node_->grad_buffer(); }
  bool has_grad() const { return !node_->grad.empty(); }

  T item() const {
    if (numel() != 1) {
      throw std::invalid_argument("Tensor::item on tensor of shape " + nn::to_string(shape()));
    }
    return node_->value[0];
  }
  T at(std::size_t i) const { return node_->value.at(i); }
  T at(std::size_t r, std::size_t c) const { return node_->value.at(r * cols() + c); }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }

  void zero_grad() { node_->grad.clear(); }

  // New leaf sharing no history with this tensor.
  Tensor detach() const { return from(shape(), node_->value, false); }

  std::vector<T> to_vector() const { return node_->value; }

  Node<T>* node() const { return node_.get(); }
  const std::shared_ptr<Node<T>>& node_ptr() const { return node_; }

 private:
  std::shared_ptr<Node<T>> node_;
};

namespace detail {

// Creates the output node of an op. Records inputs and the backward closure
// only when grad mode is on and some input requires a gradient.
template <typename T>
Tensor<T> record(Shape shape, std::vector<T> value, std::initializer_list<Tensor<T>> inputs,
                 std::function<void(Node<T>&)> backward) {
  auto node = std::make_shared<Node<T>>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  if (grad_enabled()) {
    bool any = false;
    for (const auto& in : inputs) {
      any = any || in.requires_grad();
    }
    if (any) {
      node->requires_grad = true;
      node->inputs.reserve(inputs.size());
      for (const auto& in : inputs) {
        node->inputs.push_back(in.node_ptr());
      }
      node->backward = std::move(backward);
    }
  }
  return Tensor<T>(std::move(node));
}

template <typename T>
Tensor<T> record_many(Shape shape, std::vector<T> value, const std::vector<Tensor<T>>& inputs,
                      std::function<void(Node<T>&)> backward) {
  auto node = std::make_shared<Node<T>>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  if (grad_enabled()) {
    bool any = false;
    for (const auto& in : inputs) {
      any = any || in.requires_grad();
    }
    if (any) {
      node->requires_grad = true;
      for (const auto& in : inputs) {
        node->inputs.push_back(in.node_ptr());
      }
      node->backward = std::move(backward);
    }
  }
  return Tensor<T>(std::move(node));
}

// Gradient sink for input i, or nullptr when that input needs no gradient.
template <typename T>
T* grad_of(Node<T>& self, std::size_t i) {
  Node<T>& in = *self.inputs[i];
  return in.requires_grad ? in.grad_buffer().data() : nullptr;
}

}  // namespace detail

// Populates gradients of every requires_grad tensor reachable from `loss`.
// Leaf gradients accumulate across calls; intermediate ones are recomputed.
template <typename T>
void backward(const Tensor<T>& loss) {
  if (loss.numel() != 1) {
    throw std::invalid_argument("backward: loss must be a scalar, got shape " + to_string(loss.shape()));
  }
  if (!loss.requires_grad()) {
    return;
  }
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<Node<T>*, std::size_t>> stack{{loss.node(), 0}};
  seen.insert(loss.node());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->inputs.size()) {
      Node<T>* child = n->inputs[next++].get();
      if (child->requires_grad && seen.insert(child).second) {
        stack.emplace_back(child, 0);
      }
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  for (Node<T>* n : order) {
    if (!n->is_leaf()) {
      n->grad.assign(n->value.size(), T(0));
    }
  }
  loss.node()->grad_buffer()[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if (!(*it)->is_leaf()) {
      (*it)->backward(**it);
    }
  }
}

}  // namespace skt::nn
