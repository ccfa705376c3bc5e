#pragma once

// Dense row-major tensors with tape-free reverse-mode autodiff.
//
// Every op result that depends on a grad-requiring input records its parents
// and a backward closure. Nodes carry a global sequence number; backward()
// collects the subgraph reachable from the loss and replays it in descending
// sequence order, which is the reverse of recording order.

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <new>
#include <numeric>
#include <span>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "droppos/errors.hpp"

namespace droppos {

using Shape = std::vector<std::size_t>;

inline std::size_t numel_of(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

/// Cache-line aligned allocator. Vectorized kernels peel loops by pointer
/// alignment, so a fixed alignment keeps float results identical across runs.
template <class T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};

  AlignedAllocator() = default;
  template <class U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlign); }

  template <class U>
  bool operator==(const AlignedAllocator<U>&) const noexcept {
    return true;
  }
};

template <class T>
using Buffer = std::vector<T, AlignedAllocator<T>>;

namespace detail {

inline std::atomic<std::uint64_t>& sequence_counter() {
  static std::atomic<std::uint64_t> counter{0};
  return counter;
}

inline bool& grad_mode_flag() {
  thread_local bool enabled = true;
  return enabled;
}

template <class T>
struct Node {
  Shape shape;
  Buffer<T> data;
  Buffer<T> grad;  // empty until first accumulation
  bool requires_grad = false;
  std::uint64_t seq = sequence_counter().fetch_add(1, std::memory_order_relaxed);
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;  // reads this->grad, accumulates into parents

  bool is_leaf() const noexcept { return !backward_fn; }

  Buffer<T>& grad_buffer() {
    if (grad.empty()) grad.assign(data.size(), T(0));
    return grad;
  }
};

}  // namespace detail

/// Disables graph recording on this thread for the guard's lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : prev_(detail::grad_mode_flag()) { detail::grad_mode_flag() = false; }
  ~NoGradGuard() { detail::grad_mode_flag() = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

inline bool grad_enabled() noexcept { return detail::grad_mode_flag(); }

template <class T>
class Tensor {
 public:
  using value_type = T;
  using NodePtr = std::shared_ptr<detail::Node<T>>;

  Tensor() : node_(std::make_shared<detail::Node<T>>()) {}

  explicit Tensor(Shape shape, T fill = T(0), bool requires_grad = false)
      : node_(std::make_shared<detail::Node<T>>()) {
    node_->data.assign(numel_of(shape), fill);
    node_->shape = std::move(shape);
    node_->requires_grad = requires_grad;
  }

  Tensor(Shape shape, const std::vector<T>& data, bool requires_grad = false)
      : Tensor(std::move(shape), Buffer<T>(data.begin(), data.end()), requires_grad) {}
  Tensor(Shape shape, std::initializer_list<T> data, bool requires_grad = false)
      : Tensor(std::move(shape), Buffer<T>(data), requires_grad) {}

  Tensor(Shape shape, Buffer<T> data, bool requires_grad = false)
      : node_(std::make_shared<detail::Node<T>>()) {
    if (numel_of(shape) != data.size()) {
      throw ShapeError("tensor data length " + std::to_string(data.size()) +
                       " does not match shape " + shape_str(shape));
    }
    node_->shape = std::move(shape);
    node_->data = std::move(data);
    node_->requires_grad = requires_grad;
  }

  static Tensor scalar(T v, bool requires_grad = false) { return Tensor(Shape{}, {v}, requires_grad); }

  const Shape& shape() const noexcept { return node_->shape; }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t rank() const noexcept { return node_->shape.size(); }
  std::size_t numel() const noexcept { return node_->data.size(); }

  std::span<T> data() noexcept { return node_->data; }
  std::span<const T> data() const noexcept { return node_->data; }
  /// Writable view through a const handle; tensors are shared handles.
  std::span<T> mutable_data() const noexcept { return node_->data; }
  std::vector<T> values() const { return {node_->data.begin(), node_->data.end()}; }

  T item() const {
    if (numel() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape()));
    return node_->data[0];
  }
  T operator[](std::size_t i) const { return node_->data[i]; }

  bool requires_grad() const noexcept { return node_->requires_grad; }
  void set_requires_grad(bool on) noexcept { node_->requires_grad = on; }

  bool has_grad() const noexcept { return !node_->grad.empty(); }
  /// Gradient buffer; all zeros if nothing has been accumulated yet.
  std::span<const T> grad() const {
    if (node_->grad.empty()) node_->grad.assign(node_->data.size(), T(0));
    return node_->grad;
  }
  Tensor grad_tensor() const {
    auto g = grad();
    return Tensor(shape(), Buffer<T>(g.begin(), g.end()));
  }
  void zero_grad() const noexcept { node_->grad.clear(); }

  /// Copy with no graph history.
  Tensor detach() const { return Tensor(shape(), node_->data, false); }

  const NodePtr& node() const noexcept { return node_; }
  static Tensor from_node(NodePtr n) {
    Tensor t;
    t.node_ = std::move(n);
    return t;
  }

  bool same_node(const Tensor& o) const noexcept { return node_ == o.node_; }

 private:
  NodePtr node_;
};

/// Creates a result tensor whose graph links are recorded only when some input
/// requires grad and grad mode is on. `fn` receives the result node.
template <class T>
Tensor<T> make_result(Shape shape, Buffer<T> data, std::initializer_list<Tensor<T>> inputs,
                      std::function<void(detail::Node<T>&)> fn) {
  Tensor<T> out(std::move(shape), std::move(data));
  if (!grad_enabled()) return out;
  bool any = false;
  for (const auto& in : inputs) any = any || in.requires_grad();
  if (!any) return out;
  auto& n = *out.node();
  n.requires_grad = true;
  for (const auto& in : inputs) n.parents.push_back(in.node());
  n.backward_fn = std::move(fn);
  return out;
}

template <class T>
Tensor<T> make_result(Shape shape, Buffer<T> data, const std::vector<Tensor<T>>& inputs,
                      std::function<void(detail::Node<T>&)> fn) {
  Tensor<T> out(std::move(shape), std::move(data));
  if (!grad_enabled()) return out;
  bool any = false;
  for (const auto& in : inputs) any = any || in.requires_grad();
  if (!any) return out;
  auto& n = *out.node();
  n.requires_grad = true;
  for (const auto& in : inputs) n.parents.push_back(in.node());
  n.backward_fn = std::move(fn);
  return out;
}

/// Populates grads of every grad-requiring leaf reachable from `loss`.
/// Leaf grads accumulate across calls; call zero_grad() between steps.
template <class T>
void backward(const Tensor<T>& loss) {
  if (loss.numel() != 1) {
    throw ContractError("backward() needs a scalar loss, got shape " + shape_str(loss.shape()));
  }
  if (!loss.requires_grad()) return;

  using Node = detail::Node<T>;
  std::vector<Node*> order;
  std::unordered_set<const Node*> seen;
  std::vector<Node*> stack{loss.node().get()};
  seen.insert(loss.node().get());
  while (!stack.empty()) {
    Node* n = stack.back();
    stack.pop_back();
    order.push_back(n);
    for (auto& p : n->parents) {
      if (p->requires_grad && seen.insert(p.get()).second) stack.push_back(p.get());
    }
  }
  std::sort(order.begin(), order.end(), [](const Node* a, const Node* b) { return a->seq > b->seq; });

  for (Node* n : order) {
    if (!n->is_leaf()) n->grad.assign(n->data.size(), T(0));
  }
  loss.node()->grad_buffer()[0] += T(1);
  for (Node* n : order) {
    if (n->is_leaf()) continue;
    n->backward_fn(*n);
  }
}

}  // namespace droppos
