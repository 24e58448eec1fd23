#pragma once

#include <cmath>
#include <functional>
#include <memory>
#include <numeric>
#include <utility>

#include "pbd/common.hpp"

namespace pbd {

// Dense row-major float tensor. The handle has value semantics but shares the
// underlying storage; parameter sharing between encoder and decoder layers is
// exactly this aliasing. Use clone() for a deep copy.
template <class S>
struct TensorNode {
  std::vector<std::size_t> shape;
  std::vector<S> value;
  std::vector<S> grad;  // empty until the tape touches it; empty means zero
  bool requires_grad = false;
};

template <class S>
class TensorT {
public:
  using scalar_type = S;

  TensorT() = default;

  static TensorT zeros(std::vector<std::size_t> shape) {
    TensorT t;
    t.node_ = std::make_shared<TensorNode<S>>();
    t.node_->shape = std::move(shape);
    t.node_->value.assign(t.check_numel(), S(0));
    return t;
  }

  static TensorT full(std::vector<std::size_t> shape, S fill) {
    TensorT t = zeros(std::move(shape));
    for (auto& v : t.node_->value) v = fill;
    return t;
  }

  static TensorT from(std::vector<std::size_t> shape, std::vector<S> data) {
    TensorT t;
    t.node_ = std::make_shared<TensorNode<S>>();
    t.node_->shape = std::move(shape);
    std::size_t n = t.check_numel();
    if (n != data.size())
      throw shape_error("data length " + std::to_string(data.size()) + " does not match shape " +
                        shape_str(t.node_->shape));
    t.node_->value = std::move(data);
    return t;
  }

  static TensorT scalar(S v) { return from({1}, {v}); }

  bool valid() const { return node_ != nullptr; }
  const std::vector<std::size_t>& shape() const { return node_->shape; }
  std::size_t ndim() const { return node_->shape.size(); }
  std::size_t dim(std::size_t i) const { return node_->shape[i]; }
  std::size_t size() const { return node_->value.size(); }

  S* data() { return node_->value.data(); }
  const S* data() const { return node_->value.data(); }
  std::vector<S>& values() { return node_->value; }
  const std::vector<S>& values() const { return node_->value; }

  S item() const {
    if (size() != 1) throw contract_error("item() on non-scalar tensor " + shape_str(shape()));
    return node_->value[0];
  }

  bool requires_grad() const { return node_ && node_->requires_grad; }
  TensorT& set_requires_grad(bool b) {
    node_->requires_grad = b;
    return *this;
  }

  // Zero-filled gradient buffer of matching size; created on demand.
  std::vector<S>& grad_buffer() const {
    if (node_->grad.empty()) node_->grad.assign(node_->value.size(), S(0));
    return node_->grad;
  }
  bool has_grad() const { return !node_->grad.empty(); }
  // Gradient as last computed by Tape::backward; all zeros if this tensor was
  // not on a path to the loss.
  std::vector<S> grad_or_zeros() const {
    if (node_->grad.empty()) return std::vector<S>(node_->value.size(), S(0));
    return node_->grad;
  }
  void clear_grad() const { node_->grad.clear(); }

  TensorT clone() const {
    TensorT t;
    t.node_ = std::make_shared<TensorNode<S>>(*node_);
    return t;
  }

  TensorNode<S>* node() const { return node_.get(); }
  const std::shared_ptr<TensorNode<S>>& node_ptr() const { return node_; }

  bool same_storage(const TensorT& other) const { return node_ == other.node_; }

  bool all_finite() const {
    for (S v : node_->value)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }

private:
  std::size_t check_numel() const {
    std::size_t n = 1;
    for (std::size_t d : node_->shape) {
      if (d == 0) throw shape_error("zero dimension in shape " + shape_str(node_->shape));
      n *= d;
    }
    return n;
  }

  std::shared_ptr<TensorNode<S>> node_;
};

// Records one closure per differentiable op; backward() replays them in exact
// reverse order of recording. Confined to a single training thread.
template <class S>
class Tape {
public:
  void record(std::function<void()> fn) { entries_.push_back(std::move(fn)); }

  std::size_t size() const { return entries_.size(); }

  void clear() { entries_.clear(); }

  void backward(const TensorT<S>& loss) {
    if (loss.size() != 1) throw contract_error("backward requires a scalar loss, got shape " + shape_str(loss.shape()));
    if (!std::isfinite(static_cast<double>(loss.item()))) throw contract_error("backward on non-finite loss");
    loss.grad_buffer()[0] = S(1);
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) (*it)();
  }

private:
  std::vector<std::function<void()>> entries_;
};

template <class S>
bool tracing(const Tape<S>* tape, std::initializer_list<const TensorT<S>*> inputs) {
  if (!tape) return false;
  for (const TensorT<S>* t : inputs)
    if ((*t).requires_grad()) return true;
  return false;
}

using Tensor32 = TensorT<float>;
using Tensor64 = TensorT<double>;

}  // namespace pbd
