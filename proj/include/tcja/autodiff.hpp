#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <string>
#include <vector>

#include "tcja/tensor.hpp"

namespace tcja {

// A trainable tensor that outlives individual tapes. Gradients from each
// backward pass are added into `grad`; `grad_ready` records that the
// parameter took part in the last pass.
template <typename Real>
struct Parameter {
  std::string name;
  Tensor<Real> value;
  Tensor<Real> grad;
  bool grad_ready = false;

  Parameter() = default;
  Parameter(std::string n, Tensor<Real> v)
      : name(std::move(n)), value(std::move(v)), grad(value.shape()) {}

  void zero_grad() {
    grad = Tensor<Real>(value.shape());
    grad_ready = false;
  }
};

template <typename Real>
class Tape;

// Handle to a node on a Tape. Cheap to copy; valid until the tape is cleared.
template <typename Real>
class DiffTensor {
 public:
  DiffTensor() = default;
  DiffTensor(Tape<Real>* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape<Real>& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

  const Tensor<Real>& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t size() const { return value().size(); }
  bool requires_grad() const;
  // Null until backward has reached this node.
  const Tensor<Real>* grad() const;

 private:
  Tape<Real>* tape_ = nullptr;
  std::size_t id_ = 0;
};

// Reverse-mode recording. Nodes are appended in execution order, so the
// node vector is already a topological order and every recorded input id
// is smaller than the id of its consumer.
template <typename Real>
class Tape {
 public:
  // Called with the tape and the node's own id; reads grad(self) and
  // accumulates into its inputs through accumulate().
  using Backward = std::function<void(Tape&, std::size_t)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = default;
  Tape& operator=(Tape&&) = default;

  DiffTensor<Real> leaf(Tensor<Real> value, bool requires_grad = false);
  // Copies the parameter's current value; backward adds the node's gradient
  // into param.grad.
  DiffTensor<Real> parameter(Parameter<Real>& param);
  // Records an op result. The backward recipe is dropped when no input
  // requires a gradient.
  DiffTensor<Real> record(Tensor<Real> value,
                          const std::vector<std::size_t>& inputs,
                          Backward backward);

  const Tensor<Real>& value(std::size_t id) const { return nodes_.at(id).value; }
  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
  const Tensor<Real>* grad(std::size_t id) const;
  // Gradient slot of an input node, zero-initialized on first touch.
  Tensor<Real>& accumulate(std::size_t id);
  const Tensor<Real>& upstream(std::size_t id) const;

  // Seeds d(loss)/d(loss) = 1 and runs every recorded backward recipe in
  // reverse order. The loss must hold exactly one element.
  void backward(const DiffTensor<Real>& loss);

  void clear() { nodes_.clear(); }
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor<Real> value;
    Tensor<Real> grad;  // empty shape + no storage until touched
    bool has_grad = false;
    bool requires_grad = false;
    Backward backward;
    Parameter<Real>* bound = nullptr;
  };
  // deque: appending never invalidates references returned by value()
  std::deque<Node> nodes_;
};

template <typename Real>
const Tensor<Real>& DiffTensor<Real>::value() const {
  return tape_->value(id_);
}

template <typename Real>
bool DiffTensor<Real>::requires_grad() const {
  return tape_->requires_grad(id_);
}

template <typename Real>
const Tensor<Real>* DiffTensor<Real>::grad() const {
  return tape_->grad(id_);
}

extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace tcja
