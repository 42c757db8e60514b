#include "tcja/autodiff.hpp"

namespace tcja {

template <typename Real>
DiffTensor<Real> Tape<Real>::leaf(Tensor<Real> value, bool requires_grad) {
  Node node;
  node.value = std::move(value);
  node.requires_grad = requires_grad;
  nodes_.push_back(std::move(node));
  return DiffTensor<Real>(this, nodes_.size() - 1);
}

template <typename Real>
DiffTensor<Real> Tape<Real>::parameter(Parameter<Real>& param) {
  auto var = leaf(param.value, true);
  nodes_.back().bound = &param;
  return var;
}

template <typename Real>
DiffTensor<Real> Tape<Real>::record(Tensor<Real> value,
                                    const std::vector<std::size_t>& inputs,
                                    Backward backward) {
  bool needs = false;
  for (std::size_t id : inputs) {
    if (id >= nodes_.size()) throw std::out_of_range("tape input id");
    needs = needs || nodes_[id].requires_grad;
  }
  Node node;
  node.value = std::move(value);
  node.requires_grad = needs;
  if (needs) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return DiffTensor<Real>(this, nodes_.size() - 1);
}

template <typename Real>
const Tensor<Real>* Tape<Real>::grad(std::size_t id) const {
  const Node& node = nodes_.at(id);
  return node.has_grad ? &node.grad : nullptr;
}

template <typename Real>
Tensor<Real>& Tape<Real>::accumulate(std::size_t id) {
  Node& node = nodes_.at(id);
  if (!node.has_grad) {
    node.grad = Tensor<Real>(node.value.shape());
    node.has_grad = true;
  }
  return node.grad;
}

template <typename Real>
const Tensor<Real>& Tape<Real>::upstream(std::size_t id) const {
  return nodes_.at(id).grad;
}

template <typename Real>
void Tape<Real>::backward(const DiffTensor<Real>& loss) {
  if (&loss.tape() != this) throw std::invalid_argument("loss is on another tape");
  const std::size_t root = loss.id();
  if (nodes_.at(root).value.size() != 1) {
    throw ShapeError("backward needs a scalar loss, got shape " +
                     to_string(nodes_[root].value.shape()));
  }
  accumulate(root)[0] += Real(1);
  for (std::size_t i = root + 1; i-- > 0;) {
    Node& node = nodes_[i];
    if (node.has_grad && node.backward) node.backward(*this, i);
  }
  for (Node& node : nodes_) {
    if (!node.bound) continue;
    Parameter<Real>& p = *node.bound;
    if (p.grad.shape() != p.value.shape()) p.grad = Tensor<Real>(p.value.shape());
    if (node.has_grad) {
      for (std::size_t k = 0; k < p.grad.size(); ++k) p.grad[k] += node.grad[k];
    }
    p.grad_ready = true;
  }
}

template class Tape<float>;
template class Tape<double>;

}  // namespace tcja
