#include "can/graph.hpp"

#include "can/errors.hpp"

namespace can {

const Tensor& Var::value() const { return graph->value(id); }
const Shape& Var::shape() const { return graph->value(id).shape(); }

Var Graph::input(Tensor value) {
  Node node;
  node.value = std::move(value);
  nodes_.push_back(std::move(node));
  return Var{this, static_cast<int>(nodes_.size() - 1)};
}

Var Graph::param(Tensor& tensor) {
  Node node;
  node.value = Tensor(tensor.shape(), std::vector<double>(tensor.values().begin(),
                                                          tensor.values().end()));
  node.requires_grad = tensor.requires_grad();
  if (node.requires_grad) node.leaf = &tensor;
  nodes_.push_back(std::move(node));
  return Var{this, static_cast<int>(nodes_.size() - 1)};
}

Var Graph::record(Tensor value, std::vector<Var> inputs, BackwardFn fn) {
  Node node;
  node.value = std::move(value);
  for (const Var& in : inputs) {
    if (in.graph != this) throw Error("operand belongs to a different graph");
    node.inputs.push_back(in.id);
    node.requires_grad = node.requires_grad || nodes_[in.id].requires_grad;
  }
  if (node.requires_grad) node.backward = std::move(fn);
  if (!node.backward) node.requires_grad = false;
  nodes_.push_back(std::move(node));
  return Var{this, static_cast<int>(nodes_.size() - 1)};
}

std::span<double> Graph::grad(int id) {
  Node& node = nodes_.at(id);
  if (node.grad.empty()) node.grad.assign(node.value.size(), 0.0);
  return node.grad;
}

void Graph::backward(Var loss) {
  if (loss.graph != this) throw Error("loss belongs to a different graph");
  if (value(loss).size() != 1) {
    throw ShapeError("backward() needs a scalar loss, got " + shape_str(value(loss).shape()));
  }
  for (auto& node : nodes_) node.grad.clear();
  grad(loss.id)[0] = 1.0;
  for (int id = loss.id; id >= 0; --id) {
    Node& node = nodes_[id];
    if (!node.requires_grad || node.grad.empty()) continue;
    if (node.backward) node.backward(*this, id);
    if (node.leaf != nullptr) {
      auto target = node.leaf->grad();
      for (std::size_t i = 0; i < target.size(); ++i) target[i] += node.grad[i];
    }
  }
}

}  // namespace can
