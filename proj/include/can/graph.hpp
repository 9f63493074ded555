#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <span>
#include <vector>

#include "can/tensor.hpp"

namespace can {

class Graph;

// Handle to a value recorded on a Graph.
struct Var {
  Graph* graph = nullptr;
  int id = -1;

  bool valid() const { return graph != nullptr && id >= 0; }
  const Tensor& value() const;
  const Shape& shape() const;
};

// Tape of recorded operations. Values are appended in creation order, so the
// tape is topologically sorted by construction and backward() walks it in
// reverse.
class Graph {
 public:
  // Backward rule of one node. It receives the node's own id, reads that
  // node's output gradient and adds its contribution into the gradients of
  // the node's inputs.
  using BackwardFn = std::function<void(Graph&, int self)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  // Constant input; no gradient is tracked.
  Var input(Tensor value);
  // Leaf bound to a parameter tensor. When the tensor requires grad,
  // backward() accumulates d(loss)/d(tensor) into tensor.grad(). The tensor
  // must outlive the graph's backward pass.
  Var param(Tensor& tensor);

  // Appends an operation output. `fn` may be empty for non-differentiable
  // outputs. The node requires grad iff any input does.
  Var record(Tensor value, std::vector<Var> inputs, BackwardFn fn);

  const Tensor& value(Var v) const { return nodes_.at(v.id).value; }
  const Tensor& value(int id) const { return nodes_.at(id).value; }
  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }
  bool requires_grad(int id) const { return nodes_.at(id).requires_grad; }

  // Gradient buffer of a node, allocated zeroed on first access.
  std::span<double> grad(int id);
  std::span<double> grad(Var v) { return grad(v.id); }

  // Populates gradients for every requires-grad node reachable from `loss`
  // and accumulates them into bound parameter tensors. Gradients add up
  // across fan-out.
  void backward(Var loss);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    std::vector<double> grad;
    std::vector<int> inputs;
    BackwardFn backward;
    Tensor* leaf = nullptr;
    bool requires_grad = false;
  };

  std::deque<Node> nodes_;  // deque: values stay put while the graph grows
};

}  // namespace can
