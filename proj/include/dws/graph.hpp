#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "dws/tensor.hpp"

namespace dws {

enum class Op : std::uint8_t {
  Input,
  Parameter,
  Constant,
  MatMul,
  Linear,
  Add,
  Sub,
  Mul,
  Scale,
  Sum,
  Max,
  Broadcast,
  Reshape,
  Permute,
  Concat,
  Slice,
  Relu,
  Sine,
  Mse,
};

const char* op_name(Op op);

struct NodeId {
  std::uint32_t index = 0;
  friend bool operator==(NodeId, NodeId) = default;
};

/// Static computation graph. Nodes are appended in topological order and every
/// shape is inferred (and checked) when the node is created. No op broadcasts
/// implicitly; use `broadcast` to add an axis.
template <typename T>
class Graph {
 public:
  struct Node {
    Op op;
    std::vector<NodeId> inputs;
    Shape shape;
    std::string name;  // binding name for leaves
    std::size_t axis = 0;
    std::size_t begin = 0;
    std::size_t end = 0;
    std::vector<std::size_t> perm;
    T factor{1};
    std::shared_ptr<const Tensor<T>> constant;
  };

  NodeId input(std::string name, Shape shape);
  NodeId parameter(std::string name, Shape shape);
  NodeId constant(Tensor<T> value);

  /// (n,k) x (k,m) -> (n,m)
  NodeId matmul(NodeId a, NodeId b);
  /// Contracts `axis` of x (length in) with w of shape (out, in).
  NodeId linear(NodeId x, NodeId w, std::size_t axis);
  NodeId add(NodeId a, NodeId b);
  NodeId sub(NodeId a, NodeId b);
  NodeId mul(NodeId a, NodeId b);
  NodeId scale(NodeId a, T factor);
  NodeId sum(NodeId a, std::size_t axis);
  /// Ties route the gradient to the first maximal index.
  NodeId max(NodeId a, std::size_t axis);
  /// Inserts a new axis of length n at position `axis`.
  NodeId broadcast(NodeId a, std::size_t axis, std::size_t n);
  NodeId reshape(NodeId a, Shape shape);
  NodeId permute(NodeId a, std::vector<std::size_t> perm);
  NodeId concat(std::span<const NodeId> parts, std::size_t axis);
  NodeId slice(NodeId a, std::size_t axis, std::size_t begin, std::size_t end);
  NodeId relu(NodeId a);
  NodeId sine(NodeId a);
  /// Mean squared error between equally shaped nodes; scalar output.
  NodeId mse(NodeId prediction, NodeId target);

  /// Sum of several equally shaped nodes.
  NodeId add_all(std::span<const NodeId> parts);

  const Node& node(NodeId id) const { return nodes_.at(id.index); }
  const Shape& shape(NodeId id) const { return node(id).shape; }
  std::size_t size() const { return nodes_.size(); }
  std::string describe(NodeId id) const;

  std::vector<NodeId> leaves(Op kind) const;

 private:
  NodeId push(Node node);
  void check_id(NodeId id, const char* what) const;

  std::vector<Node> nodes_;
};

template <typename T>
using Bindings = std::map<std::string, Tensor<T>>;

/// Values of every node needed for the requested outputs.
template <typename T>
class Evaluation {
 public:
  const Tensor<T>& value(NodeId id) const;
  bool has_value(NodeId id) const { return id.index < values_.size() && values_[id.index] != nullptr; }

 private:
  template <typename U>
  friend Evaluation<U> forward_eval(const Graph<U>&, const Bindings<U>&, std::span<const NodeId>);
  std::vector<const Tensor<T>*> values_;
  std::vector<std::unique_ptr<Tensor<T>>> owned_;
};

template <typename T>
struct Gradients {
  T loss{};
  Bindings<T> grads;  // one entry per parameter leaf reachable from the loss
};

/// Evaluates the requested nodes. Pure: bindings are never modified.
template <typename T>
Evaluation<T> forward_eval(const Graph<T>& graph, const Bindings<T>& bindings, std::span<const NodeId> outputs);

template <typename T>
Tensor<T> forward_eval(const Graph<T>& graph, const Bindings<T>& bindings, NodeId output) {
  NodeId out[] = {output};
  return forward_eval(graph, bindings, std::span<const NodeId>(out)).value(output);
}

/// Reverse-mode gradient of a scalar loss w.r.t. every parameter leaf.
template <typename T>
Gradients<T> backward_grad(const Graph<T>& graph, const Bindings<T>& bindings, NodeId loss);

extern template class Graph<float>;
extern template class Graph<double>;
extern template class Evaluation<float>;
extern template class Evaluation<double>;

}  // namespace dws
