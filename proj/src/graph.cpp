#include "dws/graph.hpp"

#include <algorithm>
#include <cmath>
#include <optional>
#include <stdexcept>
#include <utility>

namespace dws {

const char* op_name(Op op) {
  switch (op) {
    case Op::Input: return "input";
    case Op::Parameter: return "parameter";
    case Op::Constant: return "constant";
    case Op::MatMul: return "matmul";
    case Op::Linear: return "linear";
    case Op::Add: return "add";
    case Op::Sub: return "sub";
    case Op::Mul: return "mul";
    case Op::Scale: return "scale";
    case Op::Sum: return "sum";
    case Op::Max: return "max";
    case Op::Broadcast: return "broadcast";
    case Op::Reshape: return "reshape";
    case Op::Permute: return "permute";
    case Op::Concat: return "concat";
    case Op::Slice: return "slice";
    case Op::Relu: return "relu";
    case Op::Sine: return "sine";
    case Op::Mse: return "mse";
  }
  return "?";
}

// ---------------------------------------------------------------------------
// construction

template <typename T>
NodeId Graph<T>::push(Node node) {
  nodes_.push_back(std::move(node));
  return NodeId{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

template <typename T>
void Graph<T>::check_id(NodeId id, const char* what) const {
  if (id.index >= nodes_.size())
    throw std::invalid_argument(std::string(what) + ": unknown node id " + std::to_string(id.index));
}

template <typename T>
std::string Graph<T>::describe(NodeId id) const {
  const auto& n = node(id);
  std::string s = "node " + std::to_string(id.index) + " (" + op_name(n.op);
  if (!n.name.empty()) s += " '" + n.name + "'";
  return s + ")";
}

namespace {

[[noreturn]] void shape_fail(std::size_t next_index, const char* op, const std::string& detail) {
  throw ShapeError(std::string(op) + " at node " + std::to_string(next_index) + ": " + detail);
}

}  // namespace

template <typename T>
NodeId Graph<T>::input(std::string name, Shape shape) {
  Node n{Op::Input, {}, std::move(shape)};
  n.name = std::move(name);
  for (auto d : n.shape)
    if (d == 0) shape_fail(nodes_.size(), "input", "zero-length axis");
  return push(std::move(n));
}

template <typename T>
NodeId Graph<T>::parameter(std::string name, Shape shape) {
  Node n{Op::Parameter, {}, std::move(shape)};
  n.name = std::move(name);
  for (auto d : n.shape)
    if (d == 0) shape_fail(nodes_.size(), "parameter", "zero-length axis");
  return push(std::move(n));
}

template <typename T>
NodeId Graph<T>::constant(Tensor<T> value) {
  Node n{Op::Constant, {}, value.shape()};
  n.constant = std::make_shared<const Tensor<T>>(std::move(value));
  return push(std::move(n));
}

template <typename T>
NodeId Graph<T>::matmul(NodeId a, NodeId b) {
  check_id(a, "matmul");
  check_id(b, "matmul");
  const auto& sa = shape(a);
  const auto& sb = shape(b);
  if (sa.size() != 2 || sb.size() != 2 || sa[1] != sb[0])
    shape_fail(nodes_.size(), "matmul", shape_to_string(sa) + " x " + shape_to_string(sb));
  return push(Node{Op::MatMul, {a, b}, Shape{sa[0], sb[1]}});
}

template <typename T>
NodeId Graph<T>::linear(NodeId x, NodeId w, std::size_t axis) {
  check_id(x, "linear");
  check_id(w, "linear");
  const auto& sx = shape(x);
  const auto& sw = shape(w);
  if (axis >= sx.size() || sw.size() != 2 || sw[1] != sx[axis])
    shape_fail(nodes_.size(), "linear",
               "input " + shape_to_string(sx) + " axis " + std::to_string(axis) + " vs weight " + shape_to_string(sw));
  Shape out = sx;
  out[axis] = sw[0];
  Node n{Op::Linear, {x, w}, std::move(out)};
  n.axis = axis;
  return push(std::move(n));
}

template <typename T>
NodeId Graph<T>::add(NodeId a, NodeId b) {
  check_id(a, "add");
  check_id(b, "add");
  if (shape(a) != shape(b))
    shape_fail(nodes_.size(), "add", shape_to_string(shape(a)) + " vs " + shape_to_string(shape(b)));
  return push(Node{Op::Add, {a, b}, shape(a)});
}

template <typename T>
NodeId Graph<T>::sub(NodeId a, NodeId b) {
  check_id(a, "sub");
  check_id(b, "sub");
  if (shape(a) != shape(b))
    shape_fail(nodes_.size(), "sub", shape_to_string(shape(a)) + " vs " + shape_to_string(shape(b)));
  return push(Node{Op::Sub, {a, b}, shape(a)});
}

template <typename T>
NodeId Graph<T>::mul(NodeId a, NodeId b) {
  check_id(a, "mul");
  check_id(b, "mul");
  if (shape(a) != shape(b))
    shape_fail(nodes_.size(), "mul", shape_to_string(shape(a)) + " vs " + shape_to_string(shape(b)));
  return push(Node{Op::Mul, {a, b}, shape(a)});
}

template <typename T>
NodeId Graph<T>::scale(NodeId a, T factor) {
  check_id(a, "scale");
  Node n{Op::Scale, {a}, shape(a)};
  n.factor = factor;
  return push(std::move(n));
}

template <typename T>
NodeId Graph<T>::sum(NodeId a, std::size_t axis) {
  check_id(a, "sum");
  Shape s = shape(a);
  if (axis >= s.size()) shape_fail(nodes_.size(), "sum", "axis out of range for " + shape_to_string(s));
  s.erase(s.begin() + static_cast<std::ptrdiff_t>(axis));
  Node n{Op::Sum, {a}, std::move(s)};
  n.axis = axis;
  return push(std::move(n));
}

template <typename T>
NodeId Graph<T>::max(NodeId a, std::size_t axis) {
  check_id(a, "max");
  Shape s = shape(a);
  if (axis >= s.size()) shape_fail(nodes_.size(), "max", "axis out of range for " + shape_to_string(s));
  s.erase(s.begin() + static_cast<std::ptrdiff_t>(axis));
  Node n{Op::Max, {a}, std::move(s)};
  n.axis = axis;
  return push(std::move(n));
}

template <typename T>
NodeId Graph<T>::broadcast(NodeId a, std::size_t axis, std::size_t count) {
  check_id(a, "broadcast");
  Shape s = shape(a);
  if (axis > s.size() || count == 0)
    shape_fail(nodes_.size(), "broadcast", "bad axis/length for " + shape_to_string(s));
  s.insert(s.begin() + static_cast<std::ptrdiff_t>(axis), count);
  Node n{Op::Broadcast, {a}, std::move(s)};
  n.axis = axis;
  return push(std::move(n));
}

template <typename T>
NodeId Graph<T>::reshape(NodeId a, Shape s) {
  check_id(a, "reshape");
  if (shape_size(s) != shape_size(shape(a)) || std::count(s.begin(), s.end(), 0u))
    shape_fail(nodes_.size(), "reshape", shape_to_string(shape(a)) + " -> " + shape_to_string(s));
  return push(Node{Op::Reshape, {a}, std::move(s)});
}

template <typename T>
NodeId Graph<T>::permute(NodeId a, std::vector<std::size_t> perm) {
  check_id(a, "permute");
  const auto& s = shape(a);
  std::vector<bool> seen(s.size(), false);
  if (perm.size() != s.size()) shape_fail(nodes_.size(), "permute", "rank mismatch");
  Shape out(s.size());
  for (std::size_t k = 0; k < perm.size(); ++k) {
    if (perm[k] >= s.size() || seen[perm[k]]) shape_fail(nodes_.size(), "permute", "invalid axis permutation");
    seen[perm[k]] = true;
    out[k] = s[perm[k]];
  }
  Node n{Op::Permute, {a}, std::move(out)};
  n.perm = std::move(perm);
  return push(std::move(n));
}

template <typename T>
NodeId Graph<T>::concat(std::span<const NodeId> parts, std::size_t axis) {
  if (parts.empty()) shape_fail(nodes_.size(), "concat", "no inputs");
  for (auto p : parts) check_id(p, "concat");
  Shape s = shape(parts[0]);
  if (axis >= s.size()) shape_fail(nodes_.size(), "concat", "axis out of range");
  std::size_t total = 0;
  for (auto p : parts) {
    Shape t = shape(p);
    if (t.size() != s.size()) shape_fail(nodes_.size(), "concat", "rank mismatch");
    total += t[axis];
    t[axis] = s[axis];
    if (t != s) shape_fail(nodes_.size(), "concat", "non-concatenated axes differ");
  }
  s[axis] = total;
  Node n{Op::Concat, {parts.begin(), parts.end()}, std::move(s)};
  n.axis = axis;
  return push(std::move(n));
}

template <typename T>
NodeId Graph<T>::slice(NodeId a, std::size_t axis, std::size_t begin, std::size_t end) {
  check_id(a, "slice");
  Shape s = shape(a);
  if (axis >= s.size() || begin >= end || end > s[axis])
    shape_fail(nodes_.size(), "slice", "bad range on " + shape_to_string(s));
  s[axis] = end - begin;
  Node n{Op::Slice, {a}, std::move(s)};
  n.axis = axis;
  n.begin = begin;
  n.end = end;
  return push(std::move(n));
}

template <typename T>
NodeId Graph<T>::relu(NodeId a) {
  check_id(a, "relu");
  return push(Node{Op::Relu, {a}, shape(a)});
}

template <typename T>
NodeId Graph<T>::sine(NodeId a) {
  check_id(a, "sine");
  return push(Node{Op::Sine, {a}, shape(a)});
}

template <typename T>
NodeId Graph<T>::mse(NodeId prediction, NodeId target) {
  check_id(prediction, "mse");
  check_id(target, "mse");
  if (shape(prediction) != shape(target))
    shape_fail(nodes_.size(), "mse", shape_to_string(shape(prediction)) + " vs " + shape_to_string(shape(target)));
  return push(Node{Op::Mse, {prediction, target}, Shape{}});
}

template <typename T>
NodeId Graph<T>::add_all(std::span<const NodeId> parts) {
  if (parts.empty()) throw std::invalid_argument("add_all: no inputs");
  NodeId acc = parts[0];
  for (std::size_t i = 1; i < parts.size(); ++i) acc = add(acc, parts[i]);
  return acc;
}

template <typename T>
std::vector<NodeId> Graph<T>::leaves(Op kind) const {
  std::vector<NodeId> out;
  for (std::uint32_t i = 0; i < nodes_.size(); ++i)
    if (nodes_[i].op == kind) out.push_back(NodeId{i});
  return out;
}

// ---------------------------------------------------------------------------
// kernels

namespace {

template <typename T>
void matmul_kernel(const Tensor<T>& a, const Tensor<T>& b, Tensor<T>& out) {
  const std::size_t n = a.dim(0), k = a.dim(1), m = b.dim(1);
  auto A = a.data();
  auto B = b.data();
  auto C = out.data();
  std::fill(C.begin(), C.end(), T{0});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      const T aip = A[i * k + p];
      if (aip == T{0}) continue;
      const T* brow = &B[p * m];
      T* crow = &C[i * m];
      for (std::size_t j = 0; j < m; ++j) crow[j] += aip * brow[j];
    }
}

// y[o,p,i] = sum_q w[p,q] x[o,q,i]
template <typename T>
void linear_kernel(const Tensor<T>& x, const Tensor<T>& w, std::size_t axis, Tensor<T>& y) {
  const auto e = axis_extent(x.shape(), axis);
  const std::size_t in = e.length, out = w.dim(0), inner = e.inner;
  auto X = x.data();
  auto W = w.data();
  auto Y = y.data();
  if (inner == 1) {
    for (std::size_t o = 0; o < e.outer; ++o) {
      const T* xr = &X[o * in];
      for (std::size_t p = 0; p < out; ++p) {
        const T* wr = &W[p * in];
        T acc{0};
        for (std::size_t q = 0; q < in; ++q) acc += wr[q] * xr[q];
        Y[o * out + p] = acc;
      }
    }
    return;
  }
  std::fill(Y.begin(), Y.end(), T{0});
  for (std::size_t o = 0; o < e.outer; ++o)
    for (std::size_t p = 0; p < out; ++p) {
      T* yr = &Y[(o * out + p) * inner];
      for (std::size_t q = 0; q < in; ++q) {
        const T wpq = W[p * in + q];
        const T* xr = &X[(o * in + q) * inner];
        for (std::size_t i = 0; i < inner; ++i) yr[i] += wpq * xr[i];
      }
    }
}

// dx[o,q,i] = sum_p w[p,q] dy[o,p,i];  dw[p,q] = sum_{o,i} dy[o,p,i] x[o,q,i]
template <typename T>
void linear_backward(const Tensor<T>& x, const Tensor<T>& w, std::size_t axis, const Tensor<T>& dy, Tensor<T>* dx,
                     Tensor<T>* dw) {
  const auto e = axis_extent(x.shape(), axis);
  const std::size_t in = e.length, out = w.dim(0), inner = e.inner;
  auto X = x.data();
  auto W = w.data();
  auto DY = dy.data();
  if (inner == 1) {
    if (dx) {
      auto DX = dx->data();
      std::fill(DX.begin(), DX.end(), T{0});
      for (std::size_t o = 0; o < e.outer; ++o) {
        T* dxr = &DX[o * in];
        for (std::size_t p = 0; p < out; ++p) {
          const T d = DY[o * out + p];
          const T* wr = &W[p * in];
          for (std::size_t q = 0; q < in; ++q) dxr[q] += d * wr[q];
        }
      }
    }
    if (dw) {
      auto DW = dw->data();
      std::fill(DW.begin(), DW.end(), T{0});
      for (std::size_t o = 0; o < e.outer; ++o) {
        const T* xr = &X[o * in];
        for (std::size_t p = 0; p < out; ++p) {
          const T d = DY[o * out + p];
          T* dwr = &DW[p * in];
          for (std::size_t q = 0; q < in; ++q) dwr[q] += d * xr[q];
        }
      }
    }
    return;
  }
  if (dx) {
    auto DX = dx->data();
    std::fill(DX.begin(), DX.end(), T{0});
    for (std::size_t o = 0; o < e.outer; ++o)
      for (std::size_t p = 0; p < out; ++p) {
        const T* dyr = &DY[(o * out + p) * inner];
        for (std::size_t q = 0; q < in; ++q) {
          const T wpq = W[p * in + q];
          T* dxr = &DX[(o * in + q) * inner];
          for (std::size_t i = 0; i < inner; ++i) dxr[i] += wpq * dyr[i];
        }
      }
  }
  if (dw) {
    auto DW = dw->data();
    std::fill(DW.begin(), DW.end(), T{0});
    for (std::size_t o = 0; o < e.outer; ++o)
      for (std::size_t p = 0; p < out; ++p) {
        const T* dyr = &DY[(o * out + p) * inner];
        for (std::size_t q = 0; q < in; ++q) {
          const T* xr = &X[(o * in + q) * inner];
          T acc{0};
          for (std::size_t i = 0; i < inner; ++i) acc += dyr[i] * xr[i];
          DW[p * in + q] += acc;
        }
      }
  }
}

template <typename T>
void reduce_kernel(const Tensor<T>& x, std::size_t axis, bool take_max, Tensor<T>& y) {
  const auto e = axis_extent(x.shape(), axis);
  auto X = x.data();
  auto Y = y.data();
  for (std::size_t o = 0; o < e.outer; ++o)
    for (std::size_t i = 0; i < e.inner; ++i) {
      T acc = X[(o * e.length) * e.inner + i];
      for (std::size_t k = 1; k < e.length; ++k) {
        const T v = X[(o * e.length + k) * e.inner + i];
        if (take_max) {
          if (v > acc) acc = v;
        } else {
          acc += v;
        }
      }
      Y[o * e.inner + i] = acc;
    }
}

// y has the inserted axis at `axis`; x lacks it.
template <typename T>
void broadcast_kernel(const Tensor<T>& x, std::size_t axis, const Shape& out_shape, Tensor<T>& y) {
  const auto e = axis_extent(out_shape, axis);
  auto X = x.data();
  auto Y = y.data();
  for (std::size_t o = 0; o < e.outer; ++o)
    for (std::size_t k = 0; k < e.length; ++k)
      std::copy_n(&X[o * e.inner], e.inner, &Y[(o * e.length + k) * e.inner]);
}

template <typename T>
void permute_kernel(const Tensor<T>& x, const std::vector<std::size_t>& perm, Tensor<T>& y) {
  const auto& in_shape = x.shape();
  const std::size_t rank = in_shape.size();
  std::vector<std::size_t> in_stride(rank, 1);
  for (std::size_t a = rank; a-- > 1;) in_stride[a - 1] = in_stride[a] * in_shape[a];
  std::vector<std::size_t> stride(rank), extent(rank), counter(rank, 0);
  for (std::size_t k = 0; k < rank; ++k) {
    stride[k] = in_stride[perm[k]];
    extent[k] = in_shape[perm[k]];
  }
  auto X = x.data();
  auto Y = y.data();
  if (rank == 0) {
    Y[0] = X[0];
    return;
  }
  const std::size_t last = rank - 1;
  std::size_t src = 0;
  std::size_t dst = 0;
  const std::size_t total = Y.size();
  while (dst < total) {
    for (std::size_t i = 0; i < extent[last]; ++i) Y[dst++] = X[src + i * stride[last]];
    // advance the odometer over all but the last axis
    std::size_t a = last;
    while (a-- > 0) {
      src += stride[a];
      if (++counter[a] < extent[a]) break;
      src -= stride[a] * extent[a];
      counter[a] = 0;
    }
  }
}

template <typename T>
void add_into(Tensor<T>& acc, const Tensor<T>& g) {
  auto A = acc.data();
  auto G = g.data();
  for (std::size_t i = 0; i < A.size(); ++i) A[i] += G[i];
}

}  // namespace

// ---------------------------------------------------------------------------
// forward

template <typename T>
const Tensor<T>& Evaluation<T>::value(NodeId id) const {
  if (!has_value(id)) throw std::invalid_argument("node " + std::to_string(id.index) + " was not evaluated");
  return *values_[id.index];
}

namespace {

template <typename T>
std::vector<bool> needed_nodes(const Graph<T>& graph, std::span<const NodeId> outputs) {
  std::vector<bool> need(graph.size(), false);
  for (auto o : outputs) {
    if (o.index >= graph.size()) throw std::invalid_argument("unknown output node");
    need[o.index] = true;
  }
  for (std::size_t i = graph.size(); i-- > 0;)
    if (need[i])
      for (auto in : graph.node(NodeId{static_cast<std::uint32_t>(i)}).inputs) need[in.index] = true;
  return need;
}

template <typename T>
Tensor<T> compute(const typename Graph<T>::Node& n, const std::vector<const Tensor<T>*>& v) {
  auto in = [&](std::size_t k) -> const Tensor<T>& { return *v[n.inputs[k].index]; };
  Tensor<T> y(n.shape);
  auto Y = y.data();
  switch (n.op) {
    case Op::MatMul: matmul_kernel(in(0), in(1), y); break;
    case Op::Linear: linear_kernel(in(0), in(1), n.axis, y); break;
    case Op::Add: {
      auto A = in(0).data(), B = in(1).data();
      for (std::size_t i = 0; i < Y.size(); ++i) Y[i] = A[i] + B[i];
      break;
    }
    case Op::Sub: {
      auto A = in(0).data(), B = in(1).data();
      for (std::size_t i = 0; i < Y.size(); ++i) Y[i] = A[i] - B[i];
      break;
    }
    case Op::Mul: {
      auto A = in(0).data(), B = in(1).data();
      for (std::size_t i = 0; i < Y.size(); ++i) Y[i] = A[i] * B[i];
      break;
    }
    case Op::Scale: {
      auto A = in(0).data();
      for (std::size_t i = 0; i < Y.size(); ++i) Y[i] = n.factor * A[i];
      break;
    }
    case Op::Sum: reduce_kernel(in(0), n.axis, false, y); break;
    case Op::Max: reduce_kernel(in(0), n.axis, true, y); break;
    case Op::Broadcast: broadcast_kernel(in(0), n.axis, n.shape, y); break;
    case Op::Reshape: {
      auto A = in(0).data();
      std::copy(A.begin(), A.end(), Y.begin());
      break;
    }
    case Op::Permute: permute_kernel(in(0), n.perm, y); break;
    case Op::Concat: {
      const auto e = axis_extent(n.shape, n.axis);
      std::size_t offset = 0;
      for (std::size_t k = 0; k < n.inputs.size(); ++k) {
        const auto& part = in(k);
        const std::size_t len = part.dim(n.axis) * e.inner;
        auto P = part.data();
        for (std::size_t o = 0; o < e.outer; ++o)
          std::copy_n(&P[o * len], len, &Y[o * e.length * e.inner + offset]);
        offset += len;
      }
      break;
    }
    case Op::Slice: {
      const auto e = axis_extent(in(0).shape(), n.axis);
      const std::size_t len = (n.end - n.begin) * e.inner;
      auto A = in(0).data();
      for (std::size_t o = 0; o < e.outer; ++o)
        std::copy_n(&A[(o * e.length + n.begin) * e.inner], len, &Y[o * len]);
      break;
    }
    case Op::Relu: {
      auto A = in(0).data();
      for (std::size_t i = 0; i < Y.size(); ++i) Y[i] = A[i] > T{0} ? A[i] : T{0};
      break;
    }
    case Op::Sine: {
      auto A = in(0).data();
      for (std::size_t i = 0; i < Y.size(); ++i) Y[i] = std::sin(A[i]);
      break;
    }
    case Op::Mse: {
      auto A = in(0).data(), B = in(1).data();
      T acc{0};
      for (std::size_t i = 0; i < A.size(); ++i) {
        const T d = A[i] - B[i];
        acc += d * d;
      }
      Y[0] = acc / static_cast<T>(A.size());
      break;
    }
    case Op::Input:
    case Op::Parameter:
    case Op::Constant: throw std::logic_error("leaf passed to compute");
  }
  return y;
}

}  // namespace

template <typename T>
Evaluation<T> forward_eval(const Graph<T>& graph, const Bindings<T>& bindings, std::span<const NodeId> outputs) {
  const auto need = needed_nodes(graph, outputs);
  Evaluation<T> ev;
  ev.values_.assign(graph.size(), nullptr);
  ev.owned_.resize(graph.size());
  for (std::uint32_t i = 0; i < graph.size(); ++i) {
    if (!need[i]) continue;
    const NodeId id{i};
    const auto& n = graph.node(id);
    if (n.op == Op::Input || n.op == Op::Parameter) {
      auto it = bindings.find(n.name);
      if (it == bindings.end()) throw std::invalid_argument("unbound leaf '" + n.name + "' at " + graph.describe(id));
      if (it->second.shape() != n.shape)
        throw ShapeError("binding '" + n.name + "' has shape " + shape_to_string(it->second.shape()) + ", " +
                         graph.describe(id) + " expects " + shape_to_string(n.shape));
      ev.values_[i] = &it->second;
    } else if (n.op == Op::Constant) {
      ev.values_[i] = n.constant.get();
    } else {
      ev.owned_[i] = std::make_unique<Tensor<T>>(compute<T>(n, ev.values_));
      ev.values_[i] = ev.owned_[i].get();
    }
  }
  return ev;
}

// ---------------------------------------------------------------------------
// backward

template <typename T>
Gradients<T> backward_grad(const Graph<T>& graph, const Bindings<T>& bindings, NodeId loss) {
  if (loss.index >= graph.size()) throw std::invalid_argument("unknown loss node");
  if (shape_size(graph.shape(loss)) != 1)
    throw ShapeError("loss " + graph.describe(loss) + " is not scalar: " + shape_to_string(graph.shape(loss)));

  NodeId outs[] = {loss};
  const auto ev = forward_eval(graph, bindings, std::span<const NodeId>(outs));
  const std::size_t count = loss.index + 1;

  std::vector<bool> requires_grad(count, false);
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto& n = graph.node(NodeId{i});
    if (n.op == Op::Parameter) {
      requires_grad[i] = true;
      continue;
    }
    for (auto in : n.inputs) requires_grad[i] = requires_grad[i] || requires_grad[in.index];
  }

  std::vector<std::optional<Tensor<T>>> grad(count);
  auto accumulate = [&](NodeId id, Tensor<T>&& g) {
    if (!requires_grad[id.index]) return;
    auto& slot = grad[id.index];
    if (!slot) {
      slot = std::move(g);
    } else {
      add_into(*slot, g);
    }
  };

  grad[loss.index] = Tensor<T>(graph.shape(loss), T{1});

  for (std::size_t i = count; i-- > 0;) {
    if (!grad[i] || !requires_grad[i]) continue;
    const NodeId id{static_cast<std::uint32_t>(i)};
    const auto& n = graph.node(id);
    if (n.op == Op::Input || n.op == Op::Parameter || n.op == Op::Constant) continue;
    // node i has no further consumers: its gradient buffer can be handed on
    Tensor<T> dy = std::move(*grad[i]);
    grad[i].reset();
    auto DY = std::as_const(dy).data();
    auto x = [&](std::size_t k) -> const Tensor<T>& { return ev.value(n.inputs[k]); };
    auto wants = [&](std::size_t k) { return requires_grad[n.inputs[k].index]; };

    switch (n.op) {
      case Op::MatMul: {
        const auto& a = x(0);
        const auto& b = x(1);
        const std::size_t rows = a.dim(0), inner = a.dim(1), cols = b.dim(1);
        if (wants(0)) {
          Tensor<T> da(a.shape());
          auto DA = da.data();
          auto B = b.data();
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t p = 0; p < inner; ++p) {
              T acc{0};
              for (std::size_t c = 0; c < cols; ++c) acc += DY[r * cols + c] * B[p * cols + c];
              DA[r * inner + p] = acc;
            }
          accumulate(n.inputs[0], std::move(da));
        }
        if (wants(1)) {
          Tensor<T> db(b.shape());
          auto DB = db.data();
          auto A = a.data();
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t p = 0; p < inner; ++p) {
              const T arp = A[r * inner + p];
              for (std::size_t c = 0; c < cols; ++c) DB[p * cols + c] += arp * DY[r * cols + c];
            }
          accumulate(n.inputs[1], std::move(db));
        }
        break;
      }
      case Op::Linear: {
        std::optional<Tensor<T>> dx, dw;
        if (wants(0)) dx.emplace(x(0).shape());
        if (wants(1)) dw.emplace(x(1).shape());
        linear_backward(x(0), x(1), n.axis, dy, dx ? &*dx : nullptr, dw ? &*dw : nullptr);
        if (dx) accumulate(n.inputs[0], std::move(*dx));
        if (dw) accumulate(n.inputs[1], std::move(*dw));
        break;
      }
      case Op::Add:
        if (wants(0)) accumulate(n.inputs[0], wants(1) ? Tensor<T>(dy) : std::move(dy));
        if (wants(1)) accumulate(n.inputs[1], std::move(dy));
        break;
      case Op::Sub:
        if (wants(0)) accumulate(n.inputs[0], wants(1) ? Tensor<T>(dy) : std::move(dy));
        if (wants(1)) {
          Tensor<T> g(dy.shape());
          auto G = g.data();
          for (std::size_t k = 0; k < G.size(); ++k) G[k] = -DY[k];
          accumulate(n.inputs[1], std::move(g));
        }
        break;
      case Op::Mul:
        for (std::size_t side = 0; side < 2; ++side) {
          if (!wants(side)) continue;
          Tensor<T> g(dy.shape());
          auto G = g.data();
          auto O = x(1 - side).data();
          for (std::size_t k = 0; k < G.size(); ++k) G[k] = DY[k] * O[k];
          accumulate(n.inputs[side], std::move(g));
        }
        break;
      case Op::Scale: {
        Tensor<T> g(dy.shape());
        auto G = g.data();
        for (std::size_t k = 0; k < G.size(); ++k) G[k] = n.factor * DY[k];
        accumulate(n.inputs[0], std::move(g));
        break;
      }
      case Op::Sum: {
        Tensor<T> g(x(0).shape());
        broadcast_kernel(dy, n.axis, x(0).shape(), g);
        accumulate(n.inputs[0], std::move(g));
        break;
      }
      case Op::Max: {
        const auto& in = x(0);
        const auto e = axis_extent(in.shape(), n.axis);
        Tensor<T> g(in.shape());
        auto G = g.data();
        auto X = in.data();
        for (std::size_t o = 0; o < e.outer; ++o)
          for (std::size_t j = 0; j < e.inner; ++j) {
            std::size_t best = 0;
            T bv = X[(o * e.length) * e.inner + j];
            for (std::size_t k = 1; k < e.length; ++k) {
              const T v = X[(o * e.length + k) * e.inner + j];
              if (v > bv) {
                bv = v;
                best = k;
              }
            }
            G[(o * e.length + best) * e.inner + j] = DY[o * e.inner + j];
          }
        accumulate(n.inputs[0], std::move(g));
        break;
      }
      case Op::Broadcast: {
        Tensor<T> g(x(0).shape());
        reduce_kernel(dy, n.axis, false, g);
        accumulate(n.inputs[0], std::move(g));
        break;
      }
      case Op::Reshape: accumulate(n.inputs[0], std::move(dy).reshaped(x(0).shape())); break;
      case Op::Permute: {
        std::vector<std::size_t> inverse(n.perm.size());
        for (std::size_t k = 0; k < n.perm.size(); ++k) inverse[n.perm[k]] = k;
        Tensor<T> g(x(0).shape());
        permute_kernel(dy, inverse, g);
        accumulate(n.inputs[0], std::move(g));
        break;
      }
      case Op::Concat: {
        const auto e = axis_extent(n.shape, n.axis);
        std::size_t offset = 0;
        for (std::size_t k = 0; k < n.inputs.size(); ++k) {
          const auto& part = x(k);
          const std::size_t len = part.dim(n.axis) * e.inner;
          if (wants(k)) {
            Tensor<T> g(part.shape());
            auto G = g.data();
            for (std::size_t o = 0; o < e.outer; ++o)
              std::copy_n(&DY[o * e.length * e.inner + offset], len, &G[o * len]);
            accumulate(n.inputs[k], std::move(g));
          }
          offset += len;
        }
        break;
      }
      case Op::Slice: {
        const auto e = axis_extent(x(0).shape(), n.axis);
        const std::size_t len = (n.end - n.begin) * e.inner;
        Tensor<T> g(x(0).shape());
        auto G = g.data();
        for (std::size_t o = 0; o < e.outer; ++o)
          std::copy_n(&DY[o * len], len, &G[(o * e.length + n.begin) * e.inner]);
        accumulate(n.inputs[0], std::move(g));
        break;
      }
      case Op::Relu: {
        Tensor<T> g(dy.shape());
        auto G = g.data();
        auto X = x(0).data();
        for (std::size_t k = 0; k < G.size(); ++k) G[k] = X[k] > T{0} ? DY[k] : T{0};
        accumulate(n.inputs[0], std::move(g));
        break;
      }
      case Op::Sine: {
        Tensor<T> g(dy.shape());
        auto G = g.data();
        auto X = x(0).data();
        for (std::size_t k = 0; k < G.size(); ++k) G[k] = DY[k] * std::cos(X[k]);
        accumulate(n.inputs[0], std::move(g));
        break;
      }
      case Op::Mse: {
        auto A = x(0).data(), B = x(1).data();
        const T c = T{2} * DY[0] / static_cast<T>(A.size());
        for (std::size_t side = 0; side < 2; ++side) {
          if (!wants(side)) continue;
          Tensor<T> g(x(side).shape());
          auto G = g.data();
          const T sign = side == 0 ? T{1} : T{-1};
          for (std::size_t k = 0; k < G.size(); ++k) G[k] = sign * c * (A[k] - B[k]);
          accumulate(n.inputs[side], std::move(g));
        }
        break;
      }
      case Op::Input:
      case Op::Parameter:
      case Op::Constant: break;
    }
  }

  Gradients<T> out;
  out.loss = ev.value(loss).data()[0];
  for (std::uint32_t i = 0; i < graph.size(); ++i) {
    const auto& n = graph.node(NodeId{i});
    if (n.op != Op::Parameter) continue;
    if (i >= count || !grad[i]) {
      out.grads.try_emplace(n.name, Tensor<T>(n.shape));  // not on a path to the loss
      continue;
    }
    auto it = out.grads.find(n.name);
    if (it == out.grads.end()) {
      out.grads.emplace(n.name, std::move(*grad[i]));
    } else {
      add_into(it->second, *grad[i]);  // the same parameter bound at several leaves
    }
  }
  return out;
}

template class Graph<float>;
template class Graph<double>;
template class Evaluation<float>;
template class Evaluation<double>;
template Evaluation<float> forward_eval(const Graph<float>&, const Bindings<float>&, std::span<const NodeId>);
template Evaluation<double> forward_eval(const Graph<double>&, const Bindings<double>&, std::span<const NodeId>);
template Gradients<float> backward_grad(const Graph<float>&, const Bindings<float>&, NodeId);
template Gradients<double> backward_grad(const Graph<double>&, const Bindings<double>&, NodeId);

}  // namespace dws
