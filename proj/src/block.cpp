#include "dws/block.hpp"

#include <algorithm>
#include <stdexcept>

namespace dws {

const char* pool_mode_name(PoolMode mode) { return mode == PoolMode::Sum ? "sum" : "max"; }

PoolMode parse_pool_mode(const std::string& text) {
  if (text == "sum") return PoolMode::Sum;
  if (text == "max") return PoolMode::Max;
  throw std::invalid_argument("pooling mode must be sum or max, got '" + text + "'");
}

namespace {

bool contains(const std::vector<std::size_t>& v, std::size_t x) { return std::find(v.begin(), v.end(), x) != v.end(); }

std::size_t index_of(const std::vector<std::size_t>& v, std::size_t x) {
  auto it = std::find(v.begin(), v.end(), x);
  if (it == v.end()) throw std::logic_error("axis label not present");
  return static_cast<std::size_t>(it - v.begin());
}

std::string symbol(const std::vector<std::size_t>& axes) {
  if (axes.empty()) return "1";
  std::string s;
  for (auto a : axes) s += (s.empty() ? "d" : "*d") + std::to_string(a);
  return s;
}

}  // namespace

std::string BlockPlan::describe() const {
  std::string out;
  auto add = [&](const std::string& s) { out += (out.empty() ? "" : " -> ") + s; };
  const auto fi = symbol(feature_in), fo = symbol(feature_out);
  for (const auto& st : steps) {
    std::visit(
        [&](const auto& s) {
          using S = std::decay_t<decltype(s)>;
          if constexpr (std::is_same_v<S, step::Pool>) add("POOL(d" + std::to_string(s.axis) + ")");
          if constexpr (std::is_same_v<S, step::Broadcast>) add("BC(d" + std::to_string(s.axis) + ")");
          if constexpr (std::is_same_v<S, step::Dense>) add("LIN(" + fi + "," + fo + ")");
          if constexpr (std::is_same_v<S, step::DeepSets>)
            add("DS[d" + std::to_string(s.axis) + "](" + fi + "," + fo + ")");
          if constexpr (std::is_same_v<S, step::Hartford>)
            add("HAR[d" + std::to_string(s.axis_a) + ",d" + std::to_string(s.axis_b) + "](" + fi + "," + fo + ")");
        },
        st);
  }
  return out;
}

BlockPlan plan_block(const WeightSpaceSpec& in_spec, const WeightSpaceSpec& out_spec, SubspaceId from, SubspaceId to) {
  if (in_spec.layers() != out_spec.layers()) throw std::invalid_argument("specs differ in layer count");
  for (std::size_t m = 1; m < in_spec.layers(); ++m)
    if (in_spec.dim(m) != out_spec.dim(m)) throw std::invalid_argument("specs differ at set index " + std::to_string(m));

  BlockPlan p;
  p.from = from;
  p.to = to;
  p.from_axes = in_spec.axes(from);
  p.to_axes = out_spec.axes(to);
  p.from_shape = in_spec.shape(from);
  p.to_shape = out_spec.shape(to);

  std::vector<std::size_t> set_in, set_out;
  for (auto a : p.from_axes) (in_spec.is_set_index(a) ? set_in : p.feature_in).push_back(a);
  for (auto a : p.to_axes) (out_spec.is_set_index(a) ? set_out : p.feature_out).push_back(a);
  for (auto a : set_in)
    if (contains(set_out, a)) p.shared.push_back(a);

  for (auto a : p.feature_in) p.in_features *= in_spec.dim(a);
  for (auto a : p.feature_out) p.out_features *= out_spec.dim(a);

  for (auto a : set_in)
    if (!contains(p.shared, a)) p.steps.push_back(step::Pool{a, in_spec.dim(a)});
  switch (p.shared.size()) {
    case 0:
      p.steps.push_back(step::Dense{p.in_features, p.out_features});
      p.terms = 1;
      break;
    case 1:
      p.steps.push_back(step::DeepSets{p.shared[0], p.in_features, p.out_features});
      p.terms = 2;
      break;
    case 2:
      p.steps.push_back(step::Hartford{p.shared[0], p.shared[1], p.in_features, p.out_features});
      p.terms = 4;
      break;
    default:
      throw std::logic_error("more than two shared axes");
  }
  for (auto a : set_out)
    if (!contains(p.shared, a)) p.steps.push_back(step::Broadcast{a, out_spec.dim(a)});
  return p;
}

TableCell table_cell(const WeightSpaceSpec& spec, SubspaceId from, SubspaceId to) {
  const std::size_t M = spec.layers();
  const std::size_t d0 = spec.dim(0), dM = spec.dim(M);
  const std::size_t j = from.layer, i = to.layer;
  if (j < 1 || j > M || i < 1 || i > M) throw std::out_of_range("sub-space outside spec");
  auto cell = [](std::string table, std::string row, std::string impl, std::size_t n) {
    return TableCell{std::move(table), std::move(row), std::move(impl), n};
  };

  if (from.is_weight() && to.is_weight()) {
    if (M == 2 && i != j) return cell("W->W", "M=2", i == 1 ? "L_DS(d_M,d_0)" : "L_DS(d_0,d_M)", 2 * d0 * dM);
    if (i == j) {
      if (i == 1) return cell("W->W", "1", "L_DS(d_0,d_0)", 2 * d0 * d0);
      if (i == M) return cell("W->W", "2", "L_DS(d_M,d_M)", 2 * dM * dM);
      return cell("W->W", "3", "L_Har(d_i,d_{i-1})", 4);
    }
    if (j == i + 1) {
      if (i == 1) return cell("W->W", "4", "POOL(d_2) -> L_DS(1,d_0)", 2 * d0);
      if (j == M) return cell("W->W", "5", "L_DS(d_M,1) -> BC(d_{M-2})", 2 * dM);
      return cell("W->W", "6", "POOL(d_{i+1}) -> L_DS(1,1) -> BC(d_{i-1})", 2);
    }
    if (i == j + 1) {
      if (j == 1) return cell("W->W", "7", "L_DS(d_0,1) -> BC(d_2)", 2 * d0);
      if (i == M) return cell("W->W", "8", "POOL(d_{M-2}) -> L_DS(1,d_M)", 2 * dM);
      return cell("W->W", "9", "POOL(d_{i-2}) -> L_DS(1,1) -> BC(d_i)", 2);
    }
    if (j > i) {
      if (i == 1 && j < M) return cell("W->W", "10", "POOL(d_j,d_{j-1}) -> LIN(1,d_0) -> BC(d_1)", d0);
      if (i == 1) return cell("W->W", "11", "POOL(d_{M-1}) -> LIN(d_M,d_0) -> BC(d_1)", d0 * dM);
      if (j == M) return cell("W->W", "12", "POOL(d_{M-1}) -> LIN(d_M,1) -> BC(d_i,d_{i-1})", dM);
      return cell("W->W", "13*", "POOL(d_j,d_{j-1}) -> LIN(1,1) -> BC(d_i,d_{i-1})", 1);
    }
    if (j == 1 && i < M) return cell("W->W", "14", "POOL(d_1) -> LIN(d_0,1) -> BC(d_{i-1},d_i)", d0);
    if (j == 1) return cell("W->W", "15", "POOL(d_1) -> LIN(d_0,d_M) -> BC(d_{M-1})", d0 * dM);
    if (i == M) return cell("W->W", "16", "POOL(d_j,d_{j-1}) -> LIN(1,d_M) -> BC(d_{M-1})", dM);
    return cell("W->W", "17*", "POOL(d_j,d_{j-1}) -> LIN(1,1) -> BC(d_i,d_{i-1})", 1);
  }

  if (!from.is_weight() && !to.is_weight()) {
    if (i == j) {
      if (i < M) return cell("B->B", "1", "L_DS(1,1)", 2);
      return cell("B->B", "2", "LIN(d_M,d_M)", dM * dM);
    }
    if (i < j) {
      if (j == M) return cell("B->B", "3", "LIN(d_M,1) -> BC(d_i)", dM);
      return cell("B->B", "4*", "POOL(d_j) -> LIN(1,1) -> BC(d_i)", 1);
    }
    if (i == M) return cell("B->B", "5", "POOL(d_j) -> LIN(1,d_M)", dM);
    return cell("B->B", "6*", "POOL(d_j) -> LIN(1,1) -> BC(d_i)", 1);
  }

  if (from.is_weight()) {  // W_j -> B_i
    if (i == j) {
      if (i == 1 && i < M) return cell("W->B", "1", "L_DS(d_0,1)", 2 * d0);
      if (i < M) return cell("W->B", "2", "POOL(d_{i-1}) -> L_DS(1,1)", 2);
      return cell("W->B", "3", "POOL(d_{M-1}) -> LIN(d_M,d_M)", dM * dM);
    }
    if (j == i + 1) {
      if (j < M) return cell("W->B", "4", "POOL(d_j) -> L_DS(1,1)", 2);
      return cell("W->B", "5", "L_DS(d_M,1)", 2 * dM);
    }
    if (j > i) {
      if (j < M) return cell("W->B", "6*", "POOL(d_{j-1},d_j) -> LIN(1,1) -> BC(d_i)", 1);
      return cell("W->B", "7", "POOL(d_{M-1}) -> LIN(d_M,1) -> BC(d_i)", dM);
    }
    if (j == 1 && i < M) return cell("W->B", "8", "POOL(d_1) + LIN(d_0,1) -> BC(d_i)", d0);
    if (j == 1) return cell("W->B", "9", "POOL(d_1) + LIN(d_0,d_M)", d0 * dM);
    if (i == M) return cell("W->B", "10", "POOL(d_{j-1},d_j) -> LIN(1,d_M)", dM);
    return cell("W->B", "11*", "POOL(d_{j-1},d_j) -> LIN(1,1) -> BC(d_i)", 1);
  }

  // B_j -> W_i
  if (i == j) {
    if (i == 1 && i < M) return cell("B->W", "1", "L_DS(1,d_0)", 2 * d0);
    if (i < M) return cell("B->W", "2", "L_DS(1,1) -> BC(d_{i-1})", 2);
    return cell("B->W", "3", "LIN(d_M,d_M) -> BC(d_{M-1})", dM * dM);
  }
  if (i == j + 1) {
    if (i < M) return cell("B->W", "4", "L_DS(1,1) -> BC(d_{i+1})", 2);
    return cell("B->W", "5", "L_DS(1,d_M)", 2 * dM);
  }
  if (j < i) {
    if (i < M) return cell("B->W", "6*", "POOL(d_j) -> LIN(1,1) -> BC(d_{i-1},d_i)", 1);
    return cell("B->W", "7", "POOL(d_j) -> LIN(1,d_M) -> BC(d_{M-1})", dM);
  }
  if (i == 1 && j < M) return cell("B->W", "8", "POOL(d_j) -> LIN(1,d_0) -> BC(d_1)", d0);
  if (i == 1) return cell("B->W", "9", "LIN(d_M,d_0) -> BC(d_1)", dM * d0);
  if (j == M) return cell("B->W", "10", "LIN(d_M,1) -> BC(d_{i-1},d_i)", dM);
  return cell("B->W", "11*", "POOL(d_j) -> LIN(1,1) -> BC(d_{i-1},d_i)", 1);
}

BlockLayer::BlockLayer(BlockPlan plan, std::size_t in_channels, std::size_t out_channels, PoolMode pool,
                       std::string name)
    : plan_(std::move(plan)), f_in_(in_channels), f_out_(out_channels), pool_(pool), name_(std::move(name)) {
  if (f_in_ == 0 || f_out_ == 0) throw std::invalid_argument("channel counts must be >= 1");
}

std::vector<ParamSpec> BlockLayer::parameters() const {
  std::vector<ParamSpec> out;
  const std::size_t rows = f_out_ * plan_.out_features, cols = f_in_ * plan_.in_features;
  for (std::size_t t = 0; t < plan_.terms; ++t)
    out.push_back({name_ + ".t" + std::to_string(t), Shape{rows, cols}, cols, rows, false});
  return out;
}

std::size_t BlockLayer::parameter_count() const { return plan_.parameter_count() * f_in_ * f_out_; }

template <typename T>
NodeId BlockLayer::build(Graph<T>& g, NodeId x) const {
  const auto& p = plan_;
  const Shape xs = g.shape(x);
  const std::size_t n_in = p.from_axes.size();
  if (xs.size() != 2 + n_in || xs[1] != f_in_ ||
      !std::equal(p.from_shape.begin(), p.from_shape.end(), xs.begin() + 2))
    throw ShapeError("block " + name_ + " expects (B, " + std::to_string(f_in_) + ", " +
                     shape_to_string(p.from_shape) + "), got " + shape_to_string(xs));
  const std::size_t batch = xs[0];

  // gather: (B, f, axes...) -> (B, set axes..., f * features)
  std::vector<std::size_t> labels, sizes;
  std::vector<std::size_t> perm{0};
  for (std::size_t k = 0; k < n_in; ++k)
    if (!contains(p.feature_in, p.from_axes[k])) {
      perm.push_back(2 + k);
      labels.push_back(p.from_axes[k]);
      sizes.push_back(p.from_shape[k]);
    }
  perm.push_back(1);
  for (auto a : p.feature_in) perm.push_back(2 + index_of(p.from_axes, a));
  bool identity = true;
  for (std::size_t k = 0; k < perm.size(); ++k) identity = identity && perm[k] == k;
  NodeId h = identity ? x : g.permute(x, perm);
  {
    Shape s{batch};
    s.insert(s.end(), sizes.begin(), sizes.end());
    s.push_back(f_in_ * p.in_features);
    h = g.reshape(h, s);
  }

  auto reduce = [&](NodeId a, std::size_t axis) { return pool_ == PoolMode::Sum ? g.sum(a, axis) : g.max(a, axis); };
  auto term = [&](std::size_t t) { return g.parameter(name_ + ".t" + std::to_string(t), parameters()[t].shape); };

  for (const auto& st : p.steps) {
    if (auto s = std::get_if<step::Pool>(&st)) {
      const auto k = index_of(labels, s->axis);
      h = reduce(h, 1 + k);
      labels.erase(labels.begin() + k);
      sizes.erase(sizes.begin() + k);
    } else if (auto s = std::get_if<step::Broadcast>(&st)) {
      h = g.broadcast(h, 1 + labels.size(), s->size);
      labels.push_back(s->axis);
      sizes.push_back(s->size);
    } else if (std::get_if<step::Dense>(&st)) {
      h = g.linear(h, term(0), 1 + labels.size());
    } else if (auto s = std::get_if<step::DeepSets>(&st)) {
      const auto k = index_of(labels, s->axis);
      const std::size_t last = 1 + labels.size();
      NodeId self = g.linear(h, term(0), last);
      NodeId pooled = g.linear(reduce(h, 1 + k), term(1), last - 1);
      h = g.add(self, g.broadcast(pooled, 1 + k, sizes[k]));
    } else if (auto s = std::get_if<step::Hartford>(&st)) {
      std::size_t ka = index_of(labels, s->axis_a), kb = index_of(labels, s->axis_b);
      if (ka > kb) std::swap(ka, kb);
      const std::size_t last = 1 + labels.size();
      NodeId self = g.linear(h, term(0), last);
      NodeId pa = g.broadcast(g.linear(reduce(h, 1 + ka), term(1), last - 1), 1 + ka, sizes[ka]);
      NodeId pb = g.broadcast(g.linear(reduce(h, 1 + kb), term(2), last - 1), 1 + kb, sizes[kb]);
      NodeId both = g.linear(reduce(reduce(h, 1 + kb), 1 + ka), term(3), last - 2);
      both = g.broadcast(g.broadcast(both, 1 + ka, sizes[ka]), 1 + kb, sizes[kb]);
      NodeId parts[] = {self, pa, pb, both};
      h = g.add_all(parts);
    }
  }

  // scatter: (B, labels..., f' * features) -> (B, f', to axes...)
  const std::size_t L = labels.size();
  Shape s{batch};
  s.insert(s.end(), sizes.begin(), sizes.end());
  s.push_back(f_out_);
  for (auto a : p.feature_out) s.push_back(p.to_shape[index_of(p.to_axes, a)]);
  h = g.reshape(h, s);
  std::vector<std::size_t> back{0, 1 + L};
  for (auto a : p.to_axes) {
    if (contains(labels, a))
      back.push_back(1 + index_of(labels, a));
    else
      back.push_back(2 + L + index_of(p.feature_out, a));
  }
  identity = true;
  for (std::size_t k = 0; k < back.size(); ++k) identity = identity && back[k] == k;
  return identity ? h : g.permute(h, back);
}

template <typename T>
Tensor<T> block_forward(const BlockLayer& block, const Bindings<T>& params, const Tensor<T>& x) {
  Graph<T> g;
  auto in = g.input("x", x.shape());
  auto out = block.build(g, in);
  Bindings<T> b = params;
  b.insert_or_assign("x", x);
  return forward_eval(g, b, out);
}

template NodeId BlockLayer::build(Graph<float>&, NodeId) const;
template NodeId BlockLayer::build(Graph<double>&, NodeId) const;
template Tensor<float> block_forward(const BlockLayer&, const Bindings<float>&, const Tensor<float>&);
template Tensor<double> block_forward(const BlockLayer&, const Bindings<double>&, const Tensor<double>&);

}  // namespace dws
