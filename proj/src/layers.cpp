#include "dws/layers.hpp"

#include <cmath>
#include <stdexcept>

#include "dws/symmetry.hpp"

namespace dws {

DWSLayer::DWSLayer(WeightSpaceSpec in_spec, WeightSpaceSpec out_spec, std::size_t in_channels,
                   std::size_t out_channels, PoolMode pool, std::string name, bool with_bias)
    : in_spec_(std::move(in_spec)),
      out_spec_(std::move(out_spec)),
      f_in_(in_channels),
      f_out_(out_channels),
      name_(std::move(name)),
      with_bias_(with_bias) {
  for (auto to : out_spec_.subspaces())
    for (auto from : in_spec_.subspaces())
      blocks_.emplace_back(plan_block(in_spec_, out_spec_, from, to), f_in_, f_out_, pool,
                           name_ + "." + from.name() + "->" + to.name());
}

std::vector<ParamSpec> DWSLayer::parameters() const {
  std::vector<ParamSpec> out;
  for (const auto& b : blocks_) {
    auto p = b.parameters();
    out.insert(out.end(), p.begin(), p.end());
  }
  if (with_bias_)
    for (auto to : out_spec_.subspaces()) {
      const auto n = orbit_count(out_spec_, to);
      out.push_back({name_ + ".bias." + to.name(), Shape{f_out_, n}, 1, 1, true});
    }
  return out;
}

std::size_t DWSLayer::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : parameters()) n += shape_size(p.shape);
  return n;
}

template <typename T>
std::vector<NodeId> DWSLayer::build(Graph<T>& g, const std::vector<NodeId>& in) const {
  const auto sources = in_spec_.subspaces();
  const auto targets = out_spec_.subspaces();
  if (in.size() != sources.size())
    throw ShapeError("layer " + name_ + " expects " + std::to_string(sources.size()) + " sub-space inputs, got " +
                     std::to_string(in.size()));
  std::vector<NodeId> out;
  for (std::size_t t = 0; t < targets.size(); ++t) {
    std::vector<NodeId> parts;
    for (std::size_t s = 0; s < sources.size(); ++s) parts.push_back(blocks_[t * sources.size() + s].build(g, in[s]));
    NodeId sum = g.add_all(parts);
    if (with_bias_) {
      const auto to = targets[t];
      const auto axes = out_spec_.axes(to);
      const auto shape = out_spec_.shape(to);
      const std::size_t batch = g.shape(sum)[0];
      Shape free_shape{f_out_};
      for (std::size_t k = 0; k < axes.size(); ++k)
        if (!out_spec_.is_set_index(axes[k])) free_shape.push_back(shape[k]);
      NodeId b = g.parameter(name_ + ".bias." + to.name(), Shape{f_out_, orbit_count(out_spec_, to)});
      b = g.reshape(b, free_shape);
      for (std::size_t k = 0; k < axes.size(); ++k)
        if (out_spec_.is_set_index(axes[k])) b = g.broadcast(b, 1 + k, shape[k]);
      b = g.broadcast(b, 0, batch);
      sum = g.add(sum, b);
    }
    out.push_back(sum);
  }
  return out;
}

InvariantHead::InvariantHead(WeightSpaceSpec spec, std::size_t channels, std::size_t out_dim, PoolMode pool,
                             std::string name)
    : spec_(std::move(spec)), f_(channels), k_(out_dim), pool_(pool), name_(std::move(name)) {}

std::size_t InvariantHead::pooled_features() const { return orbit_count(spec_) * f_; }

std::vector<ParamSpec> InvariantHead::parameters() const {
  const auto in = pooled_features();
  return {{name_ + ".weight", Shape{k_, in}, in, k_, false}, {name_ + ".bias", Shape{k_}, in, k_, true}};
}

std::size_t InvariantHead::parameter_count() const { return k_ * pooled_features() + k_; }

template <typename T>
NodeId InvariantHead::pool_orbits(Graph<T>& g, const std::vector<NodeId>& in) const {
  const auto subs = spec_.subspaces();
  if (in.size() != subs.size()) throw ShapeError("invariant head expects one input per sub-space");
  std::vector<NodeId> pooled;
  for (std::size_t s = 0; s < subs.size(); ++s) {
    const auto axes = spec_.axes(subs[s]);
    NodeId h = in[s];
    const std::size_t batch = g.shape(h)[0];
    for (std::size_t k = axes.size(); k-- > 0;)
      if (spec_.is_set_index(axes[k])) h = pool_ == PoolMode::Sum ? g.sum(h, 2 + k) : g.max(h, 2 + k);
    pooled.push_back(g.reshape(h, Shape{batch, f_ * orbit_count(spec_, subs[s])}));
  }
  return g.concat(pooled, 1);
}

template <typename T>
NodeId InvariantHead::build(Graph<T>& g, const std::vector<NodeId>& in) const {
  NodeId x = pool_orbits(g, in);
  return DenseLayer(pooled_features(), k_, name_).build(g, x);
}

std::vector<ParamSpec> DenseLayer::parameters() const {
  return {{name_ + ".weight", Shape{out_, in_}, in_, out_, false}, {name_ + ".bias", Shape{out_}, in_, out_, true}};
}

template <typename T>
NodeId DenseLayer::build(Graph<T>& g, NodeId x) const {
  const Shape s = g.shape(x);
  if (s.size() != 2 || s[1] != in_)
    throw ShapeError("dense layer " + name_ + " expects (B, " + std::to_string(in_) + "), got " + shape_to_string(s));
  NodeId w = g.parameter(name_ + ".weight", Shape{out_, in_});
  NodeId b = g.parameter(name_ + ".bias", Shape{out_});
  return g.add(g.linear(x, w, 1), g.broadcast(b, 0, s[0]));
}

InitMode parse_init_mode(const std::string& text) {
  if (text == "xavier-scaled") return InitMode::XavierScaled;
  if (text == "zero-bias-xavier") return InitMode::ZeroBiasXavier;
  throw std::invalid_argument("init mode must be xavier-scaled or zero-bias-xavier, got '" + text + "'");
}

Bindings<double> init_parameters(const std::vector<ParamSpec>& specs, InitMode mode, double mu, Rng& rng) {
  Bindings<double> out;
  for (const auto& p : specs) {
    Tensor<double> t(p.shape);
    if (!p.is_bias) {
      const double in = static_cast<double>(p.fan_in), o = static_cast<double>(p.fan_out);
      double sd = std::sqrt(2.0 / (in + o));
      if (mode == InitMode::XavierScaled) sd *= mu * std::sqrt(2.0 * in / o);
      for (auto& v : t.data()) v = sd * normal01(rng);
    }
    out.insert_or_assign(p.name, std::move(t));
  }
  return out;
}

std::vector<Tensor<double>> to_subspace_batch(const std::vector<WeightSpaceVector>& batch) {
  if (batch.empty()) throw std::invalid_argument("empty batch");
  const auto& spec = batch.front().spec();
  const std::size_t f = batch.front().channels();
  std::vector<Tensor<double>> out;
  for (auto id : spec.subspaces()) {
    Shape s{batch.size(), f};
    for (auto d : spec.shape(id)) s.push_back(d);
    Tensor<double> t(s);
    const std::size_t stride = f * spec.size(id);
    for (std::size_t b = 0; b < batch.size(); ++b) {
      if (!(batch[b].spec() == spec) || batch[b].channels() != f)
        throw ShapeError("batch mixes specs or channel counts");
      auto src = batch[b].part(id).data();
      std::copy(src.begin(), src.end(), t.data().begin() + b * stride);
    }
    out.push_back(std::move(t));
  }
  return out;
}

std::vector<WeightSpaceVector> from_subspace_batch(const WeightSpaceSpec& spec,
                                                   const std::vector<Tensor<double>>& parts) {
  const auto subs = spec.subspaces();
  if (parts.size() != subs.size()) throw ShapeError("expected one tensor per sub-space");
  const std::size_t batch = parts[0].dim(0), f = parts[0].dim(1);
  std::vector<WeightSpaceVector> out(batch, WeightSpaceVector(spec, f));
  for (std::size_t s = 0; s < subs.size(); ++s) {
    const std::size_t stride = f * spec.size(subs[s]);
    if (parts[s].size() != batch * stride) throw ShapeError("sub-space tensor " + subs[s].name() + " has wrong size");
    for (std::size_t b = 0; b < batch; ++b) {
      auto dst = out[b].part(subs[s]).data();
      std::copy(parts[s].data().begin() + b * stride, parts[s].data().begin() + (b + 1) * stride, dst.begin());
    }
  }
  return out;
}

WeightSpaceVector dws_forward(const DWSLayer& layer, const Bindings<double>& params, const WeightSpaceVector& v) {
  if (!(v.spec() == layer.in_spec())) throw ShapeError("input spec does not match layer");
  if (v.channels() != layer.in_channels())
    throw ShapeError("layer " + layer.name() + " expects " + std::to_string(layer.in_channels()) +
                     " channels, got " + std::to_string(v.channels()));
  Graph<double> g;
  Bindings<double> b = params;
  auto parts = to_subspace_batch({v});
  std::vector<NodeId> in;
  const auto subs = v.spec().subspaces();
  for (std::size_t s = 0; s < subs.size(); ++s) {
    in.push_back(g.input("in." + subs[s].name(), parts[s].shape()));
    b.insert_or_assign("in." + subs[s].name(), parts[s]);
  }
  auto out = layer.build(g, in);
  auto ev = forward_eval(g, b, out);
  std::vector<Tensor<double>> res;
  for (auto id : out) res.push_back(ev.value(id));
  return from_subspace_batch(layer.out_spec(), res).front();
}

std::vector<double> invariant_forward(const InvariantHead& head, const Bindings<double>& params,
                                      const WeightSpaceVector& v) {
  Graph<double> g;
  Bindings<double> b = params;
  auto parts = to_subspace_batch({v});
  std::vector<NodeId> in;
  const auto subs = v.spec().subspaces();
  for (std::size_t s = 0; s < subs.size(); ++s) {
    in.push_back(g.input("in." + subs[s].name(), parts[s].shape()));
    b.insert_or_assign("in." + subs[s].name(), parts[s]);
  }
  auto out = head.build(g, in);
  return forward_eval(g, b, out).values();
}

template std::vector<NodeId> DWSLayer::build(Graph<float>&, const std::vector<NodeId>&) const;
template std::vector<NodeId> DWSLayer::build(Graph<double>&, const std::vector<NodeId>&) const;
template NodeId InvariantHead::pool_orbits(Graph<float>&, const std::vector<NodeId>&) const;
template NodeId InvariantHead::pool_orbits(Graph<double>&, const std::vector<NodeId>&) const;
template NodeId InvariantHead::build(Graph<float>&, const std::vector<NodeId>&) const;
template NodeId InvariantHead::build(Graph<double>&, const std::vector<NodeId>&) const;
template NodeId DenseLayer::build(Graph<float>&, NodeId) const;
template NodeId DenseLayer::build(Graph<double>&, NodeId) const;

}  // namespace dws
