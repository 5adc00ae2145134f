#include "dws/models.hpp"

#include <stdexcept>

namespace dws {

std::size_t WeightSpaceModel::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : parameters()) n += shape_size(p.shape);
  return n;
}

namespace {

InvariantHead make_head(const DWSNetConfig& c) {
  if (c.channels.empty()) throw std::invalid_argument("DWSNet needs at least one DWS layer");
  return InvariantHead(c.spec, c.channels.back(), c.head_dim, c.pool, "head");
}

}  // namespace

DWSNet::DWSNet(DWSNetConfig config) : config_(std::move(config)), head_(make_head(config_)) {
  std::size_t f = 1;
  for (std::size_t l = 0; l < config_.channels.size(); ++l) {
    layers_.emplace_back(config_.spec, f, config_.channels[l], config_.pool, "dws" + std::to_string(l));
    f = config_.channels[l];
  }
  std::size_t width = config_.head_dim;
  for (std::size_t l = 0; l < config_.readout.size(); ++l) {
    readout_.emplace_back(width, config_.readout[l], "readout" + std::to_string(l));
    width = config_.readout[l];
  }
  readout_.emplace_back(width, config_.out_dim, "readout" + std::to_string(config_.readout.size()));
}

std::vector<ParamSpec> DWSNet::parameters() const {
  std::vector<ParamSpec> out;
  auto append = [&](std::vector<ParamSpec> p) { out.insert(out.end(), p.begin(), p.end()); };
  for (const auto& l : layers_) append(l.parameters());
  append(head_.parameters());
  for (const auto& d : readout_) append(d.parameters());
  return out;
}

template <typename T>
std::vector<NodeId> DWSNet::build_trunk(Graph<T>& g, const std::vector<NodeId>& in) const {
  std::vector<NodeId> h = in;
  for (const auto& l : layers_) {
    h = l.build(g, h);
    for (auto& n : h) n = g.relu(n);
  }
  return h;
}

template <typename T>
NodeId DWSNet::build_subspaces(Graph<T>& g, const std::vector<NodeId>& in) const {
  NodeId x = head_.build(g, build_trunk(g, in));
  for (const auto& d : readout_) x = d.build(g, g.relu(x));
  return x;
}

template <typename T>
NodeId DWSNet::build_flat(Graph<T>& g, NodeId flat) const {
  const auto& spec = config_.spec;
  const Shape s = g.shape(flat);
  if (s.size() != 2 || s[1] != spec.flat_dimension())
    throw ShapeError("DWSNet expects (B, " + std::to_string(spec.flat_dimension()) + "), got " + shape_to_string(s));
  std::vector<NodeId> in;
  for (auto id : spec.subspaces()) {
    const auto off = spec.offset(id);
    Shape shape{s[0], 1};
    for (auto d : spec.shape(id)) shape.push_back(d);
    in.push_back(g.reshape(g.slice(flat, 1, off, off + spec.size(id)), shape));
  }
  return build_subspaces(g, in);
}

nlohmann::json DWSNet::to_json() const {
  return {{"kind", "dws"},
          {"dims", config_.spec.dims()},
          {"channels", config_.channels},
          {"pool", pool_mode_name(config_.pool)},
          {"head_dim", config_.head_dim},
          {"readout", config_.readout},
          {"out_dim", config_.out_dim},
          {"activation", "relu"}};
}

FlatMLP::FlatMLP(WeightSpaceSpec spec, std::vector<std::size_t> hidden, std::size_t out_dim)
    : spec_(std::move(spec)), hidden_(std::move(hidden)), out_dim_(out_dim) {
  std::size_t width = spec_.flat_dimension();
  for (std::size_t l = 0; l < hidden_.size(); ++l) {
    layers_.emplace_back(width, hidden_[l], "mlp" + std::to_string(l));
    width = hidden_[l];
  }
  layers_.emplace_back(width, out_dim_, "mlp" + std::to_string(hidden_.size()));
}

std::size_t FlatMLP::count_for(std::size_t input, const std::vector<std::size_t>& hidden, std::size_t out_dim) {
  std::size_t n = 0, width = input;
  for (auto h : hidden) {
    n += width * h + h;
    width = h;
  }
  return n + width * out_dim + out_dim;
}

std::vector<ParamSpec> FlatMLP::parameters() const {
  std::vector<ParamSpec> out;
  for (const auto& d : layers_) {
    auto p = d.parameters();
    out.insert(out.end(), p.begin(), p.end());
  }
  return out;
}

template <typename T>
NodeId FlatMLP::build_impl(Graph<T>& g, NodeId flat) const {
  NodeId x = flat;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    if (l) x = g.relu(x);
    x = layers_[l].build(g, x);
  }
  return x;
}

nlohmann::json FlatMLP::to_json() const {
  return {{"kind", "mlp"}, {"dims", spec_.dims()}, {"hidden", hidden_}, {"out_dim", out_dim_}, {"activation", "relu"}};
}

std::unique_ptr<WeightSpaceModel> model_from_json(const nlohmann::json& j) {
  const auto kind = j.at("kind").get<std::string>();
  WeightSpaceSpec spec(j.at("dims").get<std::vector<std::size_t>>());
  if (kind == "dws" || kind == "dwsnet") {
    DWSNetConfig c;
    c.spec = spec;
    c.channels = j.at("channels").get<std::vector<std::size_t>>();
    c.pool = parse_pool_mode(j.at("pool").get<std::string>());
    c.head_dim = j.at("head_dim").get<std::size_t>();
    c.readout = j.at("readout").get<std::vector<std::size_t>>();
    c.out_dim = j.at("out_dim").get<std::size_t>();
    return std::make_unique<DWSNet>(std::move(c));
  }
  if (kind == "mlp" || kind == "mlp-perm-aug")
    return std::make_unique<FlatMLP>(spec, j.at("hidden").get<std::vector<std::size_t>>(),
                                     j.at("out_dim").get<std::size_t>());
  throw std::invalid_argument("unknown model kind '" + kind + "'");
}

template std::vector<NodeId> DWSNet::build_trunk(Graph<float>&, const std::vector<NodeId>&) const;
template std::vector<NodeId> DWSNet::build_trunk(Graph<double>&, const std::vector<NodeId>&) const;
template NodeId DWSNet::build_subspaces(Graph<float>&, const std::vector<NodeId>&) const;
template NodeId DWSNet::build_subspaces(Graph<double>&, const std::vector<NodeId>&) const;
template NodeId DWSNet::build_flat(Graph<float>&, NodeId) const;
template NodeId DWSNet::build_flat(Graph<double>&, NodeId) const;
template NodeId FlatMLP::build_impl(Graph<float>&, NodeId) const;
template NodeId FlatMLP::build_impl(Graph<double>&, NodeId) const;

}  // namespace dws
