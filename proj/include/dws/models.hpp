#pragma once

#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "dws/layers.hpp"

namespace dws {

/// A network on single-channel weight vectors. Input is a (B, D) node of
/// flat vectors in canonical order; output is (B, out_dim).
class WeightSpaceModel {
 public:
  virtual ~WeightSpaceModel() = default;
  virtual std::vector<ParamSpec> parameters() const = 0;
  virtual NodeId build(Graph<double>& g, NodeId flat) const = 0;
  virtual NodeId build(Graph<float>& g, NodeId flat) const = 0;
  /// Enough to rebuild the model with `model_from_json`.
  virtual nlohmann::json to_json() const = 0;
  virtual const WeightSpaceSpec& spec() const = 0;
  virtual std::size_t out_dim() const = 0;
  std::size_t parameter_count() const;
};

struct DWSNetConfig {
  WeightSpaceSpec spec;
  std::vector<std::size_t> channels{8, 8};  // output channels of each DWS layer
  PoolMode pool = PoolMode::Max;
  std::size_t head_dim = 32;
  std::vector<std::size_t> readout{32};  // hidden widths after the head
  std::size_t out_dim = 1;
};

/// DWS layers with ReLU between, invariant head, ReLU MLP readout.
class DWSNet final : public WeightSpaceModel {
 public:
  explicit DWSNet(DWSNetConfig config);

  const DWSNetConfig& config() const { return config_; }
  const std::vector<DWSLayer>& layers() const { return layers_; }
  const InvariantHead& head() const { return head_; }

  std::vector<ParamSpec> parameters() const override;
  NodeId build(Graph<double>& g, NodeId flat) const override { return build_flat(g, flat); }
  NodeId build(Graph<float>& g, NodeId flat) const override { return build_flat(g, flat); }
  nlohmann::json to_json() const override;
  const WeightSpaceSpec& spec() const override { return config_.spec; }
  std::size_t out_dim() const override { return config_.out_dim; }

  /// Per-sub-space inputs (B, 1, shape...) to (B, out_dim).
  template <typename T>
  NodeId build_subspaces(Graph<T>& g, const std::vector<NodeId>& in) const;
  /// Equivariant trunk only: last DWS layer output (after ReLU).
  template <typename T>
  std::vector<NodeId> build_trunk(Graph<T>& g, const std::vector<NodeId>& in) const;

 private:
  template <typename T>
  NodeId build_flat(Graph<T>& g, NodeId flat) const;

  DWSNetConfig config_;
  std::vector<DWSLayer> layers_;
  InvariantHead head_;
  std::vector<DenseLayer> readout_;
};

/// Fully connected ReLU network on the flattened weight vector.
class FlatMLP final : public WeightSpaceModel {
 public:
  FlatMLP(WeightSpaceSpec spec, std::vector<std::size_t> hidden, std::size_t out_dim = 1);

  const std::vector<std::size_t>& hidden() const { return hidden_; }
  std::vector<ParamSpec> parameters() const override;
  NodeId build(Graph<double>& g, NodeId flat) const override { return build_impl(g, flat); }
  NodeId build(Graph<float>& g, NodeId flat) const override { return build_impl(g, flat); }
  nlohmann::json to_json() const override;
  const WeightSpaceSpec& spec() const override { return spec_; }
  std::size_t out_dim() const override { return out_dim_; }

  static std::size_t count_for(std::size_t input, const std::vector<std::size_t>& hidden, std::size_t out_dim);

 private:
  template <typename T>
  NodeId build_impl(Graph<T>& g, NodeId flat) const;

  WeightSpaceSpec spec_;
  std::vector<std::size_t> hidden_;
  std::size_t out_dim_;
  std::vector<DenseLayer> layers_;
};

std::unique_ptr<WeightSpaceModel> model_from_json(const nlohmann::json& j);

}  // namespace dws
