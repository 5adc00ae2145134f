#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "dws/block.hpp"
#include "dws/random.hpp"

namespace dws {

/// Full V -> V' equivariant affine layer: one block per ordered sub-space
/// pair plus a bias that is constant on each orbit of the target.
class DWSLayer {
 public:
  DWSLayer(WeightSpaceSpec in_spec, WeightSpaceSpec out_spec, std::size_t in_channels, std::size_t out_channels,
           PoolMode pool, std::string name, bool with_bias = true);
  DWSLayer(const WeightSpaceSpec& spec, std::size_t in_channels, std::size_t out_channels, PoolMode pool,
           std::string name, bool with_bias = true)
      : DWSLayer(spec, spec, in_channels, out_channels, pool, std::move(name), with_bias) {}

  const WeightSpaceSpec& in_spec() const { return in_spec_; }
  const WeightSpaceSpec& out_spec() const { return out_spec_; }
  std::size_t in_channels() const { return f_in_; }
  std::size_t out_channels() const { return f_out_; }
  const std::string& name() const { return name_; }
  /// Target-major: blocks()[t * S + s] maps source s to target t.
  const std::vector<BlockLayer>& blocks() const { return blocks_; }

  std::vector<ParamSpec> parameters() const;
  std::size_t parameter_count() const;

  /// One node per sub-space in canonical order, each (B, f, shape...).
  template <typename T>
  std::vector<NodeId> build(Graph<T>& g, const std::vector<NodeId>& in) const;

 private:
  WeightSpaceSpec in_spec_, out_spec_;
  std::size_t f_in_, f_out_;
  std::string name_;
  bool with_bias_;
  std::vector<BlockLayer> blocks_;
};

/// Pools every sub-space over its set axes (one value per orbit and
/// channel), then applies a dense map from O*f to k.
class InvariantHead {
 public:
  InvariantHead(WeightSpaceSpec spec, std::size_t channels, std::size_t out_dim, PoolMode pool, std::string name);

  std::size_t pooled_features() const;  // O * f
  std::size_t out_dim() const { return k_; }
  std::vector<ParamSpec> parameters() const;
  std::size_t parameter_count() const;

  /// Orbit-pooled features (B, O*f) before the dense map.
  template <typename T>
  NodeId pool_orbits(Graph<T>& g, const std::vector<NodeId>& in) const;
  template <typename T>
  NodeId build(Graph<T>& g, const std::vector<NodeId>& in) const;

 private:
  WeightSpaceSpec spec_;
  std::size_t f_, k_;
  PoolMode pool_;
  std::string name_;
};

/// y = x W^T + b on (B, in).
class DenseLayer {
 public:
  DenseLayer(std::size_t in, std::size_t out, std::string name) : in_(in), out_(out), name_(std::move(name)) {}
  std::vector<ParamSpec> parameters() const;
  std::size_t parameter_count() const { return in_ * out_ + out_; }
  template <typename T>
  NodeId build(Graph<T>& g, NodeId x) const;

 private:
  std::size_t in_, out_;
  std::string name_;
};

enum class InitMode : unsigned char { XavierScaled, ZeroBiasXavier };
InitMode parse_init_mode(const std::string& text);

/// Matrices: normal with std mu * sqrt(2 in / out) * sqrt(2 / (in + out))
/// (XavierScaled) or sqrt(2 / (in + out)) (ZeroBiasXavier). Biases: zero.
Bindings<double> init_parameters(const std::vector<ParamSpec>& specs, InitMode mode, double mu, Rng& rng);

/// Splits per-sub-space batch tensors out of weight-space vectors and back.
std::vector<Tensor<double>> to_subspace_batch(const std::vector<WeightSpaceVector>& batch);
std::vector<WeightSpaceVector> from_subspace_batch(const WeightSpaceSpec& spec,
                                                   const std::vector<Tensor<double>>& parts);

/// Single-input conveniences (double precision).
WeightSpaceVector dws_forward(const DWSLayer& layer, const Bindings<double>& params, const WeightSpaceVector& v);
std::vector<double> invariant_forward(const InvariantHead& head, const Bindings<double>& params,
                                      const WeightSpaceVector& v);

}  // namespace dws
