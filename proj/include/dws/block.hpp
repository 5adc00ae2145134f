#pragma once

#include <cstddef>
#include <string>
#include <variant>
#include <vector>

#include "dws/graph.hpp"
#include "dws/weight_space.hpp"

namespace dws {

enum class PoolMode : unsigned char { Sum, Max };
const char* pool_mode_name(PoolMode mode);
PoolMode parse_pool_mode(const std::string& text);

namespace step {
/// Contract a set axis (labelled by its layer index).
struct Pool {
  std::size_t axis;
  std::size_t size;
};
/// Introduce a set axis by copying along it.
struct Broadcast {
  std::size_t axis;
  std::size_t size;
};
/// Linear map on the feature axis only.
struct Dense {
  std::size_t in, out;
};
/// Two-term S_n-equivariant map along one shared set axis.
struct DeepSets {
  std::size_t axis;
  std::size_t in, out;
};
/// Four-term S_n x S_m-equivariant map along two shared set axes.
struct Hartford {
  std::size_t axis_a, axis_b;
  std::size_t in, out;
};
}  // namespace step

using BlockStep = std::variant<step::Pool, step::Broadcast, step::Dense, step::DeepSets, step::Hartford>;

/// Recipe for the equivariant map between two sub-spaces. Free axes of the
/// source are folded into the feature axis; free axes of the target are
/// unfolded from it.
struct BlockPlan {
  SubspaceId from, to;
  std::vector<std::size_t> from_axes, to_axes;    // layer labels of the tensor axes
  Shape from_shape, to_shape;
  std::vector<std::size_t> feature_in, feature_out;  // free axes folded into features
  std::vector<std::size_t> shared;                 // shared set axes (0, 1 or 2)
  std::vector<BlockStep> steps;
  std::size_t in_features = 1, out_features = 1;
  std::size_t terms = 1;  // 1, 2 or 4 linear maps

  /// Scalar parameter count for one input and one output channel.
  std::size_t parameter_count() const { return terms * in_features * out_features; }
  std::string describe() const;  // "POOL(d2) -> DS(d0,d0) -> BC(d1)"
};

/// Rule engine. `in_spec` and `out_spec` may differ only at the free dims
/// d_0 and d_M.
BlockPlan plan_block(const WeightSpaceSpec& in_spec, const WeightSpaceSpec& out_spec, SubspaceId from, SubspaceId to);
inline BlockPlan plan_block(const WeightSpaceSpec& spec, SubspaceId from, SubspaceId to) {
  return plan_block(spec, spec, from, to);
}

/// Literal cell of the block tables: the row's implementation text and its
/// "# params" formula evaluated on the spec.
struct TableCell {
  std::string table;  // "W->W", "B->B", "W->B", "B->W"
  std::string row;
  std::string implementation;
  std::size_t params = 0;
};
TableCell table_cell(const WeightSpaceSpec& spec, SubspaceId from, SubspaceId to);

/// Named parameter with the fan-in/fan-out used by initialization.
struct ParamSpec {
  std::string name;
  Shape shape;
  std::size_t fan_in = 1, fan_out = 1;
  bool is_bias = false;
};

/// One block with channel promotion: every scalar of the f=1 plan becomes an
/// (f_out x f_in) matrix, so each term is a (f_out*out) x (f_in*in) matrix.
class BlockLayer {
 public:
  BlockLayer(BlockPlan plan, std::size_t in_channels, std::size_t out_channels, PoolMode pool, std::string name);

  const BlockPlan& plan() const { return plan_; }
  std::size_t in_channels() const { return f_in_; }
  std::size_t out_channels() const { return f_out_; }
  PoolMode pool() const { return pool_; }
  const std::string& name() const { return name_; }

  std::vector<ParamSpec> parameters() const;
  std::size_t parameter_count() const;

  /// x: (B, f_in, from-shape...) -> (B, f_out, to-shape...)
  template <typename T>
  NodeId build(Graph<T>& g, NodeId x) const;

 private:
  BlockPlan plan_;
  std::size_t f_in_, f_out_;
  PoolMode pool_;
  std::string name_;
};

/// Evaluates one block on a concrete tensor (B, f_in, from-shape...).
template <typename T>
Tensor<T> block_forward(const BlockLayer& block, const Bindings<T>& params, const Tensor<T>& x);

}  // namespace dws
