#pragma once

#include <compare>
#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dws/tensor.hpp"

namespace dws {

enum class SubspaceKind : unsigned char { Weight, Bias };

/// One summand of the weight space: the weight matrix W_m or the bias b_m of
/// layer m (1-based).
struct SubspaceId {
  SubspaceKind kind = SubspaceKind::Weight;
  std::size_t layer = 1;

  static SubspaceId weight(std::size_t m) { return {SubspaceKind::Weight, m}; }
  static SubspaceId bias(std::size_t m) { return {SubspaceKind::Bias, m}; }
  static SubspaceId parse(std::string_view text);

  bool is_weight() const { return kind == SubspaceKind::Weight; }
  std::string name() const;  // "W2", "B1"

  friend auto operator<=>(const SubspaceId&, const SubspaceId&) = default;
};

/// Architecture d_0..d_M of an M-layer MLP. Indices 1..M-1 are set indices
/// (permuted by the symmetry group); 0 and M are free.
class WeightSpaceSpec {
 public:
  WeightSpaceSpec() = default;
  explicit WeightSpaceSpec(std::vector<std::size_t> dims);
  static WeightSpaceSpec parse(std::string_view csv);  // "2,3,3,2"

  const std::vector<std::size_t>& dims() const { return dims_; }
  std::size_t layers() const { return dims_.size() - 1; }
  std::size_t dim(std::size_t index) const { return dims_.at(index); }
  bool is_set_index(std::size_t index) const { return index >= 1 && index + 1 <= layers(); }

  /// All sub-spaces in canonical order W_1, B_1, ..., W_M, B_M.
  std::vector<SubspaceId> subspaces() const;
  std::size_t subspace_index(SubspaceId id) const;  // position in subspaces()
  /// Layer indices labelling the tensor axes: W_m -> {m, m-1}, B_m -> {m}.
  std::vector<std::size_t> axes(SubspaceId id) const;
  Shape shape(SubspaceId id) const;
  std::size_t size(SubspaceId id) const { return shape_size(shape(id)); }
  /// Offset of the sub-space in the flat single-channel vector.
  std::size_t offset(SubspaceId id) const;
  std::size_t flat_dimension() const;

  std::string to_string() const;  // "2,3,3,2"

  friend bool operator==(const WeightSpaceSpec&, const WeightSpaceSpec&) = default;

 private:
  void check(SubspaceId id) const;
  std::vector<std::size_t> dims_;
};

/// Weights and biases of one MLP with f stacked channels. Weight m has shape
/// (f, d_m, d_{m-1}); bias m has shape (f, d_m).
class WeightSpaceVector {
 public:
  WeightSpaceVector() = default;
  WeightSpaceVector(WeightSpaceSpec spec, std::size_t channels);  // zeros

  const WeightSpaceSpec& spec() const { return spec_; }
  std::size_t channels() const { return channels_; }

  Tensor<double>& weight(std::size_t m) { return weights_.at(m - 1); }
  const Tensor<double>& weight(std::size_t m) const { return weights_.at(m - 1); }
  Tensor<double>& bias(std::size_t m) { return biases_.at(m - 1); }
  const Tensor<double>& bias(std::size_t m) const { return biases_.at(m - 1); }
  Tensor<double>& part(SubspaceId id) { return id.is_weight() ? weight(id.layer) : bias(id.layer); }
  const Tensor<double>& part(SubspaceId id) const { return id.is_weight() ? weight(id.layer) : bias(id.layer); }

  friend bool operator==(const WeightSpaceVector&, const WeightSpaceVector&) = default;

 private:
  WeightSpaceSpec spec_;
  std::size_t channels_ = 0;
  std::vector<Tensor<double>> weights_;
  std::vector<Tensor<double>> biases_;
};

/// g = (tau_1, ..., tau_{M-1}); tau_m is a permutation of {0..d_m-1} stored
/// as its image list. The action sends entry i of a tau_m-permuted axis to
/// position tau_m(i).
class GroupElement {
 public:
  GroupElement() = default;
  explicit GroupElement(std::vector<std::vector<std::size_t>> perms);
  static GroupElement identity(const WeightSpaceSpec& spec);

  const std::vector<std::vector<std::size_t>>& perms() const { return perms_; }
  /// tau_m for a set index; the identity (empty span) for free indices.
  std::span<const std::size_t> perm(std::size_t layer_index) const;
  std::size_t factors() const { return perms_.size(); }
  bool matches(const WeightSpaceSpec& spec) const;

  GroupElement inverse() const;
  /// (g * h) acts as g after h.
  friend GroupElement compose(const GroupElement& g, const GroupElement& h);
  friend bool operator==(const GroupElement&, const GroupElement&) = default;

 private:
  std::vector<std::vector<std::size_t>> perms_;
};

GroupElement compose(const GroupElement& g, const GroupElement& h);

/// Applies g to a tensor whose trailing axes are the sub-space axes; any
/// leading (batch, channel) axes are carried along unchanged.
template <typename T>
Tensor<T> act_on_subspace(const WeightSpaceSpec& spec, const GroupElement& g, SubspaceId id, const Tensor<T>& x);

WeightSpaceVector apply_action(const GroupElement& g, const WeightSpaceVector& v);

/// Canonical order W_1, b_1, ..., W_M, b_M; channel-leading and row-major
/// inside each sub-space.
Tensor<double> flatten(const WeightSpaceVector& v);
WeightSpaceVector unflatten(const WeightSpaceSpec& spec, std::size_t channels, std::span<const double> flat);

/// Per-coordinate statistics in flat single-channel order.
struct NormalizationStats {
  std::vector<double> mean;
  std::vector<double> stddev;
};

/// Mean and population standard deviation over `rows` (flat vectors);
/// standard deviations below `floor` are raised to `floor`.
NormalizationStats compute_normalization(std::span<const std::vector<double>> rows, double floor = 1e-8);
/// (x - m) / s per coordinate. Throws if any s is not strictly positive.
std::vector<double> normalize(std::span<const double> flat, const NormalizationStats& stats);
std::vector<double> denormalize(std::span<const double> flat, const NormalizationStats& stats);

}  // namespace dws
