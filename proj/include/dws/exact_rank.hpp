#pragma once

#include <cstddef>
#include <cstdint>
#include <utility>
#include <vector>

namespace dws {

using SparseRow = std::vector<std::pair<std::uint32_t, std::int64_t>>;  // sorted by column

/// Incremental fraction-free row echelon form over the integers. Each new
/// row is cross-multiplied against existing pivots and divided by the gcd
/// of its entries; every operation is overflow-checked.
class IntegerEliminator {
 public:
  explicit IntegerEliminator(std::size_t columns);

  /// True when the row is independent of those already added.
  bool add_row(SparseRow row);
  bool add_dense_row(const std::vector<std::int64_t>& row);
  std::size_t rank() const { return rank_; }
  std::size_t columns() const { return pivots_.size(); }

 private:
  std::vector<SparseRow> pivots_;  // indexed by leading column; empty if none
  std::size_t rank_ = 0;
};

/// Row echelon form over Z/pZ with p = 2^61 - 1. The rank of an integer
/// matrix mod p never exceeds its rank over Q.
class ModularEliminator {
 public:
  static constexpr std::uint64_t kPrime = (std::uint64_t{1} << 61) - 1;
  explicit ModularEliminator(std::size_t columns);

  bool add_row(const SparseRow& row);
  std::size_t rank() const { return rank_; }

 private:
  std::vector<std::vector<std::uint64_t>> pivots_;  // dense, leading entry 1
  std::size_t rank_ = 0;
};

std::size_t integer_rank(const std::vector<std::vector<std::int64_t>>& rows);

}  // namespace dws
