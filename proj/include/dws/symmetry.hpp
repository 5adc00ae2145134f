#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "dws/random.hpp"
#include "dws/weight_space.hpp"

namespace dws {

/// Uniform element of G = S_{d_1} x ... x S_{d_{M-1}} (Fisher-Yates per factor).
GroupElement sample_group_element(const WeightSpaceSpec& spec, Rng& rng);

/// |G|, or nullopt when it overflows 64 bits.
std::optional<std::uint64_t> group_order(const WeightSpaceSpec& spec);

inline constexpr std::uint64_t kGroupEnumerationCap = 1'000'000;

/// Visits every element of G exactly once, starting at the identity.
class GroupEnumerator {
 public:
  explicit GroupEnumerator(const WeightSpaceSpec& spec, std::uint64_t cap = kGroupEnumerationCap);
  std::uint64_t order() const { return order_; }
  /// Fills `out` with the next element; false once exhausted.
  bool next(GroupElement& out);

 private:
  std::vector<std::vector<std::size_t>> perms_;
  std::uint64_t order_ = 0;
  std::uint64_t emitted_ = 0;
};

std::vector<GroupElement> enumerate_group(const WeightSpaceSpec& spec, std::uint64_t cap = kGroupEnumerationCap);

struct Orbit {
  SubspaceId subspace;
  std::vector<std::size_t> coords;  // flat single-channel coordinates
};

/// Orbits of G on the coordinates of V, in canonical sub-space order.
std::vector<Orbit> enumerate_orbits(const WeightSpaceSpec& spec);
std::size_t orbit_count(const WeightSpaceSpec& spec);
/// Orbits of one sub-space: the free axes survive, set axes collapse.
std::size_t orbit_count(const WeightSpaceSpec& spec, SubspaceId id);

/// Permutation matrix of g on vec(sub-space), stored as column images:
/// R e_j = e_{image[j]}.
struct RepresentationMatrix {
  SubspaceId subspace;
  std::vector<std::size_t> image;

  std::size_t dim() const { return image.size(); }
  std::vector<std::vector<int>> dense() const;
  std::size_t trace() const;
  template <typename T>
  std::vector<T> apply(const std::vector<T>& x) const {
    std::vector<T> y(x.size());
    for (std::size_t j = 0; j < image.size(); ++j) y[image[j]] = x[j];
    return y;
  }
  friend RepresentationMatrix operator*(const RepresentationMatrix& a, const RepresentationMatrix& b);
  friend bool operator==(const RepresentationMatrix&, const RepresentationMatrix&) = default;
};

RepresentationMatrix representation_matrix(const WeightSpaceSpec& spec, const GroupElement& g, SubspaceId id);

}  // namespace dws
