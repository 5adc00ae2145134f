#include "dws/symmetry.hpp"

#include <algorithm>
#include <map>
#include <numeric>
#include <stdexcept>

namespace dws {

GroupElement sample_group_element(const WeightSpaceSpec& spec, Rng& rng) {
  std::vector<std::vector<std::size_t>> perms;
  for (std::size_t m = 1; m < spec.layers(); ++m) {
    std::vector<std::size_t> p(spec.dim(m));
    std::iota(p.begin(), p.end(), std::size_t{0});
    for (std::size_t i = p.size(); i > 1; --i) std::swap(p[i - 1], p[uniform_index(rng, i)]);
    perms.push_back(std::move(p));
  }
  return GroupElement(std::move(perms));
}

std::optional<std::uint64_t> group_order(const WeightSpaceSpec& spec) {
  std::uint64_t order = 1;
  for (std::size_t m = 1; m < spec.layers(); ++m)
    for (std::uint64_t k = 2; k <= spec.dim(m); ++k)
      if (__builtin_mul_overflow(order, k, &order)) return std::nullopt;
  return order;
}

GroupEnumerator::GroupEnumerator(const WeightSpaceSpec& spec, std::uint64_t cap) {
  auto order = group_order(spec);
  if (!order || *order > cap)
    throw std::length_error("group of spec " + spec.to_string() + " has more than " + std::to_string(cap) +
                            " elements; use Monte Carlo mode (--mc N)");
  order_ = *order;
  perms_ = GroupElement::identity(spec).perms();
}

bool GroupEnumerator::next(GroupElement& out) {
  if (emitted_ == order_) return false;
  if (emitted_ > 0) {
    // odometer over factors, lowest factor fastest
    for (auto& p : perms_)
      if (std::next_permutation(p.begin(), p.end())) break;
  }
  ++emitted_;
  out = GroupElement(perms_);
  return true;
}

std::vector<GroupElement> enumerate_group(const WeightSpaceSpec& spec, std::uint64_t cap) {
  GroupEnumerator it(spec, cap);
  std::vector<GroupElement> out;
  out.reserve(it.order());
  GroupElement g;
  while (it.next(g)) out.push_back(g);
  return out;
}

std::vector<Orbit> enumerate_orbits(const WeightSpaceSpec& spec) {
  std::vector<Orbit> out;
  for (auto id : spec.subspaces()) {
    const auto axes = spec.axes(id);
    const auto shape = spec.shape(id);
    const auto base = spec.offset(id);
    std::map<std::vector<std::size_t>, std::size_t> by_key;
    std::vector<std::size_t> index(axes.size(), 0);
    for (std::size_t flat = 0; flat < shape_size(shape); ++flat) {
      std::vector<std::size_t> key;
      for (std::size_t a = 0; a < axes.size(); ++a)
        if (!spec.is_set_index(axes[a])) key.push_back(index[a]);
      auto [it, fresh] = by_key.try_emplace(key, 0);
      if (fresh) {
        it->second = out.size();
        out.push_back({id, {}});
      }
      out[it->second].coords.push_back(base + flat);
      for (std::size_t a = axes.size(); a-- > 0;) {
        if (++index[a] < shape[a]) break;
        index[a] = 0;
      }
    }
  }
  return out;
}

std::size_t orbit_count(const WeightSpaceSpec& spec, SubspaceId id) {
  std::size_t n = 1;
  for (auto a : spec.axes(id))
    if (!spec.is_set_index(a)) n *= spec.dim(a);
  return n;
}

std::size_t orbit_count(const WeightSpaceSpec& spec) {
  std::size_t n = 0;
  for (auto id : spec.subspaces()) n += orbit_count(spec, id);
  return n;
}

std::vector<std::vector<int>> RepresentationMatrix::dense() const {
  std::vector<std::vector<int>> m(image.size(), std::vector<int>(image.size(), 0));
  for (std::size_t j = 0; j < image.size(); ++j) m[image[j]][j] = 1;
  return m;
}

std::size_t RepresentationMatrix::trace() const {
  std::size_t t = 0;
  for (std::size_t j = 0; j < image.size(); ++j) t += image[j] == j;
  return t;
}

RepresentationMatrix operator*(const RepresentationMatrix& a, const RepresentationMatrix& b) {
  if (a.image.size() != b.image.size()) throw ShapeError("representation matrices of different size");
  RepresentationMatrix r{a.subspace, std::vector<std::size_t>(b.image.size())};
  for (std::size_t j = 0; j < b.image.size(); ++j) r.image[j] = a.image[b.image[j]];
  return r;
}

RepresentationMatrix representation_matrix(const WeightSpaceSpec& spec, const GroupElement& g, SubspaceId id) {
  if (!g.matches(spec)) throw std::invalid_argument("group element does not match spec " + spec.to_string());
  const auto axes = spec.axes(id);
  const auto shape = spec.shape(id);
  RepresentationMatrix r{id, std::vector<std::size_t>(shape_size(shape))};
  if (axes.size() == 2) {
    auto rows = g.perm(axes[0]);
    auto cols = g.perm(axes[1]);
    const std::size_t C = shape[1];
    for (std::size_t i = 0; i < shape[0]; ++i)
      for (std::size_t j = 0; j < C; ++j)
        r.image[i * C + j] = (rows.empty() ? i : rows[i]) * C + (cols.empty() ? j : cols[j]);
  } else {
    auto p = g.perm(axes[0]);
    for (std::size_t i = 0; i < shape[0]; ++i) r.image[i] = p.empty() ? i : p[i];
  }
  return r;
}

}  // namespace dws
