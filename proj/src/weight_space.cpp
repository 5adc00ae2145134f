#include "dws/weight_space.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <stdexcept>

namespace dws {

SubspaceId SubspaceId::parse(std::string_view text) {
  if (text.size() < 2) throw std::invalid_argument("bad sub-space id '" + std::string(text) + "'");
  SubspaceId id;
  const char head = text.front();
  if (head == 'W' || head == 'w')
    id.kind = SubspaceKind::Weight;
  else if (head == 'B' || head == 'b')
    id.kind = SubspaceKind::Bias;
  else
    throw std::invalid_argument("bad sub-space id '" + std::string(text) + "'");
  auto rest = text.substr(1);
  auto [ptr, ec] = std::from_chars(rest.data(), rest.data() + rest.size(), id.layer);
  if (ec != std::errc{} || ptr != rest.data() + rest.size() || id.layer == 0)
    throw std::invalid_argument("bad sub-space id '" + std::string(text) + "'");
  return id;
}

std::string SubspaceId::name() const { return (is_weight() ? "W" : "B") + std::to_string(layer); }

WeightSpaceSpec::WeightSpaceSpec(std::vector<std::size_t> dims) : dims_(std::move(dims)) {
  if (dims_.size() < 3) throw std::invalid_argument("weight space needs at least 2 layers (3 dims)");
  for (auto d : dims_)
    if (d == 0) throw std::invalid_argument("layer dims must be >= 1");
}

WeightSpaceSpec WeightSpaceSpec::parse(std::string_view csv) {
  std::vector<std::size_t> dims;
  std::size_t pos = 0;
  while (pos <= csv.size()) {
    auto comma = csv.find(',', pos);
    if (comma == std::string_view::npos) comma = csv.size();
    auto tok = csv.substr(pos, comma - pos);
    while (!tok.empty() && tok.front() == ' ') tok.remove_prefix(1);
    while (!tok.empty() && tok.back() == ' ') tok.remove_suffix(1);
    std::size_t v = 0;
    auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (tok.empty() || ec != std::errc{} || ptr != tok.data() + tok.size())
      throw std::invalid_argument("bad dims list '" + std::string(csv) + "'");
    dims.push_back(v);
    pos = comma + 1;
  }
  return WeightSpaceSpec(std::move(dims));
}

std::vector<SubspaceId> WeightSpaceSpec::subspaces() const {
  std::vector<SubspaceId> out;
  for (std::size_t m = 1; m <= layers(); ++m) {
    out.push_back(SubspaceId::weight(m));
    out.push_back(SubspaceId::bias(m));
  }
  return out;
}

void WeightSpaceSpec::check(SubspaceId id) const {
  if (id.layer < 1 || id.layer > layers())
    throw std::out_of_range("sub-space " + id.name() + " outside spec " + to_string());
}

std::size_t WeightSpaceSpec::subspace_index(SubspaceId id) const {
  check(id);
  return 2 * (id.layer - 1) + (id.is_weight() ? 0 : 1);
}

std::vector<std::size_t> WeightSpaceSpec::axes(SubspaceId id) const {
  check(id);
  if (id.is_weight()) return {id.layer, id.layer - 1};
  return {id.layer};
}

Shape WeightSpaceSpec::shape(SubspaceId id) const {
  Shape s;
  for (auto a : axes(id)) s.push_back(dims_[a]);
  return s;
}

std::size_t WeightSpaceSpec::offset(SubspaceId id) const {
  std::size_t off = 0;
  for (auto s : subspaces()) {
    if (s == id) return off;
    off += size(s);
  }
  throw std::out_of_range("sub-space " + id.name() + " outside spec " + to_string());
}

std::size_t WeightSpaceSpec::flat_dimension() const {
  std::size_t n = 0;
  for (std::size_t m = 1; m <= layers(); ++m) n += dims_[m] * dims_[m - 1] + dims_[m];
  return n;
}

std::string WeightSpaceSpec::to_string() const {
  std::string s;
  for (std::size_t i = 0; i < dims_.size(); ++i) {
    if (i) s += ',';
    s += std::to_string(dims_[i]);
  }
  return s;
}

WeightSpaceVector::WeightSpaceVector(WeightSpaceSpec spec, std::size_t channels)
    : spec_(std::move(spec)), channels_(channels) {
  if (channels_ == 0) throw std::invalid_argument("channel count must be >= 1");
  for (std::size_t m = 1; m <= spec_.layers(); ++m) {
    weights_.emplace_back(Shape{channels_, spec_.dim(m), spec_.dim(m - 1)});
    biases_.emplace_back(Shape{channels_, spec_.dim(m)});
  }
}

GroupElement::GroupElement(std::vector<std::vector<std::size_t>> perms) : perms_(std::move(perms)) {
  for (std::size_t k = 0; k < perms_.size(); ++k) {
    std::vector<char> seen(perms_[k].size(), 0);
    for (auto v : perms_[k]) {
      if (v >= seen.size() || seen[v])
        throw std::invalid_argument("tau_" + std::to_string(k + 1) + " is not a permutation");
      seen[v] = 1;
    }
  }
}

GroupElement GroupElement::identity(const WeightSpaceSpec& spec) {
  std::vector<std::vector<std::size_t>> perms;
  for (std::size_t m = 1; m < spec.layers(); ++m) {
    std::vector<std::size_t> p(spec.dim(m));
    for (std::size_t i = 0; i < p.size(); ++i) p[i] = i;
    perms.push_back(std::move(p));
  }
  return GroupElement(std::move(perms));
}

std::span<const std::size_t> GroupElement::perm(std::size_t layer_index) const {
  if (layer_index == 0 || layer_index > perms_.size()) return {};
  return perms_[layer_index - 1];
}

bool GroupElement::matches(const WeightSpaceSpec& spec) const {
  if (perms_.size() + 1 != spec.layers()) return false;
  for (std::size_t m = 1; m < spec.layers(); ++m)
    if (perms_[m - 1].size() != spec.dim(m)) return false;
  return true;
}

GroupElement GroupElement::inverse() const {
  auto out = perms_;
  for (std::size_t k = 0; k < perms_.size(); ++k)
    for (std::size_t i = 0; i < perms_[k].size(); ++i) out[k][perms_[k][i]] = i;
  GroupElement g;
  g.perms_ = std::move(out);
  return g;
}

GroupElement compose(const GroupElement& g, const GroupElement& h) {
  if (g.perms_.size() != h.perms_.size()) throw std::invalid_argument("composing elements of different groups");
  auto out = h.perms_;
  for (std::size_t k = 0; k < out.size(); ++k) {
    if (g.perms_[k].size() != h.perms_[k].size())
      throw std::invalid_argument("composing elements of different groups");
    for (std::size_t i = 0; i < out[k].size(); ++i) out[k][i] = g.perms_[k][h.perms_[k][i]];
  }
  GroupElement r;
  r.perms_ = std::move(out);
  return r;
}

namespace {

void require_match(const WeightSpaceSpec& spec, const GroupElement& g) {
  if (!g.matches(spec)) throw std::invalid_argument("group element does not match spec " + spec.to_string());
}

}  // namespace

template <typename T>
Tensor<T> act_on_subspace(const WeightSpaceSpec& spec, const GroupElement& g, SubspaceId id, const Tensor<T>& x) {
  require_match(spec, g);
  const auto axes = spec.axes(id);
  const auto sub = spec.shape(id);
  const auto& xs = x.shape();
  if (xs.size() < sub.size() || !std::equal(sub.begin(), sub.end(), xs.end() - sub.size()))
    throw ShapeError("tensor " + shape_to_string(xs) + " does not end with " + id.name() + " shape " +
                     shape_to_string(sub));
  const std::size_t inner = shape_size(sub);
  const std::size_t outer = x.size() / inner;

  // image of each in-block offset
  std::vector<std::size_t> image(inner);
  if (axes.size() == 2) {
    auto rows = g.perm(axes[0]);
    auto cols = g.perm(axes[1]);
    const std::size_t R = sub[0], C = sub[1];
    for (std::size_t i = 0; i < R; ++i)
      for (std::size_t j = 0; j < C; ++j)
        image[i * C + j] = (rows.empty() ? i : rows[i]) * C + (cols.empty() ? j : cols[j]);
  } else {
    auto p = g.perm(axes[0]);
    for (std::size_t i = 0; i < inner; ++i) image[i] = p.empty() ? i : p[i];
  }

  Tensor<T> out(xs);
  auto src = x.data();
  auto dst = out.data();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t k = 0; k < inner; ++k) dst[o * inner + image[k]] = src[o * inner + k];
  return out;
}

template Tensor<float> act_on_subspace(const WeightSpaceSpec&, const GroupElement&, SubspaceId, const Tensor<float>&);
template Tensor<double> act_on_subspace(const WeightSpaceSpec&, const GroupElement&, SubspaceId, const Tensor<double>&);

WeightSpaceVector apply_action(const GroupElement& g, const WeightSpaceVector& v) {
  const auto& spec = v.spec();
  require_match(spec, g);
  WeightSpaceVector out(spec, v.channels());
  for (auto id : spec.subspaces()) out.part(id) = act_on_subspace(spec, g, id, v.part(id));
  return out;
}

Tensor<double> flatten(const WeightSpaceVector& v) {
  std::vector<double> flat;
  flat.reserve(v.channels() * v.spec().flat_dimension());
  for (auto id : v.spec().subspaces()) {
    auto d = v.part(id).data();
    flat.insert(flat.end(), d.begin(), d.end());
  }
  const auto n = flat.size();
  return Tensor<double>(Shape{n}, std::move(flat));
}

WeightSpaceVector unflatten(const WeightSpaceSpec& spec, std::size_t channels, std::span<const double> flat) {
  if (flat.size() != channels * spec.flat_dimension())
    throw ShapeError("flat vector of length " + std::to_string(flat.size()) + " does not match " +
                     std::to_string(channels) + " x " + std::to_string(spec.flat_dimension()));
  WeightSpaceVector v(spec, channels);
  std::size_t off = 0;
  for (auto id : spec.subspaces()) {
    auto d = v.part(id).data();
    std::copy(flat.begin() + off, flat.begin() + off + d.size(), d.begin());
    off += d.size();
  }
  return v;
}

NormalizationStats compute_normalization(std::span<const std::vector<double>> rows, double floor) {
  if (rows.empty()) throw std::invalid_argument("normalization needs at least one row");
  const std::size_t n = rows.front().size();
  NormalizationStats s{std::vector<double>(n, 0.0), std::vector<double>(n, 0.0)};
  for (const auto& r : rows) {
    if (r.size() != n) throw ShapeError("rows of unequal length in normalization");
    for (std::size_t i = 0; i < n; ++i) s.mean[i] += r[i];
  }
  const double count = static_cast<double>(rows.size());
  for (auto& m : s.mean) m /= count;
  for (const auto& r : rows)
    for (std::size_t i = 0; i < n; ++i) {
      const double d = r[i] - s.mean[i];
      s.stddev[i] += d * d;
    }
  for (auto& sd : s.stddev) sd = std::max(std::sqrt(sd / count), floor);
  return s;
}

namespace {

void check_stats(std::span<const double> flat, const NormalizationStats& stats) {
  if (stats.mean.size() != flat.size() || stats.stddev.size() != flat.size())
    throw ShapeError("normalization stats length " + std::to_string(stats.mean.size()) + " vs vector length " +
                     std::to_string(flat.size()));
  for (std::size_t i = 0; i < stats.stddev.size(); ++i)
    if (!(stats.stddev[i] > 0.0))
      throw std::domain_error("non-positive std at coordinate " + std::to_string(i) + " (no flooring applied)");
}

}  // namespace

std::vector<double> normalize(std::span<const double> flat, const NormalizationStats& stats) {
  check_stats(flat, stats);
  std::vector<double> out(flat.size());
  for (std::size_t i = 0; i < flat.size(); ++i) out[i] = (flat[i] - stats.mean[i]) / stats.stddev[i];
  return out;
}

std::vector<double> denormalize(std::span<const double> flat, const NormalizationStats& stats) {
  check_stats(flat, stats);
  std::vector<double> out(flat.size());
  for (std::size_t i = 0; i < flat.size(); ++i) out[i] = flat[i] * stats.stddev[i] + stats.mean[i];
  return out;
}

}  // namespace dws
