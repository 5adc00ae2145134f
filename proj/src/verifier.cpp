#include "dws/verifier.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "dws/exact_rank.hpp"

namespace dws {

namespace {

Tensor<double> random_tensor(Shape s, Rng& rng) {
  Tensor<double> t(std::move(s));
  for (auto& v : t.data()) v = normal01(rng);
  return t;
}

Bindings<double> random_params(const std::vector<ParamSpec>& specs, Rng& rng) {
  Bindings<double> b;
  for (const auto& p : specs) b.insert_or_assign(p.name, random_tensor(p.shape, rng));
  return b;
}

double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

Shape batch_shape(std::size_t batch, std::size_t f, const Shape& sub) {
  Shape s{batch, f};
  s.insert(s.end(), sub.begin(), sub.end());
  return s;
}

}  // namespace

double block_equivariance_residual(const WeightSpaceSpec& spec, const BlockLayer& block, std::size_t trials,
                                   Rng& rng) {
  if (trials == 0) throw std::invalid_argument("trials must be >= 1");
  const auto& p = block.plan();
  double worst = 0.0;
  for (std::size_t t = 0; t < trials; ++t) {
    auto params = random_params(block.parameters(), rng);
    auto x = random_tensor(batch_shape(2, block.in_channels(), p.from_shape), rng);
    auto g = sample_group_element(spec, rng);
    auto lhs = block_forward(block, params, act_on_subspace(spec, g, p.from, x));
    auto rhs = act_on_subspace(spec, g, p.to, block_forward(block, params, x));
    worst = std::max(worst, max_abs_diff(lhs.data(), rhs.data()));
  }
  return worst;
}

double map_equivariance_residual(const WeightSpaceSpec& spec, std::size_t channels,
                                 const std::function<WeightSpaceVector(const WeightSpaceVector&)>& map,
                                 std::size_t trials, Rng& rng) {
  if (trials == 0) throw std::invalid_argument("trials must be >= 1");
  double worst = 0.0;
  for (std::size_t t = 0; t < trials; ++t) {
    WeightSpaceVector v(spec, channels);
    for (auto id : spec.subspaces())
      for (auto& x : v.part(id).data()) x = normal01(rng);
    auto g = sample_group_element(spec, rng);
    auto lhs = flatten(map(apply_action(g, v)));
    auto rhs = flatten(apply_action(g, map(v)));
    worst = std::max(worst, max_abs_diff(lhs.data(), rhs.data()));
  }
  return worst;
}

double layer_equivariance_residual(const DWSLayer& layer, std::size_t trials, Rng& rng) {
  if (!(layer.in_spec() == layer.out_spec()))
    throw std::invalid_argument("group action on differing input/output specs is not checked here");
  double worst = 0.0;
  for (std::size_t t = 0; t < trials; ++t) {
    auto params = random_params(layer.parameters(), rng);
    auto map = [&](const WeightSpaceVector& v) { return dws_forward(layer, params, v); };
    worst = std::max(worst, map_equivariance_residual(layer.in_spec(), layer.in_channels(), map, 1, rng));
  }
  return worst;
}

std::uint64_t TraceDimensions::total() const {
  std::uint64_t n = 0;
  for (const auto& row : pair)
    for (auto v : row) n += v;
  return n;
}

TraceDimensions trace_dimensions(const WeightSpaceSpec& spec) {
  const auto subs = spec.subspaces();
  const std::size_t S = subs.size();
  GroupEnumerator it(spec);
  std::vector<std::vector<std::uint64_t>> sums(S, std::vector<std::uint64_t>(S, 0));
  std::uint64_t inv = 0;
  std::vector<std::uint64_t> tr(S);
  GroupElement g;
  while (it.next(g)) {
    for (std::size_t s = 0; s < S; ++s) {
      tr[s] = representation_matrix(spec, g, subs[s]).trace();
      inv += tr[s];
    }
    for (std::size_t a = 0; a < S; ++a)
      for (std::size_t b = 0; b < S; ++b) sums[a][b] += tr[a] * tr[b];
  }
  TraceDimensions out;
  out.group_order = it.order();
  auto divide = [&](std::uint64_t v) {
    if (v % out.group_order != 0) throw std::logic_error("character average is not an integer");
    return v / out.group_order;
  };
  out.pair.assign(S, std::vector<std::uint64_t>(S, 0));
  for (std::size_t a = 0; a < S; ++a)
    for (std::size_t b = 0; b < S; ++b) out.pair[a][b] = divide(sums[a][b]);
  out.invariant = divide(inv);
  return out;
}

std::uint64_t dim_by_trace(const WeightSpaceSpec& spec, SubspaceId from, SubspaceId to) {
  GroupEnumerator it(spec);
  std::uint64_t sum = 0;
  GroupElement g;
  while (it.next(g))
    sum += representation_matrix(spec, g, from).trace() * representation_matrix(spec, g, to).trace();
  if (sum % it.order() != 0) throw std::logic_error("character average is not an integer");
  return sum / it.order();
}

std::uint64_t invariant_dim_by_trace(const WeightSpaceSpec& spec) {
  // trivial output representation: tr = 1 for every g
  GroupEnumerator it(spec);
  std::uint64_t sum = 0;
  GroupElement g;
  while (it.next(g))
    for (auto id : spec.subspaces()) sum += representation_matrix(spec, g, id).trace();
  if (sum % it.order() != 0) throw std::logic_error("character average is not an integer");
  return sum / it.order();
}

TraceEstimate estimate_trace_dimensions(const WeightSpaceSpec& spec, std::size_t samples, Rng& rng) {
  if (samples == 0) throw std::invalid_argument("Monte Carlo mode needs at least one sample");
  const auto subs = spec.subspaces();
  const std::size_t S = subs.size();
  TraceEstimate out{std::vector<std::vector<double>>(S, std::vector<double>(S, 0.0)), 0.0};
  std::vector<double> tr(S);
  for (std::size_t n = 0; n < samples; ++n) {
    auto g = sample_group_element(spec, rng);
    for (std::size_t s = 0; s < S; ++s) {
      tr[s] = static_cast<double>(representation_matrix(spec, g, subs[s]).trace());
      out.invariant += tr[s];
    }
    for (std::size_t a = 0; a < S; ++a)
      for (std::size_t b = 0; b < S; ++b) out.pair[a][b] += tr[a] * tr[b];
  }
  const double k = static_cast<double>(samples);
  for (auto& row : out.pair)
    for (auto& v : row) v /= k;
  out.invariant /= k;
  return out;
}

std::size_t dim_by_nullspace(const WeightSpaceSpec& spec, SubspaceId from, SubspaceId to) {
  const std::size_t n_in = spec.size(from), n_out = spec.size(to);
  const std::size_t unknowns = n_in * n_out;
  if (unknowns > kNullspaceUnknownCap)
    throw std::length_error("null-space system for " + from.name() + "->" + to.name() + " has " +
                            std::to_string(unknowns) + " unknowns (cap " + std::to_string(kNullspaceUnknownCap) + ")");
  // Equivariance under a generating set implies equivariance under the
  // whole group: if L commutes with R(a) and R(b) it commutes with
  // R(a)R(b) = R(ab) and with R(a)^-1. Adjacent transpositions generate
  // every S_d, so they suffice.
  IntegerEliminator elim(unknowns);
  auto var = [&](std::size_t r, std::size_t c) { return static_cast<std::uint32_t>(r * n_in + c); };
  for (std::size_t m = 1; m < spec.layers(); ++m)
    for (std::size_t k = 0; k + 1 < spec.dim(m); ++k) {
      auto perms = GroupElement::identity(spec).perms();
      std::swap(perms[m - 1][k], perms[m - 1][k + 1]);
      GroupElement g(std::move(perms));
      const auto R = representation_matrix(spec, g, from);
      const auto Rp = representation_matrix(spec, g, to);
      std::vector<std::size_t> inv(n_out);
      for (std::size_t j = 0; j < n_out; ++j) inv[Rp.image[j]] = j;
      // (L R)_{rc} = L_{r, R(c)} and (R' L)_{rc} = L_{R'^-1(r), c}
      for (std::size_t r = 0; r < n_out; ++r)
        for (std::size_t c = 0; c < n_in; ++c) {
          const auto a = var(r, R.image[c]), b = var(inv[r], c);
          if (a != b) elim.add_row({{a, 1}, {b, -1}});
        }
    }
  return unknowns - elim.rank();
}

namespace {

// vectorized map of the f=1 block for one parameter setting, column = r * n_in + k
SparseRow block_matrix_row(const BlockLayer& block, const Bindings<double>& params, const Tensor<double>& eye,
                           std::size_t n_in, std::size_t n_out) {
  auto out = block_forward(block, params, eye);  // (n_in, 1, to...)
  SparseRow row;
  for (std::size_t k = 0; k < n_in; ++k)
    for (std::size_t r = 0; r < n_out; ++r) {
      const double v = out[k * n_out + r];
      const double iv = std::round(v);
      if (std::abs(v - iv) > 1e-9) throw std::logic_error("integer parameters produced a non-integer map");
      if (iv != 0.0) row.emplace_back(static_cast<std::uint32_t>(r * n_in + k), static_cast<std::int64_t>(iv));
    }
  return row;
}

struct BasisProbe {
  BlockLayer block;
  std::size_t n_in, n_out;
  Tensor<double> eye;
  Bindings<double> params;  // all zero
};

BasisProbe make_probe(const WeightSpaceSpec& spec, SubspaceId from, SubspaceId to) {
  BlockLayer block(plan_block(spec, from, to), 1, 1, PoolMode::Sum, "b");
  const std::size_t n_in = spec.size(from), n_out = spec.size(to);
  if (n_in * n_out > kNullspaceUnknownCap) throw std::length_error("basis check too large");
  Tensor<double> eye(batch_shape(n_in, 1, block.plan().from_shape));
  for (std::size_t k = 0; k < n_in; ++k) eye[k * n_in + k] = 1.0;
  Bindings<double> params;
  for (const auto& ps : block.parameters()) params.insert_or_assign(ps.name, Tensor<double>(ps.shape));
  return {std::move(block), n_in, n_out, std::move(eye), std::move(params)};
}

}  // namespace

std::size_t basis_rank(const WeightSpaceSpec& spec, SubspaceId from, SubspaceId to) {
  auto pr = make_probe(spec, from, to);
  IntegerEliminator elim(pr.n_in * pr.n_out);
  // one map per scalar parameter set to 1
  for (const auto& ps : pr.block.parameters())
    for (std::size_t i = 0; i < pr.params.at(ps.name).size(); ++i) {
      pr.params.at(ps.name)[i] = 1.0;
      elim.add_row(block_matrix_row(pr.block, pr.params, pr.eye, pr.n_in, pr.n_out));
      pr.params.at(ps.name)[i] = 0.0;
    }
  return elim.rank();
}

std::size_t sampled_basis_rank(const WeightSpaceSpec& spec, SubspaceId from, SubspaceId to, std::size_t draws,
                               Rng& rng) {
  auto pr = make_probe(spec, from, to);
  ModularEliminator elim(pr.n_in * pr.n_out);
  for (std::size_t d = 0; d < draws; ++d) {
    for (auto& [name, t] : pr.params)
      for (auto& v : t.data()) v = static_cast<double>(static_cast<std::int64_t>(uniform_index(rng, 19)) - 9);
    elim.add_row(block_matrix_row(pr.block, pr.params, pr.eye, pr.n_in, pr.n_out));
  }
  return elim.rank();
}

VerificationReport verify_tables(const WeightSpaceSpec& spec, const VerifyOptions& opt) {
  for (std::size_t m = 1; m < spec.layers(); ++m)
    if (spec.dim(m) < 2)
      throw std::invalid_argument("spec " + spec.to_string() + " is degenerate (set dim d_" + std::to_string(m) +
                                  " < 2); counts are compared only on non-degenerate specs");
  VerificationReport rep;
  rep.spec = spec;
  rep.tol = opt.tol;
  rep.mode = opt.exhaustive ? "exhaustive" : "mc";
  rep.group_order = group_order(spec);
  Rng rng(derive_seed(opt.seed, {0x7665726966ULL}));

  std::optional<TraceDimensions> exact;
  std::optional<TraceEstimate> est;
  if (opt.exhaustive)
    exact = trace_dimensions(spec);
  else
    est = estimate_trace_dimensions(spec, opt.mc_samples, rng);

  const auto subs = spec.subspaces();
  for (std::size_t t = 0; t < subs.size(); ++t)
    for (std::size_t s = 0; s < subs.size(); ++s) {
      PairRecord r;
      r.from = subs[s];
      r.to = subs[t];
      const auto plan = plan_block(spec, r.from, r.to);
      const auto cell = table_cell(spec, r.from, r.to);
      r.analytic = plan.parameter_count();
      r.table = cell.params;
      r.table_row = cell.table + " row " + cell.row;
      r.implementation = plan.describe();
      if (exact) r.trace_dim = exact->pair[t][s];
      if (est) r.trace_estimate = est->pair[t][s];
      if (spec.size(r.from) * spec.size(r.to) <= kNullspaceUnknownCap) {
        r.null_dim = dim_by_nullspace(spec, r.from, r.to);
        if (opt.basis) r.basis = sampled_basis_rank(spec, r.from, r.to, 2 * r.analytic, rng);
      }
      BlockLayer block(plan, 1, 1, PoolMode::Sum, "verify");
      r.residual = block_equivariance_residual(spec, block, opt.trials, rng);

      std::vector<std::string> why;
      if (r.analytic != r.table) why.push_back("rule count != table count");
      if (r.trace_dim && *r.trace_dim != r.analytic) why.push_back("trace dimension differs");
      if (r.null_dim && *r.null_dim != r.analytic) why.push_back("null-space dimension differs");
      if (r.basis && *r.basis != r.analytic) why.push_back("basis rank differs");
      if (!(r.residual <= opt.tol)) why.push_back("equivariance residual above tolerance");
      r.pass = why.empty();
      for (const auto& w : why) rep.failures.push_back(r.from.name() + "->" + r.to.name() + ": " + w);
      rep.total_analytic += r.analytic;
      rep.pairs.push_back(std::move(r));
    }

  rep.orbits = orbit_count(spec);
  rep.layer_params = rep.total_analytic + rep.orbits;
  if (exact) {
    rep.total_trace = exact->total();
    rep.invariant_dim = exact->invariant;
    if (*rep.total_trace != rep.total_analytic) rep.failures.push_back("sum over pairs != trace dimension of V->V");
    if (*rep.invariant_dim != rep.orbits) rep.failures.push_back("orbit count != invariant dimension");
  }
  if (est) rep.invariant_estimate = est->invariant;
  rep.pass = rep.failures.empty();
  return rep;
}

std::string format_report(const VerificationReport& rep) {
  std::ostringstream os;
  os << "dims " << rep.spec.to_string() << "  mode " << rep.mode;
  if (rep.group_order) os << "  |G| " << *rep.group_order;
  os << "  tol " << rep.tol << "\n";
  char line[256];
  std::snprintf(line, sizeof line, "%-9s %-14s %8s %8s %8s %8s %8s %11s  %s\n", "pair", "table", "rules", "cell",
                "trace", "null", "basis", "residual", "ok");
  os << line;
  for (const auto& r : rep.pairs) {
    auto opt = [](const auto& o) { return o ? std::to_string(*o) : std::string("-"); };
    std::string trace = r.trace_dim ? std::to_string(*r.trace_dim) : "-";
    if (!r.trace_dim && r.trace_estimate) {
      char b[32];
      std::snprintf(b, sizeof b, "~%.2f", *r.trace_estimate);
      trace = b;
    }
    std::snprintf(line, sizeof line, "%-9s %-14s %8zu %8zu %8s %8s %8s %11.3e  %s\n",
                  (r.from.name() + "->" + r.to.name()).c_str(), r.table_row.c_str(), r.analytic, r.table,
                  trace.c_str(), opt(r.null_dim).c_str(), opt(r.basis).c_str(), r.residual, r.pass ? "ok" : "FAIL");
    os << line;
  }
  std::size_t passed = 0;
  for (const auto& r : rep.pairs) passed += r.pass;
  os << "pairs passed " << passed << "/" << rep.pairs.size() << "\n";
  os << "sum of block counts " << rep.total_analytic;
  if (rep.total_trace) os << "  trace dim V->V " << *rep.total_trace;
  os << "\norbits " << rep.orbits;
  if (rep.invariant_dim) os << "  invariant dim " << *rep.invariant_dim;
  if (rep.invariant_estimate) os << "  invariant dim ~" << *rep.invariant_estimate;
  os << "\nlayer parameters (f=f'=1) " << rep.layer_params << "\n";
  for (const auto& f : rep.failures) os << "failure: " << f << "\n";
  os << (rep.pass ? "PASS" : "FAIL") << "\n";
  return os.str();
}

nlohmann::json report_to_json(const VerificationReport& rep) {
  nlohmann::json pairs = nlohmann::json::array();
  for (const auto& r : rep.pairs) {
    nlohmann::json j{{"from", r.from.name()},          {"to", r.to.name()},     {"table_row", r.table_row},
                     {"implementation", r.implementation}, {"analytic", r.analytic}, {"table", r.table},
                     {"residual", r.residual},         {"pass", r.pass}};
    j["trace_dim"] = r.trace_dim ? nlohmann::json(*r.trace_dim) : nlohmann::json();
    j["null_dim"] = r.null_dim ? nlohmann::json(*r.null_dim) : nlohmann::json();
    j["basis_rank"] = r.basis ? nlohmann::json(*r.basis) : nlohmann::json();
    if (r.trace_estimate) j["trace_estimate"] = *r.trace_estimate;
    pairs.push_back(std::move(j));
  }
  nlohmann::json out{{"dims", rep.spec.dims()},
                     {"mode", rep.mode},
                     {"tol", rep.tol},
                     {"pairs", std::move(pairs)},
                     {"total_analytic", rep.total_analytic},
                     {"orbits", rep.orbits},
                     {"layer_params", rep.layer_params},
                     {"failures", rep.failures},
                     {"pass", rep.pass}};
  out["group_order"] = rep.group_order ? nlohmann::json(*rep.group_order) : nlohmann::json();
  out["total_trace"] = rep.total_trace ? nlohmann::json(*rep.total_trace) : nlohmann::json();
  out["invariant_dim"] = rep.invariant_dim ? nlohmann::json(*rep.invariant_dim) : nlohmann::json();
  if (rep.invariant_estimate) out["invariant_estimate"] = *rep.invariant_estimate;
  return out;
}

}  // namespace dws
