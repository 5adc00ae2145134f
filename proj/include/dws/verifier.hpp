#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "dws/layers.hpp"
#include "dws/symmetry.hpp"

namespace dws {

/// max over trials of |block(g.x) - g.block(x)|_inf with fresh parameters,
/// inputs and group elements per trial.
double block_equivariance_residual(const WeightSpaceSpec& spec, const BlockLayer& block, std::size_t trials, Rng& rng);
double layer_equivariance_residual(const DWSLayer& layer, std::size_t trials, Rng& rng);
/// Any map on weight vectors with `channels` input channels.
double map_equivariance_residual(const WeightSpaceSpec& spec, std::size_t channels,
                                 const std::function<WeightSpaceVector(const WeightSpaceVector&)>& map,
                                 std::size_t trials, Rng& rng);

/// (1/|G|) sum_g tr(rho_i(g)) tr(rho_j(g)) for every ordered pair of
/// sub-spaces, plus the invariant dimension (1/|G|) sum_g tr(rho(g)).
struct TraceDimensions {
  std::uint64_t group_order = 0;
  std::vector<std::vector<std::uint64_t>> pair;  // [to][from], canonical order
  std::uint64_t invariant = 0;
  std::uint64_t total() const;
};
TraceDimensions trace_dimensions(const WeightSpaceSpec& spec);
std::uint64_t dim_by_trace(const WeightSpaceSpec& spec, SubspaceId from, SubspaceId to);
std::uint64_t invariant_dim_by_trace(const WeightSpaceSpec& spec);

/// Monte Carlo estimate of the same averages over `samples` random elements.
struct TraceEstimate {
  std::vector<std::vector<double>> pair;
  double invariant = 0.0;
};
TraceEstimate estimate_trace_dimensions(const WeightSpaceSpec& spec, std::size_t samples, Rng& rng);

inline constexpr std::size_t kNullspaceUnknownCap = 10'000;

/// Nullity of the stacked constraints L R(g) - R'(g) L = 0 over the
/// adjacent transpositions of every S_{d_m}, by exact integer elimination.
std::size_t dim_by_nullspace(const WeightSpaceSpec& spec, SubspaceId from, SubspaceId to);

/// Rank of the vectorized maps of the analytic block (f = f' = 1, sum
/// pooling) with one scalar parameter set to 1 and the rest 0. Equals the
/// parameter count exactly when the block family is linearly independent.
std::size_t basis_rank(const WeightSpaceSpec& spec, SubspaceId from, SubspaceId to);
/// Rank of the maps from `draws` random integer parameter settings in
/// [-9, 9], computed mod 2^61 - 1. A result equal to the parameter count is
/// exact: it bounds the rational rank from below, and the count bounds it
/// from above.
std::size_t sampled_basis_rank(const WeightSpaceSpec& spec, SubspaceId from, SubspaceId to, std::size_t draws,
                               Rng& rng);

struct VerifyOptions {
  bool exhaustive = true;
  std::size_t mc_samples = 0;  // used when !exhaustive
  double tol = 1e-9;
  std::size_t trials = 20;
  std::uint64_t seed = 0;
  bool basis = true;
};

struct PairRecord {
  SubspaceId from, to;
  std::string table_row;
  std::string implementation;
  std::size_t analytic = 0;  // rule engine
  std::size_t table = 0;     // literal table formula
  std::optional<std::uint64_t> trace_dim;
  std::optional<double> trace_estimate;
  std::optional<std::size_t> null_dim;
  std::optional<std::size_t> basis;
  double residual = 0.0;
  bool pass = false;
};

struct VerificationReport {
  WeightSpaceSpec spec;
  std::string mode;
  std::optional<std::uint64_t> group_order;
  double tol = 0.0;
  std::vector<PairRecord> pairs;
  std::size_t total_analytic = 0;
  std::optional<std::uint64_t> total_trace;
  std::size_t orbits = 0;
  std::optional<std::uint64_t> invariant_dim;
  std::optional<double> invariant_estimate;
  std::size_t layer_params = 0;  // f = f' = 1: total_analytic + orbits
  bool pass = false;
  std::vector<std::string> failures;
};

/// Throws std::invalid_argument for degenerate specs (a set dim below 2).
VerificationReport verify_tables(const WeightSpaceSpec& spec, const VerifyOptions& options = {});
std::string format_report(const VerificationReport& report);
nlohmann::json report_to_json(const VerificationReport& report);

}  // namespace dws
