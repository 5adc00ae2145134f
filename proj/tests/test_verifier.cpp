#include <doctest.h>

#include "dws/exact_rank.hpp"
#include "dws/verifier.hpp"

using namespace dws;

namespace {

const WeightSpaceSpec kSpec({2, 3, 3, 2});

}  // namespace

TEST_CASE("exact rank") {
  CHECK(integer_rank({}) == 0);
  CHECK(integer_rank({{0, 0, 0}}) == 0);
  CHECK(integer_rank({{1, 2, 3}, {2, 4, 6}, {-1, -2, -3}}) == 1);
  CHECK(integer_rank({{1, 2, 3}, {4, 5, 6}, {7, 8, 9}}) == 2);
  CHECK(integer_rank({{2, 0, 0}, {0, 3, 0}, {0, 0, 5}}) == 3);
  CHECK(integer_rank({{6, 4}, {9, 6}}) == 1);
  // Hilbert-like integer matrix, full rank
  std::vector<std::vector<std::int64_t>> h(6, std::vector<std::int64_t>(6));
  for (int i = 0; i < 6; ++i)
    for (int j = 0; j < 6; ++j) h[i][j] = 27720 / (i + j + 1);
  CHECK(integer_rank(h) == 6);

  IntegerEliminator e(4);
  CHECK(e.add_row({{3, 1}, {0, 2}}));
  CHECK_FALSE(e.add_row({{0, 4}, {3, 2}}));
  CHECK(e.add_row({{0, 1}, {0, 1}, {1, 5}}));  // duplicate columns merge
  CHECK_FALSE(e.add_row({{2, 7}, {2, -7}}));
  CHECK(e.rank() == 2);
  CHECK_THROWS_AS(e.add_row({{4, 1}}), std::out_of_range);

  ModularEliminator m(3);
  CHECK(m.add_row({{0, 1}, {1, 2}, {2, 3}}));
  CHECK(m.add_row({{0, 4}, {1, 5}, {2, 6}}));
  CHECK_FALSE(m.add_row({{0, 7}, {1, 8}, {2, 9}}));
  CHECK_FALSE(m.add_row({{0, -2}, {1, -4}, {2, -6}}));
  CHECK(m.rank() == 2);
  // rank mod p agrees with the integer eliminator on random small matrices
  Rng rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t rows = 1 + uniform_index(rng, 6), cols = 1 + uniform_index(rng, 6);
    std::vector<std::vector<std::int64_t>> a(rows, std::vector<std::int64_t>(cols));
    ModularEliminator me(cols);
    for (auto& r : a) {
      SparseRow sr;
      for (std::size_t c = 0; c < cols; ++c) {
        r[c] = static_cast<std::int64_t>(uniform_index(rng, 3)) - 1;
        sr.emplace_back(static_cast<std::uint32_t>(c), r[c]);
      }
      me.add_row(sr);
    }
    CHECK(me.rank() == integer_rank(a));
  }
}

TEST_CASE("trace dimension examples") {
  CHECK(dim_by_trace(kSpec, SubspaceId::weight(2), SubspaceId::weight(2)) == 4);
  CHECK(dim_by_trace(kSpec, SubspaceId::bias(3), SubspaceId::bias(3)) == 4);
  CHECK(dim_by_trace(kSpec, SubspaceId::bias(1), SubspaceId::bias(2)) == 1);
  CHECK(dim_by_trace(kSpec, SubspaceId::weight(1), SubspaceId::weight(1)) == 8);

  auto all = trace_dimensions(kSpec);
  CHECK(all.group_order == 36);
  const auto subs = kSpec.subspaces();
  for (std::size_t t = 0; t < subs.size(); ++t)
    for (std::size_t s = 0; s < subs.size(); ++s) CHECK(all.pair[t][s] == dim_by_trace(kSpec, subs[s], subs[t]));
  CHECK(all.invariant == invariant_dim_by_trace(kSpec));
  CHECK(all.invariant == 9);

  CHECK_THROWS_AS(trace_dimensions(WeightSpaceSpec({1, 10, 10, 1})), std::length_error);
}

TEST_CASE("null space agrees with the trace formula on every pair") {
  const auto subs = kSpec.subspaces();
  auto all = trace_dimensions(kSpec);
  for (std::size_t t = 0; t < subs.size(); ++t)
    for (std::size_t s = 0; s < subs.size(); ++s) {
      CAPTURE(subs[s].name() + "->" + subs[t].name());
      CHECK(dim_by_nullspace(kSpec, subs[s], subs[t]) == all.pair[t][s]);
    }
  CHECK(dim_by_nullspace(kSpec, SubspaceId::weight(1), SubspaceId::weight(1)) == 8);
}

TEST_CASE("trivial group leaves the full space") {
  WeightSpaceSpec ones({2, 1, 1, 3});
  for (auto from : ones.subspaces())
    for (auto to : ones.subspaces()) {
      const auto full = ones.size(from) * ones.size(to);
      CHECK(dim_by_nullspace(ones, from, to) == full);
      CHECK(dim_by_trace(ones, from, to) == full);
    }
}

TEST_CASE("null space size guard") {
  WeightSpaceSpec big({20, 10, 20});
  CHECK_THROWS_AS(dim_by_nullspace(big, SubspaceId::weight(1), SubspaceId::weight(2)), std::length_error);
}

TEST_CASE("analytic blocks are a basis") {
  Rng rng(4);
  const auto subs = kSpec.subspaces();
  auto all = trace_dimensions(kSpec);
  for (std::size_t t = 0; t < subs.size(); ++t)
    for (std::size_t s = 0; s < subs.size(); ++s) {
      const auto count = plan_block(kSpec, subs[s], subs[t]).parameter_count();
      CHECK(basis_rank(kSpec, subs[s], subs[t]) == count);
      CHECK(sampled_basis_rank(kSpec, subs[s], subs[t], 2 * count, rng) == count);
      CHECK(count == all.pair[t][s]);
    }
}

TEST_CASE("equivariance residuals") {
  Rng rng(6);
  SUBCASE("identity map") {
    auto id = [](const WeightSpaceVector& v) { return v; };
    CHECK(map_equivariance_residual(kSpec, 2, id, 20, rng) == 0.0);
  }
  SUBCASE("corrupted block") {
    // dense map over the whole W1 where a DeepSets belongs
    auto plan = plan_block(kSpec, SubspaceId::weight(1), SubspaceId::weight(1));
    plan.feature_in = {1, 0};
    plan.feature_out = {1, 0};
    plan.shared.clear();
    plan.in_features = plan.out_features = 6;
    plan.terms = 1;
    plan.steps = {step::Dense{6, 6}};
    BlockLayer bad(plan, 1, 1, PoolMode::Sum, "bad");
    CHECK(block_equivariance_residual(kSpec, bad, 20, rng) > 1e-3);
  }
  SUBCASE("zero trials is an error") {
    BlockLayer b(plan_block(kSpec, SubspaceId::bias(1), SubspaceId::bias(1)), 1, 1, PoolMode::Sum, "b");
    CHECK_THROWS_AS(block_equivariance_residual(kSpec, b, 0, rng), std::invalid_argument);
  }
}

TEST_CASE("verify tables") {
  SUBCASE("2,3,3,2") {
    auto rep = verify_tables(kSpec);
    CHECK(rep.pass);
    CHECK(rep.pairs.size() == 36);
    for (const auto& r : rep.pairs) CHECK(r.pass);
    CHECK(rep.total_trace == rep.total_analytic);
    CHECK(rep.invariant_dim == 9);
    CHECK(rep.layer_params == rep.total_analytic + 9);
    auto j = report_to_json(rep);
    CHECK(j["pass"] == true);
    CHECK(j["pairs"].size() == 36);
    CHECK(format_report(rep).find("pairs passed 36/36") != std::string::npos);
  }
  SUBCASE("M=2 corner case") {
    auto rep = verify_tables(WeightSpaceSpec({1, 2, 1}));
    CHECK(rep.pass);
    CHECK(rep.pairs.size() == 16);
  }
  SUBCASE("M=2 with wider free dims") {
    auto rep = verify_tables(WeightSpaceSpec({2, 3, 2}));
    CHECK(rep.pass);
  }
  SUBCASE("M=4") {
    auto rep = verify_tables(WeightSpaceSpec({3, 4, 5, 4, 3}));
    CHECK(rep.pass);
    CHECK(rep.pairs.size() == 64);
    CHECK(rep.group_order == 69120);
  }
  SUBCASE("degenerate spec rejected") {
    CHECK_THROWS_AS(verify_tables(WeightSpaceSpec({2, 1, 3, 2})), std::invalid_argument);
  }
  SUBCASE("monte carlo mode") {
    VerifyOptions opt;
    opt.exhaustive = false;
    opt.mc_samples = 2000;
    auto rep = verify_tables(kSpec, opt);
    CHECK(rep.mode == "mc");
    CHECK_FALSE(rep.total_trace.has_value());
    REQUIRE(rep.invariant_estimate.has_value());
    CHECK(*rep.invariant_estimate == doctest::Approx(9.0).epsilon(0.1));
    CHECK(rep.pass);
  }
}
