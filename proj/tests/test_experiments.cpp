#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <limits>
#include <set>
#include <sstream>

#include "dws/experiments.hpp"
#include "dws/symmetry.hpp"
#include "dws/verifier.hpp"

using namespace dws;

namespace {

// Random networks labelled by their own output at x = 0.5, so labels are
// invariant under the group action.
Dataset toy_dataset(const WeightSpaceSpec& spec, std::size_t n_train, std::size_t n_val, std::size_t n_test,
                    std::uint64_t seed) {
  Rng rng(seed);
  Dataset d;
  d.manifest.spec = spec;
  const std::size_t n = n_train + n_val + n_test;
  std::vector<std::vector<double>> train_rows;
  for (std::size_t i = 0; i < n; ++i) {
    WeightSpaceVector v(spec, 1);
    for (auto id : spec.subspaces())
      for (auto& x : v.part(id).data()) x = normal01(rng) / std::sqrt(double(spec.dim(id.layer - 1)));
    const double y = mlp_forward(v, Tensor<double>(Shape{1}, {0.5}), ActivationKind::Relu)[0];
    d.records.push_back({v, y, i});
    if (i < n_train) {
      d.manifest.splits.train.push_back(i);
      auto f = flatten(v);
      train_rows.emplace_back(f.data().begin(), f.data().end());
    } else if (i < n_train + n_val) {
      d.manifest.splits.val.push_back(i);
    } else {
      d.manifest.splits.test.push_back(i);
    }
  }
  d.manifest.normalization = compute_normalization(train_rows);
  return d;
}

ExperimentConfig small_config() {
  ExperimentConfig c;
  c.epochs = 3;
  c.batch_size = 8;
  c.lr_grid = {1e-3, 1e-2};
  c.channels = {4, 4};
  c.head_dim = 8;
  c.readout = {8};
  return c;
}

}  // namespace

TEST_CASE("model kinds and config parsing") {
  CHECK(parse_model_kind("dwsnet") == ModelKind::Dws);
  CHECK(parse_model_kind("mlp-perm-aug") == ModelKind::MlpPermAug);
  CHECK_THROWS(parse_model_kind("cnn"));
  CHECK(parse_precision("f32") == Precision::F32);
  CHECK_THROWS(parse_precision("f16"));

  auto c = ExperimentConfig::from_key_values(parse_key_values(
      "epochs = 7\nlr_grid = 1e-2, 1e-3\npool = sum\nreadout = none\nmodel = mlp-perm-aug\naugment = false\n"));
  CHECK(c.epochs == 7);
  CHECK(c.lr_grid == std::vector<double>{1e-2, 1e-3});
  CHECK(c.pool == PoolMode::Sum);
  CHECK(c.readout.empty());
  CHECK(c.augmenting());
  CHECK(c.batch_size == 32);
  CHECK(c.weight_decay == 5e-4);
  CHECK(c.to_json().at("augment") == true);
  CHECK(c.mlp_init == InitMode::ZeroBiasXavier);
  CHECK(ExperimentConfig::from_key_values({{"mlp_init", "xavier-scaled"}}).mlp_init == InitMode::XavierScaled);

  CHECK_THROWS(ExperimentConfig::from_key_values({{"learning_rate", "1"}}));
  CHECK_THROWS(ExperimentConfig::from_key_values({{"batch_size", "0"}}));
  CHECK_THROWS(ExperimentConfig::from_key_values({{"lr_grid", ""}}));
  CHECK_THROWS(ExperimentConfig::from_key_values({{"lr_grid", "1e-3,-1"}}));
  CHECK_THROWS(ExperimentConfig::from_key_values({{"early_stopping", "train_loss"}}));
}

TEST_CASE("dwsnet parameter count is the analytic sum") {
  // independent count from character sums: each layer has f_out * f_in maps per
  // equivariant dimension plus f_out orbit biases
  for (const auto& spec : {WeightSpaceSpec({2, 3, 3, 2}), WeightSpaceSpec({1, 3, 3, 1}), WeightSpaceSpec({1, 2, 1})}) {
    const auto t = trace_dimensions(spec);
    ExperimentConfig c = small_config();
    c.channels = {8, 8};
    c.head_dim = 32;
    c.readout = {32};
    const std::size_t O = t.invariant;
    const std::size_t want = (t.total() * 1 * 8 + O * 8) + (t.total() * 8 * 8 + O * 8) + (O * 8 * 32 + 32) +
                             (32 * 32 + 32) + (32 + 1);
    CHECK(build_model(ModelKind::Dws, spec, c)->parameter_count() == want);
  }
}

TEST_CASE("capacity matched mlp") {
  const WeightSpaceSpec desk({1, 16, 16, 1});
  ExperimentConfig c;
  const auto dws = build_model(ModelKind::Dws, desk, c);
  const auto mlp = build_model(ModelKind::Mlp, desk, c);
  const auto aug = build_model(ModelKind::MlpPermAug, desk, c);
  const double target = double(dws->parameter_count());
  CHECK(std::abs(double(mlp->parameter_count()) - target) / target <= 0.1);
  CHECK(mlp->to_json() == aug->to_json());
  const auto& hidden = dynamic_cast<const FlatMLP&>(*mlp).hidden();
  CHECK(hidden.size() == 4);

  // brute force over widths
  auto count = [](std::size_t d, std::size_t h) { return d * h + h + 3 * (h * h + h) + h + 1; };
  std::size_t best = 1;
  for (std::size_t h = 1; h < 2000; ++h)
    if (std::abs(double(count(321, h)) - target) < std::abs(double(count(321, best)) - target)) best = h;
  CHECK(hidden[0] == best);
  CHECK(mlp->parameter_count() == count(321, best));

  CHECK(match_mlp_hidden(10, 1, 13, 0.0) == std::vector<std::size_t>{1});
  try {
    match_mlp_hidden(10, 1, 5, 0.1);
    FAIL("expected an impossible match");
  } catch (const std::runtime_error& e) {
    CHECK(std::string(e.what()).find("13") != std::string::npos);
  }
}

TEST_CASE("prepare data") {
  const WeightSpaceSpec spec({1, 4, 4, 1});
  auto d = toy_dataset(spec, 20, 6, 6, 1);
  auto all = prepare_data(d, 0, 3);
  CHECK(all.train_x.size() == 20);
  CHECK(all.val_x.size() == 6);
  CHECK(all.test_y.size() == 6);
  CHECK(all.train_x[0].size() == spec.flat_dimension());
  // normalized with train statistics: zero mean per coordinate
  for (std::size_t k = 0; k < spec.flat_dimension(); ++k) {
    double s = 0;
    for (const auto& r : all.train_x) s += r[k];
    CHECK(std::abs(s / 20) < 1e-12);
  }
  auto sub = prepare_data(d, 7, 3);
  CHECK(sub.train_x.size() == 7);
  CHECK(sub.train_index == prepare_data(d, 7, 3).train_index);
  std::set<std::size_t> train(d.manifest.splits.train.begin(), d.manifest.splits.train.end());
  for (auto i : sub.train_index) CHECK(train.count(i) == 1);
  CHECK_THROWS(prepare_data(d, 21, 0));
}

TEST_CASE("training runs") {
  const WeightSpaceSpec spec({1, 4, 4, 1});
  auto d = toy_dataset(spec, 24, 8, 8, 2);
  auto data = prepare_data(d, 0, 0);
  auto c = small_config();

  SUBCASE("zero epochs evaluates the untrained model") {
    c.epochs = 0;
    auto r = train_model(build_model(ModelKind::Dws, spec, c), data, c, Precision::F64);
    for (const auto& run : r.report.runs) {
      CHECK(run.epochs.size() == 1);
      CHECK(run.best_epoch == 0);
    }
    // same init for every lr
    CHECK(r.report.runs[0].best_val_mse == r.report.runs[1].best_val_mse);
    auto untrained = prepare_data(d, 0, 0);
    auto pred = predict(*r.model, r.params, untrained.test_x, r.label_mean, r.label_std, Precision::F64);
    double mse = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) mse += (pred[i] - data.test_y[i]) * (pred[i] - data.test_y[i]);
    CHECK(r.report.test_mse == doctest::Approx(mse / double(pred.size())).epsilon(1e-14));
  }

  SUBCASE("deterministic") {
    for (auto kind : {ModelKind::Dws, ModelKind::MlpPermAug}) {
      c.kind = kind;
      auto a = train_model(build_model(kind, spec, c), data, c, Precision::F64);
      auto b = train_model(build_model(kind, spec, c), data, c, Precision::F64);
      CHECK(a.report.to_json(false).dump() == b.report.to_json(false).dump());
      CHECK(a.params.size() == b.params.size());
      for (const auto& [k, t] : a.params) CHECK(t == b.params.at(k));
      c.seed = 1;
      auto other = train_model(build_model(kind, spec, c), data, c, Precision::F64);
      CHECK(other.report.to_json(false).dump() != a.report.to_json(false).dump());
      c.seed = 0;
    }
  }

  SUBCASE("early stopping keeps the best validation checkpoint") {
    c.epochs = 6;
    auto r = train_model(build_model(ModelKind::Mlp, spec, c), data, c, Precision::F64);
    CHECK(r.report.params == r.model->parameter_count());
    double best = std::numeric_limits<double>::infinity();
    std::size_t pick = 0;
    for (std::size_t i = 0; i < r.report.runs.size(); ++i) {
      const auto& run = r.report.runs[i];
      CHECK(run.epochs.size() == 7);
      double b = std::numeric_limits<double>::infinity();
      for (const auto& e : run.epochs) b = std::min(b, e.val_mse);
      CHECK(run.best_val_mse == b);
      CHECK(run.epochs[run.best_epoch].val_mse == b);
      if (b < best) best = b, pick = i;
    }
    CHECK(r.report.selected_lr == c.lr_grid[pick]);
    auto val = predict(*r.model, r.params, data.val_x, r.label_mean, r.label_std, Precision::F64);
    double mse = 0;
    for (std::size_t i = 0; i < val.size(); ++i) mse += (val[i] - data.val_y[i]) * (val[i] - data.val_y[i]);
    CHECK(mse / double(val.size()) == doctest::Approx(best).epsilon(1e-12));
  }

  SUBCASE("diverging learning rates are dropped") {
    c.lr_grid = {1e300, 1e-3};
    auto r = train_model(build_model(ModelKind::Mlp, spec, c), data, c, Precision::F64);
    CHECK(r.report.runs[0].failed);
    CHECK_FALSE(r.report.runs[0].error.empty());
    CHECK(r.report.selected_lr == 1e-3);
    CHECK(std::isfinite(r.report.test_mse));
    c.lr_grid = {1e300};
    CHECK_THROWS_AS(train_model(build_model(ModelKind::Mlp, spec, c), data, c, Precision::F64), std::runtime_error);
  }

  SUBCASE("augmentation does not change an invariant model's losses") {
    auto plain = train_model(build_model(ModelKind::Dws, spec, c), data, c, Precision::F64);
    c.augment = true;
    auto aug = train_model(build_model(ModelKind::Dws, spec, c), data, c, Precision::F64);
    for (std::size_t i = 0; i < plain.report.runs.size(); ++i)
      for (std::size_t e = 1; e < plain.report.runs[i].epochs.size(); ++e) {
        CHECK(aug.report.runs[i].epochs[e].train_loss ==
              doctest::Approx(plain.report.runs[i].epochs[e].train_loss).epsilon(1e-9));
        CHECK(aug.report.runs[i].epochs[e].val_mse ==
              doctest::Approx(plain.report.runs[i].epochs[e].val_mse).epsilon(1e-9));
      }
  }

  SUBCASE("single precision") {
    auto r64 = train_model(build_model(ModelKind::Dws, spec, c), data, c, Precision::F64);
    auto r32 = train_model(build_model(ModelKind::Dws, spec, c), data, c, Precision::F32);
    CHECK(r32.report.precision == Precision::F32);
    CHECK(r32.report.test_mse == doctest::Approx(r64.report.test_mse).epsilon(1e-3));
  }
}

TEST_CASE("invariance of trained models") {
  const WeightSpaceSpec spec({1, 5, 5, 1});
  auto d = toy_dataset(spec, 32, 8, 16, 4);
  auto data = prepare_data(d, 0, 0);
  auto c = small_config();
  c.epochs = 5;
  auto dws = train_model(build_model(ModelKind::Dws, spec, c), data, c, Precision::F64);
  auto mlp = train_model(build_model(ModelKind::Mlp, spec, c), data, c, Precision::F64);
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    CHECK(invariance_gap(*dws.model, dws.params, data.test_x, spec, dws.label_mean, dws.label_std, seed,
                         Precision::F64) <= 1e-8);
    CHECK(invariance_gap(*mlp.model, mlp.params, data.test_x, spec, mlp.label_mean, mlp.label_std, seed,
                         Precision::F64) > 1e-2);
  }
  CHECK(invariance_gap(*dws.model, dws.params, data.test_x, spec, dws.label_mean, dws.label_std, 1,
                       Precision::F32) <= 1e-5);
}

TEST_CASE("checkpoint round trip") {
  const WeightSpaceSpec spec({1, 4, 4, 1});
  auto d = toy_dataset(spec, 16, 8, 8, 5);
  auto data = prepare_data(d, 0, 0);
  auto c = small_config();
  c.epochs = 2;
  for (auto kind : {ModelKind::Dws, ModelKind::MlpPermAug}) {
    c.kind = kind;
    auto r = train_model(build_model(kind, spec, c), data, c, Precision::F64);
    const auto path = (std::filesystem::temp_directory_path() / "dws_ckpt_test.json").string();
    save_checkpoint(path, make_checkpoint(r, c));
    auto m = load_model(path);
    CHECK(m.model->to_json() == r.model->to_json());
    CHECK(m.label_mean == r.label_mean);
    CHECK(m.label_std == r.label_std);
    auto a = predict(*r.model, r.params, data.test_x, r.label_mean, r.label_std, Precision::F64);
    auto b = predict(*m.model, m.params, data.test_x, m.label_mean, m.label_std, Precision::F64);
    CHECK(a == b);
    auto ev = evaluate(m, data, 0, Precision::F64);
    CHECK(ev.count == 8);
    CHECK(ev.test_mse == doctest::Approx(r.report.test_mse).epsilon(1e-14));
    CHECK(load_checkpoint(path).header.at("kind") == model_kind_name(kind));
    std::filesystem::remove(path);
  }
}

TEST_CASE("learning curve and csv") {
  const WeightSpaceSpec spec({1, 3, 3, 1});
  auto d = toy_dataset(spec, 16, 4, 4, 6);
  auto c = small_config();
  c.epochs = 1;
  c.lr_grid = {1e-3};
  auto rows = run_curve(d, {2, 4, 8, 16}, {ModelKind::Dws, ModelKind::Mlp, ModelKind::MlpPermAug}, 3, c,
                        Precision::F64);
  CHECK(rows.size() == 36);
  CHECK(rows.front().size == 2);
  CHECK(rows.back().size == 16);
  CHECK(rows[1].seed == 1);
  auto summary = summarize_curve(rows);
  CHECK(summary.size() == 12);
  for (const auto& s : summary) CHECK(s.runs == 3);
  CHECK_THROWS(run_curve(d, {17}, {ModelKind::Dws}, 1, c, Precision::F64));

  rows[0].test_mse = 0.1 + 0.2;
  rows[1].lr = 5e-4;
  rows[2].seconds = 1.0 / 3.0;
  std::stringstream ss;
  write_curve_csv(ss, rows);
  CHECK(ss.str().rfind("kind,size,seed,lr,test_mse,params,seconds\n", 0) == 0);
  auto back = read_curve_csv(ss);
  REQUIRE(back.size() == rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    CHECK(back[i].kind == rows[i].kind);
    CHECK(back[i].size == rows[i].size);
    CHECK(back[i].seed == rows[i].seed);
    CHECK(back[i].lr == rows[i].lr);
    CHECK(back[i].test_mse == rows[i].test_mse);
    CHECK(back[i].params == rows[i].params);
    CHECK(back[i].seconds == rows[i].seconds);
  }
  std::stringstream bad("kind,size\n");
  CHECK_THROWS(read_curve_csv(bad));

  std::vector<CurveRow> two{{"dws", 4, 0, 1e-3, 1.0, 10, 0.0}, {"dws", 4, 1, 1e-3, 3.0, 10, 0.0}};
  auto s = summarize_curve(two);
  CHECK(s[0].mean == 2.0);
  CHECK(s[0].std == 1.0);
}
