// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "dws/experiments.hpp"
#include "dws/verifier.hpp"

using namespace dws;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::vector<int> failed;

void report(int id, const std::string& title, const Outcome& o) {
  if (!o.pass) failed.push_back(id);
  std::cout << "criterion " << id << ' ' << (o.pass ? "PASS" : "FAIL") << "  " << title << ": " << o.detail
            << std::endl;
}

template <typename F>
void run(int id, const std::string& title, F&& f) {
  try {
    report(id, title, f());
  } catch (const std::exception& e) {
    report(id, title, {false, std::string("exception: ") + e.what()});
  }
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(double x) {
  std::ostringstream os;
  os.precision(4);
  os << x;
  return os.str();
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + p.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Outcome table_verification() {
  const auto t0 = std::chrono::steady_clock::now();
  std::ostringstream detail;
  bool ok = true;
  for (const auto& dims : std::vector<std::vector<std::size_t>>{{2, 3, 3, 2}, {1, 2, 1}, {3, 4, 5, 4, 3}}) {
    const WeightSpaceSpec spec(dims);
    VerifyOptions o;
    o.tol = 1e-9;
    const auto r = verify_tables(spec, o);
    const std::size_t n = spec.subspaces().size();
    std::size_t good = 0;
    double worst = 0.0;
    for (const auto& p : r.pairs) {
      worst = std::max(worst, p.residual);
      if (p.trace_dim && p.null_dim && *p.trace_dim == p.analytic && *p.null_dim == p.analytic &&
          p.residual <= 1e-9 && p.pass)
        ++good;
    }
    const bool this_ok = r.pass && r.pairs.size() == n * n && good == n * n;
    ok = ok && this_ok;
    detail << spec.to_string() << " " << good << "/" << n * n << " (|G|=" << r.group_order.value_or(0)
           << ", max residual " << fmt(worst) << ")  ";
  }
  const double t = seconds_since(t0);
  detail << "in " << fmt(t) << " s";
  return {ok && t < 120.0, detail.str()};
}

Outcome basis_completeness() {
  const auto t0 = std::chrono::steady_clock::now();
  const WeightSpaceSpec spec({2, 3, 3, 2});
  Rng rng(20240);
  std::size_t good = 0, total = 0;
  for (auto to : spec.subspaces())
    for (auto from : spec.subspaces()) {
      const auto count = table_cell(spec, from, to).params;
      ++total;
      if (sampled_basis_rank(spec, from, to, 2 * count, rng) == count) ++good;
    }
  const double t = seconds_since(t0);
  return {good == total && t < 60.0,
          std::to_string(good) + "/" + std::to_string(total) + " blocks reach full rank in " + fmt(t) + " s"};
}

Outcome invariant_dimension() {
  Rng rng(77);
  std::ostringstream detail;
  bool ok = true;
  for (int k = 0; k < 5; ++k) {
    const std::size_t layers = 2 + uniform_index(rng, 3);
    std::vector<std::size_t> dims(layers + 1);
    for (std::size_t i = 0; i <= layers; ++i)
      dims[i] = (i == 0 || i == layers) ? 1 + uniform_index(rng, 3) : 2 + uniform_index(rng, 3);
    const WeightSpaceSpec spec(dims);
    const auto orbits = enumerate_orbits(spec).size();
    const auto trace = invariant_dim_by_trace(spec);
    ok = ok && orbits == trace;
    detail << spec.to_string() << " O=" << orbits << " trace=" << trace << "  ";
  }
  return {ok, detail.str()};
}

Outcome function_invariance() {
  Rng rng(4);
  double worst = 0.0;
  std::size_t n = 0;
  for (const auto& spec : {WeightSpaceSpec({1, 16, 16, 1}), WeightSpaceSpec({2, 5, 4, 3})})
    for (auto act : {ActivationKind::Relu, ActivationKind::Sine})
      for (int t = 0; t < 100; ++t, ++n) {
        WeightSpaceVector v(spec, 1);
        for (auto id : spec.subspaces())
          for (auto& x : v.part(id).data()) x = normal01(rng);
        const auto g = sample_group_element(spec, rng);
        Tensor<double> x(Shape{spec.dim(0)});
        for (auto& e : x.data()) e = normal01(rng);
        const auto a = mlp_forward(v, x, act), b = mlp_forward(apply_action(g, v), x, act);
        for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
      }
  return {worst <= 1e-12, std::to_string(n) + " draws, max deviation " + fmt(worst)};
}

Outcome gradient_check() {
  const auto t0 = std::chrono::steady_clock::now();
  const WeightSpaceSpec spec({1, 3, 3, 1});
  double worst = 0.0;
  std::size_t checked = 0;
  for (auto pool : {PoolMode::Max, PoolMode::Sum}) {
    DWSNetConfig c;
    c.spec = spec;
    c.channels = {4, 4};
    c.pool = pool;
    c.head_dim = 8;
    c.readout = {8};
    DWSNet net(c);
    Rng rng(pool == PoolMode::Max ? 5 : 6);
    auto params = init_parameters(net.parameters(), InitMode::XavierScaled, 1.0, rng);
    // biases start at zero; move them off zero so every term is exercised
    for (auto& [name, t] : params)
      for (auto& v : t.data()) v += 0.1 * normal01(rng);
    Graph<double> g;
    const std::size_t batch = 4;
    auto x = g.input("input", Shape{batch, spec.flat_dimension()});
    auto y = g.input("target", Shape{batch, 1});
    auto loss = g.mse(net.build(g, x), y);
    Bindings<double> b = params;
    Tensor<double> xs(Shape{batch, spec.flat_dimension()}), ys(Shape{batch, 1});
    for (auto& v : xs.data()) v = normal01(rng);
    for (auto& v : ys.data()) v = normal01(rng);
    b.insert_or_assign("input", xs);
    b.insert_or_assign("target", ys);
    const auto grads = backward_grad(g, b, loss);
    const double h = 1e-5;
    for (const auto& [name, t] : params) {
      const auto& ga = grads.grads.at(name);
      for (std::size_t i = 0; i < t.size(); ++i) {
        auto& slot = b.at(name).data()[i];
        const double orig = slot;
        slot = orig + h;
        const double lp = forward_eval(g, b, loss)[0];
        slot = orig - h;
        const double lm = forward_eval(g, b, loss)[0];
        slot = orig;
        const double fd = (lp - lm) / (2 * h);
        const double a = ga.data()[i];
        worst = std::max(worst, std::abs(a - fd) / std::max({std::abs(a), std::abs(fd), 1e-3}));
        ++checked;
      }
    }
  }
  const double t = seconds_since(t0);
  return {worst <= 1e-4 && t < 60.0, std::to_string(checked) + " partials (max and sum pooling), max relative error " +
                                         fmt(worst) + " in " + fmt(t) + " s"};
}

// Generated once per build tree; regenerated if the config changes.
Dataset desk_dataset(const fs::path& configs, const fs::path& cache) {
  const auto cfg = SineDatasetConfig::from_key_values(read_key_values((configs / "desk_dataset.cfg").string()));
  const auto dir = cache / "desk";
  if (fs::exists(manifest_file(dir.string()))) {
    auto m = read_manifest(manifest_file(dir.string()));
    if (m.extra.value("config", nlohmann::json()) == cfg.to_json()) return load_dataset_dir(dir.string());
    std::cout << "cached desk dataset has a different config, regenerating" << std::endl;
  }
  std::cout << "generating the desk dataset (" << cfg.count << " INRs) into " << dir << std::endl;
  const auto t0 = std::chrono::steady_clock::now();
  generate_sine_dataset(cfg, dir.string());
  std::cout << "dataset ready in " << fmt(seconds_since(t0)) << " s" << std::endl;
  return load_dataset_dir(dir.string());
}

struct TrendResult {
  Outcome trend, invariance;
};

TrendResult experiment_trend(const fs::path& configs, const fs::path& cache) {
  const auto data = desk_dataset(configs, cache);
  const auto config = ExperimentConfig::from_key_values(read_key_values((configs / "experiment.cfg").string()));
  const std::vector<std::size_t> sizes{50, 100, 200, 400};
  const std::vector<ModelKind> kinds{ModelKind::Dws, ModelKind::Mlp, ModelKind::MlpPermAug};

  double dws_gap = -1.0, mlp_gap = -1.0;
  auto hook = [&](const CurveRow& row, const TrainResult& res, const PreparedData& prepared) {
    if (row.size != 400 || row.seed != config.seed) return;
    const double gap = invariance_gap(*res.model, res.params, prepared.test_x, prepared.spec, res.label_mean,
                                      res.label_std, 99, res.report.precision);
    if (row.kind == "dws") dws_gap = gap;
    if (row.kind == "mlp") mlp_gap = gap;
  };

  const std::clock_t c0 = std::clock();
  const auto rows = run_curve(data, sizes, kinds, 3, config, Precision::F64, &std::cout, hook);
  const double cpu = double(std::clock() - c0) / CLOCKS_PER_SEC;
  {
    std::ofstream out(cache / "curve.csv");
    write_curve_csv(out, rows);
  }

  const auto summary = summarize_curve(rows);
  auto mean_of = [&](const std::string& kind, std::size_t size) {
    for (const auto& s : summary)
      if (s.kind == kind && s.size == size) return s.mean;
    throw std::logic_error("missing curve point");
  };
  for (const auto& s : summary)
    std::cout << "  " << s.kind << " n=" << s.size << " test MSE " << fmt(s.mean) << " +- " << fmt(s.std) << std::endl;
  const double dws400 = mean_of("dws", 400), dws100 = mean_of("dws", 100), dws50 = mean_of("dws", 50);
  const double mlp400 = mean_of("mlp", 400);
  const bool ratio_ok = dws400 <= 0.5 * mlp400;
  const bool small_ok = dws100 < mlp400;
  const bool time_ok = cpu < 45 * 60;

  TrendResult r;
  r.trend = {ratio_ok && small_ok && time_ok,
             "dws@400 " + fmt(dws400) + " vs 0.5 x mlp@400 " + fmt(0.5 * mlp400) + (ratio_ok ? " ok" : " MISSED") +
                 "; dws@100 " + fmt(dws100) + " vs mlp@400 " + fmt(mlp400) + (small_ok ? " ok" : " MISSED") +
                 "; dws@50 " + fmt(dws50) + "; curve CPU " + fmt(cpu / 60) + " min" + (time_ok ? "" : " OVER BUDGET")};
  r.invariance = {dws_gap >= 0 && dws_gap <= 1e-6 && mlp_gap > 1e-2,
                  "max |f(g.v) - f(v)| on the test split: dws " + fmt(dws_gap) + ", mlp " + fmt(mlp_gap)};
  return r;
}

int sh(const std::string& cmd) {
  const int rc = std::system(cmd.c_str());
  if (rc != 0) throw std::runtime_error("command failed (" + std::to_string(rc) + "): " + cmd);
  return rc;
}

std::string without_seconds_json(const fs::path& p) {
  auto j = nlohmann::json::parse(slurp(p));
  j.erase("seconds");
  return j.dump();
}

std::string without_seconds_csv(const fs::path& p) {
  std::istringstream in(slurp(p));
  auto rows = read_curve_csv(in);
  for (auto& r : rows) r.seconds = 0.0;
  std::ostringstream out;
  write_curve_csv(out, rows);
  return out.str();
}

Outcome determinism(const std::string& cli, const fs::path& cache) {
  const auto root = cache / "determinism";
  fs::remove_all(root);
  fs::create_directories(root);
  {
    std::ofstream(root / "data.cfg") << "count = 10\narch = 1,8,8,1\ngrid = 64\nfreq_lo = 0.5\nfreq_hi = 2\n"
                                        "steps = 800\nsplits = 6,2,2\nseed = 3\nmax_candidates = 40\n";
    std::ofstream(root / "train.cfg") << "epochs = 3\nbatch_size = 4\nlr_grid = 1e-3,5e-4\nchannels = 4,4\n"
                                         "head_dim = 8\nreadout = 8\n";
  }
  const std::string q = "\"" + cli + "\"";
  const auto p = [&](const std::string& rel) { return "\"" + (root / rel).string() + "\""; };
  std::vector<std::string> same, differ;
  auto compare = [&](const std::string& what, const std::string& a, const std::string& b) {
    (a == b ? same : differ).push_back(what);
  };
  for (const char* run : {"a", "b"}) {
    const std::string r = run;
    sh(q + " generate --config " + p("data.cfg") + " --out " + p(r + "/data") + " 2>/dev/null >/dev/null");
    sh(q + " verify --dims 2,3,3,2 --json " + p(r + "/verify.json") + " > " + p(r + "/verify.txt"));
    for (const char* kind : {"dws", "mlp", "mlp-perm-aug"})
      sh(q + " train --model " + kind + " --data " + p(r + "/data") + " --config " + p("train.cfg") +
         " --seed 5 --out " + p(r + "/train-" + kind) + " > /dev/null");
    sh("DWS_PRECISION=f32 " + q + " train --model dws --data " + p(r + "/data") + " --config " + p("train.cfg") +
       " --seed 5 --out " + p(r + "/train-f32") + " > /dev/null");
    sh(q + " curve --data " + p(r + "/data") + " --config " + p("train.cfg") + " --sizes 2,6 --seeds 2 --out " +
       p(r + "/curve.csv") + " 2>/dev/null >/dev/null");
    sh(q + " eval --checkpoint " + p(r + "/train-dws/checkpoint.json") + " --data " + p(r + "/data") + " > " +
       p(r + "/eval.json"));
  }
  const auto A = root / "a", B = root / "b";
  for (const char* f : {"data/dataset.jsonl", "data/manifest.json", "verify.json", "verify.txt", "eval.json"})
    compare(f, slurp(A / f), slurp(B / f));
  for (const char* t : {"train-dws", "train-mlp", "train-mlp-perm-aug", "train-f32"}) {
    compare(std::string(t) + "/report.json", without_seconds_json(A / t / "report.json"),
            without_seconds_json(B / t / "report.json"));
    compare(std::string(t) + "/checkpoint.json", slurp(A / t / "checkpoint.json"), slurp(B / t / "checkpoint.json"));
  }
  compare("curve.csv", without_seconds_csv(A / "curve.csv"), without_seconds_csv(B / "curve.csv"));
  std::string detail = std::to_string(same.size()) + "/" + std::to_string(same.size() + differ.size()) +
                       " artifacts identical across reruns of generate, verify, train (f64, f32), curve, eval";
  for (const auto& d : differ) detail += "; differs: " + d;
  return {differ.empty(), detail};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance suite"};
  std::string cli, cache, configs;
  std::vector<int> expect_fail, only;
  app.add_option("--cli", cli, "path to the dws command line tool")->required();
  app.add_option("--cache", cache, "working directory for datasets and results")->required();
  app.add_option("--configs", configs, "directory with desk_dataset.cfg and experiment.cfg")->required();
  app.add_option("--expect-fail", expect_fail, "criteria known to fail; they do not affect the exit status");
  app.add_option("--only", only, "run just these criteria");
  CLI11_PARSE(app, argc, argv);
  fs::create_directories(cache);
  auto on = [&](int id) { return only.empty() || std::find(only.begin(), only.end(), id) != only.end(); };

  if (on(1)) run(1, "table verification", table_verification);
  if (on(2)) run(2, "basis completeness", basis_completeness);
  if (on(3)) run(3, "invariant map dimension", invariant_dimension);
  if (on(4)) run(4, "function invariance", function_invariance);
  if (on(5)) run(5, "gradient correctness", gradient_check);

  if (on(6) || on(7)) {
    TrendResult trend;
    try {
      trend = experiment_trend(configs, cache);
    } catch (const std::exception& e) {
      trend.trend = {false, std::string("exception: ") + e.what()};
      trend.invariance = trend.trend;
    }
    if (on(6)) report(6, "experiment trend", trend.trend);
    if (on(7)) report(7, "trained model invariance", trend.invariance);
  }
  if (on(8)) run(8, "determinism", [&] { return determinism(cli, cache); });
  int total = 0;
  for (int id = 1; id <= 8; ++id) total += on(id);

  std::sort(expect_fail.begin(), expect_fail.end());
  int unexpected = 0;
  for (int id : failed)
    if (!std::binary_search(expect_fail.begin(), expect_fail.end(), id)) ++unexpected;
  std::cout << (total - static_cast<int>(failed.size())) << "/" << total << " criteria passed";
  for (int id : failed) {
    const bool known = std::binary_search(expect_fail.begin(), expect_fail.end(), id);
    std::cout << "; criterion " << id << (known ? " failed (known)" : " FAILED");
  }
  for (int id : expect_fail)
    if (on(id) && std::find(failed.begin(), failed.end(), id) == failed.end())
      std::cout << "; criterion " << id << " passed although listed as known failure";
  std::cout << std::endl;
  return unexpected == 0 ? 0 : 1;
}
