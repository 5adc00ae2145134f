#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>

#include <CLI11.hpp>

#include "dws/experiments.hpp"
#include "dws/verifier.hpp"

using namespace dws;

namespace {

void write_json(const std::string& path, const nlohmann::json& j) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << j.dump(2) << '\n';
}

ExperimentConfig load_config(const std::string& path) {
  if (path.empty()) return ExperimentConfig{};
  return ExperimentConfig::from_key_values(read_key_values(path));
}

std::vector<ModelKind> parse_kinds(const std::string& text) {
  std::vector<ModelKind> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_model_kind(item));
  if (out.empty()) throw std::invalid_argument("--kinds is empty");
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Deep weight space networks: dataset generation, verification and training"};
  app.require_subcommand(1);

  std::string gen_config, gen_out;
  auto* gen = app.add_subcommand("generate", "fit a dataset of sine INRs");
  gen->add_option("--config", gen_config, "key = value dataset config")->required();
  gen->add_option("--out", gen_out, "output directory")->required();

  std::string dims;
  std::size_t mc = 0;
  double tol = 1e-9;
  std::string verify_json;
  std::uint64_t verify_seed = 0;
  auto* ver = app.add_subcommand("verify", "check the equivariant block tables for one architecture");
  ver->add_option("--dims", dims, "layer widths d0,...,dM")->required();
  auto* exh = ver->add_flag("--exhaustive", "exact character sums over the whole group (default)");
  ver->add_option("--mc", mc, "estimate character sums from N sampled group elements")->excludes(exh);
  ver->add_option("--tol", tol, "equivariance residual tolerance");
  ver->add_option("--seed", verify_seed, "seed for sampled checks");
  ver->add_option("--json", verify_json, "also write the report as JSON");

  std::string model = "dws", data_dir, train_config, train_out;
  std::optional<std::uint64_t> train_seed;
  auto* tr = app.add_subcommand("train", "train one model over the learning-rate grid");
  tr->add_option("--model", model, "dws | mlp | mlp-perm-aug");
  tr->add_option("--data", data_dir, "dataset directory")->required();
  tr->add_option("--config", train_config, "key = value experiment config");
  tr->add_option("--seed", train_seed, "overrides the config seed");
  tr->add_option("--out", train_out, "output directory")->required();

  std::string curve_data, curve_sizes = "50,100,200,400", curve_out, curve_config, curve_kinds = "dws,mlp,mlp-perm-aug";
  std::size_t curve_seeds = 3;
  auto* cu = app.add_subcommand("curve", "test MSE against training set size");
  cu->add_option("--data", curve_data, "dataset directory")->required();
  cu->add_option("--sizes", curve_sizes, "training set sizes");
  cu->add_option("--seeds", curve_seeds, "seeds per point");
  cu->add_option("--kinds", curve_kinds, "model kinds");
  cu->add_option("--config", curve_config, "key = value experiment config");
  cu->add_option("--out", curve_out, "CSV file")->required();

  std::string ckpt, eval_data;
  std::uint64_t eval_seed = 0;
  auto* ev = app.add_subcommand("eval", "test MSE and invariance gap of a checkpoint");
  ev->add_option("--checkpoint", ckpt, "checkpoint file")->required();
  ev->add_option("--data", eval_data, "dataset directory")->required();
  ev->add_option("--seed", eval_seed, "seed for the group elements");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) {
      auto c = SineDatasetConfig::from_key_values(read_key_values(gen_config));
      auto s = generate_sine_dataset(c, gen_out, &std::cerr);
      std::cout << "accepted " << s.accepted << " rejected " << s.rejected.size() << " -> " << gen_out << '\n';
      return 0;
    }
    if (*ver) {
      VerifyOptions o;
      o.tol = tol;
      o.seed = verify_seed;
      if (mc > 0) {
        o.exhaustive = false;
        o.mc_samples = mc;
      }
      auto r = verify_tables(WeightSpaceSpec(parse_size_list("--dims", dims)), o);
      std::cout << format_report(r);
      if (!verify_json.empty()) write_json(verify_json, report_to_json(r));
      return r.pass ? 0 : 1;
    }
    if (*tr) {
      auto c = load_config(train_config);
      c.kind = parse_model_kind(model);
      if (train_seed) c.seed = *train_seed;
      const auto precision = precision_from_env();
      auto data = load_dataset_dir(data_dir);
      auto prepared = prepare_data(data, c.train_size, c.seed);
      auto res = train_model(build_model(c.kind, data.manifest.spec, c), prepared, c, precision);
      std::filesystem::create_directories(train_out);
      save_checkpoint((std::filesystem::path(train_out) / "checkpoint.json").string(), make_checkpoint(res, c));
      write_json((std::filesystem::path(train_out) / "report.json").string(), res.report.to_json());
      std::cout << model_kind_name(c.kind) << " params " << res.report.params << " lr " << res.report.selected_lr
                << " test_mse " << format_real(res.report.test_mse) << '\n';
      return 0;
    }
    if (*cu) {
      auto c = load_config(curve_config);
      auto data = load_dataset_dir(curve_data);
      auto rows = run_curve(data, parse_size_list("--sizes", curve_sizes), parse_kinds(curve_kinds), curve_seeds, c,
                            precision_from_env(), &std::cerr);
      std::ofstream out(curve_out);
      if (!out) throw std::runtime_error("cannot write " + curve_out);
      write_curve_csv(out, rows);
      for (const auto& s : summarize_curve(rows))
        std::cout << std::left << std::setw(14) << s.kind << std::right << std::setw(6) << s.size << "  "
                  << std::scientific << std::setprecision(4) << s.mean << " +- " << s.std << "  (" << s.runs
                  << " seeds)\n";
      return 0;
    }
    if (*ev) {
      auto m = load_model(ckpt);
      auto data = load_dataset_dir(eval_data);
      auto r = evaluate(m, prepare_data(data, 0, 0), eval_seed, precision_from_env());
      std::cout << r.to_json().dump(2) << '\n';
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
