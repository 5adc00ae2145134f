#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "dws/checkpoint.hpp"
#include "dws/dataset_io.hpp"
#include "dws/layers.hpp"
#include "dws/model_zoo.hpp"
#include "dws/models.hpp"

namespace dws {

enum class ModelKind : unsigned char { Dws, Mlp, MlpPermAug };
ModelKind parse_model_kind(const std::string& text);  // dws | dwsnet | mlp | mlp-perm-aug
const char* model_kind_name(ModelKind kind);

enum class Precision : unsigned char { F32, F64 };
Precision parse_precision(const std::string& text);
const char* precision_name(Precision p);
/// DWS_PRECISION=f32|f64, default f64.
Precision precision_from_env();

struct ExperimentConfig {
  std::string task = "sine-frequency";
  ModelKind kind = ModelKind::Dws;
  std::size_t epochs = 100;
  std::size_t batch_size = 32;
  std::vector<double> lr_grid{5e-3, 1e-3, 5e-4, 1e-4};
  double weight_decay = 5e-4;
  std::uint64_t seed = 0;
  bool augment = false;  // forced on for mlp-perm-aug
  PoolMode pool = PoolMode::Max;
  std::string early_stopping = "val_mse";
  std::vector<std::size_t> channels{8, 8};
  std::size_t head_dim = 32;
  std::vector<std::size_t> readout{32};
  InitMode init = InitMode::XavierScaled;  // dws
  double mu = 1.0;
  InitMode mlp_init = InitMode::ZeroBiasXavier;  // mlp baselines
  std::size_t train_size = 0;  // 0: whole train split
  std::size_t eval_batch = 128;
  double capacity_tolerance = 0.1;

  /// Keys: epochs, batch_size, lr_grid, weight_decay, seed, augment, pool,
  /// channels, head_dim, readout, init, mu, mlp_init, train_size, eval_batch,
  /// capacity_tolerance, model, task, early_stopping. Unknown keys throw.
  static ExperimentConfig from_key_values(const KeyValues& kv, ExperimentConfig base);
  static ExperimentConfig from_key_values(const KeyValues& kv);
  void validate() const;
  bool augmenting() const { return augment || kind == ModelKind::MlpPermAug; }
  nlohmann::json to_json() const;
};

/// Hidden widths of a fully connected net with `depth` equal hidden layers
/// whose parameter count is closest to `target`. Throws std::runtime_error
/// naming the closest achievable count when it misses by more than `tol`.
std::vector<std::size_t> match_mlp_hidden(std::size_t input, std::size_t depth, std::size_t target, double tol);

DWSNetConfig dwsnet_config(const WeightSpaceSpec& spec, const ExperimentConfig& config);
/// dws: DWSNet. mlp / mlp-perm-aug: the same depth as the DWSNet's stack of
/// linear maps, width matched to its parameter count.
std::unique_ptr<WeightSpaceModel> build_model(ModelKind kind, const WeightSpaceSpec& spec,
                                              const ExperimentConfig& config);

/// Normalized inputs and raw labels for each split.
struct PreparedData {
  WeightSpaceSpec spec;
  std::vector<std::vector<double>> train_x, val_x, test_x;
  std::vector<double> train_y, val_y, test_y;
  std::vector<std::size_t> train_index;  // dataset rows used for training
};
/// train_size > 0 keeps a seeded subset of that many training rows.
PreparedData prepare_data(const Dataset& data, std::size_t train_size, std::uint64_t seed);

struct EpochLog {
  std::size_t epoch = 0;
  double train_loss = 0.0;  // standardized label units; NaN for epoch 0
  double val_mse = 0.0;     // raw label units
};

struct LrRun {
  double lr = 0.0;
  std::vector<EpochLog> epochs;
  std::size_t best_epoch = 0;
  double best_val_mse = 0.0;
  bool failed = false;
  std::string error;
};

struct RunReport {
  ModelKind kind = ModelKind::Dws;
  std::uint64_t seed = 0;
  std::size_t train_size = 0;
  Precision precision = Precision::F64;
  std::size_t params = 0;
  std::vector<LrRun> runs;
  double selected_lr = 0.0;
  double test_mse = 0.0;
  double seconds = 0.0;
  nlohmann::json to_json(bool with_time = true) const;
};

struct TrainResult {
  std::unique_ptr<WeightSpaceModel> model;
  Bindings<double> params;  // early-stopping checkpoint of the selected lr
  double label_mean = 0.0, label_std = 1.0;
  RunReport report;
};

/// AdamW over the lr grid with early stopping on validation MSE; test MSE is
/// evaluated once, for the selected checkpoint. Throws when every lr fails.
TrainResult train_model(std::unique_ptr<WeightSpaceModel> model, const PreparedData& data,
                        const ExperimentConfig& config, Precision precision);

/// Predictions in raw label units for normalized inputs.
std::vector<double> predict(const WeightSpaceModel& model, const Bindings<double>& params,
                            const std::vector<std::vector<double>>& rows, double label_mean, double label_std,
                            Precision precision, std::size_t batch = 128);

Checkpoint make_checkpoint(const TrainResult& result, const ExperimentConfig& config);
struct LoadedModel {
  std::unique_ptr<WeightSpaceModel> model;
  Bindings<double> params;
  double label_mean = 0.0, label_std = 1.0;
};
LoadedModel load_model(const std::string& checkpoint_path);

struct EvalReport {
  std::size_t count = 0;
  double test_mse = 0.0;
  /// max |f(g.v) - f(v)| over test inputs with one random g each, acting on
  /// the normalized vectors the model consumes.
  double invariance_gap = 0.0;
  nlohmann::json to_json() const;
};
EvalReport evaluate(const LoadedModel& model, const PreparedData& data, std::uint64_t seed, Precision precision);
double invariance_gap(const WeightSpaceModel& model, const Bindings<double>& params,
                      const std::vector<std::vector<double>>& rows, const WeightSpaceSpec& spec, double label_mean,
                      double label_std, std::uint64_t seed, Precision precision);

struct CurveRow {
  std::string kind;
  std::size_t size = 0;
  std::uint64_t seed = 0;
  double lr = 0.0;
  double test_mse = 0.0;
  std::size_t params = 0;
  double seconds = 0.0;
};
struct CurveSummary {
  std::string kind;
  std::size_t size = 0;
  std::size_t runs = 0;
  double mean = 0.0, std = 0.0;  // population std over seeds
};

/// Every (size, kind, seed) combination, sizes outermost. Seeds are
/// base_seed, base_seed + 1, ... `on_result` sees each trained model.
using CurveHook = std::function<void(const CurveRow&, const TrainResult&, const PreparedData&)>;
std::vector<CurveRow> run_curve(const Dataset& data, const std::vector<std::size_t>& sizes,
                                const std::vector<ModelKind>& kinds, std::size_t seeds, const ExperimentConfig& config,
                                Precision precision, std::ostream* log = nullptr, const CurveHook& on_result = {});
std::vector<CurveSummary> summarize_curve(const std::vector<CurveRow>& rows);

/// kind,size,seed,lr,test_mse,params,seconds
void write_curve_csv(std::ostream& os, const std::vector<CurveRow>& rows);
std::vector<CurveRow> read_curve_csv(std::istream& is);

}  // namespace dws
