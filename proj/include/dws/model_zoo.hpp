#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "dws/dataset_io.hpp"
#include "dws/random.hpp"
#include "dws/tensor.hpp"
#include "dws/weight_space.hpp"

namespace dws {

enum class ActivationKind : unsigned char { Relu, Sine, None };
ActivationKind parse_activation(const std::string& text);
const char* activation_name(ActivationKind kind);

/// x_{m+1} = act(W_{m+1} x_m + b_{m+1}); the last layer has no activation
/// unless `final_activation` is set. x has shape (d_0) or (N, d_0).
Tensor<double> mlp_forward(const WeightSpaceVector& v, const Tensor<double>& x, ActivationKind act,
                           bool final_activation = false);

/// n points spaced evenly on [-pi, pi], endpoints included.
std::vector<double> sine_grid(std::size_t n);

struct SineTask {
  double frequency = 1.0;
  double amplitude = 1.0;
  std::vector<double> grid;
};

/// Frequency drawn from U(lo, hi).
SineTask sample_sine_task(double lo, double hi, std::size_t grid_size, Rng& rng);

struct InrOptions {
  std::vector<std::size_t> arch{1, 16, 16, 1};
  std::size_t steps = 1000;
  double lr = 1e-3;
  double omega0 = 30.0;
};

struct InrFit {
  WeightSpaceVector weights;  // omega0 folded into the first layer
  double mse = 0.0;
  double max_abs_error = 0.0;
  std::size_t steps = 0;
};

/// SIREN fit of amplitude * sin(frequency * x) on the task grid with
/// full-batch Adam on MSE. Throws std::runtime_error naming the seed if
/// the loss stops being finite.
InrFit train_inr(const SineTask& task, const InrOptions& options, std::uint64_t seed);

/// Flat "key = value" file; '#' starts a comment.
using KeyValues = std::map<std::string, std::string>;
KeyValues parse_key_values(const std::string& text);
KeyValues read_key_values(const std::string& path);
/// Value parsers; errors name the key.
std::vector<std::size_t> parse_size_list(const std::string& key, const std::string& text);  // "1,16,16,1"
std::size_t parse_size(const std::string& key, const std::string& text);
double parse_real(const std::string& key, const std::string& text);
std::vector<double> parse_real_list(const std::string& key, const std::string& text);

struct SineDatasetConfig {
  std::size_t count = 500;
  std::vector<std::size_t> arch{1, 16, 16, 1};
  std::size_t grid = 512;
  double freq_lo = 0.5, freq_hi = 10.0;
  std::size_t steps = 1000;
  double lr = 1e-3;
  double omega0 = 30.0;
  std::uint64_t seed = 0;
  std::vector<std::size_t> splits{400, 50, 50};
  double max_abs_threshold = 0.5;
  double mse_threshold = 1e-2;
  std::size_t max_candidates = 0;  // 0: twice the count

  /// Unknown keys are an error.
  static SineDatasetConfig from_key_values(const KeyValues& kv);
  nlohmann::json to_json() const;
};

struct GenerationSummary {
  std::size_t accepted = 0;
  std::vector<nlohmann::json> rejected;  // seed, frequency, mse, max_abs_error
};

/// Fits INRs from independent seeds until `count` pass the fit gate, splits
/// them, computes train normalization and writes dataset.jsonl and
/// manifest.json into `out_dir`. Same config, same bytes.
GenerationSummary generate_sine_dataset(const SineDatasetConfig& config, const std::string& out_dir,
                                        std::ostream* log = nullptr);

}  // namespace dws
