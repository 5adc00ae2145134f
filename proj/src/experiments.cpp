#include "dws/experiments.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <istream>
#include <limits>
#include <map>
#include <numeric>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "dws/optim.hpp"
#include "dws/symmetry.hpp"

namespace dws {

ModelKind parse_model_kind(const std::string& text) {
  if (text == "dws" || text == "dwsnet") return ModelKind::Dws;
  if (text == "mlp") return ModelKind::Mlp;
  if (text == "mlp-perm-aug") return ModelKind::MlpPermAug;
  throw std::invalid_argument("model must be dws, mlp or mlp-perm-aug, got '" + text + "'");
}

const char* model_kind_name(ModelKind kind) {
  switch (kind) {
    case ModelKind::Dws: return "dws";
    case ModelKind::Mlp: return "mlp";
    case ModelKind::MlpPermAug: return "mlp-perm-aug";
  }
  return "?";
}

Precision parse_precision(const std::string& text) {
  if (text == "f32") return Precision::F32;
  if (text == "f64") return Precision::F64;
  throw std::invalid_argument("precision must be f32 or f64, got '" + text + "'");
}

const char* precision_name(Precision p) { return p == Precision::F32 ? "f32" : "f64"; }

Precision precision_from_env() {
  const char* v = std::getenv("DWS_PRECISION");
  if (v == nullptr || *v == '\0') return Precision::F64;
  return parse_precision(v);
}

namespace {

const char* init_mode_name(InitMode m) { return m == InitMode::XavierScaled ? "xavier-scaled" : "zero-bias-xavier"; }

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw std::invalid_argument(key + ": expected true or false, got '" + v + "'");
}

std::vector<std::size_t> parse_widths(const std::string& key, const std::string& v) {
  if (v.empty() || v == "none") return {};
  return parse_size_list(key, v);
}

// stream keys for derive_seed
constexpr std::uint64_t kInitKey = 0x696e6974;
constexpr std::uint64_t kOrderKey = 0x6f72646572;
constexpr std::uint64_t kAugKey = 0x617567;
constexpr std::uint64_t kSubsetKey = 0x737562;

}  // namespace

ExperimentConfig ExperimentConfig::from_key_values(const KeyValues& kv, ExperimentConfig c) {
  for (const auto& [k, v] : kv) {
    if (k == "epochs") c.epochs = parse_size(k, v);
    else if (k == "batch_size") c.batch_size = parse_size(k, v);
    else if (k == "lr_grid") c.lr_grid = parse_real_list(k, v);
    else if (k == "weight_decay") c.weight_decay = parse_real(k, v);
    else if (k == "seed") c.seed = parse_size(k, v);
    else if (k == "augment") c.augment = parse_bool(k, v);
    else if (k == "pool") c.pool = parse_pool_mode(v);
    else if (k == "channels") c.channels = parse_size_list(k, v);
    else if (k == "head_dim") c.head_dim = parse_size(k, v);
    else if (k == "readout") c.readout = parse_widths(k, v);
    else if (k == "init") c.init = parse_init_mode(v);
    else if (k == "mu") c.mu = parse_real(k, v);
    else if (k == "mlp_init") c.mlp_init = parse_init_mode(v);
    else if (k == "train_size") c.train_size = parse_size(k, v);
    else if (k == "eval_batch") c.eval_batch = parse_size(k, v);
    else if (k == "capacity_tolerance") c.capacity_tolerance = parse_real(k, v);
    else if (k == "model") c.kind = parse_model_kind(v);
    else if (k == "task") c.task = v;
    else if (k == "early_stopping") c.early_stopping = v;
    else throw std::invalid_argument("unknown config key '" + k + "'");
  }
  c.validate();
  return c;
}

ExperimentConfig ExperimentConfig::from_key_values(const KeyValues& kv) {
  return from_key_values(kv, ExperimentConfig{});
}

void ExperimentConfig::validate() const {
  auto fail = [](const std::string& m) { throw std::invalid_argument("config: " + m); };
  if (task != "sine-frequency") fail("unsupported task '" + task + "'");
  if (lr_grid.empty()) fail("lr_grid is empty");
  for (double lr : lr_grid)
    if (!(lr > 0.0) || !std::isfinite(lr)) fail("learning rates must be positive");
  if (batch_size < 1) fail("batch_size must be at least 1");
  if (eval_batch < 1) fail("eval_batch must be at least 1");
  if (!(weight_decay >= 0.0)) fail("weight_decay must be non-negative");
  if (!(mu > 0.0)) fail("mu must be positive");
  if (channels.empty()) fail("channels is empty");
  for (auto c : channels)
    if (c == 0) fail("channels must be positive");
  for (auto c : readout)
    if (c == 0) fail("readout widths must be positive");
  if (head_dim == 0) fail("head_dim must be positive");
  if (early_stopping != "val_mse") fail("early_stopping must be val_mse");
  if (!(capacity_tolerance >= 0.0)) fail("capacity_tolerance must be non-negative");
}

nlohmann::json ExperimentConfig::to_json() const {
  return {{"task", task},
          {"model", model_kind_name(kind)},
          {"epochs", epochs},
          {"batch_size", batch_size},
          {"lr_grid", lr_grid},
          {"weight_decay", weight_decay},
          {"seed", seed},
          {"augment", augmenting()},
          {"pool", pool_mode_name(pool)},
          {"early_stopping", early_stopping},
          {"channels", channels},
          {"head_dim", head_dim},
          {"readout", readout},
          {"init", init_mode_name(init)},
          {"mu", mu},
          {"mlp_init", init_mode_name(mlp_init)},
          {"train_size", train_size},
          {"eval_batch", eval_batch},
          {"capacity_tolerance", capacity_tolerance}};
}

std::vector<std::size_t> match_mlp_hidden(std::size_t input, std::size_t depth, std::size_t target, double tol) {
  if (target == 0) throw std::invalid_argument("capacity target must be positive");
  auto count = [&](std::size_t h) { return FlatMLP::count_for(input, std::vector<std::size_t>(depth, h), 1); };
  if (depth == 0) {
    const auto n = count(0);
    const double rel = std::abs(double(n) - double(target)) / double(target);
    if (rel > tol)
      throw std::runtime_error("no hidden layers: closest parameter count " + std::to_string(n) + " vs target " +
                               std::to_string(target));
    return {};
  }
  std::size_t best = 1, best_n = count(1);
  for (std::size_t h = 2;; ++h) {
    const auto n = count(h);
    const auto diff = [&](std::size_t x) { return x > target ? x - target : target - x; };
    if (diff(n) < diff(best_n)) best = h, best_n = n;
    if (n > target) break;
  }
  const double rel = std::abs(double(best_n) - double(target)) / double(target);
  if (rel > tol)
    throw std::runtime_error("cannot match " + std::to_string(target) + " parameters within " +
                             std::to_string(tol) + ": closest achievable count is " + std::to_string(best_n) +
                             " (width " + std::to_string(best) + ")");
  return std::vector<std::size_t>(depth, best);
}

DWSNetConfig dwsnet_config(const WeightSpaceSpec& spec, const ExperimentConfig& config) {
  DWSNetConfig c;
  c.spec = spec;
  c.channels = config.channels;
  c.pool = config.pool;
  c.head_dim = config.head_dim;
  c.readout = config.readout;
  c.out_dim = 1;
  return c;
}

std::unique_ptr<WeightSpaceModel> build_model(ModelKind kind, const WeightSpaceSpec& spec,
                                              const ExperimentConfig& config) {
  auto dws = std::make_unique<DWSNet>(dwsnet_config(spec, config));
  if (kind == ModelKind::Dws) return dws;
  // DWS layers, head dense map, readout hidden layers, output layer
  const std::size_t depth = config.channels.size() + 1 + config.readout.size();
  auto hidden = match_mlp_hidden(spec.flat_dimension(), depth, dws->parameter_count(), config.capacity_tolerance);
  return std::make_unique<FlatMLP>(spec, std::move(hidden), 1);
}

PreparedData prepare_data(const Dataset& data, std::size_t train_size, std::uint64_t seed) {
  const auto& m = data.manifest;
  PreparedData out;
  out.spec = m.spec;
  auto take = [&](const std::vector<std::size_t>& idx, std::vector<std::vector<double>>& xs, std::vector<double>& ys) {
    for (auto i : idx) {
      if (i >= data.records.size()) throw std::out_of_range("split index " + std::to_string(i) + " out of range");
      const auto& r = data.records[i];
      if (!(r.weights.spec() == m.spec)) throw ShapeError("record " + std::to_string(i) + " does not match the manifest");
      auto flat = flatten(r.weights);
      xs.push_back(normalize(flat.data(), m.normalization));
      ys.push_back(r.label);
    }
  };
  std::vector<std::size_t> train = m.splits.train;
  if (train_size > 0) {
    if (train_size > train.size())
      throw std::invalid_argument("train size " + std::to_string(train_size) + " exceeds the train split (" +
                                  std::to_string(train.size()) + ")");
    Rng rng(derive_seed(seed, {kSubsetKey}));
    for (std::size_t i = train.size(); i > 1; --i) std::swap(train[i - 1], train[uniform_index(rng, i)]);
    train.resize(train_size);
    std::sort(train.begin(), train.end());
  }
  out.train_index = train;
  take(train, out.train_x, out.train_y);
  take(m.splits.val, out.val_x, out.val_y);
  take(m.splits.test, out.test_x, out.test_y);
  return out;
}

nlohmann::json RunReport::to_json(bool with_time) const {
  nlohmann::json runs_j = nlohmann::json::array();
  for (const auto& r : runs) {
    nlohmann::json ep = nlohmann::json::array();
    for (const auto& e : r.epochs)
      ep.push_back({{"epoch", e.epoch},
                    {"train_loss", std::isfinite(e.train_loss) ? nlohmann::json(e.train_loss) : nlohmann::json()},
                    {"val_mse", std::isfinite(e.val_mse) ? nlohmann::json(e.val_mse) : nlohmann::json()}});
    nlohmann::json rj = {{"lr", r.lr}, {"failed", r.failed}, {"epochs", ep}};
    if (r.failed) rj["error"] = r.error;
    else {
      rj["best_epoch"] = r.best_epoch;
      rj["best_val_mse"] = r.best_val_mse;
    }
    runs_j.push_back(rj);
  }
  nlohmann::json j = {{"kind", model_kind_name(kind)}, {"seed", seed},           {"train_size", train_size},
                      {"precision", precision_name(precision)}, {"params", params}, {"selected_lr", selected_lr},
                      {"test_mse", test_mse},                 {"runs", runs_j}};
  if (with_time) j["seconds"] = seconds;
  return j;
}

namespace {

template <typename T>
class GraphCache {
 public:
  struct Entry {
    Graph<T> g;
    NodeId x, y, out, loss;
  };

  explicit GraphCache(const WeightSpaceModel& model) : model_(model) {}

  const Entry& get(std::size_t batch) {
    auto it = cache_.find(batch);
    if (it != cache_.end()) return it->second;
    Entry e;
    const std::size_t d = model_.spec().flat_dimension();
    e.x = e.g.input("input", Shape{batch, d});
    e.y = e.g.input("target", Shape{batch, model_.out_dim()});
    e.out = model_.build(e.g, e.x);
    e.loss = e.g.mse(e.out, e.y);
    return cache_.emplace(batch, std::move(e)).first->second;
  }

 private:
  const WeightSpaceModel& model_;
  std::map<std::size_t, Entry> cache_;
};

template <typename T>
Tensor<T> batch_tensor(const std::vector<std::vector<double>>& rows, std::span<const std::size_t> idx) {
  const std::size_t d = rows.at(idx[0]).size();
  std::vector<T> buf;
  buf.reserve(idx.size() * d);
  for (auto i : idx)
    for (double v : rows[i]) buf.push_back(static_cast<T>(v));
  return Tensor<T>(Shape{idx.size(), d}, std::move(buf));
}

// raw-unit predictions
template <typename T>
std::vector<double> predict_with(GraphCache<T>& cache, Bindings<T>& b, const std::vector<std::vector<double>>& rows,
                                 double mean, double sd, std::size_t batch) {
  std::vector<double> out;
  out.reserve(rows.size());
  std::vector<std::size_t> idx(rows.size());
  std::iota(idx.begin(), idx.end(), 0);
  for (std::size_t s = 0; s < rows.size(); s += batch) {
    const std::size_t n = std::min(batch, rows.size() - s);
    const auto& e = cache.get(n);
    b.insert_or_assign("input", batch_tensor<T>(rows, std::span(idx).subspan(s, n)));
    auto y = forward_eval(e.g, b, e.out);
    for (std::size_t k = 0; k < n; ++k) out.push_back(static_cast<double>(y[k]) * sd + mean);
  }
  b.erase("input");
  return out;
}

double mse_of(const std::vector<double>& pred, const std::vector<double>& truth) {
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) s += (pred[i] - truth[i]) * (pred[i] - truth[i]);
  return s / double(pred.size());
}

Bindings<double> strip_io(const Bindings<double>& b) {
  Bindings<double> out = b;
  out.erase("input");
  out.erase("target");
  return out;
}

std::vector<double> augment_row(const WeightSpaceSpec& spec, const std::vector<double>& row, Rng& rng) {
  const auto g = sample_group_element(spec, rng);
  auto t = flatten(apply_action(g, unflatten(spec, 1, row)));
  return {t.data().begin(), t.data().end()};
}

template <typename T>
TrainResult train_impl(std::unique_ptr<WeightSpaceModel> model, const PreparedData& data,
                       const ExperimentConfig& config, Precision precision) {
  const auto start = std::chrono::steady_clock::now();
  config.validate();
  if (data.train_x.empty()) throw std::invalid_argument("training split is empty");
  if (data.val_x.empty()) throw std::invalid_argument("validation split is empty");
  if (data.test_x.empty()) throw std::invalid_argument("test split is empty");

  TrainResult res;
  const std::size_t n = data.train_x.size();
  double mean = 0.0, var = 0.0;
  for (double y : data.train_y) mean += y;
  mean /= double(n);
  for (double y : data.train_y) var += (y - mean) * (y - mean);
  const double sd = std::max(std::sqrt(var / double(n)), 1e-8);
  std::vector<double> ystd(n);
  for (std::size_t i = 0; i < n; ++i) ystd[i] = (data.train_y[i] - mean) / sd;

  Rng init_rng(derive_seed(config.seed, {kInitKey}));
  const auto init = init_parameters(model->parameters(), config.kind == ModelKind::Dws ? config.init : config.mlp_init,
                                    config.mu, init_rng);

  GraphCache<T> cache(*model);
  RunReport& rep = res.report;
  rep.kind = config.kind;
  rep.seed = config.seed;
  rep.train_size = n;
  rep.precision = precision;
  rep.params = model->parameter_count();

  std::vector<Bindings<double>> best_params(config.lr_grid.size());
  for (std::size_t li = 0; li < config.lr_grid.size(); ++li) {
    LrRun run;
    run.lr = config.lr_grid[li];
    Bindings<T> b = cast_bindings<T>(init);
    OptimizerState<T> opt;
    opt.config.learning_rate = run.lr;
    opt.config.weight_decay = config.weight_decay;
    Rng order_rng(derive_seed(config.seed, {kOrderKey, li}));
    Rng aug_rng(derive_seed(config.seed, {kAugKey, li}));

    auto val = [&] { return mse_of(predict_with(cache, b, data.val_x, mean, sd, config.eval_batch), data.val_y); };
    run.best_val_mse = val();
    run.best_epoch = 0;
    run.epochs.push_back({0, std::numeric_limits<double>::quiet_NaN(), run.best_val_mse});
    best_params[li] = to_double(b);

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::vector<std::vector<double>> aug_rows;
    std::vector<std::size_t> aug_idx;
    try {
      for (std::size_t ep = 1; ep <= config.epochs; ++ep) {
        for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[uniform_index(order_rng, i)]);
        double total = 0.0;
        for (std::size_t s = 0; s < n; s += config.batch_size) {
          const std::size_t m = std::min(config.batch_size, n - s);
          std::span<const std::size_t> idx(order.data() + s, m);
          const auto& e = cache.get(m);
          if (config.augmenting()) {
            aug_rows.clear();
            for (auto i : idx) aug_rows.push_back(augment_row(data.spec, data.train_x[i], aug_rng));
            aug_idx.resize(m);
            std::iota(aug_idx.begin(), aug_idx.end(), 0);
            b.insert_or_assign("input", batch_tensor<T>(aug_rows, aug_idx));
          } else {
            b.insert_or_assign("input", batch_tensor<T>(data.train_x, idx));
          }
          std::vector<T> ty;
          for (auto i : idx) ty.push_back(static_cast<T>(ystd[i]));
          b.insert_or_assign("target", Tensor<T>(Shape{m, 1}, std::move(ty)));
          auto gr = backward_grad(e.g, b, e.loss);
          if (!std::isfinite(static_cast<double>(gr.loss)))
            throw std::domain_error("non-finite loss at epoch " + std::to_string(ep));
          adam_step(b, gr.grads, opt);
          total += static_cast<double>(gr.loss) * double(m);
        }
        b.erase("input");
        b.erase("target");
        const double v = val();
        if (!std::isfinite(v)) throw std::domain_error("non-finite validation loss at epoch " + std::to_string(ep));
        run.epochs.push_back({ep, total / double(n), v});
        if (v < run.best_val_mse) {
          run.best_val_mse = v;
          run.best_epoch = ep;
          best_params[li] = to_double(b);
        }
      }
    } catch (const std::domain_error& err) {
      run.failed = true;
      run.error = err.what();
    }
    rep.runs.push_back(std::move(run));
  }

  std::size_t pick = rep.runs.size();
  for (std::size_t li = 0; li < rep.runs.size(); ++li)
    if (!rep.runs[li].failed && (pick == rep.runs.size() || rep.runs[li].best_val_mse < rep.runs[pick].best_val_mse))
      pick = li;
  if (pick == rep.runs.size()) {
    std::string msg = "every learning rate failed:";
    for (const auto& r : rep.runs) msg += " [" + std::to_string(r.lr) + ": " + r.error + "]";
    throw std::runtime_error(msg);
  }
  rep.selected_lr = rep.runs[pick].lr;
  res.params = strip_io(best_params[pick]);
  {
    Bindings<T> b = cast_bindings<T>(res.params);
    rep.test_mse = mse_of(predict_with(cache, b, data.test_x, mean, sd, config.eval_batch), data.test_y);
  }
  res.label_mean = mean;
  res.label_std = sd;
  res.model = std::move(model);
  rep.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return res;
}

template <typename T>
std::vector<double> predict_impl(const WeightSpaceModel& model, const Bindings<double>& params,
                                 const std::vector<std::vector<double>>& rows, double mean, double sd,
                                 std::size_t batch) {
  if (rows.empty()) return {};
  GraphCache<T> cache(model);
  Bindings<T> b = cast_bindings<T>(params);
  return predict_with(cache, b, rows, mean, sd, batch);
}

}  // namespace

TrainResult train_model(std::unique_ptr<WeightSpaceModel> model, const PreparedData& data,
                        const ExperimentConfig& config, Precision precision) {
  if (!model) throw std::invalid_argument("train_model: no model");
  if (!(model->spec() == data.spec)) throw ShapeError("model and dataset specs differ");
  if (precision == Precision::F32) return train_impl<float>(std::move(model), data, config, precision);
  return train_impl<double>(std::move(model), data, config, precision);
}

std::vector<double> predict(const WeightSpaceModel& model, const Bindings<double>& params,
                            const std::vector<std::vector<double>>& rows, double label_mean, double label_std,
                            Precision precision, std::size_t batch) {
  if (batch == 0) throw std::invalid_argument("predict: batch must be positive");
  if (precision == Precision::F32) return predict_impl<float>(model, params, rows, label_mean, label_std, batch);
  return predict_impl<double>(model, params, rows, label_mean, label_std, batch);
}

Checkpoint make_checkpoint(const TrainResult& result, const ExperimentConfig& config) {
  Checkpoint c;
  c.header = {{"format", "dws-checkpoint"},
              {"version", 1},
              {"kind", model_kind_name(config.kind)},
              {"model", result.model->to_json()},
              {"label_mean", result.label_mean},
              {"label_std", result.label_std},
              {"precision", precision_name(result.report.precision)},
              {"config", config.to_json()},
              {"report", result.report.to_json(false)}};
  c.parameters = result.params;
  return c;
}

LoadedModel load_model(const std::string& checkpoint_path) {
  auto c = load_checkpoint(checkpoint_path);
  LoadedModel m;
  m.model = model_from_json(c.header.at("model"));
  m.label_mean = c.header.at("label_mean").get<double>();
  m.label_std = c.header.at("label_std").get<double>();
  for (const auto& p : m.model->parameters()) {
    auto it = c.parameters.find(p.name);
    if (it == c.parameters.end()) throw std::runtime_error("checkpoint lacks parameter '" + p.name + "'");
    if (it->second.shape() != p.shape) throw ShapeError("checkpoint parameter '" + p.name + "' has the wrong shape");
  }
  if (c.parameters.size() != m.model->parameters().size())
    throw std::runtime_error("checkpoint has parameters the model does not use");
  m.params = std::move(c.parameters);
  return m;
}

nlohmann::json EvalReport::to_json() const {
  return {{"count", count}, {"test_mse", test_mse}, {"invariance_gap", invariance_gap}};
}

double invariance_gap(const WeightSpaceModel& model, const Bindings<double>& params,
                      const std::vector<std::vector<double>>& rows, const WeightSpaceSpec& spec, double label_mean,
                      double label_std, std::uint64_t seed, Precision precision) {
  Rng rng(seed);
  std::vector<std::vector<double>> moved;
  moved.reserve(rows.size());
  for (const auto& r : rows) moved.push_back(augment_row(spec, r, rng));
  const auto a = predict(model, params, rows, label_mean, label_std, precision);
  const auto b = predict(model, params, moved, label_mean, label_std, precision);
  double gap = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) gap = std::max(gap, std::abs(a[i] - b[i]));
  return gap;
}

EvalReport evaluate(const LoadedModel& model, const PreparedData& data, std::uint64_t seed, Precision precision) {
  if (!(model.model->spec() == data.spec)) throw ShapeError("checkpoint and dataset specs differ");
  EvalReport r;
  r.count = data.test_x.size();
  const auto pred = predict(*model.model, model.params, data.test_x, model.label_mean, model.label_std, precision);
  r.test_mse = pred.empty() ? 0.0 : mse_of(pred, data.test_y);
  r.invariance_gap = invariance_gap(*model.model, model.params, data.test_x, data.spec, model.label_mean,
                                    model.label_std, seed, precision);
  return r;
}

std::vector<CurveRow> run_curve(const Dataset& data, const std::vector<std::size_t>& sizes,
                                const std::vector<ModelKind>& kinds, std::size_t seeds, const ExperimentConfig& config,
                                Precision precision, std::ostream* log, const CurveHook& on_result) {
  std::vector<CurveRow> rows;
  for (auto size : sizes) {
    if (size == 0 || size > data.manifest.splits.train.size())
      throw std::invalid_argument("train size " + std::to_string(size) + " is not within the train split");
    for (auto kind : kinds)
      for (std::size_t k = 0; k < seeds; ++k) {
        ExperimentConfig c = config;
        c.kind = kind;
        c.seed = config.seed + k;
        c.train_size = size;
        auto prepared = prepare_data(data, size, c.seed);
        auto res = train_model(build_model(kind, data.manifest.spec, c), prepared, c, precision);
        CurveRow row{model_kind_name(kind), size, c.seed, res.report.selected_lr, res.report.test_mse,
                     res.report.params, res.report.seconds};
        if (log)
          *log << row.kind << " size=" << size << " seed=" << row.seed << " lr=" << row.lr
               << " test_mse=" << row.test_mse << " (" << row.seconds << " s)" << std::endl;
        if (on_result) on_result(row, res, prepared);
        rows.push_back(std::move(row));
      }
  }
  return rows;
}

std::vector<CurveSummary> summarize_curve(const std::vector<CurveRow>& rows) {
  std::vector<CurveSummary> out;
  std::vector<std::vector<double>> vals;
  for (const auto& r : rows) {
    auto it = std::find_if(out.begin(), out.end(), [&](const auto& s) { return s.kind == r.kind && s.size == r.size; });
    if (it == out.end()) {
      out.push_back({r.kind, r.size, 0, 0.0, 0.0});
      vals.emplace_back();
      it = out.end() - 1;
    }
    vals[std::size_t(it - out.begin())].push_back(r.test_mse);
  }
  for (std::size_t i = 0; i < out.size(); ++i) {
    const auto& v = vals[i];
    out[i].runs = v.size();
    out[i].mean = std::accumulate(v.begin(), v.end(), 0.0) / double(v.size());
    double s = 0.0;
    for (double x : v) s += (x - out[i].mean) * (x - out[i].mean);
    out[i].std = std::sqrt(s / double(v.size()));
  }
  return out;
}

void write_curve_csv(std::ostream& os, const std::vector<CurveRow>& rows) {
  os << "kind,size,seed,lr,test_mse,params,seconds\n";
  for (const auto& r : rows)
    os << r.kind << ',' << r.size << ',' << r.seed << ',' << format_real(r.lr) << ',' << format_real(r.test_mse) << ','
       << r.params << ',' << format_real(r.seconds) << '\n';
}

std::vector<CurveRow> read_curve_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line != "kind,size,seed,lr,test_mse,params,seconds")
    throw std::runtime_error("curve csv: unexpected header");
  std::vector<CurveRow> rows;
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    if (f.size() != 7) throw std::runtime_error("curve csv line " + std::to_string(lineno) + ": expected 7 fields");
    try {
      rows.push_back({f[0], std::stoull(f[1]), std::stoull(f[2]), std::stod(f[3]), std::stod(f[4]), std::stoull(f[5]),
                      std::stod(f[6])});
    } catch (const std::logic_error&) {
      throw std::runtime_error("curve csv line " + std::to_string(lineno) + ": bad number");
    }
  }
  return rows;
}

}  // namespace dws
