#include "dws/model_zoo.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "dws/checkpoint.hpp"
#include "dws/graph.hpp"
#include "dws/optim.hpp"

namespace dws {

ActivationKind parse_activation(const std::string& text) {
  if (text == "relu") return ActivationKind::Relu;
  if (text == "sine") return ActivationKind::Sine;
  if (text == "none") return ActivationKind::None;
  throw std::invalid_argument("activation must be relu, sine or none, got '" + text + "'");
}

const char* activation_name(ActivationKind kind) {
  switch (kind) {
    case ActivationKind::Relu: return "relu";
    case ActivationKind::Sine: return "sine";
    case ActivationKind::None: return "none";
  }
  return "?";
}

namespace {

double activate(double x, ActivationKind act) {
  switch (act) {
    case ActivationKind::Relu: return x > 0 ? x : 0.0;
    case ActivationKind::Sine: return std::sin(x);
    case ActivationKind::None: return x;
  }
  return x;
}

}  // namespace

Tensor<double> mlp_forward(const WeightSpaceVector& v, const Tensor<double>& x, ActivationKind act,
                           bool final_activation) {
  if (v.channels() != 1) throw ShapeError("mlp_forward needs a single-channel weight vector");
  const auto& spec = v.spec();
  const bool single = x.rank() == 1;
  if ((x.rank() != 1 && x.rank() != 2) || x.shape().back() != spec.dim(0))
    throw ShapeError("mlp_forward expects (" + std::to_string(spec.dim(0)) + ") or (N, " +
                     std::to_string(spec.dim(0)) + "), got " + shape_to_string(x.shape()));
  const std::size_t n = single ? 1 : x.shape()[0];
  std::vector<double> cur(x.data().begin(), x.data().end()), next;
  const std::size_t M = spec.layers();
  for (std::size_t m = 1; m <= M; ++m) {
    const std::size_t din = spec.dim(m - 1), dout = spec.dim(m);
    const auto& W = v.weight(m);
    const auto& b = v.bias(m);
    const bool last = m == M;
    next.assign(n * dout, 0.0);
    for (std::size_t s = 0; s < n; ++s)
      for (std::size_t i = 0; i < dout; ++i) {
        double acc = b[i];
        for (std::size_t j = 0; j < din; ++j) acc += W[i * din + j] * cur[s * din + j];
        next[s * dout + i] = (!last || final_activation) ? activate(acc, act) : acc;
      }
    cur.swap(next);
  }
  return single ? Tensor<double>(Shape{spec.dim(M)}, std::move(cur)) : Tensor<double>(Shape{n, spec.dim(M)}, std::move(cur));
}

std::vector<double> sine_grid(std::size_t n) {
  if (n < 2) throw std::invalid_argument("grid needs at least 2 points");
  std::vector<double> g(n);
  const double pi = std::numbers::pi;
  for (std::size_t i = 0; i < n; ++i) g[i] = -pi + 2.0 * pi * static_cast<double>(i) / static_cast<double>(n - 1);
  return g;
}

SineTask sample_sine_task(double lo, double hi, std::size_t grid_size, Rng& rng) {
  if (!(lo < hi)) throw std::invalid_argument("frequency range needs lo < hi");
  SineTask t;
  do t.frequency = uniform(rng, lo, hi);
  while (t.frequency <= lo);  // open interval
  t.grid = sine_grid(grid_size);
  return t;
}

namespace {

std::string wname(std::size_t m) { return "w" + std::to_string(m); }
std::string bname(std::size_t m) { return "b" + std::to_string(m); }

// SIREN: first layer U(-1/d0, 1/d0), later layers U(+-sqrt(6/n)/omega0),
// biases U(+-1/sqrt(n)).
Bindings<double> siren_init(const std::vector<std::size_t>& arch, double omega0, Rng& rng) {
  Bindings<double> p;
  for (std::size_t m = 1; m < arch.size(); ++m) {
    const std::size_t n = arch[m - 1];
    const double wb = m == 1 ? 1.0 / static_cast<double>(n) : std::sqrt(6.0 / static_cast<double>(n)) / omega0;
    const double bb = 1.0 / std::sqrt(static_cast<double>(n));
    Tensor<double> w(Shape{arch[m], n}), b(Shape{arch[m]});
    for (auto& x : w.data()) x = uniform(rng, -wb, wb);
    for (auto& x : b.data()) x = uniform(rng, -bb, bb);
    p.insert_or_assign(wname(m), std::move(w));
    p.insert_or_assign(bname(m), std::move(b));
  }
  return p;
}

WeightSpaceVector export_siren(const std::vector<std::size_t>& arch, const Bindings<double>& p, double omega0) {
  WeightSpaceVector v(WeightSpaceSpec(arch), 1);
  for (std::size_t m = 1; m < arch.size(); ++m) {
    const double s = m == 1 ? omega0 : 1.0;
    const auto& w = p.at(wname(m));
    const auto& b = p.at(bname(m));
    for (std::size_t i = 0; i < w.size(); ++i) v.weight(m)[i] = s * w[i];
    for (std::size_t i = 0; i < b.size(); ++i) v.bias(m)[i] = s * b[i];
  }
  return v;
}

}  // namespace

InrFit train_inr(const SineTask& task, const InrOptions& opt, std::uint64_t seed) {
  const auto& arch = opt.arch;
  if (arch.size() < 3 || arch.front() != 1 || arch.back() != 1)
    throw std::invalid_argument("INR architecture must be 1 -> ... -> 1 with at least one hidden layer");
  const std::size_t N = task.grid.size();
  Rng rng(seed);
  auto params = siren_init(arch, opt.omega0, rng);

  Tensor<double> x(Shape{N, 1}, task.grid), y(Shape{N, 1});
  for (std::size_t i = 0; i < N; ++i) y[i] = task.amplitude * std::sin(task.frequency * task.grid[i]);

  Graph<double> g;
  NodeId h = g.input("x", {N, 1});
  const std::size_t M = arch.size() - 1;
  for (std::size_t m = 1; m <= M; ++m) {
    NodeId w = g.parameter(wname(m), {arch[m], arch[m - 1]});
    NodeId b = g.parameter(bname(m), {arch[m]});
    h = g.add(g.linear(h, w, 1), g.broadcast(b, 0, N));
    if (m == 1) h = g.scale(h, opt.omega0);
    if (m < M) h = g.sine(h);
  }
  NodeId loss = g.mse(h, g.input("y", {N, 1}));

  OptimizerState<double> state;
  state.config.learning_rate = opt.lr;
  Bindings<double> b = params;
  b.insert_or_assign("x", x);
  b.insert_or_assign("y", y);
  for (std::size_t step = 0; step < opt.steps; ++step) {
    auto gr = backward_grad(g, b, loss);
    if (!std::isfinite(gr.loss))
      throw std::runtime_error("INR fit diverged at step " + std::to_string(step) + " (seed " + std::to_string(seed) + ")");
    try {
      adam_step(b, gr.grads, state);
    } catch (const std::exception& e) {
      throw std::runtime_error(std::string(e.what()) + " (seed " + std::to_string(seed) + ")");
    }
  }

  InrFit fit;
  fit.steps = opt.steps;
  fit.weights = export_siren(arch, b, opt.omega0);
  auto pred = mlp_forward(fit.weights, x, ActivationKind::Sine);
  double se = 0;
  for (std::size_t i = 0; i < N; ++i) {
    const double e = pred[i] - y[i];
    se += e * e;
    fit.max_abs_error = std::max(fit.max_abs_error, std::abs(e));
  }
  fit.mse = se / static_cast<double>(N);
  if (!std::isfinite(fit.mse)) throw std::runtime_error("INR fit is not finite (seed " + std::to_string(seed) + ")");
  return fit;
}

KeyValues parse_key_values(const std::string& text) {
  KeyValues kv;
  std::istringstream is(text);
  std::string line;
  std::size_t lineno = 0;
  auto trim = [](std::string s) {
    const auto a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return std::string();
    return s.substr(a, s.find_last_not_of(" \t\r") - a + 1);
  };
  while (std::getline(is, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw std::invalid_argument("line " + std::to_string(lineno) + ": expected key = value");
    auto key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
    if (key.empty()) throw std::invalid_argument("line " + std::to_string(lineno) + ": empty key");
    if (!kv.emplace(key, value).second)
      throw std::invalid_argument("line " + std::to_string(lineno) + ": duplicate key '" + key + "'");
  }
  return kv;
}

KeyValues read_key_values(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return parse_key_values(ss.str());
  } catch (const std::invalid_argument& e) {
    throw std::invalid_argument(path + ": " + e.what());
  }
}

std::vector<std::size_t> parse_size_list(const std::string& key, const std::string& text) {
  std::vector<std::size_t> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::size_t pos = 0;
    unsigned long long v = 0;
    try {
      v = std::stoull(item, &pos);
    } catch (const std::exception&) {
      pos = 0;
    }
    if (pos == 0 || item.find_first_not_of(" \t", pos) != std::string::npos || item.find('-') != std::string::npos)
      throw std::invalid_argument(key + ": bad integer '" + item + "'");
    out.push_back(static_cast<std::size_t>(v));
  }
  if (out.empty()) throw std::invalid_argument(key + ": empty list");
  return out;
}

double parse_real(const std::string& key, const std::string& text) {
  std::size_t pos = 0;
  double v = 0;
  try {
    v = std::stod(text, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos == 0 || pos != text.size() || !std::isfinite(v)) throw std::invalid_argument(key + ": bad number '" + text + "'");
  return v;
}

std::size_t parse_size(const std::string& key, const std::string& text) {
  auto l = parse_size_list(key, text);
  if (l.size() != 1) throw std::invalid_argument(key + ": expected one integer");
  return l[0];
}

std::vector<double> parse_real_list(const std::string& key, const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  auto trim = [](const std::string& x) {
    const auto a = x.find_first_not_of(" \t");
    return a == std::string::npos ? std::string() : x.substr(a, x.find_last_not_of(" \t") - a + 1);
  };
  while (std::getline(ss, item, ',')) out.push_back(parse_real(key, trim(item)));
  if (out.empty()) throw std::invalid_argument(key + ": empty list");
  return out;
}

SineDatasetConfig SineDatasetConfig::from_key_values(const KeyValues& kv) {
  SineDatasetConfig c;
  for (const auto& [k, v] : kv) {
    if (k == "count") c.count = parse_size(k, v);
    else if (k == "arch") c.arch = parse_size_list(k, v);
    else if (k == "grid") c.grid = parse_size(k, v);
    else if (k == "freq_lo") c.freq_lo = parse_real(k, v);
    else if (k == "freq_hi") c.freq_hi = parse_real(k, v);
    else if (k == "steps") c.steps = parse_size(k, v);
    else if (k == "lr") c.lr = parse_real(k, v);
    else if (k == "omega0") c.omega0 = parse_real(k, v);
    else if (k == "seed") c.seed = parse_size(k, v);
    else if (k == "splits") c.splits = parse_size_list(k, v);
    else if (k == "max_abs_threshold") c.max_abs_threshold = parse_real(k, v);
    else if (k == "mse_threshold") c.mse_threshold = parse_real(k, v);
    else if (k == "max_candidates") c.max_candidates = parse_size(k, v);
    else throw std::invalid_argument("unknown config key '" + k + "'");
  }
  if (c.splits.size() != 3) throw std::invalid_argument("splits needs three sizes: train,val,test");
  if (c.splits[0] + c.splits[1] + c.splits[2] != c.count)
    throw std::invalid_argument("splits must add up to count");
  if (!(c.freq_lo < c.freq_hi)) throw std::invalid_argument("freq_lo must be below freq_hi");
  if (!(c.lr > 0)) throw std::invalid_argument("lr must be positive");
  return c;
}

nlohmann::json SineDatasetConfig::to_json() const {
  return {{"count", count},   {"arch", arch},     {"grid", grid},   {"freq_lo", freq_lo},
          {"freq_hi", freq_hi}, {"steps", steps}, {"lr", lr},       {"omega0", omega0},
          {"seed", seed},     {"splits", splits}, {"max_abs_threshold", max_abs_threshold},
          {"mse_threshold", mse_threshold},        {"max_candidates", max_candidates}};
}

GenerationSummary generate_sine_dataset(const SineDatasetConfig& c, const std::string& out_dir, std::ostream* log) {
  if (c.splits.size() != 3 || c.splits[0] + c.splits[1] + c.splits[2] != c.count)
    throw std::invalid_argument("splits must be three sizes adding up to count");
  const std::size_t cap = c.max_candidates ? c.max_candidates : 2 * c.count;
  InrOptions opt{c.arch, c.steps, c.lr, c.omega0};

  GenerationSummary summary;
  std::vector<DatasetRecord> records;
  for (std::size_t i = 0; i < cap && records.size() < c.count; ++i) {
    const std::uint64_t seed = derive_seed(c.seed, {0x696e72ULL, i});
    Rng task_rng(derive_seed(seed, {1}));
    auto task = sample_sine_task(c.freq_lo, c.freq_hi, c.grid, task_rng);
    InrFit fit;
    std::string failure;
    try {
      fit = train_inr(task, opt, seed);
      if (!(fit.max_abs_error <= c.max_abs_threshold && fit.mse <= c.mse_threshold)) failure = "fit above threshold";
    } catch (const std::runtime_error& e) {
      failure = e.what();
      fit.mse = fit.max_abs_error = -1.0;
    }
    if (!failure.empty()) {
      summary.rejected.push_back({{"seed", seed},
                                  {"frequency", task.frequency},
                                  {"mse", fit.mse},
                                  {"max_abs_error", fit.max_abs_error},
                                  {"reason", failure}});
      if (log) *log << "rejected candidate " << i << " (frequency " << task.frequency << "): " << failure << "\n";
      continue;
    }
    records.push_back({std::move(fit.weights), task.frequency, seed});
    if (log && records.size() % 50 == 0) *log << "fitted " << records.size() << "/" << c.count << "\n";
  }
  if (records.size() < c.count)
    throw std::runtime_error("only " + std::to_string(records.size()) + " of " + std::to_string(c.count) +
                             " INRs passed the fit gate after " + std::to_string(cap) + " candidates");
  summary.accepted = records.size();

  std::vector<std::size_t> order(records.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng split_rng(derive_seed(c.seed, {0x73706c6974ULL}));
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[uniform_index(split_rng, i)]);

  Manifest m;
  m.spec = WeightSpaceSpec(c.arch);
  auto take = [&](std::size_t from, std::size_t n) {
    std::vector<std::size_t> s(order.begin() + static_cast<std::ptrdiff_t>(from),
                               order.begin() + static_cast<std::ptrdiff_t>(from + n));
    std::sort(s.begin(), s.end());
    return s;
  };
  m.splits.train = take(0, c.splits[0]);
  m.splits.val = take(c.splits[0], c.splits[1]);
  m.splits.test = take(c.splits[0] + c.splits[1], c.splits[2]);

  std::vector<std::vector<double>> rows;
  for (auto i : m.splits.train) {
    auto f = flatten(records[i].weights);
    rows.emplace_back(f.data().begin(), f.data().end());
  }
  m.normalization = compute_normalization(rows);
  m.extra = {{"task", "sine-frequency"},
             {"label", "frequency"},
             {"activation", "sine"},
             {"omega0", c.omega0},
             {"omega0_folded_into_first_layer", true},
             {"fit_threshold", {{"max_abs_error", c.max_abs_threshold}, {"mse", c.mse_threshold}}},
             {"excluded", summary.rejected},
             {"normalization_order", "normalize then augment"},
             {"config", c.to_json()}};

  std::filesystem::create_directories(out_dir);
  write_dataset(dataset_file(out_dir), records);
  write_manifest(manifest_file(out_dir), m);
  return summary;
}

}  // namespace dws
