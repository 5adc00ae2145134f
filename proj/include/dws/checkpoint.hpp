#pragma once

#include <iosfwd>
#include <span>
#include <string>

#include <json.hpp>

#include "dws/graph.hpp"

namespace dws {

/// Decimal with 17 significant digits; round-trips every finite double.
std::string format_real(double value);
void write_real_array(std::ostream& os, std::span<const double> values);

struct Checkpoint {
  nlohmann::json header = nlohmann::json::object();
  Bindings<double> parameters;
};

/// {"header": {...}, "parameters": {name: {"shape": [...], "values": [...]}}}
/// with parameter values in flat row-major order.
void write_checkpoint(std::ostream& os, const Checkpoint& checkpoint);
void save_checkpoint(const std::string& path, const Checkpoint& checkpoint);
Checkpoint read_checkpoint(std::istream& is);
Checkpoint load_checkpoint(const std::string& path);

template <typename T>
Bindings<T> cast_bindings(const Bindings<double>& params) {
  Bindings<T> out;
  for (const auto& [name, t] : params) out.emplace(name, t.template cast<T>());
  return out;
}

template <typename T>
Bindings<double> to_double(const Bindings<T>& params) {
  Bindings<double> out;
  for (const auto& [name, t] : params) out.emplace(name, t.template cast<double>());
  return out;
}

}  // namespace dws
