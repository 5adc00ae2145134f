#include "dws/checkpoint.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <ostream>
#include <stdexcept>

namespace dws {

std::string format_real(double value) {
  if (!std::isfinite(value)) throw std::domain_error("cannot serialize non-finite value");
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", value);
  return buf;
}

void write_real_array(std::ostream& os, std::span<const double> values) {
  os << '[';
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) os << ',';
    os << format_real(values[i]);
  }
  os << ']';
}

void write_checkpoint(std::ostream& os, const Checkpoint& checkpoint) {
  os << "{\"header\":" << checkpoint.header.dump() << ",\"parameters\":{";
  bool first = true;
  for (const auto& [name, tensor] : checkpoint.parameters) {
    if (!first) os << ',';
    first = false;
    os << '\n' << nlohmann::json(name).dump() << ":{\"shape\":" << nlohmann::json(tensor.shape()).dump()
       << ",\"values\":";
    write_real_array(os, tensor.data());
    os << '}';
  }
  os << "\n}}\n";
}

void save_checkpoint(const std::string& path, const Checkpoint& checkpoint) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open checkpoint for writing: " + path);
  write_checkpoint(os, checkpoint);
  if (!os) throw std::runtime_error("failed writing checkpoint: " + path);
}

Checkpoint read_checkpoint(std::istream& is) {
  const auto doc = nlohmann::json::parse(is);
  Checkpoint out;
  out.header = doc.at("header");
  for (const auto& [name, entry] : doc.at("parameters").items()) {
    auto shape = entry.at("shape").get<Shape>();
    auto values = entry.at("values").get<std::vector<double>>();
    out.parameters.emplace(name, Tensor<double>(std::move(shape), std::move(values)));
  }
  return out;
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open checkpoint: " + path);
  return read_checkpoint(is);
}

}  // namespace dws
