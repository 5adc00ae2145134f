#include "dws/dataset_io.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "dws/checkpoint.hpp"

namespace dws {

namespace {

void write_size_array(std::ostream& os, const std::vector<std::size_t>& v) {
  os << '[';
  for (std::size_t i = 0; i < v.size(); ++i) os << (i ? "," : "") << v[i];
  os << ']';
}

}  // namespace

void write_record(std::ostream& os, const DatasetRecord& r) {
  const auto& v = r.weights;
  if (v.channels() != 1) throw std::invalid_argument("dataset records hold single-channel networks");
  const auto& spec = v.spec();
  os << "{\"dims\":";
  write_size_array(os, spec.dims());
  os << ",\"weights\":[";
  for (std::size_t m = 1; m <= spec.layers(); ++m) {
    if (m > 1) os << ',';
    write_real_array(os, v.weight(m).data());
  }
  os << "],\"biases\":[";
  for (std::size_t m = 1; m <= spec.layers(); ++m) {
    if (m > 1) os << ',';
    write_real_array(os, v.bias(m).data());
  }
  os << "],\"label\":" << format_real(r.label) << ",\"seed\":" << r.seed << "}\n";
}

DatasetRecord parse_record(const std::string& line) {
  const auto j = nlohmann::json::parse(line);
  WeightSpaceSpec spec(j.at("dims").get<std::vector<std::size_t>>());
  const auto& ws = j.at("weights");
  const auto& bs = j.at("biases");
  if (ws.size() != spec.layers() || bs.size() != spec.layers())
    throw ShapeError("record has " + std::to_string(ws.size()) + " weights / " + std::to_string(bs.size()) +
                     " biases for " + std::to_string(spec.layers()) + " layers");
  DatasetRecord r{WeightSpaceVector(spec, 1), j.at("label").get<double>(), j.at("seed").get<std::uint64_t>()};
  for (std::size_t m = 1; m <= spec.layers(); ++m) {
    auto w = ws[m - 1].get<std::vector<double>>();
    auto b = bs[m - 1].get<std::vector<double>>();
    auto wd = r.weights.weight(m).data();
    auto bd = r.weights.bias(m).data();
    if (w.size() != wd.size() || b.size() != bd.size())
      throw ShapeError("layer " + std::to_string(m) + " sizes do not match dims " + spec.to_string());
    std::copy(w.begin(), w.end(), wd.begin());
    std::copy(b.begin(), b.end(), bd.begin());
  }
  return r;
}

void write_dataset(const std::string& path, const std::vector<DatasetRecord>& records) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write dataset: " + path);
  for (const auto& r : records) write_record(os, r);
  if (!os) throw std::runtime_error("failed writing dataset: " + path);
}

std::vector<DatasetRecord> read_dataset(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open dataset: " + path);
  std::vector<DatasetRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      out.push_back(parse_record(line));
    } catch (const std::exception& e) {
      throw std::runtime_error(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

void write_manifest(const std::string& path, const Manifest& m) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write manifest: " + path);
  os << "{\"splits\":{\"train\":";
  write_size_array(os, m.splits.train);
  os << ",\"val\":";
  write_size_array(os, m.splits.val);
  os << ",\"test\":";
  write_size_array(os, m.splits.test);
  os << "},\n\"normalization\":{\"mean\":";
  write_real_array(os, m.normalization.mean);
  os << ",\n\"std\":";
  write_real_array(os, m.normalization.stddev);
  os << "},\n\"spec\":{\"dims\":";
  write_size_array(os, m.spec.dims());
  os << "}";
  for (const auto& [key, value] : m.extra.items()) os << ",\n" << nlohmann::json(key).dump() << ':' << value.dump();
  os << "}\n";
  if (!os) throw std::runtime_error("failed writing manifest: " + path);
}

Manifest read_manifest(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open manifest: " + path);
  auto j = nlohmann::json::parse(is);
  Manifest m;
  const auto& s = j.at("splits");
  m.splits.train = s.at("train").get<std::vector<std::size_t>>();
  m.splits.val = s.at("val").get<std::vector<std::size_t>>();
  m.splits.test = s.at("test").get<std::vector<std::size_t>>();
  m.normalization.mean = j.at("normalization").at("mean").get<std::vector<double>>();
  m.normalization.stddev = j.at("normalization").at("std").get<std::vector<double>>();
  m.spec = WeightSpaceSpec(j.at("spec").at("dims").get<std::vector<std::size_t>>());
  for (auto& [key, value] : j.items())
    if (key != "splits" && key != "normalization" && key != "spec") m.extra[key] = value;
  return m;
}

std::string dataset_file(const std::string& dir) { return (std::filesystem::path(dir) / "dataset.jsonl").string(); }
std::string manifest_file(const std::string& dir) { return (std::filesystem::path(dir) / "manifest.json").string(); }

Dataset load_dataset_dir(const std::string& dir) {
  Dataset d{read_dataset(dataset_file(dir)), read_manifest(manifest_file(dir))};
  const auto n = d.records.size();
  for (const auto* split : {&d.manifest.splits.train, &d.manifest.splits.val, &d.manifest.splits.test})
    for (auto i : *split)
      if (i >= n) throw std::runtime_error("manifest split index " + std::to_string(i) + " beyond dataset size");
  for (const auto& r : d.records)
    if (!(r.weights.spec() == d.manifest.spec)) throw std::runtime_error("record dims differ from manifest spec");
  return d;
}

}  // namespace dws
