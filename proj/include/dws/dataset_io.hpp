#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include <json.hpp>

#include "dws/weight_space.hpp"

namespace dws {

/// One network of a dataset: single-channel weights plus scalar label.
struct DatasetRecord {
  WeightSpaceVector weights;
  double label = 0.0;
  std::uint64_t seed = 0;
};

struct Splits {
  std::vector<std::size_t> train, val, test;
};

struct Manifest {
  Splits splits;
  NormalizationStats normalization;
  WeightSpaceSpec spec;
  nlohmann::json extra = nlohmann::json::object();  // anything else worth keeping
};

/// {"dims":[...],"weights":[[...],...],"biases":[[...],...],"label":x,"seed":n}
void write_record(std::ostream& os, const DatasetRecord& record);
DatasetRecord parse_record(const std::string& line);

void write_dataset(const std::string& path, const std::vector<DatasetRecord>& records);
std::vector<DatasetRecord> read_dataset(const std::string& path);

void write_manifest(const std::string& path, const Manifest& manifest);
Manifest read_manifest(const std::string& path);

/// dataset.jsonl + manifest.json inside one directory.
struct Dataset {
  std::vector<DatasetRecord> records;
  Manifest manifest;
};
Dataset load_dataset_dir(const std::string& dir);
std::string dataset_file(const std::string& dir);
std::string manifest_file(const std::string& dir);

}  // namespace dws
