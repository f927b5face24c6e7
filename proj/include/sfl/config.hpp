#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include "sfl/protocols.hpp"

namespace sfl {

struct DatasetConfig {
  std::string kind = "blobs";  // blobs | sdsh | csv | idx
  std::size_t n = 2000;        // blobs: training samples
  std::size_t n_test = 500;    // blobs: test samples
  std::size_t classes = 4;
  std::size_t dim = 16;
  Shape shape;  // optional per-sample shape (blobs, or reshaping a flat file)
  double separation = 6.0;
  std::optional<uint64_t> seed;  // defaults to a stream of the run seed
  std::string path, labels_path;            // training file(s)
  std::string test_path, test_labels_path;  // optional; else test_fraction
  double test_fraction = 0.2;
  std::size_t limit = 0;
};

struct ReportConfig {
  bool leakage = false;      // dcor,kl_nats columns
  std::size_t bins = 32;
  bool save_model = true;    // final parameters
  bool save_leakage = true;  // raw/smashed tensors for `sflctl leakage`
  bool reconcile = true;     // analytical vs measured traffic
};

struct ExperimentConfig {
  ExperimentSetup setup;  // everything except the partition plan
  std::string model_preset;
  std::optional<std::vector<LayerSpec>> custom_layers;
  std::size_t clients = 1;
  PartitionScheme scheme = PartitionScheme::kIid;
  std::size_t classes_per_client = 1;
  std::vector<std::size_t> quantity_sizes;
  DatasetConfig data;
  std::string output_dir = "runs/latest";
  ReportConfig reports;
  std::string host = "127.0.0.1";
  uint16_t port = 0;
};

// Strict: unknown keys, wrong types and out-of-range values raise ConfigError.
ExperimentConfig parse_config(const std::string& json_text);
ExperimentConfig load_config(const std::filesystem::path& path);

struct PreparedRun {
  ExperimentSetup setup;
  Dataset train;
  Dataset test;
};

// Loads or synthesizes the data, builds the model spec and partitions.
PreparedRun prepare(const ExperimentConfig& config);

}  // namespace sfl
