#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "fedbss/data.hpp"
#include "fedbss/federation.hpp"
#include "fedbss/nn.hpp"

namespace fedbss::cli {

enum class DataSource { kSynthetic, kIdx };

struct DatasetSpec {
  DataSource source = DataSource::kSynthetic;
  std::filesystem::path train_images, train_labels, test_images, test_labels;
  std::size_t train_subset = 0;  // 0 keeps every sample
  std::size_t test_subset = 0;
  std::uint64_t data_seed = 0;   // synthetic draws and subset selection
  std::size_t synth_classes = 10;
  std::size_t synth_per_class = 600;
  std::size_t synth_test_per_class = 100;
  std::size_t synth_dim = 32;
  double synth_spread = 1.0;
  double noise_ratio = 0.0;
  bool noise_before_partition = true;

  friend bool operator==(const DatasetSpec&, const DatasetSpec&) = default;
};

struct ModelSpec {
  nn::ModelKind kind = nn::ModelKind::kMlp;
  std::size_t hidden = 128;

  friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

// One experiment: everything but the seed is fixed, and each listed seed
// drives partitioning, noise, initialisation, client sampling and shuffles.
struct ExperimentConfig {
  std::string name;
  DatasetSpec dataset;
  data::PartitionSpec partition;
  federation::FederationConfig federation;
  ModelSpec model;
  std::filesystem::path output_dir = "runs";
  std::vector<std::uint64_t> seeds{1};
  bool dump_scores = false;

  void validate() const;
  std::string label() const;

  friend bool operator==(const ExperimentConfig&, const ExperimentConfig&) = default;
};

std::string_view model_kind_name(nn::ModelKind kind);
nn::ModelKind parse_model_kind(std::string_view name);

// `key = value` lines, '#' comments. Unknown or repeated keys are errors.
ExperimentConfig parse_config_text(std::string_view text, std::string_view origin = "<config>");
ExperimentConfig parse_config(const std::filesystem::path& path);

// Every key with its resolved value; parse_config_text(echo_config(c)) == c.
std::string echo_config(const ExperimentConfig& config);

}  // namespace fedbss::cli
