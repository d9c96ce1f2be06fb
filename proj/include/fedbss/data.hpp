#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "fedbss/nn.hpp"

namespace fedbss::data {

// Immutable labelled sample collection. samples has shape (S, feature dims...).
struct Dataset {
  nn::Tensor samples;
  std::vector<nn::Label> labels;
  std::size_t num_classes = 0;

  std::size_t size() const noexcept { return labels.size(); }
  nn::Shape sample_shape() const;
  // Throws if the invariants (S >= 1, labels in [0, C), counts agree) fail.
  void validate() const;

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

Dataset make_dataset(nn::Tensor samples, std::vector<nn::Label> labels, std::size_t num_classes);

// Copies the listed samples, in order, into a new dataset.
Dataset subset(const Dataset& parent, std::span<const std::size_t> indices);
nn::Tensor gather_samples(const Dataset& dataset, std::span<const std::size_t> indices);
std::vector<nn::Label> gather_labels(const Dataset& dataset, std::span<const std::size_t> indices);

// IDX files (big-endian magic and dims, unsigned bytes). Pixels are scaled
// to [0, 1]. num_classes == 0 infers max(label) + 1.
Dataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path,
                 std::size_t num_classes = 0);
Dataset parse_idx(std::span<const std::uint8_t> images, std::span<const std::uint8_t> labels,
                  std::size_t num_classes = 0);

// Class c samples are N(mean_c, spread^2 I); means are drawn from N(0, I)
// using the seed alone, so different sample_stream values give fresh samples
// (e.g. a test split) from the same mixture.
Dataset synth_gaussian_mixture(std::size_t n_classes, std::size_t n_per_class, std::size_t dim,
                               double spread, std::uint64_t seed, std::uint64_t sample_stream = 0);

enum class Scheme { kDirichlet, kShards };

struct PartitionSpec {
  Scheme scheme = Scheme::kDirichlet;
  std::size_t n_clients = 100;
  double dirichlet_alpha = 0.5;
  std::size_t shards_per_client = 2;
  std::uint64_t seed = 0;

  void validate() const;

  friend bool operator==(const PartitionSpec&, const PartitionSpec&) = default;
};

struct ClientPartition {
  std::size_t client_id = 0;
  std::vector<std::size_t> indices;  // ascending, into the parent dataset

  friend bool operator==(const ClientPartition&, const ClientPartition&) = default;
};

std::vector<ClientPartition> partition(const Dataset& dataset, const PartitionSpec& spec);
std::vector<ClientPartition> partition_dirichlet(const Dataset& dataset, const PartitionSpec& spec);
std::vector<ClientPartition> partition_shards(const Dataset& dataset, const PartitionSpec& spec);

// Symmetric noise: floor(ratio * S) seeded samples get a uniformly drawn
// different class. Returns a modified copy.
Dataset inject_label_noise(const Dataset& dataset, double ratio, std::uint64_t seed);

std::vector<std::size_t> label_histogram(const Dataset& dataset, std::span<const std::size_t> indices);
// Shannon entropy (nats) of a client's label distribution.
double label_entropy(const Dataset& dataset, std::span<const std::size_t> indices);

}  // namespace fedbss::data
