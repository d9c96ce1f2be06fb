#pragma once

#include <cstddef>
#include <span>
#include <string_view>
#include <vector>

#include "fedbss/data.hpp"
#include "fedbss/nn.hpp"

namespace fedbss::selection {

struct ScoreEntry {
  std::size_t sample = 0;  // position within the client dataset
  double loss = 0.0;
  double uncertainty = 0.0;

  friend bool operator==(const ScoreEntry&, const ScoreEntry&) = default;
};

// Client samples scored by the global model, ascending by loss. Entries at
// positions <= split_pos are unbiased, the rest biased.
struct SampleScoreTable {
  std::vector<ScoreEntry> entries;
  std::size_t split_pos = 0;

  std::size_t unbiased_count() const noexcept { return entries.empty() ? 0 : split_pos + 1; }
  std::size_t biased_count() const noexcept { return entries.size() - unbiased_count(); }
  bool is_biased(std::size_t position) const noexcept { return position > split_pos; }
};

// 1 - (max p - min p): 1 for a uniform prediction, 0 for a one-hot one.
double uncertainty(std::span<const double> probs);

SampleScoreTable score_samples(const nn::Model& global_model, const data::Dataset& client_data);

// Sorts entries by loss (stable) and sets split_pos.
SampleScoreTable make_table(std::vector<ScoreEntry> entries);

// Position of the maximum-uncertainty entry; the lowest position wins ties.
std::size_t split_point(std::span<const ScoreEntry> entries);

// (1 - cos(pi * e / e_total)) / 2 for 0 <= e <= e_total.
double schedule_alpha(std::size_t e, std::size_t e_total);

enum class Variant { kFilter, kLinear, kCosine };

Variant parse_variant(std::string_view name);
std::string_view variant_name(Variant variant);

struct EpochTrainingSet {
  std::vector<std::size_t> indices;  // client sample positions, ascending
  std::size_t epoch = 0;
  std::size_t epoch_total = 0;
  double alpha = 0.0;
};

// Cosine schedule over epochs 1..e_total: the first epoch trains on the
// unbiased samples only and the last epoch on every sample.
EpochTrainingSet epoch_training_set(const SampleScoreTable& table, std::size_t e, std::size_t e_total);
EpochTrainingSet strategy_variant(const SampleScoreTable& table, std::size_t e, std::size_t e_total,
                                  Variant variant);

}  // namespace fedbss::selection
