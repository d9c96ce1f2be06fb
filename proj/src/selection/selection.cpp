#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "fedbss/errors.hpp"
#include "fedbss/selection.hpp"

namespace fedbss::selection {
namespace {

constexpr std::size_t kScoringBatch = 256;

// floor(alpha * n) robust to alpha landing one ulp under an exact
// fraction, e.g. alpha(5, 10) = 0.49999999999999994.
std::size_t scaled_count(double alpha, std::size_t n) {
  const double exact = alpha * static_cast<double>(n);
  return std::min(n, static_cast<std::size_t>(std::floor(exact + 1e-9)));
}

EpochTrainingSet build(const SampleScoreTable& table, std::size_t e, std::size_t e_total, double alpha,
                       std::size_t biased_taken) {
  EpochTrainingSet out{{}, e, e_total, alpha};
  const std::size_t take = table.unbiased_count() + biased_taken;
  out.indices.reserve(take);
  for (std::size_t pos = 0; pos < take; ++pos) out.indices.push_back(table.entries[pos].sample);
  std::sort(out.indices.begin(), out.indices.end());
  return out;
}

void check_epoch(std::size_t e, std::size_t e_total) {
  if (e_total < 1 || e < 1 || e > e_total) {
    throw ScheduleError("epoch " + std::to_string(e) + " outside 1.." + std::to_string(e_total));
  }
}

}  // namespace

double uncertainty(std::span<const double> probs) {
  if (probs.empty()) throw ShapeError("uncertainty of an empty distribution");
  const auto [lo, hi] = std::minmax_element(probs.begin(), probs.end());
  return std::clamp(1.0 - (*hi - *lo), 0.0, 1.0);
}

std::size_t split_point(std::span<const ScoreEntry> entries) {
  if (entries.empty()) throw ShapeError("split point of an empty score table");
  std::size_t best = 0;
  for (std::size_t i = 1; i < entries.size(); ++i) {
    if (entries[i].uncertainty > entries[best].uncertainty) best = i;
  }
  return best;
}

SampleScoreTable make_table(std::vector<ScoreEntry> entries) {
  std::stable_sort(entries.begin(), entries.end(),
                   [](const ScoreEntry& a, const ScoreEntry& b) { return a.loss < b.loss; });
  SampleScoreTable table{std::move(entries), 0};
  table.split_pos = split_point(table.entries);
  return table;
}

SampleScoreTable score_samples(const nn::Model& global_model, const data::Dataset& client_data) {
  if (client_data.size() == 0) throw ShapeError("cannot score an empty client");
  std::vector<ScoreEntry> entries;
  entries.reserve(client_data.size());
  std::vector<std::size_t> batch_indices;
  for (std::size_t start = 0; start < client_data.size(); start += kScoringBatch) {
    const std::size_t end = std::min(client_data.size(), start + kScoringBatch);
    batch_indices.resize(end - start);
    for (std::size_t i = start; i < end; ++i) batch_indices[i - start] = i;
    const nn::Tensor logits = nn::forward(global_model, data::gather_samples(client_data, batch_indices));
    for (std::size_t i = start; i < end; ++i) {
      const std::vector<double> p = nn::softmax(logits.row(i - start));
      entries.push_back(ScoreEntry{i, nn::cross_entropy(p, client_data.labels[i]), uncertainty(p)});
    }
  }
  return make_table(std::move(entries));
}

double schedule_alpha(std::size_t e, std::size_t e_total) {
  if (e_total < 1 || e > e_total) {
    throw ScheduleError("schedule position " + std::to_string(e) + " outside 0.." + std::to_string(e_total));
  }
  const double ratio = static_cast<double>(e) / static_cast<double>(e_total);
  return (1.0 - std::cos(ratio * std::numbers::pi)) / 2.0;
}

EpochTrainingSet epoch_training_set(const SampleScoreTable& table, std::size_t e, std::size_t e_total) {
  check_epoch(e, e_total);
  const double alpha = e_total > 1 ? schedule_alpha(e - 1, e_total - 1) : 1.0;
  return build(table, e, e_total, alpha, scaled_count(alpha, table.biased_count()));
}

EpochTrainingSet strategy_variant(const SampleScoreTable& table, std::size_t e, std::size_t e_total,
                                  Variant variant) {
  check_epoch(e, e_total);
  switch (variant) {
    case Variant::kFilter:
      return build(table, e, e_total, 0.0, 0);
    case Variant::kLinear: {
      if (e_total == 1) return build(table, e, e_total, 1.0, table.biased_count());
      // Integer arithmetic keeps floor((e-1)/(e_total-1) * |bias|) exact.
      const std::size_t taken = (e - 1) * table.biased_count() / (e_total - 1);
      return build(table, e, e_total, static_cast<double>(e - 1) / static_cast<double>(e_total - 1), taken);
    }
    case Variant::kCosine:
      return epoch_training_set(table, e, e_total);
  }
  throw ConfigError("unknown selection variant");
}

Variant parse_variant(std::string_view name) {
  if (name == "filter") return Variant::kFilter;
  if (name == "linear") return Variant::kLinear;
  if (name == "cosine") return Variant::kCosine;
  throw ConfigError("unknown selection variant '" + std::string(name) + "' (expected filter, linear or cosine)");
}

std::string_view variant_name(Variant variant) {
  switch (variant) {
    case Variant::kFilter: return "filter";
    case Variant::kLinear: return "linear";
    case Variant::kCosine: return "cosine";
  }
  return "unknown";
}

}  // namespace fedbss::selection
