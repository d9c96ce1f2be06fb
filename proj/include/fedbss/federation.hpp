#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "fedbss/data.hpp"
#include "fedbss/nn.hpp"
#include "fedbss/selection.hpp"

namespace fedbss::federation {

enum class Algorithm { kFedAvg, kFedProx, kFedBss };
enum class Aggregation { kUniform, kSampleCount };

Algorithm parse_algorithm(std::string_view name);
std::string_view algorithm_name(Algorithm algorithm);
Aggregation parse_aggregation(std::string_view name);
std::string_view aggregation_name(Aggregation aggregation);

struct AlgorithmSpec {
  Algorithm kind = Algorithm::kFedAvg;
  double mu = 0.01;                                       // fedprox only
  selection::Variant variant = selection::Variant::kCosine;  // fedbss only

  friend bool operator==(const AlgorithmSpec&, const AlgorithmSpec&) = default;
};

struct FederationConfig {
  std::size_t n_clients = 100;
  double participation_fraction = 0.1;
  std::size_t rounds_stage1 = 50;   // warmup: plain local training
  std::size_t rounds_stage2 = 150;  // the configured algorithm
  std::size_t local_epochs = 10;
  std::size_t batch_size = 64;
  nn::SgdHyperParams optimizer{};
  AlgorithmSpec algorithm{};
  Aggregation aggregation = Aggregation::kUniform;
  std::uint64_t seed = 0;
  std::size_t threads = 1;  // clients trained concurrently within a round

  void validate() const;
  std::size_t total_rounds() const noexcept { return rounds_stage1 + rounds_stage2; }
  std::size_t clients_per_round() const;

  friend bool operator==(const FederationConfig&, const FederationConfig&) = default;
};

enum class Stage { kWarmup, kProgressive };
std::string_view stage_name(Stage stage);

struct RoundReport {
  std::size_t round = 0;
  Stage stage = Stage::kWarmup;
  std::vector<std::size_t> client_ids;
  double test_accuracy = 0.0;
  double mean_train_loss = 0.0;
  std::optional<double> mean_split_fraction;  // fedbss progressive rounds only
  double wall_ms = 0.0;
};

// A client's private data, gathered from its partition.
struct ClientData {
  std::size_t client_id = 0;
  data::Dataset data;
  std::vector<std::size_t> source_indices;  // position -> index in the parent dataset
};

std::vector<ClientData> build_clients(const data::Dataset& dataset,
                                      std::span<const data::ClientPartition> partitions);

// ceil(fraction * n) distinct ids, ascending, drawn without replacement.
std::vector<std::size_t> sample_clients(std::size_t n_clients, double fraction, std::uint64_t seed,
                                        std::size_t round);

struct LocalResult {
  nn::ParamVector params;
  double mean_loss = 0.0;  // over every sample visited in every epoch
  std::optional<selection::SampleScoreTable> scores;
  std::vector<std::vector<std::size_t>> epoch_indices;  // positions trained per epoch, ascending
};

// shuffle_key seeds the per-epoch batch order; run_experiment derives it
// from (seed, round, client).
LocalResult local_train_plain(const nn::Model& global, const data::Dataset& client_data,
                              const FederationConfig& config, std::uint64_t shuffle_key);
LocalResult local_train_fedprox(const nn::Model& global, const data::Dataset& client_data, double mu,
                                const FederationConfig& config, std::uint64_t shuffle_key);
LocalResult local_train_fedbss(const nn::Model& global, const data::Dataset& client_data,
                               const FederationConfig& config, std::uint64_t shuffle_key);

std::uint64_t client_shuffle_key(std::uint64_t seed, std::size_t round, std::size_t client_id);

nn::ParamVector aggregate_mean(std::span<const nn::ParamVector> local_params);
nn::ParamVector aggregate_weighted(std::span<const nn::ParamVector> local_params,
                                   std::span<const double> weights);

// Fraction of argmax-correct predictions; logit ties go to the lowest class.
double evaluate(const nn::Model& model, const data::Dataset& test_set);

struct AccuracySummary {
  std::size_t rounds_used = 0;
  double mean = 0.0;
  double std_dev = 0.0;  // sample standard deviation (n - 1)
  bool flagged = false;  // fewer rounds than the window
};

AccuracySummary last_rounds_summary(std::span<const RoundReport> reports, std::size_t window = 10);

struct ExperimentHooks {
  std::function<void(const RoundReport&)> on_round;
  std::function<void(std::size_t round, const ClientData&, const selection::SampleScoreTable&)> on_scores;
  std::function<void(std::size_t round, const nn::ParamVector&)> on_global;
};

struct ExperimentResult {
  std::vector<RoundReport> reports;
  nn::ParamVector final_params;
  AccuracySummary summary;
};

// Rounds 1..T1 train every participant plainly (fedprox keeps its penalty);
// rounds T1+1..T1+T2 run the configured algorithm. start_round > 1 resumes
// from `initial` as the global model after round start_round - 1.
ExperimentResult run_experiment(const FederationConfig& config, const nn::Model& initial,
                                std::span<const ClientData> clients, const data::Dataset& test_set,
                                const ExperimentHooks& hooks = {}, std::size_t start_round = 1);
ExperimentResult run_experiment(const FederationConfig& config, const nn::Model& initial,
                                const data::Dataset& dataset, std::span<const data::ClientPartition> partitions,
                                const data::Dataset& test_set, const ExperimentHooks& hooks = {});

}  // namespace fedbss::federation
