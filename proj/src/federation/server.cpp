#include <algorithm>
#include <chrono>
#include <cmath>
#include <exception>
#include <numeric>
#include <string>
#include <thread>

#include "fedbss/errors.hpp"
#include "fedbss/federation.hpp"
#include "fedbss/rng.hpp"

namespace fedbss::federation {
namespace {

constexpr std::size_t kEvalBatch = 512;

std::size_t ceil_count(double fraction, std::size_t n) {
  // The epsilon absorbs representation error such as 0.1 * 30 = 3.0000000000000004.
  return static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(n) - 1e-9));
}

LocalResult train_client(const FederationConfig& config, const nn::Model& global, const ClientData& client,
                         std::size_t round, bool progressive) {
  const std::uint64_t key = client_shuffle_key(config.seed, round, client.client_id);
  switch (config.algorithm.kind) {
    case Algorithm::kFedProx:
      return local_train_fedprox(global, client.data, config.algorithm.mu, config, key);
    case Algorithm::kFedBss:
      if (progressive) return local_train_fedbss(global, client.data, config, key);
      return local_train_plain(global, client.data, config, key);
    case Algorithm::kFedAvg:
      break;
  }
  return local_train_plain(global, client.data, config, key);
}

}  // namespace

Algorithm parse_algorithm(std::string_view name) {
  if (name == "fedavg") return Algorithm::kFedAvg;
  if (name == "fedprox") return Algorithm::kFedProx;
  if (name == "fedbss") return Algorithm::kFedBss;
  throw ConfigError("unknown algorithm '" + std::string(name) + "' (expected fedavg, fedprox or fedbss)");
}

std::string_view algorithm_name(Algorithm algorithm) {
  switch (algorithm) {
    case Algorithm::kFedAvg: return "fedavg";
    case Algorithm::kFedProx: return "fedprox";
    case Algorithm::kFedBss: return "fedbss";
  }
  return "unknown";
}

Aggregation parse_aggregation(std::string_view name) {
  if (name == "uniform") return Aggregation::kUniform;
  if (name == "sample_count") return Aggregation::kSampleCount;
  throw ConfigError("unknown aggregation '" + std::string(name) + "' (expected uniform or sample_count)");
}

std::string_view aggregation_name(Aggregation aggregation) {
  return aggregation == Aggregation::kUniform ? "uniform" : "sample_count";
}

std::string_view stage_name(Stage stage) { return stage == Stage::kWarmup ? "warmup" : "progressive"; }

std::size_t FederationConfig::clients_per_round() const { return ceil_count(participation_fraction, n_clients); }

void FederationConfig::validate() const {
  if (n_clients < 1) throw ConfigError("n_clients must be >= 1");
  if (!(participation_fraction > 0.0 && participation_fraction <= 1.0)) {
    throw ConfigError("participation fraction must lie in (0, 1]");
  }
  const std::size_t m = clients_per_round();
  if (m < 1 || m > n_clients) throw ConfigError("participation selects " + std::to_string(m) + " clients");
  if (total_rounds() < 1) throw ConfigError("at least one round is required");
  if (local_epochs < 1) throw ConfigError("local_epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!(optimizer.learning_rate >= 0.0) || !std::isfinite(optimizer.learning_rate)) {
    throw ConfigError("learning rate must be finite and >= 0");
  }
  if (!(optimizer.momentum >= 0.0 && optimizer.momentum < 1.0)) throw ConfigError("momentum must lie in [0, 1)");
  if (!(optimizer.weight_decay >= 0.0) || !std::isfinite(optimizer.weight_decay)) {
    throw ConfigError("weight decay must be finite and >= 0");
  }
  if (algorithm.kind == Algorithm::kFedProx && !(algorithm.mu >= 0.0 && std::isfinite(algorithm.mu))) {
    throw ConfigError("fedprox mu must be finite and >= 0");
  }
  if (threads < 1) throw ConfigError("threads must be >= 1");
}

std::vector<ClientData> build_clients(const data::Dataset& dataset,
                                      std::span<const data::ClientPartition> partitions) {
  std::vector<ClientData> clients;
  clients.reserve(partitions.size());
  for (const data::ClientPartition& p : partitions) {
    clients.push_back(ClientData{p.client_id, data::subset(dataset, p.indices), p.indices});
  }
  return clients;
}

std::vector<std::size_t> sample_clients(std::size_t n_clients, double fraction, std::uint64_t seed,
                                        std::size_t round) {
  const std::size_t m = ceil_count(fraction, n_clients);
  if (n_clients < 1 || m < 1 || m > n_clients) throw ConfigError("invalid participation for client sampling");
  std::vector<std::size_t> ids(n_clients);
  std::iota(ids.begin(), ids.end(), std::size_t{0});
  // Partial Fisher-Yates: the first m slots become the selection.
  Rng rng = make_rng(seed, Stream::kClientSampling, {round});
  for (std::size_t i = 0; i < m; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, n_clients - 1);
    std::swap(ids[i], ids[pick(rng)]);
  }
  ids.resize(m);
  std::sort(ids.begin(), ids.end());
  return ids;
}

nn::ParamVector aggregate_mean(std::span<const nn::ParamVector> local_params) { return nn::mean(local_params); }

nn::ParamVector aggregate_weighted(std::span<const nn::ParamVector> local_params, std::span<const double> weights) {
  return nn::weighted_mean(local_params, weights);
}

double evaluate(const nn::Model& model, const data::Dataset& test_set) {
  if (test_set.size() == 0) throw ShapeError("empty test set");
  std::size_t correct = 0;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < test_set.size(); start += kEvalBatch) {
    const std::size_t end = std::min(test_set.size(), start + kEvalBatch);
    idx.resize(end - start);
    std::iota(idx.begin(), idx.end(), start);
    const nn::Tensor logits = nn::forward(model, data::gather_samples(test_set, idx));
    for (std::size_t i = start; i < end; ++i) {
      auto row = logits.row(i - start);
      // max_element returns the first maximum, i.e. the lowest class index.
      const auto predicted = static_cast<nn::Label>(std::max_element(row.begin(), row.end()) - row.begin());
      if (predicted == test_set.labels[i]) ++correct;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(test_set.size());
}

AccuracySummary last_rounds_summary(std::span<const RoundReport> reports, std::size_t window) {
  if (reports.empty()) throw ReportError("cannot summarise an empty history");
  AccuracySummary s;
  s.rounds_used = std::min(window, reports.size());
  s.flagged = reports.size() < window;
  auto tail = reports.subspan(reports.size() - s.rounds_used);
  double sum = 0.0;
  for (const RoundReport& r : tail) sum += r.test_accuracy;
  s.mean = sum / static_cast<double>(s.rounds_used);
  if (s.rounds_used > 1) {
    double sq = 0.0;
    for (const RoundReport& r : tail) sq += (r.test_accuracy - s.mean) * (r.test_accuracy - s.mean);
    s.std_dev = std::sqrt(sq / static_cast<double>(s.rounds_used - 1));
  }
  return s;
}

ExperimentResult run_experiment(const FederationConfig& config, const nn::Model& initial,
                                std::span<const ClientData> clients, const data::Dataset& test_set,
                                const ExperimentHooks& hooks, std::size_t start_round) {
  config.validate();
  if (clients.size() != config.n_clients) {
    throw ConfigError("config expects " + std::to_string(config.n_clients) + " clients, got " +
                      std::to_string(clients.size()));
  }
  for (std::size_t k = 0; k < clients.size(); ++k) {
    if (clients[k].client_id != k) throw ConfigError("clients must be ordered by id");
  }
  if (start_round < 1) throw ConfigError("rounds are numbered from 1");

  ExperimentResult result;
  nn::Model global = initial;
  for (std::size_t round = start_round; round <= config.total_rounds(); ++round) {
    const auto started = std::chrono::steady_clock::now();
    const bool progressive = round > config.rounds_stage1;
    const std::vector<std::size_t> selected =
        sample_clients(config.n_clients, config.participation_fraction, config.seed, round);

    // Each client gets a value copy of the global model via its trainer;
    // results land in selection order regardless of completion order.
    std::vector<LocalResult> locals(selected.size());
    std::vector<std::exception_ptr> failures(selected.size());
    auto work = [&](std::size_t slot) {
      try {
        locals[slot] = train_client(config, global, clients[selected[slot]], round, progressive);
      } catch (...) {
        failures[slot] = std::current_exception();
      }
    };
    const std::size_t workers = std::min(config.threads, selected.size());
    if (workers <= 1) {
      for (std::size_t slot = 0; slot < selected.size(); ++slot) work(slot);
    } else {
      std::vector<std::jthread> pool;
      for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
          for (std::size_t slot = w; slot < selected.size(); slot += workers) work(slot);
        });
      }
    }
    for (const auto& f : failures) {
      if (f) std::rethrow_exception(f);
    }

    std::vector<nn::ParamVector> params;
    params.reserve(locals.size());
    double loss_sum = 0.0, split_sum = 0.0;
    std::size_t split_clients = 0;
    for (std::size_t slot = 0; slot < locals.size(); ++slot) {
      LocalResult& local = locals[slot];
      loss_sum += local.mean_loss;
      if (local.scores) {
        const auto& table = *local.scores;
        split_sum += static_cast<double>(table.unbiased_count()) / static_cast<double>(table.entries.size());
        ++split_clients;
        if (hooks.on_scores) hooks.on_scores(round, clients[selected[slot]], table);
      }
      params.push_back(std::move(local.params));
    }

    if (config.aggregation == Aggregation::kSampleCount) {
      std::vector<double> weights;
      for (std::size_t id : selected) weights.push_back(static_cast<double>(clients[id].data.size()));
      global.set_params(aggregate_weighted(params, weights));
    } else {
      global.set_params(aggregate_mean(params));
    }

    RoundReport report;
    report.round = round;
    report.stage = progressive ? Stage::kProgressive : Stage::kWarmup;
    report.client_ids = selected;
    report.test_accuracy = evaluate(global, test_set);
    report.mean_train_loss = loss_sum / static_cast<double>(locals.size());
    if (split_clients > 0) report.mean_split_fraction = split_sum / static_cast<double>(split_clients);
    report.wall_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - started).count();

    if (hooks.on_global) hooks.on_global(round, global.params());
    if (hooks.on_round) hooks.on_round(report);
    result.reports.push_back(std::move(report));
  }
  result.final_params = global.params();
  if (!result.reports.empty()) result.summary = last_rounds_summary(result.reports);
  return result;
}

ExperimentResult run_experiment(const FederationConfig& config, const nn::Model& initial,
                                const data::Dataset& dataset, std::span<const data::ClientPartition> partitions,
                                const data::Dataset& test_set, const ExperimentHooks& hooks) {
  std::vector<bool> seen(dataset.size(), false);
  std::size_t covered = 0;
  for (const data::ClientPartition& p : partitions) {
    for (std::size_t i : p.indices) {
      if (i >= dataset.size() || seen[i]) throw ConfigError("partitions overlap or index outside the dataset");
      seen[i] = true;
      ++covered;
    }
  }
  if (covered != dataset.size()) throw ConfigError("partitions do not cover the dataset");
  const std::vector<ClientData> clients = build_clients(dataset, partitions);
  return run_experiment(config, initial, clients, test_set, hooks);
}

}  // namespace fedbss::federation
