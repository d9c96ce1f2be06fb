#include <algorithm>
#include <cmath>
#include <numeric>

#include "fedbss/data.hpp"
#include "fedbss/errors.hpp"
#include "fedbss/rng.hpp"

namespace fedbss::data {
namespace {

constexpr int kDirichletResamples = 100;

std::vector<double> sample_dirichlet(double alpha, std::size_t n, Rng& rng) {
  std::gamma_distribution<double> gamma(alpha, 1.0);
  std::vector<double> p(n);
  double total = 0.0;
  // Tiny alpha can underflow every draw to zero; redraw in that case.
  while (!(total > 0.0)) {
    total = 0.0;
    for (double& v : p) {
      v = gamma(rng);
      total += v;
    }
  }
  for (double& v : p) v /= total;
  return p;
}

// Largest-remainder rounding: floors first, then one extra sample per
// client in descending order of fractional part (lowest id on ties).
std::vector<std::size_t> apportion(std::span<const double> proportions, std::size_t count) {
  const std::size_t n = proportions.size();
  std::vector<std::size_t> counts(n);
  std::vector<double> fraction(n);
  std::size_t assigned = 0;
  for (std::size_t k = 0; k < n; ++k) {
    const double exact = proportions[k] * static_cast<double>(count);
    counts[k] = static_cast<std::size_t>(std::floor(exact));
    fraction[k] = exact - static_cast<double>(counts[k]);
    assigned += counts[k];
  }
  // Floating error can push the floors past count; trim from the largest.
  while (assigned > count) {
    auto it = std::max_element(counts.begin(), counts.end());
    --*it;
    --assigned;
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return fraction[a] > fraction[b]; });
  for (std::size_t k = 0; assigned < count; k = (k + 1) % n, ++assigned) ++counts[order[k]];
  return counts;
}

std::vector<std::vector<std::size_t>> dirichlet_attempt(const Dataset& dataset, const PartitionSpec& spec,
                                                        int attempt) {
  Rng rng = make_rng(spec.seed, Stream::kPartition, {static_cast<std::uint64_t>(attempt)});
  std::vector<std::vector<std::size_t>> by_class(dataset.num_classes);
  for (std::size_t i = 0; i < dataset.size(); ++i) by_class[static_cast<std::size_t>(dataset.labels[i])].push_back(i);

  std::vector<std::vector<std::size_t>> clients(spec.n_clients);
  for (auto& members : by_class) {
    std::shuffle(members.begin(), members.end(), rng);
    const std::vector<double> p = sample_dirichlet(spec.dirichlet_alpha, spec.n_clients, rng);
    const std::vector<std::size_t> counts = apportion(p, members.size());
    std::size_t cursor = 0;
    for (std::size_t k = 0; k < spec.n_clients; ++k) {
      clients[k].insert(clients[k].end(), members.begin() + static_cast<std::ptrdiff_t>(cursor),
                        members.begin() + static_cast<std::ptrdiff_t>(cursor + counts[k]));
      cursor += counts[k];
    }
  }
  return clients;
}

std::vector<ClientPartition> finish(std::vector<std::vector<std::size_t>> lists) {
  std::vector<ClientPartition> out(lists.size());
  for (std::size_t k = 0; k < lists.size(); ++k) {
    std::sort(lists[k].begin(), lists[k].end());
    out[k] = ClientPartition{k, std::move(lists[k])};
  }
  return out;
}

}  // namespace

void PartitionSpec::validate() const {
  if (n_clients < 1) throw ConfigError("n_clients must be >= 1");
  if (scheme == Scheme::kDirichlet && !(dirichlet_alpha > 0.0 && std::isfinite(dirichlet_alpha))) {
    throw ConfigError("dirichlet_alpha must be > 0");
  }
  if (scheme == Scheme::kShards && shards_per_client < 1) throw ConfigError("shards_per_client must be >= 1");
}

std::vector<ClientPartition> partition_dirichlet(const Dataset& dataset, const PartitionSpec& spec) {
  if (spec.scheme != Scheme::kDirichlet) throw ConfigError("partition_dirichlet needs a dirichlet spec");
  spec.validate();
  if (dataset.size() < spec.n_clients) {
    throw PartitionError("cannot give " + std::to_string(spec.n_clients) + " clients a sample each from " +
                         std::to_string(dataset.size()) + " samples");
  }

  std::vector<std::vector<std::size_t>> clients;
  for (int attempt = 0; attempt <= kDirichletResamples; ++attempt) {
    clients = dirichlet_attempt(dataset, spec, attempt);
    if (std::none_of(clients.begin(), clients.end(), [](const auto& c) { return c.empty(); })) {
      return finish(std::move(clients));
    }
  }
  // Still empty clients after all resamples: each takes one sample from
  // the currently largest client.
  for (auto& target : clients) {
    if (!target.empty()) continue;
    auto donor = std::max_element(clients.begin(), clients.end(),
                                  [](const auto& a, const auto& b) { return a.size() < b.size(); });
    target.push_back(donor->back());
    donor->pop_back();
  }
  return finish(std::move(clients));
}

std::vector<ClientPartition> partition_shards(const Dataset& dataset, const PartitionSpec& spec) {
  if (spec.scheme != Scheme::kShards) throw ConfigError("partition_shards needs a shards spec");
  spec.validate();
  const std::size_t n_shards = spec.n_clients * spec.shards_per_client;
  if (dataset.size() < n_shards) {
    throw PartitionError("cannot cut " + std::to_string(dataset.size()) + " samples into " +
                         std::to_string(n_shards) + " shards");
  }
  std::vector<std::size_t> sorted(dataset.size());
  std::iota(sorted.begin(), sorted.end(), std::size_t{0});
  std::stable_sort(sorted.begin(), sorted.end(),
                   [&](std::size_t a, std::size_t b) { return dataset.labels[a] < dataset.labels[b]; });

  const std::size_t shard_size = dataset.size() / n_shards;
  std::vector<std::size_t> shard_order(n_shards);
  std::iota(shard_order.begin(), shard_order.end(), std::size_t{0});
  Rng rng = make_rng(spec.seed, Stream::kPartition);
  std::shuffle(shard_order.begin(), shard_order.end(), rng);

  std::vector<std::vector<std::size_t>> clients(spec.n_clients);
  for (std::size_t slot = 0; slot < n_shards; ++slot) {
    const std::size_t shard = shard_order[slot];
    const std::size_t begin = shard * shard_size;
    const std::size_t end = shard + 1 == n_shards ? dataset.size() : begin + shard_size;
    auto& client = clients[slot / spec.shards_per_client];
    client.insert(client.end(), sorted.begin() + static_cast<std::ptrdiff_t>(begin),
                  sorted.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return finish(std::move(clients));
}

std::vector<ClientPartition> partition(const Dataset& dataset, const PartitionSpec& spec) {
  switch (spec.scheme) {
    case Scheme::kDirichlet: return partition_dirichlet(dataset, spec);
    case Scheme::kShards: return partition_shards(dataset, spec);
  }
  throw ConfigError("unknown partition scheme");
}

}  // namespace fedbss::data
