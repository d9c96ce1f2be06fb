#include <algorithm>
#include <numeric>

#include "fedbss/errors.hpp"
#include "fedbss/federation.hpp"
#include "fedbss/rng.hpp"

namespace fedbss::federation {
namespace {

struct ProxTerm {
  const nn::ParamVector* anchor = nullptr;
  double mu = 0.0;
};

class LocalTrainer {
 public:
  LocalTrainer(const nn::Model& global, const data::Dataset& client_data, const FederationConfig& config,
               std::uint64_t shuffle_key, ProxTerm prox = {})
      : model_(global),
        data_(client_data),
        config_(config),
        shuffle_key_(shuffle_key),
        prox_(prox),
        optimizer_(nn::OptimizerState::for_params(global.params(), config.optimizer)) {
    if (client_data.size() == 0) throw ShapeError("client has no samples");
  }

  // One seeded-shuffled mini-batch pass; the final partial batch is kept.
  void run_epoch(std::size_t epoch, std::vector<std::size_t> indices) {
    epoch_indices_.push_back(indices);
    Rng rng = make_rng(shuffle_key_, Stream::kShuffle, {epoch});
    std::shuffle(indices.begin(), indices.end(), rng);
    const std::size_t batch = config_.batch_size;
    for (std::size_t start = 0; start < indices.size(); start += batch) {
      const std::size_t end = std::min(indices.size(), start + batch);
      std::span<const std::size_t> part(indices.data() + start, end - start);
      const nn::Tensor x = data::gather_samples(data_, part);
      const std::vector<nn::Label> y = data::gather_labels(data_, part);
      nn::LossAndGradient lg = nn::loss_and_gradient(model_, x, y);
      if (prox_.anchor != nullptr) add_proximal(lg.gradient);
      nn::sgd_step(model_.mutable_params(), lg.gradient, optimizer_);
      loss_sum_ += lg.mean_loss * static_cast<double>(part.size());
      visited_ += part.size();
    }
  }

  LocalResult finish() {
    LocalResult out;
    out.params = model_.params();
    out.mean_loss = visited_ ? loss_sum_ / static_cast<double>(visited_) : 0.0;
    out.epoch_indices = std::move(epoch_indices_);
    return out;
  }

 private:
  // grad += mu * (w - w_global)
  void add_proximal(nn::ParamVector& grad) const {
    const float mu = static_cast<float>(prox_.mu);
    auto g = grad.values();
    auto w = model_.params().values();
    auto anchor = prox_.anchor->values();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += mu * (w[i] - anchor[i]);
  }

  nn::Model model_;
  const data::Dataset& data_;
  const FederationConfig& config_;
  std::uint64_t shuffle_key_;
  ProxTerm prox_;
  nn::OptimizerState optimizer_;
  double loss_sum_ = 0.0;
  std::size_t visited_ = 0;
  std::vector<std::vector<std::size_t>> epoch_indices_;
};

std::vector<std::size_t> all_positions(std::size_t n) {
  std::vector<std::size_t> out(n);
  std::iota(out.begin(), out.end(), std::size_t{0});
  return out;
}

}  // namespace

std::uint64_t client_shuffle_key(std::uint64_t seed, std::size_t round, std::size_t client_id) {
  return derive_seed(seed, Stream::kShuffle, {round, client_id});
}

LocalResult local_train_plain(const nn::Model& global, const data::Dataset& client_data,
                              const FederationConfig& config, std::uint64_t shuffle_key) {
  LocalTrainer trainer(global, client_data, config, shuffle_key);
  for (std::size_t e = 1; e <= config.local_epochs; ++e) trainer.run_epoch(e, all_positions(client_data.size()));
  return trainer.finish();
}

LocalResult local_train_fedprox(const nn::Model& global, const data::Dataset& client_data, double mu,
                                const FederationConfig& config, std::uint64_t shuffle_key) {
  if (!(mu >= 0.0)) throw ConfigError("fedprox mu must be >= 0");
  LocalTrainer trainer(global, client_data, config, shuffle_key, ProxTerm{&global.params(), mu});
  for (std::size_t e = 1; e <= config.local_epochs; ++e) trainer.run_epoch(e, all_positions(client_data.size()));
  return trainer.finish();
}

LocalResult local_train_fedbss(const nn::Model& global, const data::Dataset& client_data,
                               const FederationConfig& config, std::uint64_t shuffle_key) {
  // Scored once against the received global model; the split stays frozen
  // for the whole round.
  selection::SampleScoreTable table = selection::score_samples(global, client_data);
  LocalTrainer trainer(global, client_data, config, shuffle_key);
  for (std::size_t e = 1; e <= config.local_epochs; ++e) {
    selection::EpochTrainingSet set =
        selection::strategy_variant(table, e, config.local_epochs, config.algorithm.variant);
    trainer.run_epoch(e, std::move(set.indices));
  }
  LocalResult out = trainer.finish();
  out.scores = std::move(table);
  return out;
}

}  // namespace fedbss::federation
