// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any
// criterion fails. Criteria 5-7 run the desk-scale benchmark (synthetic
// Gaussian mixture, 2-layer MLP) and take about a minute on one core.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <optional>
#include <random>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "fedbss/config.hpp"
#include "fedbss/data.hpp"
#include "fedbss/experiment.hpp"
#include "fedbss/federation.hpp"
#include "fedbss/nn.hpp"
#include "fedbss/selection.hpp"
#include "support.hpp"

using namespace fedbss;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = true;
  std::ostringstream detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail << "[failed: " << what << "] ";
    }
  }
};

double pp(double fraction) { return 100.0 * fraction; }

// --- 1: closed-form values -------------------------------------------------

void closed_form(Outcome& o) {
  const double p[] = {0.7, 0.2, 0.1};
  o.require(std::abs(selection::uncertainty(p) - 0.4) < 1e-12, "uncertainty [0.7, 0.2, 0.1] = 0.4");
  const double flat[] = {0.1, 0.1, 0.1, 0.1, 0.1, 0.1, 0.1, 0.1, 0.1, 0.1};
  o.require(std::abs(selection::uncertainty(flat) - 1.0) < 1e-12, "uniform uncertainty = 1");

  o.require(std::abs(selection::schedule_alpha(0, 10)) <= 1e-9, "alpha(0) = 0");
  o.require(std::abs(selection::schedule_alpha(5, 10) - 0.5) <= 1e-9, "alpha(1/2) = 0.5");
  o.require(std::abs(selection::schedule_alpha(10, 10) - 1.0) <= 1e-9, "alpha(1) = 1");

  std::vector<selection::ScoreEntry> entries;
  for (std::size_t i = 0; i < 8; ++i) entries.push_back({i, static_cast<double>(i), i == 3 ? 0.9 : 0.1});
  const selection::SampleScoreTable table = selection::make_table(entries);
  o.require(selection::epoch_training_set(table, 6, 11).indices.size() == 6, "4+4 split, e=6 of 11 -> 6 samples");
  o.require(selection::split_point(std::vector<selection::ScoreEntry>{{0, 0, 0.2}, {1, 1, 0.9}, {2, 2, 0.4}}) == 1,
            "split_point [0.2, 0.9, 0.4] = 1");

  nn::ParamVector a;
  a.add_segment("x", {2});
  nn::ParamVector b = a.zeros_like();
  a.values()[0] = 1;
  a.values()[1] = 3;
  b.values()[0] = 3;
  b.values()[1] = 5;
  const nn::ParamVector pair[] = {a, b};
  const nn::ParamVector m = federation::aggregate_mean(pair);
  o.require(std::abs(m.values()[0] - 2.0) <= 1e-6 && std::abs(m.values()[1] - 4.0) <= 1e-6, "mean [[1,3],[3,5]]");

  std::mt19937_64 rng(3);
  nn::Model layout(nn::mlp({5}, 7, 3));
  std::vector<nn::ParamVector> many;
  for (int k = 0; k < 10; ++k) many.push_back(testing::random_params(layout.params(), rng));
  const nn::ParamVector avg = federation::aggregate_mean(many);
  double worst = 0.0;
  for (std::size_t i = 0; i < avg.size(); ++i) {
    double sum = 0.0;
    for (const auto& v : many) sum += v.values()[i];
    worst = std::max(worst, std::abs(avg.values()[i] - sum / 10.0));
  }
  o.require(worst <= 1e-6, "10-vector mean vs. independent sum");

  data::Dataset d = data::synth_gaussian_mixture(3, 30, 4, 1.0, 2);
  nn::Model init = nn::Model::initialized(nn::mlp({4}, 8, 3), 1);
  federation::FederationConfig c;
  c.local_epochs = 3;
  c.batch_size = 8;
  c.optimizer = {0.05, 0.9, 1e-3};
  o.require(federation::local_train_fedprox(init, d, 0.0, c, 5).params ==
                federation::local_train_plain(init, d, c, 5).params,
            "fedprox mu=0 bit-identical to plain");
  o.detail << "uncertainty, schedule, split, aggregation and fedprox identities checked; mean error " << worst;
}

// --- 2: gradient oracle ----------------------------------------------------

void gradient_oracle(Outcome& o) {
  double worst = 0.0;
  std::size_t checks = 0;
  for (const auto& [name, arch] : testing::gradcheck_architectures()) {
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
      const testing::GradCheck r = testing::gradient_check(arch, seed, 20);
      o.require(r.coordinates >= 20, name + " coordinate count");
      o.require(r.max_relative_error < 1e-3, name + " seed " + std::to_string(seed));
      worst = std::max(worst, r.max_relative_error);
      checks += r.coordinates;
    }
  }
  o.detail << checks << " coordinates over dense, relu, conv, pool and flatten; max relative error " << worst;
}

// --- 3: partitions ---------------------------------------------------------

bool complete(const std::vector<data::ClientPartition>& parts, std::size_t total) {
  std::vector<int> seen(total, 0);
  for (const auto& p : parts) {
    for (std::size_t i : p.indices) {
      if (i >= total || seen[i]++) return false;
    }
  }
  return std::all_of(seen.begin(), seen.end(), [](int c) { return c == 1; });
}

void partitions(Outcome& o) {
  std::mt19937_64 rng(20);
  data::Dataset ten = data::synth_gaussian_mixture(10, 100, 2, 1.0, 4);
  for (int trial = 0; trial < 20; ++trial) {
    data::PartitionSpec spec;
    spec.scheme = trial % 2 ? data::Scheme::kShards : data::Scheme::kDirichlet;
    spec.n_clients = 2 + rng() % 30;
    spec.shards_per_client = 1 + rng() % 3;
    spec.dirichlet_alpha = 0.05 + static_cast<double>(rng() % 100) / 20.0;
    spec.seed = rng();
    o.require(complete(data::partition(ten, spec), ten.size()), "completeness trial " + std::to_string(trial));
  }

  std::size_t max_labels = 0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    for (const auto& p : data::partition(ten, {data::Scheme::kShards, 50, 0.5, 2, seed})) {
      const auto hist = data::label_histogram(ten, p.indices);
      max_labels = std::max<std::size_t>(max_labels, std::count_if(hist.begin(), hist.end(), [](auto c) { return c > 0; }));
    }
  }
  o.require(max_labels <= 2, "shards S=2 label support");

  auto mean_entropy = [&](double alpha) {
    double total = 0.0;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      const auto parts = data::partition(ten, {data::Scheme::kDirichlet, 10, alpha, 2, seed});
      for (const auto& p : parts) total += data::label_entropy(ten, p.indices);
    }
    return total / 100.0;
  };
  const double skewed = mean_entropy(0.1), flat = mean_entropy(100.0);
  o.require(skewed < flat, "entropy monotone in alpha");
  o.detail << "20 random specs complete; shards max labels " << max_labels << "; mean entropy alpha=0.1 " << skewed
           << " < alpha=100 " << flat;
}

// --- 4: algorithm structure ------------------------------------------------

void structure(Outcome& o) {
  data::Dataset train = data::synth_gaussian_mixture(4, 50, 6, 1.5, 9);
  data::Dataset test = data::synth_gaussian_mixture(4, 20, 6, 1.5, 9, 1);
  const auto parts = data::partition(train, {data::Scheme::kDirichlet, 5, 0.3, 2, 4});
  nn::Model init = nn::Model::initialized(nn::mlp({6}, 16, 4), 4);
  federation::FederationConfig avg;
  avg.n_clients = 5;
  avg.participation_fraction = 0.6;
  avg.rounds_stage1 = 6;
  avg.rounds_stage2 = 0;
  avg.local_epochs = 3;
  avg.batch_size = 8;
  avg.optimizer = {0.05, 1e-4, 1e-5};
  avg.seed = 4;
  federation::FederationConfig bss = avg;
  bss.algorithm.kind = federation::Algorithm::kFedBss;
  const auto ra = federation::run_experiment(avg, init, train, parts, test);
  const auto rb = federation::run_experiment(bss, init, train, parts, test);
  bool same = ra.final_params == rb.final_params && ra.reports.size() == rb.reports.size();
  for (std::size_t i = 0; same && i < ra.reports.size(); ++i) {
    same = ra.reports[i].test_accuracy == rb.reports[i].test_accuracy &&
           ra.reports[i].mean_train_loss == rb.reports[i].mean_train_loss &&
           ra.reports[i].client_ids == rb.reports[i].client_ids;
  }
  o.require(same, "(a) T2=0 trajectory equals fedavg");

  std::mt19937_64 rng(50);
  std::size_t nested_tables = 0;
  for (int t = 0; t < 50; ++t) {
    const std::size_t n = 1 + rng() % 60;
    std::vector<selection::ScoreEntry> raw;
    for (std::size_t i = 0; i < n; ++i) {
      raw.push_back({i, static_cast<double>(rng() % 20), static_cast<double>(rng() % 1000) / 1000.0});
    }
    const auto table = selection::make_table(raw);
    const std::size_t total = 1 + rng() % 15;
    std::vector<std::size_t> prev;
    bool ok = true;
    for (std::size_t e = 1; e <= total; ++e) {
      const auto cur = selection::epoch_training_set(table, e, total).indices;
      ok = ok && std::includes(cur.begin(), cur.end(), prev.begin(), prev.end());
      prev = cur;
    }
    ok = ok && prev.size() == n;
    nested_tables += ok;
  }
  o.require(nested_tables == 50, "(b) nested epoch sets with full final coverage");

  const std::vector<std::size_t> one = {3};
  data::Dataset single = data::subset(train, one);
  const auto r_bss = federation::local_train_fedbss(init, single, bss, 77);
  o.require(r_bss.scores && r_bss.scores->biased_count() == 0, "(c) single-sample client has no bias set");
  o.require(r_bss.params == federation::local_train_plain(init, single, bss, 77).params,
            "(c) empty bias set trains like plain");
  o.detail << "(a) " << ra.reports.size() << " rounds bit-identical; (b) " << nested_tables
           << "/50 tables nested and covering; (c) bit-identical";
}

// --- 5-7: desk benchmark ---------------------------------------------------

cli::ExperimentConfig desk_config(federation::Algorithm algorithm, double noise) {
  cli::ExperimentConfig c;
  c.dataset.source = cli::DataSource::kSynthetic;
  c.dataset.synth_classes = 10;
  c.dataset.synth_per_class = 600;
  c.dataset.synth_test_per_class = 100;
  c.dataset.synth_dim = 32;
  c.dataset.synth_spread = 2.5;
  c.dataset.noise_ratio = noise;
  c.partition = {data::Scheme::kDirichlet, 20, 0.1, 2, 0};
  c.federation.n_clients = 20;
  c.federation.participation_fraction = 0.2;
  c.federation.rounds_stage1 = 10;
  c.federation.rounds_stage2 = 30;
  c.federation.local_epochs = 5;
  c.federation.batch_size = 32;
  c.federation.optimizer = {0.05, 1e-4, 1e-5};
  c.federation.algorithm.kind = algorithm;
  c.model = {nn::ModelKind::kMlp, 128};
  c.seeds = {1, 2, 3};
  return c;
}

// Paired FedBSS - FedAvg delta in percentage points.
struct Paired {
  double avg = 0.0, bss = 0.0, delta = 0.0;
  std::vector<double> per_seed;
};

Paired desk_pair(double noise) {
  const cli::ExperimentConfig configs[] = {desk_config(federation::Algorithm::kFedAvg, noise),
                                           desk_config(federation::Algorithm::kFedBss, noise)};
  const cli::CompareOutcome out = cli::compare(configs, {}, false, false);
  Paired p;
  p.avg = out.rows[0].pooled_mean;
  p.bss = out.rows[1].pooled_mean;
  p.delta = pp(p.bss - p.avg);
  for (std::size_t s = 0; s < out.rows[0].per_seed.size(); ++s) {
    p.per_seed.push_back(pp(out.rows[1].per_seed[s].summary.mean - out.rows[0].per_seed[s].summary.mean));
  }
  return p;
}

void describe(Outcome& o, const char* tag, const Paired& p) {
  o.detail << std::fixed << std::setprecision(2);
  o.detail << tag << " fedavg " << pp(p.avg) << "%, fedbss " << pp(p.bss) << "%, delta " << p.delta
           << " pp (per seed";
  for (double d : p.per_seed) o.detail << ' ' << d;
  o.detail << ")";
}

std::optional<Paired> clean_result;

void desk_clean(Outcome& o) {
  clean_result = desk_pair(0.0);
  o.require(clean_result->delta >= -0.5, "non-inferiority at noise 0.0");
  describe(o, "noise 0.0:", *clean_result);
  o.detail << (clean_result->delta > 0 ? "; fedbss ahead" : "; fedbss not ahead");
}

void desk_noisy(Outcome& o) {
  const Paired noisy = desk_pair(0.3);
  o.require(noisy.delta >= -0.5, "non-inferiority at noise 0.3");
  describe(o, "noise 0.3:", noisy);
  if (clean_result) {
    o.detail << "; delta at noise 0.0 " << clean_result->delta << " pp, gap "
             << (noisy.delta > clean_result->delta ? "widens" : "does not widen") << " with noise";
  }
}

void ablation(Outcome& o) {
  const fs::path dir = fs::temp_directory_path() / "fedbss_acceptance_ablation";
  fs::remove_all(dir);
  std::vector<cli::ExperimentConfig> configs;
  for (selection::Variant v : {selection::Variant::kFilter, selection::Variant::kLinear, selection::Variant::kCosine}) {
    for (std::size_t warmup : {0u, 10u, 25u}) {
      cli::ExperimentConfig c = desk_config(federation::Algorithm::kFedBss, 0.0);
      c.federation.algorithm.variant = v;
      c.federation.rounds_stage1 = warmup;
      c.federation.rounds_stage2 = 40 - warmup;
      c.name = std::string(selection::variant_name(v)) + "-w" + std::to_string(warmup);
      configs.push_back(c);
    }
  }
  const cli::CompareOutcome out = cli::compare(configs, dir, true, true);

  // The written table must hold a populated pooled row per cell.
  std::ifstream in(dir / "compare_summary.jsonl");
  std::map<std::string, nlohmann::json> pooled;
  for (std::string line; std::getline(in, line);) {
    auto j = nlohmann::json::parse(line);
    if (j["type"] == "pooled") pooled[j["label"].get<std::string>()] = j;
  }
  for (const auto& c : configs) {
    const auto it = pooled.find(c.label());
    const bool populated = it != pooled.end() && it->second["seed_means"].size() == 3 &&
                           std::isfinite(it->second["mean"].get<double>()) &&
                           !it->second["std"].is_null();
    o.require(populated, "cell " + c.label());
  }
  o.require(fs::exists(dir / "compare_summary.txt"), "text table written");

  std::map<std::string, double> mean;
  o.detail << std::fixed << std::setprecision(2);
  for (const auto& row : out.rows) mean[row.label] = pp(row.pooled_mean);
  o.detail << "9/9 cells populated;";
  for (std::size_t w : {0u, 10u, 25u}) {
    const std::string s = "-w" + std::to_string(w);
    o.detail << " warmup " << w << ": filter " << mean["filter" + s] << " linear " << mean["linear" + s]
             << " cosine " << mean["cosine" + s] << ";";
  }
  const double cos10 = mean["cosine-w10"], fil10 = mean["filter-w10"];
  o.detail << " cosine vs filter at warmup 10: " << (cos10 - fil10) << " pp ("
           << (cos10 >= fil10 ? "cosine ahead" : "filter ahead") << ")";
  fs::remove_all(dir);
}

}  // namespace

int main() {
  spdlog::set_level(spdlog::level::warn);
  struct Criterion {
    const char* name;
    std::function<void(Outcome&)> run;
  };
  const Criterion criteria[] = {
      {"AC1 closed-form unit values", closed_form},
      {"AC2 gradient oracle", gradient_oracle},
      {"AC3 partition invariants", partitions},
      {"AC4 algorithm-structure oracles", structure},
      {"AC5 desk benchmark, fedbss vs fedavg", desk_clean},
      {"AC6 desk benchmark under 30% label noise", desk_noisy},
      {"AC7 variant x warmup ablation table", ablation},
  };

  int failures = 0;
  for (const Criterion& c : criteria) {
    Outcome o;
    const auto start = std::chrono::steady_clock::now();
    try {
      c.run(o);
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail << "exception: " << e.what();
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::printf("%s  %s  (%.1fs)  %s\n", o.pass ? "PASS" : "FAIL", c.name, secs, o.detail.str().c_str());
    std::fflush(stdout);
    failures += !o.pass;
  }
  return failures == 0 ? 0 : 1;
}
