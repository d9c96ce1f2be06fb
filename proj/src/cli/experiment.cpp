#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <numeric>
#include <set>
#include <sstream>

#include <json.hpp>
#include <spdlog/spdlog.h>

#include "fedbss/errors.hpp"
#include "fedbss/experiment.hpp"
#include "fedbss/rng.hpp"

namespace fedbss::cli {
namespace {

using json = nlohmann::json;

// Append-only line sink; one mutex per file so concurrent writers never
// interleave records.
class LineSink {
 public:
  LineSink(const std::filesystem::path& path, bool append)
      : out_(path, append ? std::ios::app : std::ios::trunc) {
    if (!out_) throw Error("cannot open " + path.string() + " for writing");
  }

  void write(const std::string& line) {
    std::lock_guard lock(mutex_);
    out_ << line << '\n';
    out_.flush();
  }

 private:
  std::ofstream out_;
  std::mutex mutex_;
};

data::Dataset take_subset(const data::Dataset& full, std::size_t count, std::uint64_t data_seed) {
  if (count == 0 || count >= full.size()) return full;
  std::vector<std::size_t> order(full.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng = make_rng(data_seed, Stream::kSubset, {full.size()});
  std::shuffle(order.begin(), order.end(), rng);
  order.resize(count);
  std::sort(order.begin(), order.end());
  return data::subset(full, order);
}

std::filesystem::path metrics_path(const std::filesystem::path& dir, std::uint64_t seed) {
  return dir / ("metrics_seed" + std::to_string(seed) + ".jsonl");
}

std::filesystem::path scores_path(const std::filesystem::path& dir, std::uint64_t seed) {
  return dir / ("scores_seed" + std::to_string(seed) + ".jsonl");
}

std::filesystem::path checkpoint_path(const std::filesystem::path& dir, std::uint64_t seed) {
  return dir / "checkpoints" / ("seed" + std::to_string(seed) + ".pv");
}

std::filesystem::path checkpoint_round_path(const std::filesystem::path& dir, std::uint64_t seed) {
  return dir / "checkpoints" / ("seed" + std::to_string(seed) + ".round");
}

bool is_output_file(const std::filesystem::path& p) {
  const std::string name = p.filename().string();
  return name == "summary.jsonl" || name == "compare_summary.jsonl" || name == "compare_summary.txt" ||
         (name.ends_with(".jsonl") && (name.starts_with("metrics_seed") || name.starts_with("scores_seed")));
}

// Refuses to clobber an earlier run unless forced (which clears it first).
void prepare_output_dir(const std::filesystem::path& dir, bool force, bool resume) {
  std::filesystem::create_directories(dir);
  std::vector<std::filesystem::path> existing;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.is_regular_file() && is_output_file(entry.path())) existing.push_back(entry.path());
  }
  if (existing.empty() || resume) return;
  if (!force) {
    throw Error("output directory " + dir.string() + " already holds results (" +
                existing.front().filename().string() + "); pass --force to overwrite");
  }
  for (const auto& p : existing) std::filesystem::remove(p);
  std::filesystem::remove_all(dir / "checkpoints");
}

std::size_t read_round_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  std::size_t round = 0;
  if (!(in >> round)) throw FormatError("unreadable checkpoint round file " + path.string(), 0);
  return round;
}

void write_round_file(const std::filesystem::path& path, std::size_t round) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    out << round << '\n';
    if (!out) throw Error("cannot write " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

SeedHistory run_seed(const ExperimentConfig& config, std::uint64_t seed, const RunOptions& options,
                     const std::filesystem::path& dir) {
  const PreparedData prepared = prepare_data(config, seed);
  const federation::FederationConfig fed = federation_for_seed(config, seed);
  const std::vector<federation::ClientData> clients = federation::build_clients(prepared.train, prepared.partitions);
  nn::Model model = nn::Model::initialized(prepared.architecture, seed);

  SeedHistory history{seed, {}};
  std::size_t start_round = 1;
  const bool files = options.write_files;

  if (files && options.resume && std::filesystem::exists(metrics_path(dir, seed))) {
    const auto ckpt = checkpoint_path(dir, seed);
    const auto round_file = checkpoint_round_path(dir, seed);
    if (std::filesystem::exists(ckpt) && std::filesystem::exists(round_file)) {
      const std::size_t done = read_round_file(round_file);
      for (auto& r : read_metrics(metrics_path(dir, seed))) {
        if (r.round <= done) history.reports.push_back(std::move(r));
      }
      if (history.reports.size() != done) {
        throw Error("cannot resume seed " + std::to_string(seed) + ": checkpoint is at round " +
                    std::to_string(done) + " but metrics hold " + std::to_string(history.reports.size()));
      }
      model.set_params(nn::load_checkpoint(ckpt, model.params()));
      start_round = done + 1;
      spdlog::info("seed {}: resuming after round {}", seed, done);
    }
  }

  std::optional<LineSink> metrics;
  std::optional<LineSink> scores;
  if (files) {
    std::filesystem::create_directories(dir / "checkpoints");
    metrics.emplace(metrics_path(dir, seed), false);
    for (const auto& r : history.reports) metrics->write(round_record(seed, r));
    if (config.dump_scores || options.dump_scores) scores.emplace(scores_path(dir, seed), start_round > 1);
  }

  federation::ExperimentHooks hooks;
  hooks.on_round = [&](const federation::RoundReport& r) {
    if (metrics) metrics->write(round_record(seed, r));
    spdlog::info("seed {} round {}/{} [{}] acc={:.4f} loss={:.4f}", seed, r.round, fed.total_rounds(),
                 federation::stage_name(r.stage), r.test_accuracy, r.mean_train_loss);
  };
  if (files) {
    hooks.on_global = [&](std::size_t round, const nn::ParamVector& params) {
      nn::save_checkpoint(checkpoint_path(dir, seed), params);
      write_round_file(checkpoint_round_path(dir, seed), round);
    };
  }
  if (files && (config.dump_scores || options.dump_scores)) {
    hooks.on_scores = [&](std::size_t round, const federation::ClientData& client,
                          const selection::SampleScoreTable& table) {
      for (std::size_t pos = 0; pos < table.entries.size(); ++pos) {
        const selection::ScoreEntry& e = table.entries[pos];
        scores->write(score_record(round, client.client_id, client.source_indices[e.sample], e.loss, e.uncertainty,
                                  table.is_biased(pos)));
      }
    };
  }

  federation::ExperimentResult result = federation::run_experiment(fed, model, clients, prepared.test, hooks, start_round);
  for (auto& r : result.reports) history.reports.push_back(std::move(r));

  const SeedSummary summary{seed, federation::last_rounds_summary(history.reports)};
  if (metrics) metrics->write(seed_summary_record(config.label(), summary));
  return history;
}

std::string percent(double v) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(2) << 100.0 * v;
  return os.str();
}

}  // namespace

PreparedData prepare_data(const ExperimentConfig& config, std::uint64_t seed) {
  config.validate();
  const DatasetSpec& d = config.dataset;
  PreparedData out;
  data::Dataset clean;
  if (d.source == DataSource::kSynthetic) {
    clean = data::synth_gaussian_mixture(d.synth_classes, d.synth_per_class, d.synth_dim, d.synth_spread, d.data_seed, 0);
    out.test = data::synth_gaussian_mixture(d.synth_classes, d.synth_test_per_class, d.synth_dim, d.synth_spread,
                                            d.data_seed, 1);
  } else {
    clean = take_subset(data::load_idx(d.train_images, d.train_labels), d.train_subset, d.data_seed);
    out.test = take_subset(data::load_idx(d.test_images, d.test_labels, clean.num_classes), d.test_subset,
                           d.data_seed + 1);
  }
  if (out.test.sample_shape() != clean.sample_shape()) {
    throw ShapeError("train and test samples have different shapes");
  }

  data::PartitionSpec spec = config.partition;
  spec.n_clients = config.federation.n_clients;
  spec.seed = seed;
  if (d.noise_before_partition) {
    out.train = data::inject_label_noise(clean, d.noise_ratio, seed);
    out.partitions = data::partition(out.train, spec);
  } else {
    out.partitions = data::partition(clean, spec);
    out.train = data::inject_label_noise(clean, d.noise_ratio, seed);
  }

  nn::Shape input = out.train.sample_shape();
  if (config.model.kind == nn::ModelKind::kCnn && input.size() == 2) input.insert(input.begin(), 1);
  out.architecture = nn::make_architecture(config.model.kind, input, out.train.num_classes, config.model.hidden);
  return out;
}

federation::FederationConfig federation_for_seed(const ExperimentConfig& config, std::uint64_t seed) {
  federation::FederationConfig fed = config.federation;
  fed.seed = seed;
  return fed;
}

ReportRow emit_report(const std::string& label, std::span<const SeedHistory> histories) {
  if (histories.empty()) throw ReportError(label + ": no histories to report");
  ReportRow row;
  row.label = label;
  double sum = 0.0;
  for (const SeedHistory& h : histories) {
    if (h.reports.empty()) throw ReportError(label + ": seed " + std::to_string(h.seed) + " has an empty history");
    SeedSummary s{h.seed, federation::last_rounds_summary(h.reports)};
    row.flagged = row.flagged || s.summary.flagged;
    sum += s.summary.mean;
    row.per_seed.push_back(s);
  }
  const double n = static_cast<double>(row.per_seed.size());
  row.pooled_mean = sum / n;
  if (row.per_seed.size() > 1) {
    double sq = 0.0;
    for (const SeedSummary& s : row.per_seed) sq += (s.summary.mean - row.pooled_mean) * (s.summary.mean - row.pooled_mean);
    row.pooled_std = std::sqrt(sq / (n - 1.0));
  }
  return row;
}

std::string round_record(std::uint64_t seed, const federation::RoundReport& r) {
  json j;
  j["type"] = "round";
  j["seed"] = seed;
  j["round"] = r.round;
  j["stage"] = std::string(federation::stage_name(r.stage));
  j["clients"] = r.client_ids;
  j["accuracy"] = r.test_accuracy;
  j["mean_train_loss"] = r.mean_train_loss;
  j["mean_split_fraction"] = r.mean_split_fraction ? json(*r.mean_split_fraction) : json(nullptr);
  j["wall_ms"] = r.wall_ms;
  return j.dump();
}

std::string seed_summary_record(const std::string& label, const SeedSummary& s) {
  json j;
  j["type"] = "summary";
  j["label"] = label;
  j["seed"] = s.seed;
  j["rounds_used"] = s.summary.rounds_used;
  j["mean"] = s.summary.mean;
  j["std"] = s.summary.std_dev;
  j["flagged"] = s.summary.flagged;
  return j.dump();
}

std::string pooled_summary_record(const ReportRow& row) {
  json j;
  j["type"] = "pooled";
  j["label"] = row.label;
  std::vector<std::uint64_t> seeds;
  std::vector<double> means;
  for (const SeedSummary& s : row.per_seed) {
    seeds.push_back(s.seed);
    means.push_back(s.summary.mean);
  }
  j["seeds"] = seeds;
  j["seed_means"] = means;
  j["mean"] = row.pooled_mean;
  j["std"] = row.pooled_std;
  j["flagged"] = row.flagged;
  return j.dump();
}

std::string score_record(std::size_t round, std::size_t client_id, std::size_t sample_index, double loss,
                         double uncertainty, bool biased) {
  json j;
  j["round"] = round;
  j["client"] = client_id;
  j["sample"] = sample_index;
  j["loss"] = loss;
  j["uncertainty"] = uncertainty;
  j["biased"] = biased;
  return j.dump();
}

std::string format_table(std::span<const ReportRow> rows) {
  std::size_t width = 5;
  for (const ReportRow& r : rows) width = std::max(width, r.label.size());
  std::ostringstream os;
  os << std::left << std::setw(static_cast<int>(width)) << "label" << "  seeds  accuracy (%)      per-seed last-10 mean (%)\n";
  for (const ReportRow& r : rows) {
    os << std::left << std::setw(static_cast<int>(width)) << r.label << "  " << std::setw(5) << r.per_seed.size()
       << "  " << std::setw(16) << (percent(r.pooled_mean) + " ± " + percent(r.pooled_std)) << "  ";
    for (std::size_t i = 0; i < r.per_seed.size(); ++i) {
      os << (i ? ", " : "") << percent(r.per_seed[i].summary.mean);
    }
    if (r.flagged) os << "  (fewer than 10 rounds)";
    os << '\n';
  }
  return os.str();
}

std::vector<federation::RoundReport> read_metrics(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open metrics file " + path.string());
  std::vector<federation::RoundReport> out;
  std::string line;
  std::size_t offset = 0;
  while (std::getline(in, line)) {
    const std::size_t line_start = offset;
    offset += line.size() + 1;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw FormatError("malformed metrics record: " + std::string(e.what()), line_start);
    }
    if (j.value("type", "") != "round") continue;
    federation::RoundReport r;
    r.round = j.at("round").get<std::size_t>();
    r.stage = j.at("stage").get<std::string>() == "warmup" ? federation::Stage::kWarmup : federation::Stage::kProgressive;
    r.client_ids = j.at("clients").get<std::vector<std::size_t>>();
    r.test_accuracy = j.at("accuracy").get<double>();
    r.mean_train_loss = j.at("mean_train_loss").get<double>();
    if (!j.at("mean_split_fraction").is_null()) r.mean_split_fraction = j.at("mean_split_fraction").get<double>();
    r.wall_ms = j.at("wall_ms").get<double>();
    out.push_back(std::move(r));
  }
  return out;
}

RunOutcome run_experiments(const ExperimentConfig& config, const RunOptions& options) {
  config.validate();
  const std::filesystem::path dir = options.output_dir.value_or(config.output_dir);
  if (options.write_files) prepare_output_dir(dir, options.force, options.resume);

  RunOutcome outcome;
  for (std::uint64_t seed : config.seeds) {
    spdlog::info("{}: seed {}", config.label(), seed);
    outcome.histories.push_back(run_seed(config, seed, options, dir));
  }
  outcome.row = emit_report(config.label(), outcome.histories);

  if (options.write_files) {
    LineSink summary(dir / "summary.jsonl", false);
    for (const SeedSummary& s : outcome.row.per_seed) summary.write(seed_summary_record(config.label(), s));
    summary.write(pooled_summary_record(outcome.row));
  }
  return outcome;
}

CompareOutcome compare(std::span<const ExperimentConfig> configs, const std::filesystem::path& output_dir,
                       bool force, bool write_files) {
  if (configs.size() < 2) throw ConfigError("compare needs at least two configs");
  std::set<std::string> labels;
  for (const ExperimentConfig& c : configs) {
    c.validate();
    if (c.seeds != configs.front().seeds) {
      throw ConfigError(c.label() + ": seeds differ from " + configs.front().label() +
                        "; paired comparisons need identical seed lists");
    }
    if (!labels.insert(c.label()).second) {
      throw ConfigError("duplicate config label '" + c.label() + "'; set distinct name keys");
    }
  }
  if (write_files) prepare_output_dir(output_dir, force, false);

  CompareOutcome outcome;
  for (const ExperimentConfig& c : configs) {
    RunOptions options;
    options.output_dir = output_dir / c.label();
    options.force = force;
    options.write_files = write_files;
    outcome.runs.push_back(run_experiments(c, options));
    outcome.rows.push_back(outcome.runs.back().row);
  }

  if (write_files) {
    LineSink jsonl(output_dir / "compare_summary.jsonl", false);
    for (const ReportRow& row : outcome.rows) {
      for (const SeedSummary& s : row.per_seed) jsonl.write(seed_summary_record(row.label, s));
      jsonl.write(pooled_summary_record(row));
    }
    std::ofstream table(output_dir / "compare_summary.txt", std::ios::trunc);
    table << format_table(outcome.rows);
  }
  return outcome;
}

}  // namespace fedbss::cli
