#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fedbss/config.hpp"
#include "fedbss/data.hpp"
#include "fedbss/federation.hpp"
#include "fedbss/nn.hpp"

namespace fedbss::cli {

struct PreparedData {
  data::Dataset train;  // labels after noise injection
  data::Dataset test;   // always clean
  std::vector<data::ClientPartition> partitions;
  nn::Architecture architecture;
};

PreparedData prepare_data(const ExperimentConfig& config, std::uint64_t seed);
federation::FederationConfig federation_for_seed(const ExperimentConfig& config, std::uint64_t seed);

struct SeedHistory {
  std::uint64_t seed = 0;
  std::vector<federation::RoundReport> reports;
};

struct SeedSummary {
  std::uint64_t seed = 0;
  federation::AccuracySummary summary;
};

struct ReportRow {
  std::string label;
  std::vector<SeedSummary> per_seed;
  double pooled_mean = 0.0;  // mean of the per-seed last-10 means
  double pooled_std = 0.0;   // sample std of the per-seed last-10 means
  bool flagged = false;      // some seed had fewer than 10 rounds
};

// Per-seed and pooled last-10-round accuracy statistics.
ReportRow emit_report(const std::string& label, std::span<const SeedHistory> histories);

// JSON-lines records.
std::string round_record(std::uint64_t seed, const federation::RoundReport& report);
std::string seed_summary_record(const std::string& label, const SeedSummary& s);
std::string pooled_summary_record(const ReportRow& row);
std::string score_record(std::size_t round, std::size_t client_id, std::size_t sample_index, double loss,
                         double uncertainty, bool biased);
// Human-readable table, one row per label: mean ± std over seeds.
std::string format_table(std::span<const ReportRow> rows);

std::vector<federation::RoundReport> read_metrics(const std::filesystem::path& path);

struct RunOptions {
  std::optional<std::filesystem::path> output_dir;  // overrides config.output_dir
  bool force = false;
  bool resume = false;
  bool dump_scores = false;  // in addition to config.dump_scores
  bool write_files = true;
};

struct RunOutcome {
  std::vector<SeedHistory> histories;
  ReportRow row;
};

// One experiment per seed. Writes metrics_seed<S>.jsonl per seed and
// summary.jsonl into the output directory (plus checkpoints/ and, when
// requested, scores_seed<S>.jsonl).
RunOutcome run_experiments(const ExperimentConfig& config, const RunOptions& options = {});

struct CompareOutcome {
  std::vector<RunOutcome> runs;
  std::vector<ReportRow> rows;
};

// Runs every config over the same seeds into <out>/<label>/ and writes
// compare_summary.jsonl and compare_summary.txt into <out>.
CompareOutcome compare(std::span<const ExperimentConfig> configs, const std::filesystem::path& output_dir,
                       bool force = false, bool write_files = true);

}  // namespace fedbss::cli
