#include <cstdlib>
#include <ostream>

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include "fedbss/cli.hpp"
#include "fedbss/config.hpp"
#include "fedbss/errors.hpp"
#include "fedbss/experiment.hpp"

namespace fedbss::cli {
namespace {

// FEDBSS_LOG = trace | debug | info | warn | error | off (default warn).
void configure_logging() {
  const char* level = std::getenv("FEDBSS_LOG");
  spdlog::set_level(level ? spdlog::level::from_str(level) : spdlog::level::warn);
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  configure_logging();

  CLI::App app{"Federated training simulator with bias-aware sample selection"};
  app.require_subcommand(1);

  std::string run_config;
  std::string out_dir;
  bool force = false;
  bool resume = false;
  auto* run = app.add_subcommand("run", "run one experiment per configured seed");
  run->add_option("config", run_config, "experiment config file")->required();
  run->add_option("--out", out_dir, "output directory (overrides output_dir)");
  run->add_flag("--force", force, "overwrite existing results");
  run->add_flag("--resume", resume, "continue interrupted seeds from their checkpoints");

  std::vector<std::string> compare_configs;
  auto* cmp = app.add_subcommand("compare", "run several configs over shared seeds and tabulate them");
  cmp->add_option("configs", compare_configs, "two or more experiment config files")->required()->expected(2, -1);
  cmp->add_option("--out", out_dir, "output directory (default: first config's output_dir)");
  cmp->add_flag("--force", force, "overwrite existing results");

  std::string validate_config;
  auto* val = app.add_subcommand("validate", "parse a config and echo it with defaults resolved");
  val->add_option("config", validate_config, "experiment config file")->required();

  std::string dump_config;
  auto* dump = app.add_subcommand("dump-scores", "run a config and write per-sample loss/uncertainty records");
  dump->add_option("config", dump_config, "experiment config file")->required();
  dump->add_option("--out", out_dir, "output directory (overrides output_dir)");
  dump->add_flag("--force", force, "overwrite existing results");

  std::vector<std::string> argv_storage{"fedbss"};
  argv_storage.insert(argv_storage.end(), args.begin(), args.end());
  std::vector<const char*> argv;
  for (const auto& a : argv_storage) argv.push_back(a.c_str());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "fedbss: " << e.what() << "\n" << app.help();
    return 2;
  }

  try {
    if (*val) {
      out << echo_config(parse_config(validate_config));
      return 0;
    }
    if (*run || *dump) {
      const ExperimentConfig config = parse_config(*run ? run_config : dump_config);
      out << echo_config(config) << '\n';
      RunOptions options;
      if (!out_dir.empty()) options.output_dir = out_dir;
      options.force = force;
      options.resume = resume;
      options.dump_scores = static_cast<bool>(*dump);
      const RunOutcome outcome = run_experiments(config, options);
      out << format_table(std::span(&outcome.row, 1));
      return 0;
    }
    if (*cmp) {
      std::vector<ExperimentConfig> configs;
      for (const auto& path : compare_configs) configs.push_back(parse_config(path));
      const std::filesystem::path dir = out_dir.empty() ? configs.front().output_dir : std::filesystem::path(out_dir);
      const CompareOutcome outcome = compare(configs, dir, force);
      out << format_table(outcome.rows);
      return 0;
    }
  } catch (const std::exception& e) {
    err << "fedbss: " << e.what() << '\n';
    return 1;
  }
  return 2;
}

}  // namespace fedbss::cli
