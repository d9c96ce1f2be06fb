#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>

#include "fedbss/config.hpp"
#include "fedbss/errors.hpp"

namespace fedbss::cli {
namespace {

[[noreturn]] void invalid(std::string_view key, const std::string& why) {
  throw ConfigError(std::string(key) + ": " + why);
}

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

std::uint64_t parse_uint(std::string_view key, std::string_view value) {
  std::uint64_t out = 0;
  const auto [end, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
  if (ec != std::errc() || end != value.data() + value.size() || value.empty()) {
    invalid(key, "expected a non-negative integer, got '" + std::string(value) + "'");
  }
  return out;
}

double parse_double(std::string_view key, std::string_view value) {
  double out = 0.0;
  const auto [end, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
  if (ec != std::errc() || end != value.data() + value.size() || value.empty() || !std::isfinite(out)) {
    invalid(key, "expected a finite number, got '" + std::string(value) + "'");
  }
  return out;
}

bool parse_bool(std::string_view key, std::string_view value) {
  if (value == "true") return true;
  if (value == "false") return false;
  invalid(key, "expected true or false, got '" + std::string(value) + "'");
}

std::vector<std::uint64_t> parse_seeds(std::string_view key, std::string_view value) {
  std::vector<std::uint64_t> seeds;
  std::size_t start = 0;
  while (start <= value.size()) {
    const std::size_t comma = value.find(',', start);
    const std::string_view item = trim(value.substr(start, comma == std::string_view::npos ? value.npos : comma - start));
    seeds.push_back(parse_uint(key, item));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return seeds;
}

std::string fmt_double(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

std::string fmt_bool(bool v) { return v ? "true" : "false"; }

template <class T>
std::string fmt_uint(T v) {
  return std::to_string(v);
}

struct Field {
  std::string_view key;
  std::function<void(ExperimentConfig&, std::string_view key, std::string_view value)> set;
  std::function<std::string(const ExperimentConfig&)> get;
  std::function<bool(const ExperimentConfig&)> echoed = [](const ExperimentConfig&) { return true; };
};

#define FEDBSS_SIZE_FIELD(name, member)                                                                       \
  Field {                                                                                                     \
    name, [](ExperimentConfig& c, std::string_view k, std::string_view v) { c.member = static_cast<std::size_t>(parse_uint(k, v)); }, \
        [](const ExperimentConfig& c) { return fmt_uint(c.member); }                                           \
  }
#define FEDBSS_DOUBLE_FIELD(name, member)                                                                        \
  Field {                                                                                                        \
    name, [](ExperimentConfig& c, std::string_view k, std::string_view v) { c.member = parse_double(k, v); }, \
        [](const ExperimentConfig& c) { return fmt_double(c.member); }                                          \
  }

const std::vector<Field>& fields() {
  auto is_idx = [](const ExperimentConfig& c) { return c.dataset.source == DataSource::kIdx; };
  auto path_field = [is_idx](std::string_view key, std::filesystem::path DatasetSpec::*member) {
    return Field{key,
                 [member](ExperimentConfig& c, std::string_view, std::string_view v) { c.dataset.*member = std::string(v); },
                 [member](const ExperimentConfig& c) { return (c.dataset.*member).string(); }, is_idx};
  };
  static const std::vector<Field> table = {
      Field{"name", [](ExperimentConfig& c, std::string_view, std::string_view v) { c.name = std::string(v); },
            [](const ExperimentConfig& c) { return c.name; },
            [](const ExperimentConfig& c) { return !c.name.empty(); }},
      Field{"dataset",
            [](ExperimentConfig& c, std::string_view k, std::string_view v) {
              if (v == "synthetic") c.dataset.source = DataSource::kSynthetic;
              else if (v == "idx") c.dataset.source = DataSource::kIdx;
              else invalid(k, "expected synthetic or idx, got '" + std::string(v) + "'");
            },
            [](const ExperimentConfig& c) {
              return std::string(c.dataset.source == DataSource::kIdx ? "idx" : "synthetic");
            }},
      path_field("train_images", &DatasetSpec::train_images),
      path_field("train_labels", &DatasetSpec::train_labels),
      path_field("test_images", &DatasetSpec::test_images),
      path_field("test_labels", &DatasetSpec::test_labels),
      FEDBSS_SIZE_FIELD("train_subset", dataset.train_subset),
      FEDBSS_SIZE_FIELD("test_subset", dataset.test_subset),
      Field{"data_seed", [](ExperimentConfig& c, std::string_view k, std::string_view v) { c.dataset.data_seed = parse_uint(k, v); },
            [](const ExperimentConfig& c) { return fmt_uint(c.dataset.data_seed); }},
      FEDBSS_SIZE_FIELD("synth_classes", dataset.synth_classes),
      FEDBSS_SIZE_FIELD("synth_per_class", dataset.synth_per_class),
      FEDBSS_SIZE_FIELD("synth_test_per_class", dataset.synth_test_per_class),
      FEDBSS_SIZE_FIELD("synth_dim", dataset.synth_dim),
      FEDBSS_DOUBLE_FIELD("synth_spread", dataset.synth_spread),
      FEDBSS_DOUBLE_FIELD("noise_ratio", dataset.noise_ratio),
      Field{"noise_before_partition",
            [](ExperimentConfig& c, std::string_view k, std::string_view v) { c.dataset.noise_before_partition = parse_bool(k, v); },
            [](const ExperimentConfig& c) { return fmt_bool(c.dataset.noise_before_partition); }},
      Field{"partition",
            [](ExperimentConfig& c, std::string_view k, std::string_view v) {
              if (v == "dirichlet") c.partition.scheme = data::Scheme::kDirichlet;
              else if (v == "shards") c.partition.scheme = data::Scheme::kShards;
              else invalid(k, "expected dirichlet or shards, got '" + std::string(v) + "'");
            },
            [](const ExperimentConfig& c) {
              return std::string(c.partition.scheme == data::Scheme::kShards ? "shards" : "dirichlet");
            }},
      FEDBSS_DOUBLE_FIELD("dirichlet_alpha", partition.dirichlet_alpha),
      FEDBSS_SIZE_FIELD("shards_per_client", partition.shards_per_client),
      FEDBSS_SIZE_FIELD("clients", federation.n_clients),
      FEDBSS_DOUBLE_FIELD("participation", federation.participation_fraction),
      Field{"rounds",
            [](ExperimentConfig& c, std::string_view k, std::string_view v) {
              // Stored as T1 + T2; resolved against warmup_rounds after parsing.
              c.federation.rounds_stage2 = static_cast<std::size_t>(parse_uint(k, v));
            },
            [](const ExperimentConfig& c) { return fmt_uint(c.federation.total_rounds()); }},
      FEDBSS_SIZE_FIELD("warmup_rounds", federation.rounds_stage1),
      FEDBSS_SIZE_FIELD("local_epochs", federation.local_epochs),
      FEDBSS_SIZE_FIELD("batch_size", federation.batch_size),
      FEDBSS_DOUBLE_FIELD("lr", federation.optimizer.learning_rate),
      FEDBSS_DOUBLE_FIELD("momentum", federation.optimizer.momentum),
      FEDBSS_DOUBLE_FIELD("weight_decay", federation.optimizer.weight_decay),
      Field{"algorithm",
            [](ExperimentConfig& c, std::string_view, std::string_view v) {
              c.federation.algorithm.kind = federation::parse_algorithm(v);
            },
            [](const ExperimentConfig& c) { return std::string(federation::algorithm_name(c.federation.algorithm.kind)); }},
      FEDBSS_DOUBLE_FIELD("mu", federation.algorithm.mu),
      Field{"variant",
            [](ExperimentConfig& c, std::string_view, std::string_view v) {
              c.federation.algorithm.variant = selection::parse_variant(v);
            },
            [](const ExperimentConfig& c) { return std::string(selection::variant_name(c.federation.algorithm.variant)); }},
      Field{"aggregation",
            [](ExperimentConfig& c, std::string_view, std::string_view v) {
              c.federation.aggregation = federation::parse_aggregation(v);
            },
            [](const ExperimentConfig& c) { return std::string(federation::aggregation_name(c.federation.aggregation)); }},
      Field{"model", [](ExperimentConfig& c, std::string_view, std::string_view v) { c.model.kind = parse_model_kind(v); },
            [](const ExperimentConfig& c) { return std::string(model_kind_name(c.model.kind)); }},
      FEDBSS_SIZE_FIELD("hidden", model.hidden),
      Field{"seeds", [](ExperimentConfig& c, std::string_view k, std::string_view v) { c.seeds = parse_seeds(k, v); },
            [](const ExperimentConfig& c) {
              std::string out;
              for (std::size_t i = 0; i < c.seeds.size(); ++i) out += (i ? "," : "") + std::to_string(c.seeds[i]);
              return out;
            }},
      Field{"output_dir", [](ExperimentConfig& c, std::string_view, std::string_view v) { c.output_dir = std::string(v); },
            [](const ExperimentConfig& c) { return c.output_dir.string(); }},
      Field{"dump_scores", [](ExperimentConfig& c, std::string_view k, std::string_view v) { c.dump_scores = parse_bool(k, v); },
            [](const ExperimentConfig& c) { return fmt_bool(c.dump_scores); }},
      FEDBSS_SIZE_FIELD("threads", federation.threads),
  };
  return table;
}

#undef FEDBSS_SIZE_FIELD
#undef FEDBSS_DOUBLE_FIELD

}  // namespace

std::string_view model_kind_name(nn::ModelKind kind) {
  switch (kind) {
    case nn::ModelKind::kSoftmaxRegression: return "softmax";
    case nn::ModelKind::kMlp: return "mlp";
    case nn::ModelKind::kCnn: return "cnn";
  }
  return "unknown";
}

nn::ModelKind parse_model_kind(std::string_view name) {
  if (name == "softmax") return nn::ModelKind::kSoftmaxRegression;
  if (name == "mlp") return nn::ModelKind::kMlp;
  if (name == "cnn") return nn::ModelKind::kCnn;
  throw ConfigError("model: expected softmax, mlp or cnn, got '" + std::string(name) + "'");
}

std::string ExperimentConfig::label() const {
  if (!name.empty()) return name;
  std::string out(federation::algorithm_name(federation.algorithm.kind));
  if (federation.algorithm.kind == federation::Algorithm::kFedBss) {
    out += "-" + std::string(selection::variant_name(federation.algorithm.variant));
  }
  return out;
}

void ExperimentConfig::validate() const {
  const DatasetSpec& d = dataset;
  if (d.source == DataSource::kIdx) {
    for (auto [key, path] : {std::pair{"train_images", &d.train_images}, std::pair{"train_labels", &d.train_labels},
                             std::pair{"test_images", &d.test_images}, std::pair{"test_labels", &d.test_labels}}) {
      if (path->empty()) invalid(key, "required when dataset = idx");
    }
  } else {
    if (d.synth_classes < 2) invalid("synth_classes", "must be >= 2");
    if (d.synth_per_class < 1) invalid("synth_per_class", "must be >= 1");
    if (d.synth_test_per_class < 1) invalid("synth_test_per_class", "must be >= 1");
    if (d.synth_dim < 1) invalid("synth_dim", "must be >= 1");
    if (!(d.synth_spread > 0.0)) invalid("synth_spread", "must be > 0");
  }
  if (!(d.noise_ratio >= 0.0 && d.noise_ratio <= 1.0)) invalid("noise_ratio", "must lie in [0, 1]");
  if (!(partition.dirichlet_alpha > 0.0)) invalid("dirichlet_alpha", "must be > 0");
  if (partition.shards_per_client < 1) invalid("shards_per_client", "must be >= 1");
  if (partition.n_clients != federation.n_clients) invalid("clients", "partition and federation disagree");
  if (federation.n_clients < 1) invalid("clients", "must be >= 1");
  if (!(federation.participation_fraction > 0.0 && federation.participation_fraction <= 1.0)) {
    invalid("participation", "must lie in (0, 1]");
  }
  if (federation.total_rounds() < 1) invalid("rounds", "must be >= 1");
  if (federation.local_epochs < 1) invalid("local_epochs", "must be >= 1");
  if (federation.batch_size < 1) invalid("batch_size", "must be >= 1");
  if (!(federation.optimizer.learning_rate >= 0.0)) invalid("lr", "must be >= 0");
  if (!(federation.optimizer.momentum >= 0.0 && federation.optimizer.momentum < 1.0)) {
    invalid("momentum", "must lie in [0, 1)");
  }
  if (!(federation.optimizer.weight_decay >= 0.0)) invalid("weight_decay", "must be >= 0");
  if (!(federation.algorithm.mu >= 0.0)) invalid("mu", "must be >= 0");
  if (federation.threads < 1) invalid("threads", "must be >= 1");
  if (model.hidden < 1) invalid("hidden", "must be >= 1");
  if (model.kind == nn::ModelKind::kCnn && d.source != DataSource::kIdx) {
    invalid("model", "cnn needs image data (dataset = idx)");
  }
  if (seeds.empty()) invalid("seeds", "at least one seed is required");
  if (std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size()) {
    invalid("seeds", "seeds must be distinct");
  }
  if (output_dir.empty()) invalid("output_dir", "must not be empty");
  federation.validate();
  partition.validate();
}

ExperimentConfig parse_config_text(std::string_view text, std::string_view origin) {
  std::map<std::string, std::string, std::less<>> values;
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start < text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(start, end - start);
    start = end + 1;
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string where = std::string(origin) + ":" + std::to_string(line_no);
    if (eq == std::string_view::npos) throw ConfigError(where + ": expected 'key = value'");
    const std::string key(trim(line.substr(0, eq)));
    const std::string value(trim(line.substr(eq + 1)));
    if (key.empty()) throw ConfigError(where + ": missing key");
    if (!values.emplace(key, value).second) throw ConfigError(where + ": " + key + ": key given twice");
  }

  for (const auto& [key, value] : values) {
    const auto& table = fields();
    if (std::none_of(table.begin(), table.end(), [&](const Field& f) { return f.key == key; })) {
      throw ConfigError(key + ": unknown key (strict mode)");
    }
  }
  for (std::string_view required : {"dataset", "algorithm"}) {
    if (!values.contains(required)) invalid(required, "required key is missing");
  }

  ExperimentConfig config;
  bool rounds_given = false;
  for (const Field& f : fields()) {
    const auto it = values.find(f.key);
    if (it == values.end()) continue;
    f.set(config, f.key, it->second);
    if (f.key == "rounds") rounds_given = true;
  }
  // "rounds" is the total; the warmup share comes out of it.
  const std::size_t total = rounds_given ? config.federation.rounds_stage2 : 200;
  if (config.federation.rounds_stage1 > total) invalid("warmup_rounds", "exceeds rounds");
  config.federation.rounds_stage2 = total - config.federation.rounds_stage1;
  config.partition.n_clients = config.federation.n_clients;
  config.validate();
  return config;
}

ExperimentConfig parse_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path.string() + ": cannot open config file");
  std::stringstream buffer;
  buffer << in.rdbuf();
  ExperimentConfig config = parse_config_text(buffer.str(), path.string());
  if (config.name.empty()) config.name = path.stem().string();
  return config;
}

std::string echo_config(const ExperimentConfig& config) {
  std::ostringstream os;
  for (const Field& f : fields()) {
    if (f.echoed(config)) os << f.key << " = " << f.get(config) << '\n';
  }
  return os.str();
}

}  // namespace fedbss::cli
