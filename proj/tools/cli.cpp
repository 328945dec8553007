#include "cli.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <vector>

#include "capstraffic/checkpoint.hpp"
#include "capstraffic/error.hpp"
#include "capstraffic/metrics.hpp"
#include "capstraffic/speed_matrix.hpp"
#include "capstraffic/synthetic.hpp"
#include "capstraffic/train.hpp"
#include "capstraffic/windowing.hpp"

namespace capstraffic::cli {

namespace fs = std::filesystem;

namespace {

// Bad flags or config values; reported as a usage error.
class ConfigError : public Error {
 public:
  using Error::Error;
};

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::size_t to_size(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  long long x = 0;
  try {
    x = std::stoll(v, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos != v.size() || v.empty() || x < 0) {
    throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
  }
  return static_cast<std::size_t>(x);
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  unsigned long long x = 0;
  try {
    x = std::stoull(v, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos != v.size() || v.empty() || v[0] == '-') {
    throw ConfigError(key + ": expected an unsigned integer, got '" + v + "'");
  }
  return x;
}

double to_double(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  double x = 0.0;
  try {
    x = std::stod(v, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos != v.size() || v.empty() || !std::isfinite(x)) {
    throw ConfigError(key + ": expected a number, got '" + v + "'");
  }
  return x;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError(key + ": expected true or false, got '" + v + "'");
}

// Shortest text that reads back to the same double.
std::string fmt(double v) {
  char buf[32];
  for (int precision = 1; precision <= 17; ++precision) {
    std::snprintf(buf, sizeof buf, "%.*g", precision, v);
    if (std::strtod(buf, nullptr) == v) break;
  }
  return buf;
}

struct Setting {
  const char* key;
  const char* help;
  std::function<void(RunConfig&, const std::string&)> apply;
  std::function<std::string(const RunConfig&)> show;
  bool is_flag = false;
};

const std::vector<Setting>& settings() {
  static const std::vector<Setting> table = {
      {"data", "speed CSV file",
       [](RunConfig& c, const std::string& v) { c.data = v; },
       [](const RunConfig& c) { return c.data; }},
      {"output", "output file (generate) or directory",
       [](RunConfig& c, const std::string& v) { c.output = v; },
       [](const RunConfig& c) { return c.output; }},
      {"checkpoint", "checkpoint file",
       [](RunConfig& c, const std::string& v) { c.checkpoint = v; },
       [](const RunConfig& c) { return c.checkpoint; }},
      {"model", "cnn or capsnet",
       [](RunConfig& c, const std::string& v) { c.model = v; },
       [](const RunConfig& c) { return c.model; }},
      {"width", "full or reduced (CapsNet channel widths)",
       [](RunConfig& c, const std::string& v) { c.width = v; },
       [](const RunConfig& c) { return c.width; }},
      {"task", "task1..task4",
       [](RunConfig& c, const std::string& v) { c.task = v; },
       [](const RunConfig& c) { return c.task; }},
      {"horizon", "override L (steps ahead)",
       [](RunConfig& c, const std::string& v) { c.horizon = to_size("horizon", v); },
       [](const RunConfig& c) { return std::to_string(c.resolved_task().horizon); }},
      {"history", "override M (history steps)",
       [](RunConfig& c, const std::string& v) { c.history = to_size("history", v); },
       [](const RunConfig& c) { return std::to_string(c.resolved_task().history); }},
      {"segments", "override N (road segments)",
       [](RunConfig& c, const std::string& v) { c.segments = to_size("segments", v); },
       [](const RunConfig& c) { return std::to_string(c.resolved_task().segments); }},
      {"lr0", "initial learning rate",
       [](RunConfig& c, const std::string& v) { c.lr0 = to_double("lr0", v); },
       [](const RunConfig& c) { return fmt(c.lr0); }},
      {"decay", "per-step learning-rate decay",
       [](RunConfig& c, const std::string& v) { c.decay = to_double("decay", v); },
       [](const RunConfig& c) { return fmt(c.decay); }},
      {"epochs", "training epochs",
       [](RunConfig& c, const std::string& v) { c.epochs = to_size("epochs", v); },
       [](const RunConfig& c) { return std::to_string(c.epochs); }},
      {"batch", "minibatch size",
       [](RunConfig& c, const std::string& v) { c.batch = to_size("batch", v); },
       [](const RunConfig& c) { return std::to_string(c.batch); }},
      {"seed", "random seed",
       [](RunConfig& c, const std::string& v) { c.seed = to_u64("seed", v); },
       [](const RunConfig& c) { return std::to_string(c.seed); }},
      {"split", "first evaluation timestamp (ISO-8601)",
       [](RunConfig& c, const std::string& v) { c.split = v; },
       [](const RunConfig& c) { return c.split; }},
      {"max-missing-day", "drop days with a larger fraction of missing cells",
       [](RunConfig& c, const std::string& v) {
         c.max_missing_day = to_double("max-missing-day", v);
       },
       [](const RunConfig& c) { return fmt(c.max_missing_day); }},
      {"sensors", "number of synthetic sensors",
       [](RunConfig& c, const std::string& v) { c.sensors = to_size("sensors", v); },
       [](const RunConfig& c) { return std::to_string(c.sensors); }},
      {"days", "number of synthetic days",
       [](RunConfig& c, const std::string& v) { c.days = to_size("days", v); },
       [](const RunConfig& c) { return std::to_string(c.days); }},
      {"missing-rate", "probability of a missing reading",
       [](RunConfig& c, const std::string& v) { c.missing_rate = to_double("missing-rate", v); },
       [](const RunConfig& c) { return fmt(c.missing_rate); }},
      {"noise", "synthetic noise amplitude (km/h)",
       [](RunConfig& c, const std::string& v) { c.noise = to_double("noise", v); },
       [](const RunConfig& c) { return fmt(c.noise); }},
      {"baseline-only", "evaluate only the persistence baseline",
       [](RunConfig& c, const std::string& v) { c.baseline_only = to_bool("baseline-only", v); },
       [](const RunConfig& c) { return std::string(c.baseline_only ? "true" : "false"); },
       true},
      {"end-row", "last data row of the prediction window (default: last row)",
       [](RunConfig& c, const std::string& v) { c.end_row = to_size("end-row", v); },
       [](const RunConfig& c) { return c.end_row ? std::to_string(*c.end_row) : std::string(); }},
  };
  return table;
}

const Setting& setting(const std::string& key) {
  for (const auto& s : settings()) {
    if (key == s.key) return s;
  }
  throw ConfigError("unknown setting '" + key + "'");
}

void write_manifest(const RunConfig& cfg, const std::string& command,
                    const std::vector<std::string>& keys, const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << "# capstraffic " << command << " resolved configuration\n";
  for (const auto& k : keys) out << k << '=' << setting(k).show(cfg) << '\n';
  if (!out) throw IoError("write failed: " + path.string());
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
}

void require(bool ok, const std::string& what) {
  if (!ok) throw ConfigError(what);
}

struct PreparedData {
  SpeedMatrix train;
  SpeedMatrix eval;
  std::int64_t boundary = 0;
};

PreparedData prepare(const RunConfig& cfg) {
  require(!cfg.data.empty(), "--data is required");
  const SpeedMatrix raw = load_csv(cfg.data);
  const SpeedMatrix kept = drop_sparse_days(raw, cfg.max_missing_day);
  if (kept.rows() == 0) throw DataError("every day exceeds the missing-data threshold");
  const std::int64_t boundary =
      cfg.split.empty() ? default_split_boundary(kept) : parse_timestamp(cfg.split);
  TrainEvalSplit parts = split_train_eval(kept, boundary);
  PreparedData out;
  out.train = impute(parts.train, parts.train);
  out.eval = impute(parts.eval, parts.train);
  out.boundary = boundary;
  return out;
}

void print_report_row(std::ostream& out, const char* name, double a, std::optional<double> b) {
  out << std::left << std::setw(24) << name << std::right << std::setw(14) << std::fixed
      << std::setprecision(4) << a;
  if (b) out << std::setw(14) << *b;
  out << '\n' << std::defaultfloat;
}

// --- commands -------------------------------------------------------------

int cmd_generate(const RunConfig& cfg, std::ostream& out) {
  require(cfg.sensors >= 1, "--sensors must be >= 1");
  require(cfg.days >= 1, "--days must be >= 1");
  require(cfg.missing_rate >= 0.0 && cfg.missing_rate < 1.0, "--missing-rate must be in [0, 1)");
  require(cfg.noise >= 0.0, "--noise must be >= 0");
  require(!cfg.output.empty(), "--output is required");
  SyntheticProfile profile;
  profile.noise = cfg.noise;
  profile.missing_rate = cfg.missing_rate;
  const SpeedMatrix m = generate_synthetic(cfg.sensors, cfg.days, cfg.seed, profile);
  const fs::path path(cfg.output);
  if (path.has_parent_path()) ensure_dir(path.parent_path());
  write_csv(m, path);
  out << "wrote " << m.rows() << " rows x " << m.cols() << " sensors (" << m.missing_count()
      << " missing) to " << path.string() << '\n';
  return 0;
}

void validate_training(const RunConfig& cfg) {
  require(cfg.lr0 > 0.0, "--lr0 must be > 0");
  require(cfg.decay > 0.0 && cfg.decay <= 1.0, "--decay must be in (0, 1]");
  require(cfg.epochs >= 1, "--epochs must be >= 1");
  require(cfg.batch >= 1, "--batch must be >= 1");
  require(cfg.max_missing_day >= 0.0 && cfg.max_missing_day <= 1.0,
          "--max-missing-day must be in [0, 1]");
  require(!cfg.output.empty(), "--output is required");
}

int cmd_train(const RunConfig& cfg, std::ostream& out) {
  validate_training(cfg);
  const TaskSpec task = cfg.resolved_task();
  const ModelSpec spec = cfg.resolved_model();
  out << "model=" << to_string(spec.kind) << " width=" << cfg.width << " task=" << describe(task)
      << " lr0=" << cfg.lr0 << " decay=" << cfg.decay << " epochs=" << cfg.epochs
      << " batch=" << cfg.batch << " seed=" << cfg.seed << '\n';

  const PreparedData data = prepare(cfg);
  const ScalingStats stats = ScalingStats::from(data.train);
  const WindowedDataset train_set = make_windows(data.train, task, stats);
  Model model = Model::build(spec, task);
  out << "train windows=" << train_set.size() << " parameters=" << model.parameter_count()
      << " split=" << format_timestamp(data.boundary) << '\n';

  const fs::path dir(cfg.output);
  ensure_dir(dir);
  std::vector<EpochStats> log;
  TrainConfig tc;
  tc.adam.lr0 = cfg.lr0;
  tc.adam.decay = cfg.decay;
  tc.epochs = cfg.epochs;
  tc.batch_size = cfg.batch;
  tc.seed = cfg.seed;
  tc.on_epoch = [&](const EpochStats& e) {
    log.push_back(e);
    out << "epoch " << e.epoch << '/' << cfg.epochs << " loss=" << e.mean_loss
        << " lr=" << e.learning_rate << std::endl;
  };
  const TrainResult result = train(std::move(model), train_set, tc);

  save_checkpoint(result.checkpoint, dir / "checkpoint.bin");
  {
    std::ofstream loss(dir / "loss.csv", std::ios::binary);
    if (!loss) throw IoError("cannot write " + (dir / "loss.csv").string());
    loss << "epoch,loss,step,learning_rate\n";
    for (const auto& e : log) {
      loss << e.epoch << ',' << fmt(e.mean_loss) << ',' << e.step << ',' << fmt(e.learning_rate)
           << '\n';
    }
  }
  write_manifest(cfg, "train",
                 {"data", "output", "model", "width", "task", "horizon", "history", "segments",
                  "lr0", "decay", "epochs", "batch", "seed", "split", "max-missing-day"},
                 dir / "manifest.txt");
  out << "wrote " << (dir / "checkpoint.bin").string() << " and " << (dir / "loss.csv").string()
      << '\n';
  return 0;
}

int cmd_evaluate(const RunConfig& cfg, const CLI::App& sub, std::ostream& out) {
  require(cfg.max_missing_day >= 0.0 && cfg.max_missing_day <= 1.0,
          "--max-missing-day must be in [0, 1]");
  require(cfg.batch >= 1, "--batch must be >= 1");
  const fs::path dir(cfg.output.empty() ? "evaluation" : cfg.output);
  const PreparedData data = prepare(cfg);

  std::optional<Checkpoint> ck;
  TaskSpec task;
  ScalingStats stats;
  if (cfg.baseline_only) {
    task = cfg.resolved_task();
    stats = ScalingStats::from(data.train);
  } else {
    require(!cfg.checkpoint.empty(), "--checkpoint is required unless --baseline-only is set");
    ck = load_checkpoint(cfg.checkpoint);
    const bool task_given = sub.count("--task") || sub.count("--horizon") ||
                            sub.count("--history") || sub.count("--segments");
    if (task_given) require_task(*ck, cfg.resolved_task());
    task = ck->task;
    stats = ck->stats;
  }
  const WindowedDataset eval_set = make_windows(data.eval, task, stats);
  const Tensor truth = label_speeds(eval_set);
  const Tensor baseline_pred = persistence_forecast(eval_set);
  const MetricsReport baseline = compute_metrics(baseline_pred.data(), truth.data());

  std::optional<MetricsReport> model_report;
  Tensor pred = baseline_pred;
  if (ck) {
    pred = to_speeds(predict_raw(model_from(*ck), eval_set.inputs, cfg.batch), stats);
    model_report = compute_metrics(pred.data(), truth.data());
  }
  const MetricsReport* reports[] = {&baseline, model_report ? &*model_report : nullptr};
  for (const MetricsReport* r : reports) {
    if (r && r->rmse < r->mae) throw NumericError("metric invariant violated: rmse < mae");
  }

  out << "evaluation windows=" << eval_set.size() << " task=" << describe(task) << '\n';
  out << std::left << std::setw(24) << "metric" << std::right;
  if (model_report) out << std::setw(14) << "model";
  out << std::setw(14) << "persistence" << '\n';
  auto row = [&](const char* name, double MetricsReport::*field) {
    if (model_report) {
      print_report_row(out, name, (*model_report).*field, baseline.*field);
    } else {
      print_report_row(out, name, baseline.*field, std::nullopt);
    }
  };
  row("MRE (fraction)", &MetricsReport::mre);
  row("MAE (km/h)", &MetricsReport::mae);
  row("RMSE (km/h)", &MetricsReport::rmse);
  const MetricsReport& primary = model_report ? *model_report : baseline;
  out << "samples I=" << primary.sample_count
      << " excluded_zero_targets=" << primary.excluded_zero_targets << '\n';

  ensure_dir(dir);
  {
    std::ofstream json(dir / "metrics.json", std::ios::binary);
    if (!json) throw IoError("cannot write " + (dir / "metrics.json").string());
    json << "{\n\"persistence\": " << to_json(baseline);
    if (model_report) json << ",\n\"model\": " << to_json(*model_report);
    json << "\n}\n";
  }
  dump_comparison(truth, pred, dir / (model_report ? "comparison" : "baseline"));
  write_manifest(cfg, "evaluate",
                 {"data", "checkpoint", "output", "task", "split", "max-missing-day", "batch",
                  "baseline-only"},
                 dir / "manifest.txt");
  out << "wrote " << (dir / "metrics.json").string() << '\n';
  return 0;
}

int cmd_predict(const RunConfig& cfg, std::ostream& out) {
  require(!cfg.checkpoint.empty(), "--checkpoint is required");
  require(!cfg.data.empty(), "--data is required");
  const Checkpoint ck = load_checkpoint(cfg.checkpoint);
  const SpeedMatrix m = impute(load_csv(cfg.data));
  const TaskSpec& task = ck.task;
  if (m.cols() != task.segments) {
    throw GeometryError("checkpoint expects " + std::to_string(task.segments) +
                        " sensors, data has " + std::to_string(m.cols()));
  }
  const std::size_t end = cfg.end_row.value_or(m.rows() - 1);
  if (end >= m.rows() || end + 1 < task.history) {
    throw DataError("prediction window ending at row " + std::to_string(end) +
                    " needs rows " + std::to_string(task.history) + " rows of history");
  }
  const std::size_t begin = end + 1 - task.history;
  for (std::size_t r = begin + 1; r <= end; ++r) {
    if (m.timestamps[r] - m.timestamps[r - 1] != kCadenceSeconds) {
      throw DataError("prediction window crosses a timestamp gap");
    }
  }
  Tensor window({task.history, task.segments},
                std::vector<double>(m.values.begin() + begin * m.cols(),
                                    m.values.begin() + (end + 1) * m.cols()));
  const Tensor speeds = predict(ck, window);

  std::ostringstream csv;
  csv << "timestamp,sensor,speed_kmh\n";
  for (std::size_t l = 0; l < task.horizon; ++l) {
    const std::int64_t t = m.timestamps[end] + static_cast<std::int64_t>(l + 1) * kCadenceSeconds;
    for (std::size_t n = 0; n < task.segments; ++n) {
      csv << format_timestamp(t) << ',' << m.sensor_ids[n] << ','
          << fmt(speeds[l * task.segments + n]) << '\n';
    }
  }
  if (cfg.output.empty()) {
    out << csv.str();
  } else {
    std::ofstream f(cfg.output, std::ios::binary);
    if (!f) throw IoError("cannot write " + cfg.output);
    f << csv.str();
    out << "wrote " << task.label_size() << " predictions to " << cfg.output << '\n';
  }
  return 0;
}

struct AuditRow {
  ModelKind kind;
  const char* task;
  std::size_t expected;
  double published;  // 0 when no figure was published
  const char* published_text;
};

int cmd_audit(std::ostream& out) {
  static const AuditRow rows[] = {
      {ModelKind::cnn, "task1", 373'972, 0.374e6, "0.374x10^6"},
      {ModelKind::cnn, "task2", 376'552, 0.0, "-"},
      {ModelKind::cnn, "task3", 390'642, 0.0, "-"},
      {ModelKind::cnn, "task4", 409'892, 0.410e6, "0.410x10^6"},
      {ModelKind::capsnet, "task1", 8'238'560, 8.24e6, "8.24x10^6"},
      {ModelKind::capsnet, "task2", 16'430'560, 0.0, "-"},
      {ModelKind::capsnet, "task3", 71'726'560, 0.0, "-"},
      {ModelKind::capsnet, "task4", 143'406'560, 143e6, "143x10^6"},
  };
  bool ok = true;
  out << std::left << std::setw(9) << "model" << std::setw(7) << "task" << std::right
      << std::setw(13) << "count" << std::setw(13) << "expected" << std::setw(13) << "published"
      << std::setw(10) << "dev%" << "  status\n";
  for (const auto& r : rows) {
    const ModelSpec spec = r.kind == ModelKind::cnn ? ModelSpec::cnn() : ModelSpec::capsnet();
    const std::size_t count = count_parameters(spec, TaskSpec::named(r.task));
    bool row_ok = count == r.expected;
    std::string dev = "-";
    if (r.published > 0.0) {
      const double d = 100.0 * std::abs(double(count) - r.published) / r.published;
      row_ok = row_ok && d <= 1.0;
      std::ostringstream s;
      s << std::fixed << std::setprecision(3) << d;
      dev = s.str();
    }
    ok = ok && row_ok;
    out << std::left << std::setw(9) << to_string(r.kind) << std::setw(7) << r.task << std::right
        << std::setw(13) << count << std::setw(13) << r.expected << std::setw(13) << r.published_text
        << std::setw(10) << dev << "  " << (row_ok ? "ok" : "MISMATCH") << '\n';
  }
  out << (ok ? "all parameter counts match\n" : "parameter count mismatch\n");
  return ok ? 0 : 1;
}

}  // namespace

TaskSpec RunConfig::resolved_task() const {
  TaskSpec t = TaskSpec::named(task);
  if (horizon || history || segments) t.name = "custom";
  if (horizon) t.horizon = *horizon;
  if (history) t.history = *history;
  if (segments) t.segments = *segments;
  t.validate();
  return t;
}

ModelSpec RunConfig::resolved_model() const {
  const ModelKind kind = parse_model_kind(model);
  if (width != "full" && width != "reduced") {
    throw ConfigError("width must be 'full' or 'reduced', got '" + width + "'");
  }
  if (kind == ModelKind::cnn) {
    if (width != "full") throw ConfigError("the reduced width applies to the CapsNet only");
    return ModelSpec::cnn(seed);
  }
  return width == "full" ? ModelSpec::capsnet(seed) : ModelSpec::capsnet_reduced(seed);
}

std::map<std::string, std::string> read_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  std::map<std::string, std::string> values;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(path + ":" + std::to_string(line_no) + ": expected key=value");
    }
    values[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return values;
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Traffic-speed forecasting with CNN and capsule networks"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Expand all help");

  struct Command {
    std::string name;
    CLI::App* app = nullptr;
    std::vector<std::string> keys;
    std::map<std::string, std::string> raw;
    std::map<std::string, CLI::Option*> options;
    std::string config_path;
  };
  std::vector<Command> commands = {
      {"generate", nullptr, {"sensors", "days", "seed", "missing-rate", "noise", "output"}},
      {"train", nullptr, {"data", "model", "width", "task", "horizon", "history", "segments",
                          "lr0", "decay", "epochs", "batch", "seed", "split", "max-missing-day",
                          "output"}},
      {"evaluate", nullptr, {"checkpoint", "data", "task", "horizon", "history", "segments",
                             "split", "max-missing-day", "batch", "baseline-only", "output"}},
      {"predict", nullptr, {"checkpoint", "data", "end-row", "output"}},
      {"audit", nullptr, {}},
  };
  const std::map<std::string, std::string> descriptions = {
      {"generate", "write a synthetic speed CSV"},
      {"train", "train a model and write checkpoint.bin, loss.csv, manifest.txt"},
      {"evaluate", "report MRE/MAE/RMSE against the persistence baseline"},
      {"predict", "forecast the steps after a window of the data"},
      {"audit", "check trainable-parameter counts of both architectures on all tasks"},
  };
  for (auto& cmd : commands) {
    cmd.app = app.add_subcommand(cmd.name, descriptions.at(cmd.name));
    for (const auto& key : cmd.keys) {
      const Setting& s = setting(key);
      std::string flag = "--" + key;
      if (key == "output") flag = "-o,--output";
      if (s.is_flag) {
        cmd.options[key] = cmd.app->add_flag_callback(
            flag, [&cmd, key] { cmd.raw[key] = "true"; }, s.help);
      } else {
        cmd.options[key] = cmd.app->add_option(flag, cmd.raw[key], s.help);
      }
    }
    if (!cmd.keys.empty()) {
      cmd.app->add_option("--config", cmd.config_path, "key=value settings file");
    }
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n" << "run with --help for usage\n";
    return 2;
  }

  for (auto& cmd : commands) {
    if (!cmd.app->parsed()) continue;
    RunConfig cfg;
    try {
      if (!cmd.config_path.empty()) {
        for (const auto& [key, value] : read_config_file(cmd.config_path)) {
          setting(key).apply(cfg, value);
        }
      }
      for (const auto& key : cmd.keys) {
        if (cmd.options[key]->count() > 0) setting(key).apply(cfg, cmd.raw[key]);
      }
      if (cmd.name == "train" || cmd.name == "evaluate") {
        (void)cfg.resolved_task();
        if (cmd.name == "train") (void)cfg.resolved_model();
      }
    } catch (const ConfigError& e) {
      err << "error: " << e.what() << "\nrun with --help for usage\n";
      return 2;
    } catch (const Error& e) {
      err << "error: " << e.what() << "\nrun with --help for usage\n";
      return 2;
    }

    try {
      if (cmd.name == "generate") return cmd_generate(cfg, out);
      if (cmd.name == "train") return cmd_train(cfg, out);
      if (cmd.name == "evaluate") return cmd_evaluate(cfg, *cmd.app, out);
      if (cmd.name == "predict") return cmd_predict(cfg, out);
      if (cmd.name == "audit") return cmd_audit(out);
    } catch (const ConfigError& e) {
      err << "error: " << e.what() << "\nrun with --help for usage\n";
      return 2;
    } catch (const std::exception& e) {
      err << "error: " << e.what() << '\n';
      return 1;
    }
  }
  return 2;
}

}  // namespace capstraffic::cli
