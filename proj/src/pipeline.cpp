#include "suq/pipeline.hpp"

#include "suq/csv.hpp"
#include "suq/dns_data.hpp"
#include "suq/errors.hpp"
#include "suq/features.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "json.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <future>
#include <limits>
#include <sstream>

namespace suq {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string fmt(double v) {
  char buf[64];
  const auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return ec == std::errc() ? std::string(buf, end) : csv::number(v);
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

double parse_double(const std::string& field, const std::string& s) {
  const std::string t = trim(s);
  double v = 0.0;
  const auto [end, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (t.empty() || ec != std::errc() || end != t.data() + t.size() || !std::isfinite(v)) {
    throw ConfigError(field + ": expected a number, got '" + s + "'");
  }
  return v;
}

long long parse_integer(const std::string& field, const std::string& s) {
  const std::string t = trim(s);
  long long v = 0;
  const auto [end, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (t.empty() || ec != std::errc() || end != t.data() + t.size()) {
    throw ConfigError(field + ": expected an integer, got '" + s + "'");
  }
  return v;
}

int parse_int(const std::string& field, const std::string& s) {
  const long long v = parse_integer(field, s);
  if (v < std::numeric_limits<int>::min() || v > std::numeric_limits<int>::max()) {
    throw ConfigError(field + ": out of range");
  }
  return static_cast<int>(v);
}

bool parse_bool(const std::string& field, const std::string& s) {
  const std::string t = trim(s);
  if (t == "true" || t == "1" || t == "yes" || t == "on") return true;
  if (t == "false" || t == "0" || t == "no" || t == "off") return false;
  throw ConfigError(field + ": expected true or false, got '" + s + "'");
}

std::string join(const std::vector<std::string>& items, const std::string& sep = ",") {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) out += (i ? sep : "") + items[i];
  return out;
}

std::string join(const std::vector<double>& values) {
  std::vector<std::string> s;
  for (double v : values) s.push_back(fmt(v));
  return join(s);
}

std::string re_label(double re) { return fmt(re); }

// ---- output helpers ----

void prepare_out(const fs::path& out) {
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec || !fs::is_directory(out)) throw DataError("cannot create output directory " + out.string());
}

template <typename Writer>
void write_file(const fs::path& path, Writer&& writer) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot write " + path.string());
  writer(f);
  f.flush();
  if (!f) throw DataError("write failed: " + path.string());
}

void write_metrics(const fs::path& out, const std::map<std::string, double>& metrics) {
  write_file(out / "metrics.csv", [&](std::ostream& o) {
    csv::header(o, {"name", "value"});
    for (const auto& [name, value] : metrics) o << name << ',' << csv::number(value) << '\n';
  });
}

struct Manifest {
  std::string command;
  std::string mode;
  std::vector<std::string> datasets;
  json extra = json::object();
  std::string status{"ok"};
  std::string error;
};

void write_manifest(const fs::path& out, const PipelineConfig& cfg, const Manifest& m) {
  json j;
  j["tool"] = "suq";
  j["version"] = kToolVersion;
  j["command"] = m.command;
  j["mode"] = m.mode;
  j["status"] = m.status;
  if (!m.error.empty()) j["error"] = m.error;
  j["output_dir"] = out.generic_string();
  j["config_file"] = cfg.config_file.generic_string();
  j["seed"] = cfg.seed;
  j["datasets"] = m.datasets;
  j["settings"] = describe(cfg);
  for (const auto& [k, v] : m.extra.items()) j[k] = v;
  write_file(out / "manifest.json", [&](std::ostream& o) { o << j.dump(2) << '\n'; });
}

ChannelConfig channel_at(const PipelineConfig& cfg, double re_tau) {
  ChannelConfig ch = cfg.channel;
  ch.re_tau = re_tau;
  return ch;
}

double max_momentum_error(const ChannelState& s) { return momentum_balance_error(s).cwiseAbs().maxCoeff(); }

fs::path mean_file(const PipelineConfig& cfg, double re) { return lee_moser_mean_path(cfg.dns_dir, re); }
fs::path fluct_file(const PipelineConfig& cfg, double re) { return lee_moser_fluct_path(cfg.dns_dir, re); }

void require_dns(const PipelineConfig& cfg, const std::vector<double>& re_list) {
  if (cfg.dns_dir.empty()) return;
  std::vector<std::string> missing;
  for (double re : re_list) {
    if (!fs::is_regular_file(mean_file(cfg, re)) || !fs::is_regular_file(fluct_file(cfg, re))) {
      missing.push_back(re_label(re));
    }
  }
  if (!missing.empty()) {
    throw DataError("missing DNS data in " + cfg.dns_dir.string() + " for Re_tau " + join(missing, ", "));
  }
}

DnsProfile load_dns(const PipelineConfig& cfg, double re, std::vector<std::string>& datasets) {
  if (cfg.dns_dir.empty()) {
    datasets.push_back("reference:" + re_label(re));
    return reference_profile(re);
  }
  require_dns(cfg, {re});
  datasets.push_back(mean_file(cfg, re).generic_string());
  datasets.push_back(fluct_file(cfg, re).generic_string());
  return load_profile(mean_file(cfg, re), fluct_file(cfg, re), ColumnMap::lee_moser());
}

void write_trace_rows(std::ostream& o, const std::string& run, const ChannelState& s) {
  const auto trace = barycentric_trace(s);
  for (std::size_t i = 0; i < trace.size(); ++i) {
    const auto& t = trace[i];
    o << run << ',' << i << ',';
    csv::row(o, {s.y_plus(static_cast<Eigen::Index>(i)), t.point.position(0), t.point.position(1),
                 t.point.weights(0), t.point.weights(1), t.point.weights(2), t.lambda2,
                 t.degenerate ? 1.0 : 0.0});
  }
}

double variance_of(const Eigen::MatrixXd& y) {
  if (y.rows() == 0) return 0.0;
  const Eigen::RowVectorXd mean = y.colwise().mean();
  return (y.rowwise() - mean).array().square().mean();
}

}  // namespace

// ---- config ----

std::string to_string(UqMode mode) { return mode == UqMode::DataFree ? "data-free" : "data-driven"; }

UqMode parse_uq_mode(const std::string& s) {
  if (s == "data-free") return UqMode::DataFree;
  if (s == "data-driven") return UqMode::DataDriven;
  throw ConfigError("unknown mode '" + s + "' (expected data-free or data-driven)");
}

ForestHyperparams table1_hyperparams(TargetKind kind) {
  ForestHyperparams hp;
  switch (kind) {
    case TargetKind::P:
      hp.max_depth = 6, hp.min_samples_split = 6, hp.max_features = 3, hp.n_trees = 30;
      break;
    case TargetKind::PCorr:
      hp.max_depth = 9, hp.min_samples_split = 4, hp.max_features = 3, hp.n_trees = 15;
      break;
    case TargetKind::PCorrAngles:
      hp.max_depth = 9, hp.min_samples_split = 4, hp.max_features = 3, hp.n_trees = 30;
      break;
  }
  return hp;
}

ForestHyperparams PipelineConfig::hyperparams() const {
  ForestHyperparams hp = table1_hyperparams(target);
  if (max_depth) hp.max_depth = *max_depth;
  if (min_samples_split) hp.min_samples_split = *min_samples_split;
  if (max_features) hp.max_features = *max_features;
  if (n_trees) hp.n_trees = *n_trees;
  hp.seed = seed;
  return hp;
}

const std::vector<std::string>& PipelineConfig::feature_names() const {
  return features.empty() ? default_feature_names() : features;
}

void PipelineConfig::validate() const {
  channel.validate();
  if (!(delta_b >= 0.0 && delta_b <= 1.0)) throw ConfigError("uq.delta_b must lie in [0, 1]");
  if (!(noise >= 0.0 && noise < 1.0)) throw ConfigError("dns.noise must lie in [0, 1)");
  if (train_re_tau.empty()) throw ConfigError("train.re_tau must list at least one value");
  for (double re : train_re_tau) {
    if (!(re > 0.0)) throw ConfigError("train.re_tau values must be positive");
  }
  if (!(eval_re_tau > 0.0)) throw ConfigError("train.eval_re_tau must be positive");
  validate_feature_names(feature_names());
  auto positive = [](const std::optional<int>& v, const char* name) {
    if (v && *v <= 0) throw ConfigError(std::string("model.") + name + " must be positive");
  };
  positive(max_depth, "max_depth");
  positive(min_samples_split, "min_samples_split");
  positive(max_features, "max_features");
  positive(n_trees, "n_trees");
  if (feature_iters < 0) throw ConfigError("model.feature_iters must be >= 0");
  if (hyperparams().max_features > static_cast<int>(feature_names().size())) {
    throw ConfigError("model.max_features exceeds the number of features");
  }
}

void apply_setting(PipelineConfig& cfg, const std::string& section, const std::string& key,
                   const std::string& value) {
  const std::string field = section + "." + key;
  const std::string v = trim(value);
  if (section == "channel") {
    if (key == "re_tau") return void(cfg.channel.re_tau = parse_double(field, v));
    if (key == "n_cells") return void(cfg.channel.n_cells = parse_int(field, v));
    if (key == "stretch") return void(cfg.channel.stretch = parse_double(field, v));
    if (key == "first_spacing") return void(cfg.channel.first_spacing = parse_double(field, v));
    if (key == "max_iters") return void(cfg.channel.max_iters = parse_int(field, v));
    if (key == "residual_tol") return void(cfg.channel.residual_tol = parse_double(field, v));
    if (key == "under_relaxation") {
      if (v.empty() || v == "auto") return void(cfg.channel.under_relaxation.reset());
      return void(cfg.channel.under_relaxation = parse_double(field, v));
    }
    if (key == "laminar") return void(cfg.channel.laminar = parse_bool(field, v));
  } else if (section == "uq") {
    if (key == "mode") return void(cfg.mode = parse_uq_mode(v));
    if (key == "delta_b") return void(cfg.delta_b = parse_double(field, v));
  } else if (section == "model") {
    if (key == "target") return void(cfg.target = parse_target_kind(v));
    if (key == "forest") return void(cfg.forest = v);
    if (key == "freeze_features") return void(cfg.freeze_features = parse_bool(field, v));
    if (key == "feature_iters") return void(cfg.feature_iters = parse_int(field, v));
    if (key == "features") return void(cfg.features = split_list(v));
    if (key == "max_depth") return void(cfg.max_depth = parse_int(field, v));
    if (key == "min_samples_split") return void(cfg.min_samples_split = parse_int(field, v));
    if (key == "max_features") return void(cfg.max_features = parse_int(field, v));
    if (key == "n_trees") return void(cfg.n_trees = parse_int(field, v));
  } else if (section == "train") {
    if (key == "re_tau") {
      cfg.train_re_tau.clear();
      for (const auto& item : split_list(v)) cfg.train_re_tau.push_back(parse_double(field, item));
      return;
    }
    if (key == "eval_re_tau") return void(cfg.eval_re_tau = parse_double(field, v));
  } else if (section == "dns") {
    if (key == "dir") return void(cfg.dns_dir = v);
    if (key == "noise") return void(cfg.noise = parse_double(field, v));
  } else if (section == "run") {
    if (key == "seed") {
      const long long s = parse_integer(field, v);
      if (s < 0) throw ConfigError(field + ": must be non-negative");
      return void(cfg.seed = static_cast<std::uint64_t>(s));
    }
  } else {
    throw ConfigError("unknown config section [" + section + "]");
  }
  throw ConfigError("unknown config key " + field);
}

PipelineConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  boost::property_tree::ptree tree;
  try {
    boost::property_tree::ini_parser::read_ini(in, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError(path.string() + ": line " + std::to_string(e.line()) + ": " + e.message());
  }
  PipelineConfig cfg;
  cfg.config_file = path;
  for (const auto& [section, entries] : tree) {
    if (entries.empty() && !entries.data().empty()) {
      throw ConfigError(path.string() + ": key '" + section + "' outside a section");
    }
    for (const auto& [key, node] : entries) apply_setting(cfg, section, key, node.data());
  }
  // Relative paths in the file are relative to the file.
  const fs::path base = path.parent_path();
  if (!cfg.forest.empty() && cfg.forest.is_relative()) cfg.forest = base / cfg.forest;
  if (!cfg.dns_dir.empty() && cfg.dns_dir.is_relative()) cfg.dns_dir = base / cfg.dns_dir;
  return cfg;
}

std::map<std::string, std::string> describe(const PipelineConfig& cfg) {
  const auto hp = cfg.hyperparams();
  return {
      {"channel.re_tau", fmt(cfg.channel.re_tau)},
      {"channel.n_cells", std::to_string(cfg.channel.n_cells)},
      {"channel.stretch", fmt(cfg.channel.stretch)},
      {"channel.first_spacing", fmt(cfg.channel.first_spacing)},
      {"channel.max_iters", std::to_string(cfg.channel.max_iters)},
      {"channel.residual_tol", fmt(cfg.channel.residual_tol)},
      {"channel.under_relaxation",
       cfg.channel.under_relaxation ? fmt(*cfg.channel.under_relaxation) : std::string("auto")},
      {"channel.laminar", cfg.channel.laminar ? "true" : "false"},
      {"uq.mode", to_string(cfg.mode)},
      {"uq.delta_b", fmt(cfg.delta_b)},
      {"model.target", to_string(cfg.target)},
      {"model.forest", cfg.forest.generic_string()},
      {"model.freeze_features", cfg.freeze_features ? "true" : "false"},
      {"model.feature_iters", std::to_string(cfg.feature_iters)},
      {"model.features", join(cfg.feature_names())},
      {"model.max_depth", std::to_string(hp.max_depth)},
      {"model.min_samples_split", std::to_string(hp.min_samples_split)},
      {"model.max_features", std::to_string(hp.max_features)},
      {"model.n_trees", std::to_string(hp.n_trees)},
      {"train.re_tau", join(cfg.train_re_tau)},
      {"train.eval_re_tau", fmt(cfg.eval_re_tau)},
      {"dns.dir", cfg.dns_dir.generic_string()},
      {"dns.noise", fmt(cfg.noise)},
      {"run.seed", std::to_string(cfg.seed)},
  };
}

// ---- commands ----

CommandResult cmd_baseline(const PipelineConfig& cfg, const fs::path& out) {
  cfg.validate();
  prepare_out(out);
  const ChannelState s = solve_baseline(cfg.channel);
  write_file(out / "solution.csv", [&](std::ostream& o) { write_solution_csv(o, s); });
  CommandResult r{out, {}};
  r.metrics = {{"iterations", static_cast<double>(s.iterations)},
               {"realizability_violations", static_cast<double>(s.realizability_violations)},
               {"u_centerline", s.u_plus(s.size() - 1)},
               {"max_momentum_error", max_momentum_error(s)},
               {"re_tau", cfg.channel.re_tau}};
  write_metrics(out, r.metrics);
  write_manifest(out, cfg, {"baseline", "baseline", {}, json::object(), "ok", ""});
  return r;
}

CommandResult cmd_train(const PipelineConfig& cfg, const fs::path& out) {
  cfg.validate();
  std::vector<double> all = cfg.train_re_tau;
  all.push_back(cfg.eval_re_tau);
  require_dns(cfg, all);
  prepare_out(out);

  const auto& names = cfg.feature_names();
  std::vector<std::string> datasets;
  std::map<std::string, double> metrics;
  auto targets_at = [&](double re) {
    const ChannelState base = solve_baseline(channel_at(cfg, re));
    metrics["baseline_iterations_" + re_label(re)] = base.iterations;
    const DnsProfile dns = interpolate(load_dns(cfg, re, datasets), base.y_plus);
    return build_targets(base, dns, cfg.target, names);
  };

  TrainingSet train;
  for (double re : cfg.train_re_tau) {
    TrainingSet part = targets_at(re);
    if (train.rows() == 0 && train.feature_names.empty()) {
      train = std::move(part);
    } else {
      train.append(part);
    }
  }
  const TrainingSet heldout = targets_at(cfg.eval_re_tau);
  if (train.rows() == 0) throw DataError("no usable training rows");

  const ForestHyperparams hp = cfg.hyperparams();
  const RegressionForest forest = fit(train.x, train.y, hp, names, train.target_names);
  save(forest, out / "forest.json");
  write_file(out / "training.csv", [&](std::ostream& o) { write_training_csv(o, train); });
  write_file(out / "heldout.csv", [&](std::ostream& o) { write_training_csv(o, heldout); });

  metrics["train_rows"] = static_cast<double>(train.rows());
  metrics["heldout_rows"] = static_cast<double>(heldout.rows());
  metrics["excluded_rows"] = static_cast<double>(train.excluded + heldout.excluded);
  metrics["train_mse"] = mse(forest, train.x, train.y);
  metrics["heldout_mse"] = heldout.rows() ? mse(forest, heldout.x, heldout.y) : std::nan("");
  metrics["heldout_variance"] = variance_of(heldout.y);
  write_metrics(out, metrics);

  json extra;
  extra["hyperparams"] = {{"max_depth", hp.max_depth},
                          {"min_samples_split", hp.min_samples_split},
                          {"max_features", hp.max_features},
                          {"n_trees", hp.n_trees},
                          {"seed", hp.seed}};
  extra["target"] = to_string(cfg.target);
  write_manifest(out, cfg, {"train", to_string(cfg.target), datasets, extra, "ok", ""});
  return {out, metrics};
}

CommandResult cmd_uq(const PipelineConfig& cfg, const fs::path& out) {
  cfg.validate();
  const ChannelConfig& ch = cfg.channel;
  std::vector<std::string> datasets;

  std::vector<std::pair<std::string, StressSource>> members;
  std::optional<ChannelState> baseline;
  if (cfg.mode == UqMode::DataFree) {
    for (Corner c : {Corner::OneComponent, Corner::TwoComponent, Corner::ThreeComponent}) {
      members.emplace_back(corner_name(c), corner_source(c, cfg.delta_b));
    }
  } else {
    if (cfg.forest.empty()) throw ConfigError("model.forest is required for data-driven mode");
    auto forest = std::make_shared<const RegressionForest>(load(cfg.forest));
    datasets.push_back(cfg.forest.generic_string());
    ForestSourceOptions opt;
    opt.kind = cfg.target;
    opt.feature_names = forest->feature_names;
    opt.feature_iters = cfg.feature_iters;
    if (cfg.freeze_features) {
      baseline = solve_baseline(ch);
      opt.feature_state = *baseline;
    }
    if (cfg.target == TargetKind::P) {
      for (Corner c : {Corner::OneComponent, Corner::TwoComponent, Corner::ThreeComponent}) {
        opt.corner = c;
        members.emplace_back(corner_name(c), forest_source(forest, opt));
      }
    } else {
      members.emplace_back("corrected", forest_source(forest, opt));
    }
  }
  prepare_out(out);

  std::future<ChannelState> base_run = std::async(std::launch::async, [&ch, &baseline] {
    return baseline ? *baseline : solve_baseline(ch);
  });
  std::vector<std::future<ChannelState>> runs;
  for (const auto& m : members) {
    runs.push_back(std::async(std::launch::async, [&ch, &m] { return solve_with_injection(ch, m.second); }));
  }

  std::vector<std::pair<std::string, ChannelState>> done;
  std::string first_error;
  std::exception_ptr failure;
  auto collect = [&](const std::string& name, std::future<ChannelState>& f) {
    try {
      done.emplace_back(name, f.get());
    } catch (const std::exception& e) {
      if (!failure) {
        first_error = "run " + name + ": " + e.what();
        failure = std::current_exception();
      }
    }
  };
  collect("baseline", base_run);
  for (std::size_t m = 0; m < runs.size(); ++m) collect(members[m].first, runs[m]);

  std::map<std::string, double> metrics;
  for (const auto& [name, s] : done) {
    write_file(out / ("solution_" + name + ".csv"), [&](std::ostream& o) { write_solution_csv(o, s); });
    metrics["iterations_" + name] = s.iterations;
    metrics["max_momentum_error_" + name] = max_momentum_error(s);
    metrics["realizability_violations"] += static_cast<double>(s.realizability_violations);
  }
  write_file(out / "trace.csv", [&](std::ostream& o) {
    csv::header(o, {"run", "node", "y_plus", "x", "y", "C1", "C2", "C3", "lambda2", "degenerate"});
    for (const auto& [name, s] : done) write_trace_rows(o, name, s);
  });

  const std::string mode_label = cfg.mode == UqMode::DataFree ? "data-free" : "data-driven-" + to_string(cfg.target);
  if (failure) {
    write_metrics(out, metrics);
    write_manifest(out, cfg, {"uq", mode_label, datasets, json::object(), "failed", first_error});
    try {
      std::rethrow_exception(failure);
    } catch (const ConvergenceError& e) {
      throw ConvergenceError(first_error, e.history());
    } catch (const NumericalError&) {
      throw NumericalError(first_error);
    } catch (const ConfigError&) {
      throw ConfigError(first_error);
    } catch (const DataError&) {
      throw DataError(first_error);
    }
  }

  UqEnvelope env;
  env.baseline = done.front().second;
  env.u_min = env.baseline.u_plus;
  env.u_max = env.baseline.u_plus;
  for (std::size_t m = 1; m < done.size(); ++m) {
    env.members.push_back(done[m].second);
    env.u_min = env.u_min.cwiseMin(done[m].second.u_plus);
    env.u_max = env.u_max.cwiseMax(done[m].second.u_plus);
  }
  const Eigen::VectorXd w = env.width();
  write_file(out / "envelope.csv", [&](std::ostream& o) {
    std::vector<std::string> head{"y_plus"};
    for (const auto& [name, s] : done) head.push_back("U_" + name);
    for (const char* c : {"U_min", "U_max", "width"}) head.emplace_back(c);
    csv::header(o, head);
    for (Eigen::Index i = 0; i < w.size(); ++i) {
      std::vector<double> row{env.baseline.y_plus(i)};
      for (const auto& [name, s] : done) row.push_back(s.u_plus(i));
      row.push_back(env.u_min(i));
      row.push_back(env.u_max(i));
      row.push_back(w(i));
      csv::row(o, row);
    }
  });

  double log_min = std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < w.size(); ++i) {
    const double y = env.baseline.y_plus(i);
    if (y >= 30.0 && y <= 0.3 * ch.re_tau) log_min = std::min(log_min, w(i));
  }
  metrics["integrated_width"] = env.integrated_width();
  metrics["min_log_width"] = std::isfinite(log_min) ? log_min : std::nan("");
  metrics["re_tau"] = ch.re_tau;
  write_metrics(out, metrics);
  write_manifest(out, cfg, {"uq", mode_label, datasets, json::object(), "ok", ""});
  return {out, metrics};
}

CommandResult cmd_propagate_dns(const PipelineConfig& cfg, const fs::path& out) {
  cfg.validate();
  std::vector<std::string> datasets;
  const DnsProfile source = load_dns(cfg, cfg.channel.re_tau, datasets);
  const Eigen::VectorXd grid = make_grid(cfg.channel);
  const DnsProfile dns = interpolate(source, grid);
  prepare_out(out);

  std::map<std::string, double> metrics;
  const ChannelState clean = solve_with_injection(cfg.channel, frozen_source(dns.stresses()));
  write_file(out / "solution.csv", [&](std::ostream& o) { write_solution_csv(o, clean); });
  metrics["l2_vs_dns"] = relative_l2(clean.u_plus, dns.u_plus);
  metrics["iterations"] = clean.iterations;
  metrics["max_momentum_error"] = max_momentum_error(clean);
  metrics["realizability_violations"] = static_cast<double>(clean.realizability_violations);
  metrics["noise"] = cfg.noise;
  metrics["re_tau"] = cfg.channel.re_tau;

  if (cfg.noise > 0.0) {
    const DnsProfile noisy = with_shear_noise(dns, cfg.noise, cfg.seed);
    const ChannelState s = solve_with_injection(cfg.channel, frozen_source(noisy.stresses()));
    write_file(out / "solution_noisy.csv", [&](std::ostream& o) { write_solution_csv(o, s); });
    metrics["l2_noisy_vs_clean"] = relative_l2(s.u_plus, clean.u_plus);
    metrics["l2_noisy_vs_dns"] = relative_l2(s.u_plus, dns.u_plus);
    metrics["iterations_noisy"] = s.iterations;
    metrics["realizability_violations"] += static_cast<double>(s.realizability_violations);
  }
  write_metrics(out, metrics);
  write_manifest(out, cfg, {"propagate-dns", "frozen", datasets, json::object(), "ok", ""});
  return {out, metrics};
}

namespace {

std::map<std::string, double> read_metrics(const fs::path& file) {
  std::map<std::string, double> m;
  std::ifstream in(file);
  if (!in) return m;
  std::string line;
  std::getline(in, line);  // header
  while (std::getline(in, line)) {
    const auto comma = line.find(',');
    if (comma == std::string::npos) continue;
    const std::string value = trim(line.substr(comma + 1));
    double v = std::nan("");
    std::from_chars(value.data(), value.data() + value.size(), v);
    m[line.substr(0, comma)] = v;
  }
  return m;
}

}  // namespace

CommandResult cmd_report(const std::vector<fs::path>& runs, const fs::path& out) {
  if (runs.empty()) throw ConfigError("report needs at least one run directory");
  struct Row {
    std::string run, command, status, mode;
    std::map<std::string, double> m;
  };
  std::vector<Row> rows;
  for (const auto& dir : runs) {
    const fs::path manifest = dir / "manifest.json";
    std::ifstream in(manifest);
    if (!in) throw DataError("no manifest in " + dir.string());
    json j;
    try {
      in >> j;
    } catch (const json::exception& e) {
      throw DataError(manifest.string() + ": " + e.what());
    }
    Row r;
    r.run = dir.filename().empty() ? dir.parent_path().filename().string() : dir.filename().string();
    r.command = j.value("command", "");
    r.status = j.value("status", "");
    r.mode = j.value("mode", "");
    r.m = read_metrics(dir / "metrics.csv");
    rows.push_back(std::move(r));
  }

  auto get = [](const Row& r, const std::string& key) {
    const auto it = r.m.find(key);
    return it == r.m.end() ? std::nan("") : it->second;
  };
  double free_w = std::nan(""), driven_w = std::nan("");
  for (const auto& r : rows) {
    if (r.command != "uq") continue;
    if (r.mode == "data-free" && std::isnan(free_w)) free_w = get(r, "integrated_width");
    if (r.mode == "data-driven-p" && std::isnan(driven_w)) driven_w = get(r, "integrated_width");
  }
  const double ratio = free_w / driven_w;

  prepare_out(out);
  CommandResult result{out, {}};
  write_file(out / "summary.csv", [&](std::ostream& o) {
    csv::header(o, {"run", "command", "status", "mode", "re_tau", "iterations", "realizability_violations",
                    "integrated_width", "l2_error", "width_ratio"});
    for (const auto& r : rows) {
      double iters = 0.0;
      for (const auto& [k, v] : r.m) {
        if (k.rfind("iterations", 0) == 0 || k.rfind("baseline_iterations", 0) == 0) iters = std::max(iters, v);
      }
      o << r.run << ',' << r.command << ',' << r.status << ',' << r.mode << ',';
      csv::row(o, {get(r, "re_tau"), iters, get(r, "realizability_violations"), get(r, "integrated_width"),
                   get(r, "l2_vs_dns"), ratio});
    }
  });
  result.metrics["rows"] = static_cast<double>(rows.size());
  result.metrics["width_ratio"] = ratio;
  return result;
}

CommandResult cmd_synth_dns(const std::vector<double>& re_tau, const fs::path& out) {
  if (re_tau.empty()) throw ConfigError("synth-dns needs at least one Re_tau");
  for (double re : re_tau) {
    if (!(re > 0.0)) throw ConfigError("re_tau must be positive");
  }
  prepare_out(out);
  CommandResult r{out, {}};
  for (double re : re_tau) {
    const DnsProfile profile = reference_profile(re);
    write_lee_moser(profile, out);
    r.metrics["points_" + re_label(re)] = static_cast<double>(profile.size());
  }
  return r;
}

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const std::invalid_argument*>(&e)) return 2;
  if (dynamic_cast<const NumericalError*>(&e)) return 3;
  if (dynamic_cast<const DataError*>(&e) || dynamic_cast<const fs::filesystem_error*>(&e) ||
      dynamic_cast<const json::exception*>(&e) || dynamic_cast<const std::ios_base::failure*>(&e)) {
    return 4;
  }
  return 1;
}

}  // namespace suq
