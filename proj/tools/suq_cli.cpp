#include "suq/errors.hpp"
#include "suq/pipeline.hpp"

#include "CLI11.hpp"

#include <iostream>
#include <optional>
#include <string>
#include <vector>

namespace {

struct Flags {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> target, mode, forest, dns_dir;
  std::optional<double> noise, re_tau, delta_b;
  bool freeze_features{false};
  std::vector<std::string> settings;  // section.key=value
};

void add_common(CLI::App* cmd, Flags& f, bool needs_out = true) {
  cmd->add_option("--config", f.config, "INI config file");
  auto* out = cmd->add_option("--out", f.out, "output directory");
  if (needs_out) out->required();
  cmd->add_option("--seed", f.seed, "random seed (forest bootstrap, noise)");
  cmd->add_option("--target", f.target, "p | pcorr | pcorr_angles");
  cmd->add_option("--mode", f.mode, "data-free | data-driven");
  cmd->add_option("--noise", f.noise, "relative noise amplitude on -uv");
  cmd->add_option("--re-tau", f.re_tau, "friction Reynolds number");
  cmd->add_option("--delta-b", f.delta_b, "data-free perturbation strength");
  cmd->add_option("--forest", f.forest, "forest JSON file");
  cmd->add_option("--dns-dir", f.dns_dir, "directory with DNS profile files");
  cmd->add_flag("--freeze-features", f.freeze_features, "evaluate features once on the first iterate");
  cmd->add_option("--set", f.settings, "override, section.key=value (repeatable)");
}

suq::PipelineConfig resolve(const Flags& f) {
  suq::PipelineConfig cfg = f.config.empty() ? suq::PipelineConfig{} : suq::load_config(f.config);
  for (const auto& s : f.settings) {
    const auto eq = s.find('=');
    const auto dot = s.find('.');
    if (eq == std::string::npos || dot == std::string::npos || dot > eq) {
      throw suq::ConfigError("--set expects section.key=value, got '" + s + "'");
    }
    suq::apply_setting(cfg, s.substr(0, dot), s.substr(dot + 1, eq - dot - 1), s.substr(eq + 1));
  }
  if (f.seed) cfg.seed = *f.seed;
  if (f.target) cfg.target = suq::parse_target_kind(*f.target);
  if (f.mode) cfg.mode = suq::parse_uq_mode(*f.mode);
  if (f.noise) cfg.noise = *f.noise;
  if (f.re_tau) cfg.channel.re_tau = *f.re_tau;
  if (f.delta_b) cfg.delta_b = *f.delta_b;
  if (f.forest) cfg.forest = *f.forest;
  if (f.dns_dir) cfg.dns_dir = *f.dns_dir;
  if (f.freeze_features) cfg.freeze_features = true;
  return cfg;
}

void print_metrics(const suq::CommandResult& r) {
  for (const auto& [name, value] : r.metrics) std::cout << name << " = " << value << '\n';
  std::cout << "wrote " << r.out_dir.string() << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Eigenspace-perturbation UQ for RANS channel flow"};
  app.require_subcommand(1);
  app.set_version_flag("--version", suq::kToolVersion);

  Flags f;
  auto* baseline = app.add_subcommand("baseline", "converged SST baseline");
  add_common(baseline, f);
  auto* train = app.add_subcommand("train", "build targets from DNS and train a forest");
  add_common(train, f);
  auto* uq = app.add_subcommand("uq", "perturbed runs and the velocity envelope");
  add_common(uq, f);
  auto* prop = app.add_subcommand("propagate-dns", "frozen DNS stresses through the solver");
  add_common(prop, f);

  std::vector<std::string> runs;
  std::string report_out;
  auto* report = app.add_subcommand("report", "summarize run directories");
  report->add_option("runs", runs, "run directories")->required();
  report->add_option("--out", report_out, "output directory (default: first run)");

  std::vector<double> synth_re{180, 550, 1000, 2000, 5200};
  std::string synth_out;
  auto* synth = app.add_subcommand("synth-dns", "write reference DNS-format profiles");
  synth->add_option("--re-tau", synth_re, "Re_tau values")->delimiter(',');
  synth->add_option("--out", synth_out, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (*baseline) print_metrics(suq::cmd_baseline(resolve(f), f.out));
    if (*train) print_metrics(suq::cmd_train(resolve(f), f.out));
    if (*uq) print_metrics(suq::cmd_uq(resolve(f), f.out));
    if (*prop) print_metrics(suq::cmd_propagate_dns(resolve(f), f.out));
    if (*report) {
      std::vector<std::filesystem::path> dirs(runs.begin(), runs.end());
      print_metrics(suq::cmd_report(dirs, report_out.empty() ? dirs.front() : std::filesystem::path(report_out)));
    }
    if (*synth) print_metrics(suq::cmd_synth_dns(synth_re, synth_out));
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return suq::exit_code_for(e);
  }
  return 0;
}
