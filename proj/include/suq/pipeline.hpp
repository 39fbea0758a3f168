#pragma once

// Command implementations behind the suq CLI. Every command writes into its
// output directory only: the CSV artifacts, a metrics.csv (name,value) and a
// manifest.json.

#include "suq/channel_solver.hpp"
#include "suq/forest.hpp"

#include <cstdint>
#include <exception>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace suq {

inline constexpr const char* kToolVersion = "1.0.0";

enum class UqMode { DataFree, DataDriven };

std::string to_string(UqMode mode);
/// Accepts data-free / data-driven. Throws ConfigError.
UqMode parse_uq_mode(const std::string& s);

struct PipelineConfig {
  ChannelConfig channel;

  UqMode mode{UqMode::DataFree};
  double delta_b{1.0};
  TargetKind target{TargetKind::P};
  std::filesystem::path forest;
  // Features from the converged baseline instead of the iterate.
  bool freeze_features{false};
  int feature_iters{1000};

  std::vector<double> train_re_tau{180.0, 550.0, 2000.0, 5200.0};
  double eval_re_tau{1000.0};
  std::vector<std::string> features;  // empty: default set
  // Unset fields take the per-target defaults of table1_hyperparams.
  std::optional<int> max_depth, min_samples_split, max_features, n_trees;

  // Empty: analytic reference profiles instead of files.
  std::filesystem::path dns_dir;
  double noise{0.0};

  std::uint64_t seed{0};

  std::filesystem::path config_file;  // where the values came from, if anywhere

  /// Throws ConfigError naming the field.
  void validate() const;
  ForestHyperparams hyperparams() const;
  const std::vector<std::string>& feature_names() const;
};

ForestHyperparams table1_hyperparams(TargetKind kind);

/// Sectioned key = value file. Unknown sections or keys are ConfigErrors.
PipelineConfig load_config(const std::filesystem::path& path);
/// Applies one "section.key=value" override (the same keys as the file).
void apply_setting(PipelineConfig& cfg, const std::string& section, const std::string& key,
                   const std::string& value);
/// Resolved settings, section.key -> value, as recorded in manifests.
std::map<std::string, std::string> describe(const PipelineConfig& cfg);

struct CommandResult {
  std::filesystem::path out_dir;
  std::map<std::string, double> metrics;
};

/// solution.csv
CommandResult cmd_baseline(const PipelineConfig& cfg, const std::filesystem::path& out);
/// forest.json, training.csv, heldout.csv, metrics.csv. Missing DNS files for
/// any requested Re_tau is a DataError listing all of them.
CommandResult cmd_train(const PipelineConfig& cfg, const std::filesystem::path& out);
/// envelope.csv, solution_<run>.csv, trace.csv. With a p-forest or data-free
/// mode the runs are baseline,1C,2C,3C; with pcorr / pcorr_angles forests a
/// single corrected run. A failing member leaves the outputs of the runs that
/// finished and a manifest with status "failed".
CommandResult cmd_uq(const PipelineConfig& cfg, const std::filesystem::path& out);
/// solution.csv (noise-free), solution_noisy.csv when noise > 0, metrics.
CommandResult cmd_propagate_dns(const PipelineConfig& cfg, const std::filesystem::path& out);
/// summary.csv, one row per run directory. Throws DataError when a run
/// directory has no manifest.
CommandResult cmd_report(const std::vector<std::filesystem::path>& runs, const std::filesystem::path& out);
/// Writes reference DNS-format files for each Re_tau into out.
CommandResult cmd_synth_dns(const std::vector<double>& re_tau, const std::filesystem::path& out);

/// 0 success, 2 configuration, 3 numerical, 4 data / IO.
int exit_code_for(const std::exception& e);

}  // namespace suq
