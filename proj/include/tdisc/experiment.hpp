#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "tdisc/io.hpp"
#include "tdisc/training.hpp"

namespace tdisc {

struct SolverBlock {
  SolverSpec student = SolverSpec::euler();
  TeacherSpec teacher;
  std::vector<std::size_t> nfe_list{3, 4, 5, 6};
  PriorMode prior = PriorMode::Gaussian;
};

struct StrategyBlock {
  std::vector<Strategy> strategies{Strategy::Uniform, Strategy::Global, Strategy::Instance};
  double rho = 7.0;
  HeadDecoding decoding;
  std::size_t hidden = 64;
  bool conditional = false;
  /// Evaluate the instance network with its EMA weights (else the raw ones).
  bool eval_ema = true;
};

struct TrainBlock {
  std::size_t teacher_samples = 20000;
  TrainConfig network;  // conditioning network
  TrainConfig raw;      // raw heads: global strategy
  std::size_t overfit_iterations = 200;
  /// Start each overfit fit from the trained global heads of the same NFE
  /// instead of the uniform grid.
  bool overfit_from_global = false;

  TrainBlock();
  /// Raw-head settings for one per-record overfit fit.
  TrainConfig overfit() const;
};

struct MetricsBlock {
  HistogramConfig histogram;
  std::size_t projections = 128;
};

struct PathsBlock {
  std::string dataset = "out/teacher.jsonl";
  std::string checkpoints = "out/checkpoints";
  std::string reports = "out/reports";
};

/// Everything an experiment needs. Every field has a default, so an empty
/// config file is valid. Relative paths resolve against `base_dir`.
struct ExperimentConfig {
  std::uint64_t seed = 0;
  NoiseSchedule schedule = NoiseSchedule::ot();
  TreeConfig tree;
  SolverBlock solver;
  StrategyBlock strategy;
  TrainBlock train;
  MetricsBlock metrics;
  PathsBlock paths;
  std::filesystem::path base_dir = ".";

  void validate() const;
  Problem problem() const;
  std::uint64_t oracle_hash() const;

  std::filesystem::path dataset_path() const;
  std::filesystem::path checkpoint_path(Strategy s, std::size_t nfe) const;
  std::filesystem::path trace_path(Strategy s, std::size_t nfe) const;
  std::filesystem::path report_path(Strategy s, std::size_t nfe) const;
  std::filesystem::path sweep_path() const;
};

io::json config_to_json(const ExperimentConfig& cfg);
ExperimentConfig config_from_json(const io::json& j);
/// Reads a config file (JSON); an empty file yields the defaults.
ExperimentConfig load_config(const std::filesystem::path& path);

/// Parses "3..10" or "3,4,5" into a non-empty NFE list.
std::vector<std::size_t> parse_nfe_list(const std::string& text);

struct RunOptions {
  std::size_t jobs = 1;
  std::ostream* log = nullptr;  // progress lines; null silences
};

// Commands. They throw ConfigError / std::invalid_argument for contract
// violations and NumericalError for numerical failures.

TeacherSet cmd_gen_teacher(const ExperimentConfig& cfg, bool force, const RunOptions& opt = {});
TeacherSet load_teacher(const ExperimentConfig& cfg);

struct TrainOptions {
  bool resume = false;
  /// Stop after this many more network steps (checkpoint written), for
  /// interrupt/resume.
  std::optional<std::size_t> stop_after;
  /// Write a network checkpoint every k steps (0: only at the end).
  std::size_t checkpoint_every = 0;
};

/// Trains a learned strategy at one NFE and writes its artifact (and loss
/// trace) under paths.checkpoints. Returns the artifact path.
std::filesystem::path cmd_train(const ExperimentConfig& cfg, Strategy strategy, std::size_t nfe,
                                const RunOptions& opt = {}, const TrainOptions& topt = {});

/// Loads the artifacts a strategy needs at one NFE; throws ConfigError when
/// missing.
StrategyArtifacts load_artifacts(const ExperimentConfig& cfg, Strategy strategy, std::size_t nfe);
bool artifacts_present(const ExperimentConfig& cfg, Strategy strategy, std::size_t nfe);

/// Evaluates a strategy on the teacher set and writes its report JSON.
MetricsReport cmd_eval(const ExperimentConfig& cfg, Strategy strategy, std::size_t nfe, const RunOptions& opt = {});

struct SweepResult {
  std::vector<MetricsReport> rows;
  std::vector<std::string> skipped;  // "strategy@nfe" cells without artifacts
};

/// One row per (nfe, configured strategy). With build set, missing teacher
/// data and artifacts are produced first; otherwise cells lacking artifacts
/// are skipped. Writes the sweep CSV.
SweepResult cmd_sweep(const ExperimentConfig& cfg, const std::vector<std::size_t>& nfe_list, bool build,
                      const RunOptions& opt = {});

/// Evaluates and writes the (x_T_0, x_T_1, error) scatter CSV.
MetricsReport cmd_export_scatter(const ExperimentConfig& cfg, Strategy strategy, std::size_t nfe,
                                 const std::filesystem::path& out, const RunOptions& opt = {});

struct PrimitiveCheck {
  std::string name;
  double max_rel_error = 0.0;
  double at = 0.0;  // input of the worst case
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t weights = 0;
  std::size_t worst_weight = 0;
  double tolerance = 1e-4;
  double primitive_tolerance = 1e-6;
  std::vector<PrimitiveCheck> primitives;  // sorted worst first
  bool passed() const;
};

/// Tape gradient vs central differences (h = 1e-5) over every weight of a
/// randomly initialized network on a 3-step iPNDM solve against a
/// 10-component mixture, plus per-primitive checks. Relative errors use
/// max(|a|, |b|, 1e-6) as the denominator.
GradCheckReport cmd_check_grad(const ExperimentConfig& cfg);

}  // namespace tdisc
