#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "tdisc/condnet.hpp"
#include "tdisc/metrics.hpp"
#include "tdisc/problem.hpp"
#include "tdisc/training.hpp"

namespace tdisc::io {

using json = nlohmann::ordered_json;

/// x rounded to 12 significant digits (the precision of every text output).
double round12(double x);
/// 12-significant-digit decimal text.
std::string fmt12(double x);

json to_json(const NoiseSchedule& s);
NoiseSchedule schedule_from_json(const json& j, const NoiseSchedule& defaults = NoiseSchedule::ot());
json to_json(const SolverSpec& s);
SolverSpec solver_from_json(const json& j, const SolverSpec& defaults = {});
json to_json(const TeacherSpec& t);
TeacherSpec teacher_spec_from_json(const json& j, const TeacherSpec& defaults = {});
json to_json(const HeadDecoding& d);
HeadDecoding decoding_from_json(const json& j, const HeadDecoding& defaults = {});
std::string to_string(PriorMode mode);
PriorMode prior_mode_from_string(const std::string& name);

// Discretizations: {taus, dtaus, gammas, meta}.
json to_json(const GeneralDiscretization& xi, const json& meta = json::object());
GeneralDiscretization discretization_from_json(const json& j);

// Checkpoint of a conditioning network training run.
json checkpoint_to_json(const TrainState& state, const TrainConfig& cfg);
/// Restores a TrainState (Adam hyperparameters from cfg); the trace is read
/// separately from the CSV.
TrainState checkpoint_from_json(const json& j, const TrainConfig& cfg);
/// Network with the EMA weights (or the raw ones) from a checkpoint.
PhiNetwork network_from_checkpoint(const json& j, bool use_ema);

// Overfit map keyed by record seed.
json overfit_to_json(const std::map<std::uint64_t, GeneralDiscretization>& map, std::size_t nfe,
                     const json& meta = json::object());
std::map<std::uint64_t, GeneralDiscretization> overfit_from_json(const json& j);

json report_to_json(const MetricsReport& r);

// Teacher dataset: JSON-lines with a header line.
std::string format_hash(std::uint64_t h);
void write_teacher(const std::filesystem::path& path, const TeacherSet& set);
/// Reads a dataset; throws ConfigError when the header's oracle hash differs
/// from expected_hash.
TeacherSet read_teacher(const std::filesystem::path& path, std::uint64_t expected_hash);

// CSV outputs.
void write_trace_csv(const std::filesystem::path& path, const std::vector<TraceRow>& rows);
std::vector<TraceRow> read_trace_csv(const std::filesystem::path& path);
void write_scatter_csv(const std::filesystem::path& path, const MetricsReport& report);
/// Rows (x_T_0, x_T_1, error) of a scatter CSV.
std::vector<SampleError> read_scatter_csv(const std::filesystem::path& path);
void write_sweep_csv(const std::filesystem::path& path, const std::vector<MetricsReport>& rows);

/// Writes text atomically enough for our purposes: parent directories are
/// created and the file is replaced.
void write_text(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);
void write_json(const std::filesystem::path& path, const json& j);
json read_json(const std::filesystem::path& path);

}  // namespace tdisc::io
