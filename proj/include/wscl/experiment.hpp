#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "wscl/data.hpp"
#include "wscl/engine.hpp"

namespace wscl {

using Json = nlohmann::json;

/// Where the stream and the dream data come from.
struct DataConfig {
  /// "synth:k=v,..." spec; ignored when train_path is set.
  std::string stream = "synth:";
  std::string train_path;
  std::string test_path;
  /// Task count for file datasets (synthetic specs carry their own).
  std::size_t tasks = 5;
  /// "synth" (the generator's dream classes), "none", or a dataset path.
  std::string dream = "synth";
  double dream_fraction = 1.0;
  double noise_pct = 0.0;
  std::size_t downscale = 1;
};

struct SweepSpec {
  /// Dotted path into the config document, e.g. "data.noise_pct".
  std::string parameter;
  std::vector<Json> values;
};

struct ExperimentConfig {
  ArchConfig arch;
  DataConfig data;
  WsclConfig wscl;
  std::vector<std::uint64_t> seeds{0};
  std::string output_dir = "runs";
  std::optional<SweepSpec> sweep;
};

/// Strict parse: unknown keys and ill-typed values throw Error(Config).
ExperimentConfig config_from_json(const Json& doc);
Json to_json(const ExperimentConfig& cfg);
Json to_json(const WsclConfig& cfg);
Json to_json(const ArchConfig& arch);

/// Applies "a.b.c=value"; the value is read as JSON when it parses, otherwise
/// as a plain string.
void apply_override(Json& doc, const std::string& assignment);

/// FNV-1a of the canonical dump, as 16 hex digits.
std::string config_hash(const Json& doc);

/// Code version compiled into the library.
std::string code_version();

struct RunInputs {
  TaskStream stream;
  std::optional<DreamSource> dream;
};

/// Builds the stream and the (possibly corrupted or subsampled) dream source
/// for one seed.
RunInputs load_inputs(const DataConfig& data, std::uint64_t seed);

/// RunRecord as a JSON document. Model checkpoints are represented by their
/// digests.
Json run_record_to_json(const RunRecord& record);

/// One config point, i.e. the base config with at most one sweep value applied.
struct RunPoint {
  std::string label;
  Json document;
  ExperimentConfig config;
};

/// Expands the sweep (if any) into validated config points.
std::vector<RunPoint> expand_sweep(const Json& doc);

struct RunOptions {
  std::size_t workers = 1;
  std::ostream* log = nullptr;
};

/// Runs every (sweep point x seed), writing run-*.json, per-run accuracy
/// CSVs, summary.json and manifest.json under the output directory.
/// Returns 0 on success, 1 on a runtime failure (a FAILED marker is left
/// next to the partial artifacts) and 2 for an invalid config.
int run_experiment(const Json& doc, const RunOptions& options);

/// Worker count from WSCL_WORKERS (unset -> hardware concurrency).
std::size_t workers_from_env();

/// Writes methods.csv, forgetting.csv, stages.csv, updates.csv and
/// freeze_depths.csv built from every run-*.json found in `run_dirs`.
/// Returns the number of records read; throws EmptyInput when none is found.
std::size_t emit_report(const std::vector<std::filesystem::path>& run_dirs, const std::filesystem::path& out_dir);

}  // namespace wscl
