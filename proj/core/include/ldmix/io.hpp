#pragma once

// Persistence: key=value run configuration, run manifests, the fitted-model
// artifact (per-chain draw CSVs + manifest + standardization sidecar), truth
// tables as JSON, and the plot-ready result tables.  All floating-point
// output uses %.17g so that artifacts round-trip exactly and reruns are
// byte-identical; manifests carry no wall-clock fields for the same reason.

#include "ldmix/cohort.hpp"
#include "ldmix/dynamics.hpp"
#include "ldmix/hmc.hpp"
#include "ldmix/inference.hpp"
#include "ldmix/posterior.hpp"
#include "ldmix/synthetic.hpp"

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace ldmix {

inline constexpr const char* ldmix_version = "0.1.0";

/// %.17g, the shortest form that round-trips a double exactly.
std::string format_g17(double v);

/// 64-bit FNV-1a over the file's bytes, as fixed-width hex.
std::string file_digest(const std::string& path);

/// Throws std::invalid_argument when `path` exists and `force` is false.
void require_writable(const std::string& path, bool force);

void ensure_dir(const std::string& dir);

// ---------------------------------------------------------------- config --

/// Ordered key -> value map so snapshots serialize deterministically.
using KvConfig = std::map<std::string, std::string>;

/// Plain-text config: one `key = value` per line, '#' comments, blank lines
/// ignored.  Throws on lines without '='.
KvConfig read_kv_file(const std::string& path);

/// Applies overrides on top of base (overrides win).
KvConfig merge_config(KvConfig base, const KvConfig& overrides);

// -------------------------------------------------------------- manifest --

struct RunManifest {
  std::string command;
  KvConfig config;  // merged snapshot the run actually used
  std::uint64_t seed = 0;
  std::string version = ldmix_version;
  std::map<std::string, std::string> inputs;  // path -> content digest
  std::vector<std::string> outputs;
};

void write_manifest(const std::string& path, const RunManifest& manifest);
RunManifest read_manifest(const std::string& path);

// -------------------------------------------------------- fitted artifact --

/// Everything needed to run post-fit products without the training data.
struct FittedModel {
  PosteriorDraws draws;
  ModelConfig config;
  CohortSchema schema;
  Standardization standardization;
  CensoringSpec censoring;  // model units
};

/// Writes manifest.json, model.json, schema.json, standardization.json and
/// one chain_<c>.csv per chain into `dir`.
void save_fit(const std::string& dir, const PosteriorDraws& draws, const ModelConfig& config,
              const CohortData& cohort, const RunManifest& manifest, bool force);

/// Reloads the artifact; diagnostics (R-hat, ESS) are recomputed from the
/// stored draws.  Throws std::invalid_argument on a malformed artifact.
FittedModel load_fit(const std::string& dir);

// ----------------------------------------------------------- schema JSON --

/// Standalone cohort-schema sidecar, the same layout save_fit embeds.
void write_schema_json(const std::string& path, const CohortSchema& schema);
CohortSchema read_schema_json(const std::string& path);

// ------------------------------------------------------------ truth JSON --

void write_truth(const std::string& path, const SimulationTruth& truth);
SimulationTruth read_truth(const std::string& path);

// ---------------------------------------------------------- result tables --

void write_scores_csv(const std::string& path, const std::vector<ModelScore>& scores,
                      int selected_L);

void write_membership_csv(const std::string& path, const MembershipTable& table);

void write_resilience_csv(const std::string& path, const ResilienceSummary& summary);

/// Trajectory summary in raw units (ages in years; markers de-standardized
/// when the model was fit on z-scores).
void write_trajectory_csv(const std::string& path, const std::string& subject_id,
                          const TrajectorySummary& summary, const CohortSchema& schema,
                          const Standardization& std_info);

/// Every predictive draw, long format (draw, cluster, age, marker, value).
void write_trajectory_draws_csv(const std::string& path, const std::string& subject_id,
                                const TrajectoryDraws& draws, const CohortSchema& schema,
                                const Standardization& std_info);

/// The Figure-3-style age-binned MAE / coverage table.
void write_evaluation_csv(const std::string& path, const PredictiveSummary& summary);

/// Per-prediction records backing the evaluation table (model units).
void write_prediction_records_csv(const std::string& path, const PredictiveSummary& summary,
                                  const CohortSchema& schema);

/// Per-(history length, cluster) membership summary for one subject.
void write_cluster_trajectory_csv(const std::string& path, const std::string& subject_id,
                                  const ClusterTrajectory& trajectory);

/// Per-replicate BIC table plus the selected L column.
void write_replicate_bic_csv(const std::string& path, const ReplicateReport& report);

/// Parameter-recovery table (truth, MSE of posterior means, coverage).
void write_recovery_csv(const std::string& path, const ReplicateReport& report);

}  // namespace ldmix
