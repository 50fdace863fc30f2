#pragma once

// Longitudinal cohort container: per-subject visit grids, biomarker panels
// with missingness masks, measurement/structural covariates, and the pooled
// standardization applied on ingest.  Biomarker panels are stored in model
// units (optionally z-scored); visit times are always the z-scored age.

#include <Eigen/Dense>

#include <cstdint>
#include <string>
#include <vector>

namespace ldmix {

enum class MarkerType { cognitive = 0, mri = 1, csf = 2 };

const char* marker_type_name(MarkerType t);
MarkerType parse_marker_type(const std::string& s);

enum class CensorSide { none = 0, ceiling = 1, floor = 2 };

/// One-sided detection bound for a biomarker.  Observations at or beyond the
/// bound carry interval mass in the likelihood instead of density.
struct CensorRule {
  CensorSide side = CensorSide::none;
  double bound = 0.0;

  bool censors(double y) const {
    if (side == CensorSide::ceiling) return y >= bound;
    if (side == CensorSide::floor) return y <= bound;
    return false;
  }
};

struct CensoringSpec {
  std::vector<CensorRule> rules;  // size K, or empty for "no censoring"

  const CensorRule& rule(int k) const {
    static const CensorRule none{};
    return rules.empty() ? none : rules[static_cast<std::size_t>(k)];
  }
};

struct Subject {
  std::string id;
  Eigen::VectorXd times;  // standardized age per visit, strictly increasing
  Eigen::VectorXd ages;   // raw age in years
  Eigen::MatrixXd y;      // n_visits x K biomarker panel; NaN where missing
  Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic> observed;  // n_visits x K
  Eigen::MatrixXd x;      // n_visits x p measurement covariates
  Eigen::MatrixXd z;      // n_visits x q structural covariates

  int n_visits() const { return static_cast<int>(times.size()); }
  int n_observed() const;
  /// Visit span in standardized time units; 0 for a single visit.
  double span() const { return n_visits() > 1 ? times[n_visits() - 1] - times[0] : 0.0; }
};

/// Affine maps applied on ingest, kept so emit_csv can restore raw units.
struct Standardization {
  double age_mean = 0.0;
  double age_sd = 1.0;
  bool markers_standardized = false;
  Eigen::VectorXd marker_mean;  // size K when markers_standardized
  Eigen::VectorXd marker_sd;
};

/// Column layout of a long-format cohort CSV (one row per visit).  The x/z
/// covariate lists may use the reserved names "intercept" and "time", which
/// are synthesized (1 and standardized age) rather than read from a column.
struct CohortSchema {
  std::string id_col = "subject_id";
  std::string age_col = "age";
  std::vector<std::string> marker_cols;
  std::vector<MarkerType> marker_types;        // parallel to marker_cols
  std::vector<CensorRule> censor;              // parallel to marker_cols; raw units
  std::vector<std::string> x_cols;
  std::vector<std::string> z_cols;
  bool standardize_markers = true;

  int n_markers() const { return static_cast<int>(marker_cols.size()); }
};

/// Pre-standardization view of one subject, as parsed from CSV or produced
/// by the simulator: raw ages, raw marker panel, raw (non-synthesized)
/// covariate columns.
struct RawSubject {
  std::string id;
  Eigen::VectorXd ages;
  Eigen::MatrixXd y;        // n_visits x K, raw units, NaN where missing
  Eigen::MatrixXd x_extra;  // n_visits x (#non-synthesized x cols)
  Eigen::MatrixXd z_extra;
};

struct CohortData {
  std::vector<Subject> subjects;
  CohortSchema schema;            // as applied
  CensoringSpec censoring;        // bounds in model units
  Standardization standardization;
  int n_markers = 0;
  int n_x = 0;
  int n_z = 0;
  double delta_min = 0.0;  // smallest / largest subject span (standardized),
  double delta_max = 0.0;  // over subjects with at least two visits; NaN if none
  int total_visits = 0;
  int total_observations = 0;

  int n_subjects() const { return static_cast<int>(subjects.size()); }
  std::vector<MarkerType> marker_types() const { return schema.marker_types; }
};

/// Standardizes, synthesizes covariate columns, builds masks and censoring in
/// model units, and validates invariants (ages strictly increasing, at least
/// one visit per subject, finite covariates).  Throws std::invalid_argument
/// on contract violations.
CohortData build_cohort(std::vector<RawSubject> raw, const CohortSchema& schema);

/// Same assembly under a fixed standardization (a fitted model's sidecar)
/// instead of statistics pooled from `raw` — the path for scoring or
/// predicting new subjects on a trained scale.
CohortData build_cohort_with(std::vector<RawSubject> raw, const CohortSchema& schema,
                             const Standardization& std_info);

/// Parses the long-format CSV into raw subjects without standardizing.
std::vector<RawSubject> read_raw_csv(const std::string& path, const CohortSchema& schema);

/// Min/max visit span in standardized units, excluding single-visit subjects.
/// Throws if every subject has a single visit (the rho prior needs a span).
std::pair<double, double> compute_deltas(const CohortData& cohort);

/// New cohort holding the listed subjects (indices into cohort.subjects, in
/// the given order), sharing schema, censoring, and standardization; visit
/// totals and spans are recomputed over the subset.
CohortData subset_cohort(const CohortData& cohort, const std::vector<int>& indices);

/// Reads a long-format CSV.  Rows are grouped by subject id (order of first
/// appearance) and must already be in strictly increasing age order within
/// each subject; duplicate or out-of-order ages are rejected.  Empty cells,
/// "NA" and "nan" denote missing biomarker values; covariate and age cells
/// must parse.
CohortData ingest_csv(const std::string& path, const CohortSchema& schema);

/// Writes the cohort back to raw units.  ingest_csv(emit_csv(c), c.schema)
/// reproduces every stored field up to floating-point round-trip error.
void emit_csv(const CohortData& cohort, const std::string& path);

}  // namespace ldmix
