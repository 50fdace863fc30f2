#include "ldmix/cohort.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <unordered_map>

namespace ldmix {

namespace {

constexpr const char* kIntercept = "intercept";
constexpr const char* kTime = "time";

bool is_synth(const std::string& col) { return col == kIntercept || col == kTime; }

std::vector<std::string> extra_cols(const std::vector<std::string>& cols) {
  std::vector<std::string> out;
  for (const auto& c : cols)
    if (!is_synth(c)) out.push_back(c);
  return out;
}

/// Population (1/n) standard deviation, matching the pooled z-scoring
/// convention used throughout.
std::pair<double, double> pooled_stats(const std::vector<double>& v) {
  const double n = static_cast<double>(v.size());
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / n;
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return {mean, std::sqrt(ss / n)};
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

bool is_missing_token(const std::string& t) {
  return t.empty() || t == "NA" || t == "NaN" || t == "nan";
}

double parse_double(const std::string& t, const std::string& what) {
  double v = 0.0;
  const char* first = t.data();
  const char* last = t.data() + t.size();
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc{} || ptr != last)
    throw std::invalid_argument("cohort csv: cannot parse " + what + " value '" + t + "'");
  return v;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(trim(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  out.push_back(trim(cur));
  return out;
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

void validate_schema(const CohortSchema& schema) {
  if (schema.marker_cols.empty()) throw std::invalid_argument("cohort schema: no biomarker columns");
  if (schema.marker_types.size() != schema.marker_cols.size())
    throw std::invalid_argument("cohort schema: marker_types must parallel marker_cols");
  if (!schema.censor.empty() && schema.censor.size() != schema.marker_cols.size())
    throw std::invalid_argument("cohort schema: censor rules must parallel marker_cols");
  if (schema.x_cols.empty()) throw std::invalid_argument("cohort schema: x_cols is empty");
}

}  // namespace

const char* marker_type_name(MarkerType t) {
  switch (t) {
    case MarkerType::cognitive: return "cognitive";
    case MarkerType::mri: return "mri";
    case MarkerType::csf: return "csf";
  }
  return "?";
}

MarkerType parse_marker_type(const std::string& s) {
  if (s == "cognitive" || s == "cog") return MarkerType::cognitive;
  if (s == "mri") return MarkerType::mri;
  if (s == "csf") return MarkerType::csf;
  throw std::invalid_argument("unknown marker type '" + s + "' (want cognitive|mri|csf)");
}

int Subject::n_observed() const {
  int n = 0;
  for (Eigen::Index j = 0; j < observed.rows(); ++j)
    for (Eigen::Index k = 0; k < observed.cols(); ++k) n += observed(j, k) != 0;
  return n;
}

namespace {

void validate_raw(const std::vector<RawSubject>& raw, const CohortSchema& schema) {
  validate_schema(schema);
  if (raw.empty()) throw std::invalid_argument("cohort: no subjects");

  const int K = schema.n_markers();
  const auto x_extra_names = extra_cols(schema.x_cols);
  const auto z_extra_names = extra_cols(schema.z_cols);
  for (const auto& s : raw) {
    const auto J = s.ages.size();
    if (J < 1) throw std::invalid_argument("cohort: subject '" + s.id + "' has no visits");
    for (Eigen::Index j = 1; j < J; ++j) {
      if (s.ages[j] == s.ages[j - 1])
        throw std::invalid_argument("cohort: duplicate (subject, age) row for subject '" + s.id + "'");
      if (!(s.ages[j] > s.ages[j - 1]))
        throw std::invalid_argument("cohort: subject '" + s.id + "' ages not strictly increasing");
    }
    if (s.y.rows() != J || s.y.cols() != K)
      throw std::invalid_argument("cohort: subject '" + s.id + "' biomarker panel shape mismatch");
    if (s.x_extra.rows() != J || s.x_extra.cols() != static_cast<Eigen::Index>(x_extra_names.size()))
      throw std::invalid_argument("cohort: subject '" + s.id + "' x covariate shape mismatch");
    if (s.z_extra.rows() != J || s.z_extra.cols() != static_cast<Eigen::Index>(z_extra_names.size()))
      throw std::invalid_argument("cohort: subject '" + s.id + "' z covariate shape mismatch");
    if (!s.x_extra.allFinite() || !s.z_extra.allFinite() || !s.ages.allFinite())
      throw std::invalid_argument("cohort: subject '" + s.id + "' has non-finite age or covariate");
  }
}

}  // namespace

CohortData build_cohort(std::vector<RawSubject> raw, const CohortSchema& schema) {
  validate_raw(raw, schema);
  const int K = schema.n_markers();

  std::vector<double> all_ages;
  for (const auto& s : raw)
    for (Eigen::Index j = 0; j < s.ages.size(); ++j) all_ages.push_back(s.ages[j]);

  auto [age_mean, age_sd] = pooled_stats(all_ages);
  if (!(age_sd > 0.0)) throw std::invalid_argument("cohort: zero variance in age; cannot standardize");

  Standardization std_info;
  std_info.age_mean = age_mean;
  std_info.age_sd = age_sd;
  std_info.markers_standardized = schema.standardize_markers;
  if (schema.standardize_markers) {
    std_info.marker_mean.resize(K);
    std_info.marker_sd.resize(K);
    for (int k = 0; k < K; ++k) {
      std::vector<double> vals;
      for (const auto& s : raw)
        for (Eigen::Index j = 0; j < s.y.rows(); ++j)
          if (!std::isnan(s.y(j, k))) vals.push_back(s.y(j, k));
      if (vals.empty())
        throw std::invalid_argument("cohort: biomarker '" + schema.marker_cols[static_cast<std::size_t>(k)] +
                                    "' has no observed values");
      auto [m, sd] = pooled_stats(vals);
      if (!(sd > 0.0))
        throw std::invalid_argument("cohort: biomarker '" + schema.marker_cols[static_cast<std::size_t>(k)] +
                                    "' has zero variance");
      std_info.marker_mean[k] = m;
      std_info.marker_sd[k] = sd;
    }
  }
  return build_cohort_with(std::move(raw), schema, std_info);
}

CohortData build_cohort_with(std::vector<RawSubject> raw, const CohortSchema& schema,
                             const Standardization& std_info) {
  validate_raw(raw, schema);
  const int K = schema.n_markers();
  if (!(std_info.age_sd > 0.0))
    throw std::invalid_argument("cohort: standardization has non-positive age sd");
  if (std_info.markers_standardized != schema.standardize_markers)
    throw std::invalid_argument("cohort: standardization and schema disagree on marker z-scoring");
  if (std_info.markers_standardized &&
      (std_info.marker_mean.size() != K || std_info.marker_sd.size() != K))
    throw std::invalid_argument("cohort: standardization marker scaling does not match K");

  CensoringSpec censoring;
  if (!schema.censor.empty()) {
    censoring.rules = schema.censor;
    if (schema.standardize_markers)
      for (int k = 0; k < K; ++k)
        if (censoring.rules[static_cast<std::size_t>(k)].side != CensorSide::none)
          censoring.rules[static_cast<std::size_t>(k)].bound =
              (censoring.rules[static_cast<std::size_t>(k)].bound - std_info.marker_mean[k]) / std_info.marker_sd[k];
  }

  CohortData cohort;
  cohort.schema = schema;
  cohort.censoring = censoring;
  cohort.standardization = std_info;
  cohort.n_markers = K;
  cohort.n_x = static_cast<int>(schema.x_cols.size());
  cohort.n_z = static_cast<int>(schema.z_cols.size());

  double dmin = std::numeric_limits<double>::infinity();
  double dmax = -std::numeric_limits<double>::infinity();

  for (auto& s : raw) {
    const int J = static_cast<int>(s.ages.size());
    Subject subj;
    subj.id = std::move(s.id);
    subj.ages = s.ages;
    subj.times = (s.ages.array() - std_info.age_mean) / std_info.age_sd;

    subj.y = s.y;
    subj.observed.setZero(J, K);
    for (int j = 0; j < J; ++j)
      for (int k = 0; k < K; ++k) {
        double& v = subj.y(j, k);
        if (std::isnan(v)) continue;
        subj.observed(j, k) = 1;
        if (schema.standardize_markers) v = (v - std_info.marker_mean[k]) / std_info.marker_sd[k];
        // Snap values that round-tripped through raw units back onto the
        // detection bound, so the exact at-bound comparison stays reliable.
        const CensorRule& rule = censoring.rule(k);
        if (rule.side != CensorSide::none &&
            std::abs(v - rule.bound) <= 1e-9 * std::max(1.0, std::abs(rule.bound)))
          v = rule.bound;
      }

    subj.x.resize(J, cohort.n_x);
    int extra = 0;
    for (int c = 0; c < cohort.n_x; ++c) {
      const std::string& name = schema.x_cols[static_cast<std::size_t>(c)];
      if (name == kIntercept)
        subj.x.col(c).setOnes();
      else if (name == kTime)
        subj.x.col(c) = subj.times;
      else
        subj.x.col(c) = s.x_extra.col(extra++);
    }
    subj.z.resize(J, cohort.n_z);
    extra = 0;
    for (int c = 0; c < cohort.n_z; ++c) {
      const std::string& name = schema.z_cols[static_cast<std::size_t>(c)];
      if (name == kIntercept)
        subj.z.col(c).setOnes();
      else if (name == kTime)
        subj.z.col(c) = subj.times;
      else
        subj.z.col(c) = s.z_extra.col(extra++);
    }

    if (J > 1) {
      dmin = std::min(dmin, subj.span());
      dmax = std::max(dmax, subj.span());
    }
    cohort.total_visits += J;
    cohort.total_observations += subj.n_observed();
    cohort.subjects.push_back(std::move(subj));
  }

  if (std::isfinite(dmin)) {
    cohort.delta_min = dmin;
    cohort.delta_max = dmax;
  } else {
    cohort.delta_min = cohort.delta_max = std::numeric_limits<double>::quiet_NaN();
  }
  return cohort;
}

std::pair<double, double> compute_deltas(const CohortData& cohort) {
  double dmin = std::numeric_limits<double>::infinity();
  double dmax = -std::numeric_limits<double>::infinity();
  for (const auto& s : cohort.subjects) {
    if (s.n_visits() < 2) continue;
    dmin = std::min(dmin, s.span());
    dmax = std::max(dmax, s.span());
  }
  if (!std::isfinite(dmin))
    throw std::invalid_argument("compute_deltas: every subject has a single visit; rho prior undefined");
  return {dmin, dmax};
}

CohortData subset_cohort(const CohortData& cohort, const std::vector<int>& indices) {
  CohortData out;
  out.schema = cohort.schema;
  out.censoring = cohort.censoring;
  out.standardization = cohort.standardization;
  out.n_markers = cohort.n_markers;
  out.n_x = cohort.n_x;
  out.n_z = cohort.n_z;

  double dmin = std::numeric_limits<double>::infinity();
  double dmax = -std::numeric_limits<double>::infinity();
  out.subjects.reserve(indices.size());
  for (int i : indices) {
    if (i < 0 || i >= cohort.n_subjects())
      throw std::invalid_argument("subset_cohort: subject index out of range");
    const Subject& s = cohort.subjects[static_cast<std::size_t>(i)];
    if (s.n_visits() > 1) {
      dmin = std::min(dmin, s.span());
      dmax = std::max(dmax, s.span());
    }
    out.total_visits += s.n_visits();
    out.total_observations += s.n_observed();
    out.subjects.push_back(s);
  }
  if (std::isfinite(dmin)) {
    out.delta_min = dmin;
    out.delta_max = dmax;
  } else {
    out.delta_min = out.delta_max = std::numeric_limits<double>::quiet_NaN();
  }
  return out;
}

std::vector<RawSubject> read_raw_csv(const std::string& path, const CohortSchema& schema) {
  validate_schema(schema);
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cohort csv: cannot open '" + path + "'");

  std::string line;
  if (!std::getline(in, line)) throw std::invalid_argument("cohort csv: empty file '" + path + "'");
  const auto header = split_csv_line(line);
  std::unordered_map<std::string, int> col_index;
  for (std::size_t i = 0; i < header.size(); ++i) col_index[header[i]] = static_cast<int>(i);

  auto require = [&](const std::string& name) {
    auto it = col_index.find(name);
    if (it == col_index.end())
      throw std::invalid_argument("cohort csv: missing column '" + name + "' in '" + path + "'");
    return it->second;
  };

  const int id_ix = require(schema.id_col);
  const int age_ix = require(schema.age_col);
  std::vector<int> marker_ix;
  for (const auto& c : schema.marker_cols) marker_ix.push_back(require(c));
  const auto x_extra_names = extra_cols(schema.x_cols);
  const auto z_extra_names = extra_cols(schema.z_cols);
  std::vector<int> x_ix, z_ix;
  for (const auto& c : x_extra_names) x_ix.push_back(require(c));
  for (const auto& c : z_extra_names) z_ix.push_back(require(c));

  struct Row {
    double age;
    std::vector<double> y, x, z;
  };
  std::vector<std::string> order;
  std::unordered_map<std::string, std::vector<Row>> by_id;

  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto tok = split_csv_line(line);
    if (tok.size() != header.size())
      throw std::invalid_argument("cohort csv: line " + std::to_string(line_no) + " has " +
                                  std::to_string(tok.size()) + " fields, header has " +
                                  std::to_string(header.size()));
    const std::string& id = tok[static_cast<std::size_t>(id_ix)];
    if (id.empty()) throw std::invalid_argument("cohort csv: empty subject id on line " + std::to_string(line_no));
    Row row;
    row.age = parse_double(tok[static_cast<std::size_t>(age_ix)], schema.age_col);
    for (int ix : marker_ix) {
      const std::string& t = tok[static_cast<std::size_t>(ix)];
      row.y.push_back(is_missing_token(t) ? std::numeric_limits<double>::quiet_NaN()
                                          : parse_double(t, header[static_cast<std::size_t>(ix)]));
    }
    for (int ix : x_ix) row.x.push_back(parse_double(tok[static_cast<std::size_t>(ix)], header[static_cast<std::size_t>(ix)]));
    for (int ix : z_ix) row.z.push_back(parse_double(tok[static_cast<std::size_t>(ix)], header[static_cast<std::size_t>(ix)]));
    if (by_id.find(id) == by_id.end()) order.push_back(id);
    by_id[id].push_back(std::move(row));
  }
  if (order.empty()) throw std::invalid_argument("cohort csv: no data rows in '" + path + "'");

  std::vector<RawSubject> raw;
  raw.reserve(order.size());
  for (const auto& id : order) {
    auto& rows = by_id[id];
    // Visits must already be in strict age order: duplicated or out-of-order
    // ages are data errors, not something to silently repair.
    for (std::size_t j = 1; j < rows.size(); ++j) {
      if (!(rows[j - 1].age < rows[j].age))
        throw std::invalid_argument("cohort csv: ages for subject '" + id +
                                    "' are not strictly increasing (" + std::to_string(rows[j - 1].age) +
                                    " then " + std::to_string(rows[j].age) + ")");
    }
    RawSubject s;
    s.id = id;
    const int J = static_cast<int>(rows.size());
    const int K = schema.n_markers();
    s.ages.resize(J);
    s.y.resize(J, K);
    s.x_extra.resize(J, static_cast<Eigen::Index>(x_extra_names.size()));
    s.z_extra.resize(J, static_cast<Eigen::Index>(z_extra_names.size()));
    for (int j = 0; j < J; ++j) {
      s.ages[j] = rows[static_cast<std::size_t>(j)].age;
      for (int k = 0; k < K; ++k) s.y(j, k) = rows[static_cast<std::size_t>(j)].y[static_cast<std::size_t>(k)];
      for (std::size_t c = 0; c < x_extra_names.size(); ++c) s.x_extra(j, static_cast<Eigen::Index>(c)) = rows[static_cast<std::size_t>(j)].x[c];
      for (std::size_t c = 0; c < z_extra_names.size(); ++c) s.z_extra(j, static_cast<Eigen::Index>(c)) = rows[static_cast<std::size_t>(j)].z[c];
    }
    raw.push_back(std::move(s));
  }
  return raw;
}

CohortData ingest_csv(const std::string& path, const CohortSchema& schema) {
  return build_cohort(read_raw_csv(path, schema), schema);
}

void emit_csv(const CohortData& cohort, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::invalid_argument("cohort csv: cannot write '" + path + "'");

  const auto& schema = cohort.schema;
  const auto x_extra_names = extra_cols(schema.x_cols);
  const auto z_extra_names = extra_cols(schema.z_cols);
  std::vector<int> x_extra_pos, z_extra_pos;
  for (std::size_t c = 0; c < schema.x_cols.size(); ++c)
    if (!is_synth(schema.x_cols[c])) x_extra_pos.push_back(static_cast<int>(c));
  for (std::size_t c = 0; c < schema.z_cols.size(); ++c)
    if (!is_synth(schema.z_cols[c])) z_extra_pos.push_back(static_cast<int>(c));

  out << schema.id_col << ',' << schema.age_col;
  for (const auto& c : schema.marker_cols) out << ',' << c;
  for (const auto& c : x_extra_names) out << ',' << c;
  for (const auto& c : z_extra_names) out << ',' << c;
  out << '\n';

  const auto& st = cohort.standardization;
  for (const auto& s : cohort.subjects) {
    for (int j = 0; j < s.n_visits(); ++j) {
      out << s.id << ',' << fmt(s.ages[j]);
      for (int k = 0; k < cohort.n_markers; ++k) {
        out << ',';
        if (!s.observed(j, k)) continue;
        double v = s.y(j, k);
        if (st.markers_standardized) v = v * st.marker_sd[k] + st.marker_mean[k];
        out << fmt(v);
      }
      for (int pos : x_extra_pos) out << ',' << fmt(s.x(j, pos));
      for (int pos : z_extra_pos) out << ',' << fmt(s.z(j, pos));
      out << '\n';
    }
  }
  if (!out) throw std::runtime_error("cohort csv: write failed for '" + path + "'");
}

}  // namespace ldmix
