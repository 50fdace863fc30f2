#include "ldmix/io.hpp"

#include "ldmix/math.hpp"

#include <json.hpp>

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>

namespace ldmix {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::invalid_argument("io: cannot write '" + path + "'");
  return out;
}

std::ifstream open_in(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("io: cannot open '" + path + "'");
  return in;
}

void finish(std::ofstream& out, const std::string& path) {
  out.flush();
  if (!out) throw std::runtime_error("io: write failed for '" + path + "'");
}

json read_json(const std::string& path) {
  auto in = open_in(path);
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    throw std::invalid_argument("io: malformed JSON in '" + path + "': " + e.what());
  }
  return j;
}

void write_json(const std::string& path, const json& j) {
  auto out = open_out(path);
  out << j.dump(2) << '\n';
  finish(out, path);
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_line(const std::string& line) {
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

json vec_to_json(const Eigen::VectorXd& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

Eigen::VectorXd vec_from_json(const json& a) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(a.size()));
  for (std::size_t i = 0; i < a.size(); ++i) v[static_cast<Eigen::Index>(i)] = a[i].get<double>();
  return v;
}

json mat_to_json(const Eigen::MatrixXd& m) {
  json rows = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) rows.push_back(vec_to_json(m.row(r).transpose()));
  return rows;
}

Eigen::MatrixXd mat_from_json(const json& rows) {
  const auto n = static_cast<Eigen::Index>(rows.size());
  if (n == 0) return Eigen::MatrixXd(0, 0);
  const auto c = static_cast<Eigen::Index>(rows[0].size());
  Eigen::MatrixXd m(n, c);
  for (Eigen::Index r = 0; r < n; ++r)
    m.row(r) = vec_from_json(rows[static_cast<std::size_t>(r)]).transpose();
  return m;
}

const char* censor_side_name(CensorSide s) {
  switch (s) {
    case CensorSide::none: return "none";
    case CensorSide::ceiling: return "ceiling";
    case CensorSide::floor: return "floor";
  }
  return "none";
}

CensorSide censor_side_parse(const std::string& s) {
  if (s == "none") return CensorSide::none;
  if (s == "ceiling") return CensorSide::ceiling;
  if (s == "floor") return CensorSide::floor;
  throw std::invalid_argument("io: unknown censor side '" + s + "'");
}

json censor_to_json(const std::vector<CensorRule>& rules) {
  json a = json::array();
  for (const auto& r : rules) a.push_back({{"side", censor_side_name(r.side)}, {"bound", r.bound}});
  return a;
}

std::vector<CensorRule> censor_from_json(const json& a) {
  std::vector<CensorRule> rules;
  for (const auto& e : a) {
    CensorRule r;
    r.side = censor_side_parse(e.at("side").get<std::string>());
    r.bound = e.at("bound").get<double>();
    rules.push_back(r);
  }
  return rules;
}

json schema_to_json(const CohortSchema& schema) {
  json types = json::array();
  for (MarkerType t : schema.marker_types) types.push_back(marker_type_name(t));
  return json{{"id_col", schema.id_col},
              {"age_col", schema.age_col},
              {"marker_cols", schema.marker_cols},
              {"marker_types", types},
              {"censor", censor_to_json(schema.censor)},
              {"x_cols", schema.x_cols},
              {"z_cols", schema.z_cols},
              {"standardize_markers", schema.standardize_markers}};
}

CohortSchema schema_from_json(const json& j) {
  CohortSchema schema;
  schema.id_col = j.at("id_col").get<std::string>();
  schema.age_col = j.at("age_col").get<std::string>();
  schema.marker_cols = j.at("marker_cols").get<std::vector<std::string>>();
  for (const auto& t : j.at("marker_types"))
    schema.marker_types.push_back(parse_marker_type(t.get<std::string>()));
  schema.censor = censor_from_json(j.at("censor"));
  schema.x_cols = j.at("x_cols").get<std::vector<std::string>>();
  schema.z_cols = j.at("z_cols").get<std::vector<std::string>>();
  schema.standardize_markers = j.at("standardize_markers").get<bool>();
  return schema;
}

json standardization_to_json(const Standardization& s) {
  return json{{"age_mean", s.age_mean},
              {"age_sd", s.age_sd},
              {"markers_standardized", s.markers_standardized},
              {"marker_mean", vec_to_json(s.marker_mean)},
              {"marker_sd", vec_to_json(s.marker_sd)}};
}

Standardization standardization_from_json(const json& j) {
  Standardization s;
  s.age_mean = j.at("age_mean").get<double>();
  s.age_sd = j.at("age_sd").get<double>();
  s.markers_standardized = j.at("markers_standardized").get<bool>();
  s.marker_mean = vec_from_json(j.at("marker_mean"));
  s.marker_sd = vec_from_json(j.at("marker_sd"));
  return s;
}

json prior_to_json(const PriorConfig& p) {
  return json{{"beta_var", p.beta_var},
              {"sigma_shape", p.sigma_shape},
              {"sigma_scale", p.sigma_scale},
              {"alpha_sd", p.alpha_sd},
              {"gamma2_shape", p.gamma2_shape},
              {"gamma2_rate", p.gamma2_rate},
              {"gamma3_sd", p.gamma3_sd},
              {"mu_type_var", p.mu_type_var},
              {"alpha0_shape", p.alpha0_shape},
              {"alpha0_rate", p.alpha0_rate},
              {"rho_a", p.rho_a},
              {"rho_b", p.rho_b}};
}

PriorConfig prior_from_json(const json& j) {
  PriorConfig p;
  p.beta_var = j.at("beta_var").get<double>();
  p.sigma_shape = j.at("sigma_shape").get<double>();
  p.sigma_scale = j.at("sigma_scale").get<double>();
  p.alpha_sd = j.at("alpha_sd").get<double>();
  p.gamma2_shape = j.at("gamma2_shape").get<double>();
  p.gamma2_rate = j.at("gamma2_rate").get<double>();
  p.gamma3_sd = j.at("gamma3_sd").get<double>();
  p.mu_type_var = j.at("mu_type_var").get<double>();
  p.alpha0_shape = j.at("alpha0_shape").get<double>();
  p.alpha0_rate = j.at("alpha0_rate").get<double>();
  p.rho_a = j.at("rho_a").get<double>();
  p.rho_b = j.at("rho_b").get<double>();
  return p;
}

std::string chain_path(const std::string& dir, int c) {
  return dir + "/chain_" + std::to_string(c + 1) + ".csv";
}

}  // namespace

std::string format_g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string file_digest(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::invalid_argument("io: cannot open '" + path + "' for digest");
  std::uint64_t h = 1469598103934665603ULL;
  char buf[1 << 14];
  while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
    const auto n = in.gcount();
    for (std::streamsize i = 0; i < n; ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 1099511628211ULL;
    }
    if (!in) break;
  }
  char hex[17];
  std::snprintf(hex, sizeof(hex), "%016llx", static_cast<unsigned long long>(h));
  return hex;
}

void require_writable(const std::string& path, bool force) {
  if (!force && fs::exists(path))
    throw std::invalid_argument("io: '" + path + "' already exists (pass --force to overwrite)");
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw std::invalid_argument("io: cannot create directory '" + dir + "': " + ec.message());
}

KvConfig read_kv_file(const std::string& path) {
  auto in = open_in(path);
  KvConfig cfg;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config '" + path + "' line " + std::to_string(line_no) +
                                  ": expected key = value");
    const std::string key = trim(t.substr(0, eq));
    const std::string value = trim(t.substr(eq + 1));
    if (key.empty())
      throw std::invalid_argument("config '" + path + "' line " + std::to_string(line_no) +
                                  ": empty key");
    cfg[key] = value;
  }
  return cfg;
}

KvConfig merge_config(KvConfig base, const KvConfig& overrides) {
  for (const auto& [k, v] : overrides) base[k] = v;
  return base;
}

void write_manifest(const std::string& path, const RunManifest& manifest) {
  json j;
  j["command"] = manifest.command;
  j["config"] = manifest.config;
  j["seed"] = manifest.seed;
  j["version"] = manifest.version;
  j["inputs"] = manifest.inputs;
  j["outputs"] = manifest.outputs;
  write_json(path, j);
}

RunManifest read_manifest(const std::string& path) {
  const json j = read_json(path);
  RunManifest m;
  m.command = j.at("command").get<std::string>();
  m.config = j.at("config").get<KvConfig>();
  m.seed = j.at("seed").get<std::uint64_t>();
  m.version = j.at("version").get<std::string>();
  m.inputs = j.at("inputs").get<std::map<std::string, std::string>>();
  m.outputs = j.at("outputs").get<std::vector<std::string>>();
  return m;
}

void save_fit(const std::string& dir, const PosteriorDraws& draws, const ModelConfig& config,
              const CohortData& cohort, const RunManifest& manifest, bool force) {
  ensure_dir(dir);
  require_writable(dir + "/manifest.json", force);

  json types = json::array();
  for (MarkerType t : config.marker_types) types.push_back(marker_type_name(t));
  std::string reason;
  const int selected = select_chain(draws, &reason);

  json model;
  model["n_clusters"] = config.n_clusters;
  model["gamma1"] = vec_to_json(config.gamma1);
  model["marker_types"] = types;
  model["n_x"] = cohort.n_x;
  model["n_z"] = cohort.n_z;
  model["prior"] = prior_to_json(config.prior);
  model["censoring"] = censor_to_json(cohort.censoring.rules);
  model["parameter_names"] = draws.names;
  model["n_chains"] = static_cast<int>(draws.chains.size());
  model["selected_chain"] = selected + 1;
  model["selection_reason"] = reason;
  json diag;
  diag["rhat"] = vec_to_json(draws.rhat);
  diag["ess"] = vec_to_json(draws.ess);
  json div = json::array(), step = json::array(), acc = json::array();
  for (const auto& ch : draws.chains) {
    div.push_back(ch.n_divergences);
    step.push_back(ch.step_size);
    acc.push_back(ch.accept_rate);
  }
  diag["divergences"] = div;
  diag["step_size"] = step;
  diag["accept_rate"] = acc;
  model["diagnostics"] = diag;
  write_json(dir + "/model.json", model);

  write_json(dir + "/schema.json", schema_to_json(cohort.schema));
  write_json(dir + "/standardization.json", standardization_to_json(cohort.standardization));

  for (std::size_t c = 0; c < draws.chains.size(); ++c) {
    const ChainResult& ch = draws.chains[c];
    const std::string path = chain_path(dir, static_cast<int>(c));
    auto out = open_out(path);
    for (std::size_t i = 0; i < draws.names.size(); ++i) {
      if (i) out << ',';
      out << draws.names[i];
    }
    out << ",lp,divergent\n";
    for (Eigen::Index r = 0; r < ch.draws.rows(); ++r) {
      for (Eigen::Index j = 0; j < ch.draws.cols(); ++j) {
        if (j) out << ',';
        out << format_g17(ch.draws(r, j));
      }
      out << ',' << format_g17(ch.lp[r]) << ','
          << int(ch.divergent[static_cast<std::size_t>(r)]) << '\n';
    }
    finish(out, path);
  }

  // The manifest is written last so that an interrupted save is detectable.
  write_manifest(dir + "/manifest.json", manifest);
}

FittedModel load_fit(const std::string& dir) {
  const json model = read_json(dir + "/model.json");

  FittedModel fit;
  fit.schema = schema_from_json(read_json(dir + "/schema.json"));
  fit.standardization = standardization_from_json(read_json(dir + "/standardization.json"));
  fit.censoring.rules = censor_from_json(model.at("censoring"));

  // A minimal stand-in cohort: make_model_config only reads the marker
  // types, covariate counts, and (already-resolved) prior from it.
  CohortData stub;
  stub.schema = fit.schema;
  stub.n_markers = static_cast<int>(fit.schema.marker_cols.size());
  stub.n_x = model.at("n_x").get<int>();
  stub.n_z = model.at("n_z").get<int>();
  const PriorConfig prior = prior_from_json(model.at("prior"));
  if (!(prior.rho_a > 0.0 && prior.rho_b > 0.0))
    throw std::invalid_argument("io: artifact prior lacks resolved rho hyperparameters");
  fit.config = make_model_config(stub, model.at("n_clusters").get<int>(),
                                 vec_from_json(model.at("gamma1")), prior);

  const auto names = model.at("parameter_names").get<std::vector<std::string>>();
  const auto expect = fit.config.layout.parameter_names(fit.config.type_slot_names);
  if (names != expect)
    throw std::invalid_argument("io: artifact parameter names do not match its layout");

  const int n_chains = model.at("n_chains").get<int>();
  fit.draws.names = names;
  fit.draws.n_clusters = fit.config.n_clusters;
  for (int c = 0; c < n_chains; ++c) {
    const std::string path = chain_path(dir, c);
    auto in = open_in(path);
    std::string line;
    if (!std::getline(in, line)) throw std::invalid_argument("io: empty chain file '" + path + "'");
    const auto header = split_line(line);
    if (header.size() != names.size() + 2 || !std::equal(names.begin(), names.end(), header.begin()))
      throw std::invalid_argument("io: chain header mismatch in '" + path + "'");

    std::vector<std::vector<double>> rows;
    while (std::getline(in, line)) {
      if (trim(line).empty()) continue;
      const auto tok = split_line(line);
      if (tok.size() != header.size())
        throw std::invalid_argument("io: ragged row in '" + path + "'");
      std::vector<double> vals(tok.size());
      for (std::size_t i = 0; i < tok.size(); ++i) {
        try {
          vals[i] = std::stod(tok[i]);
        } catch (const std::exception&) {
          throw std::invalid_argument("io: non-numeric cell '" + tok[i] + "' in '" + path + "'");
        }
      }
      rows.push_back(std::move(vals));
    }

    ChainResult ch;
    const auto n = static_cast<Eigen::Index>(rows.size());
    const auto p = static_cast<Eigen::Index>(names.size());
    ch.draws.resize(n, p);
    ch.lp.resize(n);
    ch.divergent.resize(static_cast<std::size_t>(n));
    for (Eigen::Index r = 0; r < n; ++r) {
      const auto& row = rows[static_cast<std::size_t>(r)];
      for (Eigen::Index j = 0; j < p; ++j) ch.draws(r, j) = row[static_cast<std::size_t>(j)];
      ch.lp[r] = row[static_cast<std::size_t>(p)];
      const bool div = row[static_cast<std::size_t>(p) + 1] != 0.0;
      ch.divergent[static_cast<std::size_t>(r)] = div ? 1 : 0;
      ch.n_divergences += div ? 1 : 0;
    }
    const json diag = model.at("diagnostics");
    ch.step_size = diag.at("step_size")[static_cast<std::size_t>(c)].get<double>();
    ch.accept_rate = diag.at("accept_rate")[static_cast<std::size_t>(c)].get<double>();
    fit.draws.chains.push_back(std::move(ch));
  }
  fit.draws.rhat = split_rhat(fit.draws.chains);
  fit.draws.ess = effective_sample_size(fit.draws.chains);
  return fit;
}

void write_schema_json(const std::string& path, const CohortSchema& schema) {
  write_json(path, schema_to_json(schema));
}

CohortSchema read_schema_json(const std::string& path) { return schema_from_json(read_json(path)); }

void write_truth(const std::string& path, const SimulationTruth& truth) {
  const MeasurementParams& m = truth.params.measurement;
  const StructuralParams& s = truth.params.structural;
  json types = json::array();
  for (MarkerType t : truth.marker_types) types.push_back(marker_type_name(t));
  json j;
  j["measurement"] = json{{"beta", mat_to_json(m.beta)},     {"gamma1", vec_to_json(m.gamma1)},
                          {"gamma2", vec_to_json(m.gamma2)}, {"gamma3", vec_to_json(m.gamma3)},
                          {"mu_type", vec_to_json(m.mu_type)}, {"sigma", mat_to_json(m.sigma)}};
  j["structural"] = json{{"alpha", vec_to_json(s.alpha)},
                         {"alpha0", vec_to_json(s.alpha0)},
                         {"rho", vec_to_json(s.rho)},
                         {"lambda", vec_to_json(s.lambda)}};
  j["marker_types"] = types;
  const SimulationDesign& d = truth.design;
  j["design"] = json{{"n_subjects", d.n_subjects},
                     {"n_visits", d.n_visits},
                     {"visit_spacing_years", d.visit_spacing_years},
                     {"age_pool", d.age_pool},
                     {"age_mean", d.age_mean},
                     {"age_sd", d.age_sd},
                     {"age_lo", d.age_lo},
                     {"age_hi", d.age_hi},
                     {"x1_prob", d.x1_prob},
                     {"censor", censor_to_json(d.censor)},
                     {"standardize_markers", d.standardize_markers}};
  write_json(path, j);
}

SimulationTruth read_truth(const std::string& path) {
  const json j = read_json(path);
  SimulationTruth t;
  const json& m = j.at("measurement");
  t.params.measurement.beta = mat_from_json(m.at("beta"));
  t.params.measurement.gamma1 = vec_from_json(m.at("gamma1"));
  t.params.measurement.gamma2 = vec_from_json(m.at("gamma2"));
  t.params.measurement.gamma3 = vec_from_json(m.at("gamma3"));
  t.params.measurement.mu_type = vec_from_json(m.at("mu_type"));
  t.params.measurement.sigma = mat_from_json(m.at("sigma"));
  const json& s = j.at("structural");
  t.params.structural.alpha = vec_from_json(s.at("alpha"));
  t.params.structural.alpha0 = vec_from_json(s.at("alpha0"));
  t.params.structural.rho = vec_from_json(s.at("rho"));
  t.params.structural.lambda = vec_from_json(s.at("lambda"));
  for (const auto& e : j.at("marker_types"))
    t.marker_types.push_back(parse_marker_type(e.get<std::string>()));
  const json& d = j.at("design");
  t.design.n_subjects = d.at("n_subjects").get<int>();
  t.design.n_visits = d.at("n_visits").get<int>();
  t.design.visit_spacing_years = d.at("visit_spacing_years").get<double>();
  t.design.age_pool = d.at("age_pool").get<std::vector<double>>();
  t.design.age_mean = d.at("age_mean").get<double>();
  t.design.age_sd = d.at("age_sd").get<double>();
  t.design.age_lo = d.at("age_lo").get<double>();
  t.design.age_hi = d.at("age_hi").get<double>();
  t.design.x1_prob = d.at("x1_prob").get<double>();
  t.design.censor = censor_from_json(d.at("censor"));
  t.design.standardize_markers = d.at("standardize_markers").get<bool>();
  return t;
}

void write_scores_csv(const std::string& path, const std::vector<ModelScore>& scores,
                      int selected_L) {
  auto out = open_out(path);
  out << "L,map_log_posterior,dim_psi,bic,selected\n";
  for (const auto& s : scores)
    out << s.L << ',' << format_g17(s.map_log_posterior) << ',' << s.dim_psi << ','
        << format_g17(s.bic) << ',' << (s.L == selected_L ? 1 : 0) << '\n';
  finish(out, path);
}

void write_membership_csv(const std::string& path, const MembershipTable& table) {
  auto out = open_out(path);
  out << "subject_id,assignment,cluster,prob_mean,prob_lo,prob_hi\n";
  for (std::size_t i = 0; i < table.ids.size(); ++i) {
    for (Eigen::Index l = 0; l < table.mean.cols(); ++l) {
      const auto r = static_cast<Eigen::Index>(i);
      out << table.ids[i] << ',' << table.assignment[i] + 1 << ',' << l + 1 << ','
          << format_g17(table.mean(r, l)) << ',' << format_g17(table.lo(r, l)) << ','
          << format_g17(table.hi(r, l)) << '\n';
    }
  }
  finish(out, path);
}

void write_resilience_csv(const std::string& path, const ResilienceSummary& summary) {
  auto out = open_out(path);
  out << "cluster,mean,lo,hi,units,alpha_t_unstable\n";
  const char* units = summary.in_years ? "years" : "standardized";
  for (std::size_t i = 0; i < summary.clusters.size(); ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    out << summary.clusters[i] << ',' << format_g17(summary.mean[r]) << ','
        << format_g17(summary.lo[r]) << ',' << format_g17(summary.hi[r]) << ',' << units << ','
        << (summary.alpha_t_unstable ? 1 : 0) << '\n';
  }
  finish(out, path);
}

namespace {

double to_raw_marker(double v, int k, const Standardization& st) {
  return st.markers_standardized ? v * st.marker_sd[k] + st.marker_mean[k] : v;
}

double to_raw_age(double t, const Standardization& st) { return t * st.age_sd + st.age_mean; }

}  // namespace

void write_trajectory_csv(const std::string& path, const std::string& subject_id,
                          const TrajectorySummary& summary, const CohortSchema& schema,
                          const Standardization& std_info) {
  auto out = open_out(path);
  out << "subject_id,age,marker,mean,lo,hi\n";
  for (Eigen::Index t = 0; t < summary.times.size(); ++t) {
    for (Eigen::Index k = 0; k < summary.mean.cols(); ++k) {
      out << subject_id << ',' << format_g17(to_raw_age(summary.times[t], std_info)) << ','
          << schema.marker_cols[static_cast<std::size_t>(k)] << ','
          << format_g17(to_raw_marker(summary.mean(t, k), static_cast<int>(k), std_info)) << ','
          << format_g17(to_raw_marker(summary.lo(t, k), static_cast<int>(k), std_info)) << ','
          << format_g17(to_raw_marker(summary.hi(t, k), static_cast<int>(k), std_info)) << '\n';
    }
  }
  finish(out, path);
}

void write_trajectory_draws_csv(const std::string& path, const std::string& subject_id,
                                const TrajectoryDraws& draws, const CohortSchema& schema,
                                const Standardization& std_info) {
  auto out = open_out(path);
  out << "subject_id,draw,cluster,age,marker,value\n";
  for (std::size_t r = 0; r < draws.y.size(); ++r) {
    for (Eigen::Index t = 0; t < draws.times.size(); ++t) {
      for (Eigen::Index k = 0; k < draws.y[r].cols(); ++k) {
        out << subject_id << ',' << r + 1 << ',' << draws.cluster[r] + 1 << ','
            << format_g17(to_raw_age(draws.times[t], std_info)) << ','
            << schema.marker_cols[static_cast<std::size_t>(k)] << ','
            << format_g17(to_raw_marker(draws.y[r](t, k), static_cast<int>(k), std_info)) << '\n';
      }
    }
  }
  finish(out, path);
}

void write_evaluation_csv(const std::string& path, const PredictiveSummary& summary) {
  auto out = open_out(path);
  out << "age_lo,age_hi,n,mae,coverage\n";
  for (Eigen::Index b = 0; b < summary.bin_lo.size(); ++b)
    out << format_g17(summary.bin_lo[b]) << ',' << format_g17(summary.bin_hi[b]) << ','
        << summary.bin_n[b] << ',' << format_g17(summary.mae[b]) << ','
        << format_g17(summary.coverage[b]) << '\n';
  out << "overall,," << summary.n_predictions << ',' << format_g17(summary.overall_mae) << ','
      << format_g17(summary.overall_coverage) << '\n';
  finish(out, path);
}

void write_prediction_records_csv(const std::string& path, const PredictiveSummary& summary,
                                  const CohortSchema& schema) {
  auto out = open_out(path);
  out << "subject_id,age,marker,observed,mean,lo,hi,covered\n";
  for (const auto& r : summary.records)
    out << r.id << ',' << format_g17(r.age) << ','
        << schema.marker_cols[static_cast<std::size_t>(r.marker)] << ','
        << format_g17(r.observed) << ',' << format_g17(r.mean) << ',' << format_g17(r.lo) << ','
        << format_g17(r.hi) << ',' << (r.covered ? 1 : 0) << '\n';
  finish(out, path);
}

void write_cluster_trajectory_csv(const std::string& path, const std::string& subject_id,
                                  const ClusterTrajectory& trajectory) {
  auto out = open_out(path);
  out << "subject_id,history_len,cluster,prob_mean,prob_lo,prob_hi\n";
  for (std::size_t ji = 0; ji < trajectory.history_len.size(); ++ji) {
    const Eigen::MatrixXd& p = trajectory.probs[ji];
    for (Eigen::Index l = 0; l < p.cols(); ++l) {
      std::vector<double> col(static_cast<std::size_t>(p.rows()));
      double mean = 0.0;
      for (Eigen::Index d = 0; d < p.rows(); ++d) {
        col[static_cast<std::size_t>(d)] = p(d, l);
        mean += p(d, l);
      }
      mean /= static_cast<double>(p.rows());
      out << subject_id << ',' << trajectory.history_len[ji] << ',' << l + 1 << ','
          << format_g17(mean) << ',' << format_g17(empirical_quantile(col, 0.025)) << ','
          << format_g17(empirical_quantile(col, 0.975)) << '\n';
    }
  }
  finish(out, path);
}

void write_replicate_bic_csv(const std::string& path, const ReplicateReport& report) {
  auto out = open_out(path);
  out << "replicate,L,bic,selected_L\n";
  for (Eigen::Index r = 0; r < report.bic.rows(); ++r)
    for (std::size_t li = 0; li < report.L_list.size(); ++li)
      out << r + 1 << ',' << report.L_list[li] << ','
          << format_g17(report.bic(r, static_cast<Eigen::Index>(li))) << ','
          << report.selected_L[static_cast<std::size_t>(r)] << '\n';
  finish(out, path);
}

void write_recovery_csv(const std::string& path, const ReplicateReport& report) {
  auto out = open_out(path);
  out << "parameter,truth,mse,coverage,n_replicates\n";
  for (const auto& rec : report.recovery)
    out << rec.name << ',' << format_g17(rec.truth) << ',' << format_g17(rec.mse) << ','
        << format_g17(rec.coverage) << ',' << rec.n_replicates << '\n';
  finish(out, path);
}

}  // namespace ldmix
