#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "paneldid/csv.hpp"
#include "paneldid/dml.hpp"
#include "paneldid/errors.hpp"
#include "paneldid/pipeline.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace paneldid;

namespace {

#ifndef PANELDID_VERSION
#define PANELDID_VERSION "0.1.0"
#endif

class StageTimer {
 public:
  void start(const std::string& name) {
    name_ = name;
    t0_ = std::chrono::steady_clock::now();
  }
  void stop() {
    auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                  std::chrono::steady_clock::now() - t0_)
                  .count();
    timings_[name_] = static_cast<double>(ms);
  }
  json to_json() const { return timings_; }

 private:
  std::string name_;
  std::chrono::steady_clock::time_point t0_;
  json timings_ = json::object();
};

std::uint64_t resolve_seed(std::uint64_t flag_seed) {
  if (const char* env = std::getenv("PANELDID_SEED")) return std::stoull(env);
  return flag_seed;
}

PiecewiseProfile profile_from_json(const json& j) {
  PiecewiseProfile p;
  for (const auto& knot : j) p.knots.emplace_back(knot.at(0).get<int>(), knot.at(1).get<double>());
  return p;
}

json profile_to_json(const PiecewiseProfile& p) {
  json j = json::array();
  for (auto [t, v] : p.knots) j.push_back(json::array({t, v}));
  return j;
}

DgpConfig dgp_from_json(const json& j) {
  DgpConfig c;
  c.n_units = j.value("n_units", c.n_units);
  c.n_months = j.value("n_months", c.n_months);
  c.never_share = j.value("never_share", c.never_share);
  c.cohort_lo = j.value("cohort_lo", c.cohort_lo);
  c.cohort_hi = j.value("cohort_hi", c.cohort_hi);
  c.baseline = j.value("baseline", c.baseline);
  if (j.contains("dip")) c.dip = profile_from_json(j["dip"]);
  if (j.contains("effect")) c.effect.profile = profile_from_json(j["effect"]);
  c.covar_level = j.value("covar_level", c.covar_level);
  c.covar_trend = j.value("covar_trend", c.covar_trend);
  c.covar_timing = j.value("covar_timing", c.covar_timing);
  c.calendar_trend = j.value("calendar_trend", c.calendar_trend);
  c.persistence = j.value("persistence", c.persistence);
  c.psy_rate = j.value("psy_rate", c.psy_rate);
  c.gp_rate = j.value("gp_rate", c.gp_rate);
  c.age_log_mean = j.value("age_log_mean", c.age_log_mean);
  c.age_log_sd = j.value("age_log_sd", c.age_log_sd);
  c.violate_trends = j.value("violate_trends", c.violate_trends);
  if (j.contains("reform")) {
    ReformEffect r;
    r.reform_month = j["reform"].value("reform_month", 0);
    r.monthly_delta = j["reform"].value("monthly_delta", 0.0);
    c.reform = r;
  }
  c.seed = j.value("seed", c.seed);
  return c;
}

json dgp_to_json(const DgpConfig& c) {
  json j;
  j["n_units"] = c.n_units;
  j["n_months"] = c.n_months;
  j["never_share"] = c.never_share;
  j["cohort_lo"] = c.cohort_lo;
  j["cohort_hi"] = c.cohort_hi;
  j["baseline"] = c.baseline;
  j["dip"] = profile_to_json(c.dip);
  j["effect"] = profile_to_json(c.effect.profile);
  j["covar_level"] = c.covar_level;
  j["covar_trend"] = c.covar_trend;
  j["covar_timing"] = c.covar_timing;
  j["calendar_trend"] = c.calendar_trend;
  j["persistence"] = c.persistence;
  j["psy_rate"] = c.psy_rate;
  j["gp_rate"] = c.gp_rate;
  j["age_log_mean"] = c.age_log_mean;
  j["age_log_sd"] = c.age_log_sd;
  j["violate_trends"] = c.violate_trends;
  if (c.reform) {
    j["reform"] = {{"reform_month", c.reform->reform_month},
                   {"monthly_delta", c.reform->monthly_delta}};
  }
  j["seed"] = c.seed;
  return j;
}

DgpConfig load_dgp(const std::string& path) {
  if (path.empty()) return DgpConfig{};
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open DGP config " + path);
  json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw ConfigError("bad DGP config " + path + ": " + e.what());
  }
  return dgp_from_json(j);
}

struct FilterSpec {
  std::string field;
  bool value = true;
};

std::optional<FilterSpec> parse_filter(const std::string& expr) {
  if (expr.empty()) return std::nullopt;
  auto eq = expr.find('=');
  if (eq == std::string::npos) throw ConfigError("filter must look like field=true");
  FilterSpec f;
  f.field = expr.substr(0, eq);
  std::string v = expr.substr(eq + 1);
  if (v == "true" || v == "1") f.value = true;
  else if (v == "false" || v == "0") f.value = false;
  else throw ConfigError("filter value must be true/false");
  if (f.field != "employed" && f.field != "subsidy" && f.field != "cesarean")
    throw ConfigError("unknown filter field '" + f.field + "'");
  return f;
}

std::vector<UnitMeta> apply_filter(std::vector<UnitMeta> units, const FilterSpec& f) {
  std::vector<UnitMeta> out;
  for (auto& u : units) {
    bool v = f.field == "employed" ? u.employed_at_birth
             : f.field == "subsidy" ? u.subsidy
                                    : u.cesarean;
    if (v == f.value) out.push_back(std::move(u));
  }
  return out;
}

void write_json(const fs::path& path, const json& j) { atomic_write(path, j.dump(2) + "\n"); }

json skip_report(const std::vector<CellSkip>& skipped) {
  json arr = json::array();
  for (const auto& s : skipped)
    arr.push_back({{"g", s.g}, {"tau", s.tau}, {"reason", s.reason}});
  return arr;
}

json atet_to_json(const AtetResult& r) {
  json j;
  j["theta"] = r.theta;
  j["se"] = r.se;
  j["ci95"] = json::array({r.ci_lo, r.ci_hi});
  j["n"] = r.n_used;
  j["n_trimmed"] = r.n_trimmed;
  j["score_mean"] = r.score_mean;
  json folds = json::array();
  for (const auto& f : r.folds)
    folds.push_back({{"fold", f.fold},
                     {"n_train", f.n_train},
                     {"n_test", f.n_test},
                     {"n_trimmed", f.n_trimmed},
                     {"g_min", f.g_min},
                     {"g_max", f.g_max}});
  j["fold_diagnostics"] = folds;
  return j;
}

int cmd_simulate(const std::string& config_path, const std::string& out_dir,
                 std::uint64_t seed) {
  DgpConfig cfg = load_dgp(config_path);
  cfg.seed = resolve_seed(seed ? seed : cfg.seed);
  StageTimer timer;

  timer.start("simulate");
  Panel panel = simulate_panel(cfg);
  timer.stop();

  fs::create_directories(out_dir);
  timer.start("write");
  auto claims = emit_claims(panel);
  write_claims_csv(fs::path(out_dir) / "claims.csv", claims);
  write_units_csv(fs::path(out_dir) / "units.csv", panel.units());
  write_panel_csv(fs::path(out_dir) / "panel.csv", panel);

  json truth;
  truth["version"] = PANELDID_VERSION;
  truth["config"] = dgp_to_json(cfg);
  int t_lo = -cfg.n_months + 1, t_hi = cfg.n_months - 1;
  auto path = true_event_effects(cfg, t_lo, t_hi);
  truth["t_min"] = t_lo;
  truth["t_max"] = t_hi;
  truth["theta"] = path;
  write_json(fs::path(out_dir) / "truth.json", truth);
  timer.stop();
  std::cout << "wrote claims.csv, units.csv, panel.csv, truth.json to " << out_dir << "\n";
  return 0;
}

int cmd_estimate(const std::string& claims_path, const std::string& units_path,
                 const std::string& out_dir, const EstimateConfig& base,
                 bool balanced, const std::string& filter_expr, std::uint64_t seed) {
  EstimateConfig cfg = base;
  cfg.boot.seed = resolve_seed(seed);
  StageTimer timer;

  timer.start("load");
  auto claims = read_claims_csv(claims_path);
  auto units = read_units_csv(units_path);
  timer.stop();

  auto filter = parse_filter(filter_expr);
  if (filter) units = apply_filter(std::move(units), *filter);
  if (units.empty()) throw DataError("no units left after filtering");

  int lo = 0, hi = 0;
  bool first = true;
  for (const auto& c : claims) {
    lo = first ? c.calendar_month : std::min(lo, c.calendar_month);
    hi = first ? c.calendar_month : std::max(hi, c.calendar_month);
    first = false;
  }
  for (const auto& u : units)
    if (u.first_child_month) {
      lo = first ? *u.first_child_month : std::min(lo, *u.first_child_month);
      hi = first ? *u.first_child_month : std::max(hi, *u.first_child_month);
      first = false;
    }
  if (first) throw DataError("cannot infer a window from empty inputs");

  timer.start("build_panel");
  BuildDiagnostics bdiag;
  Panel panel = build_panel(claims, std::move(units), lo, hi, balanced, &bdiag);
  timer.stop();

  timer.start("estimate");
  EstimateResult res = estimate_event_study(panel, cfg);
  timer.stop();

  fs::create_directories(out_dir);
  timer.start("write");
  write_event_study_csv((fs::path(out_dir) / "event_study.csv").string(), res.curve);

  json report;
  report["version"] = PANELDID_VERSION;
  report["config"] = {{"delta", cfg.did.delta},
                      {"t_min", cfg.t_min},
                      {"t_max", cfg.t_max},
                      {"min_cell_size", cfg.did.min_cell_size},
                      {"trim_eps", cfg.did.trim_eps},
                      {"include_never_treated", cfg.did.include_never_treated},
                      {"ps_degree", cfg.did.ps_degree},
                      {"or_degree", cfg.did.or_degree},
                      {"n_draws", cfg.boot.n_draws},
                      {"level", cfg.boot.level},
                      {"multiplier", cfg.boot.multiplier == Multiplier::rademacher
                                         ? "rademacher"
                                         : "mammen"},
                      {"balanced", balanced},
                      {"filter", filter_expr},
                      {"seed", cfg.boot.seed}};
  report["n_units"] = panel.n_units();
  report["window"] = json::array({panel.month_lo(), panel.month_hi()});
  report["n_cells"] = res.n_cells;
  report["critical_value"] = res.band.critical_value;
  report["skipped_cells"] = skip_report(res.skipped);
  json rej = json::array();
  for (const auto& r : bdiag.rejected_units) rej.push_back(r);
  report["rejected_units"] = rej;
  report["dropped_unbalanced"] = bdiag.dropped_unbalanced;
  report["timings_ms"] = timer.to_json();
  write_json(fs::path(out_dir) / "report.json", report);
  timer.stop();
  std::cout << "wrote event_study.csv, report.json to " << out_dir << "\n";
  return 0;
}

int cmd_dml(const std::string& claims_path, const std::string& units_path,
            const std::string& out_dir, ReformDesign design, DmlConfig dml_cfg,
            const std::vector<int>& placebos, const std::vector<int>& windows,
            bool run_linear, std::uint64_t seed) {
  dml_cfg.seed = resolve_seed(seed);
  StageTimer timer;

  timer.start("load");
  auto claims = read_claims_csv(claims_path);
  auto units = read_units_csv(units_path);
  timer.stop();

  int lo = 0, hi = 0;
  bool first = true;
  for (const auto& c : claims) {
    lo = first ? c.calendar_month : std::min(lo, c.calendar_month);
    hi = first ? c.calendar_month : std::max(hi, c.calendar_month);
    first = false;
  }
  if (first) throw DataError("no claims");

  timer.start("build_panel");
  Panel panel = build_panel(claims, std::move(units), lo, hi, false, nullptr);
  timer.stop();

  json out;
  out["version"] = PANELDID_VERSION;
  out["config"] = {{"reform_month", design.reform_month},
                   {"window_months", design.window_months},
                   {"outcome_year", design.outcome_year},
                   {"k_folds", dml_cfg.k_folds},
                   {"trim_eps", dml_cfg.trim_eps},
                   {"g_learner", dml_cfg.g_learner == GLearner::forest ? "forest" : "logit"},
                   {"l_learner", dml_cfg.l_learner == LLearner::forest ? "forest" : "ols"},
                   {"n_trees", dml_cfg.forest.n_trees},
                   {"max_depth", dml_cfg.forest.max_depth},
                   {"min_leaf", dml_cfg.forest.min_leaf},
                   {"seed", dml_cfg.seed}};

  timer.start("main");
  DidSampleBuild build = build_did_sample(panel, design);
  out["cells"] = {{"n11", build.n11}, {"n10", build.n10}, {"n01", build.n01}, {"n00", build.n00}};
  out["main"] = atet_to_json(dml_atet(build.sample, dml_cfg));
  timer.stop();

  for (int s : placebos) {
    timer.start("placebo_" + std::to_string(s));
    out["placebo_" + std::to_string(s)] = atet_to_json(placebo_reform(panel, design, s, dml_cfg));
    timer.stop();
  }
  for (int w : windows) {
    timer.start("window_" + std::to_string(w));
    out["window_" + std::to_string(w)] = atet_to_json(shrink_window(panel, design, w, dml_cfg));
    timer.stop();
  }
  if (run_linear) {
    timer.start("linear");
    LinearDidResult lin = linear_did(build.sample);
    json lj;
    lj["did_estimate"] = lin.did_estimate;
    lj["did_se"] = lin.did_se;
    lj["n"] = lin.n;
    json coefs = json::object();
    for (std::size_t i = 0; i < lin.names.size(); ++i)
      coefs[lin.names[i]] = json::array(
          {lin.coef[static_cast<Eigen::Index>(i)], lin.robust_se[static_cast<Eigen::Index>(i)]});
    lj["coefficients"] = coefs;
    json dropped = json::array();
    for (const auto& s : lin.dropped) dropped.push_back(s);
    lj["dropped"] = dropped;
    out["linear"] = lj;
    timer.stop();
  }
  fs::create_directories(out_dir);
  write_json(fs::path(out_dir) / "atet.json", out);
  std::cout << "wrote atet.json to " << out_dir << "\n";
  return 0;
}

int cmd_coverage(const std::string& config_path, const std::string& out_dir,
                 EstimateConfig est, int n_reps, std::uint64_t seed) {
  DgpConfig dgp = load_dgp(config_path);
  seed = resolve_seed(seed);
  StageTimer timer;
  timer.start("coverage");
  CoverageReport rep = coverage_study(dgp, est, n_reps, seed);
  timer.stop();

  json j;
  j["version"] = PANELDID_VERSION;
  j["config"] = dgp_to_json(dgp);
  j["n_reps"] = rep.n_reps;
  j["n_failed"] = rep.n_failed;
  j["uniform_coverage"] = rep.uniform_coverage;
  j["uniform_mc_se"] = rep.uniform_mc_se;
  j["event_times"] = rep.event_times;
  j["pointwise_coverage"] = rep.pointwise_coverage;
  j["bias"] = rep.bias;
  j["timings_ms"] = timer.to_json();
  fs::create_directories(out_dir);
  write_json(fs::path(out_dir) / "coverage.json", j);
  std::cout << "wrote coverage.json to " << out_dir << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Staggered doubly robust difference-in-differences on claims panels"};
  app.require_subcommand(1);

  // simulate
  auto* sim = app.add_subcommand("simulate", "Generate a synthetic claims panel with known effects");
  std::string sim_config, sim_out = "out";
  std::uint64_t sim_seed = 0;
  sim->add_option("--config", sim_config, "DGP config JSON (defaults when omitted)");
  sim->add_option("--out", sim_out, "output directory");
  sim->add_option("--seed", sim_seed, "RNG seed (required unless set in config/env)");

  // estimate
  auto* est = app.add_subcommand("estimate", "Event-study estimation from claims.csv + units.csv");
  std::string est_claims, est_units, est_out = "out", est_filter;
  EstimateConfig est_cfg;
  bool est_balanced = false;
  bool est_include_never = false;
  std::uint64_t est_seed = 0;
  std::string est_multiplier = "rademacher";
  est->add_option("--claims", est_claims, "claims.csv")->required();
  est->add_option("--units", est_units, "units.csv")->required();
  est->add_option("--out", est_out, "output directory");
  est->add_option("--delta", est_cfg.did.delta, "anticipation months (default 9)");
  est->add_option("--t-min", est_cfg.t_min, "event-window lower bound");
  est->add_option("--t-max", est_cfg.t_max, "event-window upper bound");
  est->add_option("--min-cell", est_cfg.did.min_cell_size, "minimum treated/control per cell");
  est->add_option("--trim", est_cfg.did.trim_eps, "overlap trim on the propensity");
  est->add_flag("--include-never-treated", est_include_never,
                "admit never-treated units to control pools");
  est->add_option("--ps-degree", est_cfg.did.ps_degree, "propensity polynomial degree in age");
  est->add_option("--or-degree", est_cfg.did.or_degree, "outcome-regression degree in age");
  est->add_option("--draws", est_cfg.boot.n_draws, "bootstrap draws (default 999)");
  est->add_option("--level", est_cfg.boot.level, "band coverage level (default 0.95)");
  est->add_option("--multiplier", est_multiplier, "rademacher|mammen");
  est->add_flag("--balanced", est_balanced, "drop units not observed over the whole window");
  est->add_option("--filter", est_filter, "subgroup filter, e.g. employed=true");
  est->add_option("--seed", est_seed, "RNG seed for the bootstrap");

  // dml
  auto* dml = app.add_subcommand("dml", "Two-period ITT DiD with cross-fitted ML nuisances");
  std::string dml_claims, dml_units, dml_out = "out";
  ReformDesign design;
  DmlConfig dml_cfg;
  std::vector<int> placebos, windows;
  bool dml_linear = false;
  std::string dml_glearner = "forest", dml_llearner = "forest";
  std::uint64_t dml_seed = 0;
  dml->add_option("--claims", dml_claims, "claims.csv")->required();
  dml->add_option("--units", dml_units, "units.csv")->required();
  dml->add_option("--out", dml_out, "output directory");
  dml->add_option("--reform-month", design.reform_month, "first treated birth month")->required();
  dml->add_option("--window", design.window_months, "birth-window width in months (default 3)");
  dml->add_option("--outcome-year", design.outcome_year, "event year for the outcome (default 1)");
  dml->add_option("--folds", dml_cfg.k_folds, "cross-fitting folds (default 5)");
  dml->add_option("--trim", dml_cfg.trim_eps, "overlap trim on g-hat (default 0.02)");
  dml->add_option("--g-learner", dml_glearner, "forest|logit");
  dml->add_option("--l-learner", dml_llearner, "forest|ols");
  dml->add_option("--trees", dml_cfg.forest.n_trees, "forest size (default 1000)");
  dml->add_option("--max-depth", dml_cfg.forest.max_depth, "tree depth cap");
  dml->add_option("--min-leaf", dml_cfg.forest.min_leaf, "minimum leaf size");
  dml->add_option("--placebo", placebos, "placebo reform shifts in months, e.g. --placebo 3 6");
  dml->add_option("--shrink", windows, "extra window widths to re-estimate, e.g. --shrink 1");
  dml->add_flag("--linear", dml_linear, "also fit the linear reference specification");
  dml->add_option("--seed", dml_seed, "RNG seed");

  // coverage
  auto* cov = app.add_subcommand("coverage", "Monte Carlo band-coverage study");
  std::string cov_config, cov_out = "out";
  EstimateConfig cov_cfg;
  int cov_reps = 200;
  bool cov_include_never = false;
  std::uint64_t cov_seed = 0;
  cov->add_option("--config", cov_config, "DGP config JSON");
  cov->add_option("--out", cov_out, "output directory");
  cov->add_option("--reps", cov_reps, "replications (default 200)");
  cov->add_option("--delta", cov_cfg.did.delta, "anticipation months");
  cov->add_option("--t-min", cov_cfg.t_min, "event-window lower bound");
  cov->add_option("--t-max", cov_cfg.t_max, "event-window upper bound");
  cov->add_option("--draws", cov_cfg.boot.n_draws, "bootstrap draws");
  cov->add_flag("--include-never-treated", cov_include_never,
                "admit never-treated units to control pools");
  cov->add_option("--seed", cov_seed, "RNG seed");

  CLI11_PARSE(app, argc, argv);

  try {
    if (sim->parsed()) {
      if (!resolve_seed(sim_seed) && sim_config.empty())
        throw ConfigError("simulate needs --seed (or a config/env seed)");
      return cmd_simulate(sim_config, sim_out, sim_seed);
    }
    if (est->parsed()) {
      est_cfg.did.include_never_treated = est_include_never;
      if (est_multiplier == "mammen") est_cfg.boot.multiplier = Multiplier::mammen;
      else if (est_multiplier != "rademacher") throw ConfigError("unknown multiplier");
      return cmd_estimate(est_claims, est_units, est_out, est_cfg, est_balanced,
                          est_filter, est_seed);
    }
    if (dml->parsed()) {
      if (dml_glearner == "logit") dml_cfg.g_learner = GLearner::logit;
      else if (dml_glearner != "forest") throw ConfigError("unknown g-learner");
      if (dml_llearner == "ols") dml_cfg.l_learner = LLearner::ols;
      else if (dml_llearner != "forest") throw ConfigError("unknown l-learner");
      return cmd_dml(dml_claims, dml_units, dml_out, design, dml_cfg, placebos,
                     windows, dml_linear, dml_seed);
    }
    if (cov->parsed()) {
      cov_cfg.did.include_never_treated = cov_include_never;
      return cmd_coverage(cov_config, cov_out, cov_cfg, cov_reps, cov_seed);
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const EstimationError& e) {
    std::cerr << "estimation error: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
