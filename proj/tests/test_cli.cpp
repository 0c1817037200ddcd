#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

namespace fs = std::filesystem;

namespace {

std::string bin() {
  const char* b = std::getenv("PANELDID_BIN");
  REQUIRE_MESSAGE(b != nullptr, "PANELDID_BIN must point at the CLI binary");
  return b;
}

int run(const std::string& args) {
  std::string cmd = bin() + " " + args + " >/dev/null 2>&1";
  int rc = std::system(cmd.c_str());
  return WEXITSTATUS(rc);
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE_MESSAGE(in.good(), "missing file: " << p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::size_t line_count(const fs::path& p) {
  std::ifstream in(p);
  std::size_t n = 0;
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) ++n;
  return n;
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    path = fs::temp_directory_path() / ("paneldid_cli_" + tag);
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

void write_small_dgp(const fs::path& p, int n_units = 700, unsigned seed = 11) {
  std::ofstream out(p);
  out << R"({
  "n_units": )" << n_units << R"(,
  "n_months": 60,
  "never_share": 0.4,
  "cohort_lo": 14,
  "cohort_hi": 40,
  "baseline": 0.02,
  "dip": [[-9, 1.0], [0, 0.4], [12, 1.0]],
  "effect": [[6, 0.0], [24, 0.01]],
  "persistence": 0.5,
  "psy_rate": 0.05,
  "gp_rate": 0.05,
  "seed": )" << seed << R"(
})";
}

}  // namespace

TEST_CASE("cli: simulate writes the full artifact set with matching shapes") {
  TempDir tmp("sim");
  auto cfg = tmp.path / "dgp.json";
  write_small_dgp(cfg);
  REQUIRE(run("simulate --config " + cfg.string() + " --out " + (tmp.path / "o").string()) == 0);
  CHECK(fs::exists(tmp.path / "o" / "claims.csv"));
  CHECK(fs::exists(tmp.path / "o" / "units.csv"));
  CHECK(fs::exists(tmp.path / "o" / "truth.json"));
  // header + one row per unit-month
  CHECK(line_count(tmp.path / "o" / "panel.csv") == 1 + 700 * 60);
  CHECK(line_count(tmp.path / "o" / "units.csv") == 1 + 700);

  auto truth = slurp(tmp.path / "o" / "truth.json");
  CHECK(truth.find("\"theta\"") != std::string::npos);
  CHECK(truth.find("\"config\"") != std::string::npos);
}

TEST_CASE("cli: simulate/estimate reruns are byte-identical under one seed") {
  TempDir tmp("det");
  auto cfg = tmp.path / "dgp.json";
  write_small_dgp(cfg);
  for (const char* dir : {"a", "b"})
    REQUIRE(run("simulate --config " + cfg.string() + " --out " + (tmp.path / dir).string()) == 0);
  CHECK(slurp(tmp.path / "a" / "claims.csv") == slurp(tmp.path / "b" / "claims.csv"));
  CHECK(slurp(tmp.path / "a" / "units.csv") == slurp(tmp.path / "b" / "units.csv"));
  CHECK(slurp(tmp.path / "a" / "panel.csv") == slurp(tmp.path / "b" / "panel.csv"));
  CHECK(slurp(tmp.path / "a" / "truth.json") == slurp(tmp.path / "b" / "truth.json"));

  std::string est_args = " --delta 9 --t-min -12 --t-max 12 --draws 299"
                         " --include-never-treated --ps-degree 0 --or-degree 0"
                         " --claims " + (tmp.path / "a" / "claims.csv").string() +
                         " --units " + (tmp.path / "a" / "units.csv").string();
  for (const char* dir : {"e1", "e2"})
    REQUIRE(run("estimate" + est_args + " --seed 4 --out " + (tmp.path / dir).string()) == 0);
  CHECK(slurp(tmp.path / "e1" / "event_study.csv") == slurp(tmp.path / "e2" / "event_study.csv"));

  SUBCASE("different bootstrap seed changes the bands") {
    REQUIRE(run("estimate" + est_args + " --seed 5 --out " + (tmp.path / "e3").string()) == 0);
    CHECK(slurp(tmp.path / "e1" / "event_study.csv") != slurp(tmp.path / "e3" / "event_study.csv"));
  }
}

TEST_CASE("cli: estimate output schema and filter accounting") {
  TempDir tmp("est");
  auto cfg = tmp.path / "dgp.json";
  write_small_dgp(cfg, 900, 21);
  REQUIRE(run("simulate --config " + cfg.string() + " --out " + (tmp.path / "o").string()) == 0);
  std::string common = " --claims " + (tmp.path / "o" / "claims.csv").string() +
                       " --units " + (tmp.path / "o" / "units.csv").string() +
                       " --delta 9 --t-min -12 --t-max 12 --draws 299"
                       " --include-never-treated --ps-degree 0 --or-degree 0 --seed 3";
  REQUIRE(run("estimate" + common + " --out " + (tmp.path / "full").string()) == 0);
  {
    std::ifstream in(tmp.path / "full" / "event_study.csv");
    std::string header;
    std::getline(in, header);
    CHECK(header == "event_time,estimate,se,uniform_lo,uniform_hi,n_cells");
  }
  auto report = slurp(tmp.path / "full" / "report.json");
  CHECK(report.find("\"version\"") != std::string::npos);
  CHECK(report.find("\"timings_ms\"") != std::string::npos);
  CHECK(report.find("\"skipped_cells\"") != std::string::npos);

  REQUIRE(run("estimate" + common + " --filter employed=true --out " +
              (tmp.path / "sub").string()) == 0);
  auto sub_report = slurp(tmp.path / "sub" / "report.json");
  CHECK(sub_report.find("\"filter\": \"employed=true\"") != std::string::npos);
  // subgroup panel is strictly smaller
  auto count_units = [&](const std::string& rep) {
    auto pos = rep.find("\"n_units\": ");
    REQUIRE(pos != std::string::npos);
    return std::stoi(rep.substr(pos + 11));
  };
  CHECK(count_units(sub_report) < count_units(report));
  CHECK(count_units(sub_report) > 0);
}

TEST_CASE("cli: dml subcommand with placebo and window blocks") {
  TempDir tmp("dml");
  auto cfg = tmp.path / "dgp.json";
  // births concentrated so the reform windows are populated
  {
    std::ofstream out(cfg);
    out << R"({
  "n_units": 1600, "n_months": 84, "never_share": 0.1,
  "cohort_lo": 24, "cohort_hi": 70, "baseline": 0.03,
  "dip": [[0, 1.0]], "effect": [[0, 0.0]],
  "persistence": 0.4, "psy_rate": 0.0, "gp_rate": 0.0, "seed": 31
})";
  }
  REQUIRE(run("simulate --config " + cfg.string() + " --out " + (tmp.path / "o").string()) == 0);
  std::string common = " --claims " + (tmp.path / "o" / "claims.csv").string() +
                       " --units " + (tmp.path / "o" / "units.csv").string() +
                       " --window 3 --folds 4 --trees 40"
                       " --g-learner logit --l-learner ols --seed 2";
  std::string blocks = " --placebo 3 --placebo 6 --shrink 1 --linear";
  REQUIRE(run("dml" + common + " --reform-month 54" + blocks + " --out " +
              (tmp.path / "r").string()) == 0);
  auto atet = slurp(tmp.path / "r" / "atet.json");
  CHECK(atet.find("\"main\"") != std::string::npos);
  CHECK(atet.find("\"placebo_3\"") != std::string::npos);
  CHECK(atet.find("\"placebo_6\"") != std::string::npos);
  CHECK(atet.find("\"window_1\"") != std::string::npos);
  CHECK(atet.find("\"linear\"") != std::string::npos);
  CHECK(atet.find("\"score_mean\"") != std::string::npos);

  SUBCASE("reform date outside the window names the empty cell") {
    int rc = run("dml" + common + " --reform-month 6 --out " + (tmp.path / "x").string());
    CHECK(rc == 3);
  }
  SUBCASE("deterministic rerun") {
    REQUIRE(run("dml" + common + " --reform-month 54" + blocks + " --out " +
                (tmp.path / "r2").string()) == 0);
    CHECK(slurp(tmp.path / "r" / "atet.json") == slurp(tmp.path / "r2" / "atet.json"));
  }
}

TEST_CASE("cli: exit codes") {
  TempDir tmp("codes");
  CHECK(run("estimate --claims /nonexistent.csv --units /nonexistent.csv --seed 1") == 3);
  // bad filter expression is a config error
  auto cfg = tmp.path / "dgp.json";
  write_small_dgp(cfg, 200, 5);
  REQUIRE(run("simulate --config " + cfg.string() + " --out " + (tmp.path / "o").string()) == 0);
  CHECK(run("estimate --claims " + (tmp.path / "o" / "claims.csv").string() +
            " --units " + (tmp.path / "o" / "units.csv").string() +
            " --filter bogus=1 --seed 1") == 2);
  CHECK(run("simulate --out " + (tmp.path / "noseed").string()) == 2);
}

TEST_CASE("cli: PANELDID_SEED environment override wins") {
  TempDir tmp("env");
  auto cfg = tmp.path / "dgp.json";
  write_small_dgp(cfg, 300, 9);
  std::string base = bin() + " simulate --config " + cfg.string();
  REQUIRE(std::system(("PANELDID_SEED=42 " + base + " --out " + (tmp.path / "a").string() +
                       " >/dev/null 2>&1").c_str()) == 0);
  REQUIRE(std::system(("PANELDID_SEED=42 " + base + " --seed 7 --out " + (tmp.path / "b").string() +
                       " >/dev/null 2>&1").c_str()) == 0);
  CHECK(slurp(tmp.path / "a" / "claims.csv") == slurp(tmp.path / "b" / "claims.csv"));
}
