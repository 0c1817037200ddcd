#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "paneldid/csv.hpp"
#include "paneldid/errors.hpp"
#include "paneldid/panel.hpp"
#include "support/smoothing_cases.hpp"

using namespace paneldid;

namespace {

std::vector<ClaimRecord> rx_claims(const std::vector<std::tuple<int, int, int>>& rows,
                                   const std::string& id = "u0") {
  std::vector<ClaimRecord> out;
  for (auto [m, packs, pills] : rows) out.push_back({id, m, ClaimKind::rx, packs, pills});
  std::sort(out.begin(), out.end(),
            [](const auto& a, const auto& b) { return a.calendar_month < b.calendar_month; });
  return out;
}

std::string to_string01(const std::vector<std::uint8_t>& s) {
  std::string out;
  for (auto v : s) out.push_back(v ? '1' : '0');
  return out;
}

UnitMeta make_unit(const std::string& id, int birth_year, std::optional<int> g) {
  UnitMeta u;
  u.unit_id = id;
  u.birth_year = birth_year;
  u.first_child_month = g;
  if (g) u.age_at_first_birth = age_from_birth(birth_year, *g);
  return u;
}

}  // namespace

TEST_CASE("smoothing: hand-derived rule table") {
  for (const auto& c : smoothing_cases()) {
    CAPTURE(c.name);
    auto got = smooth_prescriptions(rx_claims(c.claims), c.lo, c.hi);
    CHECK(to_string01(got) == c.expect);
  }
}

TEST_CASE("smoothing never clears a purchased month") {
  std::mt19937_64 eng(7);
  for (int rep = 0; rep < 200; ++rep) {
    std::uniform_int_distribution<int> n_claims(0, 6), month(0, 19), packs(1, 3), pills(10, 60);
    std::vector<std::tuple<int, int, int>> rows;
    int k = n_claims(eng);
    for (int i = 0; i < k; ++i) rows.emplace_back(month(eng), packs(eng), pills(eng));
    auto smoothed = smooth_prescriptions(rx_claims(rows), 0, 19);
    for (auto [m, p, q] : rows) CHECK(smoothed[m] == 1);
  }
}

TEST_CASE("gap-fill is idempotent") {
  std::mt19937_64 eng(11);
  std::bernoulli_distribution bit(0.35);
  for (int rep = 0; rep < 500; ++rep) {
    std::vector<std::uint8_t> s(24);
    for (auto& v : s) v = bit(eng) ? 1 : 0;
    auto once = fill_gaps(s);
    auto twice = fill_gaps(once);
    CHECK(once == twice);
    for (std::size_t i = 0; i < s.size(); ++i) CHECK(once[i] >= s[i]);
  }
}

TEST_CASE("build_panel: basics and balance") {
  SUBCASE("one unit, no claims, three months") {
    auto panel = build_panel({}, {make_unit("a", 1990, std::nullopt)}, 0, 2, false);
    REQUIRE(panel.n_units() == 1);
    CHECK(panel.n_observations() == 3);
    for (int m = 0; m <= 2; ++m) {
      CHECK(panel.rx(0, m) == 0.0);
      CHECK(panel.psy(0, m) == 0.0);
      CHECK(panel.gp(0, m) == 0.0);
    }
    CHECK(panel.group(0) == kNeverTreated);
    CHECK(!panel.event_time(0, 1).has_value());
  }

  SUBCASE("balanced drops partially observed units") {
    auto u1 = make_unit("a", 1990, std::nullopt);
    u1.obs_lo = 0;
    u1.obs_hi = 5;
    auto u2 = make_unit("b", 1990, std::nullopt);
    BuildDiagnostics diag;
    auto panel = build_panel({}, {u1, u2}, 0, 11, true, &diag);
    CHECK(panel.n_units() == 1);
    CHECK(panel.unit(0).unit_id == "b");
    CHECK(diag.dropped_unbalanced == 1);
    CHECK(panel.n_observations() == 12);
  }

  SUBCASE("visit claims aggregate by sum; event time assigned") {
    std::vector<ClaimRecord> claims = {
        {"a", 3, ClaimKind::psy, 0, 0},
        {"a", 3, ClaimKind::psy, 0, 0},
        {"a", 4, ClaimKind::gp, 0, 0},
    };
    auto panel = build_panel(claims, {make_unit("a", 1988, 30)}, 0, 40, false);
    CHECK(panel.psy(0, 3) == 2.0);
    CHECK(panel.gp(0, 4) == 1.0);
    CHECK(panel.group(0) == 30);
    CHECK(panel.event_time(0, 34).value() == 4);
    CHECK(panel.event_time(0, 20).value() == -10);
  }

  SUBCASE("contradictory metadata rejected with diagnostic") {
    auto bad = make_unit("a", 1990, 30);
    bad.age_at_first_birth = 35.0;  // canonical is ~22
    BuildDiagnostics diag;
    auto panel = build_panel({}, {bad, make_unit("b", 1990, 30)}, 0, 40, false, &diag);
    CHECK(panel.n_units() == 1);
    REQUIRE(diag.rejected_units.size() == 1);
    CHECK(diag.rejected_units[0].find("a") == 0);
  }
}

TEST_CASE("build_panel matches a straight-line reference on a random fixture") {
  // reference: per unit, expand each claim by hand over a dense month map
  std::mt19937_64 eng(123);
  std::uniform_int_distribution<int> month(0, 23), packs(1, 2), pills(20, 40), n_rx(0, 4),
      n_visit(0, 3);
  const int lo = 0, hi = 23;
  std::vector<UnitMeta> units;
  std::vector<ClaimRecord> claims;
  for (int u = 0; u < 10; ++u) {
    std::string id = "u" + std::to_string(u);
    units.push_back(make_unit(id, 1987, u % 3 == 0 ? std::optional<int>(12 + u) : std::nullopt));
    int k = n_rx(eng);
    for (int i = 0; i < k; ++i) claims.push_back({id, month(eng), ClaimKind::rx, packs(eng), pills(eng)});
    k = n_visit(eng);
    for (int i = 0; i < k; ++i)
      claims.push_back({id, month(eng), eng() & 1 ? ClaimKind::psy : ClaimKind::gp, 0, 0});
  }
  auto panel = build_panel(claims, units, lo, hi, false);
  REQUIRE(panel.n_units() == 10);
  CHECK(panel.n_observations() == 10u * 24u);

  for (int u = 0; u < 10; ++u) {
    const auto& id = panel.unit(u).unit_id;
    std::vector<int> raw(24, 0), psy(24, 0), gp(24, 0);
    for (const auto& c : claims) {
      if (c.unit_id != id) continue;
      if (c.kind == ClaimKind::rx) {
        int span = (c.n_packages * c.pills_per_package + 29) / 30;
        for (int m = c.calendar_month; m < c.calendar_month + span; ++m)
          if (m >= lo && m <= hi) raw[m] = 1;
      } else if (c.kind == ClaimKind::psy) {
        psy[c.calendar_month]++;
      } else {
        gp[c.calendar_month]++;
      }
    }
    // independent gap-fill
    std::vector<int> exp = raw;
    for (int a = 0; a < 24; ++a) {
      if (!raw[a]) continue;
      for (int b = a + 1; b < 24 && b <= a + 3; ++b) {
        if (raw[b]) {
          if (b - a > 1)
            for (int m = a + 1; m < b; ++m) exp[m] = 1;
          break;
        }
      }
    }
    for (int m = 0; m < 24; ++m) {
      CAPTURE(u);
      CAPTURE(m);
      CHECK(panel.rx(u, m) == doctest::Approx(exp[m]));
      CHECK(panel.psy(u, m) == doctest::Approx(psy[m]));
      CHECK(panel.gp(u, m) == doctest::Approx(gp[m]));
      int g = panel.group(u);
      if (g != kNeverTreated) CHECK(panel.event_time(u, m).value() == m - g);
    }
  }
}

TEST_CASE("first_prescription_filter") {
  SUBCASE("rx in first observed month is excluded") {
    std::vector<ClaimRecord> claims = {{"a", 0, ClaimKind::rx, 1, 30}};
    auto panel = build_panel(claims, {make_unit("a", 1990, std::nullopt)}, 0, 23, false);
    auto res = first_prescription_filter(panel, 12);
    CHECK(res.panel.n_units() == 0);
    CHECK(res.events.empty());
  }
  SUBCASE("washout satisfied marks the event month") {
    std::vector<ClaimRecord> claims = {{"a", 20, ClaimKind::rx, 1, 30}};
    auto panel = build_panel(claims, {make_unit("a", 1990, std::nullopt)}, 0, 23, false);
    auto res = first_prescription_filter(panel, 12);
    REQUIRE(res.panel.n_units() == 1);
    REQUIRE(res.events.size() == 1);
    CHECK(res.events[0].month == 20);
  }
  SUBCASE("no prescriptions at all is excluded") {
    auto panel = build_panel({}, {make_unit("a", 1990, std::nullopt)}, 0, 23, false);
    auto res = first_prescription_filter(panel, 12);
    CHECK(res.panel.n_units() == 0);
  }
  SUBCASE("matches a brute-force scan on 50 random units") {
    std::mt19937_64 eng(55);
    std::uniform_int_distribution<int> first_rx(-10, 40), obs_start(0, 6);
    std::vector<UnitMeta> units;
    std::vector<ClaimRecord> claims;
    for (int u = 0; u < 50; ++u) {
      std::string id = "u" + std::to_string(u);
      auto meta = make_unit(id, 1990, std::nullopt);
      meta.obs_lo = obs_start(eng);
      meta.obs_hi = 47;
      units.push_back(meta);
      int m = first_rx(eng);
      if (m >= 0) claims.push_back({id, m, ClaimKind::rx, 1, 30});
    }
    auto panel = build_panel(claims, units, 0, 47, false);
    auto res = first_prescription_filter(panel, 12);

    // oracle: scan the built panel directly
    std::vector<std::string> expect;
    for (int u = 0; u < panel.n_units(); ++u) {
      int first = -1;
      for (int m = panel.unit(u).obs_lo; m <= panel.unit(u).obs_hi; ++m)
        if (panel.rx(u, m) > 0) {
          first = m;
          break;
        }
      if (first >= 0 && first - panel.unit(u).obs_lo >= 12)
        expect.push_back(panel.unit(u).unit_id);
    }
    std::vector<std::string> got;
    for (const auto& u : res.panel.units()) got.push_back(u.unit_id);
    CHECK(got == expect);
  }
}

TEST_CASE("placebo birth assignment") {
  SUBCASE("degenerate log-normal gives exp(mu) exactly and treated stay untouched") {
    std::vector<UnitMeta> units = {make_unit("t", 1988, 60), make_unit("n", 1988, std::nullopt)};
    std::map<int, CohortParams> params = {{1988, {std::log(29.0), 0.0}}};
    assign_placebo_births(units, params, 42, 0, 400);
    CHECK(!units[0].placebo_assigned);
    REQUIRE(units[1].placebo_assigned);
    CHECK(units[1].placebo_age == doctest::Approx(29.0).epsilon(1e-12));
    CHECK(!units[1].first_child_month.has_value());
  }

  SUBCASE("same seed reproduces assignments; different seed changes them") {
    std::vector<UnitMeta> units;
    for (int i = 0; i < 40; ++i) units.push_back(make_unit("n" + std::to_string(i), 1985 + i % 5, std::nullopt));
    std::map<int, CohortParams> params;
    for (int y = 1985; y <= 1990; ++y) params[y] = {std::log(29.0), 0.12};
    auto a = units, b = units, c = units;
    assign_placebo_births(a, params, 7, 0, 300);
    assign_placebo_births(b, params, 7, 0, 300);
    assign_placebo_births(c, params, 8, 0, 300);
    bool any_diff = false;
    for (std::size_t i = 0; i < a.size(); ++i) {
      CHECK(a[i].placebo_month == b[i].placebo_month);
      CHECK(a[i].placebo_age == b[i].placebo_age);
      if (a[i].placebo_month != c[i].placebo_month) any_diff = true;
    }
    CHECK(any_diff);
  }

  SUBCASE("missing cohort parameters skip with diagnostic") {
    std::vector<UnitMeta> units = {make_unit("n", 1970, std::nullopt)};
    PlaceboDiagnostics diag;
    assign_placebo_births(units, {}, 3, 0, 100, 50, &diag);
    CHECK(!units[0].placebo_assigned);
    REQUIRE(diag.missing_params.size() == 1);
  }

  SUBCASE("monte carlo: mean placebo age tracks exp(mu + sigma^2/2)") {
    // fitted to a cohort with mean age about 29
    const double target_mean = 29.0, sigma = 0.12;
    const double mu = std::log(target_mean) - 0.5 * sigma * sigma;
    std::vector<UnitMeta> units;
    for (int i = 0; i < 10000; ++i) units.push_back(make_unit("n" + std::to_string(i), 1988, std::nullopt));
    std::map<int, CohortParams> params = {{1988, {mu, sigma}}};
    assign_placebo_births(units, params, 99, -10000, 10000);
    double mean = 0.0;
    int k = 0;
    for (const auto& u : units)
      if (u.placebo_assigned) {
        mean += u.placebo_age;
        ++k;
      }
    REQUIRE(k == 10000);
    mean /= k;
    CHECK(std::abs(mean - target_mean) < 0.5);
  }

  SUBCASE("fit_cohort_params recovers log moments") {
    std::vector<UnitMeta> units;
    std::mt19937_64 eng(5);
    std::normal_distribution<double> z(0.0, 1.0);
    const double mu = std::log(30.0), sigma = 0.08;
    for (int i = 0; i < 4000; ++i) {
      auto u = make_unit("t" + std::to_string(i), 1990, 100);
      u.age_at_first_birth = std::exp(mu + sigma * z(eng));
      units.push_back(u);
    }
    auto params = fit_cohort_params(units);
    REQUIRE(params.count(1990) == 1);
    CHECK(params[1990].mu == doctest::Approx(mu).epsilon(0.01));
    CHECK(params[1990].sigma == doctest::Approx(sigma).epsilon(0.05));
  }
}

TEST_CASE("csv round trips") {
  namespace fs = std::filesystem;
  auto dir = fs::temp_directory_path() / "paneldid_test_csv";
  fs::create_directories(dir);

  std::vector<ClaimRecord> claims = {
      {"a", 3, ClaimKind::rx, 2, 30},
      {"b", 5, ClaimKind::psy, 0, 0},
      {"a", 7, ClaimKind::gp, 0, 0},
  };
  write_claims_csv(dir / "claims.csv", claims);
  auto claims2 = read_claims_csv(dir / "claims.csv");
  REQUIRE(claims2.size() == 3);
  CHECK(claims2[0].unit_id == "a");
  CHECK(claims2[0].n_packages == 2);
  CHECK(claims2[1].kind == ClaimKind::psy);
  CHECK(claims2[1].n_packages == 0);

  std::vector<UnitMeta> units = {make_unit("a", 1990, 30), make_unit("b", 1992, std::nullopt)};
  units[0].employed_at_birth = true;
  write_units_csv(dir / "units.csv", units);
  auto units2 = read_units_csv(dir / "units.csv");
  REQUIRE(units2.size() == 2);
  CHECK(units2[0].first_child_month.value() == 30);
  CHECK(units2[0].employed_at_birth);
  CHECK(units2[0].age_at_first_birth ==
        doctest::Approx(age_from_birth(1990, 30)).epsilon(1e-12));
  CHECK(!units2[1].first_child_month.has_value());
  CHECK(std::isnan(units2[1].age_at_first_birth));

  auto panel = build_panel(claims, units, 0, 40, false);
  write_panel_csv(dir / "panel.csv", panel);
  std::ifstream in(dir / "panel.csv");
  std::string header;
  std::getline(in, header);
  CHECK(header == "unit_id,month,y_rx,y_psy,y_gp,group,event_time,age_at_first_birth");
  int lines = 0;
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) ++lines;
  CHECK(lines == 2 * 41);

  CHECK_THROWS_AS(read_claims_csv(dir / "missing.csv"), DataError);
  fs::remove_all(dir);
}
