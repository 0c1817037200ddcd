#include "paneldid/csv.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "paneldid/errors.hpp"

namespace paneldid {

namespace {

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

int parse_int(const std::string& s, const char* what, const std::filesystem::path& path) {
  int v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size())
    throw DataError(path.string() + ": bad " + what + " value '" + s + "'");
  return v;
}

bool parse_bool(const std::string& s, const char* what, const std::filesystem::path& path) {
  if (s == "1" || s == "true") return true;
  if (s == "0" || s == "false") return false;
  throw DataError(path.string() + ": bad " + what + " value '" + s + "'");
}

void expect_header(const std::string& got, const std::string& want,
                   const std::filesystem::path& path) {
  std::string g = got;
  if (!g.empty() && g.back() == '\r') g.pop_back();
  if (g != want)
    throw DataError(path.string() + ": expected header '" + want + "', got '" + g + "'");
}

std::ifstream open_input(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  return in;
}

}  // namespace

std::string format_double(double v) {
  char buf[40];
  auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  (void)ec;
  return std::string(buf, p);
}

void atomic_write(const std::filesystem::path& path, const std::string& content) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + tmp.string());
    out << content;
    if (!out) throw DataError("short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

std::vector<ClaimRecord> read_claims_csv(const std::filesystem::path& path) {
  auto in = open_input(path);
  std::string line;
  if (!std::getline(in, line)) throw DataError(path.string() + ": empty file");
  expect_header(line, "unit_id,calendar_month,kind,n_packages,pills_per_package", path);
  std::vector<ClaimRecord> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto f = split_line(line);
    if (f.size() != 5) throw DataError(path.string() + ": expected 5 fields, got line '" + line + "'");
    ClaimRecord c;
    c.unit_id = f[0];
    c.calendar_month = parse_int(f[1], "calendar_month", path);
    c.kind = claim_kind_from_string(f[2]);
    if (c.kind == ClaimKind::rx) {
      c.n_packages = parse_int(f[3], "n_packages", path);
      c.pills_per_package = parse_int(f[4], "pills_per_package", path);
      if (c.n_packages < 1 || c.pills_per_package < 1)
        throw DataError(path.string() + ": rx claim needs n_packages >= 1 and pills_per_package >= 1");
    } else if (!f[3].empty() || !f[4].empty()) {
      throw DataError(path.string() + ": visit claims must leave package fields empty");
    }
    out.push_back(std::move(c));
  }
  return out;
}

void write_claims_csv(const std::filesystem::path& path, std::span<const ClaimRecord> claims) {
  std::string s = "unit_id,calendar_month,kind,n_packages,pills_per_package\n";
  for (const auto& c : claims) {
    s += c.unit_id;
    s += ',';
    s += std::to_string(c.calendar_month);
    s += ',';
    s += to_string(c.kind);
    if (c.kind == ClaimKind::rx) {
      s += ',';
      s += std::to_string(c.n_packages);
      s += ',';
      s += std::to_string(c.pills_per_package);
    } else {
      s += ",,";
    }
    s += '\n';
  }
  atomic_write(path, s);
}

std::vector<UnitMeta> read_units_csv(const std::filesystem::path& path) {
  auto in = open_input(path);
  std::string line;
  if (!std::getline(in, line)) throw DataError(path.string() + ": empty file");
  expect_header(line, "unit_id,birth_year,first_child_month,employed,subsidy,cesarean", path);
  std::vector<UnitMeta> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto f = split_line(line);
    if (f.size() != 6) throw DataError(path.string() + ": expected 6 fields, got line '" + line + "'");
    UnitMeta u;
    u.unit_id = f[0];
    u.birth_year = parse_int(f[1], "birth_year", path);
    if (!f[2].empty()) {
      u.first_child_month = parse_int(f[2], "first_child_month", path);
      u.age_at_first_birth = age_from_birth(u.birth_year, *u.first_child_month);
    }
    u.employed_at_birth = parse_bool(f[3], "employed", path);
    u.subsidy = parse_bool(f[4], "subsidy", path);
    u.cesarean = parse_bool(f[5], "cesarean", path);
    out.push_back(std::move(u));
  }
  return out;
}

void write_units_csv(const std::filesystem::path& path, std::span<const UnitMeta> units) {
  std::string s = "unit_id,birth_year,first_child_month,employed,subsidy,cesarean\n";
  for (const auto& u : units) {
    s += u.unit_id;
    s += ',';
    s += std::to_string(u.birth_year);
    s += ',';
    if (u.first_child_month) s += std::to_string(*u.first_child_month);
    s += ',';
    s += u.employed_at_birth ? '1' : '0';
    s += ',';
    s += u.subsidy ? '1' : '0';
    s += ',';
    s += u.cesarean ? '1' : '0';
    s += '\n';
  }
  atomic_write(path, s);
}

void write_panel_csv(const std::filesystem::path& path, const Panel& panel) {
  std::string s = "unit_id,month,y_rx,y_psy,y_gp,group,event_time,age_at_first_birth\n";
  for (int u = 0; u < panel.n_units(); ++u) {
    const auto& meta = panel.unit(u);
    for (int m = meta.obs_lo; m <= meta.obs_hi; ++m) {
      s += meta.unit_id;
      s += ',';
      s += std::to_string(m);
      s += ',';
      s += format_double(panel.rx(u, m));
      s += ',';
      s += format_double(panel.psy(u, m));
      s += ',';
      s += format_double(panel.gp(u, m));
      s += ',';
      int g = panel.group(u);
      if (g != kNeverTreated) {
        s += std::to_string(g);
        s += ',';
        s += std::to_string(m - g);
      } else {
        s += ',';
      }
      s += ',';
      if (!std::isnan(meta.age_at_first_birth)) s += format_double(meta.age_at_first_birth);
      s += '\n';
    }
  }
  atomic_write(path, s);
}

}  // namespace paneldid
