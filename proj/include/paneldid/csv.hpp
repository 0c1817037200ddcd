#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "paneldid/panel.hpp"

namespace paneldid {

// claims.csv: unit_id,calendar_month,kind,n_packages,pills_per_package
// kind in {rx,psy,gp}; package fields empty for visits.
std::vector<ClaimRecord> read_claims_csv(const std::filesystem::path& path);
void write_claims_csv(const std::filesystem::path& path, std::span<const ClaimRecord> claims);

// units.csv: unit_id,birth_year,first_child_month,employed,subsidy,cesarean
// empty first_child_month = never-treated.
std::vector<UnitMeta> read_units_csv(const std::filesystem::path& path);
void write_units_csv(const std::filesystem::path& path, std::span<const UnitMeta> units);

// Long-format panel export:
// unit_id,month,y_rx,y_psy,y_gp,group,event_time,age_at_first_birth
void write_panel_csv(const std::filesystem::path& path, const Panel& panel);

// Atomic text write: temp file in the same directory, then rename.
void atomic_write(const std::filesystem::path& path, const std::string& content);

std::string format_double(double v);  // shortest round-trip representation

}  // namespace paneldid
