#pragma once

#include <string>
#include <tuple>
#include <vector>

// Hand-derived smoothing table: purchase expansion (one pill a day, 30-pill
// package = one month, ceil on partial months), spell union, clipping, and
// 1-2 month gap-fill between active months. `claims` rows are
// (month, n_packages, pills_per_package); `expect` is the 0/1 series over
// [lo, hi].
struct SmoothCase {
  const char* name;
  int lo, hi;
  std::vector<std::tuple<int, int, int>> claims;
  const char* expect;
};

inline const std::vector<SmoothCase>& smoothing_cases() {
  static const std::vector<SmoothCase> cases = {
      {"one_package_one_month", 10, 14, {{12, 1, 30}}, "00100"},
      {"gap_of_one_filled", 4, 8, {{5, 1, 30}, {7, 1, 30}}, "01110"},
      {"no_claims", 0, 5, {}, "000000"},
      {"three_packages_three_months", 0, 6, {{2, 3, 30}}, "0011100"},
      {"sixty_pills_two_months", 0, 4, {{1, 1, 60}}, "01100"},
      {"fortyfive_pills_round_up", 0, 4, {{1, 1, 45}}, "01100"},
      {"twentynine_pills_one_month", 0, 3, {{1, 1, 29}}, "0100"},
      {"thirtyone_pills_two_months", 0, 4, {{1, 1, 31}}, "01100"},
      {"gap_of_two_filled", 4, 9, {{5, 1, 30}, {8, 1, 30}}, "011110"},
      {"gap_of_three_kept", 4, 10, {{5, 1, 30}, {9, 1, 30}}, "0100010"},
      {"overlapping_spells_union", 2, 7, {{3, 2, 30}, {4, 1, 30}}, "011000"},
      {"clipped_at_window_end", 0, 5, {{4, 4, 30}}, "000011"},
      {"clipped_at_window_start", 0, 5, {{-2, 3, 30}}, "100000"},
      {"two_gaps_filled_independently", 0, 6, {{1, 1, 30}, {3, 1, 30}, {5, 1, 30}}, "0111110"},
      {"fill_does_not_chain", 0, 8, {{1, 1, 30}, {4, 1, 30}, {8, 1, 30}}, "011110001"},
      {"trailing_months_not_extended", 0, 4, {{0, 2, 30}}, "11000"},
      {"same_month_claims_union", 0, 3, {{1, 1, 30}, {1, 1, 30}}, "0100"},
      {"gap_between_spell_ends", 0, 8, {{2, 2, 30}, {6, 1, 30}}, "001111100"},
      {"two_packs_of_fifteen", 0, 3, {{1, 2, 15}}, "0100"},
      {"year_of_packages", 0, 13, {{1, 12, 30}}, "01111111111110"},
      {"gap_after_long_spell", 0, 4, {{0, 1, 30}, {3, 2, 30}}, "11111"},
      {"claim_outside_horizon", 0, 3, {{7, 1, 30}}, "0000"},
      {"claim_at_window_end", 0, 3, {{3, 1, 30}}, "0001"},
      {"single_month_window", 5, 5, {{5, 1, 90}}, "1"},
      {"combined_rules", 0, 11, {{0, 1, 30}, {2, 1, 60}, {6, 1, 30}, {10, 1, 30}}, "111111100010"},
  };
  return cases;
}
