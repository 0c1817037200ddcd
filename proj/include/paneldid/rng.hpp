#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace paneldid {

// splitmix64 step; used to derive independent stream seeds from a master
// seed so parallel work (trees, folds, bootstrap draws, MC reps) stays
// deterministic regardless of scheduling.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream) {
  return splitmix64(master ^ splitmix64(stream + 0x632be59bd9b4e019ULL));
}

inline std::mt19937_64 make_engine(std::uint64_t master, std::uint64_t stream) {
  return std::mt19937_64(derive_seed(master, stream));
}

// Standard normal CDF.
inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

// Standard normal quantile (Acklam's rational approximation, |rel err| < 1.2e-9,
// refined with one Halley step).
double normal_quantile(double p);

}  // namespace paneldid
