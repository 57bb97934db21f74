#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace nlfs {

/// Least-squares slope of log(y) against log(x). Inputs must be positive;
/// non-positive y entries are clamped to 1e-300 so a vanishing tail reads as
/// a huge negative slope instead of NaN.
double fit_loglog_slope(std::span<const double> x, std::span<const double> y);

/// FNV-1a 64-bit over a byte string. Used to stamp outputs with a config
/// fingerprint so replayed artifacts can be matched to their settings.
std::uint64_t fnv1a64(const std::string& bytes);

/// Hex rendering of a 64-bit hash, fixed 16 lowercase digits.
std::string hex64(std::uint64_t value);

/// Runs fn(i) for i in [0, count) on up to `jobs` threads. Results must be
/// written to disjoint slots; iteration order within a thread is ascending,
/// and jobs == 1 degenerates to a plain loop so outputs cannot depend on
/// scheduling.
void parallel_for(int count, int jobs, const std::function<void(int)>& fn);

inline constexpr const char* kArtifactVersion = "0.1.0";

}  // namespace nlfs
