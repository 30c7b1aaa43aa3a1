#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace tfnas {

// One checked property: `value` is the measured error (or z-score for the
// estimator checks) and passes when value <= threshold.
struct PropertyResult {
  std::string suite;
  std::string name;
  bool passed = false;
  double value = 0;
  double threshold = 0;
  std::string detail;
};

// Names accepted by run_property_suite, in their default run order:
// decomposition, connector, baseline, gradient, estimator, pruning.
const std::vector<std::string>& property_suites();

// Raises ConfigError for an unknown suite name.
std::vector<PropertyResult> run_property_suite(const std::string& suite, std::uint64_t seed);

// Individual suites, exposed for the acceptance runner.
std::vector<PropertyResult> check_decomposition(std::uint64_t seed);
std::vector<PropertyResult> check_connectors(std::uint64_t seed);
std::vector<PropertyResult> check_baseline_block(std::uint64_t seed, std::size_t inputs = 100);
std::vector<PropertyResult> check_gradients(std::uint64_t seed);
// Monte-Carlo policy gradient against the enumerated one on a 6-slot space,
// at `points` random logit vectors; then a constant-loss null check.
std::vector<PropertyResult> check_estimator(std::uint64_t seed, std::size_t samples = 200000,
                                            std::size_t null_samples = 100000,
                                            std::size_t points = 5);
std::vector<PropertyResult> check_pruning(std::uint64_t seed, std::size_t inputs = 100);

}  // namespace tfnas
