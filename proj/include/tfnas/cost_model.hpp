#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tfnas/search_space.hpp"

namespace tfnas {

inline constexpr int kCostProfileSchema = 1;

// Share of total baseline time spent in one category at one sequence
// length. `seconds` is the raw median when the profile was measured locally
// and 0 for tabulated profiles.
struct Measurement {
  CostCategory category = CostCategory::Feedforward;
  std::size_t length = 0;
  double percent = 0;
  double seconds = 0;
};

struct CostProfile {
  std::string id;       // short name, echoed into run provenance
  std::string machine;
  std::size_t reps = 0;
  std::size_t warmup = 0;
  std::size_t batch = 0;
  std::vector<std::size_t> lengths;
  std::vector<Measurement> measurements;
  std::map<CostCategory, double> aggregated;  // percent, max over lengths
  std::vector<std::string> warnings;
  std::uint64_t seed = 0;
  std::string config_hash;
};

// Max over lengths per category. Raises ConfigError when a category has no
// measurement at all.
std::map<CostCategory, double> aggregate(std::span<const Measurement> measurements);

struct ProfileOptions {
  SearchSpaceConfig space;
  std::vector<std::size_t> lengths{32, 128, 512};
  std::size_t reps = 7;
  std::size_t warmup = 3;
  std::size_t batch = 1;
};

// Times each category on this machine, relative to a full baseline block.
// Strictly sequential. Raises ConfigError for reps < 5 or empty lengths.
CostProfile profile(const ProfileOptions& opts, Rng& rng);

// The two tabulated profiles shipped as examples (BERT-base and MiniBERT
// shapes). Vertical attention is not tabulated; it reuses the vertical
// feedforward figures.
CostProfile table1_profile();
CostProfile table4_profile();

// Per-slot costs in percent of baseline time, plus the part of baseline
// time no parameter can remove.
struct CostVector {
  std::vector<Real> slot;
  Real fixed = 0;

  Real baseline_total(const SearchSpace& space) const;
};

// Spreads each category evenly over its entries in the whole network; the
// head category is inclusive, so a head entry carries head - sim - value.
// Scaled so that the baseline architecture plus `fixed` totals 100.
CostVector assign_costs(const SearchSpace& space, const CostProfile& profile);

enum class CostMode { Binary, Relaxed };

// Binary: sum of c_i over w_i = 1 (non-binary values count as selected
// when non-zero). Relaxed: sum |w_i| c_i.
Real cost_loss(const ArchParams& arch, const CostVector& c, CostMode mode);
// Differentiable relaxed cost sum |w_i| c_i over [1,1] slot parameters.
Var cost_loss(std::span<const Var> relaxed, const CostVector& c);

struct SpeedupReport {
  double predicted = 1;
  bool infinite = false;  // arch has no removable cost left
  std::optional<double> measured;
};

// (baseline cost + fixed) / (arch cost + fixed).
SpeedupReport estimate_speedup(const ArchParams& arch, const CostVector& c,
                               const ArchParams& baseline);

// Table-shaped CSV: one row per category, one column per length.
std::string profile_csv(const CostProfile& p);

}  // namespace tfnas
