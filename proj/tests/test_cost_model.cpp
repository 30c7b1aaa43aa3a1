#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "tfnas/cost_model.hpp"
#include "tfnas/errors.hpp"

using namespace tfnas;

namespace {

SearchSpaceConfig small_space() {
  SearchSpaceConfig c;
  c.layers = 2;
  c.hidden = 16;
  c.heads = 2;
  c.ff_dim = 32;
  c.key_dim = 8;
  c.value_dim = 8;
  return c;
}

// Table 1 at length 32 only.
CostProfile length32_profile() {
  CostProfile p = table1_profile();
  std::vector<Measurement> keep;
  for (const auto& m : p.measurements)
    if (m.length == 32) keep.push_back(m);
  p.measurements = keep;
  p.lengths = {32};
  p.aggregated = aggregate(p.measurements);
  return p;
}

ArchParams bare(std::vector<Real> v) {
  return ArchParams{nullptr, std::move(v)};
}

}  // namespace

TEST(Aggregate, TakesMaxOverLengths) {
  const auto agg = table1_profile().aggregated;
  EXPECT_DOUBLE_EQ(agg.at(CostCategory::VerticalFeedforward), 1.3);
  EXPECT_DOUBLE_EQ(agg.at(CostCategory::Feedforward), 58.6);
  EXPECT_DOUBLE_EQ(agg.at(CostCategory::AttentionHead), 54.9);
  EXPECT_DOUBLE_EQ(agg.at(CostCategory::LayerNormMean), 0.8);
}

TEST(Aggregate, SingleLengthIsIdentity) {
  const auto p = length32_profile();
  for (const auto& m : p.measurements) EXPECT_DOUBLE_EQ(p.aggregated.at(m.category), m.percent);
}

TEST(Aggregate, OrderOfLengthsIrrelevant) {
  auto ms = table1_profile().measurements;
  const auto a = aggregate(ms);
  std::reverse(ms.begin(), ms.end());
  EXPECT_EQ(a, aggregate(ms));
}

TEST(Aggregate, MissingCategoryIsAnError) {
  auto ms = table1_profile().measurements;
  std::erase_if(ms, [](const Measurement& m) { return m.category == CostCategory::LayerNormMean; });
  EXPECT_THROW(aggregate(ms), ConfigError);
}

TEST(Aggregate, NegativeMeasurementIsAnError) {
  auto ms = table1_profile().measurements;
  ms[0].percent = -1;
  EXPECT_THROW(aggregate(ms), ConfigError);
}

TEST(AssignCosts, BaselinePlusFixedIsHundred) {
  SearchSpace s(small_space());
  for (const auto& p : {table1_profile(), table4_profile()}) {
    const auto c = assign_costs(s, p);
    EXPECT_NEAR(c.baseline_total(s), 100.0, 1e-9);
    for (auto v : c.slot) EXPECT_GE(v, 0);
    EXPECT_GE(c.fixed, 0);
  }
}

TEST(AssignCosts, SlicesSplitCategoryEvenly) {
  SearchSpace s(small_space());
  const auto c = assign_costs(s, table1_profile());
  const auto& bs = s.blocks();
  // The profiled baseline adds up to more than 100, so every share is
  // scaled by the same factor and nothing is left as fixed.
  const double profiled = 58.6 + (54.9 - 28.9 - 22.8) + 28.9 + 22.8 + 0.8;
  const double k = 100.0 / profiled;
  EXPECT_NEAR(c.fixed, 0, 1e-12);
  // 2 blocks x 2 FF slices share 58.6.
  EXPECT_NEAR(c.slot[bs[0].ff[0]], k * 58.6 / 4, 1e-9);
  EXPECT_NEAR(c.slot[bs[1].ff[1]], k * 58.6 / 4, 1e-9);
  // Sim: 2 blocks x 2 heads x 2 slices.
  EXPECT_NEAR(c.slot[bs[0].sim[1][0]], k * 28.9 / 8, 1e-9);
  // A value slot is tied across 2 heads; it carries both entries.
  EXPECT_NEAR(c.slot[bs[0].value[0][0]], k * 2 * 22.8 / 8, 1e-9);
  // Whole-head entries carry what the head costs beyond sim and value.
  EXPECT_NEAR(c.slot[bs[0].head[0]], k * (54.9 - 28.9 - 22.8) / 4, 1e-9);
}

TEST(AssignCosts, UnprofiledRemainderIsFixed) {
  SearchSpace s(small_space());
  const auto c = assign_costs(s, length32_profile());
  // 43.3 + 3.2 + 28.9 + 22.8 + 0.8 at length 32.
  EXPECT_NEAR(c.fixed, 100.0 - 99.0, 1e-9);
  EXPECT_NEAR(c.slot[s.blocks()[0].ff[0]], 43.3 / 4, 1e-9);
}

TEST(AssignCosts, ConnectionsCostNothingAtBaseline) {
  SearchSpace s(small_space());
  const auto c = assign_costs(s, table1_profile());
  const auto base = init_arch(s, InitMode::Baseline);
  for (std::size_t i = 0; i < s.num_slots(); ++i)
    if (s.layout()->slots()[i].kind == ParamKind::Connection) {
      EXPECT_EQ(base[i], 0);
      EXPECT_GT(c.slot[i], 0);
    }
}

TEST(CostLoss, Examples) {
  CostVector c{{0.3, 0.5, 0.2}, 0};
  EXPECT_NEAR(cost_loss(bare({1, 0, 1}), c, CostMode::Binary), 0.5, 1e-15);
  EXPECT_NEAR(cost_loss(bare({1, 1, 1}), c, CostMode::Binary), 1.0, 1e-15);
  EXPECT_EQ(cost_loss(bare({0, 0, 0}), c, CostMode::Binary), 0);
  EXPECT_NEAR(cost_loss(bare({0.5, -1, 0}), c, CostMode::Relaxed), 0.65, 1e-15);
  EXPECT_THROW(cost_loss(bare({1, 1}), c, CostMode::Binary), ShapeError);
}

TEST(CostLoss, RelaxedGradientIsSignTimesCost) {
  CostVector c{{0.3, 0.5, 0.2}, 0};
  std::vector<Var> w{parameter(Tensor::scalar(0.5)), parameter(Tensor::scalar(-2)),
                     parameter(Tensor::scalar(0))};
  Var l = cost_loss(w, c);
  EXPECT_NEAR(l->value.item(), 0.15 + 1.0, 1e-15);
  backward(l);
  EXPECT_NEAR(w[0]->grad.item(), 0.3, 1e-15);
  EXPECT_NEAR(w[1]->grad.item(), -0.5, 1e-15);
  EXPECT_EQ(w[2]->grad.item(), 0);
}

TEST(Speedup, BaselineIsOne) {
  SearchSpace s(small_space());
  const auto c = assign_costs(s, table1_profile());
  const auto base = init_arch(s, InitMode::Baseline);
  const auto r = estimate_speedup(base, c, base);
  EXPECT_DOUBLE_EQ(r.predicted, 1.0);
  EXPECT_FALSE(r.infinite);
}

TEST(Speedup, HalfOfFeedforwardAtLength32) {
  SearchSpace s(small_space());
  const auto c = assign_costs(s, length32_profile());
  const auto base = init_arch(s, InitMode::Baseline);
  auto a = base;
  for (const auto& b : s.blocks()) a[b.ff[0]] = 0;
  const auto r = estimate_speedup(a, c, base);
  EXPECT_NEAR(r.predicted, 1.0 / (1.0 - 0.2165), 1e-9);
  EXPECT_NEAR(r.predicted, 1.276, 5e-4);
}

TEST(Speedup, EmptyArchitectureIsFlagged) {
  SearchSpace s(small_space());
  const auto c = assign_costs(s, table1_profile());
  const auto base = init_arch(s, InitMode::Baseline);
  ArchParams empty{s.layout(), std::vector<Real>(s.num_slots(), 0)};
  const auto r = estimate_speedup(empty, c, base);
  EXPECT_TRUE(r.infinite);
  EXPECT_TRUE(std::isinf(r.predicted));
}

TEST(Profile, RejectsTooFewReps) {
  Rng rng(1);
  ProfileOptions o;
  o.space = small_space();
  o.reps = 0;
  EXPECT_THROW(profile(o, rng), ConfigError);
  o.reps = 4;
  EXPECT_THROW(profile(o, rng), ConfigError);
  o.reps = 5;
  o.lengths = {};
  EXPECT_THROW(profile(o, rng), ConfigError);
}

TEST(Profile, MeasuresEveryCategory) {
  Rng rng(3);
  ProfileOptions o;
  o.space = small_space();
  o.lengths = {8, 32};
  o.reps = 5;
  o.warmup = 1;
  const auto p = profile(o, rng);
  EXPECT_EQ(p.measurements.size(), all_cost_categories().size() * 2);
  EXPECT_EQ(p.aggregated.size(), all_cost_categories().size());
  EXPECT_EQ(p.reps, 5u);
  EXPECT_FALSE(p.machine.empty());
  for (const auto& m : p.measurements) {
    EXPECT_GE(m.percent, 0);
    EXPECT_GT(m.seconds, 0);
  }
}

TEST(Profile, WiderFeedforwardIsNotCheaper) {
  Rng rng(5);
  auto wide = small_space();
  wide.hidden = 64;
  wide.ff_dim = 256;
  wide.key_dim = wide.value_dim = 32;
  auto narrow = wide;
  narrow.ff_dim = 128;
  ProfileOptions o;
  o.lengths = {64};
  o.reps = 9;
  o.space = wide;
  const auto pw = profile(o, rng);
  o.space = narrow;
  const auto pn = profile(o, rng);
  auto secs = [](const CostProfile& p) {
    for (const auto& m : p.measurements)
      if (m.category == CostCategory::Feedforward) return m.seconds;
    return 0.0;
  };
  EXPECT_GE(secs(pw), secs(pn) * 0.9);
}

TEST(ProfileCsv, HasSchemaAndOneRowPerCategory) {
  const auto csv = profile_csv(table1_profile());
  EXPECT_EQ(csv.rfind("schema_version,1\n", 0), 0u);
  EXPECT_NE(csv.find("component,32,128,512,aggregated"), std::string::npos);
  EXPECT_NE(csv.find("\nseed,0\nconfig_hash,\n"), std::string::npos);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 4 + static_cast<long>(all_cost_categories().size()));
}
