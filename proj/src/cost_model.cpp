#include "tfnas/cost_model.hpp"

#include <sys/utsname.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <limits>
#include <sstream>
#include <thread>

#include "tfnas/errors.hpp"
#include "tfnas/model.hpp"

namespace tfnas {

namespace {

using Clock = std::chrono::steady_clock;

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

double timer_resolution() {
  double best = std::numeric_limits<double>::infinity();
  for (int i = 0; i < 200; ++i) {
    auto a = Clock::now();
    auto b = Clock::now();
    while (b == a) b = Clock::now();
    best = std::min(best, std::chrono::duration<double>(b - a).count());
  }
  return best;
}

std::string machine_descriptor() {
  utsname u{};
  std::ostringstream os;
  if (uname(&u) == 0) os << u.sysname << " " << u.release << " " << u.machine << " ";
  os << std::thread::hardware_concurrency() << " threads";
  return os.str();
}

std::size_t count_entries(const SearchSpace& space, CostCategory cat) {
  std::size_t n = 0;
  for (const auto& e : space.layout()->entries()) n += e.category == cat;
  return n;
}

CostProfile tabulated(std::string id, const std::map<CostCategory, std::vector<double>>& rows) {
  CostProfile p;
  p.id = std::move(id);
  p.machine = "tabulated";
  p.lengths = {32, 128, 512};
  for (const auto& [cat, vals] : rows)
    for (std::size_t i = 0; i < vals.size(); ++i) p.measurements.push_back({cat, p.lengths[i], vals[i], 0});
  p.aggregated = aggregate(p.measurements);
  return p;
}

}  // namespace

std::map<CostCategory, double> aggregate(std::span<const Measurement> measurements) {
  std::map<CostCategory, double> out;
  for (const auto& m : measurements) {
    if (!std::isfinite(m.percent) || m.percent < 0)
      throw ConfigError("cost measurement for '" + to_string(m.category) + "' at length " +
                        std::to_string(m.length) + " is not a non-negative number");
    auto [it, fresh] = out.emplace(m.category, m.percent);
    if (!fresh) it->second = std::max(it->second, m.percent);
  }
  for (auto c : all_cost_categories())
    if (!out.count(c)) throw ConfigError("cost profile has no measurement for '" + to_string(c) + "'");
  return out;
}

CostProfile table1_profile() {
  return tabulated("table1-bert-base",
                   {{CostCategory::Feedforward, {43.3, 58.6, 51.0}},
                    {CostCategory::AttentionHead, {54.9, 40.6, 48.7}},
                    {CostCategory::QueryKeySimilarity, {28.9, 20.6, 21.6}},
                    {CostCategory::AttentionValue, {22.8, 19.9, 21.6}},
                    {CostCategory::LayerNormMean, {0.8, 0.8, 0.7}},
                    {CostCategory::VerticalFeedforward, {0.9, 1.3, 0.1}},
                    {CostCategory::VerticalAttention, {0.9, 1.3, 0.1}}});
}

CostProfile table4_profile() {
  return tabulated("table4-minibert",
                   {{CostCategory::Feedforward, {32.2, 36.2, 30.2}},
                    {CostCategory::AttentionHead, {41.2, 36.7, 47.1}},
                    {CostCategory::QueryKeySimilarity, {21.3, 16.4, 21.3}},
                    {CostCategory::AttentionValue, {18.9, 15.5, 21.3}},
                    {CostCategory::LayerNormMean, {6.6, 6.4, 4.6}},
                    {CostCategory::VerticalFeedforward, {19.1, 22.4, 14.7}},
                    {CostCategory::VerticalAttention, {19.1, 22.4, 14.7}}});
}

CostProfile profile(const ProfileOptions& opts, Rng& rng) {
  if (opts.reps < 5) throw ConfigError("profile needs at least 5 repetitions");
  if (opts.lengths.empty()) throw ConfigError("profile needs at least one sequence length");
  if (opts.batch == 0) throw ConfigError("profile batch must be positive");
  opts.space.validate();
  const auto& cfg = opts.space;

  CostProfile p;
  p.id = "measured";
  p.machine = machine_descriptor();
  p.reps = opts.reps;
  p.warmup = opts.warmup;
  p.batch = opts.batch;
  p.lengths = opts.lengths;

  NoGradGuard no_grad;
  const double resolution = timer_resolution();
  TransformerBlock block = make_block(cfg, rng);
  SearchSpace space(cfg);
  const ArchParams base = init_arch(space, InitMode::Baseline);
  const BlockArch barch = bind_block({&space, &base, nullptr}, 0);
  const LayerNorm extra_ln = make_layer_norm(cfg.hidden);

  auto time_it = [&](const std::function<void()>& fn) {
    for (std::size_t i = 0; i < opts.warmup; ++i) fn();
    std::vector<double> t;
    for (std::size_t i = 0; i < opts.reps; ++i) {
      auto a = Clock::now();
      fn();
      t.push_back(std::chrono::duration<double>(Clock::now() - a).count());
    }
    return median(std::move(t));
  };

  for (std::size_t len : opts.lengths) {
    Tensor xt(opts.batch * len, cfg.hidden);
    for (auto& v : xt.data()) v = static_cast<Real>(rng.normal());
    const Var x = constant(xt);
    std::vector<Var> probs;
    for (const auto& h : block.heads)
      probs.push_back(softmax_rows(scale(sim_forward(h.sim, x, len), h.score_scale)));

    const double total = time_it([&] { assemble_block(block, x, len, barch); });
    std::map<CostCategory, double> secs;
    secs[CostCategory::Feedforward] = time_it([&] { ff_forward(block.ff, x); });
    secs[CostCategory::AttentionHead] = time_it([&] { multihead_forward(block.heads, x, len); });
    secs[CostCategory::QueryKeySimilarity] = time_it([&] {
      for (const auto& h : block.heads) sim_forward(h.sim, x, len);
    });
    secs[CostCategory::AttentionValue] = time_it([&] {
      for (std::size_t i = 0; i < block.heads.size(); ++i)
        for (const auto& s : block.heads[i].value)
          matmul(seq_mix(probs[i], matmul(x, s.wv), len), s.wo);
    });
    secs[CostCategory::LayerNormMean] = time_it([&] {
      sub_col(x, row_mean(x));
      sub_col(x, row_mean(x));
    });
    // A vertical connection closes a layer early: one more residual add and LN.
    const double vertical = time_it([&] { layer_norm_forward(extra_ln, add(x, x)); });
    secs[CostCategory::VerticalFeedforward] = vertical;
    secs[CostCategory::VerticalAttention] = vertical;

    for (const auto& [cat, s] : secs) {
      if (s < 10 * resolution)
        p.warnings.push_back(to_string(cat) + " at length " + std::to_string(len) +
                             " is below 10x the timer resolution");
      p.measurements.push_back({cat, len, 100.0 * s / total, s});
    }
  }
  p.aggregated = aggregate(p.measurements);
  return p;
}

Real CostVector::baseline_total(const SearchSpace& space) const {
  const ArchParams base = init_arch(space, InitMode::Baseline);
  return cost_loss(base, *this, CostMode::Binary) + fixed;
}

CostVector assign_costs(const SearchSpace& space, const CostProfile& profile) {
  auto agg = profile.aggregated.empty() ? aggregate(profile.measurements) : profile.aggregated;
  for (auto c : all_cost_categories())
    if (!agg.count(c)) throw ConfigError("cost profile lacks '" + to_string(c) + "'");

  std::map<CostCategory, double> share = agg;
  share[CostCategory::AttentionHead] =
      std::max(0.0, agg[CostCategory::AttentionHead] - agg[CostCategory::QueryKeySimilarity] -
                        agg[CostCategory::AttentionValue]);

  std::map<CostCategory, double> per_entry;
  for (auto c : all_cost_categories()) {
    const std::size_t n = count_entries(space, c);
    per_entry[c] = n ? share[c] / static_cast<double>(n) : 0.0;
  }

  CostVector cv;
  cv.slot.assign(space.num_slots(), 0);
  double baseline = 0;
  for (const auto& e : space.layout()->entries()) {
    cv.slot[e.slot] += static_cast<Real>(per_entry[e.category]);
    if (space.layout()->slots()[e.slot].kind == ParamKind::Selection) baseline += per_entry[e.category];
  }
  // Whatever the baseline does not spend in a profiled category is fixed.
  double fixed = std::max(0.0, 100.0 - baseline);
  const double total = baseline + fixed;
  if (total <= 0) throw ConfigError("cost profile assigns zero cost to the baseline");
  const double k = 100.0 / total;
  for (auto& v : cv.slot) v = static_cast<Real>(v * k);
  cv.fixed = static_cast<Real>(fixed * k);
  return cv;
}

Real cost_loss(const ArchParams& arch, const CostVector& c, CostMode mode) {
  if (arch.size() != c.slot.size())
    throw ShapeError("cost_loss: " + std::to_string(arch.size()) + " parameters vs " +
                     std::to_string(c.slot.size()) + " costs");
  Real total = 0;
  for (std::size_t i = 0; i < arch.size(); ++i) {
    if (mode == CostMode::Relaxed)
      total += std::abs(arch[i]) * c.slot[i];
    else if (arch[i] != 0)
      total += c.slot[i];
  }
  return total;
}

Var cost_loss(std::span<const Var> relaxed, const CostVector& c) {
  if (relaxed.size() != c.slot.size())
    throw ShapeError("cost_loss: " + std::to_string(relaxed.size()) + " parameters vs " +
                     std::to_string(c.slot.size()) + " costs");
  Tensor row(1, relaxed.size());
  for (std::size_t i = 0; i < relaxed.size(); ++i) row(0, i) = c.slot[i];
  return sum(mul(abs(concat_cols(relaxed)), constant(std::move(row))));
}

SpeedupReport estimate_speedup(const ArchParams& arch, const CostVector& c,
                               const ArchParams& baseline) {
  const Real base = cost_loss(baseline, c, CostMode::Binary);
  if (base + c.fixed <= 0) throw ConfigError("baseline cost must be positive");
  const Real mine = cost_loss(arch, c, CostMode::Binary);
  SpeedupReport r;
  if (mine <= 0) {
    r.infinite = true;
    r.predicted = std::numeric_limits<double>::infinity();
    return r;
  }
  r.predicted = (base + c.fixed) / (mine + c.fixed);
  return r;
}

std::string profile_csv(const CostProfile& p) {
  std::ostringstream os;
  os << "schema_version," << kCostProfileSchema << "\n";
  os << "seed," << p.seed << "\n";
  os << "config_hash," << p.config_hash << "\n";
  os << "component";
  for (auto l : p.lengths) os << "," << l;
  os << ",aggregated\n";
  os.precision(6);
  for (auto c : all_cost_categories()) {
    os << '"' << to_string(c) << '"';
    for (auto l : p.lengths) {
      os << ",";
      for (const auto& m : p.measurements)
        if (m.category == c && m.length == l) os << m.percent;
    }
    auto it = p.aggregated.find(c);
    os << "," << (it == p.aggregated.end() ? 0.0 : it->second) << "\n";
  }
  return os.str();
}

}  // namespace tfnas
