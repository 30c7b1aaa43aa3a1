#include "tfnas/optimizers.hpp"

#include <cmath>
#include <sstream>

#include "tfnas/errors.hpp"

namespace tfnas {

namespace {

Real sigmoid(Real x) {
  return x >= 0 ? Real(1) / (Real(1) + std::exp(-x)) : std::exp(x) / (Real(1) + std::exp(x));
}

// log sigmoid(x), stable for large |x|.
Real log_sigmoid(Real x) { return x >= 0 ? -std::log1p(std::exp(-x)) : x - std::log1p(std::exp(x)); }

void require_finite(Real v, const char* what) {
  if (!std::isfinite(v))
    throw NumericError(std::string(what) + ": loss is not finite (" + std::to_string(v) + ")");
}

void scale_tensor(const Var& v, Real k) {
  for (auto& x : v->value.data()) x *= k;
}

}  // namespace

Adam::Adam(std::vector<Var> params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg) {
  for (const auto& p : params_) {
    m_.emplace_back(p->value.rows(), p->value.cols());
    v_.emplace_back(p->value.rows(), p->value.cols());
  }
}

void Adam::step() {
  ++t_;
  const Real b1t = Real(1) - std::pow(cfg_.beta1, static_cast<Real>(t_));
  const Real b2t = Real(1) - std::pow(cfg_.beta2, static_cast<Real>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& p = *params_[i];
    auto m = m_[i].data();
    auto v = v_[i].data();
    auto x = p.value.data();
    const bool has = !p.grad.empty();
    for (std::size_t j = 0; j < x.size(); ++j) {
      const Real g = has ? p.grad.data()[j] : Real(0);
      m[j] = cfg_.beta1 * m[j] + (1 - cfg_.beta1) * g;
      v[j] = cfg_.beta2 * v[j] + (1 - cfg_.beta2) * g * g;
      x[j] -= cfg_.lr * (m[j] / b1t) / (std::sqrt(v[j] / b2t) + cfg_.eps);
    }
  }
}

void Adam::zero_grad() {
  for (auto& p : params_) p->zero_grad();
}

std::string to_string(Algorithm a) {
  switch (a) {
    case Algorithm::Plain: return "plain";
    case Algorithm::DO: return "do";
    case Algorithm::SDO: return "sdo";
  }
  return "?";
}

Algorithm parse_algorithm(const std::string& name) {
  for (auto a : {Algorithm::Plain, Algorithm::DO, Algorithm::SDO})
    if (to_string(a) == name) return a;
  throw ConfigError("unknown algorithm '" + name + "' (expected plain, do or sdo)");
}

void Hyperparams::validate() const {
  if (!(lambda >= 0)) throw ConfigError("lambda must be >= 0");
  if (!(nu >= 0)) throw ConfigError("nu must be >= 0");
  if (!(prune_threshold > 0)) throw ConfigError("prune threshold must be > 0");
  if (!(adam.lr > 0) || !(arch_lr > 0) || !(policy_lr > 0))
    throw ConfigError("learning rates must be > 0");
  if (!(adam.beta1 >= 0 && adam.beta1 < 1 && adam.beta2 >= 0 && adam.beta2 < 1 && adam.eps > 0))
    throw ConfigError("Adam betas must lie in [0, 1) and eps must be > 0");
  if (steps == 0 || batch == 0) throw ConfigError("steps and batch must be positive");
  if (!std::isfinite(phi_init) || !std::isfinite(w_init)) throw ConfigError("initial values must be finite");
}

Hyperparams Hyperparams::defaults_for(Algorithm a) {
  Hyperparams hp;
  hp.algorithm = a;
  if (a == Algorithm::DO) hp.lambda = Real(1e-3);
  if (a == Algorithm::Plain) hp.lambda = 0;
  return hp;
}

// ---- DO --------------------------------------------------------------------

ArchParams DOState::values(const SearchSpace& space) const {
  ArchParams a{space.layout(), std::vector<Real>(w.size())};
  for (std::size_t i = 0; i < w.size(); ++i) a[i] = w[i]->value.item();
  return a;
}

DOState make_do_state(const SearchSpace& space, Real init) {
  DOState s;
  const auto base = init_arch(space, InitMode::Baseline);
  for (std::size_t i = 0; i < space.num_slots(); ++i) {
    // Connections start at the baseline layout; only selections take init.
    const bool selection = space.layout()->slots()[i].kind == ParamKind::Selection;
    s.w.push_back(parameter(Tensor::scalar(selection ? init : base[i])));
  }
  return s;
}

StepMetrics do_step(DOState& state, Adam& theta_opt, const SearchSpace& space, const LossFn& loss,
                    const CostVector& c, const Hyperparams& hp) {
  if (state.w.size() != c.slot.size()) throw ShapeError("do_step: cost vector size mismatch");
  theta_opt.zero_grad();
  for (auto& w : state.w) w->zero_grad();
  Var l = loss({&space, nullptr, &state.w});
  StepMetrics m;
  m.l_orig = l->value.item();
  require_finite(m.l_orig, "do_step");
  backward(l);
  theta_opt.step();
  for (std::size_t i = 0; i < state.w.size(); ++i) {
    Real& w = state.w[i]->value.data()[0];
    if (!state.w[i]->grad.empty()) w -= hp.arch_lr * state.w[i]->grad.item();
    const Real shrink = hp.arch_lr * hp.lambda * c.slot[i];
    w = std::abs(w) <= shrink ? Real(0) : w - std::copysign(shrink, w);
  }
  const ArchParams now = state.values(space);
  m.l_cost = cost_loss(now, c, CostMode::Relaxed);
  m.l_total = m.l_orig + hp.lambda * m.l_cost;
  m.cost_binary = cost_loss(now, c, CostMode::Binary);
  return m;
}

ArchParams do_prune(const DOState& state, const SearchSpace& space, Supernet& net, Real threshold) {
  if (!(net.config().space == space.config()))
    throw ArchitectureError("do_prune: supernet belongs to a different search space");
  ArchParams a = state.values(space);
  for (auto& v : a.values)
    if (std::abs(v) < threshold) v = 0;

  auto fold = [&](std::size_t slot, auto&& apply) {
    const Real v = a[slot];
    if (v == 0 || v == 1) return;
    apply(v);
  };
  for (std::size_t b = 0; b < space.blocks().size(); ++b) {
    const auto& bs = space.blocks()[b];
    auto& blk = net.blocks()[b];
    for (std::size_t h = 0; h < bs.head.size(); ++h) {
      fold(bs.head[h], [&](Real v) {
        for (auto& s : blk.heads[h].value) scale_tensor(s.wo, v);
      });
      for (std::size_t i = 0; i < bs.sim[h].size(); ++i)
        fold(bs.sim[h][i], [&](Real v) { scale_tensor(blk.heads[h].sim[i].wq, v); });
    }
    // Value slots are shared by every head of the block.
    if (!bs.value.empty())
      for (std::size_t i = 0; i < bs.value[0].size(); ++i)
        fold(bs.value[0][i], [&](Real v) {
          for (auto& head : blk.heads) scale_tensor(head.value[i].wo, v);
        });
    for (std::size_t i = 0; i < bs.ff.size(); ++i)
      fold(bs.ff[i], [&](Real v) { scale_tensor(blk.ff.slices[i].w2, v); });

    std::vector<std::size_t> folded(bs.head);
    for (const auto& s : bs.sim) folded.insert(folded.end(), s.begin(), s.end());
    if (!bs.value.empty()) folded.insert(folded.end(), bs.value[0].begin(), bs.value[0].end());
    folded.insert(folded.end(), bs.ff.begin(), bs.ff.end());
    for (auto s : folded)
      if (a[s] != 0) a[s] = 1;
  }
  return a;
}

// ---- SDO -------------------------------------------------------------------

Real Policy::prob(std::size_t i) const { return sigmoid(phi.at(i)); }

Real Policy::expected_cost(const CostVector& c) const {
  Real e = 0;
  for (std::size_t i = 0; i < phi.size(); ++i) e += prob(i) * c.slot.at(i);
  return e;
}

Policy make_policy(const SearchSpace& space, Real init) {
  return {std::vector<Real>(space.num_slots(), init)};
}

Sample sdo_sample(const Policy& policy, const std::shared_ptr<const ArchTemplate>& layout, Rng& rng) {
  Sample s{{layout, std::vector<Real>(policy.phi.size())}, 0};
  for (std::size_t i = 0; i < policy.phi.size(); ++i) {
    const bool on = rng.uniform() < policy.prob(i);
    s.w[i] = on ? Real(1) : Real(0);
  }
  s.log_prob = log_prob(policy, s.w);
  return s;
}

Real log_prob(const Policy& policy, const ArchParams& w) {
  if (w.size() != policy.phi.size()) throw ShapeError("log_prob: size mismatch");
  Real lp = 0;
  for (std::size_t i = 0; i < w.size(); ++i)
    lp += w[i] != 0 ? log_sigmoid(policy.phi[i]) : log_sigmoid(-policy.phi[i]);
  return lp;
}

std::vector<Real> score(const Policy& policy, const ArchParams& w) {
  if (w.size() != policy.phi.size()) throw ShapeError("score: size mismatch");
  std::vector<Real> g(w.size());
  for (std::size_t i = 0; i < w.size(); ++i) g[i] = (w[i] != 0 ? Real(1) : Real(0)) - policy.prob(i);
  return g;
}

std::vector<Real> exact_policy_gradient(const Policy& policy,
                                        const std::shared_ptr<const ArchTemplate>& layout,
                                        const std::function<Real(const ArchParams&)>& total_loss) {
  ArchParams tmpl{layout, std::vector<Real>(policy.phi.size())};
  std::vector<Real> g(policy.phi.size(), 0);
  for (const auto& w : enumerate_architectures(tmpl)) {
    const Real p = std::exp(log_prob(policy, w));
    const Real l = total_loss(w);
    const auto s = score(policy, w);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += p * s[i] * l;
  }
  return g;
}

StepMetrics sdo_step(Policy& policy, Adam& theta_opt, const SearchSpace& space, const LossFn& loss,
                     const CostVector& c, const Hyperparams& hp, Rng& rng, ArchParams* sampled) {
  if (policy.phi.size() != c.slot.size()) throw ShapeError("sdo_step: cost vector size mismatch");
  Sample s = sdo_sample(policy, space.layout(), rng);
  theta_opt.zero_grad();
  StepMetrics m;
  m.cost_binary = cost_loss(s.w, c, CostMode::Binary);
  m.l_cost = m.cost_binary;
  // A sample with no head or ff slice left still trains: the blocks reduce
  // to residual paths and the loss says how bad that is.
  Var l = loss({&space, &s.w, nullptr});
  m.l_orig = l->value.item();
  require_finite(m.l_orig, "sdo_step");
  m.l_total = m.l_orig + hp.lambda * m.l_cost;
  backward(l);
  theta_opt.step();
  const auto sc = score(policy, s.w);
  for (std::size_t i = 0; i < policy.phi.size(); ++i)
    policy.phi[i] -= hp.policy_lr * hp.nu * sc[i] * m.l_total;
  if (sampled) *sampled = std::move(s.w);
  return m;
}

ArchParams extract_ml(const Policy& policy, const std::shared_ptr<const ArchTemplate>& layout) {
  ArchParams a{layout, std::vector<Real>(policy.phi.size())};
  for (std::size_t i = 0; i < a.size(); ++i) a[i] = policy.phi[i] >= 0 ? Real(1) : Real(0);
  return a;
}

// ---- Grid ------------------------------------------------------------------

GridResult grid_search(const GridSpec& spec, double baseline_metric,
                       const std::function<GridRow(Algorithm, Real, Real)>& run) {
  if (spec.algorithms.empty() || spec.lambdas.empty())
    throw ConfigError("grid search needs at least one algorithm and one lambda");
  for (auto a : spec.algorithms)
    if (a == Algorithm::SDO && spec.nus.empty()) throw ConfigError("SDO grid needs at least one nu");
  GridResult g;
  g.baseline_metric = baseline_metric;
  g.quality_floor = spec.quality_floor;
  for (auto a : spec.algorithms) {
    if (a == Algorithm::SDO) {
      for (Real nu : spec.nus)
        for (Real l : spec.lambdas) g.rows.push_back(run(a, l, nu));
    } else {
      for (Real l : spec.lambdas) g.rows.push_back(run(a, l, 0));
    }
  }
  for (std::size_t i = 0; i < g.rows.size(); ++i) {
    const auto& r = g.rows[i];
    if (baseline_metric - r.metric > spec.quality_floor + 1e-12) continue;
    if (!g.best || r.cost < g.rows[*g.best].cost) g.best = i;
  }
  return g;
}

std::string grid_csv(const GridResult& g) {
  std::ostringstream os;
  os.precision(10);
  os << "schema_version,algorithm,lambda,nu,metric,cost,speedup,selected,seed,config_hash\n";
  for (std::size_t i = 0; i < g.rows.size(); ++i) {
    const auto& r = g.rows[i];
    os << 1 << "," << to_string(r.algorithm) << "," << r.lambda << ",";
    if (r.algorithm == Algorithm::SDO) os << r.nu;
    os << "," << r.metric << "," << r.cost << "," << r.speedup << ","
       << (g.best && *g.best == i ? 1 : 0) << "," << g.seed << "," << g.config_hash << "\n";
  }
  return os.str();
}

}  // namespace tfnas
