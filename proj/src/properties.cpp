#include "tfnas/properties.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

#include "tfnas/errors.hpp"
#include "tfnas/export.hpp"
#include "tfnas/optimizers.hpp"
#include "tfnas/oracle.hpp"

namespace tfnas {

namespace {

Tensor random_tensor(std::size_t r, std::size_t c, Rng& rng, double lo = -1, double hi = 1) {
  Tensor t(r, c);
  for (auto& v : t.data()) v = static_cast<Real>(rng.uniform(lo, hi));
  return t;
}

void randomize(const Var& v, Rng& rng, double amp = 0.5) {
  for (auto& x : v->value.data()) x = static_cast<Real>(rng.uniform(-amp, amp));
}

PropertyResult below(std::string suite, std::string name, double value, double threshold,
                     std::string detail = {}) {
  return {std::move(suite), std::move(name), value <= threshold, value, threshold, std::move(detail)};
}

Tensor dense_ff(const FeedForward& ff, const Tensor& x) {
  std::vector<Tensor> w1, b1, w2;
  for (const auto& s : ff.slices) {
    w1.push_back(s.w1->value);
    b1.push_back(s.b1->value);
    w2.push_back(s.w2->value);
  }
  return oracle::add_row(
      oracle::matmul(oracle::gelu(oracle::add_row(oracle::matmul(x, hconcat(w1)), hconcat(b1))),
                     vconcat(w2)),
      ff.b2->value);
}

struct HeadMats {
  Tensor wq, wk, wv, wo;
};

HeadMats head_mats(const AttentionHead& h) {
  std::vector<Tensor> q, k, v, o;
  for (const auto& s : h.sim) {
    q.push_back(s.wq->value);
    k.push_back(s.wk->value);
  }
  for (const auto& s : h.value) {
    v.push_back(s.wv->value);
    o.push_back(s.wo->value);
  }
  return {hconcat(q), hconcat(k), hconcat(v), vconcat(o)};
}

Tensor dense_head(const AttentionHead& h, const Tensor& x, std::size_t l) {
  const auto m = head_mats(h);
  return oracle::attention(x, l, m.wq, m.wk, m.wv, m.wo, h.score_scale);
}

// Textbook multi-head attention: per-head contexts concatenated, then one
// output projection.
Tensor dense_multihead(std::span<const AttentionHead> heads, const Tensor& x, std::size_t l) {
  std::vector<Tensor> wo;
  const std::size_t n = x.rows() / l;
  std::vector<Tensor> ctx_all(heads.size(), Tensor(x.rows(), heads[0].value_dim()));
  for (std::size_t h = 0; h < heads.size(); ++h) {
    const auto m = head_mats(heads[h]);
    wo.push_back(m.wo);
    for (std::size_t s = 0; s < n; ++s) {
      const Tensor xs = oracle::rows_of(x, s, l);
      const Tensor sc = oracle::scale(
          oracle::matmul(oracle::matmul(xs, m.wq), oracle::transpose(oracle::matmul(xs, m.wk))),
          heads[h].score_scale);
      oracle::put_rows(ctx_all[h], oracle::matmul(oracle::softmax_rows(sc), oracle::matmul(xs, m.wv)), s);
    }
  }
  return oracle::matmul(hconcat(ctx_all), vconcat(wo));
}

Tensor dense_sim(std::span<const SimSlice> sim, const Tensor& x, std::size_t l) {
  std::vector<Tensor> q, k;
  for (const auto& s : sim) {
    q.push_back(s.wq->value);
    k.push_back(s.wk->value);
  }
  const Tensor wq = hconcat(q), wk = hconcat(k);
  Tensor out(x.rows(), l);
  for (std::size_t s = 0; s < x.rows() / l; ++s) {
    const Tensor xs = oracle::rows_of(x, s, l);
    oracle::put_rows(out, oracle::matmul(oracle::matmul(xs, wq), oracle::transpose(oracle::matmul(xs, wk))), s);
  }
  return out;
}

Tensor slice_oracle(const FeedForwardSlice& s, const Tensor& x) {
  return oracle::matmul(oracle::gelu(oracle::add_row(oracle::matmul(x, s.w1->value), s.b1->value)),
                        s.w2->value);
}

}  // namespace

std::vector<PropertyResult> check_decomposition(std::uint64_t seed) {
  Rng rng = Rng(seed).derive("decomposition");
  double ff_err = 0, sim_err = 0, head_err = 0, mh_err = 0;
  std::size_t cases = 0;
  for (std::size_t h : {4, 16, 64}) {
    for (std::size_t m : {2, 4, 8}) {
      for (std::size_t l : {1, 4, 16}) {
        const std::size_t dk = std::max<std::size_t>(8, h / 2);
        const Tensor x = random_tensor(2 * l, h, rng);

        auto ff = make_feedforward(h, 4 * h, m, Activation::Gelu, rng);
        for (auto& s : ff.slices) randomize(s.b1, rng);
        randomize(ff.b2, rng);
        ff_err = std::max(ff_err, static_cast<double>(
                                      max_abs_diff(ff_forward(ff, constant(x))->value, dense_ff(ff, x))));

        std::vector<AttentionHead> heads;
        for (int i = 0; i < 3; ++i) heads.push_back(make_head(h, dk, dk, m, m, rng));
        sim_err = std::max(sim_err, static_cast<double>(max_abs_diff(
                                        sim_forward(heads[0].sim, constant(x), l)->value,
                                        dense_sim(heads[0].sim, x, l))));
        head_err = std::max(head_err, static_cast<double>(max_abs_diff(
                                          head_forward(heads[0], constant(x), l)->value,
                                          dense_head(heads[0], x, l))));
        mh_err = std::max(mh_err, static_cast<double>(max_abs_diff(
                                      multihead_forward(heads, constant(x), l)->value,
                                      dense_multihead(heads, x, l))));
        ++cases;
      }
    }
  }
  const std::string d = std::to_string(cases) + " cases, h in {4,16,64}, m in {2,4,8}, l in {1,4,16}";
  return {below("decomposition", "feedforward slices sum to dense FF", ff_err, 1e-9, d),
          below("decomposition", "sim slices sum to full QK^T", sim_err, 1e-9, d),
          below("decomposition", "single head value slices match dense head", head_err, 1e-9, d),
          below("decomposition", "sum of heads matches concat multi-head", mh_err, 1e-9, d)};
}

std::vector<PropertyResult> check_connectors(std::uint64_t seed) {
  Rng rng = Rng(seed).derive("connector");
  const std::size_t h = 12, l = 5;
  const Tensor x = random_tensor(3 * l, h, rng);
  std::vector<PropertyResult> out;

  // All-horizontal chains collapse to the ordinary residual form.
  auto ff = make_feedforward(h, 48, 4, Activation::Gelu, rng);
  for (auto& s : ff.slices) randomize(s.b1, rng);
  randomize(ff.b2, rng);
  std::vector<ChainUnit> fu;
  for (const auto& s : ff.slices)
    fu.push_back({[&s](const Var& in) { return ff_slice_forward(s, in, Activation::Gelu); },
                  ArchWeight::fixed(0)});
  const Tensor ff_chain = add_row(chain_forward(fu, constant(x)), ff.b2)->value;
  out.push_back(below("connector", "all-zero FF chain equals Res(FF_d)",
                      max_abs_diff(ff_chain, oracle::add(x, dense_ff(ff, x))), 1e-9));

  std::vector<AttentionHead> heads;
  for (int i = 0; i < 3; ++i) heads.push_back(make_head(h, 8, 6, 2, 2, rng));
  std::vector<ChainUnit> au;
  for (const auto& hd : heads)
    au.push_back({[&hd, l](const Var& in) { return head_forward(hd, in, l); }, ArchWeight::fixed(0)});
  const Tensor att_chain = chain_forward(au, constant(x))->value;
  out.push_back(below("connector", "all-zero head chain equals Res(Att)",
                      max_abs_diff(att_chain, oracle::add(x, dense_multihead(heads, x, l))), 1e-9));

  // w = (0, 0, 1, 0, 1): units 1-3 share the first layer, 4-5 the second.
  auto five = make_feedforward(h, 40, 5, Activation::Gelu, rng);
  for (auto& s : five.slices) randomize(s.b1, rng);
  const Real w[] = {0, 0, 1, 0, 1};
  std::vector<ChainUnit> cu;
  for (std::size_t i = 0; i < 5; ++i)
    cu.push_back({[&five, i](const Var& in) { return ff_slice_forward(five.slices[i], in, Activation::Gelu); },
                  ArchWeight::fixed(w[i])});
  const auto& s = five.slices;
  const Tensor y1 = oracle::add(
      x, oracle::add(slice_oracle(s[0], x), oracle::add(slice_oracle(s[1], x), slice_oracle(s[2], x))));
  const Tensor y2 = oracle::add(y1, oracle::add(slice_oracle(s[3], y1), slice_oracle(s[4], y1)));
  out.push_back(below("connector", "layout (0,0,1,0,1) equals [3,2] residual network",
                      max_abs_diff(chain_forward(cu, constant(x))->value, y2), 1e-9));
  return out;
}

std::vector<PropertyResult> check_baseline_block(std::uint64_t seed, std::size_t inputs) {
  Rng rng = Rng(seed).derive("baseline");
  SearchSpaceConfig cfg;
  cfg.layers = 1;
  cfg.hidden = 16;
  cfg.heads = 3;
  cfg.ff_dim = 32;
  cfg.key_dim = 8;
  cfg.value_dim = 4;
  cfg.m_ff = 4;
  SearchSpace space(cfg);
  const auto block = make_block(cfg, rng);
  randomize(block.attn_bias, rng);
  randomize(block.ff.b2, rng);
  for (auto& s : block.ff.slices) randomize(s.b1, rng);
  for (const auto* ln : {&block.ln_attn, &block.ln_ff}) {
    for (auto& v : ln->alpha->value.data()) v = static_cast<Real>(rng.uniform(0.5, 1.5));
    randomize(ln->beta, rng);
  }
  const auto arch = init_arch(space, InitMode::Baseline);
  const auto bound = bind_block({&space, &arch, nullptr}, 0);

  const std::size_t l = 6;
  double err = 0;
  for (std::size_t i = 0; i < inputs; ++i) {
    const Tensor x = random_tensor(2 * l, cfg.hidden, rng, -2, 2);
    const Tensor got = assemble_block(block, constant(x), l, bound)->value;
    // Post-LN block: LN(x + MHA(x) + b), then LN(y + FF(y)).
    const Tensor a = oracle::add_row(oracle::add(x, dense_multihead(block.heads, x, l)), block.attn_bias->value);
    const Tensor mid = oracle::layer_norm(a, block.ln_attn.alpha->value, block.ln_attn.beta->value, true);
    const Tensor f = oracle::add(mid, dense_ff(block.ff, mid));
    const Tensor want = oracle::layer_norm(f, block.ln_ff.alpha->value, block.ln_ff.beta->value, true);
    err = std::max(err, static_cast<double>(max_abs_diff(got, want)));
  }
  return {below("baseline", "baseline block equals standard post-LN block", err, 1e-8,
                std::to_string(inputs) + " random inputs")};
}

std::vector<PropertyResult> check_gradients(std::uint64_t seed) {
  Rng rng = Rng(seed).derive("gradient");
  ModelConfig m;
  m.space.layers = 2;
  m.space.hidden = 8;
  m.space.heads = 2;
  m.space.ff_dim = 16;
  m.space.key_dim = 4;
  m.space.value_dim = 4;
  m.vocab = 6;
  m.max_len = 4;
  m.num_classes = 3;
  Supernet net(m, rng);
  for (auto& [_, p] : net.named_parameters())
    for (auto& v : p->value.data()) v += static_cast<Real>(0.1 * rng.normal());
  SearchSpace space(m.space);
  std::vector<Var> relaxed;
  for (std::size_t i = 0; i < space.num_slots(); ++i)
    relaxed.push_back(parameter(Tensor::scalar(static_cast<Real>(rng.uniform(0.2, 0.9)))));

  std::vector<int> tokens(3 * 4);
  for (auto& t : tokens) t = static_cast<int>(rng.below(m.vocab));
  const auto loss = cross_entropy(net.forward(tokens, 4, {&space, nullptr, &relaxed}), {0, 2, 1});

  double worst = 0;
  std::string worst_name;
  std::size_t tensors = 0, failed = 0;
  for (const auto& [name, p] : net.named_parameters()) {
    const auto r = finite_difference_check(loss, p, Real(1e-6), Real(1e-5));
    ++tensors;
    failed += r.passed ? 0 : 1;
    if (r.max_rel_error >= worst) {
      worst = r.max_rel_error;
      worst_name = name;
    }
  }
  double worst_w = 0;
  std::size_t failed_w = 0;
  for (const auto& w : relaxed) {
    const auto r = finite_difference_check(loss, w, Real(1e-6), Real(1e-5));
    failed_w += r.passed ? 0 : 1;
    worst_w = std::max(worst_w, static_cast<double>(r.max_rel_error));
  }
  PropertyResult a = below("gradient", "finite differences, every weight tensor", worst, 1e-5,
                           std::to_string(tensors) + " tensors, worst " + worst_name);
  a.passed = a.passed && failed == 0;
  PropertyResult b = below("gradient", "finite differences, relaxed architecture weights", worst_w, 1e-5,
                           std::to_string(relaxed.size()) + " slots");
  b.passed = b.passed && failed_w == 0;
  return {a, b};
}

std::vector<PropertyResult> check_estimator(std::uint64_t seed, std::size_t samples,
                                            std::size_t null_samples, std::size_t points) {
  Rng rng = Rng(seed).derive("estimator");
  auto layout = std::make_shared<ArchTemplate>();
  for (int i = 0; i < 6; ++i) {
    ArchEntry e;
    e.id = "w" + std::to_string(i);
    e.index = static_cast<std::size_t>(i);
    layout->add(e);
  }
  const std::shared_ptr<const ArchTemplate> lay = layout;
  const std::size_t k = lay->num_slots();

  // Arbitrary payoff table over all 2^6 architectures.
  std::vector<double> table(std::size_t{1} << k);
  for (auto& v : table) v = rng.uniform(0.5, 2.0);
  auto index_of = [k](const ArchParams& w) {
    std::size_t idx = 0;
    for (std::size_t i = 0; i < k; ++i)
      if (w[i] != 0) idx |= std::size_t{1} << i;
    return idx;
  };

  auto mc = [&](const Policy& pol, std::size_t n, const std::function<double(const ArchParams&)>& L,
                Rng& r) {
    std::vector<double> s1(k), s2(k);
    for (std::size_t t = 0; t < n; ++t) {
      const auto smp = sdo_sample(pol, lay, r);
      const auto sc = score(pol, smp.w);
      const double l = L(smp.w);
      for (std::size_t i = 0; i < k; ++i) {
        const double g = sc[i] * l;
        s1[i] += g;
        s2[i] += g * g;
      }
    }
    std::vector<std::pair<double, double>> mean_se(k);
    for (std::size_t i = 0; i < k; ++i) {
      const double mean = s1[i] / static_cast<double>(n);
      const double var = std::max(0.0, s2[i] / static_cast<double>(n) - mean * mean);
      mean_se[i] = {mean, std::sqrt(var / static_cast<double>(n))};
    }
    return mean_se;
  };

  double worst_z = 0;
  for (std::size_t p = 0; p < points; ++p) {
    Policy pol;
    pol.phi.resize(k);
    for (auto& v : pol.phi) v = static_cast<Real>(rng.uniform(-2, 2));
    auto L = [&](const ArchParams& w) { return table[index_of(w)]; };
    const auto exact = exact_policy_gradient(pol, lay, [&](const ArchParams& w) { return Real(L(w)); });
    Rng draw = rng.derive("point" + std::to_string(p));
    const auto est = mc(pol, samples, L, draw);
    for (std::size_t i = 0; i < k; ++i)
      worst_z = std::max(worst_z, std::abs(est[i].first - exact[i]) / est[i].second);
  }

  Policy pol;
  pol.phi.resize(k);
  for (auto& v : pol.phi) v = static_cast<Real>(rng.uniform(-2, 2));
  Rng draw = rng.derive("null");
  const auto est = mc(pol, null_samples, [](const ArchParams&) { return 1.7; }, draw);
  double null_z = 0;
  for (const auto& [mean, se] : est) null_z = std::max(null_z, std::abs(mean) / se);

  return {below("estimator", "Monte-Carlo policy gradient matches enumeration (max |z|)", worst_z, 3,
                std::to_string(points) + " logit points x " + std::to_string(samples) + " samples"),
          below("estimator", "constant loss gives zero mean gradient (max |z|)", null_z, 3,
                std::to_string(null_samples) + " samples")};
}

std::vector<PropertyResult> check_pruning(std::uint64_t seed, std::size_t inputs) {
  Rng rng = Rng(seed).derive("pruning");
  ModelConfig m;
  m.space.layers = 2;
  m.space.hidden = 8;
  m.space.heads = 3;
  m.space.ff_dim = 24;
  m.space.m_ff = 3;
  m.space.key_dim = 4;
  m.space.value_dim = 4;
  m.vocab = 7;
  m.max_len = 6;
  m.num_classes = 3;
  Supernet net(m, rng);
  SearchSpace space(m.space);
  auto st = make_do_state(space, 1);
  for (auto& w : st.w) w->value.data()[0] = static_cast<Real>(rng.uniform(-1, 1.5));
  // A few weights just under and just over the threshold.
  st.w[space.blocks()[0].ff[2]]->value.data()[0] = Real(5e-7);
  st.w[space.blocks()[1].head[1]]->value.data()[0] = Real(-9e-7);
  st.w[space.blocks()[1].ff[0]]->value.data()[0] = Real(2e-6);

  std::vector<int> tokens(inputs * m.max_len);
  for (auto& t : tokens) t = static_cast<int>(rng.below(m.vocab));
  const Tensor relaxed = net.forward(tokens, m.max_len, {&space, nullptr, &st.w})->value;
  const auto pruned = do_prune(st, space, net, Real(1e-6));
  const Tensor after = net.forward(tokens, m.max_len, {&space, &pruned, nullptr})->value;

  std::size_t zeroed = 0;
  for (Real v : pruned.values) zeroed += v == 0 ? 1 : 0;
  std::vector<PropertyResult> out{
      below("pruning", "pruned network matches relaxed network", max_abs_diff(after, relaxed), 1e-6,
            std::to_string(inputs) + " inputs, " + std::to_string(zeroed) + " slots pruned")};

  const auto canon = canonicalize(space, pruned);
  try {
    const CompactModel cm(net, space, canon);
    out.push_back(below("pruning", "compact rebuild matches relaxed network",
                        max_abs_diff(cm.forward(tokens, m.max_len)->value, relaxed), 1e-6,
                        std::to_string(cm.parameter_count()) + " parameters kept"));
  } catch (const ArchitectureError& e) {
    out.push_back({"pruning", "compact rebuild matches relaxed network", false, 0, 1e-6, e.what()});
  }
  return out;
}

const std::vector<std::string>& property_suites() {
  static const std::vector<std::string> names{"decomposition", "connector", "baseline",
                                              "gradient",      "estimator", "pruning"};
  return names;
}

std::vector<PropertyResult> run_property_suite(const std::string& suite, std::uint64_t seed) {
  if (suite == "decomposition") return check_decomposition(seed);
  if (suite == "connector") return check_connectors(seed);
  if (suite == "baseline") return check_baseline_block(seed);
  if (suite == "gradient") return check_gradients(seed);
  if (suite == "estimator") return check_estimator(seed);
  if (suite == "pruning") return check_pruning(seed);
  throw ConfigError("unknown property suite '" + suite + "'");
}

}  // namespace tfnas
