#include <gtest/gtest.h>

#include <set>

#include "tfnas/oracle.hpp"
#include "tfnas/errors.hpp"
#include "tfnas/model.hpp"
#include "tfnas/search_space.hpp"

using namespace tfnas;

namespace {

SearchSpaceConfig small_config() {
  SearchSpaceConfig c;
  c.layers = 1;
  c.hidden = 8;
  c.heads = 2;
  c.ff_dim = 8;
  c.key_dim = 4;
  c.value_dim = 4;
  return c;
}

}  // namespace

TEST(SearchSpace, DefaultSlotAndEntryCounts) {
  SearchSpace s{SearchSpaceConfig{}};
  // Per block: 2 heads x (1 + 2 sim + 2 value) entries, 1 head connection,
  // 2 ff, 1 ff connection, 2 LN means = 16 entries; values tie across heads.
  EXPECT_EQ(s.layout()->num_entries(), 32u);
  EXPECT_EQ(s.num_slots(), 28u);
}

TEST(SearchSpace, ValueSlicesTiedAcrossHeads) {
  SearchSpace s{small_config()};
  const auto& b = s.blocks()[0];
  EXPECT_EQ(b.value[0], b.value[1]);
  EXPECT_NE(b.sim[0], b.sim[1]);
  const auto slot = *s.layout()->find_slot("b0.value1");
  EXPECT_EQ(s.layout()->slots()[slot].members.size(), 2u);
}

TEST(SearchSpace, SlotIdsUnique) {
  SearchSpace s{SearchSpaceConfig{}};
  std::set<std::string> ids;
  for (const auto& slot : s.layout()->slots()) ids.insert(slot.id);
  EXPECT_EQ(ids.size(), s.num_slots());
  EXPECT_TRUE(s.layout()->find_slot("b1.ln_ff.mean"));
  EXPECT_TRUE(s.layout()->find_slot("b0.head1.sim0"));
  EXPECT_FALSE(s.layout()->find_slot("b2.head0"));
}

TEST(SearchSpace, CategoriesFollowRoles) {
  SearchSpace s{SearchSpaceConfig{}};
  for (const auto& e : s.layout()->entries()) {
    switch (e.role) {
      case Role::Head: EXPECT_EQ(e.category, CostCategory::AttentionHead); break;
      case Role::Sim: EXPECT_EQ(e.category, CostCategory::QueryKeySimilarity); break;
      case Role::Value: EXPECT_EQ(e.category, CostCategory::AttentionValue); break;
      case Role::FeedForward: EXPECT_EQ(e.category, CostCategory::Feedforward); break;
      case Role::FeedForwardConnection:
        EXPECT_EQ(e.category, CostCategory::VerticalFeedforward);
        EXPECT_EQ(e.kind, ParamKind::Connection);
        break;
      case Role::HeadConnection:
        EXPECT_EQ(e.category, CostCategory::VerticalAttention);
        EXPECT_EQ(e.kind, ParamKind::Connection);
        break;
      case Role::LayerNormMean: EXPECT_EQ(e.category, CostCategory::LayerNormMean); break;
    }
  }
}

TEST(SearchSpace, VerticalAttentionOptional) {
  auto c = small_config();
  c.allow_vertical_attention = false;
  c.search_ln_mean = false;
  SearchSpace s{c};
  EXPECT_TRUE(s.blocks()[0].head_connection.empty());
  EXPECT_FALSE(s.blocks()[0].ln_attn_mean);
  // 2 heads + 4 sims + 2 tied values + 2 ff + 1 ff connection
  EXPECT_EQ(s.num_slots(), 11u);
}

TEST(SearchSpace, InvalidConfigsRejected) {
  auto c = small_config();
  c.layers = 0;
  EXPECT_THROW(SearchSpace{c}, ConfigError);
  c = small_config();
  c.ff_dim = 9;
  EXPECT_THROW(SearchSpace{c}, ConfigError);
  c = small_config();
  c.m_sim = 3;
  EXPECT_THROW(SearchSpace{c}, ConfigError);
  c = small_config();
  c.tie_value_dims = false;
  EXPECT_THROW(SearchSpace{c}, ConfigError);
}

TEST(SearchSpace, CostCategoryNamesRoundTrip) {
  for (auto c : all_cost_categories()) EXPECT_EQ(parse_cost_category(to_string(c)), c);
  EXPECT_THROW(parse_cost_category("Embedding"), ConfigError);
}

TEST(ArchTemplate, TieGroupMustShareKind) {
  ArchTemplate t;
  t.add({"a", ParamKind::Selection, Role::Value, CostCategory::AttentionValue, 0, 0, 0, "g", 0});
  EXPECT_THROW(
      t.add({"b", ParamKind::Connection, Role::Value, CostCategory::AttentionValue, 0, 0, 0, "g", 0}),
      ConfigError);
}

TEST(InitArch, BaselineAndUniform) {
  SearchSpace s{small_config()};
  auto base = init_arch(s, InitMode::Baseline);
  for (std::size_t i = 0; i < base.size(); ++i)
    EXPECT_EQ(base[i], s.layout()->slots()[i].kind == ParamKind::Selection ? 1 : 0);
  auto uni = init_arch(s, InitMode::Uniform);
  for (Real v : uni.values) EXPECT_EQ(v, 0.5);
  EXPECT_TRUE(base.is_binary());
  EXPECT_FALSE(uni.is_binary());
}

TEST(Enumerate, CountsAndBitOrder) {
  ArchParams t{nullptr, std::vector<Real>(3)};
  auto all = enumerate_architectures(t);
  ASSERT_EQ(all.size(), 8u);
  EXPECT_EQ(all[1].values, (std::vector<Real>{1, 0, 0}));
  EXPECT_EQ(all[6].values, (std::vector<Real>{0, 1, 1}));
  std::set<std::vector<Real>> distinct;
  for (auto& a : all) distinct.insert(a.values);
  EXPECT_EQ(distinct.size(), 8u);
}

TEST(Enumerate, LimitEnforced) {
  ArchParams t{nullptr, std::vector<Real>(5)};
  EXPECT_THROW(enumerate_architectures(t, 4), ConfigError);
  EXPECT_THROW(enumerate_architectures(t, 21), ConfigError);
}

TEST(Validate, BaselineIsValid) {
  SearchSpace s{SearchSpaceConfig{}};
  EXPECT_TRUE(architecture_issues(s, init_arch(s, InitMode::Baseline)).empty());
}

TEST(Validate, EmptyArchitectureRejected) {
  SearchSpace s{small_config()};
  ArchParams a{s.layout(), std::vector<Real>(s.num_slots())};
  EXPECT_THROW(validate_architecture(s, a), ArchitectureError);
}

TEST(Validate, HeadWithoutValuesReported) {
  SearchSpace s{small_config()};
  auto a = init_arch(s, InitMode::Baseline);
  for (auto v : s.blocks()[0].value[0]) a[v] = 0;
  auto issues = architecture_issues(s, a);
  ASSERT_FALSE(issues.empty());
  EXPECT_NE(issues.front().find("without any value"), std::string::npos);
  auto c = canonicalize(s, a);
  for (auto h : s.blocks()[0].head) EXPECT_EQ(c[h], 0);
  for (auto sim : s.blocks()[0].sim[0]) EXPECT_EQ(c[sim], 0);
  EXPECT_TRUE(architecture_issues(s, c).empty());
}

TEST(Validate, WrongSizeReported) {
  SearchSpace s{small_config()};
  ArchParams a{s.layout(), std::vector<Real>(3, 1)};
  EXPECT_FALSE(architecture_issues(s, a).empty());
}

class SupernetTest : public ::testing::Test {
 protected:
  ModelConfig cfg() {
    ModelConfig m;
    m.space = small_config();
    m.space.layers = 2;
    m.vocab = 6;
    m.max_len = 5;
    m.num_classes = 3;
    return m;
  }
};

TEST_F(SupernetTest, BaselineMatchesDenseTransformer) {
  Rng rng(31);
  Supernet net(cfg(), rng);
  Rng br(32);
  for (auto& [_, p] : net.named_parameters())
    for (auto& v : p->value.data()) v += Real(0.05) * static_cast<Real>(br.normal());
  SearchSpace space{net.config().space};
  auto arch = init_arch(space, InitMode::Baseline);

  const std::vector<int> tokens{1, 2, 3, 0, 5, 4, 4, 1};
  const std::size_t l = 4;
  auto logits = net.forward(tokens, l, {&space, &arch, nullptr});

  auto params = net.named_parameters();
  auto P = [&](const std::string& n) -> const Tensor& {
    for (auto& [k, v] : params)
      if (k == n) return v->value;
    throw std::runtime_error("missing " + n);
  };
  Tensor x(tokens.size(), 8);
  for (std::size_t i = 0; i < tokens.size(); ++i)
    for (std::size_t j = 0; j < 8; ++j) x(i, j) = P("tok_emb")(tokens[i], j) + P("pos_emb")(i % l, j);
  for (std::size_t b = 0; b < 2; ++b) {
    const std::string p = "block" + std::to_string(b) + ".";
    const auto& blk = net.blocks()[b];
    Tensor a = x;
    for (std::size_t h = 0; h < 2; ++h) {
      const std::string hp = p + "head" + std::to_string(h) + ".";
      const Tensor wq[] = {P(hp + "sim0.wq"), P(hp + "sim1.wq")};
      const Tensor wk[] = {P(hp + "sim0.wk"), P(hp + "sim1.wk")};
      const Tensor wv[] = {P(hp + "value0.wv"), P(hp + "value1.wv")};
      const Tensor wo[] = {P(hp + "value0.wo"), P(hp + "value1.wo")};
      a = oracle::add(a, oracle::attention(x, l, hconcat(wq), hconcat(wk), hconcat(wv), vconcat(wo),
                                           blk.heads[h].score_scale));
    }
    a = oracle::add_row(a, P(p + "attn_bias"));
    const Tensor mid = oracle::layer_norm(a, P(p + "ln_attn.alpha"), P(p + "ln_attn.beta"), true);
    const Tensor w1[] = {P(p + "ff0.w1"), P(p + "ff1.w1")};
    const Tensor b1[] = {P(p + "ff0.b1"), P(p + "ff1.b1")};
    const Tensor w2[] = {P(p + "ff0.w2"), P(p + "ff1.w2")};
    Tensor f = oracle::matmul(oracle::gelu(oracle::add_row(oracle::matmul(mid, hconcat(w1)), hconcat(b1))),
                              vconcat(w2));
    f = oracle::add_row(oracle::add(mid, f), P(p + "ff.b2"));
    x = oracle::layer_norm(f, P(p + "ln_ff.alpha"), P(p + "ln_ff.beta"), true);
  }
  Tensor pooled(2, 8);
  for (std::size_t s = 0; s < 2; ++s)
    for (std::size_t i = 0; i < l; ++i)
      for (std::size_t j = 0; j < 8; ++j) pooled(s, j) += x(s * l + i, j) / l;
  const Tensor expect = oracle::add_row(oracle::matmul(pooled, P("out_w")), P("out_b"));
  ASSERT_EQ(logits->value.rows(), 2u);
  ASSERT_EQ(logits->value.cols(), 3u);
  EXPECT_LT(max_abs_diff(logits->value, expect), 1e-9);
}

TEST_F(SupernetTest, RelaxedBindingAtBinaryPointMatchesFixed) {
  Rng rng(33);
  Supernet net(cfg(), rng);
  SearchSpace space{net.config().space};
  auto arch = init_arch(space, InitMode::Baseline);
  arch[space.blocks()[0].ff_connection[0]] = 1;
  arch[space.blocks()[1].head[0]] = 0;
  std::vector<Var> relaxed;
  for (Real v : arch.values) relaxed.push_back(parameter(Tensor::scalar(v)));
  const std::vector<int> tokens{1, 2, 3, 0, 5, 4};
  auto a = net.forward(tokens, 3, {&space, &arch, nullptr});
  auto b = net.forward(tokens, 3, {&space, nullptr, &relaxed});
  EXPECT_LT(max_abs_diff(a->value, b->value), 1e-12);
}

TEST_F(SupernetTest, RelaxedArchitectureGradient) {
  Rng rng(34);
  Supernet net(cfg(), rng);
  SearchSpace space{net.config().space};
  Rng ur(35);
  std::vector<Var> relaxed;
  for (std::size_t i = 0; i < space.num_slots(); ++i)
    relaxed.push_back(parameter(Tensor::scalar(ur.uniform(0.2, 0.8))));
  auto loss = cross_entropy(net.forward({1, 2, 3, 0, 5, 4}, 3, {&space, nullptr, &relaxed}), {0, 2});
  for (std::size_t i = 0; i < relaxed.size(); ++i) {
    auto rep = finite_difference_check(loss, relaxed[i], 1e-5, 1e-5);
    EXPECT_TRUE(rep.passed) << space.layout()->slots()[i].id << " rel " << rep.max_rel_error;
  }
}

TEST_F(SupernetTest, ForeignSpaceRejected) {
  Rng rng(36);
  Supernet net(cfg(), rng);
  SearchSpace other{small_config()};
  auto arch = init_arch(other, InitMode::Baseline);
  EXPECT_THROW(net.forward({1, 2}, 2, {&other, &arch, nullptr}), ArchitectureError);
}

TEST_F(SupernetTest, BadSequenceLengthRejected) {
  Rng rng(36);
  Supernet net(cfg(), rng);
  SearchSpace space{net.config().space};
  auto arch = init_arch(space, InitMode::Baseline);
  EXPECT_THROW(net.forward({1, 2, 3}, 2, {&space, &arch, nullptr}), ShapeError);
  EXPECT_THROW(net.forward({1, 2, 3, 4, 5, 0}, 6, {&space, &arch, nullptr}), ShapeError);
}

TEST_F(SupernetTest, CloneIsIndependent) {
  Rng rng(37);
  Supernet net(cfg(), rng);
  Supernet copy = net.clone();
  copy.parameters()[0]->value(0, 0) += 1;
  EXPECT_NE(copy.parameters()[0]->value, net.parameters()[0]->value);
  EXPECT_EQ(copy.parameters()[1]->value, net.parameters()[1]->value);
}

TEST_F(SupernetTest, TokenOutputShape) {
  auto c = cfg();
  c.output = OutputKind::Token;
  Rng rng(38);
  Supernet net(c, rng);
  SearchSpace space{c.space};
  auto arch = init_arch(space, InitMode::Baseline);
  EXPECT_EQ(net.forward({1, 2, 3, 4, 5, 0}, 3, {&space, &arch, nullptr})->value.rows(), 6u);
}
