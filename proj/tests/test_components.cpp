#include <gtest/gtest.h>

#include "tfnas/oracle.hpp"
#include "tfnas/components.hpp"
#include "tfnas/errors.hpp"

using namespace tfnas;

namespace {

Tensor random_input(std::size_t r, std::size_t c, std::uint64_t seed) {
  Rng rng(seed);
  Tensor t(r, c);
  for (auto& v : t.data()) v = rng.uniform(-1.0, 1.0);
  return t;
}

Tensor cat_cols(std::vector<Tensor> parts) { return hconcat(parts); }
Tensor cat_rows(std::vector<Tensor> parts) { return vconcat(parts); }

// Gives every bias a non-zero value so the oracle checks them too.
void randomize(const Var& v, Rng& rng) {
  for (auto& x : v->value.data()) x = rng.uniform(-0.5, 0.5);
}

}  // namespace

TEST(FeedForward, SlicesSumToDenseNetwork) {
  Rng rng(1);
  auto ff = make_feedforward(6, 12, 3, Activation::Gelu, rng);
  for (auto& s : ff.slices) randomize(s.b1, rng);
  randomize(ff.b2, rng);
  const Tensor x = random_input(5, 6, 2);

  std::vector<Tensor> w1, b1, w2;
  for (auto& s : ff.slices) {
    w1.push_back(s.w1->value);
    b1.push_back(s.b1->value);
    w2.push_back(s.w2->value);
  }
  const Tensor dense = oracle::add_row(
      oracle::matmul(oracle::gelu(oracle::add_row(oracle::matmul(x, cat_cols(w1)), cat_cols(b1))),
                     cat_rows(w2)),
      ff.b2->value);
  const Tensor got = ff_forward(ff, constant(x))->value;
  EXPECT_LT(max_abs_diff(got, dense), 1e-9);
}

TEST(FeedForward, DroppedSliceEqualsNetworkWithoutIt) {
  Rng rng(3);
  auto ff = make_feedforward(4, 8, 2, Activation::Relu, rng);
  const Tensor x = random_input(3, 4, 4);
  const ArchWeight gates[] = {ArchWeight::fixed(1), ArchWeight::fixed(0)};
  FeedForward only_first = ff;
  only_first.slices.pop_back();
  EXPECT_EQ(ff_forward(ff, constant(x), gates)->value, ff_forward(only_first, constant(x))->value);
}

TEST(FeedForward, AllSlicesDroppedLeavesBias) {
  Rng rng(3);
  auto ff = make_feedforward(4, 8, 2, Activation::Gelu, rng);
  randomize(ff.b2, rng);
  const ArchWeight gates[] = {ArchWeight::fixed(0), ArchWeight::fixed(0)};
  auto y = ff_forward(ff, constant(random_input(3, 4, 4)), gates);
  EXPECT_EQ(y->value, oracle::add_row(Tensor(3, 4), ff.b2->value));
}

TEST(FeedForward, IndivisibleWidthRejected) {
  Rng rng(0);
  EXPECT_THROW(make_feedforward(4, 10, 3, Activation::Gelu, rng), ConfigError);
}

TEST(FeedForward, GateCountMismatchRejected) {
  Rng rng(0);
  auto ff = make_feedforward(4, 8, 2, Activation::Gelu, rng);
  const ArchWeight gates[] = {ArchWeight::fixed(1)};
  EXPECT_THROW(ff_forward(ff, constant(Tensor(2, 4)), gates), ShapeError);
}

TEST(Similarity, SlicesSumToFullProduct) {
  Rng rng(5);
  auto head = make_head(6, 8, 4, 4, 2, rng);
  const std::size_t l = 3;
  const Tensor x = random_input(2 * l, 6, 6);
  std::vector<Tensor> wq, wk;
  for (auto& s : head.sim) {
    wq.push_back(s.wq->value);
    wk.push_back(s.wk->value);
  }
  const Tensor q = cat_cols(wq), k = cat_cols(wk);
  Tensor expect(2 * l, l);
  for (std::size_t s = 0; s < 2; ++s) {
    Tensor xs = oracle::rows_of(x, s, l);
    oracle::put_rows(expect, oracle::matmul(oracle::matmul(xs, q), oracle::transpose(oracle::matmul(xs, k))), s);
  }
  EXPECT_LT(max_abs_diff(sim_forward(head.sim, constant(x), l)->value, expect), 1e-9);
}

TEST(Similarity, EmptySumIsZero) {
  Rng rng(5);
  auto head = make_head(4, 4, 4, 2, 2, rng);
  const ArchWeight gates[] = {ArchWeight::fixed(0), ArchWeight::fixed(0)};
  auto s = sim_forward(head.sim, constant(random_input(6, 4, 1)), 3, gates);
  EXPECT_EQ(s->value, Tensor(6, 3));
}

TEST(Attention, HeadMatchesDenseAttention) {
  Rng rng(7);
  auto head = make_head(6, 4, 6, 2, 3, rng);
  const std::size_t l = 4;
  const Tensor x = random_input(3 * l, 6, 8);
  std::vector<Tensor> wq, wk, wv, wo;
  for (auto& s : head.sim) {
    wq.push_back(s.wq->value);
    wk.push_back(s.wk->value);
  }
  for (auto& s : head.value) {
    wv.push_back(s.wv->value);
    wo.push_back(s.wo->value);
  }
  const Tensor expect = oracle::attention(x, l, cat_cols(wq), cat_cols(wk), cat_cols(wv),
                                          cat_rows(wo), head.score_scale);
  EXPECT_LT(max_abs_diff(head_forward(head, constant(x), l)->value, expect), 1e-9);
  EXPECT_DOUBLE_EQ(head.score_scale, 0.5);
}

TEST(Attention, DroppedValueSliceEqualsNarrowerHead) {
  Rng rng(9);
  auto head = make_head(4, 4, 4, 2, 2, rng);
  const std::size_t l = 2;
  const Tensor x = random_input(2 * l, 4, 10);
  HeadGates g;
  g.value = {ArchWeight::fixed(0), ArchWeight::fixed(1)};
  const Tensor expect = oracle::attention(
      x, l, cat_cols({head.sim[0].wq->value, head.sim[1].wq->value}),
      cat_cols({head.sim[0].wk->value, head.sim[1].wk->value}), head.value[1].wv->value,
      head.value[1].wo->value, head.score_scale);
  EXPECT_LT(max_abs_diff(head_forward(head, constant(x), l, g)->value, expect), 1e-9);
}

TEST(Attention, NoSimilarityGivesUniformAttention) {
  Rng rng(9);
  auto head = make_head(4, 4, 4, 2, 1, rng);
  const std::size_t l = 3;
  const Tensor x = random_input(l, 4, 10);
  HeadGates g;
  g.sim = {ArchWeight::fixed(0), ArchWeight::fixed(0)};
  // Uniform softmax: every row is the mean of the projected values.
  Tensor v = oracle::matmul(oracle::matmul(x, head.value[0].wv->value), head.value[0].wo->value);
  Tensor got = head_forward(head, constant(x), l, g)->value;
  for (std::size_t j = 0; j < 4; ++j) {
    Real m = (v(0, j) + v(1, j) + v(2, j)) / 3;
    for (std::size_t i = 0; i < l; ++i) EXPECT_NEAR(got(i, j), m, 1e-12);
  }
}

TEST(Attention, HeadWithoutValuesRejected) {
  Rng rng(9);
  auto head = make_head(4, 4, 4, 2, 2, rng);
  HeadGates g;
  g.value = {ArchWeight::fixed(0), ArchWeight::fixed(0)};
  EXPECT_THROW(head_forward(head, constant(Tensor(2, 4)), 2, g), ArchitectureError);
  EXPECT_EQ(head_output(head, constant(Tensor(2, 4)), 2, g), nullptr);
}

TEST(Attention, MultiHeadIsSumOfHeads) {
  Rng rng(11);
  std::vector<AttentionHead> heads;
  for (int i = 0; i < 3; ++i) heads.push_back(make_head(4, 4, 2, 2, 2, rng));
  const Tensor x = random_input(4, 4, 12);
  Tensor expect(4, 4);
  for (auto& h : heads) expect = oracle::add(expect, head_forward(h, constant(x), 2)->value);
  EXPECT_LT(max_abs_diff(multihead_forward(heads, constant(x), 2)->value, expect), 1e-12);
}

TEST(Attention, MixedValueDimsRejected) {
  Rng rng(11);
  std::vector<AttentionHead> heads{make_head(4, 4, 2, 2, 2, rng), make_head(4, 4, 4, 2, 2, rng)};
  EXPECT_THROW(multihead_forward(heads, constant(Tensor(2, 4)), 2), ArchitectureError);
}

TEST(Attention, AllHeadsDroppedGivesZeros) {
  Rng rng(11);
  std::vector<AttentionHead> heads{make_head(4, 4, 2, 2, 2, rng)};
  const ArchWeight g[] = {ArchWeight::fixed(0)};
  EXPECT_EQ(multihead_forward(heads, constant(Tensor(2, 4, 1)), 2, g)->value, Tensor(2, 4));
}

TEST(LayerNorm, CenteredMatchesStandardNorm) {
  auto ln = make_layer_norm(5);
  Rng rng(13);
  randomize(ln.alpha, rng);
  randomize(ln.beta, rng);
  const Tensor x = random_input(4, 5, 14);
  auto y = layer_norm_forward(ln, constant(x));
  EXPECT_LT(max_abs_diff(y->value, oracle::layer_norm(x, ln.alpha->value, ln.beta->value, true)),
            1e-12);
}

TEST(LayerNorm, UnitGainRowsHaveZeroMeanUnitVariance) {
  auto ln = make_layer_norm(8);
  auto y = layer_norm_forward(ln, constant(random_input(3, 8, 15)))->value;
  for (std::size_t i = 0; i < 3; ++i) {
    Real m = 0, v = 0;
    for (std::size_t j = 0; j < 8; ++j) m += y(i, j);
    m /= 8;
    for (std::size_t j = 0; j < 8; ++j) v += (y(i, j) - m) * (y(i, j) - m);
    EXPECT_NEAR(m, 0, 1e-12);
    EXPECT_NEAR(v / 8, 1, 1e-9);
  }
}

TEST(LayerNorm, MeanRemovedMatchesRmsNorm) {
  auto ln = make_layer_norm(5);
  Rng rng(16);
  randomize(ln.alpha, rng);
  const Tensor x = random_input(4, 5, 17);
  auto y = layer_norm_forward(ln, constant(x), ArchWeight::fixed(0));
  EXPECT_LT(max_abs_diff(y->value, oracle::layer_norm(x, ln.alpha->value, ln.beta->value, false)),
            1e-12);
}

TEST(LayerNorm, PartialMeanWeight) {
  auto ln = make_layer_norm(2);
  auto y = layer_norm_forward(ln, constant(Tensor::from_rows({{1, 3}})), ArchWeight::fixed(0.5));
  // mu' = 1, centered = (0, 2), sigma = sqrt(2)
  EXPECT_NEAR(y->value(0, 0), 0, 1e-12);
  EXPECT_NEAR(y->value(0, 1), 2 / std::sqrt(2.0), 1e-9);
}

TEST(RelaxedWeights, GradientsMatchFiniteDifferences) {
  Rng rng(21);
  auto head = make_head(4, 4, 4, 2, 2, rng);
  auto ff = make_feedforward(4, 8, 2, Activation::Gelu, rng);
  auto ln = make_layer_norm(4);
  const Tensor x = random_input(6, 4, 22);
  std::vector<Var> w;
  for (Real v : {0.3, 0.8, 0.6, 0.4, 0.7, 0.2, 0.5}) w.push_back(parameter(Tensor::scalar(v)));
  HeadGates g;
  g.sim = {ArchWeight::relaxed(w[0]), ArchWeight::relaxed(w[1])};
  g.value = {ArchWeight::relaxed(w[2]), ArchWeight::relaxed(w[3])};
  const ArchWeight fg[] = {ArchWeight::relaxed(w[4]), ArchWeight::relaxed(w[5])};
  auto h = head_forward(head, constant(x), 3, g);
  auto y = layer_norm_forward(ln, ff_forward(ff, h, fg), ArchWeight::relaxed(w[6]));
  Rng wr(23);
  auto loss = sum(mul(y, constant(random_input(6, 4, 24))));
  for (std::size_t i = 0; i < w.size(); ++i) {
    auto rep = finite_difference_check(loss, w[i], 1e-5, 1e-5);
    EXPECT_TRUE(rep.passed) << "weight " << i << " rel " << rep.max_rel_error;
  }
  auto rep = finite_difference_check(loss, head.sim[0].wq, 1e-5, 1e-5);
  EXPECT_TRUE(rep.passed) << rep.max_rel_error;
}
