#include "tfnas/components.hpp"

#include <cmath>

#include "tfnas/errors.hpp"

namespace tfnas {

namespace {

Var accumulate(Var acc, const Var& term) {
  if (!term) return acc;
  return acc ? add(acc, term) : term;
}

const ArchWeight& gate_at(std::span<const ArchWeight> gates, std::size_t i) {
  static const ArchWeight kOn = ArchWeight::fixed(1);
  return gates.empty() ? kOn : gates[i];
}

void check_gate_count(const char* op, std::span<const ArchWeight> gates, std::size_t n) {
  if (!gates.empty() && gates.size() != n)
    throw ShapeError(std::string(op) + ": " + std::to_string(gates.size()) + " gates for " +
                     std::to_string(n) + " slices");
}

Var zeros(std::size_t rows, std::size_t cols) { return constant(Tensor(rows, cols)); }

}  // namespace

Var apply_weight(const Var& x, const ArchWeight& w) {
  if (!x || w.is_off()) return nullptr;
  if (w.is_relaxed()) return mul_scalar(x, w.var);
  if (w.is_unit()) return x;
  return scale(x, w.value);
}

std::size_t AttentionHead::key_dim() const {
  std::size_t d = 0;
  for (const auto& s : sim) d += s.wq->value.cols();
  return d;
}

std::size_t AttentionHead::value_dim() const {
  std::size_t d = 0;
  for (const auto& s : value) d += s.wv->value.cols();
  return d;
}

Var ff_slice_forward(const FeedForwardSlice& slice, const Var& x, Activation act) {
  if (x->value.cols() != slice.w1->value.rows())
    throw ShapeError("ff_slice_forward: input " + x->value.shape_str() + " vs W1 " +
                     slice.w1->value.shape_str());
  return matmul(activate(add_row(matmul(x, slice.w1), slice.b1), act), slice.w2);
}

Var ff_forward(const FeedForward& ff, const Var& x, std::span<const ArchWeight> gates) {
  check_gate_count("ff_forward", gates, ff.slices.size());
  Var acc;
  for (std::size_t i = 0; i < ff.slices.size(); ++i) {
    const auto& g = gate_at(gates, i);
    if (g.is_off()) continue;
    acc = accumulate(acc, apply_weight(ff_slice_forward(ff.slices[i], x, ff.activation), g));
  }
  if (!acc) acc = zeros(x->value.rows(), x->value.cols());
  return add_row(acc, ff.b2);
}

Var sim_forward(std::span<const SimSlice> slices, const Var& x, std::size_t seq_len,
                std::span<const ArchWeight> gates) {
  check_gate_count("sim_forward", gates, slices.size());
  Var acc;
  for (std::size_t i = 0; i < slices.size(); ++i) {
    const auto& g = gate_at(gates, i);
    if (g.is_off()) continue;
    const auto& s = slices[i];
    if (x->value.cols() != s.wq->value.rows() || s.wq->value.cols() != s.wk->value.cols())
      throw ShapeError("sim_forward: input " + x->value.shape_str() + " vs Wq " +
                       s.wq->value.shape_str() + ", Wk " + s.wk->value.shape_str());
    acc = accumulate(acc, apply_weight(seq_scores(matmul(x, s.wq), matmul(x, s.wk), seq_len), g));
  }
  if (!acc) {
    if (seq_len == 0 || x->value.rows() % seq_len != 0)
      throw ShapeError("sim_forward: rows not a multiple of sequence length");
    acc = zeros(x->value.rows(), seq_len);
  }
  return acc;
}

Var head_output(const AttentionHead& head, const Var& x, std::size_t seq_len,
                const HeadGates& gates) {
  check_gate_count("head_forward(value)", gates.value, head.value.size());
  bool any_value = false;
  for (std::size_t i = 0; i < head.value.size(); ++i)
    any_value = any_value || !gate_at(gates.value, i).is_off();
  if (!any_value) return nullptr;

  const Var scores = sim_forward(head.sim, x, seq_len, gates.sim);
  const Var probs = softmax_rows(scale(scores, head.score_scale));
  Var acc;
  for (std::size_t i = 0; i < head.value.size(); ++i) {
    const auto& g = gate_at(gates.value, i);
    if (g.is_off()) continue;
    const auto& s = head.value[i];
    if (x->value.cols() != s.wv->value.rows())
      throw ShapeError("head_forward: input " + x->value.shape_str() + " vs Wv " +
                       s.wv->value.shape_str());
    acc = accumulate(acc, apply_weight(matmul(seq_mix(probs, matmul(x, s.wv), seq_len), s.wo), g));
  }
  return acc;
}

Var head_forward(const AttentionHead& head, const Var& x, std::size_t seq_len,
                 const HeadGates& gates) {
  Var out = head_output(head, x, seq_len, gates);
  if (!out) throw ArchitectureError("head_forward: retained head has no retained value slice");
  return out;
}

Var multihead_forward(std::span<const AttentionHead> heads, const Var& x, std::size_t seq_len,
                      std::span<const ArchWeight> head_gates,
                      std::span<const HeadGates> slice_gates) {
  check_gate_count("multihead_forward", head_gates, heads.size());
  if (!slice_gates.empty() && slice_gates.size() != heads.size())
    throw ShapeError("multihead_forward: slice gate count mismatch");
  for (const auto& h : heads)
    if (h.value_dim() != heads.front().value_dim())
      throw ArchitectureError("multihead_forward: heads with different d_v (" +
                              std::to_string(h.value_dim()) + " vs " +
                              std::to_string(heads.front().value_dim()) + ")");
  static const HeadGates kAll;
  Var acc;
  for (std::size_t i = 0; i < heads.size(); ++i) {
    const auto& g = gate_at(head_gates, i);
    if (g.is_off()) continue;
    const HeadGates& sg = slice_gates.empty() ? kAll : slice_gates[i];
    acc = accumulate(acc, apply_weight(head_forward(heads[i], x, seq_len, sg), g));
  }
  if (!acc) acc = zeros(x->value.rows(), x->value.cols());
  return acc;
}

Var layer_norm_forward(const LayerNorm& ln, const Var& x, const ArchWeight& mean_weight) {
  if (ln.alpha->value.cols() != x->value.cols())
    throw ShapeError("layer_norm_forward: input " + x->value.shape_str() + " vs alpha " +
                     ln.alpha->value.shape_str());
  Var centered = x;
  if (Var mu = apply_weight(row_mean(x), mean_weight)) centered = sub_col(x, mu);
  const Var sigma = sqrt(add_const(row_mean(mul(centered, centered)), kLayerNormEps));
  return add_row(mul_row(div_col(centered, sigma), ln.alpha), ln.beta);
}

Tensor random_matrix(std::size_t rows, std::size_t cols, Rng& rng, Real scale) {
  Tensor t(rows, cols);
  const Real sd = scale / std::sqrt(static_cast<Real>(rows));
  for (auto& v : t.data()) v = sd * static_cast<Real>(rng.normal());
  return t;
}

FeedForward make_feedforward(std::size_t hidden, std::size_t ff_dim, std::size_t slices,
                             Activation act, Rng& rng, Real init_scale) {
  if (slices == 0 || ff_dim % slices != 0)
    throw ConfigError("feedforward dim " + std::to_string(ff_dim) + " not divisible by " +
                      std::to_string(slices));
  FeedForward ff;
  ff.activation = act;
  const std::size_t w = ff_dim / slices;
  for (std::size_t i = 0; i < slices; ++i) {
    FeedForwardSlice s;
    s.w1 = parameter(random_matrix(hidden, w, rng, init_scale));
    s.b1 = parameter(Tensor(1, w));
    // fan-in of the second layer is the full ff_dim
    s.w2 = parameter(random_matrix(w, hidden, rng,
                                   init_scale / std::sqrt(static_cast<Real>(slices))));
    ff.slices.push_back(std::move(s));
  }
  ff.b2 = parameter(Tensor(1, hidden));
  return ff;
}

AttentionHead make_head(std::size_t hidden, std::size_t key_dim, std::size_t value_dim,
                        std::size_t sim_slices, std::size_t value_slices, Rng& rng,
                        Real init_scale) {
  if (sim_slices == 0 || key_dim % sim_slices != 0)
    throw ConfigError("key dim not divisible by sim slice count");
  if (value_slices == 0 || value_dim % value_slices != 0)
    throw ConfigError("value dim not divisible by value slice count");
  AttentionHead h;
  for (std::size_t i = 0; i < sim_slices; ++i)
    h.sim.push_back({parameter(random_matrix(hidden, key_dim / sim_slices, rng, init_scale)),
                     parameter(random_matrix(hidden, key_dim / sim_slices, rng, init_scale))});
  const Real wo_scale = init_scale / std::sqrt(static_cast<Real>(value_slices));
  for (std::size_t i = 0; i < value_slices; ++i)
    h.value.push_back(
        {parameter(random_matrix(hidden, value_dim / value_slices, rng, init_scale)),
         parameter(random_matrix(value_dim / value_slices, hidden, rng, wo_scale))});
  h.score_scale = Real(1) / std::sqrt(static_cast<Real>(key_dim));
  return h;
}

LayerNorm make_layer_norm(std::size_t hidden) {
  return {parameter(Tensor(1, hidden, Real(1))), parameter(Tensor(1, hidden))};
}

}  // namespace tfnas
