#pragma once

#include <span>
#include <vector>

#include "tfnas/autodiff.hpp"

namespace tfnas {

// Multiplier attached to a sub-component output or a connection: either a
// fixed number or a relaxed trainable [1,1] parameter.
struct ArchWeight {
  Real value = 1;
  Var var;

  static ArchWeight fixed(Real v) { return {v, nullptr}; }
  static ArchWeight relaxed(Var v) { return {v->value.item(), std::move(v)}; }

  bool is_relaxed() const { return var != nullptr; }
  // Dropped: the component is skipped entirely, not multiplied by zero.
  bool is_off() const { return !var && value == Real(0); }
  bool is_unit() const { return !var && value == Real(1); }
  Real current() const { return var ? var->value.item() : value; }
};

// x scaled by w; a unit weight returns x unchanged, a dropped weight nullptr.
Var apply_weight(const Var& x, const ArchWeight& w);

// One of the m equal slices of a two-layer feedforward network. The second
// layer bias belongs to the parent FeedForward and is added once.
struct FeedForwardSlice {
  Var w1;  // [h, d/m]
  Var b1;  // [1, d/m]
  Var w2;  // [d/m, h]

  std::size_t width() const { return w1->value.cols(); }
};

struct FeedForward {
  std::vector<FeedForwardSlice> slices;
  Var b2;  // [1, h]
  Activation activation = Activation::Gelu;
};

struct SimSlice {
  Var wq;  // [h, d_k/m]
  Var wk;  // [h, d_k/m]
};

struct ValueSlice {
  Var wv;  // [h, d_v/m]
  Var wo;  // [d_v/m, h]
};

struct AttentionHead {
  std::vector<SimSlice> sim;
  std::vector<ValueSlice> value;
  // Softmax temperature 1/sqrt(d_k). Fixed at the full key dimension while
  // searching; compacted heads fold the change into wq.
  Real score_scale = 1;

  std::size_t key_dim() const;
  std::size_t value_dim() const;
};

struct LayerNorm {
  Var alpha;  // [1, h]
  Var beta;   // [1, h]
};

inline constexpr Real kLayerNormEps = Real(1e-12);

// Per-slice gates of one head; empty vectors keep every slice.
struct HeadGates {
  std::vector<ArchWeight> sim;
  std::vector<ArchWeight> value;
};

// Dense_h(Activation(Dense_{d/m}(x))) for one slice, without the shared b2.
Var ff_slice_forward(const FeedForwardSlice& slice, const Var& x, Activation act);

// sum_i w_i * ff_slice_forward(slice_i, x) + b2. Dropped slices are skipped.
Var ff_forward(const FeedForward& ff, const Var& x, std::span<const ArchWeight> gates = {});

// sum_i w_i (x Wq_i)(x Wk_i)^T per packed sequence; the empty sum is zero.
Var sim_forward(std::span<const SimSlice> slices, const Var& x, std::size_t seq_len,
                std::span<const ArchWeight> gates = {});

// Dense_h(Softmax(scale * Sim(x)) Dense_{d_v}(x)) as a sum over retained value
// slices. Raises ArchitectureError when every value slice is dropped.
Var head_forward(const AttentionHead& head, const Var& x, std::size_t seq_len,
                 const HeadGates& gates = {});

// Same as head_forward but returns nullptr for a head without value slices.
Var head_output(const AttentionHead& head, const Var& x, std::size_t seq_len,
                const HeadGates& gates);

// Sum of gated heads (no output bias). Heads must share d_v.
Var multihead_forward(std::span<const AttentionHead> heads, const Var& x, std::size_t seq_len,
                      std::span<const ArchWeight> head_gates = {},
                      std::span<const HeadGates> slice_gates = {});

// Per row: mu' = w * mean(row); sigma = sqrt(mean((row - mu')^2) + eps);
// out = alpha * (row - mu') / sigma + beta.
Var layer_norm_forward(const LayerNorm& ln, const Var& x,
                       const ArchWeight& mean_weight = ArchWeight::fixed(1));

// Constructors with the initialisation used by the supernet.
FeedForward make_feedforward(std::size_t hidden, std::size_t ff_dim, std::size_t slices,
                             Activation act, Rng& rng, Real init_scale = 1);
AttentionHead make_head(std::size_t hidden, std::size_t key_dim, std::size_t value_dim,
                        std::size_t sim_slices, std::size_t value_slices, Rng& rng,
                        Real init_scale = 1);
LayerNorm make_layer_norm(std::size_t hidden);

// Gaussian matrix with standard deviation scale / sqrt(rows).
Tensor random_matrix(std::size_t rows, std::size_t cols, Rng& rng, Real scale = 1);

}  // namespace tfnas
