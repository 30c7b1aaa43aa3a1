#pragma once

#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "tfnas/rng.hpp"
#include "tfnas/tensor.hpp"

namespace tfnas {

struct Node;
using Var = std::shared_ptr<Node>;

// One value on the reverse-mode tape. Non-leaf nodes keep their parents and a
// pair of closures so the graph can be re-evaluated after a leaf changes
// (finite differences) and differentiated.
struct Node {
  Tensor value;
  Tensor grad;
  std::vector<Var> parents;
  std::function<void(Node&)> forward;
  std::function<void(Node&)> backward;
  const char* op = "leaf";
  bool requires_grad = false;

  bool is_leaf() const { return !forward; }
  // Gradient storage, zero-initialised on first use.
  Tensor& grad_buffer();
  void zero_grad() { grad = Tensor(); }
};

// Disables tape recording on the current thread for its lifetime. Values are
// still computed; parents and closures are dropped as soon as a node is built.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

bool grad_enabled();

enum class Activation { Gelu, Relu };

Activation parse_activation(const std::string& name);
std::string to_string(Activation a);

// Leaves.
Var constant(Tensor value);
Var parameter(Tensor value);

// Primitives. Every shape violation raises ShapeError naming the op.
Var matmul(const Var& a, const Var& b);
Var transpose(const Var& a);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, Real k);
Var add_const(const Var& a, Real k);
// a * s for a [1,1] node s.
Var mul_scalar(const Var& a, const Var& s);
// Broadcast a [1,c] row over every row of a.
Var add_row(const Var& a, const Var& row);
Var mul_row(const Var& a, const Var& row);
// Broadcast an [r,1] column over every column of a.
Var sub_col(const Var& a, const Var& col);
Var div_col(const Var& a, const Var& col);
Var sqrt(const Var& a);
Var abs(const Var& a);
Var row_mean(const Var& a);
Var row_var(const Var& a);
Var softmax_rows(const Var& a);
Var gelu(const Var& a);
Var relu(const Var& a);
Var activate(const Var& a, Activation act);
Var concat_cols(std::span<const Var> parts);
Var sum(const Var& a);
Var mean(const Var& a);

// Packed-sequence primitives. Rows are B consecutive sequences of length
// seq_len; the block structure keeps tokens from attending across examples.
// seq_scores(Q, K)[b*l+i, j] = <Q[b*l+i], K[b*l+j]>
Var seq_scores(const Var& q, const Var& k, std::size_t seq_len);
// seq_mix(P, V)[b*l+i] = sum_j P[b*l+i, j] V[b*l+j]
Var seq_mix(const Var& p, const Var& v, std::size_t seq_len);
// Mean over the rows of each sequence: [B*l, c] -> [B, c].
Var seq_mean_pool(const Var& a, std::size_t seq_len);

Var embedding(const Var& table, std::vector<int> ids);
// Weighted mean of per-row softmax cross-entropy; weights default to 1.
Var cross_entropy(const Var& logits, std::vector<int> targets, std::vector<Real> weights = {});
Var dropout(const Var& a, Real p, Rng& rng);

// Recomputes every non-leaf node reachable from root in topological order and
// returns the root value. Raises NumericError on non-finite leaves.
const Tensor& evaluate(const Var& root);

// Accumulates d(root)/d(node) into every reachable node requiring a gradient.
// Root must be [1,1].
void backward(const Var& root);

// Gradients of root with respect to the given leaves. Leaf gradients are reset
// first; a leaf the root does not depend on gets a zero tensor.
std::vector<Tensor> gradients(const Var& root, std::span<const Var> leaves);

struct FiniteDifferenceReport {
  bool passed = false;
  Real max_rel_error = 0;
  Real max_abs_error = 0;
  std::size_t entries = 0;
};

// Central differences over every entry of leaf, compared with backward().
// Relative error is |num - ana| / max(1, |num|, |ana|).
FiniteDifferenceReport finite_difference_check(const Var& root, const Var& leaf, Real step,
                                               Real tolerance);

}  // namespace tfnas
