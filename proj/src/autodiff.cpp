#include "tfnas/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <unordered_set>

#include "tfnas/errors.hpp"

namespace tfnas {

namespace {

thread_local bool g_grad_enabled = true;

[[noreturn]] void shape_fail(const char* op, const Tensor& a, const Tensor& b) {
  throw ShapeError(std::string(op) + ": incompatible shapes " + a.shape_str() + " and " +
                   b.shape_str());
}

Var make_node(const char* op, std::vector<Var> parents, std::function<void(Node&)> fwd,
              std::function<void(Node&)> bwd) {
  auto n = std::make_shared<Node>();
  n->op = op;
  n->parents = std::move(parents);
  fwd(*n);
  const bool needs = g_grad_enabled && std::any_of(n->parents.begin(), n->parents.end(),
                                                   [](const Var& p) { return p->requires_grad; });
  if (g_grad_enabled) {
    n->requires_grad = needs;
    n->forward = std::move(fwd);
    n->backward = std::move(bwd);
  } else {
    n->parents.clear();
  }
  return n;
}

const Tensor& V(const Node& n, std::size_t i) { return n.parents[i]->value; }

// Gradient buffer of parent i, or nullptr when that parent needs no gradient.
Tensor* G(Node& n, std::size_t i) {
  auto& p = n.parents[i];
  return p->requires_grad ? &p->grad_buffer() : nullptr;
}

// c += a * b  ([m,k] x [k,n])
void gemm_acc(const Tensor& a, const Tensor& b, Tensor& c) {
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  for (std::size_t i = 0; i < m; ++i) {
    Real* crow = c.row(i);
    const Real* arow = a.row(i);
    for (std::size_t p = 0; p < k; ++p) {
      const Real av = arow[p];
      if (av == Real(0)) continue;
      const Real* brow = b.row(p);
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// c += a * b^T  ([m,k] x [n,k]^T)
void gemm_nt_acc(const Tensor& a, const Tensor& b, Tensor& c) {
  const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
  for (std::size_t i = 0; i < m; ++i) {
    const Real* arow = a.row(i);
    Real* crow = c.row(i);
    for (std::size_t j = 0; j < n; ++j) {
      const Real* brow = b.row(j);
      Real s = 0;
      for (std::size_t p = 0; p < k; ++p) s += arow[p] * brow[p];
      crow[j] += s;
    }
  }
}

// c += a^T * b  ([k,m]^T x [k,n])
void gemm_tn_acc(const Tensor& a, const Tensor& b, Tensor& c) {
  const std::size_t k = a.rows(), m = a.cols(), n = b.cols();
  for (std::size_t p = 0; p < k; ++p) {
    const Real* arow = a.row(p);
    const Real* brow = b.row(p);
    for (std::size_t i = 0; i < m; ++i) {
      const Real av = arow[i];
      if (av == Real(0)) continue;
      Real* crow = c.row(i);
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

void require_same(const char* op, const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) shape_fail(op, a, b);
}

void check_packed(const char* op, const Tensor& a, std::size_t seq_len) {
  if (seq_len == 0 || a.rows() % seq_len != 0) {
    throw ShapeError(std::string(op) + ": " + std::to_string(a.rows()) +
                     " rows is not a multiple of sequence length " + std::to_string(seq_len));
  }
}

constexpr Real kGeluC = Real(0.7978845608028654);  // sqrt(2/pi)
constexpr Real kGeluA = Real(0.044715);

}  // namespace

Tensor& Node::grad_buffer() {
  if (grad.empty() && !value.empty()) grad = Tensor(value.rows(), value.cols());
  return grad;
}

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }
bool grad_enabled() { return g_grad_enabled; }

Activation parse_activation(const std::string& name) {
  if (name == "gelu") return Activation::Gelu;
  if (name == "relu") return Activation::Relu;
  throw ConfigError("unknown activation '" + name + "' (expected gelu or relu)");
}

std::string to_string(Activation a) { return a == Activation::Gelu ? "gelu" : "relu"; }

Var constant(Tensor value) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  return n;
}

Var parameter(Tensor value) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->requires_grad = true;
  return n;
}

Var matmul(const Var& a, const Var& b) {
  if (a->value.cols() != b->value.rows()) shape_fail("matmul", a->value, b->value);
  return make_node(
      "matmul", {a, b},
      [](Node& n) {
        n.value = Tensor(V(n, 0).rows(), V(n, 1).cols());
        gemm_acc(V(n, 0), V(n, 1), n.value);
      },
      [](Node& n) {
        if (auto* ga = G(n, 0)) gemm_nt_acc(n.grad, V(n, 1), *ga);
        if (auto* gb = G(n, 1)) gemm_tn_acc(V(n, 0), n.grad, *gb);
      });
}

Var transpose(const Var& a) {
  return make_node(
      "transpose", {a},
      [](Node& n) {
        const Tensor& x = V(n, 0);
        n.value = Tensor(x.cols(), x.rows());
        for (std::size_t i = 0; i < x.rows(); ++i)
          for (std::size_t j = 0; j < x.cols(); ++j) n.value(j, i) = x(i, j);
      },
      [](Node& n) {
        if (auto* ga = G(n, 0))
          for (std::size_t i = 0; i < ga->rows(); ++i)
            for (std::size_t j = 0; j < ga->cols(); ++j) (*ga)(i, j) += n.grad(j, i);
      });
}

Var add(const Var& a, const Var& b) {
  require_same("add", a->value, b->value);
  return make_node(
      "add", {a, b},
      [](Node& n) {
        n.value = V(n, 0);
        auto o = n.value.data();
        auto y = V(n, 1).data();
        for (std::size_t i = 0; i < o.size(); ++i) o[i] += y[i];
      },
      [](Node& n) {
        for (std::size_t p = 0; p < 2; ++p)
          if (auto* g = G(n, p))
            for (std::size_t i = 0; i < g->size(); ++i) g->data()[i] += n.grad.data()[i];
      });
}

Var sub(const Var& a, const Var& b) {
  require_same("sub", a->value, b->value);
  return make_node(
      "sub", {a, b},
      [](Node& n) {
        n.value = V(n, 0);
        auto o = n.value.data();
        auto y = V(n, 1).data();
        for (std::size_t i = 0; i < o.size(); ++i) o[i] -= y[i];
      },
      [](Node& n) {
        if (auto* g = G(n, 0))
          for (std::size_t i = 0; i < g->size(); ++i) g->data()[i] += n.grad.data()[i];
        if (auto* g = G(n, 1))
          for (std::size_t i = 0; i < g->size(); ++i) g->data()[i] -= n.grad.data()[i];
      });
}

Var mul(const Var& a, const Var& b) {
  require_same("mul", a->value, b->value);
  return make_node(
      "mul", {a, b},
      [](Node& n) {
        n.value = V(n, 0);
        auto o = n.value.data();
        auto y = V(n, 1).data();
        for (std::size_t i = 0; i < o.size(); ++i) o[i] *= y[i];
      },
      [](Node& n) {
        auto g = n.grad.data();
        if (auto* ga = G(n, 0))
          for (std::size_t i = 0; i < g.size(); ++i) ga->data()[i] += g[i] * V(n, 1).data()[i];
        if (auto* gb = G(n, 1))
          for (std::size_t i = 0; i < g.size(); ++i) gb->data()[i] += g[i] * V(n, 0).data()[i];
      });
}

Var scale(const Var& a, Real k) {
  return make_node(
      "scale", {a},
      [k](Node& n) {
        n.value = V(n, 0);
        for (auto& v : n.value.data()) v *= k;
      },
      [k](Node& n) {
        if (auto* g = G(n, 0))
          for (std::size_t i = 0; i < g->size(); ++i) g->data()[i] += k * n.grad.data()[i];
      });
}

Var add_const(const Var& a, Real k) {
  return make_node(
      "add_const", {a},
      [k](Node& n) {
        n.value = V(n, 0);
        for (auto& v : n.value.data()) v += k;
      },
      [](Node& n) {
        if (auto* g = G(n, 0))
          for (std::size_t i = 0; i < g->size(); ++i) g->data()[i] += n.grad.data()[i];
      });
}

Var mul_scalar(const Var& a, const Var& s) {
  if (s->value.rows() != 1 || s->value.cols() != 1) shape_fail("mul_scalar", a->value, s->value);
  return make_node(
      "mul_scalar", {a, s},
      [](Node& n) {
        const Real k = V(n, 1).item();
        n.value = V(n, 0);
        for (auto& v : n.value.data()) v *= k;
      },
      [](Node& n) {
        const Real k = V(n, 1).item();
        auto g = n.grad.data();
        if (auto* ga = G(n, 0))
          for (std::size_t i = 0; i < g.size(); ++i) ga->data()[i] += k * g[i];
        if (auto* gs = G(n, 1)) {
          Real acc = 0;
          auto x = V(n, 0).data();
          for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * x[i];
          gs->data()[0] += acc;
        }
      });
}

Var add_row(const Var& a, const Var& row) {
  if (row->value.rows() != 1 || row->value.cols() != a->value.cols())
    shape_fail("add_row", a->value, row->value);
  return make_node(
      "add_row", {a, row},
      [](Node& n) {
        n.value = V(n, 0);
        const Real* b = V(n, 1).row(0);
        for (std::size_t r = 0; r < n.value.rows(); ++r) {
          Real* o = n.value.row(r);
          for (std::size_t c = 0; c < n.value.cols(); ++c) o[c] += b[c];
        }
      },
      [](Node& n) {
        if (auto* ga = G(n, 0))
          for (std::size_t i = 0; i < ga->size(); ++i) ga->data()[i] += n.grad.data()[i];
        if (auto* gb = G(n, 1))
          for (std::size_t r = 0; r < n.grad.rows(); ++r)
            for (std::size_t c = 0; c < n.grad.cols(); ++c) (*gb)(0, c) += n.grad(r, c);
      });
}

Var mul_row(const Var& a, const Var& row) {
  if (row->value.rows() != 1 || row->value.cols() != a->value.cols())
    shape_fail("mul_row", a->value, row->value);
  return make_node(
      "mul_row", {a, row},
      [](Node& n) {
        n.value = V(n, 0);
        const Real* g = V(n, 1).row(0);
        for (std::size_t r = 0; r < n.value.rows(); ++r) {
          Real* o = n.value.row(r);
          for (std::size_t c = 0; c < n.value.cols(); ++c) o[c] *= g[c];
        }
      },
      [](Node& n) {
        const Tensor& x = V(n, 0);
        const Tensor& g = V(n, 1);
        if (auto* ga = G(n, 0))
          for (std::size_t r = 0; r < x.rows(); ++r)
            for (std::size_t c = 0; c < x.cols(); ++c) (*ga)(r, c) += n.grad(r, c) * g(0, c);
        if (auto* gg = G(n, 1))
          for (std::size_t r = 0; r < x.rows(); ++r)
            for (std::size_t c = 0; c < x.cols(); ++c) (*gg)(0, c) += n.grad(r, c) * x(r, c);
      });
}

Var sub_col(const Var& a, const Var& col) {
  if (col->value.cols() != 1 || col->value.rows() != a->value.rows())
    shape_fail("sub_col", a->value, col->value);
  return make_node(
      "sub_col", {a, col},
      [](Node& n) {
        n.value = V(n, 0);
        for (std::size_t r = 0; r < n.value.rows(); ++r) {
          const Real m = V(n, 1)(r, 0);
          Real* o = n.value.row(r);
          for (std::size_t c = 0; c < n.value.cols(); ++c) o[c] -= m;
        }
      },
      [](Node& n) {
        if (auto* ga = G(n, 0))
          for (std::size_t i = 0; i < ga->size(); ++i) ga->data()[i] += n.grad.data()[i];
        if (auto* gc = G(n, 1))
          for (std::size_t r = 0; r < n.grad.rows(); ++r) {
            Real s = 0;
            for (std::size_t c = 0; c < n.grad.cols(); ++c) s += n.grad(r, c);
            (*gc)(r, 0) -= s;
          }
      });
}

Var div_col(const Var& a, const Var& col) {
  if (col->value.cols() != 1 || col->value.rows() != a->value.rows())
    shape_fail("div_col", a->value, col->value);
  return make_node(
      "div_col", {a, col},
      [](Node& n) {
        n.value = V(n, 0);
        for (std::size_t r = 0; r < n.value.rows(); ++r) {
          const Real d = V(n, 1)(r, 0);
          Real* o = n.value.row(r);
          for (std::size_t c = 0; c < n.value.cols(); ++c) o[c] /= d;
        }
      },
      [](Node& n) {
        const Tensor& x = V(n, 0);
        const Tensor& d = V(n, 1);
        auto* ga = G(n, 0);
        auto* gd = G(n, 1);
        for (std::size_t r = 0; r < x.rows(); ++r) {
          const Real dr = d(r, 0);
          Real s = 0;
          for (std::size_t c = 0; c < x.cols(); ++c) {
            if (ga) (*ga)(r, c) += n.grad(r, c) / dr;
            s += n.grad(r, c) * x(r, c);
          }
          if (gd) (*gd)(r, 0) -= s / (dr * dr);
        }
      });
}

Var sqrt(const Var& a) {
  return make_node(
      "sqrt", {a},
      [](Node& n) {
        n.value = V(n, 0);
        for (auto& v : n.value.data()) v = std::sqrt(v);
      },
      [](Node& n) {
        if (auto* g = G(n, 0))
          for (std::size_t i = 0; i < g->size(); ++i)
            g->data()[i] += n.grad.data()[i] / (Real(2) * n.value.data()[i]);
      });
}

Var abs(const Var& a) {
  return make_node(
      "abs", {a},
      [](Node& n) {
        n.value = V(n, 0);
        for (auto& v : n.value.data()) v = std::abs(v);
      },
      [](Node& n) {
        // Subgradient 0 at 0.
        if (auto* g = G(n, 0))
          for (std::size_t i = 0; i < g->size(); ++i) {
            const Real x = V(n, 0).data()[i];
            const Real s = x > 0 ? Real(1) : (x < 0 ? Real(-1) : Real(0));
            g->data()[i] += s * n.grad.data()[i];
          }
      });
}

Var row_mean(const Var& a) {
  return make_node(
      "row_mean", {a},
      [](Node& n) {
        const Tensor& x = V(n, 0);
        n.value = Tensor(x.rows(), 1);
        for (std::size_t r = 0; r < x.rows(); ++r) {
          Real s = 0;
          for (std::size_t c = 0; c < x.cols(); ++c) s += x(r, c);
          n.value(r, 0) = s / static_cast<Real>(x.cols());
        }
      },
      [](Node& n) {
        if (auto* g = G(n, 0)) {
          const Real inv = Real(1) / static_cast<Real>(g->cols());
          for (std::size_t r = 0; r < g->rows(); ++r)
            for (std::size_t c = 0; c < g->cols(); ++c) (*g)(r, c) += n.grad(r, 0) * inv;
        }
      });
}

Var row_var(const Var& a) {
  return make_node(
      "row_var", {a},
      [](Node& n) {
        const Tensor& x = V(n, 0);
        n.value = Tensor(x.rows(), 1);
        const Real inv = Real(1) / static_cast<Real>(x.cols());
        for (std::size_t r = 0; r < x.rows(); ++r) {
          Real m = 0;
          for (std::size_t c = 0; c < x.cols(); ++c) m += x(r, c);
          m *= inv;
          Real v = 0;
          for (std::size_t c = 0; c < x.cols(); ++c) v += (x(r, c) - m) * (x(r, c) - m);
          n.value(r, 0) = v * inv;
        }
      },
      [](Node& n) {
        if (auto* g = G(n, 0)) {
          const Tensor& x = V(n, 0);
          const Real inv = Real(1) / static_cast<Real>(x.cols());
          for (std::size_t r = 0; r < x.rows(); ++r) {
            Real m = 0;
            for (std::size_t c = 0; c < x.cols(); ++c) m += x(r, c);
            m *= inv;
            for (std::size_t c = 0; c < x.cols(); ++c)
              (*g)(r, c) += n.grad(r, 0) * Real(2) * (x(r, c) - m) * inv;
          }
        }
      });
}

Var softmax_rows(const Var& a) {
  return make_node(
      "softmax", {a},
      [](Node& n) {
        n.value = V(n, 0);
        for (std::size_t r = 0; r < n.value.rows(); ++r) {
          Real* o = n.value.row(r);
          const Real mx = *std::max_element(o, o + n.value.cols());
          Real s = 0;
          for (std::size_t c = 0; c < n.value.cols(); ++c) {
            o[c] = std::exp(o[c] - mx);
            s += o[c];
          }
          for (std::size_t c = 0; c < n.value.cols(); ++c) o[c] /= s;
        }
      },
      [](Node& n) {
        if (auto* g = G(n, 0))
          for (std::size_t r = 0; r < n.value.rows(); ++r) {
            const Real* y = n.value.row(r);
            const Real* dy = n.grad.row(r);
            Real dot = 0;
            for (std::size_t c = 0; c < n.value.cols(); ++c) dot += y[c] * dy[c];
            Real* gr = g->row(r);
            for (std::size_t c = 0; c < n.value.cols(); ++c) gr[c] += y[c] * (dy[c] - dot);
          }
      });
}

Var gelu(const Var& a) {
  return make_node(
      "gelu", {a},
      [](Node& n) {
        n.value = V(n, 0);
        for (auto& x : n.value.data()) {
          const Real t = std::tanh(kGeluC * (x + kGeluA * x * x * x));
          x = Real(0.5) * x * (Real(1) + t);
        }
      },
      [](Node& n) {
        if (auto* g = G(n, 0))
          for (std::size_t i = 0; i < g->size(); ++i) {
            const Real x = V(n, 0).data()[i];
            const Real t = std::tanh(kGeluC * (x + kGeluA * x * x * x));
            const Real dt = (Real(1) - t * t) * kGeluC * (Real(1) + Real(3) * kGeluA * x * x);
            g->data()[i] += n.grad.data()[i] * (Real(0.5) * (Real(1) + t) + Real(0.5) * x * dt);
          }
      });
}

Var relu(const Var& a) {
  return make_node(
      "relu", {a},
      [](Node& n) {
        n.value = V(n, 0);
        for (auto& x : n.value.data()) x = x > 0 ? x : Real(0);
      },
      [](Node& n) {
        if (auto* g = G(n, 0))
          for (std::size_t i = 0; i < g->size(); ++i)
            if (V(n, 0).data()[i] > 0) g->data()[i] += n.grad.data()[i];
      });
}

Var activate(const Var& a, Activation act) { return act == Activation::Gelu ? gelu(a) : relu(a); }

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  for (const auto& p : parts)
    if (p->value.rows() != parts.front()->value.rows())
      shape_fail("concat_cols", parts.front()->value, p->value);
  return make_node(
      "concat_cols", std::vector<Var>(parts.begin(), parts.end()),
      [](Node& n) {
        std::vector<Tensor> vals;
        vals.reserve(n.parents.size());
        for (const auto& p : n.parents) vals.push_back(p->value);
        n.value = hconcat(vals);
      },
      [](Node& n) {
        std::size_t off = 0;
        for (std::size_t p = 0; p < n.parents.size(); ++p) {
          const std::size_t w = V(n, p).cols();
          if (auto* g = G(n, p))
            for (std::size_t r = 0; r < n.grad.rows(); ++r)
              for (std::size_t c = 0; c < w; ++c) (*g)(r, c) += n.grad(r, off + c);
          off += w;
        }
      });
}

Var sum(const Var& a) {
  return make_node(
      "sum", {a}, [](Node& n) { n.value = Tensor::scalar(tfnas::sum(V(n, 0))); },
      [](Node& n) {
        if (auto* g = G(n, 0)) {
          const Real d = n.grad.item();
          for (auto& v : g->data()) v += d;
        }
      });
}

Var mean(const Var& a) { return scale(sum(a), Real(1) / static_cast<Real>(a->value.size())); }

Var seq_scores(const Var& q, const Var& k, std::size_t seq_len) {
  require_same("seq_scores", q->value, k->value);
  check_packed("seq_scores", q->value, seq_len);
  return make_node(
      "seq_scores", {q, k},
      [seq_len](Node& n) {
        const Tensor& Q = V(n, 0);
        const Tensor& K = V(n, 1);
        const std::size_t d = Q.cols();
        n.value = Tensor(Q.rows(), seq_len);
        for (std::size_t base = 0; base < Q.rows(); base += seq_len)
          for (std::size_t i = 0; i < seq_len; ++i) {
            const Real* qi = Q.row(base + i);
            Real* o = n.value.row(base + i);
            for (std::size_t j = 0; j < seq_len; ++j) {
              const Real* kj = K.row(base + j);
              Real s = 0;
              for (std::size_t c = 0; c < d; ++c) s += qi[c] * kj[c];
              o[j] = s;
            }
          }
      },
      [seq_len](Node& n) {
        const Tensor& Q = V(n, 0);
        const Tensor& K = V(n, 1);
        auto* gq = G(n, 0);
        auto* gk = G(n, 1);
        const std::size_t d = Q.cols();
        for (std::size_t base = 0; base < Q.rows(); base += seq_len)
          for (std::size_t i = 0; i < seq_len; ++i)
            for (std::size_t j = 0; j < seq_len; ++j) {
              const Real gs = n.grad(base + i, j);
              if (gs == Real(0)) continue;
              if (gq) {
                Real* o = gq->row(base + i);
                const Real* kj = K.row(base + j);
                for (std::size_t c = 0; c < d; ++c) o[c] += gs * kj[c];
              }
              if (gk) {
                Real* o = gk->row(base + j);
                const Real* qi = Q.row(base + i);
                for (std::size_t c = 0; c < d; ++c) o[c] += gs * qi[c];
              }
            }
      });
}

Var seq_mix(const Var& p, const Var& v, std::size_t seq_len) {
  if (p->value.rows() != v->value.rows() || p->value.cols() != seq_len)
    shape_fail("seq_mix", p->value, v->value);
  check_packed("seq_mix", v->value, seq_len);
  return make_node(
      "seq_mix", {p, v},
      [seq_len](Node& n) {
        const Tensor& P = V(n, 0);
        const Tensor& Vv = V(n, 1);
        const std::size_t d = Vv.cols();
        n.value = Tensor(Vv.rows(), d);
        for (std::size_t base = 0; base < Vv.rows(); base += seq_len)
          for (std::size_t i = 0; i < seq_len; ++i) {
            Real* o = n.value.row(base + i);
            for (std::size_t j = 0; j < seq_len; ++j) {
              const Real pij = P(base + i, j);
              const Real* vj = Vv.row(base + j);
              for (std::size_t c = 0; c < d; ++c) o[c] += pij * vj[c];
            }
          }
      },
      [seq_len](Node& n) {
        const Tensor& P = V(n, 0);
        const Tensor& Vv = V(n, 1);
        auto* gp = G(n, 0);
        auto* gv = G(n, 1);
        const std::size_t d = Vv.cols();
        for (std::size_t base = 0; base < Vv.rows(); base += seq_len)
          for (std::size_t i = 0; i < seq_len; ++i) {
            const Real* go = n.grad.row(base + i);
            for (std::size_t j = 0; j < seq_len; ++j) {
              const Real* vj = Vv.row(base + j);
              if (gp) {
                Real s = 0;
                for (std::size_t c = 0; c < d; ++c) s += go[c] * vj[c];
                (*gp)(base + i, j) += s;
              }
              if (gv) {
                const Real pij = P(base + i, j);
                Real* o = gv->row(base + j);
                for (std::size_t c = 0; c < d; ++c) o[c] += pij * go[c];
              }
            }
          }
      });
}

Var seq_mean_pool(const Var& a, std::size_t seq_len) {
  check_packed("seq_mean_pool", a->value, seq_len);
  return make_node(
      "seq_mean_pool", {a},
      [seq_len](Node& n) {
        const Tensor& x = V(n, 0);
        const std::size_t batch = x.rows() / seq_len;
        n.value = Tensor(batch, x.cols());
        const Real inv = Real(1) / static_cast<Real>(seq_len);
        for (std::size_t b = 0; b < batch; ++b) {
          Real* o = n.value.row(b);
          for (std::size_t i = 0; i < seq_len; ++i) {
            const Real* xr = x.row(b * seq_len + i);
            for (std::size_t c = 0; c < x.cols(); ++c) o[c] += xr[c];
          }
          for (std::size_t c = 0; c < x.cols(); ++c) o[c] *= inv;
        }
      },
      [seq_len](Node& n) {
        if (auto* g = G(n, 0)) {
          const Real inv = Real(1) / static_cast<Real>(seq_len);
          for (std::size_t r = 0; r < g->rows(); ++r) {
            const Real* go = n.grad.row(r / seq_len);
            Real* o = g->row(r);
            for (std::size_t c = 0; c < g->cols(); ++c) o[c] += go[c] * inv;
          }
        }
      });
}

Var embedding(const Var& table, std::vector<int> ids) {
  for (int id : ids)
    if (id < 0 || static_cast<std::size_t>(id) >= table->value.rows())
      throw ShapeError("embedding: id " + std::to_string(id) + " out of range for table " +
                       table->value.shape_str());
  return make_node(
      "embedding", {table},
      [ids](Node& n) {
        const Tensor& t = V(n, 0);
        n.value = Tensor(ids.size(), t.cols());
        for (std::size_t r = 0; r < ids.size(); ++r)
          std::copy(t.row(ids[r]), t.row(ids[r]) + t.cols(), n.value.row(r));
      },
      [ids](Node& n) {
        if (auto* g = G(n, 0))
          for (std::size_t r = 0; r < ids.size(); ++r) {
            Real* o = g->row(ids[r]);
            const Real* go = n.grad.row(r);
            for (std::size_t c = 0; c < g->cols(); ++c) o[c] += go[c];
          }
      });
}

Var cross_entropy(const Var& logits, std::vector<int> targets, std::vector<Real> weights) {
  const std::size_t rows = logits->value.rows();
  if (targets.size() != rows)
    throw ShapeError("cross_entropy: " + std::to_string(targets.size()) + " targets for logits " +
                     logits->value.shape_str());
  for (int t : targets)
    if (t < 0 || static_cast<std::size_t>(t) >= logits->value.cols())
      throw ShapeError("cross_entropy: target " + std::to_string(t) + " out of range for " +
                       logits->value.shape_str());
  if (weights.empty()) weights.assign(rows, Real(1));
  if (weights.size() != rows) throw ShapeError("cross_entropy: weight count mismatch");
  Real wsum = 0;
  for (Real w : weights) wsum += w;
  if (!(wsum > 0)) throw ShapeError("cross_entropy: weights sum to zero");

  auto probs = [](const Tensor& x, std::size_t r, std::vector<Real>& p) {
    const Real* row = x.row(r);
    const Real mx = *std::max_element(row, row + x.cols());
    Real s = 0;
    p.resize(x.cols());
    for (std::size_t c = 0; c < x.cols(); ++c) s += (p[c] = std::exp(row[c] - mx));
    for (auto& v : p) v /= s;
    return std::log(s) + mx;
  };
  return make_node(
      "cross_entropy", {logits},
      [=](Node& n) {
        const Tensor& x = V(n, 0);
        std::vector<Real> p;
        Real loss = 0;
        for (std::size_t r = 0; r < rows; ++r) {
          if (weights[r] == Real(0)) continue;
          const Real lse = probs(x, r, p);
          loss += weights[r] * (lse - x(r, targets[r]));
        }
        n.value = Tensor::scalar(loss / wsum);
      },
      [=](Node& n) {
        if (auto* g = G(n, 0)) {
          const Tensor& x = V(n, 0);
          const Real d = n.grad.item() / wsum;
          std::vector<Real> p;
          for (std::size_t r = 0; r < rows; ++r) {
            if (weights[r] == Real(0)) continue;
            probs(x, r, p);
            p[targets[r]] -= Real(1);
            Real* o = g->row(r);
            for (std::size_t c = 0; c < x.cols(); ++c) o[c] += d * weights[r] * p[c];
          }
        }
      });
}

Var dropout(const Var& a, Real p, Rng& rng) {
  if (p <= Real(0)) return a;
  Tensor mask(a->value.rows(), a->value.cols());
  const Real keep = Real(1) / (Real(1) - p);
  for (auto& m : mask.data()) m = rng.uniform() < p ? Real(0) : keep;
  return mul(a, constant(std::move(mask)));
}

namespace {

std::vector<Node*> topo_order(const Var& root) {
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{root.get(), 0}};
  seen.insert(root.get());
  while (!stack.empty()) {
    auto& [node, idx] = stack.back();
    if (idx < node->parents.size()) {
      Node* p = node->parents[idx++].get();
      if (seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  return order;  // parents before children
}

}  // namespace

const Tensor& evaluate(const Var& root) {
  for (Node* n : topo_order(root)) {
    if (n->is_leaf()) {
      if (!n->value.all_finite())
        throw NumericError("evaluate: non-finite values in leaf input " + n->value.shape_str());
    } else {
      n->forward(*n);
    }
  }
  return root->value;
}

void backward(const Var& root) {
  if (root->value.rows() != 1 || root->value.cols() != 1)
    throw ShapeError("backward: root must be scalar, got " + root->value.shape_str());
  auto order = topo_order(root);
  // Interior gradients are per-pass; leaves accumulate across calls.
  for (Node* n : order)
    if (!n->is_leaf()) n->zero_grad();
  if (!root->requires_grad) return;
  root->grad_buffer().data()[0] += Real(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward && n->requires_grad && !n->grad.empty()) n->backward(*n);
  }
}

std::vector<Tensor> gradients(const Var& root, std::span<const Var> leaves) {
  for (const auto& l : leaves) l->zero_grad();
  backward(root);
  std::vector<Tensor> out;
  out.reserve(leaves.size());
  for (const auto& l : leaves)
    out.push_back(l->grad.empty() ? Tensor(l->value.rows(), l->value.cols()) : l->grad);
  return out;
}

FiniteDifferenceReport finite_difference_check(const Var& root, const Var& leaf, Real step,
                                               Real tolerance) {
  FiniteDifferenceReport rep;
  const Var leaves[] = {leaf};
  const Tensor analytic = gradients(root, leaves).front();
  auto vals = leaf->value.data();
  for (std::size_t i = 0; i < vals.size(); ++i) {
    const Real orig = vals[i];
    vals[i] = orig + step;
    const Real up = evaluate(root).item();
    vals[i] = orig - step;
    const Real down = evaluate(root).item();
    vals[i] = orig;
    const Real numeric = (up - down) / (Real(2) * step);
    const Real ana = analytic.data()[i];
    const Real err = std::abs(numeric - ana);
    const Real denom = std::max({std::abs(numeric), std::abs(ana), Real(1e-2)});
    rep.max_abs_error = std::max(rep.max_abs_error, err);
    rep.max_rel_error = std::max(rep.max_rel_error, err / denom);
  }
  evaluate(root);
  rep.entries = vals.size();
  rep.passed = rep.max_rel_error < tolerance;
  return rep;
}

}  // namespace tfnas
